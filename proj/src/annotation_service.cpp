#include "laybench/annotation_service.hpp"

#include <set>

#include <httplib.h>

namespace laybench::humaneval {

using nlohmann::ordered_json;

namespace {

HttpResponse json_response(int status, const ordered_json& body) { return {status, body.dump()}; }

HttpResponse error_response(int status, const std::string& message) {
  return json_response(status, {{"error", message}});
}

}  // namespace

AnnotationService::AnnotationService(std::vector<EvalItem> items, AnnotationStore& store, Assignment assignment)
    : items_(std::move(items)), store_(store), assignment_(std::move(assignment)) {
  for (std::size_t i = 0; i < items_.size(); ++i) {
    items_[i].validate();
    if (!by_id_.emplace(items_[i].item_id, items_[i]).second) {
      throw DuplicateError("duplicate item_id " + items_[i].item_id);
    }
    index_[items_[i].item_id] = i;
  }
}

HttpResponse AnnotationService::handle(const HttpRequest& request) {
  try {
    if (request.path == "/api/items/next") {
      if (request.method != "GET") return error_response(405, "use GET");
      auto it = request.query.find("assessor");
      if (it == request.query.end() || it->second.empty()) return error_response(400, "missing assessor query parameter");
      return next_item(it->second);
    }
    if (request.path == "/api/annotations") {
      if (request.method != "POST") return error_response(405, "use POST");
      return post_annotation(request.body);
    }
    if (request.path == "/api/progress") {
      if (request.method != "GET") return error_response(405, "use GET");
      return progress();
    }
    return error_response(404, "no such endpoint");
  } catch (const std::exception& e) {
    return error_response(500, e.what());
  }
}

HttpResponse AnnotationService::next_item(const std::string& assessor) {
  const auto records = store_.snapshot();
  std::set<std::string> done;
  for (const auto& a : *records) {
    if (a.assessor_id == assessor) done.insert(a.item_id);
  }
  std::size_t assigned = 0;
  const EvalItem* next = nullptr;
  for (std::size_t i = 0; i < items_.size(); ++i) {
    if (!assignment_.assigned(assessor, i)) continue;
    ++assigned;
    if (next == nullptr && !done.contains(items_[i].item_id)) next = &items_[i];
  }
  ordered_json body;
  body["done"] = next == nullptr;
  if (next != nullptr) body["item"] = next->to_blinded_json();
  body["progress"] = {{"completed", done.size()}, {"assigned", assigned}};
  return json_response(200, body);
}

HttpResponse AnnotationService::post_annotation(const std::string& body) {
  nlohmann::json parsed;
  try {
    parsed = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error&) {
    return json_response(422, {{"error", "body is not valid JSON"}, {"problems", {"body: malformed JSON"}}});
  }
  try {
    const auto annotation = Annotation::from_json(parsed);
    auto index = index_.find(annotation.item_id);
    if (index != index_.end() && !assignment_.assigned(annotation.assessor_id, index->second)) {
      throw InvalidAnnotation({"item_id: not assigned to assessor \"" + annotation.assessor_id + "\""});
    }
    record_annotation(annotation, by_id_, store_);
    return json_response(201, {{"status", "recorded"},
                               {"assessor_id", annotation.assessor_id},
                               {"item_id", annotation.item_id}});
  } catch (const DuplicateError& e) {
    return error_response(409, e.what());
  } catch (const InvalidAnnotation& e) {
    return json_response(422, {{"error", e.what()}, {"problems", e.problems()}});
  } catch (const ValidationError& e) {
    return json_response(422, {{"error", e.what()}, {"problems", ordered_json::array()}});
  }
}

HttpResponse AnnotationService::progress() const {
  const auto records = store_.snapshot();
  std::map<std::string, std::size_t> completed;
  for (const auto& assessor : assignment_.assessors) completed[assessor] = 0;
  for (const auto& a : *records) ++completed[a.assessor_id];

  ordered_json assessors = ordered_json::object();
  for (const auto& [assessor, count] : completed) {
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < items_.size(); ++i) {
      if (assignment_.assigned(assessor, i)) ++assigned;
    }
    assessors[assessor] = {{"completed", count}, {"assigned", assigned}};
  }
  ordered_json body;
  body["items"] = items_.size();
  body["annotations"] = records->size();
  body["assignment"] = assignment_.to_json();
  body["assessors"] = std::move(assessors);
  return json_response(200, body);
}

// ---------------------------------------------------------------------------

struct AnnotationServer::Impl {
  httplib::Server server;
};

AnnotationServer::AnnotationServer(AnnotationService& service, std::filesystem::path static_dir)
    : impl_(std::make_unique<Impl>()) {
  auto bridge = [&service](const httplib::Request& req, httplib::Response& res) {
    HttpRequest request;
    request.method = req.method;
    request.path = req.path;
    for (const auto& [key, value] : req.params) request.query.emplace(key, value);
    request.body = req.body;
    const auto response = service.handle(request);
    res.status = response.status;
    res.set_content(response.body, "application/json");
  };
  impl_->server.Get("/api/.*", bridge);
  impl_->server.Post("/api/.*", bridge);
  if (!static_dir.empty()) {
    if (!impl_->server.set_mount_point("/", static_dir.string())) {
      throw ConfigError("static directory not found: " + static_dir.string());
    }
  }
}

AnnotationServer::~AnnotationServer() { stop(); }

int AnnotationServer::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw ConfigError("cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void AnnotationServer::listen(const std::string& host, int port) {
  if (!impl_->server.listen(host, port)) throw ConfigError("cannot listen on " + host + ":" + std::to_string(port));
}

void AnnotationServer::stop() {
  if (impl_) impl_->server.stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace laybench::humaneval
