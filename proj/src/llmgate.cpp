#include "laybench/llmgate.hpp"

#include <cmath>
#include <fstream>
#include <thread>

#include "laybench/hashing.hpp"
#include "laybench/jsonl.hpp"

namespace laybench::llm {

using nlohmann::json;

std::string_view to_string(FinishReason reason) {
  switch (reason) {
    case FinishReason::kStop: return "stop";
    case FinishReason::kLength: return "length";
    case FinishReason::kRefusal: return "refusal";
  }
  return "stop";
}

FinishReason parse_finish_reason(std::string_view s) {
  if (s == "stop") return FinishReason::kStop;
  if (s == "length") return FinishReason::kLength;
  if (s == "refusal" || s == "content_filter") return FinishReason::kRefusal;
  throw ParseError("unknown finish_reason \"" + std::string(s) + "\"");
}

void ChatRequest::validate() const {
  if (messages.empty()) throw PreconditionError("chat request needs at least one message");
  if (!std::isfinite(temperature) || temperature < 0.0) throw PreconditionError("temperature must be finite and >= 0");
  if (max_output_tokens <= 0) throw PreconditionError("max_output_tokens must be > 0");
}

json ChatRequest::to_json() const {
  json j;
  j["backend_id"] = backend_id;
  j["messages"] = json::array();
  for (const auto& m : messages) j["messages"].push_back({{"role", m.role}, {"content", m.content}});
  j["temperature"] = temperature;
  j["max_output_tokens"] = max_output_tokens;
  j["seed"] = seed ? json(*seed) : json(nullptr);
  return j;
}

void ChatResponse::validate() const {
  if (finish_reason == FinishReason::kStop && text.empty()) {
    throw BackendError("backend returned an empty completion with finish_reason=stop", false);
  }
}

json ChatResponse::to_json() const {
  return {{"text", text},
          {"finish_reason", to_string(finish_reason)},
          {"usage", {{"prompt", usage.prompt}, {"completion", usage.completion}}}};
}

ChatResponse ChatResponse::from_json(const json& j) {
  ChatResponse r;
  r.text = j.at("text").get<std::string>();
  r.finish_reason = parse_finish_reason(j.at("finish_reason").get<std::string>());
  r.usage.prompt = j.at("usage").at("prompt").get<int>();
  r.usage.completion = j.at("usage").at("completion").get<int>();
  return r;
}

void ScoreRequest::validate() const {
  if (continuation.empty()) throw PreconditionError("continuation must be non-empty");
}

json ScoreRequest::to_json() const {
  return {{"backend_id", backend_id}, {"prefix", prefix}, {"continuation", continuation}};
}

void ScoreResponse::validate(const std::string& continuation) const {
  std::string joined;
  for (const auto& t : token_logprobs) {
    if (!std::isfinite(t.logprob) || t.logprob > 0.0) {
      throw BackendError("backend returned an invalid log-probability for token \"" + t.token + "\"", false);
    }
    joined += t.token;
  }
  if (joined != continuation) {
    throw BackendError("scored tokens do not re-detokenize to the continuation", false);
  }
}

json ScoreResponse::to_json() const {
  json tokens = json::array();
  for (const auto& t : token_logprobs) tokens.push_back({t.token, t.logprob});
  return {{"token_logprobs", tokens}};
}

ScoreResponse ScoreResponse::from_json(const json& j) {
  ScoreResponse r;
  for (const auto& pair : j.at("token_logprobs")) {
    r.token_logprobs.push_back({pair.at(0).get<std::string>(), pair.at(1).get<double>()});
  }
  return r;
}

void MaskScoreRequest::validate() const {
  for (const auto& span : spans) {
    if (span.start >= span.end || span.end > text.size()) {
      throw PreconditionError("mask span [" + std::to_string(span.start) + "," + std::to_string(span.end) +
                              ") is not within the text");
    }
  }
  for (std::size_t i = 0; i < spans.size(); ++i) {
    for (std::size_t k = i + 1; k < spans.size(); ++k) {
      if (spans[i].start < spans[k].end && spans[k].start < spans[i].end) {
        throw PreconditionError("mask spans [" + std::to_string(spans[i].start) + "," + std::to_string(spans[i].end) +
                                ") and [" + std::to_string(spans[k].start) + "," + std::to_string(spans[k].end) +
                                ") overlap");
      }
    }
  }
}

json MaskScoreRequest::to_json() const {
  json span_list = json::array();
  for (const auto& s : spans) span_list.push_back({s.start, s.end});
  return {{"backend_id", backend_id}, {"text", text}, {"spans", span_list}, {"mask_token", mask_token}};
}

void MaskScoreResponse::validate(std::size_t expected_spans) const {
  if (span_ce.size() != expected_spans) {
    throw BackendError("mask scorer returned " + std::to_string(span_ce.size()) + " values for " +
                           std::to_string(expected_spans) + " spans",
                       false);
  }
  for (double ce : span_ce) {
    if (!std::isfinite(ce) || ce < 0.0) throw BackendError("mask scorer returned an invalid cross entropy", false);
  }
}

json MaskScoreResponse::to_json() const { return {{"span_ce", span_ce}}; }

MaskScoreResponse MaskScoreResponse::from_json(const json& j) {
  return MaskScoreResponse{j.at("span_ce").get<std::vector<double>>()};
}

std::string apply_mask(std::string_view text, const textseg::Span& span, std::string_view mask_token) {
  if (span.start >= span.end || span.end > text.size()) throw PreconditionError("mask span is not within the text");
  std::string out(text.substr(0, span.start));
  const auto inner = text.substr(span.start, span.end - span.start);
  std::size_t cursor = 0;
  for (const auto& token : textseg::lex(inner)) {
    out.append(inner.substr(cursor, token.start - cursor));
    out.append(mask_token);
    cursor = token.end;
  }
  out.append(inner.substr(cursor));
  out.append(text.substr(span.end));
  return out;
}

std::string cache_key(std::string_view kind, const json& canonical_request) {
  json keyed = {{"kind", kind}, {"request", canonical_request}};
  return sha256_hex(keyed.dump());
}

std::chrono::milliseconds RetryPolicy::delay_for(int retry_index, double unit_random) const {
  double base = static_cast<double>(initial_delay.count()) * std::pow(factor, retry_index);
  double scaled = base * (1.0 + jitter * (2.0 * unit_random - 1.0));
  return std::chrono::milliseconds(static_cast<long long>(std::max(0.0, scaled)));
}

ResponseCache::ResponseCache(std::filesystem::path directory) : directory_(std::move(directory)) {
  if (!directory_.empty()) std::filesystem::create_directories(directory_);
}

std::optional<json> ResponseCache::get(const std::string& key) const {
  {
    std::shared_lock lock(mutex_);
    if (auto it = memory_.find(key); it != memory_.end()) return it->second;
  }
  if (directory_.empty()) return std::nullopt;
  const auto path = directory_ / (key + ".json");
  std::error_code ec;
  if (!std::filesystem::exists(path, ec)) return std::nullopt;
  json entry;
  try {
    entry = json::parse(jsonl::read_file(path));
  } catch (const json::parse_error&) {
    return std::nullopt;  // torn or foreign file; treat as a miss and overwrite later
  }
  if (!entry.contains("response")) return std::nullopt;
  std::unique_lock lock(mutex_);
  return memory_.emplace(key, entry["response"]).first->second;
}

void ResponseCache::put(const std::string& key, const json& request, const json& response) {
  std::unique_lock lock(mutex_);
  if (!directory_.empty()) {
    json entry = {{"request", request}, {"response", response}};
    jsonl::write_file_atomic(directory_ / (key + ".json"), entry.dump() + "\n");
  }
  memory_[key] = response;
}

Gateway::Gateway(std::shared_ptr<Backend> backend, GatewayOptions options)
    : backend_(std::move(backend)), options_(std::move(options)), cache_(options_.cache_dir) {
  if (!backend_) throw PreconditionError("gateway needs a backend");
  if (options_.max_in_flight == 0) throw PreconditionError("max_in_flight must be >= 1");
  if (options_.retry.max_attempts < 1) throw PreconditionError("retry max_attempts must be >= 1");
  if (!options_.sleep) options_.sleep = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

void Gateway::acquire_slot() {
  std::unique_lock lock(slot_mutex_);
  slot_cv_.wait(lock, [&] { return in_flight_ < options_.max_in_flight; });
  ++in_flight_;
}

void Gateway::release_slot() {
  {
    std::lock_guard lock(slot_mutex_);
    --in_flight_;
  }
  slot_cv_.notify_one();
}

json Gateway::with_retry(const std::function<json()>& call) {
  for (int attempt = 1;; ++attempt) {
    acquire_slot();
    {
      std::lock_guard lock(stats_mutex_);
      ++stats_.backend_calls;
    }
    try {
      json result = call();
      release_slot();
      return result;
    } catch (const BackendError& e) {
      release_slot();
      if (!e.transient() || attempt >= options_.retry.max_attempts) throw;
      double unit = 0;
      {
        std::lock_guard lock(stats_mutex_);
        ++stats_.retries;
        unit = SplitMix64(jitter_state_++).unit();
      }
      options_.sleep(options_.retry.delay_for(attempt - 1, unit));
    } catch (...) {
      release_slot();
      throw;
    }
  }
}

json Gateway::cached_call(const std::string& kind, const json& request, const std::function<json()>& call,
                          const std::function<bool(const json&)>& cacheable) {
  if (!options_.cache_enabled) return with_retry(call);

  const auto key = cache_key(kind, request);
  auto note_hit = [&] {
    std::lock_guard lock(stats_mutex_);
    ++stats_.cache_hits;
  };
  if (auto hit = cache_.get(key)) {
    note_hit();
    return *hit;
  }

  std::promise<json> promise;
  std::shared_future<json> shared;
  bool owner = false;
  {
    std::lock_guard lock(pending_mutex_);
    if (auto it = pending_.find(key); it != pending_.end()) {
      shared = it->second;
    } else {
      shared = promise.get_future().share();
      pending_.emplace(key, shared);
      owner = true;
    }
  }
  if (!owner) {
    json value = shared.get();
    note_hit();
    return value;
  }

  auto finish = [&] {
    std::lock_guard lock(pending_mutex_);
    pending_.erase(key);
  };
  try {
    // A concurrent owner may have finished between the first lookup and our
    // registration.
    if (auto hit = cache_.get(key)) {
      promise.set_value(*hit);
      finish();
      note_hit();
      return *hit;
    }
    json response = with_retry(call);
    if (cacheable(response)) cache_.put(key, request, response);
    promise.set_value(response);
    finish();
    return response;
  } catch (...) {
    promise.set_exception(std::current_exception());
    finish();
    throw;
  }
}

ChatResponse Gateway::complete(const ChatRequest& request) {
  request.validate();
  auto response = cached_call(
      "chat", request.to_json(),
      [&] {
        auto r = backend_->chat(request);
        r.validate();
        return r.to_json();
      },
      [](const json& r) { return r.at("finish_reason") != "refusal"; });
  return ChatResponse::from_json(response);
}

ScoreResponse Gateway::score_continuation(const ScoreRequest& request) {
  request.validate();
  auto response = cached_call(
      "score", request.to_json(),
      [&] {
        auto r = backend_->score_continuation(request);
        r.validate(request.continuation);
        return r.to_json();
      },
      [](const json&) { return true; });
  return ScoreResponse::from_json(response);
}

MaskScoreResponse Gateway::score_masked(const MaskScoreRequest& request) {
  request.validate();
  if (request.spans.empty()) return {};
  auto response = cached_call(
      "mask", request.to_json(),
      [&] {
        auto r = backend_->score_masked(request);
        r.validate(request.spans.size());
        return r.to_json();
      },
      [](const json&) { return true; });
  return MaskScoreResponse::from_json(response);
}

GatewayStats Gateway::stats() const {
  std::lock_guard lock(stats_mutex_);
  return stats_;
}

}  // namespace laybench::llm
