#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "laybench/humaneval.hpp"

namespace laybench::humaneval {

struct HttpRequest {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::string body;
};

struct HttpResponse {
  int status = 200;
  std::string body;  // JSON
};

// HTTP API for the annotation UI:
//   GET  /api/items/next?assessor=ID   next blinded item, or {"done": true}
//   POST /api/annotations              201 recorded, 409 duplicate, 422 invalid
//   GET  /api/progress                 completed/assigned counts per assessor
// System identities never leave the service.
class AnnotationService {
 public:
  AnnotationService(std::vector<EvalItem> items, AnnotationStore& store, Assignment assignment);

  HttpResponse handle(const HttpRequest& request);

  const std::vector<EvalItem>& items() const { return items_; }
  const Assignment& assignment() const { return assignment_; }

 private:
  HttpResponse next_item(const std::string& assessor);
  HttpResponse post_annotation(const std::string& body);
  HttpResponse progress() const;

  std::vector<EvalItem> items_;
  std::map<std::string, EvalItem> by_id_;
  std::map<std::string, std::size_t> index_;
  AnnotationStore& store_;
  Assignment assignment_;
};

// Serves an AnnotationService (and optionally a static directory for the UI)
// on a background thread.
class AnnotationServer {
 public:
  AnnotationServer(AnnotationService& service, std::filesystem::path static_dir = {});
  ~AnnotationServer();
  AnnotationServer(const AnnotationServer&) = delete;
  AnnotationServer& operator=(const AnnotationServer&) = delete;

  // Binds and starts serving; port 0 picks a free port. Returns the port.
  int start(const std::string& host, int port);
  // Blocks serving on the calling thread.
  void listen(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::thread thread_;
};

}  // namespace laybench::humaneval
