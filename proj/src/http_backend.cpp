#include <cstdlib>

#include <httplib.h>

#include "laybench/llmgate.hpp"
#include "laybench/unicode.hpp"

namespace laybench::llm {

using nlohmann::json;

namespace {

struct Endpoint {
  std::string origin;       // scheme://host[:port]
  std::string path_prefix;  // "" or "/something"
};

Endpoint split_base_url(const std::string& base_url) {
  const auto scheme_end = base_url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("API base URL must include a scheme: " + base_url);
  const auto path_start = base_url.find('/', scheme_end + 3);
  Endpoint endpoint;
  endpoint.origin = base_url.substr(0, path_start);
  if (path_start != std::string::npos) {
    endpoint.path_prefix = base_url.substr(path_start);
    while (!endpoint.path_prefix.empty() && endpoint.path_prefix.back() == '/') endpoint.path_prefix.pop_back();
  }
  return endpoint;
}

std::string snippet(const std::string& body) { return body.size() > 200 ? body.substr(0, 200) + "..." : body; }

}  // namespace

HttpBackendOptions http_options_from_env() {
  HttpBackendOptions options;
  const char* base = std::getenv(kApiBaseEnv);
  if (base == nullptr || *base == '\0') {
    throw ConfigError(std::string(kApiBaseEnv) + " is not set; export it to the backend base URL (e.g. http://localhost:8000)");
  }
  const char* key = std::getenv(kApiKeyEnv);
  if (key == nullptr || *key == '\0') {
    throw AuthError(std::string(kApiKeyEnv) + " is not set; export " + kApiKeyEnv + "=<key> to use a real backend");
  }
  options.base_url = base;
  options.api_key = key;
  return options;
}

HttpBackend::HttpBackend(HttpBackendOptions options) : options_(std::move(options)) {
  split_base_url(options_.base_url);
}

json HttpBackend::post(const std::string& path, const json& body, bool authorized) const {
  const auto endpoint = split_base_url(options_.base_url);
  httplib::Client client(endpoint.origin);
  client.set_connection_timeout(options_.timeout);
  client.set_read_timeout(options_.timeout);
  client.set_write_timeout(options_.timeout);
  httplib::Headers headers;
  if (authorized) headers.emplace("Authorization", "Bearer " + options_.api_key);

  auto result = client.Post(endpoint.path_prefix + path, headers, body.dump(), "application/json");
  if (!result) {
    throw BackendError("request to " + options_.base_url + path + " failed: " + httplib::to_string(result.error()), true);
  }
  const int status = result->status;
  if (status == 401 || status == 403) {
    throw AuthError("backend rejected credentials (HTTP " + std::to_string(status) + "); set " + kApiKeyEnv +
                    " to a valid API key");
  }
  if (status == 429 || status >= 500) {
    throw BackendError("backend returned HTTP " + std::to_string(status) + ": " + snippet(result->body), true, status);
  }
  if (status < 200 || status >= 300) {
    throw BackendError("backend returned HTTP " + std::to_string(status) + ": " + snippet(result->body), false, status);
  }
  try {
    return json::parse(result->body);
  } catch (const json::parse_error&) {
    throw BackendError("backend returned a non-JSON body: " + snippet(result->body), false, status);
  }
}

ChatResponse HttpBackend::chat(const ChatRequest& request) {
  json messages = json::array();
  for (const auto& m : request.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
  json body = {{"model", request.backend_id},
               {"messages", messages},
               {"temperature", request.temperature},
               {"max_tokens", request.max_output_tokens}};
  if (request.seed) body["seed"] = *request.seed;

  const json reply = post("/v1/chat/completions", body, true);
  try {
    const auto& choice = reply.at("choices").at(0);
    const auto& message = choice.at("message");
    ChatResponse response;
    if (message.contains("content") && message["content"].is_string()) response.text = message["content"];
    const std::string finish = choice.value("finish_reason", "stop");
    if (message.contains("refusal") && message["refusal"].is_string()) {
      response.finish_reason = FinishReason::kRefusal;
      if (response.text.empty()) response.text = message["refusal"];
    } else if (finish == "length") {
      response.finish_reason = FinishReason::kLength;
    } else if (finish == "content_filter") {
      response.finish_reason = FinishReason::kRefusal;
    }
    if (reply.contains("usage") && reply["usage"].is_object()) {
      response.usage.prompt = reply["usage"].value("prompt_tokens", 0);
      response.usage.completion = reply["usage"].value("completion_tokens", 0);
    }
    return response;
  } catch (const json::exception& e) {
    throw BackendError(std::string("unexpected chat completion payload: ") + e.what(), false);
  }
}

ScoreResponse HttpBackend::score_continuation(const ScoreRequest& request) {
  if (!options_.supports_logprobs) {
    throw CapabilityError("backend \"" + request.backend_id + "\" does not return token log-probabilities");
  }
  json body = {{"model", request.backend_id},
               {"prompt", request.prefix + request.continuation},
               {"max_tokens", 0},
               {"echo", true},
               {"logprobs", 0},
               {"temperature", 0}};
  json reply;
  try {
    reply = post("/v1/completions", body, true);
  } catch (const BackendError& e) {
    if (e.status() == 400 || e.status() == 404 || e.status() == 422) {
      throw CapabilityError("backend \"" + request.backend_id + "\" does not support echo log-probabilities: " + e.what());
    }
    throw;
  }

  const json* logprobs = nullptr;
  if (reply.contains("choices") && !reply["choices"].empty()) {
    const auto& choice = reply["choices"][0];
    if (choice.contains("logprobs") && choice["logprobs"].is_object()) logprobs = &choice["logprobs"];
  }
  if (logprobs == nullptr || !logprobs->contains("tokens") || !logprobs->contains("token_logprobs")) {
    throw CapabilityError("backend \"" + request.backend_id + "\" returned no echo log-probabilities");
  }

  const auto& tokens = (*logprobs)["tokens"];
  const auto& values = (*logprobs)["token_logprobs"];
  if (tokens.size() != values.size()) throw BackendError("logprob arrays have different lengths", false);

  // Echoed tokens tile prefix + continuation; positions come from their
  // cumulative byte lengths. A token straddling the boundary (typically a
  // leading space glued to the first summary word) is attributed to the
  // continuation with its prefix part cut off.
  const std::size_t boundary = request.prefix.size();
  std::size_t position = 0;
  ScoreResponse response;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::string token = tokens[i].get<std::string>();
    const std::size_t end = position + token.size();
    if (end > boundary) {
      if (!values[i].is_number()) throw BackendError("continuation token without a log-probability", false);
      const std::size_t cut = position < boundary ? boundary - position : 0;
      response.token_logprobs.push_back({token.substr(cut), values[i].get<double>()});
    }
    position = end;
  }
  return response;
}

MaskScoreResponse HttpBackend::score_masked(const MaskScoreRequest& request) {
  if (!options_.supports_mask) {
    throw CapabilityError("backend \"" + request.backend_id + "\" does not support masked-span scoring");
  }
  json spans = json::array();
  for (const auto& span : request.spans) {
    spans.push_back({unicode::byte_to_codepoint_offset(request.text, span.start),
                     unicode::byte_to_codepoint_offset(request.text, span.end)});
  }
  json body = {{"text", request.text}, {"mask_token", request.mask_token}, {"spans", spans}};
  json reply;
  try {
    reply = post("/mask_score", body, true);
  } catch (const BackendError& e) {
    if (e.status() == 404) throw CapabilityError("backend has no /mask_score endpoint");
    throw;
  }
  if (!reply.contains("span_ce") || !reply["span_ce"].is_array()) {
    throw BackendError("mask_score reply lacks a \"span_ce\" array", false);
  }
  MaskScoreResponse response;
  for (const auto& v : reply["span_ce"]) {
    if (!v.is_number()) throw BackendError("mask_score reply has a non-numeric entry", false);
    response.span_ce.push_back(v.get<double>());
  }
  return response;
}

}  // namespace laybench::llm
