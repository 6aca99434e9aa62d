#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "laybench/error.hpp"
#include "laybench/textseg.hpp"

// Gateway to language-model backends: chat completion, continuation scoring
// and masked-span scoring, with retry, bounded parallelism and a
// content-addressed response cache.
namespace laybench::llm {

// Backend cannot serve this kind of request (e.g. a chat-only endpoint asked
// for token log-probabilities).
class CapabilityError : public Error {
 public:
  using Error::Error;
};

class AuthError : public Error {
 public:
  using Error::Error;
};

// Transport or server failure. `transient` failures are retried.
class BackendError : public Error {
 public:
  BackendError(const std::string& what, bool transient, int status = 0)
      : Error(what), transient_(transient), status_(status) {}
  bool transient() const { return transient_; }
  int status() const { return status_; }

 private:
  bool transient_;
  int status_;
};

inline constexpr const char* kApiKeyEnv = "LAYBENCH_API_KEY";
inline constexpr const char* kApiBaseEnv = "LAYBENCH_API_BASE";

struct Message {
  std::string role;
  std::string content;
};

struct ChatRequest {
  std::string backend_id;
  std::vector<Message> messages;
  double temperature = 0.0;
  int max_output_tokens = 1024;
  std::optional<std::uint64_t> seed;

  void validate() const;
  nlohmann::json to_json() const;
};

enum class FinishReason { kStop, kLength, kRefusal };
std::string_view to_string(FinishReason reason);
FinishReason parse_finish_reason(std::string_view s);

struct TokenUsage {
  int prompt = 0;
  int completion = 0;
};

struct ChatResponse {
  std::string text;
  FinishReason finish_reason = FinishReason::kStop;
  TokenUsage usage;

  void validate() const;
  nlohmann::json to_json() const;
  static ChatResponse from_json(const nlohmann::json& j);
};

struct ScoreRequest {
  std::string backend_id;
  std::string prefix;
  std::string continuation;

  void validate() const;
  nlohmann::json to_json() const;
};

struct TokenLogprob {
  std::string token;
  double logprob = 0.0;
};

struct ScoreResponse {
  std::vector<TokenLogprob> token_logprobs;

  // Checks logprobs are finite and <= 0 and that tokens concatenate to
  // `continuation`.
  void validate(const std::string& continuation) const;
  nlohmann::json to_json() const;
  static ScoreResponse from_json(const nlohmann::json& j);
};

struct MaskScoreRequest {
  std::string backend_id;
  std::string text;
  std::vector<textseg::Span> spans;
  std::string mask_token = "[MASK]";

  // Spans must lie within the text and must not overlap.
  void validate() const;
  nlohmann::json to_json() const;
};

struct MaskScoreResponse {
  std::vector<double> span_ce;

  void validate(std::size_t expected_spans) const;
  nlohmann::json to_json() const;
  static MaskScoreResponse from_json(const nlohmann::json& j);
};

// Replaces every token inside `span` with `mask_token`, keeping the
// whitespace between tokens.
std::string apply_mask(std::string_view text, const textseg::Span& span, std::string_view mask_token);

// Canonical cache key: SHA-256 of the request's compact JSON (sorted keys),
// tagged with the request kind.
std::string cache_key(std::string_view kind, const nlohmann::json& canonical_request);

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string name() const = 0;
  virtual ChatResponse chat(const ChatRequest& request) = 0;
  virtual ScoreResponse score_continuation(const ScoreRequest& request) = 0;
  virtual MaskScoreResponse score_masked(const MaskScoreRequest& request) = 0;
};

struct RetryPolicy {
  std::chrono::milliseconds initial_delay{1000};
  double factor = 2.0;
  int max_attempts = 5;
  double jitter = 0.2;  // +/- fraction of each delay

  std::chrono::milliseconds delay_for(int retry_index, double unit_random) const;
};

// File-per-entry cache. Entries are `<key>.json` holding {"request", "response"}.
// With an empty directory the cache is memory-only.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path directory = {});

  std::optional<nlohmann::json> get(const std::string& key) const;
  void put(const std::string& key, const nlohmann::json& request, const nlohmann::json& response);
  const std::filesystem::path& directory() const { return directory_; }

 private:
  std::filesystem::path directory_;
  mutable std::shared_mutex mutex_;
  mutable std::map<std::string, nlohmann::json> memory_;
};

struct GatewayOptions {
  std::size_t max_in_flight = 4;
  RetryPolicy retry;
  bool cache_enabled = true;
  std::filesystem::path cache_dir;  // empty: memory-only cache
  std::function<void(std::chrono::milliseconds)> sleep;  // test hook; defaults to this_thread::sleep_for
};

struct GatewayStats {
  std::size_t backend_calls = 0;
  std::size_t cache_hits = 0;
  std::size_t retries = 0;
};

// Thread-safe front end over one backend. At most `max_in_flight` backend
// calls run at once; identical concurrent requests share one backend call.
// Refusals are returned to the caller and never cached or retried.
class Gateway {
 public:
  Gateway(std::shared_ptr<Backend> backend, GatewayOptions options = {});

  ChatResponse complete(const ChatRequest& request);
  ScoreResponse score_continuation(const ScoreRequest& request);
  MaskScoreResponse score_masked(const MaskScoreRequest& request);

  GatewayStats stats() const;
  std::size_t max_in_flight() const { return options_.max_in_flight; }
  const Backend& backend() const { return *backend_; }

 private:
  nlohmann::json cached_call(const std::string& kind, const nlohmann::json& request,
                             const std::function<nlohmann::json()>& call, const std::function<bool(const nlohmann::json&)>& cacheable);
  nlohmann::json with_retry(const std::function<nlohmann::json()>& call);

  void acquire_slot();
  void release_slot();

  std::shared_ptr<Backend> backend_;
  GatewayOptions options_;
  ResponseCache cache_;

  std::mutex slot_mutex_;
  std::condition_variable slot_cv_;
  std::size_t in_flight_ = 0;

  std::mutex pending_mutex_;
  std::map<std::string, std::shared_future<nlohmann::json>> pending_;

  mutable std::mutex stats_mutex_;
  GatewayStats stats_;
  std::uint64_t jitter_state_ = 0x5eed;
};

// ---------------------------------------------------------------------------
// Mock backend

// Deterministic stand-in for a real model. Every output is a pure function of
// the request (and its seed). Test hooks override individual behaviours.
struct MockOptions {
  std::uint64_t default_seed = 0;
  // Prompt word count beyond which output is cut short with finish=length.
  std::size_t context_tokens = 8192;
  bool supports_logprobs = true;
  bool supports_mask = true;

  std::optional<double> constant_ce;
  std::function<double(const std::string& masked_text, const textseg::Span& span)> mask_ce;
  std::function<std::optional<ChatResponse>(const ChatRequest&)> chat_script;
  std::function<std::optional<std::vector<double>>(const ScoreRequest&)> logprob_script;
};

class MockBackend final : public Backend {
 public:
  explicit MockBackend(MockOptions options = {});

  std::string name() const override { return "mock"; }
  ChatResponse chat(const ChatRequest& request) override;
  ScoreResponse score_continuation(const ScoreRequest& request) override;
  MaskScoreResponse score_masked(const MaskScoreRequest& request) override;

  // The continuation the mock considers most likely after `prefix`; scoring it
  // yields the smallest possible negated log-likelihood for its length.
  std::string preferred_continuation(const std::string& backend_id, const std::string& prefix, std::size_t words) const;

  // Splits text into tokens that concatenate back to it (leading whitespace
  // attached to each word/punctuation token).
  static std::vector<std::string> split_pieces(std::string_view text);

 private:
  MockOptions options_;
};

// ---------------------------------------------------------------------------
// HTTP backend (OpenAI-compatible chat/completions, bespoke mask scoring)

struct HttpBackendOptions {
  std::string base_url;  // e.g. http://localhost:8000
  std::string api_key;
  std::chrono::seconds timeout{120};
  bool supports_logprobs = true;
  bool supports_mask = false;
};

// Reads LAYBENCH_API_BASE / LAYBENCH_API_KEY. Throws AuthError naming the
// variable when the key is missing, ConfigError when the base is missing.
HttpBackendOptions http_options_from_env();

class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(HttpBackendOptions options);

  std::string name() const override { return "openai-http"; }
  ChatResponse chat(const ChatRequest& request) override;
  ScoreResponse score_continuation(const ScoreRequest& request) override;
  MaskScoreResponse score_masked(const MaskScoreRequest& request) override;

 private:
  nlohmann::json post(const std::string& path, const nlohmann::json& body, bool authorized) const;

  HttpBackendOptions options_;
};

}  // namespace laybench::llm
