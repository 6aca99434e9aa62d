#include <doctest.h>

#include <atomic>
#include <thread>

#include <httplib.h>

#include "laybench/llmgate.hpp"
#include "support.hpp"

using namespace laybench;
using namespace laybench::llm;
using nlohmann::json;

namespace {

ChatRequest chat(const std::string& text, std::optional<std::uint64_t> seed = std::nullopt,
                 const std::string& backend = "mock") {
  ChatRequest r;
  r.backend_id = backend;
  r.messages = {{"user", text}};
  r.seed = seed;
  return r;
}

GatewayOptions no_sleep(std::vector<std::chrono::milliseconds>* delays = nullptr) {
  GatewayOptions o;
  o.sleep = [delays](std::chrono::milliseconds d) {
    if (delays) delays->push_back(d);
  };
  return o;
}

// Counts calls and concurrent calls; scripted failures come first.
class CountingBackend final : public Backend {
 public:
  std::atomic<int> calls{0};
  std::atomic<int> in_flight{0};
  std::atomic<int> max_in_flight{0};
  int transient_failures = 0;
  bool permanent_failure = false;
  std::chrono::milliseconds work{0};

  std::string name() const override { return "counting"; }
  ChatResponse chat(const ChatRequest& request) override {
    const int n = ++calls;
    const int now = ++in_flight;
    int seen = max_in_flight.load();
    while (now > seen && !max_in_flight.compare_exchange_weak(seen, now)) {
    }
    std::this_thread::sleep_for(work);
    --in_flight;
    if (permanent_failure) throw BackendError("bad request", false, 400);
    if (n <= transient_failures) throw BackendError("overloaded", true, 503);
    ChatResponse r;
    r.text = "reply to " + request.messages.back().content;
    return r;
  }
  ScoreResponse score_continuation(const ScoreRequest&) override { throw CapabilityError("no"); }
  MaskScoreResponse score_masked(const MaskScoreRequest&) override { throw CapabilityError("no"); }
};

}  // namespace

TEST_CASE("mock chat is a pure function of request and seed") {
  auto mock = std::make_shared<MockBackend>();
  const auto a = mock->chat(chat("Explain photosynthesis.", 7));
  const auto b = mock->chat(chat("Explain photosynthesis.", 7));
  const auto c = mock->chat(chat("Explain photosynthesis.", 8));
  CHECK(a.text == b.text);
  CHECK(a.text != c.text);
  CHECK_FALSE(a.text.empty());
  CHECK(mock->chat(chat("Explain photosynthesis.", {}, "mock-b")).text !=
        mock->chat(chat("Explain photosynthesis.", {}, "mock")).text);
}

TEST_CASE("mock caps requests beyond its context") {
  MockOptions o;
  o.context_tokens = 10;
  MockBackend mock(o);
  const auto r = mock.chat(chat(testsupport::words(50)));
  CHECK(r.finish_reason == FinishReason::kLength);
  CHECK_FALSE(r.text.empty());
}

TEST_CASE("mock refuses on the marker") {
  MockBackend mock;
  CHECK(mock.chat(chat("Abstract: [[REFUSE]] something")).finish_reason == FinishReason::kRefusal);
}

TEST_CASE("mock continuation scoring shape") {
  Gateway gw(std::make_shared<MockBackend>(), no_sleep());
  const auto r = gw.score_continuation({"mock", "Summary:", " cells grow fast"});
  REQUIRE(r.token_logprobs.size() == 3);
  std::string joined;
  for (const auto& t : r.token_logprobs) {
    CHECK(t.logprob <= 0.0);
    CHECK(t.logprob >= -20.0);
    joined += t.token;
  }
  CHECK(joined == " cells grow fast");
  CHECK_THROWS_AS(gw.score_continuation({"mock", "Summary:", ""}), PreconditionError);
}

TEST_CASE("mock prefers its argmax continuation") {
  auto mock = std::make_shared<MockBackend>();
  const std::string prefix = "Article: x\n\nSummary:";
  const auto best = mock->preferred_continuation("mock", prefix, 6);
  double best_score = 0;
  for (const auto& t : mock->score_continuation({"mock", prefix, best}).token_logprobs) best_score -= t.logprob;
  for (const std::string alt : {" people find cells help work change", " the cat sat on the mat", " genes genes genes a b c"}) {
    double score = 0;
    for (const auto& t : mock->score_continuation({"mock", prefix, alt}).token_logprobs) score -= t.logprob;
    CHECK(best_score <= score);
  }
}

TEST_CASE("mask scoring") {
  MockOptions o;
  o.constant_ce = 1.5;
  Gateway gw(std::make_shared<MockBackend>(o), no_sleep());
  const std::string text = "aaa bbb ccc ddd eee";
  MaskScoreRequest r{"mock", text, {}, "[MASK]"};
  for (auto [s, e] : {std::pair{0, 3}, {4, 7}, {8, 11}, {12, 15}}) r.spans.push_back(textseg::make_span(text, s, e));
  CHECK(gw.score_masked(r).span_ce == std::vector<double>{1.5, 1.5, 1.5, 1.5});

  MaskScoreRequest none{"mock", text, {}, "[MASK]"};
  CHECK(gw.score_masked(none).span_ce.empty());

  MaskScoreRequest overlap{"mock", text, {textseg::make_span(text, 0, 3), textseg::make_span(text, 2, 5)}, "[MASK]"};
  CHECK_THROWS_AS(gw.score_masked(overlap), PreconditionError);
}

TEST_CASE("apply_mask replaces each token in the span") {
  const std::string text = "the red cat sat";
  CHECK(apply_mask(text, textseg::make_span(text, 4, 11), "[MASK]") == "the [MASK] [MASK] sat");
}

TEST_CASE("cache serves repeats without backend calls") {
  testsupport::TempDir dir;
  auto backend = std::make_shared<CountingBackend>();
  auto options = no_sleep();
  options.cache_dir = dir / "cache";
  {
    Gateway gw(backend, options);
    const auto a = gw.complete(chat("hello"));
    const auto b = gw.complete(chat("hello"));
    CHECK(a.text == b.text);
    CHECK(backend->calls == 1);
    CHECK(gw.stats().cache_hits == 1);
    gw.complete(chat("hello", 1));
    CHECK(backend->calls == 2);
  }
  // A fresh gateway reads the cache directory.
  Gateway again(backend, options);
  again.complete(chat("hello"));
  CHECK(backend->calls == 2);
  CHECK(again.stats().backend_calls == 0);
  std::size_t files = 0;
  for (const auto& entry : std::filesystem::directory_iterator(dir / "cache")) {
    CHECK(entry.path().extension() == ".json");
    const auto stored = json::parse(testsupport::read_text(entry.path()));
    CHECK(stored.contains("request"));
    CHECK(stored.contains("response"));
    ++files;
  }
  CHECK(files == 2);
}

TEST_CASE("cache key covers backend and temperature") {
  auto a = chat("x");
  auto b = chat("x");
  b.temperature = 0.7;
  auto c = chat("x", {}, "other");
  CHECK(cache_key("chat", a.to_json()) != cache_key("chat", b.to_json()));
  CHECK(cache_key("chat", a.to_json()) != cache_key("chat", c.to_json()));
  CHECK(cache_key("chat", a.to_json()) == cache_key("chat", chat("x").to_json()));
}

TEST_CASE("refusals are returned and never cached") {
  auto mock = std::make_shared<MockBackend>();
  Gateway gw(mock, no_sleep());
  CHECK(gw.complete(chat("[[REFUSE]]")).finish_reason == FinishReason::kRefusal);
  CHECK(gw.complete(chat("[[REFUSE]]")).finish_reason == FinishReason::kRefusal);
  CHECK(gw.stats().backend_calls == 2);
  CHECK(gw.stats().cache_hits == 0);
}

TEST_CASE("transient failures are retried with backoff") {
  std::vector<std::chrono::milliseconds> delays;
  auto backend = std::make_shared<CountingBackend>();
  backend->transient_failures = 2;
  Gateway gw(backend, no_sleep(&delays));
  CHECK(gw.complete(chat("x")).text == "reply to x");
  CHECK(backend->calls == 3);
  CHECK(gw.stats().retries == 2);
  REQUIRE(delays.size() == 2);
  CHECK(delays[0].count() >= 800);
  CHECK(delays[0].count() <= 1200);
  CHECK(delays[1].count() >= 1600);
  CHECK(delays[1].count() <= 2400);
}

TEST_CASE("retries stop at max attempts; permanent errors are not retried") {
  auto backend = std::make_shared<CountingBackend>();
  backend->transient_failures = 100;
  Gateway gw(backend, no_sleep());
  CHECK_THROWS_AS(gw.complete(chat("x")), BackendError);
  CHECK(backend->calls == 5);

  auto permanent = std::make_shared<CountingBackend>();
  permanent->permanent_failure = true;
  Gateway gw2(permanent, no_sleep());
  CHECK_THROWS_AS(gw2.complete(chat("x")), BackendError);
  CHECK(permanent->calls == 1);
}

TEST_CASE("retry policy delays") {
  RetryPolicy p;
  CHECK(p.delay_for(0, 0.5).count() == 1000);
  CHECK(p.delay_for(1, 0.5).count() == 2000);
  CHECK(p.delay_for(3, 0.5).count() == 8000);
  CHECK(p.delay_for(0, 0.0).count() == 800);
  CHECK(p.delay_for(0, 1.0).count() == 1200);
}

TEST_CASE("at most K backend calls in flight") {
  for (std::size_t k : {1u, 2u, 3u}) {
    auto backend = std::make_shared<CountingBackend>();
    backend->work = std::chrono::milliseconds(5);
    auto options = no_sleep();
    options.max_in_flight = k;
    Gateway gw(backend, options);
    std::vector<std::thread> threads;
    for (int i = 0; i < 12; ++i) threads.emplace_back([&, i] { gw.complete(chat("q" + std::to_string(i))); });
    for (auto& t : threads) t.join();
    CHECK(backend->calls == 12);
    CHECK(backend->max_in_flight <= static_cast<int>(k));
    CHECK(gw.max_in_flight() == k);
  }
}

TEST_CASE("identical concurrent requests share one backend call") {
  auto backend = std::make_shared<CountingBackend>();
  backend->work = std::chrono::milliseconds(20);
  Gateway gw(backend, no_sleep());
  std::vector<std::thread> threads;
  std::vector<std::string> replies(8);
  for (int i = 0; i < 8; ++i) threads.emplace_back([&, i] { replies[i] = gw.complete(chat("same")).text; });
  for (auto& t : threads) t.join();
  CHECK(backend->calls == 1);
  for (const auto& r : replies) CHECK(r == "reply to same");
}

TEST_CASE("request validation") {
  Gateway gw(std::make_shared<MockBackend>(), no_sleep());
  ChatRequest empty;
  empty.backend_id = "mock";
  CHECK_THROWS_AS(gw.complete(empty), PreconditionError);
  auto hot = chat("x");
  hot.temperature = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(gw.complete(hot), PreconditionError);
}

// ---------------------------------------------------------------------------
// HTTP backend against a local fake server

namespace {

struct FakeServer {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  std::atomic<int> chat_calls{0};
  std::atomic<int> fail_first{0};
  std::string last_auth;
  json last_body;
  std::mutex mutex;

  FakeServer() {
    server.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      const int n = ++chat_calls;
      {
        std::lock_guard lock(mutex);
        last_auth = req.get_header_value("Authorization");
        last_body = json::parse(req.body);
      }
      if (req.get_header_value("Authorization") != "Bearer sekret") {
        res.status = 401;
        return;
      }
      if (n <= fail_first) {
        res.status = 503;
        return;
      }
      const std::string content = last_body["messages"][0]["content"];
      json reply;
      if (content == "refuse") {
        reply = {{"choices", {{{"message", {{"role", "assistant"}, {"content", nullptr}, {"refusal", "no"}}},
                               {"finish_reason", "stop"}}}}};
      } else {
        reply = {{"choices", {{{"message", {{"role", "assistant"}, {"content", "echo: " + content}}},
                               {"finish_reason", "stop"}}}},
                 {"usage", {{"prompt_tokens", 3}, {"completion_tokens", 2}}}};
      }
      res.set_content(reply.dump(), "application/json");
    });
    server.Post("/v1/completions", [](const httplib::Request& req, httplib::Response& res) {
      const auto body = json::parse(req.body);
      if (!body.value("echo", false)) {
        res.status = 400;
        return;
      }
      // "Summary:" + " cells grow" tokenised with the boundary inside " cells".
      json tokens = {"Sum", "mary", ":", " cells", " grow"};
      json values = {nullptr, -1.0, -0.5, -2.0, -0.25};
      res.set_content(json{{"choices", {{{"logprobs", {{"tokens", tokens}, {"token_logprobs", values}}}}}}}.dump(),
                      "application/json");
    });
    server.Post("/mask_score", [this](const httplib::Request& req, httplib::Response& res) {
      {
        std::lock_guard lock(mutex);
        last_body = json::parse(req.body);
      }
      json ce = json::array();
      for (std::size_t i = 0; i < last_body["spans"].size(); ++i) ce.push_back(0.5 + static_cast<double>(i));
      res.set_content(json{{"span_ce", ce}}.dump(), "application/json");
    });
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~FakeServer() {
    server.stop();
    thread.join();
  }
  std::string base() const { return "http://127.0.0.1:" + std::to_string(port); }
};

HttpBackendOptions http_options(const FakeServer& s, const std::string& key = "sekret") {
  HttpBackendOptions o;
  o.base_url = s.base();
  o.api_key = key;
  o.timeout = std::chrono::seconds(5);
  o.supports_mask = true;
  return o;
}

}  // namespace

TEST_CASE("http chat completions") {
  FakeServer server;
  HttpBackend backend(http_options(server));
  auto request = chat("hello", 3, "gpt-x");
  request.max_output_tokens = 64;
  const auto r = backend.chat(request);
  CHECK(r.text == "echo: hello");
  CHECK(r.finish_reason == FinishReason::kStop);
  CHECK(r.usage.prompt == 3);
  CHECK(server.last_auth == "Bearer sekret");
  CHECK(server.last_body["model"] == "gpt-x");
  CHECK(server.last_body["seed"] == 3);
  CHECK(server.last_body["max_tokens"] == 64);
  CHECK(server.last_body["messages"].size() == 1);
  CHECK(server.last_body["messages"][0]["role"] == "user");
  CHECK(backend.chat(chat("refuse", {}, "gpt-x")).finish_reason == FinishReason::kRefusal);
}

TEST_CASE("http rejected credentials name the variable") {
  FakeServer server;
  HttpBackend backend(http_options(server, "wrong"));
  CHECK_THROWS_WITH_AS(backend.chat(chat("x", {}, "gpt-x")), doctest::Contains("LAYBENCH_API_KEY"), AuthError);
}

TEST_CASE("http transient errors go through gateway retries") {
  FakeServer server;
  server.fail_first = 2;
  Gateway gw(std::make_shared<HttpBackend>(http_options(server)), no_sleep());
  CHECK(gw.complete(chat("x", {}, "gpt-x")).text == "echo: x");
  CHECK(server.chat_calls == 3);
}

TEST_CASE("http echo log-probabilities split at the prefix boundary") {
  FakeServer server;
  HttpBackend backend(http_options(server));
  const auto r = backend.score_continuation({"gpt-x", "Summary: ", "cells grow"});
  REQUIRE(r.token_logprobs.size() == 2);
  CHECK(r.token_logprobs[0].token == "cells");
  CHECK(r.token_logprobs[0].logprob == -2.0);
  CHECK(r.token_logprobs[1].token == " grow");
  CHECK_NOTHROW(r.validate("cells grow"));
}

TEST_CASE("http capability errors") {
  FakeServer server;
  auto o = http_options(server);
  o.supports_logprobs = false;
  o.supports_mask = false;
  HttpBackend backend(o);
  CHECK_THROWS_AS(backend.score_continuation({"gpt-x", "a", "b"}), CapabilityError);
  CHECK_THROWS_AS(backend.score_masked({"gpt-x", "abc", {textseg::make_span("abc", 0, 3)}, "[MASK]"}), CapabilityError);
}

TEST_CASE("http mask scoring sends code-point offsets") {
  FakeServer server;
  HttpBackend backend(http_options(server));
  const std::string text = "été protein binds";
  const auto start = text.find("protein");
  const auto r = backend.score_masked({"m", text, {textseg::make_span(text, start, start + 7)}, "[MASK]"});
  CHECK(r.span_ce == std::vector<double>{0.5});
  CHECK(server.last_body["spans"] == json::array({json::array({4, 11})}));
  CHECK(server.last_body["mask_token"] == "[MASK]");
}

TEST_CASE("http options from the environment") {
  ::unsetenv(kApiKeyEnv);
  ::setenv(kApiBaseEnv, "http://127.0.0.1:1", 1);
  CHECK_THROWS_WITH_AS(http_options_from_env(), doctest::Contains("LAYBENCH_API_KEY"), AuthError);
  ::setenv(kApiKeyEnv, "k", 1);
  ::unsetenv(kApiBaseEnv);
  CHECK_THROWS_AS(http_options_from_env(), ConfigError);
  ::setenv(kApiBaseEnv, "http://127.0.0.1:1", 1);
  const auto o = http_options_from_env();
  CHECK(o.api_key == "k");
  CHECK(o.base_url == "http://127.0.0.1:1");
  ::unsetenv(kApiKeyEnv);
  ::unsetenv(kApiBaseEnv);
}

TEST_CASE("unreachable server is a transient backend error") {
  HttpBackendOptions o;
  o.base_url = "http://127.0.0.1:1";
  o.api_key = "k";
  o.timeout = std::chrono::seconds(2);
  HttpBackend backend(o);
  try {
    backend.chat(chat("x", {}, "gpt-x"));
    FAIL("expected BackendError");
  } catch (const BackendError& e) {
    CHECK(e.transient());
  }
}
