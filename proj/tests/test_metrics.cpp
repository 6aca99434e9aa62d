#include <doctest.h>

#include <cmath>
#include <random>

#include "laybench/metrics.hpp"
#include "support.hpp"

using namespace laybench;
using namespace laybench::metrics;
using doctest::Approx;

namespace {

const corpus::WordPunctTokenizer kTok;

llm::GatewayOptions quiet() {
  llm::GatewayOptions o;
  o.sleep = [](std::chrono::milliseconds) {};
  return o;
}

std::shared_ptr<llm::Gateway> gateway(llm::MockOptions options = {}) {
  return std::make_shared<llm::Gateway>(std::make_shared<llm::MockBackend>(options), quiet());
}

std::shared_ptr<llm::Gateway> scripted_rater(std::function<std::string(const llm::ChatRequest&)> reply) {
  llm::MockOptions o;
  o.chat_script = [reply](const llm::ChatRequest& r) -> std::optional<llm::ChatResponse> {
    llm::ChatResponse response;
    response.text = reply(r);
    return response;
  };
  return gateway(o);
}

std::vector<std::string> random_words(std::mt19937& rng, std::size_t max_len, int vocab) {
  std::vector<std::string> out(rng() % (max_len + 1));
  for (auto& w : out) w = std::string(1, static_cast<char>('a' + rng() % vocab));
  return out;
}

}  // namespace

TEST_CASE("Coleman-Liau golden value") {
  const auto counts = count_text("The cat sat.");
  CHECK(counts.letters == 9);
  CHECK(counts.words == 3);
  CHECK(counts.sentences == 1);
  // L = 300, S = 100/3: 0.0588*300 - 0.296*33.333 - 15.8 = -8.0267
  CHECK(coleman_liau("The cat sat.") == Approx(-8.026667).epsilon(1e-6));
  CHECK(coleman_liau_index(300.0, 100.0 / 3.0) == Approx(testsupport::oracle_cli(9, 3, 1)));
  CHECK_THROWS_AS(coleman_liau("... !!"), PreconditionError);
}

TEST_CASE("Coleman-Liau monotonicity") {
  std::mt19937 rng(1);
  std::uniform_real_distribution<double> L(100, 900), S(1, 60), d(0.01, 50);
  for (int i = 0; i < 1000; ++i) {
    const double l = L(rng), s = S(rng), delta = d(rng);
    CHECK(coleman_liau_index(l + delta, s) > coleman_liau_index(l, s));
    CHECK(coleman_liau_index(l, s + delta) < coleman_liau_index(l, s));
  }
}

TEST_CASE("longer sentences at the same word length raise CLI") {
  const std::string short_sentences = "Cells grow. Cells split. Cells die. Cells form.";
  const std::string long_sentences = "Cells grow cells split. Cells die cells form.";
  CHECK(coleman_liau(long_sentences) > coleman_liau(short_sentences));
}

TEST_CASE("ROUGE worked example") {
  const auto r1 = rouge_n("the cat sat", "the cat ran", 1);
  const auto r2 = rouge_n("the cat sat", "the cat ran", 2);
  const auto rl = rouge_l("the cat sat", "the cat ran");
  CHECK(r1.f1 == Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(r2.f1 == Approx(0.5).epsilon(1e-12));
  CHECK(rl.f1 == Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(rouge_geometric_mean(r1.f1, r2.f1, rl.f1) == Approx(0.6057).epsilon(1e-3));
}

TEST_CASE("ROUGE identity, disjointness and case folding") {
  const std::string text = "Cells divide quickly in warm water";
  CHECK(rouge_n(text, text, 1).f1 == 1.0);
  CHECK(rouge_n(text, text, 2).f1 == 1.0);
  CHECK(rouge_l(text, text).f1 == 1.0);
  CHECK(rouge_n("alpha beta", "gamma delta", 1).f1 == 0.0);
  CHECK(rouge_n("alpha beta", "gamma delta", 2).f1 == 0.0);
  CHECK(rouge_l("alpha beta", "gamma delta").f1 == 0.0);
  CHECK(rouge_n("THE Cat", "the cat", 1).f1 == 1.0);
  CHECK_THROWS_AS(rouge_n("a", "", 1), PreconditionError);
  CHECK(rouge_n("", "a b", 1).f1 == 0.0);
}

TEST_CASE("ROUGE matches brute-force oracles") {
  std::mt19937 rng(2024);
  int compared = 0;
  for (int trial = 0; trial < 400; ++trial) {
    auto cand = random_words(rng, 10, 5);
    auto ref = random_words(rng, 10, 5);
    if (ref.empty()) continue;
    ++compared;
    const double lcs = static_cast<double>(testsupport::brute_force_lcs(cand, ref));
    CHECK(lcs_length(cand, ref) == static_cast<std::size_t>(lcs));
    CHECK(std::abs(rouge_l(cand, ref).f1 - testsupport::f1_of(lcs, cand.size(), ref.size())) <= 1e-12);
    for (std::size_t n : {1u, 2u, 3u}) {
      const double overlap = static_cast<double>(testsupport::brute_force_clipped_overlap(cand, ref, n));
      const double ct = cand.size() >= n ? static_cast<double>(cand.size() - n + 1) : 0.0;
      const double rt = ref.size() >= n ? static_cast<double>(ref.size() - n + 1) : 0.0;
      CHECK(std::abs(rouge_n(cand, ref, n).f1 - testsupport::f1_of(overlap, ct, rt)) <= 1e-12);
    }
  }
  CHECK(compared >= 200);
}

TEST_CASE("ROUGE symmetry") {
  std::mt19937 rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    auto a = random_words(rng, 10, 4);
    auto b = random_words(rng, 10, 4);
    if (a.empty() || b.empty()) continue;
    for (std::size_t n : {1u, 2u}) {
      const auto ab = rouge_n(a, b, n), ba = rouge_n(b, a, n);
      CHECK(ab.f1 == ba.f1);
      CHECK(ab.precision == ba.recall);
      CHECK(ab.recall == ba.precision);
    }
    const auto ab = rouge_l(a, b), ba = rouge_l(b, a);
    CHECK(ab.f1 == ba.f1);
    CHECK(ab.precision == ba.recall);
  }
}

TEST_CASE("geometric mean") {
  CHECK(rouge_geometric_mean(0.5, 0.5, 0.5) == Approx(0.5).epsilon(1e-12));
  CHECK(rouge_geometric_mean(0.0, 0.3, 0.4) == 0.0);
  std::mt19937 rng(4);
  std::uniform_real_distribution<double> u(0.001, 1);
  for (int i = 0; i < 200; ++i) {
    const double a = u(rng), b = u(rng), c = u(rng);
    const double g = rouge_geometric_mean(a, b, c);
    CHECK(g >= std::min({a, b, c}) - 1e-15);
    CHECK(g <= std::max({a, b, c}) + 1e-15);
  }
}

TEST_CASE("CEoNP with a constant scorer is exactly the constant") {
  for (double c : {1.5, 0.1, 3.7, 0.0}) {
    llm::MockOptions o;
    o.constant_ce = c;
    auto gw = gateway(o);
    const auto r = ceonp("t", "The red cat chased a mouse near the old barn.", *gw, "mock", {});
    CHECK(r.noun_phrases.size() >= 2);
    CHECK(r.value == c);
  }
}

TEST_CASE("CEoNP is the mean of per-phrase values, one call per phrase") {
  llm::MockOptions o;
  std::atomic<int> calls{0};
  o.mask_ce = [&](const std::string& masked, const textseg::Span&) {
    ++calls;
    return masked.find("[MASK] [MASK] [MASK]") != std::string::npos ? 2.0 : 4.0;
  };
  auto gw = gateway(o);
  const auto r = ceonp("t", "The red cat chased a mouse.", *gw, "mock", {});
  CHECK(r.per_phrase == std::vector<double>{2.0, 4.0});
  CHECK(r.value == 3.0);
  CHECK(calls == 2);
}

TEST_CASE("CEoNP matches the arithmetic mean on random values") {
  std::mt19937 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> values(1 + rng() % 12);
    for (auto& v : values) v = std::uniform_real_distribution<double>(0, 10)(rng);
    std::string text;
    textseg::NpSidecar sidecar;
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const auto start = text.size();
      text += "np" + std::to_string(i);
      spans.emplace_back(start, text.size());
      text += " and ";
    }
    sidecar.add("doc", spans);
    llm::MockOptions o;
    o.mask_ce = [&](const std::string&, const textseg::Span& span) {
      for (std::size_t i = 0; i < spans.size(); ++i) {
        if (spans[i].first == span.start) return values[i];
      }
      return -1.0;
    };
    auto gw = gateway(o);
    const auto r = ceonp("doc", text, *gw, "mock", textseg::NounPhraseSource(sidecar));
    double sum = 0;
    for (double v : values) sum += v;
    CHECK(std::abs(r.value - sum / static_cast<double>(values.size())) <= 1e-12);
  }
}

TEST_CASE("CEoNP without noun phrases") {
  auto gw = gateway();
  CHECK_THROWS_WITH_AS(ceonp("t", "Quickly and silently.", *gw, "mock", {}), "no noun phrases", NoNounPhrases);
}

TEST_CASE("rater mark parsing") {
  CHECK(parse_rater_mark("Marks: 7") == 7);
  CHECK(parse_rater_mark("I would rate it 10/10 because") == 10);
  CHECK(parse_rater_mark("great summary!") == std::nullopt);
  CHECK(parse_rater_mark("Marks: 0 or maybe 11, fine 4") == 4);
  CHECK(parse_rater_mark("123 then 5") == 5);
}

TEST_CASE("rater transform is exhaustive over 1..10") {
  for (int k = 1; k <= 10; ++k) {
    auto gw = scripted_rater([k](const llm::ChatRequest&) { return "Marks: " + std::to_string(k); });
    const auto r = llm_rater("Some summary.", *gw, "mock");
    CHECK(r.mark == k);
    CHECK(r.value == 10.0 - k);
    CHECK(rater_transform(k) == 10.0 - k);
  }
  CHECK_THROWS_AS(rater_transform(0), PreconditionError);
  CHECK_THROWS_AS(rater_transform(11), PreconditionError);
}

TEST_CASE("rater re-asks once with a new seed") {
  std::vector<std::optional<std::uint64_t>> seeds;
  auto gw = scripted_rater([&](const llm::ChatRequest& r) {
    seeds.push_back(r.seed);
    return seeds.size() == 1 ? std::string("great summary!") : std::string("Marks: 3");
  });
  pipeline::GenerationOptions g;
  g.seed = 10;
  const auto r = llm_rater("S.", *gw, "mock", prompts::PromptRegistry::builtin(), g);
  CHECK(r.attempts == 2);
  CHECK(r.value == 7.0);
  REQUIRE(seeds.size() == 2);
  CHECK(seeds[1] == 11u);

  auto never = scripted_rater([](const llm::ChatRequest&) { return "great summary!"; });
  CHECK_THROWS_AS(llm_rater("S.", *never, "mock"), RaterParseError);
}

TEST_CASE("LLM Score from log-probabilities") {
  const auto r = llm_score_from_logprobs({{" a", -0.5}, {" b", -1.5}});
  CHECK(r.sum == 2.0);
  CHECK(r.normalized == 1.0);
  CHECK(r.tokens == 2);
  CHECK_THROWS_AS(llm_score_from_logprobs({}), PreconditionError);
  CHECK_FALSE(std::signbit(llm_score_from_logprobs({{" a", 0.0}}).sum));
}

TEST_CASE("LLM Score equals the negated sum of injected logprobs") {
  std::mt19937 rng(12);
  std::vector<double> injected;
  llm::MockOptions o;
  o.logprob_script = [&](const llm::ScoreRequest& r) -> std::optional<std::vector<double>> {
    injected.clear();
    for (std::size_t i = 0; i < llm::MockBackend::split_pieces(r.continuation).size(); ++i) {
      injected.push_back(-std::uniform_real_distribution<double>(0, 5)(rng));
    }
    return injected;
  };
  auto gw = gateway(o);
  const auto r = llm_score("An article about cells.", "Cells grow and split in two.", *gw, "mock", {}, kTok);
  double expected = 0;
  for (double v : injected) expected -= v;
  CHECK(r.sum == expected);
  CHECK(r.normalized == expected / static_cast<double>(injected.size()));
}

TEST_CASE("LLM Score sum never decreases as the summary grows") {
  auto gw = gateway();
  std::string summary = "Cells";
  double previous = 0;
  for (const char* w : {" grow", " and", " split", " in", " warm", " water", "."}) {
    summary += w;
    const double s = llm_score("Article text.", summary, *gw, "mock", {}, kTok).sum;
    CHECK(s >= previous);
    previous = s;
  }
}

TEST_CASE("LLM Score prefix") {
  const auto prefix = llm_score_prefix(testsupport::words(2000), {}, kTok);
  CHECK(prefix.find("w1023") != std::string::npos);
  CHECK(prefix.find("w1024") == std::string::npos);
  CHECK(prefix.substr(prefix.size() - 9) == "Summary: ");
}

TEST_CASE("argmax continuation scores lowest") {
  auto mock = std::make_shared<llm::MockBackend>();
  llm::Gateway gw(mock, quiet());
  const std::string article = "Background on cells.";
  const auto prefix = llm_score_prefix(article, {}, kTok);
  const auto best = mock->preferred_continuation("mock", prefix, 6);
  const double best_score = llm_score(article, best, gw, "mock", {}, kTok).sum;
  std::mt19937 rng(1);
  const std::vector<std::string> vocab = {"cells", "genes", "help", "people", "grow", "the", "mice"};
  for (int i = 0; i < 50; ++i) {
    std::string alt;
    for (int w = 0; w < 6; ++w) alt += (w ? " " : "") + vocab[rng() % vocab.size()];
    CHECK(best_score <= llm_score(article, alt, gw, "mock", {}, kTok).sum);
  }
}

TEST_CASE("metric report invariants") {
  MetricReport report;
  report.add("a", "S", {MetricId::kCli, "", 5.0});
  CHECK_THROWS_AS(report.add("a", "S", {MetricId::kCli, "", 6.0}), DuplicateError);
  CHECK_THROWS_AS(report.add("a", "S", {MetricId::kR1, "", 1.5}), ValidationError);
  CHECK_THROWS_AS(report.add("a", "S", {MetricId::kRaterGptClass, "", 9.5}), ValidationError);
  CHECK_THROWS_AS(report.add("b", "S", {MetricId::kCli, "", std::nan("")}), ValidationError);
  report.add("a", "S", {MetricId::kLlmScore, "sum", 10.0});
  report.add("a", "S", {MetricId::kLlmScore, "normalized", 2.0});
  report.add("b", "S", {MetricId::kCli, "", 7.0});
  CHECK(report.find("a", "S", "LLMScore.normalized")->value.value == 2.0);

  const auto means = report.system_means();
  REQUIRE(means.size() == 3);
  CHECK(means[0].key == "CLI");
  CHECK(means[0].mean == 6.0);
  CHECK(means[0].n == 2);
  CHECK(system_means_csv(means) == "system,CLI,LLMScore,LLMScore.normalized\nS,6.0000,10.0000,2.0000\n");

  testsupport::TempDir dir;
  testsupport::write_text(dir / "m.jsonl", report.to_jsonl());
  const auto back = MetricReport::from_jsonl(dir / "m.jsonl");
  CHECK(back.to_jsonl() == report.to_jsonl());
  CHECK(back.find("a", "S", "LLMScore")->value.variant == "sum");
}

TEST_CASE("orientation metadata") {
  CHECK(orientation_of(MetricId::kCli) == Orientation::kLowerIsMoreLay);
  CHECK(orientation_of(MetricId::kR1) == Orientation::kHigherIsMoreSimilar);
  CHECK(parse_metric_id("RaterVicunaClass") == MetricId::kRaterVicunaClass);
}

TEST_CASE("evaluate records per-item failures and keeps going") {
  auto gw = scripted_rater([&](const llm::ChatRequest& r) {
    const auto& prompt = r.messages[0].content;
    return prompt.find("unratable") != std::string::npos ? std::string("great summary!") : std::string("Marks: 8");
  });
  ScoringContext ctx;
  ctx.gateway = gw.get();
  ctx.rater_gpt_backend = "mock";
  ctx.registry = &prompts::PromptRegistry::builtin();
  ctx.tokenizer = &kTok;
  ctx.parallelism = 2;
  std::vector<ScoringItem> items;
  for (int i = 0; i < 6; ++i) {
    ScoringItem item;
    item.id = "d" + std::to_string(i);
    item.system = "S";
    item.text = i == 2 ? "An unratable summary." : "A fine summary.";
    item.reference = "A fine summary.";
    items.push_back(item);
  }
  const auto report = evaluate(items, parse_families("cli,rouge,rater_gpt"), ctx);
  REQUIRE(report.failures().size() == 1);
  CHECK(report.failures()[0].id == "d2");
  CHECK(report.failures()[0].metric == "rater_gpt");
  CHECK(report.rows().size() == 6 * 5 + 5);
  CHECK(report.rows()[0].id == "d0");
  CHECK(report.find("d1", "S", "RaterGPTclass")->value.value == 2.0);
  CHECK(report.find("d1", "S", "R1")->value.value == 1.0);
  const auto prov = report.find("d1", "S", "RaterGPTclass")->value.provenance;
  CHECK(prov["orientation"] == "lower_is_more_lay");
  CHECK(prov["mark"] == 8);
}

TEST_CASE("family parsing") {
  CHECK(parse_families("cli, rouge").size() == 2);
  CHECK_THROWS_AS(parse_families("cli,bertscore"), ConfigError);
  CHECK_THROWS_AS(parse_families(""), ConfigError);
  CHECK(needs_gateway(Family::kCeonp));
  CHECK_FALSE(needs_gateway(Family::kCli));
}
