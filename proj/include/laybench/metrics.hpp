#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "laybench/corpus.hpp"
#include "laybench/llmgate.hpp"
#include "laybench/pipeline.hpp"
#include "laybench/prompts.hpp"
#include "laybench/textseg.hpp"

namespace laybench::metrics {

enum class MetricId { kCli, kR1, kR2, kRL, kRougeGeoMean, kCeonp, kRaterGptClass, kRaterVicunaClass, kLlmScore };
std::string_view to_string(MetricId id);
MetricId parse_metric_id(std::string_view s);

enum class Orientation { kLowerIsMoreLay, kHigherIsMoreSimilar };
std::string_view to_string(Orientation orientation);
Orientation orientation_of(MetricId id);

// ---------------------------------------------------------------------------
// Coleman-Liau

struct TextCounts {
  std::size_t letters = 0;
  std::size_t words = 0;
  std::size_t sentences = 0;
};

TextCounts count_text(std::string_view text);

// 0.0588 L - 0.296 S - 15.8 with L, S per 100 words.
double coleman_liau_index(double letters_per_100_words, double sentences_per_100_words);

// Throws PreconditionError when the text has no words.
double coleman_liau(std::string_view text);

// ---------------------------------------------------------------------------
// ROUGE (case-folded words, no stemming)

struct Prf {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
};

std::vector<std::string> rouge_tokens(std::string_view text);

// Token-level forms. Throw PreconditionError when the reference is empty.
Prf rouge_n(const std::vector<std::string>& candidate, const std::vector<std::string>& reference, std::size_t n);
Prf rouge_l(const std::vector<std::string>& candidate, const std::vector<std::string>& reference);

Prf rouge_n(std::string_view candidate, std::string_view reference, std::size_t n);
Prf rouge_l(std::string_view candidate, std::string_view reference);

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b);

// Cube root of the product; 0 if any input is 0.
double rouge_geometric_mean(double r1_f1, double r2_f1, double rl_f1);

// ---------------------------------------------------------------------------
// CEoNP

class NoNounPhrases : public PreconditionError {
 public:
  NoNounPhrases() : PreconditionError("no noun phrases") {}
};

struct CeonpResult {
  double value = 0;
  std::vector<textseg::Span> noun_phrases;
  std::vector<double> per_phrase;
};

// One masked-scoring call per noun phrase; the value is the mean of the
// per-phrase cross entropies.
CeonpResult ceonp(const std::string& text_id, std::string_view text, llm::Gateway& gateway,
                  const std::string& backend_id, const textseg::NounPhraseSource& np_source);

// ---------------------------------------------------------------------------
// LLM Rater

class RaterParseError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// First integer in 1..10 in the reply; digit runs are read whole, so "10" is
// never taken as "1".
std::optional<int> parse_rater_mark(std::string_view reply);

// 10 - mark. Throws PreconditionError outside 1..10.
double rater_transform(int mark);

struct RaterResult {
  double value = 0;
  int mark = 0;
  int attempts = 0;
  std::string reply;
};

// On an unparseable reply the prompt is sent once more with the seed
// advanced by one (a distinct cache entry); a second failure throws
// RaterParseError.
RaterResult llm_rater(std::string_view summary, llm::Gateway& gateway, const std::string& backend_id,
                      const prompts::PromptRegistry& registry = prompts::PromptRegistry::builtin(),
                      const pipeline::GenerationOptions& options = {});

// ---------------------------------------------------------------------------
// LLM Score

struct LlmScoreResult {
  double sum = 0;         // -sum of continuation log-probabilities
  double normalized = 0;  // sum / token count
  std::size_t tokens = 0;
};

// Scoring prefix: the ScorePrefix template rendered up to its Summary slot,
// with the article cut to the zero-shot budget.
std::string llm_score_prefix(std::string_view article, const corpus::TokenBudget& budgets,
                             const corpus::Tokenizer& tokenizer,
                             const prompts::PromptRegistry& registry = prompts::PromptRegistry::builtin());

LlmScoreResult llm_score_from_logprobs(const std::vector<llm::TokenLogprob>& logprobs);

LlmScoreResult llm_score(std::string_view article, std::string_view summary, llm::Gateway& gateway,
                         const std::string& backend_id, const corpus::TokenBudget& budgets,
                         const corpus::Tokenizer& tokenizer,
                         const prompts::PromptRegistry& registry = prompts::PromptRegistry::builtin());

// ---------------------------------------------------------------------------
// Reports

struct MetricValue {
  MetricId metric = MetricId::kCli;
  std::string variant;  // "" or, for LLMScore, "sum" / "normalized"
  double value = 0;
  nlohmann::ordered_json provenance = nlohmann::ordered_json::object();

  // Report column name: the metric name, plus ".normalized" for that variant.
  std::string key() const;
};

struct MetricRow {
  std::string id;
  std::string system;
  MetricValue value;

  nlohmann::ordered_json to_json() const;  // {"id", "system", "metric", "value", "provenance"}
};

struct MetricFailure {
  std::string id;
  std::string system;
  std::string metric;
  std::string error;

  nlohmann::ordered_json to_json() const;
};

struct SystemMean {
  std::string system;
  std::string key;
  double mean = 0;
  std::size_t n = 0;
};

// Rows in insertion order. (id, system, key) is unique.
class MetricReport {
 public:
  // Throws DuplicateError, or ValidationError for a non-finite or
  // out-of-range value.
  void add(const std::string& id, const std::string& system, MetricValue value);
  void add_failure(MetricFailure failure) { failures_.push_back(std::move(failure)); }

  const std::vector<MetricRow>& rows() const { return rows_; }
  const std::vector<MetricFailure>& failures() const { return failures_; }

  const MetricRow* find(const std::string& id, const std::string& system, const std::string& key) const;

  // Means per (system, key); systems and keys in first-seen order.
  std::vector<SystemMean> system_means() const;

  std::string to_jsonl() const;
  static MetricReport from_jsonl(const std::filesystem::path& path);

 private:
  std::vector<MetricRow> rows_;
  std::vector<MetricFailure> failures_;
  std::set<std::tuple<std::string, std::string, std::string>> keys_;
};

// Per-system means as CSV: header "system,<key>,..." then one row per system.
std::string system_means_csv(const std::vector<SystemMean>& means);

// ---------------------------------------------------------------------------
// Evaluation driver

// Metric families selectable on the command line:
// cli, rouge (R1, R2, RL, RougeGeoMean), ceonp, rater_gpt, rater_vicuna, llmscore.
enum class Family { kCli, kRouge, kCeonp, kRaterGpt, kRaterVicuna, kLlmScore };
std::string_view to_string(Family family);
std::vector<Family> parse_families(std::string_view comma_separated);
bool needs_gateway(Family family);

struct ScoringContext {
  llm::Gateway* gateway = nullptr;
  std::string rater_gpt_backend;
  std::string rater_vicuna_backend;
  std::string score_backend;
  std::string mask_backend;
  const prompts::PromptRegistry* registry = nullptr;
  const corpus::Tokenizer* tokenizer = nullptr;
  corpus::TokenBudget budgets;
  const textseg::NounPhraseSource* np_source = nullptr;
  pipeline::GenerationOptions generation;
  std::size_t parallelism = 1;
};

// What one scored text needs. `reference` feeds ROUGE, `article` the LLM
// Score prefix; `np_key` looks up sidecar noun phrases.
struct ScoringItem {
  std::string id;
  std::string system;
  std::string text;
  std::optional<std::string> reference;
  std::optional<std::string> article;
  std::string np_key;
};

// Scores one item under one family. Throws on failure.
std::vector<MetricValue> score_family(Family family, const ScoringItem& item, const ScoringContext& context);

// Scores every item under every family, in parallel across items. Failures
// are recorded per (id, system, family) and do not stop the run. Row order is
// item order, then family order.
MetricReport evaluate(const std::vector<ScoringItem>& items, const std::vector<Family>& families,
                      const ScoringContext& context);

}  // namespace laybench::metrics
