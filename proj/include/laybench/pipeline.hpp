#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "laybench/corpus.hpp"
#include "laybench/llmgate.hpp"
#include "laybench/prompts.hpp"

namespace laybench::pipeline {

// The explanation comes first, then this separator, then the article.
inline constexpr std::string_view kArticleSeparator = "\n\n[ARTICLE]\n\n";

// Flags attached to augmented records.
inline constexpr std::string_view kFlagExplanationTruncated = "explanation_truncated";
inline constexpr std::string_view kFlagArticleTruncated = "article_truncated";
inline constexpr std::string_view kFlagNoExplanation = "no_explanation";

// The backend declined the request. Never cached, never retried.
class RefusalError : public Error {
 public:
  using Error::Error;
};

struct GenerationOptions {
  double temperature = 0.0;
  int max_output_tokens = 1024;
  std::optional<std::uint64_t> seed;
};

// Known system names. Summary files may carry other names (e.g. summaries
// produced by an external fine-tuned model); those load as External unless
// the caller keeps the raw string.
enum class System { kZsGptClass, kZsVicunaClass, kTarget, kExternal };
std::string_view to_string(System system);
System parse_system(std::string_view s);

// Sends the Explain prompt for `abstract` as a single user message and
// returns the reply verbatim. Throws RefusalError on a refusal.
std::string explain(std::string_view abstract, llm::Gateway& gateway, const std::string& backend_id,
                    const prompts::PromptRegistry& registry = prompts::PromptRegistry::builtin(),
                    const GenerationOptions& options = {});

struct AugmentedDocument {
  corpus::Document document;
  std::string explanation;  // truncated to the explanation budget
  std::string augmented_input;
  corpus::TokenBudget budgets_used;
  std::string backend_id;
  std::vector<std::string> flags;

  nlohmann::ordered_json to_json() const;
};

// Without an explanation (refusal or missing) the augmented input is the
// truncated article alone and the record is flagged.
AugmentedDocument augment(const corpus::Document& document, const std::optional<std::string>& explanation,
                          const corpus::TokenBudget& budgets, const corpus::Tokenizer& tokenizer,
                          const std::string& backend_id = {});

struct GeneratedSummary {
  std::string document_id;
  std::string system;
  std::string text;
  std::optional<std::string> backend_id;

  nlohmann::ordered_json to_json() const;  // {"id", "system", "summary"}
};

// The zero-shot prompt as sent: article cut to the zero-shot budget.
std::string zero_shot_prompt(std::string_view article, const corpus::TokenBudget& budgets,
                             const corpus::Tokenizer& tokenizer,
                             const prompts::PromptRegistry& registry = prompts::PromptRegistry::builtin());

GeneratedSummary zero_shot_summarise(const std::string& document_id, std::string_view article, llm::Gateway& gateway,
                                     const std::string& backend_id, System system, const corpus::TokenBudget& budgets,
                                     const corpus::Tokenizer& tokenizer,
                                     const prompts::PromptRegistry& registry = prompts::PromptRegistry::builtin(),
                                     const GenerationOptions& options = {});

// Summary export reader. Throws DuplicateError on a repeated (id, system).
std::vector<GeneratedSummary> load_summaries(const std::filesystem::path& path);

// Target summaries copied from the corpus lay summaries.
std::vector<GeneratedSummary> target_summaries(const corpus::Corpus& corpus);

// ---------------------------------------------------------------------------
// Batch driver

enum class Stage { kExplain, kAugment, kZeroShot };
std::string_view to_string(Stage stage);

struct BatchConfig {
  Stage stage = Stage::kExplain;
  std::filesystem::path output;  // JSONL; the manifest sits beside it as <stem>.manifest.json
  std::string backend_id;
  System system = System::kZsGptClass;  // zero-shot only
  corpus::TokenBudget budgets;
  const corpus::Tokenizer* tokenizer = nullptr;  // defaults to WordPunctTokenizer
  const prompts::PromptRegistry* registry = nullptr;  // defaults to builtin
  GenerationOptions generation;
  std::size_t parallelism = 0;  // 0: the gateway's in-flight limit
  // Augment stage input (explain stage output).
  std::filesystem::path explanations;
  // Process at most this many new documents, then stop as if interrupted.
  std::optional<std::size_t> limit;
  // Extra fields echoed into the manifest (input provenance, etc.).
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();
};

struct DocumentFailure {
  std::string id;
  std::string error;
};

struct BatchResult {
  std::size_t written = 0;   // records in the final output
  std::size_t processed = 0; // documents handled in this run
  std::size_t resumed = 0;   // documents already present from an earlier run
  std::size_t pending = 0;   // left for a later run because of `limit`
  std::vector<DocumentFailure> failures;
  std::filesystem::path output;
  std::filesystem::path manifest;

  bool ok() const { return failures.empty() && pending == 0; }
};

std::filesystem::path manifest_path_for(const std::filesystem::path& output);

// Processes the corpus with bounded parallelism. Records already present in
// `output` are kept and skipped. Completed records are appended as they
// finish; the final file is rewritten in corpus order so an interrupted and
// resumed run ends byte-identical to an uninterrupted one. Per-document
// failures are listed in the manifest and do not stop the batch.
// `gateway` may be null for the augment stage.
BatchResult run_batch(const corpus::Corpus& corpus, llm::Gateway* gateway, const BatchConfig& config);

// Runs fn(i) for i in [0, n) on up to `workers` threads.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

}  // namespace laybench::pipeline
