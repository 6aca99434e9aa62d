#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "laybench/textseg.hpp"

namespace laybench::corpus {

enum class DatasetTag { kPlos, kElife, kCustom };
enum class Split { kTrain, kVal, kTest };

std::string_view to_string(DatasetTag tag);
std::string_view to_string(Split split);
DatasetTag parse_dataset_tag(std::string_view s);
Split parse_split(std::string_view s);

struct Document {
  std::string id;
  std::string article;
  std::string abstract;
  std::optional<std::string> lay_summary;
  DatasetTag dataset_tag = DatasetTag::kCustom;
  Split split = Split::kTrain;
};

// Ordered, immutable once built. Construction enforces the id invariants.
class Corpus {
 public:
  Corpus() = default;
  Corpus(std::string name, std::vector<Document> documents);

  const std::string& name() const { return name_; }
  const std::vector<Document>& documents() const { return documents_; }
  std::size_t size() const { return documents_.size(); }
  bool empty() const { return documents_.empty(); }

  const Document* find(const std::string& id) const;
  Corpus filter_split(Split split) const;

 private:
  std::string name_;
  std::vector<Document> documents_;
  std::map<std::string, std::size_t> index_;
};

// Token budgets for explanation/article truncation.
struct TokenBudget {
  std::size_t explanation_budget = 320;
  std::size_t article_budget_sft = 700;
  std::size_t article_budget_zeroshot = 1024;
  std::size_t model_context = 1024;

  // Throws PreconditionError if any budget is zero.
  void validate() const;
  nlohmann::ordered_json to_json() const;
};

// Pluggable tokenizer. Implementations return token spans (byte offsets) in
// text order; truncation cuts the source text at a token boundary, so any
// tokenizer that reports offsets can be swapped in.
class Tokenizer {
 public:
  virtual ~Tokenizer() = default;
  virtual std::string name() const = 0;
  virtual std::vector<textseg::Span> tokenize(std::string_view text) const = 0;
};

// Default tokenizer: words (alphanumeric runs) plus single punctuation marks.
class WordPunctTokenizer final : public Tokenizer {
 public:
  std::string name() const override { return "word-punct-v1"; }
  std::vector<textseg::Span> tokenize(std::string_view text) const override { return textseg::lex(text); }
};

std::size_t token_count(std::string_view text, const Tokenizer& tokenizer);

// Head truncation: keeps the first `budget` tokens, cutting the original text
// right after the last kept token. Idempotent; returns the input unchanged
// when it already fits.
std::string truncate_tokens(std::string_view text, std::size_t budget, const Tokenizer& tokenizer);

struct LoadOptions {
  std::string name;  // defaults to the file stem
  DatasetTag dataset_tag = DatasetTag::kCustom;
};

Corpus load_jsonl(const std::filesystem::path& path, const LoadOptions& options = {});

nlohmann::ordered_json to_json(const Document& document);
// One object per line, LF endings, final newline.
std::string to_jsonl(const Corpus& corpus);
void write_jsonl(const Corpus& corpus, const std::filesystem::path& path);

struct CorpusStats {
  std::size_t documents = 0;
  std::size_t with_lay_summary = 0;
  std::optional<double> mean_abstract_words;
  std::optional<double> mean_lay_summary_words;
  std::optional<double> mean_article_words;

  nlohmann::ordered_json to_json() const;
};

CorpusStats corpus_stats(const Corpus& corpus);

}  // namespace laybench::corpus
