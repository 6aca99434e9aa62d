#include "laybench/corpus.hpp"

#include "laybench/error.hpp"
#include "laybench/jsonl.hpp"
#include "laybench/unicode.hpp"

namespace laybench::corpus {

std::string_view to_string(DatasetTag tag) {
  switch (tag) {
    case DatasetTag::kPlos: return "PLOS";
    case DatasetTag::kElife: return "eLife";
    case DatasetTag::kCustom: return "custom";
  }
  return "custom";
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

DatasetTag parse_dataset_tag(std::string_view s) {
  if (s == "PLOS" || s == "plos") return DatasetTag::kPlos;
  if (s == "eLife" || s == "elife") return DatasetTag::kElife;
  if (s == "custom") return DatasetTag::kCustom;
  throw ConfigError("unknown dataset tag \"" + std::string(s) + "\" (expected PLOS, eLife or custom)");
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw ParseError("unknown split \"" + std::string(s) + "\" (expected train, val or test)");
}

Corpus::Corpus(std::string name, std::vector<Document> documents)
    : name_(std::move(name)), documents_(std::move(documents)) {
  for (std::size_t i = 0; i < documents_.size(); ++i) {
    const auto& doc = documents_[i];
    if (doc.id.empty()) throw ValidationError("document at position " + std::to_string(i) + " has an empty id");
    if (doc.article.empty()) throw ValidationError("document \"" + doc.id + "\" has an empty article");
    if (doc.abstract.empty()) throw ValidationError("document \"" + doc.id + "\" has an empty abstract");
    if (!index_.emplace(doc.id, i).second) throw DuplicateError("duplicate document id \"" + doc.id + "\"");
  }
}

const Document* Corpus::find(const std::string& id) const {
  auto it = index_.find(id);
  return it == index_.end() ? nullptr : &documents_[it->second];
}

Corpus Corpus::filter_split(Split split) const {
  std::vector<Document> kept;
  for (const auto& doc : documents_) {
    if (doc.split == split) kept.push_back(doc);
  }
  return Corpus(name_, std::move(kept));
}

void TokenBudget::validate() const {
  if (explanation_budget == 0 || article_budget_sft == 0 || article_budget_zeroshot == 0 || model_context == 0) {
    throw PreconditionError("token budgets must all be > 0");
  }
}

nlohmann::ordered_json TokenBudget::to_json() const {
  return {{"explanation_budget", explanation_budget},
          {"article_budget_sft", article_budget_sft},
          {"article_budget_zeroshot", article_budget_zeroshot},
          {"model_context", model_context}};
}

std::size_t token_count(std::string_view text, const Tokenizer& tokenizer) { return tokenizer.tokenize(text).size(); }

std::string truncate_tokens(std::string_view text, std::size_t budget, const Tokenizer& tokenizer) {
  if (budget == 0) throw PreconditionError("truncation budget must be > 0");
  const auto tokens = tokenizer.tokenize(text);
  if (tokens.size() <= budget) return std::string(text);
  return std::string(text.substr(0, tokens[budget - 1].end));
}

namespace {

std::string required_string(const nlohmann::json& object, const char* field, const std::string& where) {
  auto it = object.find(field);
  if (it == object.end() || !it->is_string()) {
    throw ParseError(where + ": missing or non-string required field \"" + field + "\"");
  }
  return unicode::to_nfc(it->get<std::string>());
}

}  // namespace

Corpus load_jsonl(const std::filesystem::path& path, const LoadOptions& options) {
  std::vector<Document> documents;
  std::map<std::string, std::size_t> first_line;
  jsonl::for_each_object(path, [&](std::size_t line, const nlohmann::json& object) {
    const auto where = path.string() + ":" + std::to_string(line);
    Document doc;
    doc.id = required_string(object, "id", where);
    doc.article = required_string(object, "article", where);
    doc.abstract = required_string(object, "abstract", where);
    if (auto it = object.find("lay_summary"); it != object.end() && !it->is_null()) {
      if (!it->is_string()) throw ParseError(where + ": \"lay_summary\" must be a string or null");
      doc.lay_summary = unicode::to_nfc(it->get<std::string>());
    }
    try {
      doc.split = parse_split(required_string(object, "split", where));
    } catch (const ParseError& e) {
      throw ParseError(where + ": " + e.what());
    }
    doc.dataset_tag = options.dataset_tag;
    if (doc.id.empty()) throw ValidationError(where + ": empty id");
    if (doc.article.empty()) throw ValidationError(where + ": empty article");
    if (doc.abstract.empty()) throw ValidationError(where + ": empty abstract");

    auto [it, inserted] = first_line.emplace(doc.id, line);
    if (!inserted) {
      throw DuplicateError(path.string() + ": duplicate id \"" + doc.id + "\" on lines " + std::to_string(it->second) +
                           " and " + std::to_string(line));
    }
    documents.push_back(std::move(doc));
  });
  auto name = options.name.empty() ? path.stem().string() : options.name;
  return Corpus(std::move(name), std::move(documents));
}

nlohmann::ordered_json to_json(const Document& document) {
  nlohmann::ordered_json object;
  object["id"] = document.id;
  object["article"] = document.article;
  object["abstract"] = document.abstract;
  object["lay_summary"] = document.lay_summary ? nlohmann::ordered_json(*document.lay_summary) : nlohmann::ordered_json(nullptr);
  object["split"] = to_string(document.split);
  return object;
}

std::string to_jsonl(const Corpus& corpus) {
  std::vector<nlohmann::ordered_json> rows;
  rows.reserve(corpus.size());
  for (const auto& doc : corpus.documents()) rows.push_back(to_json(doc));
  return jsonl::to_lines(rows);
}

void write_jsonl(const Corpus& corpus, const std::filesystem::path& path) {
  jsonl::write_file_atomic(path, to_jsonl(corpus));
}

nlohmann::ordered_json CorpusStats::to_json() const {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr); };
  return {{"documents", documents},
          {"with_lay_summary", with_lay_summary},
          {"mean_abstract_words", opt(mean_abstract_words)},
          {"mean_lay_summary_words", opt(mean_lay_summary_words)},
          {"mean_article_words", opt(mean_article_words)}};
}

CorpusStats corpus_stats(const Corpus& corpus) {
  CorpusStats stats;
  stats.documents = corpus.size();
  double abstract_words = 0;
  double lay_words = 0;
  double article_words = 0;
  for (const auto& doc : corpus.documents()) {
    abstract_words += static_cast<double>(textseg::split_words(doc.abstract).size());
    article_words += static_cast<double>(textseg::split_words(doc.article).size());
    if (doc.lay_summary) {
      ++stats.with_lay_summary;
      lay_words += static_cast<double>(textseg::split_words(*doc.lay_summary).size());
    }
  }
  if (stats.documents > 0) {
    stats.mean_abstract_words = abstract_words / static_cast<double>(stats.documents);
    stats.mean_article_words = article_words / static_cast<double>(stats.documents);
  }
  if (stats.with_lay_summary > 0) stats.mean_lay_summary_words = lay_words / static_cast<double>(stats.with_lay_summary);
  return stats;
}

}  // namespace laybench::corpus
