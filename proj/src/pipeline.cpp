#include "laybench/pipeline.hpp"

#include <atomic>
#include <exception>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include "laybench/jsonl.hpp"

namespace laybench::pipeline {

using nlohmann::ordered_json;

namespace {

const corpus::Tokenizer& default_tokenizer() {
  static const corpus::WordPunctTokenizer tokenizer;
  return tokenizer;
}

llm::ChatRequest single_message(const std::string& backend_id, std::string prompt, const GenerationOptions& options) {
  llm::ChatRequest request;
  request.backend_id = backend_id;
  request.messages.push_back({"user", std::move(prompt)});
  request.temperature = options.temperature;
  request.max_output_tokens = options.max_output_tokens;
  request.seed = options.seed;
  return request;
}

// Serialises completed records in corpus order while the batch runs. Slot i
// is written once every slot before it has been written or skipped.
class OrderedAppender {
 public:
  OrderedAppender(const std::filesystem::path& path, std::size_t slots) : appender_(path), done_(slots, false) {}

  void skip(std::size_t slot) { finish(slot, std::nullopt); }
  void put(std::size_t slot, std::string line) { finish(slot, std::move(line)); }

 private:
  void finish(std::size_t slot, std::optional<std::string> line) {
    std::lock_guard lock(mutex_);
    done_[slot] = true;
    if (line) ready_[slot] = std::move(*line);
    while (next_ < done_.size() && done_[next_]) {
      auto it = ready_.find(next_);
      if (it != ready_.end()) {
        appender_.append(it->second);
        ready_.erase(it);
      }
      ++next_;
    }
  }

  std::mutex mutex_;
  jsonl::DurableAppender appender_;
  std::vector<bool> done_;
  std::map<std::size_t, std::string> ready_;
  std::size_t next_ = 0;
};

std::map<std::string, std::string> load_explanations(const std::filesystem::path& path) {
  if (path.empty()) throw ConfigError("the augment stage needs an explanations file");
  if (!std::filesystem::exists(path)) throw ConfigError("explanations file not found: " + path.string());
  std::map<std::string, std::string> explanations;
  jsonl::for_each_object(path, [&](std::size_t line, const nlohmann::json& row) {
    if (!row.contains("id") || !row["id"].is_string() || !row.contains("explanation") ||
        !row["explanation"].is_string()) {
      throw ParseError(path.string() + ":" + std::to_string(line) + ": expected string fields \"id\" and \"explanation\"");
    }
    if (!explanations.emplace(row["id"].get<std::string>(), row["explanation"].get<std::string>()).second) {
      throw DuplicateError(path.string() + ":" + std::to_string(line) + ": duplicate id \"" +
                           row["id"].get<std::string>() + "\"");
    }
  });
  return explanations;
}

}  // namespace

std::string_view to_string(System system) {
  switch (system) {
    case System::kZsGptClass: return "ZS_GPT_class";
    case System::kZsVicunaClass: return "ZS_Vicuna_class";
    case System::kTarget: return "Target";
    case System::kExternal: return "External";
  }
  return "External";
}

System parse_system(std::string_view s) {
  for (auto system : {System::kZsGptClass, System::kZsVicunaClass, System::kTarget, System::kExternal}) {
    if (s == to_string(system)) return system;
  }
  throw ConfigError("unknown system \"" + std::string(s) +
                    "\" (expected ZS_GPT_class, ZS_Vicuna_class, Target or External)");
}

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::kExplain: return "explain";
    case Stage::kAugment: return "augment";
    case Stage::kZeroShot: return "zeroshot";
  }
  return "explain";
}

std::string explain(std::string_view abstract, llm::Gateway& gateway, const std::string& backend_id,
                    const prompts::PromptRegistry& registry, const GenerationOptions& options) {
  if (abstract.empty()) throw PreconditionError("explain: abstract is empty");
  auto prompt = registry.render(prompts::TemplateId::kExplain, {{"Abstract", std::string(abstract)}});
  auto response = gateway.complete(single_message(backend_id, std::move(prompt), options));
  if (response.finish_reason == llm::FinishReason::kRefusal) {
    throw RefusalError("backend refused to explain: " + response.text);
  }
  return response.text;
}

ordered_json AugmentedDocument::to_json() const {
  auto object = corpus::to_json(document);
  object["explanation"] = explanation;
  object["augmented_input"] = augmented_input;
  object["flags"] = flags;
  return object;
}

AugmentedDocument augment(const corpus::Document& document, const std::optional<std::string>& explanation,
                          const corpus::TokenBudget& budgets, const corpus::Tokenizer& tokenizer,
                          const std::string& backend_id) {
  budgets.validate();
  AugmentedDocument out;
  out.document = document;
  out.budgets_used = budgets;
  out.backend_id = backend_id;

  const auto article = corpus::truncate_tokens(document.article, budgets.article_budget_sft, tokenizer);
  const bool article_cut = article.size() != document.article.size();

  if (explanation && !explanation->empty()) {
    out.explanation = corpus::truncate_tokens(*explanation, budgets.explanation_budget, tokenizer);
    if (out.explanation.size() != explanation->size()) out.flags.emplace_back(kFlagExplanationTruncated);
    out.augmented_input = out.explanation;
    out.augmented_input += kArticleSeparator;
    out.augmented_input += article;
  } else {
    out.flags.emplace_back(kFlagNoExplanation);
    out.augmented_input = article;
  }
  if (article_cut) out.flags.emplace_back(kFlagArticleTruncated);
  return out;
}

ordered_json GeneratedSummary::to_json() const {
  ordered_json object;
  object["id"] = document_id;
  object["system"] = system;
  object["summary"] = text;
  return object;
}

std::string zero_shot_prompt(std::string_view article, const corpus::TokenBudget& budgets,
                             const corpus::Tokenizer& tokenizer, const prompts::PromptRegistry& registry) {
  if (article.empty()) throw PreconditionError("zero-shot summarisation: article is empty");
  budgets.validate();
  const auto truncated = corpus::truncate_tokens(article, budgets.article_budget_zeroshot, tokenizer);
  return registry.render(prompts::TemplateId::kZeroShotLs, {{"Article", truncated}});
}

GeneratedSummary zero_shot_summarise(const std::string& document_id, std::string_view article, llm::Gateway& gateway,
                                     const std::string& backend_id, System system, const corpus::TokenBudget& budgets,
                                     const corpus::Tokenizer& tokenizer, const prompts::PromptRegistry& registry,
                                     const GenerationOptions& options) {
  auto prompt = zero_shot_prompt(article, budgets, tokenizer, registry);
  auto response = gateway.complete(single_message(backend_id, std::move(prompt), options));
  if (response.finish_reason == llm::FinishReason::kRefusal) {
    throw RefusalError("backend refused to summarise: " + response.text);
  }
  if (response.text.empty()) throw llm::BackendError("backend returned an empty summary", false);
  return {document_id, std::string(to_string(system)), response.text, backend_id};
}

std::vector<GeneratedSummary> load_summaries(const std::filesystem::path& path) {
  std::vector<GeneratedSummary> summaries;
  std::set<std::pair<std::string, std::string>> seen;
  jsonl::for_each_object(path, [&](std::size_t line, const nlohmann::json& row) {
    const auto where = path.string() + ":" + std::to_string(line);
    for (const char* field : {"id", "system", "summary"}) {
      if (!row.contains(field) || !row[field].is_string()) {
        throw ParseError(where + ": missing string field \"" + field + "\"");
      }
    }
    GeneratedSummary summary{row["id"], row["system"], row["summary"], std::nullopt};
    if (summary.document_id.empty() || summary.system.empty()) {
      throw ValidationError(where + ": id and system must be non-empty");
    }
    if (!seen.emplace(summary.document_id, summary.system).second) {
      throw DuplicateError(where + ": duplicate summary for (" + summary.document_id + ", " + summary.system + ")");
    }
    summaries.push_back(std::move(summary));
  });
  return summaries;
}

std::vector<GeneratedSummary> target_summaries(const corpus::Corpus& corpus) {
  std::vector<GeneratedSummary> out;
  for (const auto& doc : corpus.documents()) {
    if (doc.lay_summary && !doc.lay_summary->empty()) {
      out.push_back({doc.id, std::string(to_string(System::kTarget)), *doc.lay_summary, std::nullopt});
    }
  }
  return out;
}

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

std::filesystem::path manifest_path_for(const std::filesystem::path& output) {
  auto path = output;
  path.replace_extension(".manifest.json");
  return path;
}

BatchResult run_batch(const corpus::Corpus& corpus, llm::Gateway* gateway, const BatchConfig& config) {
  if (config.output.empty()) throw ConfigError("batch output path is empty");
  if (config.stage != Stage::kAugment && gateway == nullptr) {
    throw ConfigError(std::string(to_string(config.stage)) + " stage needs an LLM gateway");
  }
  if (config.stage != Stage::kAugment && config.backend_id.empty()) throw ConfigError("backend id is empty");
  config.budgets.validate();
  const auto& tokenizer = config.tokenizer ? *config.tokenizer : default_tokenizer();
  const auto& registry = config.registry ? *config.registry : prompts::PromptRegistry::builtin();

  std::map<std::string, std::string> explanations;
  if (config.stage == Stage::kAugment) explanations = load_explanations(config.explanations);

  const auto& docs = corpus.documents();

  // Earlier records are kept verbatim; a torn final line is discarded.
  std::map<std::string, std::string> existing;
  for (const auto& row : jsonl::read_log(config.output, true)) {
    if (row.contains("id") && row["id"].is_string() && corpus.find(row["id"]) != nullptr) {
      existing.emplace(row["id"].get<std::string>(), row.dump());
    }
  }

  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    if (!existing.contains(docs[i].id)) todo.push_back(i);
  }
  std::size_t pending = 0;
  if (config.limit && todo.size() > *config.limit) {
    pending = todo.size() - *config.limit;
    todo.resize(*config.limit);
  }
  const std::set<std::size_t> scheduled(todo.begin(), todo.end());

  std::vector<std::optional<std::string>> lines(docs.size());
  std::vector<std::optional<std::string>> errors(docs.size());

  auto process = [&](const corpus::Document& doc) -> std::string {
    switch (config.stage) {
      case Stage::kExplain: {
        auto text = explain(doc.abstract, *gateway, config.backend_id, registry, config.generation);
        ordered_json row;
        row["id"] = doc.id;
        row["backend_id"] = config.backend_id;
        row["explanation"] = text;
        return row.dump();
      }
      case Stage::kAugment: {
        auto it = explanations.find(doc.id);
        std::optional<std::string> explanation;
        if (it != explanations.end()) explanation = it->second;
        return augment(doc, explanation, config.budgets, tokenizer, config.backend_id).to_json().dump();
      }
      case Stage::kZeroShot: {
        return zero_shot_summarise(doc.id, doc.article, *gateway, config.backend_id, config.system, config.budgets,
                                   tokenizer, registry, config.generation)
            .to_json()
            .dump();
      }
    }
    throw Error("unreachable stage");
  };

  {
    OrderedAppender appender(config.output, docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i) {
      if (!scheduled.contains(i)) appender.skip(i);
    }
    const std::size_t workers = config.parallelism ? config.parallelism : (gateway ? gateway->max_in_flight() : 1);
    parallel_for(todo.size(), workers, [&](std::size_t k) {
      const auto i = todo[k];
      try {
        lines[i] = process(docs[i]);
        appender.put(i, *lines[i]);
      } catch (const llm::AuthError&) {
        throw;  // fatal for the whole batch, not a per-document failure
      } catch (const ConfigError&) {
        throw;
      } catch (const Error& e) {
        errors[i] = e.what();
        appender.skip(i);
      }
    });
  }

  BatchResult result;
  result.output = config.output;
  result.manifest = manifest_path_for(config.output);
  result.processed = todo.size();
  result.pending = pending;

  std::string content;
  ordered_json statuses = ordered_json::array();
  std::size_t ok = 0;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    const auto& id = docs[i].id;
    ordered_json status;
    status["id"] = id;
    if (auto it = existing.find(id); it != existing.end()) {
      content += it->second + '\n';
      status["status"] = "ok";
      ++result.resumed;
      ++ok;
    } else if (lines[i]) {
      content += *lines[i] + '\n';
      status["status"] = "ok";
      ++ok;
    } else if (errors[i]) {
      status["status"] = "failed";
      status["error"] = *errors[i];
      result.failures.push_back({id, *errors[i]});
    } else {
      status["status"] = "pending";
    }
    statuses.push_back(std::move(status));
  }
  result.written = ok;
  jsonl::write_file_atomic(config.output, content);

  ordered_json manifest;
  manifest["stage"] = to_string(config.stage);
  manifest["tool_version"] = LAYBENCH_VERSION;
  manifest["backend"] = gateway ? ordered_json(gateway->backend().name()) : ordered_json(nullptr);
  manifest["backend_id"] = config.backend_id;
  if (config.stage == Stage::kZeroShot) manifest["system"] = to_string(config.system);
  manifest["prompt_version"] = registry.version();
  manifest["budgets"] = config.budgets.to_json();
  manifest["tokenizer"] = tokenizer.name();
  manifest["seed"] = config.generation.seed ? ordered_json(*config.generation.seed) : ordered_json(nullptr);
  manifest["temperature"] = config.generation.temperature;
  manifest["max_output_tokens"] = config.generation.max_output_tokens;
  manifest["corpus"] = {{"name", corpus.name()}, {"documents", docs.size()}};
  manifest["output"] = config.output.filename().string();
  for (const auto& [key, value] : config.extra.items()) manifest[key] = value;
  manifest["counts"] = {{"ok", ok}, {"failed", result.failures.size()}, {"pending", pending}};
  manifest["documents"] = std::move(statuses);
  jsonl::write_file_atomic(result.manifest, manifest.dump(2) + "\n");
  return result;
}

}  // namespace laybench::pipeline
