#include "laybench/app.hpp"

#include <csignal>
#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "laybench/analysis.hpp"
#include "laybench/annotation_service.hpp"
#include "laybench/corpus.hpp"
#include "laybench/hashing.hpp"
#include "laybench/humaneval.hpp"
#include "laybench/jsonl.hpp"
#include "laybench/llmgate.hpp"
#include "laybench/metrics.hpp"
#include "laybench/pipeline.hpp"
#include "laybench/prompts.hpp"

namespace laybench::app {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

struct Options {
  // common
  std::string config;
  std::string out = ".";
  std::uint64_t seed = 0;
  std::string cache_dir;
  bool no_cache = false;
  std::size_t parallelism = 4;
  std::string backend = "mock";
  std::string api_base;
  bool mask_scoring = false;
  std::string tokenizer = "word-punct-v1";
  std::size_t budget_explanation = 320;
  std::size_t budget_article_sft = 700;
  std::size_t budget_article_zeroshot = 1024;
  std::size_t budget_context = 1024;
  std::string prompts_dir;
  double temperature = 0.0;
  int max_output_tokens = 1024;
  bool verbose = false;
  bool quiet = false;

  // inputs
  std::string corpus;
  std::string split;
  std::string dataset = "custom";
  std::string name;
  std::string in_file;
  std::vector<std::string> inputs;
  std::string ref;
  std::string explanations;
  std::string system = "ZS_GPT_class";
  std::size_t limit = 0;
  std::string metrics = "cli";
  bool include_target = false;
  std::string rater_gpt_backend;
  std::string rater_vicuna_backend;
  std::string score_backend;
  std::string mask_backend;
  std::string np_sidecar;
  std::string human;
  std::string scores;

  // humaneval
  std::vector<std::string> summaries;
  std::string systems = "Target,External,ZS_GPT_class,ZS_Vicuna_class";
  std::size_t n = 50;
  std::string items;
  std::string store;
  std::string annotations;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string assignment = "all";
  std::string assessors;
  std::string static_dir;
};

// Options whose values are file paths; the manifest records them relative to
// the output directory when they live inside it.
const std::set<std::string> kPathOptions = {"corpus", "in",   "inputs",     "ref",   "explanations", "np-sidecar",
                                            "human",  "scores", "summaries", "items", "store",        "annotations",
                                            "static", "prompts-dir", "cache-dir", "config"};
const std::set<std::string> kNotEchoed = {"help", "verbose", "quiet", "out", "config"};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto end = s.find(',', start);
    if (end == std::string::npos) end = s.size();
    auto item = s.substr(start, end - start);
    while (!item.empty() && item.front() == ' ') item.erase(item.begin());
    while (!item.empty() && item.back() == ' ') item.pop_back();
    if (!item.empty()) out.push_back(item);
    start = end + 1;
  }
  return out;
}

std::string env_name(const std::string& option) {
  std::string out = "LAYBENCH_";
  for (char c : option) out += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

// key = value lines; '#' starts a comment; keys are long option names with
// '-' or '_'.
std::map<std::string, std::string> read_config_file(const fs::path& path) {
  std::map<std::string, std::string> values;
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
  std::string content;
  try {
    content = jsonl::read_file(path);
  } catch (const IoError& e) {
    throw ConfigError(std::string("cannot read config file: ") + e.what());
  }
  std::size_t line_number = 0;
  std::size_t start = 0;
  while (start < content.size()) {
    ++line_number;
    auto end = content.find('\n', start);
    if (end == std::string::npos) end = content.size();
    std::string line = content.substr(start, end - start);
    start = end + 1;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(line_number) + ": expected key = value");
    }
    auto key = trim(line.substr(0, eq));
    for (auto& c : key) {
      if (c == '_') c = '-';
    }
    values[key] = trim(line.substr(eq + 1));
  }
  return values;
}

std::string sha256_of_file(const fs::path& path) { return sha256_hex(jsonl::read_file(path)); }

bool is_inside(const fs::path& path, const fs::path& dir) {
  const auto p = fs::weakly_canonical(fs::absolute(path));
  const auto d = fs::weakly_canonical(fs::absolute(dir));
  auto rel = p.lexically_relative(d);
  return !rel.empty() && *rel.begin() != "..";
}

std::string display_path(const std::string& value, const fs::path& out_dir) {
  if (value.empty()) return value;
  if (is_inside(value, out_dir)) {
    return fs::weakly_canonical(fs::absolute(value)).lexically_relative(fs::weakly_canonical(fs::absolute(out_dir))).string();
  }
  return value;
}

// ---------------------------------------------------------------------------
// Backend routing: ids starting with "mock" go to the deterministic mock,
// everything else to the OpenAI-compatible HTTP backend.

bool is_mock_id(const std::string& id) { return id.rfind("mock", 0) == 0; }

class RoutingBackend final : public llm::Backend {
 public:
  RoutingBackend(std::shared_ptr<llm::Backend> mock, std::shared_ptr<llm::Backend> http)
      : mock_(std::move(mock)), http_(std::move(http)) {}

  std::string name() const override {
    if (mock_ && http_) return mock_->name() + "+" + http_->name();
    return mock_ ? mock_->name() : http_->name();
  }
  llm::ChatResponse chat(const llm::ChatRequest& r) override { return route(r.backend_id).chat(r); }
  llm::ScoreResponse score_continuation(const llm::ScoreRequest& r) override {
    return route(r.backend_id).score_continuation(r);
  }
  llm::MaskScoreResponse score_masked(const llm::MaskScoreRequest& r) override {
    return route(r.backend_id).score_masked(r);
  }

 private:
  llm::Backend& route(const std::string& id) {
    auto& chosen = is_mock_id(id) ? mock_ : http_;
    if (!chosen) throw ConfigError("no backend configured for \"" + id + "\"");
    return *chosen;
  }

  std::shared_ptr<llm::Backend> mock_;
  std::shared_ptr<llm::Backend> http_;
};

struct Context {
  explicit Context(Options& options) : o(options) {}

  Options& o;
  CLI::App* command = nullptr;
  std::string command_name;
  fs::path out_dir;
  std::unique_ptr<llm::Gateway> gateway;
  std::optional<prompts::PromptRegistry> registry;
  corpus::WordPunctTokenizer tokenizer;
  ordered_json outputs = ordered_json::array();

  const prompts::PromptRegistry& prompts() const { return registry ? *registry : prompts::PromptRegistry::builtin(); }

  corpus::TokenBudget budgets() const {
    corpus::TokenBudget b;
    b.explanation_budget = o.budget_explanation;
    b.article_budget_sft = o.budget_article_sft;
    b.article_budget_zeroshot = o.budget_article_zeroshot;
    b.model_context = o.budget_context;
    try {
      b.validate();
    } catch (const PreconditionError& e) {
      throw ConfigError(e.what());
    }
    return b;
  }

  pipeline::GenerationOptions generation() const {
    pipeline::GenerationOptions g;
    g.temperature = o.temperature;
    g.max_output_tokens = o.max_output_tokens;
    g.seed = o.seed;
    return g;
  }

  void open_gateway(const std::vector<std::string>& backend_ids) {
    std::shared_ptr<llm::Backend> mock;
    std::shared_ptr<llm::Backend> http;
    for (const auto& id : backend_ids) {
      if (id.empty()) continue;
      if (is_mock_id(id)) {
        if (!mock) {
          llm::MockOptions mo;
          mo.default_seed = o.seed;
          mock = std::make_shared<llm::MockBackend>(mo);
        }
      } else if (!http) {
        llm::HttpBackendOptions ho;
        ho.base_url = o.api_base;
        if (ho.base_url.empty()) {
          throw ConfigError("backend \"" + id + "\" needs an API base URL: set " + llm::kApiBaseEnv +
                            " or pass --api-base");
        }
        const char* key = std::getenv(llm::kApiKeyEnv);
        if (key == nullptr || *key == '\0') {
          throw llm::AuthError(std::string(llm::kApiKeyEnv) + " is not set; export " + llm::kApiKeyEnv +
                               "=<key> to use backend \"" + id + "\"");
        }
        ho.api_key = key;
        ho.supports_mask = o.mask_scoring;
        http = std::make_shared<llm::HttpBackend>(ho);
      }
    }
    if (!mock && !http) throw ConfigError("no backend id given");
    llm::GatewayOptions go;
    go.max_in_flight = o.parallelism;
    go.cache_enabled = !o.no_cache;
    if (!o.no_cache) go.cache_dir = o.cache_dir.empty() ? out_dir / "cache" : fs::path(o.cache_dir);
    gateway = std::make_unique<llm::Gateway>(std::make_shared<RoutingBackend>(mock, http), go);
  }

  corpus::Corpus load_corpus(const std::string& path, const std::string& flag = "corpus") const {
    if (path.empty()) throw ConfigError("--" + flag + " is required");
    if (!fs::exists(path)) throw ConfigError(flag + " file not found: " + path);
    corpus::LoadOptions lo;
    lo.dataset_tag = corpus::parse_dataset_tag(o.dataset);
    auto c = corpus::load_jsonl(path, lo);
    if (!o.split.empty()) c = c.filter_split(corpus::parse_split(o.split));
    return c;
  }

  void write_output(const std::string& file_name, std::string_view content) {
    jsonl::write_file_atomic(out_dir / file_name, content);
    outputs.push_back(file_name);
  }

  void note_output(const fs::path& path) { outputs.push_back(display_path(path.string(), out_dir)); }

  ordered_json inputs_provenance() const {
    ordered_json inputs = ordered_json::object();
    for (const auto* opt : command->get_options()) {
      const auto& names = opt->get_lnames();
      if (names.empty() || !kPathOptions.contains(names[0]) || opt->count() == 0) continue;
      if (names[0] == "cache-dir" || names[0] == "store" || names[0] == "static") continue;
      for (const auto& value : opt->results()) {
        if (!fs::is_regular_file(value)) continue;
        inputs[display_path(value, out_dir)] = sha256_of_file(value);
      }
    }
    return inputs;
  }

  ordered_json config_echo() const {
    ordered_json config = ordered_json::object();
    for (const auto* opt : command->get_options()) {
      const auto& names = opt->get_lnames();
      if (names.empty() || kNotEchoed.contains(names[0])) continue;
      std::string value;
      if (opt->count() > 0) {
        const auto& results = opt->results();
        for (std::size_t i = 0; i < results.size(); ++i) {
          auto v = kPathOptions.contains(names[0]) ? display_path(results[i], out_dir) : results[i];
          value += (i ? "," : "") + v;
        }
      } else {
        value = opt->get_default_str();
        if (names[0] == "cache-dir" && value.empty() && !o.no_cache) value = "cache";
      }
      config[names[0]] = value;
    }
    return config;
  }

  void write_run_manifest(const std::string& status, const ordered_json& counts) {
    ordered_json manifest;
    manifest["tool"] = "laybench";
    manifest["version"] = LAYBENCH_VERSION;
    manifest["command"] = command_name;
    manifest["config"] = config_echo();
    manifest["inputs"] = inputs_provenance();
    manifest["prompt_version"] = prompts().version();
    manifest["outputs"] = outputs;
    manifest["status"] = status;
    manifest["counts"] = counts;
    auto file = "run_" + command_name + ".json";
    for (auto& c : file) {
      if (c == ' ') c = '_';
    }
    jsonl::write_file_atomic(out_dir / file, manifest.dump(2) + "\n");
  }

  int finish(bool partial, ordered_json counts, bool summary_to_stdout = true) {
    const std::string status = partial ? "partial" : "ok";
    write_run_manifest(status, counts);
    if (summary_to_stdout) {
      ordered_json summary;
      summary["command"] = command_name;
      summary["status"] = status;
      summary["out"] = out_dir.string();
      summary["outputs"] = outputs;
      summary["counts"] = std::move(counts);
      if (gateway) {
        const auto stats = gateway->stats();
        summary["gateway"] = {
            {"backend_calls", stats.backend_calls}, {"cache_hits", stats.cache_hits}, {"retries", stats.retries}};
      }
      std::cout << summary.dump() << std::endl;
    }
    return partial ? kExitPartial : kExitOk;
  }
};

ordered_json batch_counts(const pipeline::BatchResult& r) {
  return {{"written", r.written},
          {"processed", r.processed},
          {"resumed", r.resumed},
          {"failed", r.failures.size()},
          {"pending", r.pending}};
}

int finish_batch(Context& ctx, const pipeline::BatchResult& result) {
  for (const auto& f : result.failures) spdlog::warn("{}: {}", f.id, f.error);
  ctx.note_output(result.output);
  ctx.note_output(result.manifest);
  return ctx.finish(!result.ok(), batch_counts(result));
}

pipeline::BatchConfig batch_config(Context& ctx, const corpus::Corpus& corpus) {
  pipeline::BatchConfig config;
  config.backend_id = ctx.o.backend;
  config.budgets = ctx.budgets();
  config.tokenizer = &ctx.tokenizer;
  config.registry = &ctx.prompts();
  config.generation = ctx.generation();
  config.parallelism = ctx.o.parallelism;
  if (ctx.o.limit > 0) config.limit = ctx.o.limit;
  config.extra["split"] = ctx.o.split.empty() ? ordered_json(nullptr) : ordered_json(ctx.o.split);
  config.extra["corpus_sha256"] = sha256_hex(corpus::to_jsonl(corpus));
  return config;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_ingest(Context& ctx) {
  if (ctx.o.in_file.empty()) throw ConfigError("--in is required");
  corpus::LoadOptions lo;
  lo.dataset_tag = corpus::parse_dataset_tag(ctx.o.dataset);
  lo.name = ctx.o.name;
  auto c = corpus::load_jsonl(ctx.o.in_file, lo);
  if (!ctx.o.split.empty()) c = c.filter_split(corpus::parse_split(ctx.o.split));
  ctx.write_output("corpus.jsonl", corpus::to_jsonl(c));
  auto stats = corpus::corpus_stats(c).to_json();
  stats["name"] = c.name();
  stats["dataset"] = ctx.o.dataset;
  stats["segmenter"] = "textseg";
  ctx.write_output("corpus_stats.json", stats.dump(2) + "\n");
  return ctx.finish(false, stats);
}

int cmd_explain(Context& ctx) {
  auto c = ctx.load_corpus(ctx.o.corpus);
  ctx.open_gateway({ctx.o.backend});
  auto config = batch_config(ctx, c);
  config.stage = pipeline::Stage::kExplain;
  config.output = ctx.out_dir / "explanations.jsonl";
  return finish_batch(ctx, pipeline::run_batch(c, ctx.gateway.get(), config));
}

int cmd_augment(Context& ctx) {
  auto c = ctx.load_corpus(ctx.o.corpus);
  auto config = batch_config(ctx, c);
  config.stage = pipeline::Stage::kAugment;
  config.output = ctx.out_dir / "augmented.jsonl";
  config.explanations = ctx.o.explanations.empty() ? ctx.out_dir / "explanations.jsonl" : fs::path(ctx.o.explanations);
  config.extra["explanations_sha256"] =
      fs::exists(config.explanations) ? ordered_json(sha256_of_file(config.explanations)) : ordered_json(nullptr);
  return finish_batch(ctx, pipeline::run_batch(c, nullptr, config));
}

int cmd_summarise(Context& ctx) {
  auto c = ctx.load_corpus(ctx.o.corpus);
  ctx.open_gateway({ctx.o.backend});
  auto config = batch_config(ctx, c);
  config.stage = pipeline::Stage::kZeroShot;
  config.system = pipeline::parse_system(ctx.o.system);
  config.output = ctx.out_dir / ("summaries_" + ctx.o.system + ".jsonl");
  return finish_batch(ctx, pipeline::run_batch(c, ctx.gateway.get(), config));
}

metrics::ScoringContext scoring_context(Context& ctx, const std::vector<metrics::Family>& families,
                                        const textseg::NounPhraseSource* np_source) {
  metrics::ScoringContext sc;
  sc.rater_gpt_backend = ctx.o.rater_gpt_backend.empty() ? ctx.o.backend : ctx.o.rater_gpt_backend;
  sc.rater_vicuna_backend = ctx.o.rater_vicuna_backend.empty() ? ctx.o.backend : ctx.o.rater_vicuna_backend;
  sc.score_backend = ctx.o.score_backend.empty() ? ctx.o.backend : ctx.o.score_backend;
  sc.mask_backend = ctx.o.mask_backend.empty() ? ctx.o.backend : ctx.o.mask_backend;
  std::vector<std::string> ids;
  for (auto f : families) {
    switch (f) {
      case metrics::Family::kCeonp: ids.push_back(sc.mask_backend); break;
      case metrics::Family::kRaterGpt: ids.push_back(sc.rater_gpt_backend); break;
      case metrics::Family::kRaterVicuna: ids.push_back(sc.rater_vicuna_backend); break;
      case metrics::Family::kLlmScore: ids.push_back(sc.score_backend); break;
      default: break;
    }
  }
  if (!ids.empty()) {
    ctx.open_gateway(ids);
    sc.gateway = ctx.gateway.get();
  }
  sc.registry = &ctx.prompts();
  sc.tokenizer = &ctx.tokenizer;
  sc.budgets = ctx.budgets();
  sc.np_source = np_source;
  sc.generation = ctx.generation();
  sc.parallelism = ctx.o.parallelism;
  return sc;
}

std::string failures_jsonl(const metrics::MetricReport& report) {
  std::string out;
  for (const auto& f : report.failures()) out += f.to_json().dump() + '\n';
  return out;
}

int cmd_evaluate(Context& ctx) {
  const auto families = metrics::parse_families(ctx.o.metrics);
  if (ctx.o.inputs.empty() && !ctx.o.include_target) throw ConfigError("--in is required (or --include-target)");
  std::optional<corpus::Corpus> refs;
  if (!ctx.o.ref.empty()) refs = ctx.load_corpus(ctx.o.ref, "ref");

  std::vector<pipeline::GeneratedSummary> summaries;
  for (const auto& path : ctx.o.inputs) {
    if (!fs::exists(path)) throw ConfigError("summary file not found: " + path);
    auto loaded = pipeline::load_summaries(path);
    summaries.insert(summaries.end(), loaded.begin(), loaded.end());
  }
  if (ctx.o.include_target) {
    if (!refs) throw ConfigError("--include-target needs --ref");
    auto targets = pipeline::target_summaries(*refs);
    summaries.insert(summaries.end(), targets.begin(), targets.end());
  }

  textseg::NounPhraseSource np_source;
  if (!ctx.o.np_sidecar.empty()) np_source = textseg::NounPhraseSource(textseg::NpSidecar::load(ctx.o.np_sidecar));

  std::vector<metrics::ScoringItem> items;
  for (const auto& s : summaries) {
    metrics::ScoringItem item;
    item.id = s.document_id;
    item.system = s.system;
    item.text = s.text;
    item.np_key = s.document_id + ":" + s.system;
    if (refs) {
      if (const auto* doc = refs->find(s.document_id)) {
        item.reference = doc->lay_summary;
        item.article = doc->article;
      }
    }
    items.push_back(std::move(item));
  }

  const auto sc = scoring_context(ctx, families, &np_source);
  const auto report = metrics::evaluate(items, families, sc);
  for (const auto& f : report.failures()) spdlog::warn("{} / {} / {}: {}", f.id, f.system, f.metric, f.error);

  ctx.write_output("metrics.jsonl", report.to_jsonl());
  ctx.write_output("metric_failures.jsonl", failures_jsonl(report));
  ctx.write_output("system_means.csv", metrics::system_means_csv(report.system_means()));
  return ctx.finish(!report.failures().empty(), {{"items", items.size()},
                                                 {"values", report.rows().size()},
                                                 {"failed", report.failures().size()}});
}

std::vector<std::string> metric_keys(const std::vector<metrics::Family>& families) {
  std::vector<std::string> keys;
  for (auto f : families) {
    switch (f) {
      case metrics::Family::kCli: keys.emplace_back("CLI"); break;
      case metrics::Family::kCeonp: keys.emplace_back("CEoNP"); break;
      case metrics::Family::kRaterGpt: keys.emplace_back("RaterGPTclass"); break;
      case metrics::Family::kRaterVicuna: keys.emplace_back("RaterVicunaClass"); break;
      case metrics::Family::kLlmScore:
        keys.emplace_back("LLMScore");
        keys.emplace_back("LLMScore.normalized");
        break;
      case metrics::Family::kRouge:
        throw ConfigError("rouge needs a reference summary and cannot be correlated with ground-truth labels");
    }
  }
  return keys;
}

int cmd_correlate_human(Context& ctx, const std::vector<metrics::Family>& families) {
  if (ctx.o.scores.empty()) throw ConfigError("--human needs --scores (a metrics.jsonl from evaluate)");
  const auto keys = metric_keys(families);
  const auto report = metrics::MetricReport::from_jsonl(ctx.o.scores);
  std::map<std::string, analysis::PairScores> metric_scores;
  for (const auto& row : report.rows()) metric_scores[row.value.key()][{row.id, row.system}] = row.value.value;

  analysis::PairScores human;
  jsonl::for_each_object(ctx.o.human, [&](std::size_t line, const nlohmann::json& row) {
    try {
      human[{row.at("id").get<std::string>(), row.at("system").get<std::string>()}] = row.at("layness").get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(ctx.o.human + ":" + std::to_string(line) + ": " + e.what());
    }
  });
  const auto rows = analysis::human_correlation_table(metric_scores, human, keys);
  const auto csv = analysis::to_csv(rows, analysis::TableLayout::kHuman);
  ctx.write_output("table3.csv", csv);
  ordered_json provenance = {{"pairs", human.size()}};
  ctx.write_output("table3.json", analysis::to_json(rows, analysis::TableLayout::kHuman, provenance).dump(2) + "\n");
  std::cout << csv << std::flush;
  return ctx.finish(false, {{"pairs", human.size()}, {"metrics", rows.size()}}, false);
}

int cmd_correlate(Context& ctx) {
  const auto families = metrics::parse_families(ctx.o.metrics);
  if (!ctx.o.human.empty()) return cmd_correlate_human(ctx, families);
  const auto keys = metric_keys(families);
  const auto c = ctx.load_corpus(ctx.o.corpus);
  const auto labeling = analysis::label_ground_truth(c);

  textseg::NounPhraseSource np_source;
  if (!ctx.o.np_sidecar.empty()) np_source = textseg::NounPhraseSource(textseg::NpSidecar::load(ctx.o.np_sidecar));

  std::vector<metrics::ScoringItem> items;
  for (const auto& sample : labeling.samples) {
    metrics::ScoringItem item;
    item.id = sample.document_id;
    item.system = std::string(analysis::to_string(sample.kind));
    item.text = sample.text;
    item.np_key = sample.key();
    item.article = c.find(sample.document_id)->article;
    items.push_back(std::move(item));
  }
  const auto sc = scoring_context(ctx, families, &np_source);
  const auto report = metrics::evaluate(items, families, sc);
  for (const auto& f : report.failures()) spdlog::warn("{} / {} / {}: {}", f.id, f.system, f.metric, f.error);

  analysis::ScoreTable table;
  for (const auto& row : report.rows()) table[row.value.key()][row.id + ":" + row.system] = row.value.value;

  // Documents with any failed score drop out of every row so that all rows
  // share one sample.
  std::set<std::string> failed_docs;
  for (const auto& f : report.failures()) failed_docs.insert(f.id);
  std::vector<analysis::LabeledSample> samples;
  for (const auto& s : labeling.samples) {
    if (!failed_docs.contains(s.document_id)) samples.push_back(s);
  }

  const auto rows = analysis::correlation_table(samples, table, keys);
  const auto csv = analysis::to_csv(rows, analysis::TableLayout::kGroundTruth);
  ordered_json provenance;
  provenance["corpus"] = c.name();
  provenance["split"] = ctx.o.split.empty() ? ordered_json("all") : ordered_json(ctx.o.split);
  provenance["documents"] = c.size();
  provenance["skipped_without_lay_summary"] = labeling.skipped;
  provenance["dropped_after_failures"] = failed_docs.size();
  provenance["segmenter"] = "textseg";
  provenance["tokenizer"] = ctx.tokenizer.name();

  ctx.write_output("correlate_scores.jsonl", report.to_jsonl());
  ctx.write_output("correlate_failures.jsonl", failures_jsonl(report));
  ctx.write_output("table1.csv", csv);
  ctx.write_output("table1.json",
                   analysis::to_json(rows, analysis::TableLayout::kGroundTruth, provenance).dump(2) + "\n");
  std::cout << csv << std::flush;
  return ctx.finish(!report.failures().empty(),
                    {{"samples", samples.size()}, {"skipped", labeling.skipped}, {"failed", report.failures().size()}},
                    false);
}

std::map<std::string, humaneval::EvalItem> items_by_id(const std::vector<humaneval::EvalItem>& items) {
  std::map<std::string, humaneval::EvalItem> out;
  for (const auto& item : items) out.emplace(item.item_id, item);
  return out;
}

int cmd_humaneval_export(Context& ctx) {
  const auto c = ctx.load_corpus(ctx.o.corpus);
  const auto systems = split_list(ctx.o.systems);
  std::vector<pipeline::GeneratedSummary> summaries;
  for (const auto& path : ctx.o.summaries) {
    if (!fs::exists(path)) throw ConfigError("summary file not found: " + path);
    auto loaded = pipeline::load_summaries(path);
    summaries.insert(summaries.end(), loaded.begin(), loaded.end());
  }
  auto index = humaneval::index_summaries(summaries);
  const std::string target(pipeline::to_string(pipeline::System::kTarget));
  if (std::find(systems.begin(), systems.end(), target) != systems.end() && !index.contains(target)) {
    for (const auto& s : pipeline::target_summaries(c)) index[target][s.document_id] = s.text;
  }
  std::vector<humaneval::EvalItem> items;
  try {
    items = humaneval::sample_items(c, index, systems, ctx.o.n, ctx.o.seed);
  } catch (const PreconditionError& e) {
    throw ConfigError(e.what());
  }
  ctx.write_output("items.jsonl", humaneval::items_to_jsonl(items));
  std::string blinded;
  for (const auto& item : items) blinded += item.to_blinded_json().dump() + '\n';
  ctx.write_output("items_blinded.jsonl", blinded);
  return ctx.finish(false, {{"items", items.size()}, {"summaries", items.size() * 4}});
}

volatile std::sig_atomic_t g_stop = 0;

int cmd_humaneval_serve(Context& ctx) {
  if (ctx.o.items.empty()) throw ConfigError("--items is required");
  if (ctx.o.store.empty()) throw ConfigError("--store is required");
  auto items = humaneval::load_items(ctx.o.items);
  auto assignment = humaneval::Assignment::parse(ctx.o.assignment, split_list(ctx.o.assessors));
  humaneval::AnnotationStore store(ctx.o.store);
  auto assignment_file = fs::path(ctx.o.store);
  assignment_file += ".assignment.json";
  jsonl::write_file_atomic(assignment_file, assignment.to_json().dump(2) + "\n");

  humaneval::AnnotationService service(std::move(items), store, assignment);
  humaneval::AnnotationServer server(service, ctx.o.static_dir);
  const int port = server.start(ctx.o.host, ctx.o.port);
  std::cout << ordered_json{{"command", ctx.command_name}, {"listening", ctx.o.host + ":" + std::to_string(port)}}.dump()
            << std::endl;
  spdlog::info("serving {} items on http://{}:{}", service.items().size(), ctx.o.host, port);
  std::signal(SIGINT, [](int) { g_stop = 1; });
  std::signal(SIGTERM, [](int) { g_stop = 1; });
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(200));
  server.stop();
  return kExitOk;
}

int cmd_humaneval_report(Context& ctx) {
  if (ctx.o.items.empty()) throw ConfigError("--items is required");
  if (ctx.o.annotations.empty()) throw ConfigError("--annotations is required");
  const auto items = humaneval::load_items(ctx.o.items);
  const auto by_id = items_by_id(items);
  humaneval::AnnotationStore store(ctx.o.annotations);
  const auto annotations = store.snapshot();
  const auto report = humaneval::aggregate(*annotations, by_id);

  auto json = report.to_json();
  auto assignment_file = fs::path(ctx.o.annotations);
  assignment_file += ".assignment.json";
  if (fs::exists(assignment_file)) json["assignment"] = ordered_json::parse(jsonl::read_file(assignment_file));
  ctx.write_output("aggregate.json", json.dump(2) + "\n");
  ctx.write_output("aggregate.csv", report.to_csv());

  std::string exported;
  for (const auto& a : *annotations) exported += humaneval::unblinded_json(a, by_id.at(a.item_id)).dump() + '\n';
  ctx.write_output("annotations_export.jsonl", exported);

  std::string layness;
  for (const auto& [key, value] : humaneval::layness_by_summary(*annotations, by_id)) {
    layness += ordered_json{{"id", key.first}, {"system", key.second}, {"layness", value}}.dump() + '\n';
  }
  ctx.write_output("human_layness.jsonl", layness);
  return ctx.finish(false, {{"annotations", annotations->size()}, {"systems", report.systems.size()}});
}

// ---------------------------------------------------------------------------

void add_common(CLI::App* sub, Options& o) {
  sub->add_option("--config", o.config, "key = value config file (flags > env > config)");
  sub->add_option("--out", o.out, "Output directory");
  sub->add_option("--seed", o.seed, "Seed for generation and sampling");
  sub->add_option("--cache-dir", o.cache_dir, "Response cache directory (default <out>/cache)");
  sub->add_flag("--no-cache", o.no_cache, "Disable the response cache");
  sub->add_option("--parallelism", o.parallelism, "Maximum concurrent backend calls")->check(CLI::PositiveNumber);
  sub->add_option("--backend", o.backend, "Backend id; ids starting with \"mock\" use the built-in mock");
  sub->add_option("--api-base", o.api_base, "Base URL of an OpenAI-compatible server");
  sub->add_flag("--mask-scoring", o.mask_scoring, "The HTTP backend serves /mask_score");
  sub->add_option("--tokenizer", o.tokenizer, "Tokenizer for budgets")->check(CLI::IsMember({"word-punct-v1"}));
  sub->add_option("--budget-explanation", o.budget_explanation)->check(CLI::PositiveNumber);
  sub->add_option("--budget-article-sft", o.budget_article_sft)->check(CLI::PositiveNumber);
  sub->add_option("--budget-article-zeroshot", o.budget_article_zeroshot)->check(CLI::PositiveNumber);
  sub->add_option("--budget-context", o.budget_context)->check(CLI::PositiveNumber);
  sub->add_option("--prompts-dir", o.prompts_dir, "Directory of prompt overrides (<template>.txt)");
  sub->add_option("--temperature", o.temperature)->check(CLI::NonNegativeNumber);
  sub->add_option("--max-output-tokens", o.max_output_tokens)->check(CLI::PositiveNumber);
  sub->add_option("--split", o.split, "Only documents of this split")->check(CLI::IsMember({"train", "val", "test"}));
  sub->add_option("--dataset", o.dataset, "Dataset tag")->check(CLI::IsMember({"plos", "elife", "custom"}));
  sub->add_flag("-v,--verbose", o.verbose);
  sub->add_flag("-q,--quiet", o.quiet);
}

void resolve_precedence(CLI::App* sub, const std::map<std::string, std::string>& file_values) {
  for (auto* opt : sub->get_options()) {
    const auto& names = opt->get_lnames();
    if (names.empty() || names[0] == "help" || names[0] == "config" || opt->count() > 0) continue;
    std::optional<std::string> value;
    if (const char* env = std::getenv(env_name(names[0]).c_str()); env != nullptr && *env != '\0') {
      value = env;
    } else if (auto it = file_values.find(names[0]); it != file_values.end()) {
      value = it->second;
    }
    if (!value) continue;
    try {
      opt->add_result(*value);
      opt->run_callback();
    } catch (const CLI::Error& e) {
      throw ConfigError("invalid value for " + names[0] + ": " + e.what());
    }
  }
}

void setup_logging(const Options& o) {
  auto logger = spdlog::get("laybench");
  if (!logger) logger = spdlog::stderr_color_mt("laybench");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(o.quiet ? spdlog::level::warn : (o.verbose ? spdlog::level::debug : spdlog::level::info));
}

}  // namespace

int run(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return run(args);
}

int run(const std::vector<std::string>& args) {
  Options o;
  CLI::App app{"laybench: lay-summarisation pipeline and layness evaluation", "laybench"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.set_version_flag("--version", LAYBENCH_VERSION);

  auto* ingest = app.add_subcommand("ingest", "Normalise a dataset JSONL and report corpus statistics");
  add_common(ingest, o);
  ingest->add_option("--in", o.in_file, "Dataset JSONL");
  ingest->add_option("--name", o.name, "Corpus name (default: file stem)");

  auto* explain = app.add_subcommand("explain", "Generate background explanations of each abstract");
  add_common(explain, o);
  explain->add_option("--corpus", o.corpus, "Corpus JSONL");
  explain->add_option("--limit", o.limit, "Stop after this many new documents (0: no limit)");

  auto* augment = app.add_subcommand("augment", "Assemble explanation-augmented training inputs");
  add_common(augment, o);
  augment->add_option("--corpus", o.corpus, "Corpus JSONL");
  augment->add_option("--explanations", o.explanations, "explanations.jsonl (default <out>/explanations.jsonl)");
  augment->add_option("--limit", o.limit, "Stop after this many new documents (0: no limit)");

  auto* summarise = app.add_subcommand("summarise", "Zero-shot lay summaries");
  add_common(summarise, o);
  summarise->add_option("--corpus", o.corpus, "Corpus JSONL");
  summarise->add_option("--system", o.system, "System label")
      ->check(CLI::IsMember({"ZS_GPT_class", "ZS_Vicuna_class", "External"}));
  summarise->add_option("--limit", o.limit, "Stop after this many new documents (0: no limit)");

  auto add_metric_options = [&](CLI::App* sub) {
    sub->add_option("--metrics,--metric", o.metrics, "cli,rouge,ceonp,rater_gpt,rater_vicuna,llmscore");
    sub->add_option("--rater-gpt-backend", o.rater_gpt_backend);
    sub->add_option("--rater-vicuna-backend", o.rater_vicuna_backend);
    sub->add_option("--score-backend", o.score_backend);
    sub->add_option("--mask-backend", o.mask_backend);
    sub->add_option("--np-sidecar", o.np_sidecar, "Pre-extracted noun phrases JSONL");
  };

  auto* evaluate = app.add_subcommand("evaluate", "Score summaries with layness and similarity metrics");
  add_common(evaluate, o);
  add_metric_options(evaluate);
  evaluate->add_option("--in", o.inputs, "Summary JSONL file(s)")->delimiter(',');
  evaluate->add_option("--ref", o.ref, "Corpus JSONL with reference lay summaries and articles");
  evaluate->add_flag("--include-target", o.include_target, "Also score the corpus lay summaries as Target");

  auto* correlate = app.add_subcommand("correlate", "Correlate metrics with ground-truth or human layness");
  add_common(correlate, o);
  add_metric_options(correlate);
  correlate->add_option("--corpus", o.corpus, "Corpus JSONL (ground-truth mode)");
  correlate->add_option("--human", o.human, "human_layness.jsonl from humaneval report (human mode)");
  correlate->add_option("--scores", o.scores, "metrics.jsonl from evaluate (human mode)");

  auto* humaneval = app.add_subcommand("humaneval", "Human evaluation: export items, serve the API, report");
  humaneval->require_subcommand(1);
  auto* export_cmd = humaneval->add_subcommand("export", "Sample and blind evaluation items");
  add_common(export_cmd, o);
  export_cmd->add_option("--corpus", o.corpus, "Corpus JSONL");
  export_cmd->add_option("--summaries", o.summaries, "Summary JSONL file(s)")->delimiter(',');
  export_cmd->add_option("--systems", o.systems, "The 4 systems, comma separated");
  export_cmd->add_option("--n", o.n, "Items to sample")->check(CLI::PositiveNumber);
  auto* serve = humaneval->add_subcommand("serve", "Serve the annotation API");
  add_common(serve, o);
  serve->add_option("--items", o.items, "items.jsonl from export");
  serve->add_option("--store", o.store, "Annotation store (JSONL, append-only)");
  serve->add_option("--host", o.host);
  serve->add_option("--port", o.port);
  serve->add_option("--assignment", o.assignment)->check(CLI::IsMember({"all", "partition"}));
  serve->add_option("--assessors", o.assessors, "Assessor ids, comma separated (partition mode)");
  serve->add_option("--static", o.static_dir, "Directory with the annotation UI");
  auto* report = humaneval->add_subcommand("report", "Aggregate annotations per system");
  add_common(report, o);
  report->add_option("--items", o.items, "items.jsonl from export");
  report->add_option("--annotations", o.annotations, "Annotation store");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (!reversed.empty()) reversed.pop_back();
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  CLI::App* command = nullptr;
  std::string command_name;
  for (auto* sub : {ingest, explain, augment, summarise, evaluate, correlate, export_cmd, serve, report}) {
    if (sub->parsed()) {
      command = sub;
      command_name = sub->get_parent() == humaneval ? "humaneval " + sub->get_name() : sub->get_name();
    }
  }

  try {
    std::map<std::string, std::string> file_values;
    std::string config_path = o.config;
    if (config_path.empty()) {
      if (const char* env = std::getenv("LAYBENCH_CONFIG")) config_path = env;
    }
    if (!config_path.empty()) {
      file_values = read_config_file(config_path);
      std::set<std::string> known;
      for (auto* sub : {ingest, explain, augment, summarise, evaluate, correlate, export_cmd, serve, report}) {
        for (auto* opt : sub->get_options()) {
          if (!opt->get_lnames().empty()) known.insert(opt->get_lnames()[0]);
        }
      }
      for (const auto& [key, value] : file_values) {
        if (!known.contains(key)) throw ConfigError(config_path + ": unknown key \"" + key + "\"");
      }
    }
    resolve_precedence(command, file_values);
    setup_logging(o);

    Context ctx{o};
    ctx.command = command;
    ctx.command_name = command_name;
    ctx.out_dir = o.out;
    fs::create_directories(ctx.out_dir);
    if (!o.prompts_dir.empty()) ctx.registry = prompts::PromptRegistry::with_overrides(o.prompts_dir);

    if (command == ingest) return cmd_ingest(ctx);
    if (command == explain) return cmd_explain(ctx);
    if (command == augment) return cmd_augment(ctx);
    if (command == summarise) return cmd_summarise(ctx);
    if (command == evaluate) return cmd_evaluate(ctx);
    if (command == correlate) return cmd_correlate(ctx);
    if (command == export_cmd) return cmd_humaneval_export(ctx);
    if (command == serve) return cmd_humaneval_serve(ctx);
    if (command == report) return cmd_humaneval_report(ctx);
    throw ConfigError("no command");
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kExitConfig;
  }
}

}  // namespace laybench::app
