#include "laybench/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <map>

#include "laybench/jsonl.hpp"
#include "laybench/unicode.hpp"

namespace laybench::metrics {

using nlohmann::ordered_json;

namespace {

constexpr std::array kMetricIds = {MetricId::kCli,    MetricId::kR1,    MetricId::kR2,
                                   MetricId::kRL,     MetricId::kRougeGeoMean, MetricId::kCeonp,
                                   MetricId::kRaterGptClass, MetricId::kRaterVicunaClass, MetricId::kLlmScore};

constexpr std::array kFamilies = {Family::kCli,      Family::kRouge,       Family::kCeonp,
                                  Family::kRaterGpt, Family::kRaterVicuna, Family::kLlmScore};

const corpus::Tokenizer& default_tokenizer() {
  static const corpus::WordPunctTokenizer tokenizer;
  return tokenizer;
}

double f1_of(double precision, double recall) {
  return precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
}

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

MetricValue make_value(MetricId id, double value, ordered_json provenance = ordered_json::object(),
                       std::string variant = {}) {
  provenance["orientation"] = to_string(orientation_of(id));
  return {id, std::move(variant), value, std::move(provenance)};
}

std::string format_number(double v) {
  char buffer[64];
  std::snprintf(buffer, sizeof buffer, "%.4f", v);
  return buffer;
}

const std::string& require_backend(const std::string& backend, Family family) {
  if (backend.empty()) throw ConfigError("metric " + std::string(to_string(family)) + " needs a backend id");
  return backend;
}

}  // namespace

std::string_view to_string(MetricId id) {
  switch (id) {
    case MetricId::kCli: return "CLI";
    case MetricId::kR1: return "R1";
    case MetricId::kR2: return "R2";
    case MetricId::kRL: return "RL";
    case MetricId::kRougeGeoMean: return "RougeGeoMean";
    case MetricId::kCeonp: return "CEoNP";
    case MetricId::kRaterGptClass: return "RaterGPTclass";
    case MetricId::kRaterVicunaClass: return "RaterVicunaClass";
    case MetricId::kLlmScore: return "LLMScore";
  }
  return "CLI";
}

MetricId parse_metric_id(std::string_view s) {
  for (auto id : kMetricIds) {
    if (s == to_string(id)) return id;
  }
  throw ParseError("unknown metric \"" + std::string(s) + "\"");
}

std::string_view to_string(Orientation orientation) {
  return orientation == Orientation::kLowerIsMoreLay ? "lower_is_more_lay" : "higher_is_more_similar";
}

Orientation orientation_of(MetricId id) {
  switch (id) {
    case MetricId::kR1:
    case MetricId::kR2:
    case MetricId::kRL:
    case MetricId::kRougeGeoMean: return Orientation::kHigherIsMoreSimilar;
    default: return Orientation::kLowerIsMoreLay;
  }
}

// ---------------------------------------------------------------------------

TextCounts count_text(std::string_view text) {
  TextCounts counts;
  for (const auto& word : textseg::split_words(text)) {
    ++counts.words;
    counts.letters += textseg::count_letters(word.text);
  }
  counts.sentences = textseg::split_sentences(text).size();
  return counts;
}

double coleman_liau_index(double letters_per_100_words, double sentences_per_100_words) {
  return 0.0588 * letters_per_100_words - 0.296 * sentences_per_100_words - 15.8;
}

double coleman_liau(std::string_view text) {
  const auto counts = count_text(text);
  if (counts.words == 0) throw PreconditionError("Coleman-Liau index needs at least one word");
  const double words = static_cast<double>(counts.words);
  return coleman_liau_index(100.0 * static_cast<double>(counts.letters) / words,
                            100.0 * static_cast<double>(counts.sentences) / words);
}

// ---------------------------------------------------------------------------

std::vector<std::string> rouge_tokens(std::string_view text) {
  std::vector<std::string> tokens;
  for (const auto& word : textseg::split_words(text)) tokens.push_back(unicode::fold_case(word.text));
  return tokens;
}

Prf rouge_n(const std::vector<std::string>& candidate, const std::vector<std::string>& reference, std::size_t n) {
  if (reference.empty()) throw PreconditionError("ROUGE needs a non-empty reference");
  const auto cand = textseg::ngrams(candidate, n);
  const auto ref = textseg::ngrams(reference, n);
  std::size_t overlap = 0;
  for (const auto& [gram, count] : cand) {
    auto it = ref.find(gram);
    if (it != ref.end()) overlap += std::min(count, it->second);
  }
  Prf out;
  out.precision = ratio(overlap, textseg::ngram_total(cand));
  out.recall = ratio(overlap, textseg::ngram_total(ref));
  out.f1 = f1_of(out.precision, out.recall);
  return out;
}

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> row(b.size() + 1, 0);
  for (const auto& x : a) {
    std::size_t diagonal = 0;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t above = row[j];
      row[j] = x == b[j - 1] ? diagonal + 1 : std::max(row[j], row[j - 1]);
      diagonal = above;
    }
  }
  return row[b.size()];
}

Prf rouge_l(const std::vector<std::string>& candidate, const std::vector<std::string>& reference) {
  if (reference.empty()) throw PreconditionError("ROUGE needs a non-empty reference");
  const auto lcs = lcs_length(candidate, reference);
  Prf out;
  out.precision = ratio(lcs, candidate.size());
  out.recall = ratio(lcs, reference.size());
  out.f1 = f1_of(out.precision, out.recall);
  return out;
}

Prf rouge_n(std::string_view candidate, std::string_view reference, std::size_t n) {
  return rouge_n(rouge_tokens(candidate), rouge_tokens(reference), n);
}

Prf rouge_l(std::string_view candidate, std::string_view reference) {
  return rouge_l(rouge_tokens(candidate), rouge_tokens(reference));
}

double rouge_geometric_mean(double r1_f1, double r2_f1, double rl_f1) {
  if (r1_f1 <= 0 || r2_f1 <= 0 || rl_f1 <= 0) return 0.0;
  return std::cbrt(r1_f1 * r2_f1 * rl_f1);
}

// ---------------------------------------------------------------------------

CeonpResult ceonp(const std::string& text_id, std::string_view text, llm::Gateway& gateway,
                  const std::string& backend_id, const textseg::NounPhraseSource& np_source) {
  CeonpResult result;
  result.noun_phrases = np_source.noun_phrases(text_id, text);
  if (result.noun_phrases.empty()) throw NoNounPhrases();
  // Running mean: a constant series stays exactly constant.
  double mean = 0;
  for (const auto& span : result.noun_phrases) {
    llm::MaskScoreRequest request;
    request.backend_id = backend_id;
    request.text = std::string(text);
    request.spans = {span};
    const auto response = gateway.score_masked(request);
    result.per_phrase.push_back(response.span_ce.at(0));
    mean += (response.span_ce[0] - mean) / static_cast<double>(result.per_phrase.size());
  }
  result.value = mean;
  return result;
}

// ---------------------------------------------------------------------------

std::optional<int> parse_rater_mark(std::string_view reply) {
  std::size_t i = 0;
  while (i < reply.size()) {
    if (reply[i] < '0' || reply[i] > '9') {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < reply.size() && reply[j] >= '0' && reply[j] <= '9') ++j;
    const auto run = reply.substr(i, j - i);
    if (run.size() <= 2) {
      const int value = std::stoi(std::string(run));
      if (value >= 1 && value <= 10) return value;
    }
    i = j;
  }
  return std::nullopt;
}

double rater_transform(int mark) {
  if (mark < 1 || mark > 10) throw PreconditionError("rater mark out of range 1..10: " + std::to_string(mark));
  return 10.0 - mark;
}

RaterResult llm_rater(std::string_view summary, llm::Gateway& gateway, const std::string& backend_id,
                      const prompts::PromptRegistry& registry, const pipeline::GenerationOptions& options) {
  if (summary.empty()) throw PreconditionError("rater: summary is empty");
  const auto prompt = registry.render(prompts::TemplateId::kRater, {{"Summary", std::string(summary)}});
  llm::ChatRequest request;
  request.backend_id = backend_id;
  request.messages.push_back({"user", prompt});
  request.temperature = options.temperature;
  request.max_output_tokens = options.max_output_tokens;
  request.seed = options.seed;

  RaterResult result;
  std::string replies;
  for (int attempt = 1; attempt <= 2; ++attempt) {
    if (attempt == 2) request.seed = request.seed.value_or(0) + 1;
    const auto response = gateway.complete(request);
    result.attempts = attempt;
    result.reply = response.text;
    if (response.finish_reason != llm::FinishReason::kRefusal) {
      if (auto mark = parse_rater_mark(response.text)) {
        result.mark = *mark;
        result.value = rater_transform(*mark);
        return result;
      }
    }
    replies += (replies.empty() ? "\"" : ", \"") + response.text.substr(0, 80) + "\"";
  }
  throw RaterParseError("no mark in 1..10 after 2 attempts: " + replies);
}

// ---------------------------------------------------------------------------

std::string llm_score_prefix(std::string_view article, const corpus::TokenBudget& budgets,
                             const corpus::Tokenizer& tokenizer, const prompts::PromptRegistry& registry) {
  if (article.empty()) throw PreconditionError("LLM Score: article is empty");
  const auto truncated = corpus::truncate_tokens(article, budgets.article_budget_zeroshot, tokenizer);
  return registry.get(prompts::TemplateId::kScorePrefix).render_prefix({{"Article", truncated}}, "Summary");
}

LlmScoreResult llm_score_from_logprobs(const std::vector<llm::TokenLogprob>& logprobs) {
  if (logprobs.empty()) throw PreconditionError("LLM Score needs at least one scored token");
  double total = 0;
  for (const auto& t : logprobs) total += t.logprob;
  LlmScoreResult result;
  result.tokens = logprobs.size();
  result.sum = total == 0 ? 0.0 : -total;
  result.normalized = result.sum / static_cast<double>(result.tokens);
  return result;
}

LlmScoreResult llm_score(std::string_view article, std::string_view summary, llm::Gateway& gateway,
                         const std::string& backend_id, const corpus::TokenBudget& budgets,
                         const corpus::Tokenizer& tokenizer, const prompts::PromptRegistry& registry) {
  if (summary.empty()) throw PreconditionError("LLM Score: summary is empty");
  llm::ScoreRequest request;
  request.backend_id = backend_id;
  request.prefix = llm_score_prefix(article, budgets, tokenizer, registry);
  request.continuation = std::string(summary);
  return llm_score_from_logprobs(gateway.score_continuation(request).token_logprobs);
}

// ---------------------------------------------------------------------------

std::string MetricValue::key() const {
  std::string out(to_string(metric));
  if (variant == "normalized") out += ".normalized";
  return out;
}

ordered_json MetricRow::to_json() const {
  ordered_json object;
  object["id"] = id;
  object["system"] = system;
  object["metric"] = to_string(value.metric);
  object["value"] = value.value;
  auto provenance = value.provenance;
  if (!value.variant.empty()) provenance["variant"] = value.variant;
  object["provenance"] = std::move(provenance);
  return object;
}

ordered_json MetricFailure::to_json() const {
  ordered_json object;
  object["id"] = id;
  object["system"] = system;
  object["metric"] = metric;
  object["error"] = error;
  return object;
}

void MetricReport::add(const std::string& id, const std::string& system, MetricValue value) {
  const auto key = value.key();
  if (!std::isfinite(value.value)) throw ValidationError(key + " for (" + id + ", " + system + ") is not finite");
  switch (value.metric) {
    case MetricId::kR1:
    case MetricId::kR2:
    case MetricId::kRL:
    case MetricId::kRougeGeoMean:
      if (value.value < 0 || value.value > 1) throw ValidationError(key + " outside [0, 1]");
      break;
    case MetricId::kRaterGptClass:
    case MetricId::kRaterVicunaClass:
      if (value.value < 0 || value.value > 9) throw ValidationError(key + " outside [0, 9]");
      break;
    case MetricId::kCeonp:
    case MetricId::kLlmScore:
      if (value.value < 0) throw ValidationError(key + " is negative");
      break;
    case MetricId::kCli: break;
  }
  if (!keys_.emplace(id, system, key).second) {
    throw DuplicateError("duplicate metric " + key + " for (" + id + ", " + system + ")");
  }
  rows_.push_back({id, system, std::move(value)});
}

const MetricRow* MetricReport::find(const std::string& id, const std::string& system, const std::string& key) const {
  for (const auto& row : rows_) {
    if (row.id == id && row.system == system && row.value.key() == key) return &row;
  }
  return nullptr;
}

std::vector<SystemMean> MetricReport::system_means() const {
  std::vector<std::string> systems;
  std::vector<std::string> keys;
  std::map<std::pair<std::string, std::string>, std::pair<double, std::size_t>> sums;
  for (const auto& row : rows_) {
    const auto key = row.value.key();
    if (std::find(systems.begin(), systems.end(), row.system) == systems.end()) systems.push_back(row.system);
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) keys.push_back(key);
    auto& [sum, n] = sums[{row.system, key}];
    sum += row.value.value;
    ++n;
  }
  std::vector<SystemMean> means;
  for (const auto& system : systems) {
    for (const auto& key : keys) {
      auto it = sums.find({system, key});
      if (it == sums.end()) continue;
      means.push_back({system, key, it->second.first / static_cast<double>(it->second.second), it->second.second});
    }
  }
  return means;
}

std::string MetricReport::to_jsonl() const {
  std::string out;
  for (const auto& row : rows_) out += row.to_json().dump() + '\n';
  return out;
}

MetricReport MetricReport::from_jsonl(const std::filesystem::path& path) {
  MetricReport report;
  jsonl::for_each_object(path, [&](std::size_t line, const nlohmann::json& row) {
    const auto where = path.string() + ":" + std::to_string(line);
    try {
      MetricValue value;
      value.metric = parse_metric_id(row.at("metric").get<std::string>());
      value.value = row.at("value").get<double>();
      if (row.contains("provenance") && row["provenance"].is_object()) {
        value.provenance = ordered_json::parse(row["provenance"].dump());
        if (value.provenance.contains("variant")) {
          value.variant = value.provenance["variant"].get<std::string>();
          value.provenance.erase("variant");
        }
      }
      report.add(row.at("id").get<std::string>(), row.at("system").get<std::string>(), std::move(value));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + ": " + e.what());
    } catch (const Error& e) {
      throw ParseError(where + ": " + e.what());
    }
  });
  return report;
}

std::string system_means_csv(const std::vector<SystemMean>& means) {
  std::vector<std::string> systems;
  std::vector<std::string> keys;
  std::map<std::pair<std::string, std::string>, double> table;
  for (const auto& m : means) {
    if (std::find(systems.begin(), systems.end(), m.system) == systems.end()) systems.push_back(m.system);
    if (std::find(keys.begin(), keys.end(), m.key) == keys.end()) keys.push_back(m.key);
    table[{m.system, m.key}] = m.mean;
  }
  std::string out = "system";
  for (const auto& key : keys) out += "," + key;
  out += '\n';
  for (const auto& system : systems) {
    out += system;
    for (const auto& key : keys) {
      auto it = table.find({system, key});
      out += ",";
      if (it != table.end()) out += format_number(it->second);
    }
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string_view to_string(Family family) {
  switch (family) {
    case Family::kCli: return "cli";
    case Family::kRouge: return "rouge";
    case Family::kCeonp: return "ceonp";
    case Family::kRaterGpt: return "rater_gpt";
    case Family::kRaterVicuna: return "rater_vicuna";
    case Family::kLlmScore: return "llmscore";
  }
  return "cli";
}

std::vector<Family> parse_families(std::string_view comma_separated) {
  std::vector<Family> out;
  std::size_t start = 0;
  while (start <= comma_separated.size()) {
    auto end = comma_separated.find(',', start);
    if (end == std::string_view::npos) end = comma_separated.size();
    auto name = comma_separated.substr(start, end - start);
    while (!name.empty() && name.front() == ' ') name.remove_prefix(1);
    while (!name.empty() && name.back() == ' ') name.remove_suffix(1);
    if (!name.empty()) {
      bool found = false;
      for (auto family : kFamilies) {
        if (name == to_string(family)) {
          if (std::find(out.begin(), out.end(), family) == out.end()) out.push_back(family);
          found = true;
        }
      }
      if (!found) {
        throw ConfigError("unknown metric \"" + std::string(name) +
                          "\" (expected cli, rouge, ceonp, rater_gpt, rater_vicuna, llmscore)");
      }
    }
    start = end + 1;
  }
  if (out.empty()) throw ConfigError("no metrics selected");
  return out;
}

bool needs_gateway(Family family) { return family != Family::kCli && family != Family::kRouge; }

std::vector<MetricValue> score_family(Family family, const ScoringItem& item, const ScoringContext& context) {
  const auto& registry = context.registry ? *context.registry : prompts::PromptRegistry::builtin();
  const auto& tokenizer = context.tokenizer ? *context.tokenizer : default_tokenizer();
  if (needs_gateway(family) && context.gateway == nullptr) {
    throw ConfigError("metric " + std::string(to_string(family)) + " needs an LLM gateway");
  }
  switch (family) {
    case Family::kCli:
      return {make_value(MetricId::kCli, coleman_liau(item.text), {{"segmenter", "textseg"}})};
    case Family::kRouge: {
      if (!item.reference) throw PreconditionError("no reference lay summary for ROUGE");
      const auto cand = rouge_tokens(item.text);
      const auto ref = rouge_tokens(*item.reference);
      const auto r1 = rouge_n(cand, ref, 1).f1;
      const auto r2 = rouge_n(cand, ref, 2).f1;
      const auto rl = rouge_l(cand, ref).f1;
      const ordered_json provenance = {{"preprocessing", "casefold"}};
      return {make_value(MetricId::kR1, r1, provenance), make_value(MetricId::kR2, r2, provenance),
              make_value(MetricId::kRL, rl, provenance),
              make_value(MetricId::kRougeGeoMean, rouge_geometric_mean(r1, r2, rl), provenance)};
    }
    case Family::kCeonp: {
      static const textseg::NounPhraseSource chunker;
      const auto& backend = require_backend(context.mask_backend, family);
      const auto result = ceonp(item.np_key.empty() ? item.id : item.np_key, item.text, *context.gateway, backend,
                                context.np_source ? *context.np_source : chunker);
      return {make_value(MetricId::kCeonp, result.value,
                         {{"backend_id", backend}, {"noun_phrases", result.noun_phrases.size()}})};
    }
    case Family::kRaterGpt:
    case Family::kRaterVicuna: {
      const bool gpt = family == Family::kRaterGpt;
      const auto& backend = require_backend(gpt ? context.rater_gpt_backend : context.rater_vicuna_backend, family);
      const auto result = llm_rater(item.text, *context.gateway, backend, registry, context.generation);
      return {make_value(gpt ? MetricId::kRaterGptClass : MetricId::kRaterVicunaClass, result.value,
                         {{"backend_id", backend}, {"mark", result.mark}, {"attempts", result.attempts},
                          {"transform", "10-mark"}})};
    }
    case Family::kLlmScore: {
      if (!item.article) throw PreconditionError("no article for the LLM Score prefix");
      const auto& backend = require_backend(context.score_backend, family);
      const auto result =
          llm_score(*item.article, item.text, *context.gateway, backend, context.budgets, tokenizer, registry);
      const ordered_json provenance = {
          {"backend_id", backend}, {"tokens", result.tokens}, {"tokenizer", tokenizer.name()}};
      return {make_value(MetricId::kLlmScore, result.sum, provenance, "sum"),
              make_value(MetricId::kLlmScore, result.normalized, provenance, "normalized")};
    }
  }
  return {};
}

MetricReport evaluate(const std::vector<ScoringItem>& items, const std::vector<Family>& families,
                      const ScoringContext& context) {
  for (auto family : families) {
    if (needs_gateway(family) && context.gateway == nullptr) {
      throw ConfigError("metric " + std::string(to_string(family)) + " needs an LLM gateway");
    }
  }
  struct Outcome {
    std::vector<MetricValue> values;
    std::optional<std::string> error;
  };
  std::vector<std::vector<Outcome>> outcomes(items.size(), std::vector<Outcome>(families.size()));
  const std::size_t workers = std::max<std::size_t>(1, context.parallelism);
  pipeline::parallel_for(items.size(), workers, [&](std::size_t i) {
    for (std::size_t f = 0; f < families.size(); ++f) {
      try {
        outcomes[i][f].values = score_family(families[f], items[i], context);
      } catch (const llm::AuthError&) {
        throw;
      } catch (const ConfigError&) {
        throw;
      } catch (const Error& e) {
        outcomes[i][f].error = e.what();
      }
    }
  });

  MetricReport report;
  for (std::size_t i = 0; i < items.size(); ++i) {
    for (std::size_t f = 0; f < families.size(); ++f) {
      auto& outcome = outcomes[i][f];
      if (outcome.error) {
        report.add_failure({items[i].id, items[i].system, std::string(to_string(families[f])), *outcome.error});
        continue;
      }
      for (auto& value : outcome.values) report.add(items[i].id, items[i].system, std::move(value));
    }
  }
  return report;
}

}  // namespace laybench::metrics
