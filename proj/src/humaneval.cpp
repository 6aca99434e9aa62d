#include "laybench/humaneval.hpp"

#include <algorithm>
#include <set>
#include <chrono>
#include <cstdio>
#include <ctime>

#include "laybench/hashing.hpp"

namespace laybench::humaneval {

using nlohmann::ordered_json;

namespace {

bool is_label(const std::string& s) {
  return std::any_of(kLabels.begin(), kLabels.end(), [&](const char* l) { return s == l; });
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buffer[32];
  std::strftime(buffer, sizeof buffer, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buffer;
}

std::string fixed4(double v) {
  char buffer[32];
  std::snprintf(buffer, sizeof buffer, "%.4f", v);
  return buffer;
}

// Reads one 1..4 aspect score, recording a problem on failure.
int read_score(const nlohmann::json& object, const std::string& label, const char* aspect,
               std::vector<std::string>& problems) {
  const std::string field = std::string("scores.") + label + "." + aspect;
  if (!object.contains(aspect)) {
    problems.push_back(field + ": missing");
    return 0;
  }
  const auto& v = object[aspect];
  if (!v.is_number_integer()) {
    problems.push_back(field + ": expected an integer 1-4");
    return 0;
  }
  return v.get<int>();
}

}  // namespace

int rank_to_marks(int rank_position) {
  if (rank_position < 1 || rank_position > 4) {
    throw PreconditionError("rank position must be 1-4, got " + std::to_string(rank_position));
  }
  return 5 - rank_position;
}

std::array<std::size_t, 4> permutation_for(std::uint64_t shuffle_seed) {
  std::array<std::size_t, 4> perm = {0, 1, 2, 3};
  SplitMix64 rng(shuffle_seed);
  for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
  return perm;
}

std::uint64_t shuffle_seed_for(std::uint64_t seed, const std::string& document_id) {
  return hash64(std::to_string(seed) + '\x1f' + document_id);
}

std::vector<Candidate> blind(const std::vector<std::string>& systems, const std::vector<std::string>& summaries,
                             std::uint64_t shuffle_seed) {
  if (systems.size() != 4 || summaries.size() != 4) throw PreconditionError("blinding needs exactly 4 summaries");
  const auto perm = permutation_for(shuffle_seed);
  std::vector<Candidate> candidates;
  for (std::size_t i = 0; i < 4; ++i) candidates.push_back({kLabels[i], systems[perm[i]], summaries[perm[i]]});
  return candidates;
}

std::vector<std::string> unblind(const EvalItem& item) {
  const auto perm = permutation_for(item.shuffle_seed);
  std::vector<std::string> summaries(4);
  for (std::size_t i = 0; i < 4; ++i) summaries[perm[i]] = item.candidates.at(i).summary;
  return summaries;
}

void EvalItem::validate() const {
  if (item_id.empty() || document_id.empty()) throw ValidationError("item needs an item_id and a document_id");
  if (systems.size() != 4) throw ValidationError("item " + item_id + " must have 4 systems");
  if (std::set<std::string>(systems.begin(), systems.end()).size() != 4) {
    throw ValidationError("item " + item_id + " has repeated systems");
  }
  if (candidates.size() != 4) throw ValidationError("item " + item_id + " must have 4 candidates");
  const auto perm = permutation_for(shuffle_seed);
  for (std::size_t i = 0; i < 4; ++i) {
    if (candidates[i].label != kLabels[i] || candidates[i].system != systems[perm[i]]) {
      throw ValidationError("item " + item_id + ": candidates do not match the blinding for its shuffle_seed");
    }
  }
}

const Candidate* EvalItem::candidate(const std::string& label) const {
  for (const auto& c : candidates) {
    if (c.label == label) return &c;
  }
  return nullptr;
}

std::string EvalItem::system_of(const std::string& label) const {
  const auto* c = candidate(label);
  if (c == nullptr) throw ValidationError("item " + item_id + " has no candidate " + label);
  return c->system;
}

ordered_json EvalItem::to_json() const {
  ordered_json object;
  object["item_id"] = item_id;
  object["document_id"] = document_id;
  object["abstract"] = abstract;
  object["systems"] = systems;
  object["shuffle_seed"] = shuffle_seed;
  object["candidates"] = ordered_json::array();
  for (const auto& c : candidates) {
    object["candidates"].push_back({{"label", c.label}, {"system", c.system}, {"summary", c.summary}});
  }
  return object;
}

ordered_json EvalItem::to_blinded_json() const {
  ordered_json object;
  object["item_id"] = item_id;
  object["abstract"] = abstract;
  object["candidates"] = ordered_json::array();
  for (const auto& c : candidates) object["candidates"].push_back({{"label", c.label}, {"summary", c.summary}});
  return object;
}

EvalItem EvalItem::from_json(const nlohmann::json& j) {
  EvalItem item;
  try {
    item.item_id = j.at("item_id").get<std::string>();
    item.document_id = j.at("document_id").get<std::string>();
    item.abstract = j.at("abstract").get<std::string>();
    item.systems = j.at("systems").get<std::vector<std::string>>();
    item.shuffle_seed = j.at("shuffle_seed").get<std::uint64_t>();
    for (const auto& c : j.at("candidates")) {
      item.candidates.push_back(
          {c.at("label").get<std::string>(), c.at("system").get<std::string>(), c.at("summary").get<std::string>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed item: ") + e.what());
  }
  item.validate();
  return item;
}

SummaryIndex index_summaries(const std::vector<pipeline::GeneratedSummary>& summaries) {
  SummaryIndex index;
  for (const auto& s : summaries) {
    if (!index[s.system].emplace(s.document_id, s.text).second) {
      throw DuplicateError("duplicate summary for (" + s.document_id + ", " + s.system + ")");
    }
  }
  return index;
}

std::vector<EvalItem> sample_items(const corpus::Corpus& corpus, const SummaryIndex& summaries,
                                   const std::vector<std::string>& systems, std::size_t n, std::uint64_t seed) {
  if (systems.size() != 4 || std::set<std::string>(systems.begin(), systems.end()).size() != 4) {
    throw PreconditionError("human evaluation needs exactly 4 distinct systems");
  }
  std::vector<std::size_t> eligible;
  const auto& docs = corpus.documents();
  for (std::size_t i = 0; i < docs.size(); ++i) {
    bool complete = true;
    for (const auto& system : systems) {
      auto by_system = summaries.find(system);
      if (by_system == summaries.end()) {
        complete = false;
        break;
      }
      auto it = by_system->second.find(docs[i].id);
      if (it == by_system->second.end() || it->second.empty()) {
        complete = false;
        break;
      }
    }
    if (complete) eligible.push_back(i);
  }
  if (eligible.size() < n) {
    throw PreconditionError("only " + std::to_string(eligible.size()) + " documents have summaries from all 4 systems; " +
                            std::to_string(n) + " requested");
  }
  SplitMix64 rng(seed);
  for (std::size_t i = 0; i < n; ++i) std::swap(eligible[i], eligible[i + rng.below(eligible.size() - i)]);
  eligible.resize(n);
  std::sort(eligible.begin(), eligible.end());

  std::vector<EvalItem> items;
  for (auto index : eligible) {
    const auto& doc = docs[index];
    EvalItem item;
    item.item_id = corpus.name().empty() ? doc.id : corpus.name() + ":" + doc.id;
    item.document_id = doc.id;
    item.abstract = doc.abstract;
    item.systems = systems;
    item.shuffle_seed = shuffle_seed_for(seed, doc.id);
    std::vector<std::string> texts;
    for (const auto& system : systems) texts.push_back(summaries.at(system).at(doc.id));
    item.candidates = blind(systems, texts, item.shuffle_seed);
    items.push_back(std::move(item));
  }
  return items;
}

std::vector<EvalItem> load_items(const std::filesystem::path& path) {
  std::vector<EvalItem> items;
  std::set<std::string> ids;
  jsonl::for_each_object(path, [&](std::size_t line, const nlohmann::json& row) {
    try {
      items.push_back(EvalItem::from_json(row));
    } catch (const Error& e) {
      throw ParseError(path.string() + ":" + std::to_string(line) + ": " + e.what());
    }
    if (!ids.insert(items.back().item_id).second) {
      throw DuplicateError(path.string() + ":" + std::to_string(line) + ": duplicate item_id " + items.back().item_id);
    }
  });
  return items;
}

std::string items_to_jsonl(const std::vector<EvalItem>& items) {
  std::string out;
  for (const auto& item : items) out += item.to_json().dump() + '\n';
  return out;
}

// ---------------------------------------------------------------------------

InvalidAnnotation::InvalidAnnotation(std::vector<std::string> problems)
    : ValidationError("invalid annotation: " + join(problems, "; ")), problems_(std::move(problems)) {}

std::vector<std::string> Annotation::problems() const {
  std::vector<std::string> out;
  if (assessor_id.empty()) out.emplace_back("assessor_id: missing");
  if (item_id.empty()) out.emplace_back("item_id: missing");
  for (const auto* label : kLabels) {
    auto it = scores.find(label);
    if (it == scores.end()) {
      out.push_back(std::string("scores.") + label + ": missing");
      continue;
    }
    const std::pair<const char*, int> aspects[] = {
        {"layness", it->second.layness}, {"fluency", it->second.fluency}, {"relevance", it->second.relevance}};
    for (const auto& [aspect, value] : aspects) {
      if (value < 1 || value > 4) out.push_back(std::string("scores.") + label + "." + aspect + ": must be 1-4");
    }
  }
  for (const auto& [label, s] : scores) {
    if (!is_label(label)) out.push_back("scores." + label + ": unknown label");
  }
  std::set<std::string> ranked(ranking.begin(), ranking.end());
  const bool permutation = ranking.size() == 4 && ranked.size() == 4 &&
                           std::all_of(ranking.begin(), ranking.end(), is_label);
  if (!permutation) out.emplace_back("ranking: must order A, B, C and D exactly once each");
  return out;
}

void Annotation::validate() const {
  auto found = problems();
  if (!found.empty()) throw InvalidAnnotation(std::move(found));
}

ordered_json Annotation::to_json() const {
  ordered_json object;
  object["assessor_id"] = assessor_id;
  object["item_id"] = item_id;
  object["scores"] = ordered_json::object();
  for (const auto* label : kLabels) {
    auto it = scores.find(label);
    if (it == scores.end()) continue;
    object["scores"][label] = {
        {"layness", it->second.layness}, {"fluency", it->second.fluency}, {"relevance", it->second.relevance}};
  }
  object["ranking"] = ranking;
  object["timestamp"] = timestamp;
  if (!profile.empty()) object["profile"] = profile;
  return object;
}

Annotation Annotation::from_json(const nlohmann::json& j) {
  std::vector<std::string> problems;
  Annotation a;
  if (!j.is_object()) throw InvalidAnnotation({"body: expected a JSON object"});
  auto read_string = [&](const char* field, std::string& out, bool required) {
    if (!j.contains(field)) {
      if (required) problems.push_back(std::string(field) + ": missing");
      return;
    }
    if (!j[field].is_string()) {
      problems.push_back(std::string(field) + ": expected a string");
      return;
    }
    out = j[field].get<std::string>();
  };
  read_string("assessor_id", a.assessor_id, true);
  read_string("item_id", a.item_id, true);
  read_string("timestamp", a.timestamp, false);
  read_string("profile", a.profile, false);

  if (!j.contains("scores") || !j["scores"].is_object()) {
    problems.emplace_back("scores: expected an object keyed by label");
  } else {
    for (const auto& [label, entry] : j["scores"].items()) {
      if (!entry.is_object()) {
        problems.push_back("scores." + label + ": expected an object");
        continue;
      }
      AspectScores s;
      s.layness = read_score(entry, label, "layness", problems);
      s.fluency = read_score(entry, label, "fluency", problems);
      s.relevance = read_score(entry, label, "relevance", problems);
      a.scores[label] = s;
    }
  }
  if (!j.contains("ranking") || !j["ranking"].is_array()) {
    problems.emplace_back("ranking: expected an array of labels");
  } else {
    for (const auto& label : j["ranking"]) {
      if (!label.is_string()) {
        problems.emplace_back("ranking: labels must be strings");
        break;
      }
      a.ranking.push_back(label.get<std::string>());
    }
  }
  // Semantic checks on a field whose JSON shape is already wrong add nothing.
  const auto field_of = [](const std::string& p) { return p.substr(0, p.find(':')); };
  std::set<std::string> mistyped;
  for (const auto& p : problems) mistyped.insert(field_of(p));
  const auto under_mistyped = [&](const std::string& field) {
    return std::any_of(mistyped.begin(), mistyped.end(), [&](const std::string& m) {
      return field == m || field.rfind(m + ".", 0) == 0;
    });
  };
  for (auto& p : a.problems()) {
    if (under_mistyped(field_of(p))) continue;
    if (std::find(problems.begin(), problems.end(), p) == problems.end()) problems.push_back(std::move(p));
  }
  // A score that failed to parse also fails the 1-4 range check; keep only
  // the parse message for it.
  std::vector<std::string> filtered;
  for (const auto& p : problems) {
    const auto colon = p.find(": must be 1-4");
    if (colon != std::string::npos) {
      const auto field = p.substr(0, colon);
      const bool typed = std::any_of(problems.begin(), problems.end(), [&](const std::string& q) {
        return q != p && q.rfind(field + ":", 0) == 0;
      });
      if (typed) continue;
    }
    filtered.push_back(p);
  }
  if (!filtered.empty()) throw InvalidAnnotation(std::move(filtered));
  return a;
}

// ---------------------------------------------------------------------------

AnnotationStore::AnnotationStore(std::filesystem::path path) : path_(std::move(path)) {
  auto records = std::make_shared<std::vector<Annotation>>();
  std::size_t index = 0;
  for (const auto& row : jsonl::read_log(path_, true)) {
    ++index;
    Annotation a;
    try {
      a = Annotation::from_json(nlohmann::json::parse(row.dump()));
    } catch (const ValidationError& e) {
      throw ParseError(path_.string() + ": record " + std::to_string(index) + ": " + e.what());
    }
    if (!keys_.emplace(a.assessor_id, a.item_id).second) {
      throw DuplicateError(path_.string() + ": record " + std::to_string(index) + ": duplicate annotation for (" +
                       a.assessor_id + ", " + a.item_id + ")");
    }
    records->push_back(std::move(a));
  }
  records_ = std::move(records);
  appender_ = std::make_unique<jsonl::DurableAppender>(path_);
}

void AnnotationStore::record(const Annotation& annotation) {
  annotation.validate();
  std::lock_guard lock(write_mutex_);
  if (keys_.contains({annotation.assessor_id, annotation.item_id})) {
    throw DuplicateError("annotation for (" + annotation.assessor_id + ", " + annotation.item_id +
                         ") already recorded");
  }
  Annotation stored = annotation;
  if (stored.timestamp.empty()) stored.timestamp = utc_now();
  appender_->append(stored.to_json().dump());
  keys_.emplace(stored.assessor_id, stored.item_id);
  auto next = std::make_shared<std::vector<Annotation>>(*std::atomic_load(&records_));
  next->push_back(std::move(stored));
  std::atomic_store(&records_, std::shared_ptr<const std::vector<Annotation>>(std::move(next)));
}

std::shared_ptr<const std::vector<Annotation>> AnnotationStore::snapshot() const { return std::atomic_load(&records_); }

bool AnnotationStore::contains(const std::string& assessor_id, const std::string& item_id) const {
  const auto records = snapshot();
  return std::any_of(records->begin(), records->end(),
                     [&](const Annotation& a) { return a.assessor_id == assessor_id && a.item_id == item_id; });
}

void record_annotation(const Annotation& annotation, const std::map<std::string, EvalItem>& items,
                       AnnotationStore& store) {
  annotation.validate();
  auto it = items.find(annotation.item_id);
  if (it == items.end()) throw InvalidAnnotation({"item_id: unknown item \"" + annotation.item_id + "\""});
  for (const auto& [label, s] : annotation.scores) {
    if (it->second.candidate(label) == nullptr) throw InvalidAnnotation({"scores." + label + ": not in this item"});
  }
  store.record(annotation);
}

// ---------------------------------------------------------------------------

AggregateReport aggregate(const std::vector<Annotation>& annotations, const std::map<std::string, EvalItem>& items) {
  if (annotations.empty()) throw PreconditionError("aggregation needs at least one annotation");
  struct Sums {
    long layness = 0, fluency = 0, relevance = 0, marks = 0;
    std::size_t n = 0;
  };
  std::vector<std::string> order;
  for (const auto& [id, item] : items) {
    for (const auto& system : item.systems) {
      if (std::find(order.begin(), order.end(), system) == order.end()) order.push_back(system);
    }
  }
  std::map<std::string, Sums> sums;
  for (const auto& a : annotations) {
    auto it = items.find(a.item_id);
    if (it == items.end()) throw ValidationError("annotation refers to unknown item \"" + a.item_id + "\"");
    a.validate();
    const auto& item = it->second;
    for (const auto& [label, s] : a.scores) {
      auto& sum = sums[item.system_of(label)];
      sum.layness += s.layness;
      sum.fluency += s.fluency;
      sum.relevance += s.relevance;
      ++sum.n;
    }
    for (std::size_t position = 0; position < a.ranking.size(); ++position) {
      sums[item.system_of(a.ranking[position])].marks += rank_to_marks(static_cast<int>(position) + 1);
    }
  }
  AggregateReport report;
  report.annotations = annotations.size();
  for (const auto& system : order) {
    auto it = sums.find(system);
    if (it == sums.end() || it->second.n == 0) continue;
    const double n = static_cast<double>(it->second.n);
    report.systems.push_back({system, it->second.n, static_cast<double>(it->second.layness) / n,
                              static_cast<double>(it->second.fluency) / n,
                              static_cast<double>(it->second.relevance) / n, static_cast<double>(it->second.marks) / n});
  }
  return report;
}

ordered_json AggregateReport::to_json() const {
  ordered_json out;
  out["annotations"] = annotations;
  out["systems"] = ordered_json::array();
  for (const auto& s : systems) {
    ordered_json row;
    row["system"] = s.system;
    row["layness"] = s.layness;
    row["fluency"] = s.fluency;
    row["relevance"] = s.relevance;
    row["ranking"] = s.ranking;
    row["n"] = s.ratings;
    out["systems"].push_back(std::move(row));
  }
  return out;
}

std::string AggregateReport::to_csv() const {
  std::string out = "system,layness,fluency,relevance,ranking,n\n";
  for (const auto& s : systems) {
    out += s.system + "," + fixed4(s.layness) + "," + fixed4(s.fluency) + "," + fixed4(s.relevance) + "," +
           fixed4(s.ranking) + "," + std::to_string(s.ratings) + "\n";
  }
  return out;
}

std::map<std::pair<std::string, std::string>, double> layness_by_summary(
    const std::vector<Annotation>& annotations, const std::map<std::string, EvalItem>& items) {
  std::map<std::pair<std::string, std::string>, std::pair<long, std::size_t>> sums;
  for (const auto& a : annotations) {
    auto it = items.find(a.item_id);
    if (it == items.end()) throw ValidationError("annotation refers to unknown item \"" + a.item_id + "\"");
    for (const auto& [label, s] : a.scores) {
      auto& [sum, n] = sums[{it->second.document_id, it->second.system_of(label)}];
      sum += s.layness;
      ++n;
    }
  }
  std::map<std::pair<std::string, std::string>, double> out;
  for (const auto& [key, value] : sums) out[key] = static_cast<double>(value.first) / static_cast<double>(value.second);
  return out;
}

ordered_json unblinded_json(const Annotation& annotation, const EvalItem& item) {
  auto object = annotation.to_json();
  object["document_id"] = item.document_id;
  object["candidates"] = ordered_json::array();
  for (const auto& c : item.candidates) {
    ordered_json row;
    row["label"] = c.label;
    row["system"] = c.system;
    if (auto it = annotation.scores.find(c.label); it != annotation.scores.end()) {
      row["layness"] = it->second.layness;
      row["fluency"] = it->second.fluency;
      row["relevance"] = it->second.relevance;
    }
    auto pos = std::find(annotation.ranking.begin(), annotation.ranking.end(), c.label);
    if (pos != annotation.ranking.end()) {
      const int rank = static_cast<int>(pos - annotation.ranking.begin()) + 1;
      row["rank"] = rank;
      row["marks"] = rank_to_marks(rank);
    }
    object["candidates"].push_back(std::move(row));
  }
  return object;
}

// ---------------------------------------------------------------------------

Assignment Assignment::parse(std::string_view mode, std::vector<std::string> assessors) {
  Assignment a;
  a.assessors = std::move(assessors);
  if (mode == "all") {
    a.mode = Mode::kAll;
  } else if (mode == "partition") {
    a.mode = Mode::kPartition;
    if (a.assessors.empty()) throw ConfigError("partition assignment needs the list of assessors");
  } else {
    throw ConfigError("unknown assignment mode \"" + std::string(mode) + "\" (expected all or partition)");
  }
  return a;
}

bool Assignment::assigned(const std::string& assessor_id, std::size_t item_index) const {
  if (mode == Mode::kAll) return true;
  auto it = std::find(assessors.begin(), assessors.end(), assessor_id);
  if (it == assessors.end()) return false;
  return item_index % assessors.size() == static_cast<std::size_t>(it - assessors.begin());
}

ordered_json Assignment::to_json() const {
  ordered_json out;
  out["mode"] = mode == Mode::kAll ? "all" : "partition";
  out["assessors"] = assessors;
  return out;
}

}  // namespace laybench::humaneval
