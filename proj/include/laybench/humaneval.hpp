#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "laybench/corpus.hpp"
#include "laybench/error.hpp"
#include "laybench/jsonl.hpp"
#include "laybench/pipeline.hpp"

// Human-evaluation protocol: item sampling, blinding, annotation storage and
// aggregation.
namespace laybench::humaneval {

inline constexpr std::array<const char*, 4> kLabels = {"A", "B", "C", "D"};
inline constexpr std::array<const char*, 3> kAspects = {"layness", "fluency", "relevance"};

// Rank position 1..4 to marks 4..1.
int rank_to_marks(int rank_position);

// Permutation of 0..3 for a shuffle seed: label i shows system perm[i].
std::array<std::size_t, 4> permutation_for(std::uint64_t shuffle_seed);

// Seed for one document's blinding, from the sampling seed and the id.
std::uint64_t shuffle_seed_for(std::uint64_t seed, const std::string& document_id);

struct Candidate {
  std::string label;
  std::string system;
  std::string summary;
};

struct EvalItem {
  std::string item_id;
  std::string document_id;
  std::string abstract;
  std::vector<std::string> systems;  // canonical order; the blinding permutes this
  std::vector<Candidate> candidates;  // in label order A..D
  std::uint64_t shuffle_seed = 0;

  // Throws ValidationError unless there are 4 distinct systems and the
  // candidates are the permutation given by shuffle_seed.
  void validate() const;

  const Candidate* candidate(const std::string& label) const;
  std::string system_of(const std::string& label) const;

  nlohmann::ordered_json to_json() const;          // full record, systems included
  nlohmann::ordered_json to_blinded_json() const;  // no system identities
  static EvalItem from_json(const nlohmann::json& j);
};

// Candidates for `systems` (canonical order) blinded with `shuffle_seed`.
std::vector<Candidate> blind(const std::vector<std::string>& systems, const std::vector<std::string>& summaries,
                             std::uint64_t shuffle_seed);

// Summaries in the canonical system order, recovered from blinded candidates.
std::vector<std::string> unblind(const EvalItem& item);

using SummaryIndex = std::map<std::string, std::map<std::string, std::string>>;  // system -> id -> text

SummaryIndex index_summaries(const std::vector<pipeline::GeneratedSummary>& summaries);

// Samples `n` documents (in corpus order of eligibility, drawn with a seeded
// Fisher-Yates) among those that have a non-empty summary for each of the 4
// systems. Throws PreconditionError when fewer than n are eligible.
std::vector<EvalItem> sample_items(const corpus::Corpus& corpus, const SummaryIndex& summaries,
                                   const std::vector<std::string>& systems, std::size_t n, std::uint64_t seed);

std::vector<EvalItem> load_items(const std::filesystem::path& path);
std::string items_to_jsonl(const std::vector<EvalItem>& items);

// Annotation rejected for field-level reasons; `problems` names each field.
class InvalidAnnotation : public ValidationError {
 public:
  explicit InvalidAnnotation(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

struct AspectScores {
  int layness = 0;
  int fluency = 0;
  int relevance = 0;
};

struct Annotation {
  std::string assessor_id;
  std::string item_id;
  std::map<std::string, AspectScores> scores;  // by blinded label
  std::vector<std::string> ranking;             // labels, best first
  std::string timestamp;
  std::string profile;  // free text, not enforced

  // Field-level problems; empty when the annotation is well formed.
  std::vector<std::string> problems() const;
  void validate() const;  // throws InvalidAnnotation

  nlohmann::ordered_json to_json() const;
  // Throws InvalidAnnotation naming the offending fields.
  static Annotation from_json(const nlohmann::json& j);
};

// Append-only JSONL store. Every record is validated on load; a torn final
// line is cut off. `record` returns only after the line is on disk. Writers
// are serialised; readers take an immutable snapshot.
class AnnotationStore {
 public:
  explicit AnnotationStore(std::filesystem::path path);

  // Throws DuplicateError for a repeated (assessor, item), ValidationError
  // for an invalid annotation.
  void record(const Annotation& annotation);

  std::shared_ptr<const std::vector<Annotation>> snapshot() const;
  bool contains(const std::string& assessor_id, const std::string& item_id) const;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::mutex write_mutex_;
  std::unique_ptr<jsonl::DurableAppender> appender_;
  std::shared_ptr<const std::vector<Annotation>> records_;
  std::set<std::pair<std::string, std::string>> keys_;  // guarded by write_mutex_
};

// Validates `annotation` against its item (labels must match the item's
// candidates) and records it. Throws ValidationError for an unknown item.
void record_annotation(const Annotation& annotation, const std::map<std::string, EvalItem>& items,
                       AnnotationStore& store);

struct SystemAggregate {
  std::string system;
  std::size_t ratings = 0;  // candidate ratings contributing
  double layness = 0;
  double fluency = 0;
  double relevance = 0;
  double ranking = 0;  // mean rank marks
};

struct AggregateReport {
  std::vector<SystemAggregate> systems;  // in first-seen canonical order
  std::size_t annotations = 0;

  nlohmann::ordered_json to_json() const;
  std::string to_csv() const;  // system,layness,fluency,relevance,ranking,n
};

// Un-blinds every annotation and averages per system. Throws ValidationError
// for an annotation whose item is unknown, PreconditionError when empty.
AggregateReport aggregate(const std::vector<Annotation>& annotations, const std::map<std::string, EvalItem>& items);

// Mean human layness per (document_id, system), for correlating metrics with
// human judgements.
std::map<std::pair<std::string, std::string>, double> layness_by_summary(
    const std::vector<Annotation>& annotations, const std::map<std::string, EvalItem>& items);

// Annotations with labels resolved to systems, for export.
nlohmann::ordered_json unblinded_json(const Annotation& annotation, const EvalItem& item);

// Which items each assessor sees: every item ("all") or a round-robin share
// ("partition").
struct Assignment {
  enum class Mode { kAll, kPartition };
  Mode mode = Mode::kAll;
  std::vector<std::string> assessors;  // required for partition

  static Assignment parse(std::string_view mode, std::vector<std::string> assessors);
  bool assigned(const std::string& assessor_id, std::size_t item_index) const;
  nlohmann::ordered_json to_json() const;
};

}  // namespace laybench::humaneval
