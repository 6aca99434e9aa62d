#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "laybench/corpus.hpp"
#include "laybench/error.hpp"

namespace laybench::analysis {

// Correlation is undefined: too few samples or a constant argument.
class UndefinedCorrelation : public PreconditionError {
 public:
  using PreconditionError::PreconditionError;
};

enum class TextKind { kAbstract, kLaySummary };
std::string_view to_string(TextKind kind);

struct LabeledSample {
  std::string document_id;
  TextKind kind = TextKind::kAbstract;
  int label = 1;  // 1 for abstracts, 0 for lay summaries
  std::string text;

  std::string key() const;  // "<id>:abstract" / "<id>:lay_summary"
};

struct Labeling {
  std::vector<LabeledSample> samples;
  std::size_t skipped = 0;  // documents without a lay summary
};

// Two samples per document that has a lay summary: the abstract then the lay
// summary.
Labeling label_ground_truth(const corpus::Corpus& corpus);

// Average ranks (1-based), ties sharing the mean of their positions.
std::vector<double> midranks(const std::vector<double>& xs);

double pearson(const std::vector<double>& xs, const std::vector<double>& ys);
double spearman(const std::vector<double>& xs, const std::vector<double>& ys);

struct CorrelationResult {
  std::string metric;
  double spearman = 0;
  double pearson = 0;
  std::size_t n = 0;
};

CorrelationResult correlate(const std::string& metric, const std::vector<double>& xs, const std::vector<double>& ys);

// Scores keyed by sample key, one map per metric name.
using ScoreTable = std::map<std::string, std::map<std::string, double>>;

// One row per metric in `metrics` order, correlating each metric with the
// ground-truth labels. Throws ValidationError listing every missing
// (sample key, metric).
std::vector<CorrelationResult> correlation_table(const std::vector<LabeledSample>& samples,
                                                 const ScoreTable& scores, const std::vector<std::string>& metrics);

// Pairs keyed by (document_id, system).
using PairKey = std::pair<std::string, std::string>;
using PairScores = std::map<PairKey, double>;

// Correlates each metric with the human layness means over the pairs that
// have a human score. Throws ValidationError when a metric lacks a score for
// one of those pairs.
std::vector<CorrelationResult> human_correlation_table(const std::map<std::string, PairScores>& metric_scores,
                                                       const PairScores& human_layness,
                                                       const std::vector<std::string>& metrics);

enum class TableLayout { kGroundTruth, kHuman };
// CSV column order per layout:
// CSV with the column order of the corresponding paper table:
// ground truth "metric,spearman,pearson,n", human "metric,pearson,spearman,n".
// Coefficients rounded to 3 decimals.
std::string to_csv(const std::vector<CorrelationResult>& rows, TableLayout layout);

// Full-precision JSON with provenance.
nlohmann::ordered_json to_json(const std::vector<CorrelationResult>& rows, TableLayout layout,
                               const nlohmann::ordered_json& provenance);

}  // namespace laybench::analysis
