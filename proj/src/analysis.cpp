#include "laybench/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace laybench::analysis {

using nlohmann::ordered_json;

namespace {

void check_lengths(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) {
    throw PreconditionError("correlation inputs differ in length: " + std::to_string(xs.size()) + " vs " +
                            std::to_string(ys.size()));
  }
  if (xs.size() < 3) throw UndefinedCorrelation("correlation needs at least 3 pairs, got " + std::to_string(xs.size()));
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!std::isfinite(xs[i]) || !std::isfinite(ys[i])) throw PreconditionError("correlation input is not finite");
  }
}

double mean_of(const std::vector<double>& v) {
  double sum = 0;
  for (double x : v) sum += x;
  return sum / static_cast<double>(v.size());
}

std::string fixed3(double v) {
  char buffer[32];
  std::snprintf(buffer, sizeof buffer, "%.3f", v);
  // "-0.000" reads badly in a table
  if (std::string_view(buffer) == "-0.000") return "0.000";
  return buffer;
}

}  // namespace

std::string_view to_string(TextKind kind) { return kind == TextKind::kAbstract ? "abstract" : "lay_summary"; }

std::string LabeledSample::key() const { return document_id + ":" + std::string(to_string(kind)); }

Labeling label_ground_truth(const corpus::Corpus& corpus) {
  Labeling out;
  for (const auto& doc : corpus.documents()) {
    if (!doc.lay_summary || doc.lay_summary->empty()) {
      ++out.skipped;
      continue;
    }
    out.samples.push_back({doc.id, TextKind::kAbstract, 1, doc.abstract});
    out.samples.push_back({doc.id, TextKind::kLaySummary, 0, *doc.lay_summary});
  }
  return out;
}

std::vector<double> midranks(const std::vector<double>& xs) {
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) ++j;
    // positions i..j (0-based) share rank mean((i+1)..(j+1))
    const double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
  check_lengths(xs, ys);
  // Two-pass centred sums keep cancellation error small.
  const double mx = mean_of(xs);
  const double my = mean_of(ys);
  double sxy = 0;
  double sxx = 0;
  double syy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0 || syy == 0) throw UndefinedCorrelation("correlation undefined: an input has zero variance");
  const double r = sxy / std::sqrt(sxx * syy);
  return std::clamp(r, -1.0, 1.0);
}

double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
  check_lengths(xs, ys);
  return pearson(midranks(xs), midranks(ys));
}

CorrelationResult correlate(const std::string& metric, const std::vector<double>& xs, const std::vector<double>& ys) {
  return {metric, spearman(xs, ys), pearson(xs, ys), xs.size()};
}

std::vector<CorrelationResult> correlation_table(const std::vector<LabeledSample>& samples, const ScoreTable& scores,
                                                 const std::vector<std::string>& metrics) {
  std::vector<std::string> missing;
  for (const auto& metric : metrics) {
    auto table = scores.find(metric);
    for (const auto& sample : samples) {
      if (table == scores.end() || !table->second.contains(sample.key())) {
        missing.push_back("(" + sample.key() + ", " + metric + ")");
      }
    }
  }
  if (!missing.empty()) {
    std::string list;
    for (std::size_t i = 0; i < missing.size() && i < 20; ++i) list += (i ? ", " : "") + missing[i];
    if (missing.size() > 20) list += ", ... (" + std::to_string(missing.size()) + " in total)";
    throw ValidationError("missing scores: " + list);
  }
  std::vector<CorrelationResult> rows;
  for (const auto& metric : metrics) {
    const auto& table = scores.at(metric);
    std::vector<double> xs;
    std::vector<double> ys;
    for (const auto& sample : samples) {
      xs.push_back(table.at(sample.key()));
      ys.push_back(sample.label);
    }
    rows.push_back(correlate(metric, xs, ys));
  }
  return rows;
}

std::vector<CorrelationResult> human_correlation_table(const std::map<std::string, PairScores>& metric_scores,
                                                       const PairScores& human_layness,
                                                       const std::vector<std::string>& metrics) {
  std::vector<CorrelationResult> rows;
  std::vector<std::string> missing;
  for (const auto& metric : metrics) {
    auto table = metric_scores.find(metric);
    std::vector<double> xs;
    std::vector<double> ys;
    for (const auto& [pair, human] : human_layness) {
      if (table == metric_scores.end() || !table->second.contains(pair)) {
        missing.push_back("(" + pair.first + ", " + pair.second + ", " + metric + ")");
        continue;
      }
      xs.push_back(table->second.at(pair));
      ys.push_back(human);
    }
    if (missing.empty()) rows.push_back(correlate(metric, xs, ys));
  }
  if (!missing.empty()) {
    std::string list;
    for (std::size_t i = 0; i < missing.size() && i < 20; ++i) list += (i ? ", " : "") + missing[i];
    if (missing.size() > 20) list += ", ... (" + std::to_string(missing.size()) + " in total)";
    throw ValidationError("missing metric scores for human-rated pairs: " + list);
  }
  return rows;
}

std::string to_csv(const std::vector<CorrelationResult>& rows, TableLayout layout) {
  std::string out = layout == TableLayout::kGroundTruth ? "metric,spearman,pearson,n\n" : "metric,pearson,spearman,n\n";
  for (const auto& row : rows) {
    const auto first = layout == TableLayout::kGroundTruth ? row.spearman : row.pearson;
    const auto second = layout == TableLayout::kGroundTruth ? row.pearson : row.spearman;
    out += row.metric + "," + fixed3(first) + "," + fixed3(second) + "," + std::to_string(row.n) + "\n";
  }
  return out;
}

ordered_json to_json(const std::vector<CorrelationResult>& rows, TableLayout layout, const ordered_json& provenance) {
  ordered_json out;
  out["table"] = layout == TableLayout::kGroundTruth ? "ground_truth" : "human_layness";
  out["provenance"] = provenance;
  out["rows"] = ordered_json::array();
  for (const auto& row : rows) {
    ordered_json r;
    r["metric"] = row.metric;
    if (layout == TableLayout::kGroundTruth) {
      r["spearman"] = row.spearman;
      r["pearson"] = row.pearson;
    } else {
      r["pearson"] = row.pearson;
      r["spearman"] = row.spearman;
    }
    r["n"] = row.n;
    out["rows"].push_back(std::move(r));
  }
  return out;
}

}  // namespace laybench::analysis
