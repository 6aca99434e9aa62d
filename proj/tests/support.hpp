#pragma once

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_dec_float.hpp>

namespace testsupport {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    std::string pattern = (fs::temp_directory_path() / "laybench-test-XXXXXX").string();
    if (mkdtemp(pattern.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
    path_ = pattern;
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline void write_text(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string words(std::size_t n, const std::string& stem = "w") {
  std::string out;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) out += ' ';
    out += stem + std::to_string(i);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Oracles. Deliberately naive; they share no code with the library.

// Longest common subsequence by enumerating every subsequence of `a`.
// Only for |a| <= ~16.
inline std::size_t brute_force_lcs(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::size_t best = 0;
  const std::size_t subsets = std::size_t{1} << a.size();
  for (std::size_t mask = 0; mask < subsets; ++mask) {
    std::size_t size = 0;
    std::size_t j = 0;
    bool ok = true;
    for (std::size_t i = 0; i < a.size() && ok; ++i) {
      if (!(mask & (std::size_t{1} << i))) continue;
      ++size;
      while (j < b.size() && b[j] != a[i]) ++j;
      if (j == b.size()) ok = false;
      else ++j;
    }
    if (ok) best = std::max(best, size);
  }
  return best;
}

inline std::vector<std::vector<std::string>> all_ngrams(const std::vector<std::string>& t, std::size_t n) {
  std::vector<std::vector<std::string>> out;
  for (std::size_t i = 0; i + n <= t.size(); ++i) out.emplace_back(t.begin() + i, t.begin() + i + n);
  return out;
}

// Sum over distinct candidate n-grams of min(count in candidate, count in
// reference), counting by linear scans.
inline std::size_t brute_force_clipped_overlap(const std::vector<std::string>& cand,
                                               const std::vector<std::string>& ref, std::size_t n) {
  const auto c = all_ngrams(cand, n);
  const auto r = all_ngrams(ref, n);
  std::vector<std::vector<std::string>> seen;
  std::size_t total = 0;
  for (const auto& g : c) {
    if (std::find(seen.begin(), seen.end(), g) != seen.end()) continue;
    seen.push_back(g);
    const auto in_c = static_cast<std::size_t>(std::count(c.begin(), c.end(), g));
    const auto in_r = static_cast<std::size_t>(std::count(r.begin(), r.end(), g));
    total += std::min(in_c, in_r);
  }
  return total;
}

inline double f1_of(double matches, double cand_total, double ref_total) {
  const double p = cand_total > 0 ? matches / cand_total : 0.0;
  const double r = ref_total > 0 ? matches / ref_total : 0.0;
  return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
}

using BigFloat = boost::multiprecision::cpp_dec_float_50;

inline double oracle_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const BigFloat n = static_cast<long>(x.size());
  BigFloat sx = 0, sy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += BigFloat(x[i]);
    sy += BigFloat(y[i]);
  }
  const BigFloat mx = sx / n, my = sy / n;
  BigFloat sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const BigFloat dx = BigFloat(x[i]) - mx, dy = BigFloat(y[i]) - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  return static_cast<double>(sxy / boost::multiprecision::sqrt(sxx * syy));
}

// rank(i) = 1 + #{j : x_j < x_i} + (#{j : x_j == x_i} - 1) / 2
inline std::vector<double> oracle_midranks(const std::vector<double>& x) {
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::size_t less = 0, equal = 0;
    for (double v : x) {
      if (v < x[i]) ++less;
      if (v == x[i]) ++equal;
    }
    ranks[i] = 1.0 + static_cast<double>(less) + (static_cast<double>(equal) - 1.0) / 2.0;
  }
  return ranks;
}

inline double oracle_spearman(const std::vector<double>& x, const std::vector<double>& y) {
  return oracle_pearson(oracle_midranks(x), oracle_midranks(y));
}

// Coleman-Liau from raw counts, computed independently of the library.
inline double oracle_cli(double letters, double words, double sentences) {
  return 0.0588 * (letters / words * 100.0) - 0.296 * (sentences / words * 100.0) - 15.8;
}

}  // namespace testsupport
