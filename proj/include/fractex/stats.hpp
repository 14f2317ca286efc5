#pragma once

// The three statistics the expansion is meant to preserve (ranked row sums,
// ranked column sums, singular spectrum), their analytic predictions for
// plain Kronecker products, and shape comparison between distributions.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fractex/dense.hpp"
#include "fractex/error.hpp"
#include "fractex/manifest.hpp"
#include "fractex/sparse.hpp"

namespace fractex::stats {

/// Values sorted descending, with a label for reports.
struct RankedDistribution {
  std::vector<double> values;
  std::string label;

  bool empty() const noexcept { return values.empty(); }
};

inline RankedDistribution ranked(std::vector<double> values, std::string label = {}) {
  for (double v : values)
    if (!std::isfinite(v)) fail(ErrorKind::numeric, "ranked distribution has a non-finite value");
  std::sort(values.begin(), values.end(), std::greater<>());
  return {std::move(values), std::move(label)};
}

inline RankedDistribution ranked(std::span<const Index> counts, std::string label = {}) {
  return ranked(std::vector<double>(counts.begin(), counts.end()), std::move(label));
}

/// {x·y : x ∈ xs, y ∈ ys} as a multiset (|xs|·|ys| values, unsorted).
inline std::vector<double> minkowski_product(std::span<const double> xs,
                                             std::span<const double> ys) {
  std::vector<double> out;
  out.reserve(xs.size() * ys.size());
  for (double x : xs)
    for (double y : ys) out.push_back(x * y);
  return out;
}

struct SumDistributions {
  RankedDistribution rows;
  RankedDistribution cols;
};

/// Row and column sums of A ⊗ B predicted from the factors alone.
inline SumDistributions predict_expanded_sums(const DenseMatrix& a, const SparseBinaryMatrix& b) {
  std::vector<double> ar(static_cast<std::size_t>(a.rows())), ac(static_cast<std::size_t>(a.cols()));
  for (Eigen::Index i = 0; i < a.rows(); ++i) ar[static_cast<std::size_t>(i)] = a.row(i).sum();
  for (Eigen::Index j = 0; j < a.cols(); ++j) ac[static_cast<std::size_t>(j)] = a.col(j).sum();
  const auto br = row_sums(b);
  const auto bc = col_sums(b);
  const std::vector<double> brd(br.begin(), br.end()), bcd(bc.begin(), bc.end());
  return {ranked(minkowski_product(ar, brd), "predicted_rows"),
          ranked(minkowski_product(ac, bcd), "predicted_cols")};
}

/// The top_k largest pairwise products of two spectra, descending.
inline RankedDistribution predict_expanded_spectrum(std::span<const double> sig_a,
                                                    std::span<const double> sig_b,
                                                    std::size_t top_k) {
  for (double s : sig_a)
    if (s < 0) fail(ErrorKind::usage, "singular values must be non-negative");
  for (double s : sig_b)
    if (s < 0) fail(ErrorKind::usage, "singular values must be non-negative");
  auto all = minkowski_product(sig_a, sig_b);
  top_k = std::min(top_k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(top_k), all.end(),
                    std::greater<>());
  all.resize(top_k);
  return {std::move(all), "predicted_spectrum"};
}

struct ComparisonReport {
  double pearson_loglog = 0.0;
  double max_rel_gap_topN = 0.0;
  std::size_t compared_points = 0;
  std::size_t zeros_excluded_a = 0;
  std::size_t zeros_excluded_b = 0;
};

namespace detail {

// log of a descending positive series sampled at normalized rank t ∈ [0, 1],
// linear between neighbouring ranks.
inline double log_at_quantile(const std::vector<double>& logs, double t) {
  const double pos = t * static_cast<double>(logs.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, logs.size() - 1);
  const double w = pos - static_cast<double>(lo);
  return (1.0 - w) * logs[lo] + w * logs[hi];
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  // Two flat curves have the same shape; one flat curve against a sloped
  // one has none in common.
  const double scale = 1e-24 * std::max({1.0, mx * mx, my * my}) * n;
  if (sxx <= scale && syy <= scale) return 1.0;
  if (sxx <= scale || syy <= scale) return 0.0;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace detail

/// Shape agreement of two ranked distributions on log-log axes. Both are
/// resampled at matching rank quantiles down to the shorter length (zeros
/// excluded) and their log values correlated. The gap term is the largest
/// relative difference over the top `top_n` ranks.
inline ComparisonReport compare_ranked(const RankedDistribution& a, const RankedDistribution& b,
                                       std::size_t top_n = 100) {
  auto positive_logs = [](const RankedDistribution& d, std::size_t& zeros) {
    std::vector<double> logs;
    for (double v : d.values) {
      if (v > 0)
        logs.push_back(std::log(v));
      else
        ++zeros;
    }
    std::sort(logs.begin(), logs.end(), std::greater<>());
    return logs;
  };
  ComparisonReport rep;
  const auto la = positive_logs(a, rep.zeros_excluded_a);
  const auto lb = positive_logs(b, rep.zeros_excluded_b);
  if (la.size() < 3 || lb.size() < 3)
    fail(ErrorKind::numeric, "log-log correlation needs at least 3 positive values per side (" +
                                 a.label + ": " + std::to_string(la.size()) + ", " + b.label +
                                 ": " + std::to_string(lb.size()) + ")");

  const std::size_t n = std::min(la.size(), lb.size());
  std::vector<double> xa(n), xb(n);
  for (std::size_t q = 0; q < n; ++q) {
    const double t = static_cast<double>(q) / static_cast<double>(n - 1);
    xa[q] = detail::log_at_quantile(la, t);
    xb[q] = detail::log_at_quantile(lb, t);
  }
  rep.pearson_loglog = detail::pearson(xa, xb);
  rep.compared_points = n;

  const std::size_t top = std::min({top_n, a.values.size(), b.values.size()});
  for (std::size_t r = 0; r < top; ++r) {
    const double x = a.values[r], y = b.values[r];
    const double denom = std::max(std::abs(x), std::abs(y));
    if (denom > 0) rep.max_rel_gap_topN = std::max(rep.max_rel_gap_topN, std::abs(x - y) / denom);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Concentration of randomized block counts
// ---------------------------------------------------------------------------

struct ConcentrationCheck {
  std::string scope;  // "block (i,j)" or "block row i"
  double observed = 0;
  double expected = 0;
  double sigma = 0;
  bool within = true;
};

/// Kept counts of Bernoulli(p) thinning of n non-zeros lie within
/// `width`·sqrt(n·p·(1−p)) of n·p. Checked per block and per block row.
inline std::vector<ConcentrationCheck> check_concentration(const ExpansionManifest& m,
                                                           double width = 4.0) {
  std::vector<ConcentrationCheck> out;
  const double n = static_cast<double>(m.base_nnz);
  auto judge = [&](ConcentrationCheck c, double variance) {
    c.sigma = std::sqrt(variance);
    // Half a count of slack covers the degenerate p ∈ {0, 1} case exactly.
    c.within = std::abs(c.observed - c.expected) <= width * c.sigma + 0.5;
    out.push_back(std::move(c));
  };
  std::vector<std::pair<Index, std::pair<double, double>>> rows;  // row -> (obs, mean), var
  std::vector<double> row_var;
  for (const auto& b : m.blocks) {
    const double p = b.keep_prob;
    judge({"block (" + std::to_string(b.block_row) + "," + std::to_string(b.block_col) + ")",
           static_cast<double>(b.nnz), n * p, 0, true},
          n * p * (1 - p));
    if (rows.empty() || rows.back().first != b.block_row) {
      rows.push_back({b.block_row, {0.0, 0.0}});
      row_var.push_back(0.0);
    }
    rows.back().second.first += static_cast<double>(b.nnz);
    rows.back().second.second += n * p;
    row_var.back() += n * p * (1 - p);
  }
  for (std::size_t r = 0; r < rows.size(); ++r)
    judge({"block row " + std::to_string(rows[r].first), rows[r].second.first,
           rows[r].second.second, 0, true},
          row_var[r]);
  return out;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// The statistics of one matrix. Any member may be empty (absent).
struct StatisticSet {
  std::string label;
  RankedDistribution row_sums;
  RankedDistribution col_sums;
  RankedDistribution spectrum;
};

inline void write_ranked(const std::filesystem::path& path, const RankedDistribution& d) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  out << "rank\tvalue\n";
  for (std::size_t r = 0; r < d.values.size(); ++r) {
    out << (r + 1) << '\t';
    write_exact(out, d.values[r]) << '\n';
  }
  if (!out) fail(ErrorKind::io, "write failed on " + path.string());
}

/// Writes `row_sums_{label}.tsv`, `col_sums_{label}.tsv`,
/// `spectrum_{label}.tsv` for each non-empty statistic and a `summary.tsv`
/// comparing each (label, reference) pair statistic by statistic.
inline void emit_report(const std::filesystem::path& dir, std::span<const StatisticSet> sets,
                        std::span<const std::pair<std::string, std::string>> comparisons) {
  std::filesystem::create_directories(dir);
  for (const auto& s : sets) {
    if (!s.row_sums.empty()) write_ranked(dir / ("row_sums_" + s.label + ".tsv"), s.row_sums);
    if (!s.col_sums.empty()) write_ranked(dir / ("col_sums_" + s.label + ".tsv"), s.col_sums);
    if (!s.spectrum.empty()) write_ranked(dir / ("spectrum_" + s.label + ".tsv"), s.spectrum);
  }
  auto find = [&](const std::string& label) -> const StatisticSet* {
    for (const auto& s : sets)
      if (s.label == label) return &s;
    return nullptr;
  };

  std::ofstream out(dir / "summary.tsv", std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write summary in " + dir.string());
  out << "statistic\tlabel\treference\tpearson_loglog\tmax_rel_gap_top100\tstatus\n";
  const std::pair<const char*, RankedDistribution StatisticSet::*> members[] = {
      {"row_sums", &StatisticSet::row_sums},
      {"col_sums", &StatisticSet::col_sums},
      {"spectrum", &StatisticSet::spectrum}};
  for (const auto& [label, reference] : comparisons) {
    const auto* x = find(label);
    const auto* y = find(reference);
    for (const auto& [name, member] : members) {
      out << name << '\t' << label << '\t' << reference << '\t';
      std::optional<ComparisonReport> rep;
      if (x && y && !(x->*member).empty() && !(y->*member).empty()) {
        try {
          rep = compare_ranked(x->*member, y->*member);
        } catch (const Error&) {
        }
      }
      if (rep) {
        write_exact(out, rep->pearson_loglog) << '\t';
        write_exact(out, rep->max_rel_gap_topN) << "\tok\n";
      } else {
        out << "-\t-\tabsent\n";
      }
    }
  }
  if (!out) fail(ErrorKind::io, "write failed on summary.tsv");
}

}  // namespace fractex::stats
