#pragma once

// Invariant suites run against a finished expansion: shard integrity
// against the manifest, the row/column-sum and spectrum laws of Kronecker
// products, dropout concentration, train/test disjointness, and a re-run
// that must reproduce every shard fingerprint.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/SVD>

#include "fractex/dense.hpp"
#include "fractex/error.hpp"
#include "fractex/expander.hpp"
#include "fractex/manifest.hpp"
#include "fractex/reducer.hpp"
#include "fractex/shard_io.hpp"
#include "fractex/sparse.hpp"
#include "fractex/stats.hpp"

namespace fractex::verify {

struct CheckResult {
  std::string suite;
  bool passed = true;
  std::string detail;
};

struct Report {
  std::vector<CheckResult> checks;

  bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed; });
  }
};

using ShardReader = std::function<std::string(const std::string& name)>;

inline ShardReader directory_reader(std::filesystem::path dir) {
  return [dir = std::move(dir)](const std::string& name) { return read_shard_file(dir / name); };
}

inline ShardReader memory_reader(const MemorySink& sink) {
  return [&sink](const std::string& name) {
    auto it = sink.shards().find(name);
    if (it == sink.shards().end()) fail(ErrorKind::io, "missing shard " + name);
    return it->second;
  };
}

/// A manifest and a way to read the shards it lists.
struct Expansion {
  ExpansionManifest manifest;
  ShardReader read;
};

inline Expansion load_expansion(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json", std::ios::binary);
  if (!in) fail(ErrorKind::io, "no manifest.json in " + dir.string());
  std::stringstream text;
  text << in.rdbuf();
  return {parse_manifest(text.str()), directory_reader(dir)};
}

// ---------------------------------------------------------------------------
// Shard integrity
// ---------------------------------------------------------------------------

/// Re-reads every shard, recounts non-zeros per shard and per block and
/// re-derives fingerprints. Entries are appended to `entries` when given.
inline CheckResult check_shards(const Expansion& ex, std::vector<ShardEntry>* entries = nullptr) {
  const auto& m = ex.manifest;
  CheckResult res{"shard counts", true, {}};
  std::size_t problems = 0;
  auto flag = [&](const std::string& why) {
    // Keep the first few reasons; a tampered shard usually trips several.
    if (problems < 4) res.detail += (problems ? "; " : "") + why;
    ++problems;
    res.passed = false;
  };
  if (!m.complete) flag("manifest marks the run incomplete: " + m.error);
  if (m.expanded_rows != m.reduced_rows * m.base_rows ||
      m.expanded_cols != m.reduced_cols * m.base_cols)
    flag("expanded dimensions do not follow the reduced and base dimensions");

  std::map<std::pair<Index, Index>, Index> counted;
  Index total = 0;
  for (const auto& shard : m.shards) {
    std::string content;
    try {
      content = ex.read(shard.file);
    } catch (const Error& e) {
      flag(e.what());
      continue;
    }
    Fnv1a64 hash;
    hash.update(content);
    Index lines = 0;
    bool ordered = true;
    std::pair<Index, Index> prev{0, 0};
    try {
      for_each_shard_line(content, shard.file, [&](const ShardEntry& e) {
        if (e.row >= m.expanded_rows || e.col >= m.expanded_cols)
          fail(ErrorKind::data, "entry (" + std::to_string(e.row) + ", " + std::to_string(e.col) +
                                    ") outside the expanded matrix in " + shard.file);
        if (lines > 0 && std::pair{e.row, e.col} <= prev) ordered = false;
        prev = {e.row, e.col};
        ++lines;
        ++counted[{e.row / m.base_rows, e.col / m.base_cols}];
        if (entries) entries->push_back(e);
      });
    } catch (const Error& e) {
      flag(e.what());
      continue;
    }
    total += lines;
    if (!ordered) flag(shard.file + " is not sorted by (row, col)");
    if (lines != shard.nnz)
      flag(shard.file + ": manifest records " + std::to_string(shard.nnz) + " lines, shard holds " +
           std::to_string(lines));
    if (hash.hex() != shard.fnv1a64) flag(shard.file + ": fingerprint mismatch");
  }
  for (const auto& b : m.blocks) {
    const auto it = counted.find({b.block_row, b.block_col});
    const Index got = it == counted.end() ? 0 : it->second;
    if (got != b.nnz)
      flag("block (" + std::to_string(b.block_row) + "," + std::to_string(b.block_col) +
           "): manifest records " + std::to_string(b.nnz) + " non-zeros, shards hold " +
           std::to_string(got));
    if (it != counted.end()) counted.erase(it);
  }
  if (!counted.empty()) flag("shards hold entries of blocks missing from the manifest");
  if (total != m.total_nnz)
    flag("manifest total_nnz " + std::to_string(m.total_nnz) + " but shards hold " +
         std::to_string(total));
  if (res.passed)
    res.detail = std::to_string(m.shards.size()) + " shards, " + std::to_string(total) +
                 " non-zeros match the manifest";
  return res;
}

// ---------------------------------------------------------------------------
// Kronecker laws (deterministic expansions)
// ---------------------------------------------------------------------------

namespace detail {

inline bool all_blocks(const ExpansionManifest& m) {
  return m.blocks.size() == m.reduced_rows * m.reduced_cols;
}

// Per-block shuffles break the block structure the sum and spectrum laws
// rely on, so both only apply to unshuffled expansions.
inline bool shuffled(const ExpansionManifest& m) {
  return m.config.contains("shuffle") && m.config["shuffle"].get<bool>();
}

inline bool close(double x, double y, double rel_tol) {
  return std::abs(x - y) <= rel_tol * std::max(std::abs(x), std::abs(y));
}

}  // namespace detail

/// Ranked row and column sums of the expanded matrix against the Minkowski
/// products of the factor sums. rel_tol = 0 demands exact equality.
inline CheckResult check_sum_law(const DenseMatrix& a, const SparseBinaryMatrix& b,
                                 const ExpansionManifest& m, std::span<const ShardEntry> entries,
                                 double rel_tol = 1e-12) {
  CheckResult res{"row/column sum law", true, {}};
  if (!detail::all_blocks(m)) {
    res.detail = "skipped: only a block subset was generated";
    return res;
  }
  if (detail::shuffled(m)) {
    res.detail = "skipped: blocks were shuffled";
    return res;
  }
  std::vector<double> rows(m.expanded_rows, 0.0), cols(m.expanded_cols, 0.0);
  for (const auto& e : entries) {
    rows[e.row] += e.value;
    cols[e.col] += e.value;
  }
  const auto predicted = stats::predict_expanded_sums(a, b);
  const auto actual_rows = stats::ranked(std::move(rows));
  const auto actual_cols = stats::ranked(std::move(cols));
  auto compare = [&](const stats::RankedDistribution& x, const stats::RankedDistribution& y,
                     const char* what) {
    if (x.values.size() != y.values.size()) {
      res.passed = false;
      res.detail = std::string(what) + ": length mismatch";
      return;
    }
    for (std::size_t r = 0; r < x.values.size(); ++r)
      if (!detail::close(x.values[r], y.values[r], rel_tol)) {
        res.passed = false;
        std::ostringstream msg;
        msg << what << " differ at rank " << (r + 1) << ": " << x.values[r] << " vs predicted "
            << y.values[r];
        res.detail = msg.str();
        return;
      }
  };
  compare(actual_rows, predicted.rows, "row sums");
  if (res.passed) compare(actual_cols, predicted.cols, "column sums");
  if (res.passed)
    res.detail = std::to_string(m.expanded_rows) + " row sums and " +
                 std::to_string(m.expanded_cols) + " column sums match";
  return res;
}

/// Sorted singular values of the assembled expansion against the pairwise
/// products of the factor spectra. Dense, so limited to small expansions.
inline CheckResult check_spectrum_law(const DenseMatrix& a, const SparseBinaryMatrix& b,
                                      const ExpansionManifest& m,
                                      std::span<const ShardEntry> entries,
                                      double rel_tol = 1e-9, Index max_cells = 400'000) {
  CheckResult res{"spectrum law", true, {}};
  if (!detail::all_blocks(m)) {
    res.detail = "skipped: only a block subset was generated";
    return res;
  }
  if (detail::shuffled(m)) {
    res.detail = "skipped: blocks were shuffled";
    return res;
  }
  if (m.expanded_rows * m.expanded_cols > max_cells) {
    res.detail = "skipped: expansion too large for a dense check";
    return res;
  }
  DenseMatrix k = DenseMatrix::Zero(static_cast<Eigen::Index>(m.expanded_rows),
                                    static_cast<Eigen::Index>(m.expanded_cols));
  for (const auto& e : entries)
    k(static_cast<Eigen::Index>(e.row), static_cast<Eigen::Index>(e.col)) = e.value;
  const auto actual = spectral::singular_values(k);
  const auto sig_a = spectral::singular_values(a);
  const auto sig_b = spectral::singular_values(to_dense(b));
  const auto predicted = stats::predict_expanded_spectrum(sig_a, sig_b, actual.size());
  const double scale = actual.empty() ? 0.0 : actual.front();
  for (std::size_t r = 0; r < predicted.values.size(); ++r) {
    if (std::abs(actual[r] - predicted.values[r]) > rel_tol * std::max(scale, 1e-300)) {
      res.passed = false;
      std::ostringstream msg;
      msg << "singular value " << (r + 1) << ": " << actual[r] << " vs predicted "
          << predicted.values[r];
      res.detail = msg.str();
      return res;
    }
  }
  res.detail = std::to_string(predicted.values.size()) + " singular values match";
  return res;
}

// ---------------------------------------------------------------------------
// Randomized expansions
// ---------------------------------------------------------------------------

inline CheckResult check_dropout_concentration(const ExpansionManifest& m, double width = 4.0) {
  CheckResult res{"dropout concentration", true, {}};
  const auto checks = stats::check_concentration(m, width);
  std::size_t bad = 0;
  for (const auto& c : checks)
    if (!c.within) {
      if (bad == 0) {
        std::ostringstream msg;
        msg << c.scope << ": kept " << c.observed << ", expected " << c.expected << " ± "
            << width << "·" << c.sigma;
        res.detail = msg.str();
      }
      ++bad;
    }
  res.passed = bad == 0;
  if (res.passed)
    res.detail = std::to_string(checks.size()) + " block and block-row counts within " +
                 std::to_string(static_cast<int>(width)) + " sigma";
  return res;
}

inline CheckResult check_disjoint(std::span<const ShardEntry> train,
                                  std::span<const ShardEntry> test) {
  CheckResult res{"train/test disjointness", true, {}};
  auto keys = [](std::span<const ShardEntry> es) {
    std::vector<std::pair<Index, Index>> k;
    k.reserve(es.size());
    for (const auto& e : es) k.emplace_back(e.row, e.col);
    std::sort(k.begin(), k.end());
    return k;
  };
  const auto a = keys(train);
  const auto b = keys(test);
  std::size_t x = 0, y = 0;
  while (x < a.size() && y < b.size()) {
    if (a[x] < b[y]) {
      ++x;
    } else if (b[y] < a[x]) {
      ++y;
    } else {
      res.passed = false;
      res.detail = "entry (" + std::to_string(a[x].first) + ", " + std::to_string(a[x].second) +
                   ") is in both train and test";
      return res;
    }
  }
  res.detail = std::to_string(a.size()) + " train and " + std::to_string(b.size()) +
               " test entries share no position";
  return res;
}

// ---------------------------------------------------------------------------
// Re-run
// ---------------------------------------------------------------------------

/// Rebuilds the expansion settings recorded in a manifest.
inline expander::ExpansionConfig config_from_manifest(const ExpansionManifest& m,
                                                      const reducer::ReducedMatrix& reduced,
                                                      unsigned workers) {
  expander::ExpansionConfig cfg;
  try {
    cfg.reduced = reduced;
    cfg.mode = expander::parse_mode(m.config.at("mode").get<std::string>());
    cfg.shuffle = m.config.at("shuffle").get<bool>();
    cfg.shard_granularity =
        expander::parse_granularity(m.config.at("shard_granularity").get<std::string>());
    cfg.gzip = m.config.at("gzip").get<bool>();
    if (m.config.contains("run")) cfg.run_config = m.config.at("run");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::data, std::string("manifest config is incomplete: ") + e.what());
  }
  cfg.master_seed = m.seed;
  cfg.workers = workers;
  if (!detail::all_blocks(m)) {
    std::vector<expander::BlockId> ids;
    for (const auto& b : m.blocks) ids.push_back({b.block_row, b.block_col});
    cfg.only_blocks = std::move(ids);
  }
  return cfg;
}

/// Re-expands in memory and compares shard fingerprints and block counts.
/// `reference` holds one manifest (single expansion) or two (train, test).
inline CheckResult check_rerun(const reducer::ReducedMatrix& reduced, const SparseBinaryMatrix& train,
                               const std::optional<SparseBinaryMatrix>& test,
                               std::span<const ExpansionManifest> reference, unsigned workers) {
  CheckResult res{"determinism re-run", true, {}};
  const auto cfg = config_from_manifest(reference.front(), reduced, workers);
  std::vector<ExpansionManifest> again;
  MemorySink a, b;
  if (test) {
    auto split = expander::expand_split(cfg, train, *test, a, b);
    again = {split.train, split.test};
  } else {
    again = {expander::expand(cfg, train, a)};
  }
  if (again.size() != reference.size()) {
    res.passed = false;
    res.detail = "re-run produced a different number of outputs";
    return res;
  }
  for (std::size_t r = 0; r < again.size(); ++r) {
    if (again[r].shards != reference[r].shards) {
      res.passed = false;
      for (std::size_t s = 0; s < std::min(again[r].shards.size(), reference[r].shards.size()); ++s)
        if (again[r].shards[s] != reference[r].shards[s]) {
          res.detail = reference[r].role + " shard " + reference[r].shards[s].file +
                       " differs on re-run";
          return res;
        }
      res.detail = reference[r].role + " shard list differs on re-run";
      return res;
    }
    if (again[r].blocks != reference[r].blocks) {
      res.passed = false;
      res.detail = reference[r].role + " block counts differ on re-run";
      return res;
    }
  }
  res.detail = "re-run with " + std::to_string(workers) + " worker(s) reproduced every shard";
  return res;
}

// ---------------------------------------------------------------------------
// Bundle
// ---------------------------------------------------------------------------

struct VerifyInputs {
  reducer::ReducedMatrix reduced;
  SparseBinaryMatrix train;
  std::optional<SparseBinaryMatrix> test;
  Expansion expanded;                     // the sole or the train expansion
  std::optional<Expansion> expanded_test; // present for split expansions
  unsigned rerun_workers = 1;
};

inline Report run_suites(const VerifyInputs& in) {
  Report rep;
  const bool split = in.expanded_test.has_value();
  if (split != in.test.has_value())
    fail(ErrorKind::usage, "split expansions need both the test matrix and the test output");

  struct Part {
    const Expansion* ex;
    const SparseBinaryMatrix* base;
  };
  std::vector<Part> parts{{&in.expanded, &in.train}};
  if (split) parts.push_back({&*in.expanded_test, &*in.test});

  std::vector<std::vector<ShardEntry>> entries(parts.size());
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& m = parts[p].ex->manifest;
    auto tag = [&](CheckResult c) {
      c.suite = m.role + ": " + c.suite;
      rep.checks.push_back(std::move(c));
    };
    if (m.reduced_rows != static_cast<Index>(in.reduced.data.rows()) ||
        m.reduced_cols != static_cast<Index>(in.reduced.data.cols()) ||
        m.base_rows != parts[p].base->n_rows() || m.base_cols != parts[p].base->n_cols() ||
        m.base_nnz != parts[p].base->nnz()) {
      tag({"inputs", false, "manifest dimensions or base nnz do not match the given inputs"});
      continue;
    }
    tag(check_shards(*parts[p].ex, &entries[p]));
    const bool deterministic = m.config.value("mode", "") == "deterministic";
    if (deterministic) {
      tag(check_sum_law(in.reduced.data, *parts[p].base, m, entries[p]));
      tag(check_spectrum_law(in.reduced.data, *parts[p].base, m, entries[p]));
    } else {
      tag(check_dropout_concentration(m));
    }
  }
  if (split) rep.checks.push_back(check_disjoint(entries[0], entries[1]));

  std::vector<ExpansionManifest> reference{in.expanded.manifest};
  if (split) reference.push_back(in.expanded_test->manifest);
  try {
    rep.checks.push_back(check_rerun(in.reduced, in.train, in.test, reference, in.rerun_workers));
  } catch (const Error& e) {
    rep.checks.push_back({"determinism re-run", false, e.what()});
  }
  return rep;
}

}  // namespace fractex::verify
