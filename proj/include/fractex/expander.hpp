#pragma once

// Fractal expansion R̃ = R̂ ⊗ R and its randomized form, where every block
// (i, j) is a Bernoulli-thinned (keep probability R̂ᵢⱼ), row- and
// column-shuffled copy of the base matrix.
//
// Blocks are independent tasks. Each draws from its own stream derived from
// (seed, i, j) and results land in slots indexed by block, so shards and
// manifests do not depend on the worker count or on scheduling.

#include <algorithm>
#include <atomic>
#include <charconv>
#include <concepts>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "fractex/dense.hpp"
#include "fractex/error.hpp"
#include "fractex/manifest.hpp"
#include "fractex/reducer.hpp"
#include "fractex/rng.hpp"
#include "fractex/shard_io.hpp"
#include "fractex/sparse.hpp"

namespace fractex::expander {

enum class ExpansionMode { deterministic, randomized };
enum class ShardGranularity { per_block, per_block_row };

inline const char* to_string(ExpansionMode m) {
  return m == ExpansionMode::deterministic ? "deterministic" : "randomized";
}
inline const char* to_string(ShardGranularity g) {
  return g == ShardGranularity::per_block ? "per_block" : "per_block_row";
}

inline ExpansionMode parse_mode(const std::string& s) {
  if (s == "deterministic") return ExpansionMode::deterministic;
  if (s == "randomized") return ExpansionMode::randomized;
  fail(ErrorKind::usage, "unknown mode '" + s + "' (expected deterministic or randomized)");
}

inline ShardGranularity parse_granularity(const std::string& s) {
  if (s == "per_block" || s == "block") return ShardGranularity::per_block;
  if (s == "per_block_row" || s == "row") return ShardGranularity::per_block_row;
  fail(ErrorKind::usage, "unknown shard granularity '" + s + "' (expected block or row)");
}

struct BlockId {
  Index row = 0;
  Index col = 0;
  friend auto operator<=>(const BlockId&, const BlockId&) = default;
};

struct ExpansionConfig {
  reducer::ReducedMatrix reduced;
  ExpansionMode mode = ExpansionMode::randomized;
  bool shuffle = true;
  std::uint64_t master_seed = 0;
  ShardGranularity shard_granularity = ShardGranularity::per_block;
  bool gzip = false;
  /// Scheduling only; never affects output.
  unsigned workers = 1;
  /// Restrict generation to these blocks (all blocks when unset).
  std::optional<std::vector<BlockId>> only_blocks;
  /// Caller's resolved run settings, echoed under "run" in every manifest.
  nlohmann::ordered_json run_config;
};

// ---------------------------------------------------------------------------
// Deterministic Kronecker product
// ---------------------------------------------------------------------------

/// Calls emit(block_row, block_col, a_ij, block) for every entry of A in
/// row-major order. The block is B itself, or an empty matrix of B's shape
/// when a_ij is zero. Entry (k, l) of block (i, j) sits at global position
/// (i·rows(B) + k, j·cols(B) + l) with value a_ij.
template <typename Emit>
void kron_deterministic(const DenseMatrix& a, const SparseBinaryMatrix& b, Emit&& emit) {
  const SparseBinaryMatrix empty(b.n_rows(), b.n_cols(), std::vector<Index>(b.n_rows() + 1, 0), {});
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      const double v = a(i, j);
      emit(static_cast<Index>(i), static_cast<Index>(j), v, v == 0.0 ? empty : b);
    }
}

struct ValuedEntry {
  Index row;
  Index col;
  double value;
  friend bool operator==(const ValuedEntry&, const ValuedEntry&) = default;
};

/// Materialized A ⊗ B entries, in block order. Small inputs only.
inline std::vector<ValuedEntry> kron_entries(const DenseMatrix& a, const SparseBinaryMatrix& b) {
  std::vector<ValuedEntry> out;
  kron_deterministic(a, b, [&](Index bi, Index bj, double v, const SparseBinaryMatrix& blk) {
    for (Index k = 0; k < blk.n_rows(); ++k)
      for (Index l : blk.row(k))
        out.push_back({bi * b.n_rows() + k, bj * b.n_cols() + l, v});
  });
  return out;
}

// ---------------------------------------------------------------------------
// Block operators
// ---------------------------------------------------------------------------

namespace detail {

inline void check_keep_prob(double p) {
  if (!(p >= 0.0 && p <= 1.0))
    fail(ErrorKind::usage, "keep probability " + std::to_string(p) + " is outside [0, 1]");
}

// One Bernoulli draw per non-zero in row-major order.
inline std::vector<bool> dropout_mask(Index nnz, double keep_prob, RandomStream& rng) {
  check_keep_prob(keep_prob);
  std::vector<bool> keep(nnz);
  for (Index p = 0; p < nnz; ++p) keep[p] = rng.bernoulli(keep_prob);
  return keep;
}

// Keeps the masked non-zeros; `signs` may be empty for binary matrices.
inline std::pair<SparseBinaryMatrix, std::vector<std::int8_t>> select(
    const SparseBinaryMatrix& m, std::span<const std::int8_t> signs, const std::vector<bool>& keep) {
  std::vector<Index> offsets(m.n_rows() + 1, 0);
  std::vector<Index> cols;
  std::vector<std::int8_t> kept_signs;
  for (Index i = 0; i < m.n_rows(); ++i) {
    for (Index p = m.row_offsets()[i]; p < m.row_offsets()[i + 1]; ++p)
      if (keep[p]) {
        cols.push_back(m.col_indices()[p]);
        if (!signs.empty()) kept_signs.push_back(signs[p]);
      }
    offsets[i + 1] = cols.size();
  }
  return {SparseBinaryMatrix(m.n_rows(), m.n_cols(), std::move(offsets), std::move(cols)),
          std::move(kept_signs)};
}

// Row r moves to row_perm[r], column c to col_perm[c].
inline std::pair<SparseBinaryMatrix, std::vector<std::int8_t>> permute(
    const SparseBinaryMatrix& m, std::span<const std::int8_t> signs,
    const std::vector<Index>& row_perm, const std::vector<Index>& col_perm) {
  std::vector<Index> source_row(m.n_rows());
  for (Index r = 0; r < m.n_rows(); ++r) source_row[row_perm[r]] = r;

  std::vector<Index> offsets(m.n_rows() + 1, 0);
  std::vector<Index> cols(m.nnz());
  std::vector<std::int8_t> out_signs(signs.empty() ? 0 : m.nnz());
  std::vector<std::pair<Index, std::int8_t>> scratch;
  Index cursor = 0;
  for (Index i = 0; i < m.n_rows(); ++i) {
    const Index src = source_row[i];
    scratch.clear();
    for (Index p = m.row_offsets()[src]; p < m.row_offsets()[src + 1]; ++p)
      scratch.emplace_back(col_perm[m.col_indices()[p]],
                           signs.empty() ? std::int8_t{1} : signs[p]);
    std::sort(scratch.begin(), scratch.end());
    for (const auto& [c, s] : scratch) {
      cols[cursor] = c;
      if (!signs.empty()) out_signs[cursor] = s;
      ++cursor;
    }
    offsets[i + 1] = cursor;
  }
  return {SparseBinaryMatrix(m.n_rows(), m.n_cols(), std::move(offsets), std::move(cols)),
          std::move(out_signs)};
}

}  // namespace detail

/// Keeps each non-zero of B independently with probability keep_prob.
inline SparseBinaryMatrix block_dropout(const SparseBinaryMatrix& b, double keep_prob,
                                        BlockRandomStream& rng) {
  const auto keep = detail::dropout_mask(b.nnz(), keep_prob, rng.stream);
  return detail::select(b, {}, keep).first;
}

inline SignedSparseMatrix block_dropout(const SignedSparseMatrix& b, double keep_prob,
                                        BlockRandomStream& rng) {
  const auto keep = detail::dropout_mask(b.nnz(), keep_prob, rng.stream);
  auto [pattern, signs] = detail::select(b.pattern(), b.signs(), keep);
  return SignedSparseMatrix(std::move(pattern), std::move(signs));
}

/// Applies one uniform row permutation, then one uniform column permutation.
inline SparseBinaryMatrix block_shuffle(const SparseBinaryMatrix& b, BlockRandomStream& rng) {
  const auto rows = rng.stream.permutation(b.n_rows());
  const auto cols = rng.stream.permutation(b.n_cols());
  return detail::permute(b, {}, rows, cols).first;
}

inline SignedSparseMatrix block_shuffle(const SignedSparseMatrix& b, BlockRandomStream& rng) {
  const auto rows = rng.stream.permutation(b.n_rows());
  const auto cols = rng.stream.permutation(b.n_cols());
  auto [pattern, signs] = detail::permute(b.pattern(), b.signs(), rows, cols);
  return SignedSparseMatrix(std::move(pattern), std::move(signs));
}

/// A block transform F(a_ij, B, ω_ij): maps the base matrix, the multiplier
/// for the block and the block's random stream to the block's content.
template <typename T>
concept BlockTransform =
    requires(const T& t, const SignedSparseMatrix& base, double a, BlockRandomStream& rng) {
      { t(base, a, rng) } -> std::same_as<SignedSparseMatrix>;
    };

/// Sh(drop(B)): dropout with keep probability a, then an optional shuffle.
struct DropoutShuffle {
  bool shuffle = true;
  SignedSparseMatrix operator()(const SignedSparseMatrix& base, double a,
                                BlockRandomStream& rng) const {
    auto kept = block_dropout(base, a, rng);
    return shuffle ? block_shuffle(kept, rng) : kept;
  }
};

/// Plain Kronecker block: B for non-zero a (optionally shuffled), empty
/// otherwise. The multiplier itself is written as the entry value.
struct KroneckerCopy {
  bool shuffle = false;
  SignedSparseMatrix operator()(const SignedSparseMatrix& base, double a,
                                BlockRandomStream& rng) const {
    if (a == 0.0) {
      SparseBinaryMatrix empty(base.n_rows(), base.n_cols(),
                               std::vector<Index>(base.n_rows() + 1, 0), {});
      return SignedSparseMatrix(std::move(empty), {});
    }
    return shuffle ? block_shuffle(base, rng) : base;
  }
};

// ---------------------------------------------------------------------------
// Block-parallel engine
// ---------------------------------------------------------------------------

/// Multipliers actually used by the engine. Randomized mode clamps entries
/// of a division-only R̂ into [0, 1] and counts them; a unit-interval R̂ must
/// already be in range.
struct PreparedMultipliers {
  DenseMatrix values;
  Index clamped = 0;
};

inline PreparedMultipliers prepare_multipliers(const ExpansionConfig& cfg) {
  const DenseMatrix& r = cfg.reduced.data;
  if (r.size() == 0) fail(ErrorKind::usage, "reduced matrix is empty");
  require_finite(r, "reduced matrix");
  PreparedMultipliers out{r, 0};
  if (cfg.mode == ExpansionMode::deterministic) return out;
  for (Eigen::Index p = 0; p < r.size(); ++p) {
    double& v = out.values.data()[p];
    if (v >= 0.0 && v <= 1.0) continue;
    if (cfg.reduced.rescale_mode == reducer::RescaleMode::unit_interval)
      fail(ErrorKind::usage, "randomized mode needs reduced entries in [0, 1]; found " +
                                 std::to_string(v));
    v = std::clamp(v, 0.0, 1.0);
    ++out.clamped;
  }
  return out;
}

inline std::string shard_name(ShardGranularity g, BlockId b) {
  char buf[64];
  if (g == ShardGranularity::per_block)
    std::snprintf(buf, sizeof buf, "part-%05llu-%05llu.tsv", static_cast<unsigned long long>(b.row),
                  static_cast<unsigned long long>(b.col));
  else
    std::snprintf(buf, sizeof buf, "part-%05llu.tsv", static_cast<unsigned long long>(b.row));
  return buf;
}

namespace detail {

// Buffers TSV lines, fingerprints them and flushes to the writer in chunks.
class LineEmitter {
 public:
  LineEmitter(ShardWriter& out, bool with_values) : out_(out), with_values_(with_values) {
    buffer_.reserve(kFlush + 128);
  }

  void entry(Index row, Index col, double value) {
    char tmp[32];
    buffer_.append(tmp, std::to_chars(tmp, tmp + sizeof tmp, row).ptr);
    buffer_ += '\t';
    buffer_.append(tmp, std::to_chars(tmp, tmp + sizeof tmp, col).ptr);
    if (with_values_) {
      buffer_ += '\t';
      buffer_.append(tmp, std::to_chars(tmp, tmp + sizeof tmp, value).ptr);
    }
    buffer_ += '\n';
    ++count_;
    if (buffer_.size() >= kFlush) flush();
  }

  void finish() {
    flush();
    out_.close();
  }

  Index count() const noexcept { return count_; }
  std::string fingerprint() const { return hash_.hex(); }

 private:
  static constexpr std::size_t kFlush = 1 << 20;

  void flush() {
    hash_.update(buffer_);
    out_.write(buffer_);
    buffer_.clear();
  }

  ShardWriter& out_;
  bool with_values_;
  std::string buffer_;
  Fnv1a64 hash_;
  Index count_ = 0;
};

struct SinkRoute {
  ShardSink* sink;
  std::int8_t sign;  // 0 routes every entry; ±1 routes entries of that sign
  std::string role;
};

// Runs fn(task) for task in [0, count) on up to `workers` threads. The first
// failure by task index is rethrown after all workers stop.
template <typename Fn>
void run_tasks(std::size_t count, unsigned workers, Fn&& fn) {
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> abort{false};
  auto work = [&] {
    for (;;) {
      const std::size_t t = next.fetch_add(1);
      if (t >= count || abort.load()) return;
      try {
        fn(t);
      } catch (...) {
        errors[t] = std::current_exception();
        abort.store(true);
      }
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(count)));
  if (n == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(n);
    for (unsigned w = 0; w < n; ++w) pool.emplace_back(work);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

/// Generic block expansion of a signed base matrix. Each route receives the
/// entries whose sign matches (all entries for sign 0), written at their
/// global offsets. Returns one manifest per route.
template <BlockTransform Transform>
std::vector<ExpansionManifest> expand_blocks(const ExpansionConfig& cfg,
                                             const SignedSparseMatrix& base,
                                             const Transform& transform,
                                             std::span<const detail::SinkRoute> routes) {
  const auto prepared = prepare_multipliers(cfg);
  const DenseMatrix& mult = prepared.values;
  const Index grid_rows = static_cast<Index>(mult.rows());
  const Index grid_cols = static_cast<Index>(mult.cols());
  const bool valued = cfg.mode == ExpansionMode::deterministic;

  std::vector<BlockId> blocks;
  if (cfg.only_blocks) {
    blocks = *cfg.only_blocks;
    std::sort(blocks.begin(), blocks.end());
    blocks.erase(std::unique(blocks.begin(), blocks.end()), blocks.end());
    for (const auto& b : blocks)
      if (b.row >= grid_rows || b.col >= grid_cols)
        fail(ErrorKind::usage, "block (" + std::to_string(b.row) + ", " + std::to_string(b.col) +
                                   ") is outside the reduced grid");
  } else {
    for (Index i = 0; i < grid_rows; ++i)
      for (Index j = 0; j < grid_cols; ++j) blocks.push_back({i, j});
  }

  // Tasks: one per block, or one per block row holding its blocks in order.
  std::vector<std::vector<std::size_t>> tasks;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    if (cfg.shard_granularity == ShardGranularity::per_block || tasks.empty() ||
        blocks[tasks.back().front()].row != blocks[b].row)
      tasks.emplace_back();
    tasks.back().push_back(b);
  }

  const std::size_t n_routes = routes.size();
  std::vector<Index> block_nnz(blocks.size() * n_routes, 0);
  std::vector<ShardRecord> shard_records(tasks.size() * n_routes);

  auto base_count = [&](std::int8_t sign) {
    if (sign == 0) return base.nnz();
    return static_cast<Index>(std::count(base.signs().begin(), base.signs().end(), sign));
  };

  auto make_manifests = [&](bool complete, const std::string& error) {
    std::vector<ExpansionManifest> out;
    for (std::size_t r = 0; r < n_routes; ++r) {
      ExpansionManifest m;
      m.role = routes[r].role;
      m.reduced_rows = grid_rows;
      m.reduced_cols = grid_cols;
      m.base_rows = base.n_rows();
      m.base_cols = base.n_cols();
      m.expanded_rows = grid_rows * base.n_rows();
      m.expanded_cols = grid_cols * base.n_cols();
      m.base_nnz = base_count(routes[r].sign);
      m.seed = cfg.master_seed;
      m.config = {{"mode", to_string(cfg.mode)},
                  {"shuffle", cfg.shuffle},
                  {"shard_granularity", to_string(cfg.shard_granularity)},
                  {"gzip", cfg.gzip},
                  {"rescale_mode", reducer::to_string(cfg.reduced.rescale_mode)},
                  {"reduced_seed", cfg.reduced.seed},
                  {"clamped_entries", prepared.clamped},
                  {"blocks_generated", blocks.size()},
                  {"blocks_total", grid_rows * grid_cols}};
      if (!cfg.run_config.is_null()) m.config["run"] = cfg.run_config;
      for (std::size_t b = 0; b < blocks.size(); ++b) {
        const double a = mult(static_cast<Eigen::Index>(blocks[b].row),
                              static_cast<Eigen::Index>(blocks[b].col));
        const Index nnz = block_nnz[b * n_routes + r];
        m.blocks.push_back({blocks[b].row, blocks[b].col, a, nnz});
        m.total_nnz += nnz;
        m.expected_nnz += valued ? (a != 0.0 ? static_cast<double>(m.base_nnz) : 0.0)
                                 : a * static_cast<double>(m.base_nnz);
      }
      for (std::size_t t = 0; t < tasks.size(); ++t)
        if (!shard_records[t * n_routes + r].file.empty())
          m.shards.push_back(shard_records[t * n_routes + r]);
      m.complete = complete;
      m.error = error;
      out.push_back(std::move(m));
    }
    return out;
  };

  auto run_task = [&](std::size_t t) {
    const auto& members = tasks[t];
    std::vector<SignedSparseMatrix> content;
    content.reserve(members.size());
    for (std::size_t b : members) {
      const auto id = blocks[b];
      auto rng = derive_block_stream(cfg.master_seed, id.row, id.col);
      const double a = mult(static_cast<Eigen::Index>(id.row), static_cast<Eigen::Index>(id.col));
      content.push_back(transform(base, a, rng));
    }
    for (std::size_t r = 0; r < n_routes; ++r) {
      const auto& route = routes[r];
      const std::string name =
          shard_name(cfg.shard_granularity, blocks[members.front()]) + route.sink->suffix();
      auto writer = route.sink->open(name);
      detail::LineEmitter emit(*writer, valued);
      // Rows of one block row share a global row range; walking local rows
      // outermost and blocks inside keeps (row, col) order across blocks.
      const Index local_rows = base.n_rows();
      for (Index k = 0; k < local_rows; ++k)
        for (std::size_t idx = 0; idx < members.size(); ++idx) {
          const auto id = blocks[members[idx]];
          const auto& blk = content[idx];
          const double a =
              mult(static_cast<Eigen::Index>(id.row), static_cast<Eigen::Index>(id.col));
          const Index row = id.row * base.n_rows() + k;
          const Index col0 = id.col * base.n_cols();
          const auto& pat = blk.pattern();
          for (Index p = pat.row_offsets()[k]; p < pat.row_offsets()[k + 1]; ++p) {
            const std::int8_t s = blk.signs()[p];
            if (route.sign != 0 && s != route.sign) continue;
            emit.entry(row, col0 + pat.col_indices()[p], a * (route.sign == 0 ? s : 1));
            ++block_nnz[members[idx] * n_routes + r];
          }
        }
      emit.finish();
      shard_records[t * n_routes + r] = {name, emit.count(), emit.fingerprint()};
    }
  };

  try {
    detail::run_tasks(tasks.size(), cfg.workers, run_task);
  } catch (const std::exception& e) {
    const auto partial = make_manifests(false, e.what());
    for (std::size_t r = 0; r < n_routes; ++r) {
      try {
        routes[r].sink->write_manifest(dump_manifest(partial[r]));
      } catch (...) {
      }
    }
    fail(ErrorKind::io, std::string("expansion aborted: ") + e.what());
  }

  auto manifests = make_manifests(true, {});
  for (std::size_t r = 0; r < n_routes; ++r)
    routes[r].sink->write_manifest(dump_manifest(manifests[r]));
  return manifests;
}

/// Expands one binary matrix. Randomized mode applies Sh(drop(R̂ᵢⱼ, B)) per
/// block; deterministic mode writes R̂ᵢⱼ·B with values.
inline ExpansionManifest expand(const ExpansionConfig& cfg, const SparseBinaryMatrix& b,
                                ShardSink& sink) {
  const auto base = SignedSparseMatrix::positive(b);
  const detail::SinkRoute route{&sink, 0, "expanded"};
  if (cfg.mode == ExpansionMode::deterministic)
    return expand_blocks(cfg, base, KroneckerCopy{cfg.shuffle}, std::span(&route, 1)).front();
  return expand_blocks(cfg, base, DropoutShuffle{cfg.shuffle}, std::span(&route, 1)).front();
}

inline ExpansionManifest expand_randomized(ExpansionConfig cfg, const SparseBinaryMatrix& b,
                                           ShardSink& sink) {
  cfg.mode = ExpansionMode::randomized;
  return expand(cfg, b, sink);
}

/// R_train − R_test as one signed matrix. Supports must be disjoint.
inline SignedSparseMatrix signed_union(const SparseBinaryMatrix& train,
                                       const SparseBinaryMatrix& test) {
  if (train.n_rows() != test.n_rows() || train.n_cols() != test.n_cols())
    fail(ErrorKind::data, "train and test matrices differ in shape");
  std::vector<Index> offsets(train.n_rows() + 1, 0);
  std::vector<Index> cols;
  std::vector<std::int8_t> signs;
  cols.reserve(train.nnz() + test.nnz());
  signs.reserve(train.nnz() + test.nnz());
  for (Index i = 0; i < train.n_rows(); ++i) {
    auto a = train.row(i);
    auto b = test.row(i);
    std::size_t x = 0, y = 0;
    while (x < a.size() || y < b.size()) {
      if (y == b.size() || (x < a.size() && a[x] < b[y])) {
        cols.push_back(a[x++]);
        signs.push_back(1);
      } else if (x == a.size() || b[y] < a[x]) {
        cols.push_back(b[y++]);
        signs.push_back(-1);
      } else {
        fail(ErrorKind::data, "train and test overlap at (" + std::to_string(i) + ", " +
                                  std::to_string(a[x]) + ")");
      }
    }
    offsets[i + 1] = cols.size();
  }
  return SignedSparseMatrix(
      SparseBinaryMatrix(train.n_rows(), train.n_cols(), std::move(offsets), std::move(cols)),
      std::move(signs));
}

struct SplitManifests {
  ExpansionManifest train;
  ExpansionManifest test;
};

/// Expands train and test through one randomized pipeline: the test entries
/// carry sign −1, so both sets see identical dropout draws and permutations.
/// Survivors are routed by sign, which keeps the expanded supports disjoint.
inline SplitManifests expand_split(const ExpansionConfig& cfg, const SparseBinaryMatrix& train,
                                   const SparseBinaryMatrix& test, ShardSink& train_sink,
                                   ShardSink& test_sink) {
  const auto base = signed_union(train, test);
  const detail::SinkRoute routes[] = {{&train_sink, 1, "train"}, {&test_sink, -1, "test"}};
  std::vector<ExpansionManifest> out;
  if (cfg.mode == ExpansionMode::deterministic)
    out = expand_blocks(cfg, base, KroneckerCopy{cfg.shuffle}, routes);
  else
    out = expand_blocks(cfg, base, DropoutShuffle{cfg.shuffle}, routes);
  return {std::move(out[0]), std::move(out[1])};
}

}  // namespace fractex::expander
