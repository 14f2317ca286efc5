#include "fractex/expander.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "support/oracles.hpp"
#include "support/shards.hpp"

using namespace fractex;
using namespace fractex::expander;

namespace {

reducer::ReducedMatrix reduced_of(DenseMatrix m,
                                  reducer::RescaleMode mode = reducer::RescaleMode::unit_interval) {
  reducer::ReducedMatrix r;
  r.data = std::move(m);
  r.rescale_mode = mode;
  return r;
}

ExpansionConfig config(DenseMatrix m, ExpansionMode mode, bool shuffle, std::uint64_t seed) {
  ExpansionConfig cfg;
  cfg.reduced = reduced_of(std::move(m));
  cfg.mode = mode;
  cfg.shuffle = shuffle;
  cfg.master_seed = seed;
  return cfg;
}

DenseMatrix constant(Eigen::Index r, Eigen::Index c, double v) { return DenseMatrix::Constant(r, c, v); }

std::vector<shards::Entry> as_entries(const SparseBinaryMatrix& m, double v = 1.0) {
  std::vector<shards::Entry> out;
  for (const auto& t : m.triplets()) out.push_back({t.row, t.col, v});
  return out;
}

}  // namespace

TEST(Kronecker, IdentityFactorRepeatsBlockOnDiagonal) {
  auto b = from_triplets(std::vector<Index>{0, 1}, std::vector<Index>{1, 0}, 2, 3);
  auto entries = kron_entries(DenseMatrix::Identity(2, 2), b);
  std::vector<ValuedEntry> expected{{0, 1, 1}, {1, 0, 1}, {2, 4, 1}, {3, 3, 1}};
  EXPECT_EQ(entries, expected);
}

TEST(Kronecker, ScalarFactorScalesValues) {
  DenseMatrix two(1, 1);
  two << 2;
  auto id = from_triplets(std::vector<Index>{0, 1, 2}, std::vector<Index>{0, 1, 2}, 3, 3);
  for (const auto& e : kron_entries(two, id)) {
    EXPECT_EQ(e.row, e.col);
    EXPECT_EQ(e.value, 2.0);
  }
}

TEST(Kronecker, MatchesDenseOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto a = oracle::random_dense(3, 4, seed);
    const auto b = oracle::random_sparse(5, 6, 0.3, seed + 50);
    const auto k = oracle::kron(a, to_dense(b));
    DenseMatrix got = DenseMatrix::Zero(k.rows(), k.cols());
    for (const auto& e : kron_entries(a, b))
      got(static_cast<Eigen::Index>(e.row), static_cast<Eigen::Index>(e.col)) = e.value;
    EXPECT_EQ(got, k);
  }
}

TEST(BlockDropout, KeepAllAndKeepNone) {
  auto b = oracle::random_sparse(20, 30, 0.2, 1);
  auto s1 = derive_block_stream(1, 0, 0);
  EXPECT_EQ(block_dropout(b, 1.0, s1), b);
  auto s0 = derive_block_stream(1, 0, 0);
  EXPECT_EQ(block_dropout(b, 0.0, s0).nnz(), 0u);
  auto bad = derive_block_stream(1, 0, 0);
  EXPECT_THROW(block_dropout(b, 1.5, bad), Error);
}

TEST(BlockDropout, KeptEntriesAreASubset) {
  auto b = oracle::random_sparse(30, 30, 0.3, 2);
  auto s = derive_block_stream(5, 1, 2);
  auto kept = block_dropout(b, 0.4, s);
  for (const auto& t : kept.triplets()) EXPECT_TRUE(b.contains(t.row, t.col));
}

TEST(BlockDropout, CountsWithinBinomialBound) {
  auto b = oracle::random_sparse(50, 50, 0.2, 3);
  const double n = static_cast<double>(b.nnz());
  const double p = 0.3;
  const double sigma = std::sqrt(n * p * (1 - p));
  int within = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto s = derive_block_stream(seed, 0, 0);
    const double kept = static_cast<double>(block_dropout(b, p, s).nnz());
    within += std::abs(kept - n * p) <= 4 * sigma;
  }
  EXPECT_GE(within, 99);
}

TEST(BlockDropout, SignedKeepsSigns) {
  auto pattern = oracle::random_sparse(10, 10, 0.4, 4);
  std::vector<std::int8_t> signs(pattern.nnz());
  for (std::size_t p = 0; p < signs.size(); ++p) signs[p] = p % 3 == 0 ? -1 : 1;
  SignedSparseMatrix m(pattern, signs);
  auto s = derive_block_stream(2, 0, 0);
  auto kept = block_dropout(m, 0.5, s);
  // Same mask as the unsigned operator on the same stream.
  auto s2 = derive_block_stream(2, 0, 0);
  EXPECT_EQ(kept.pattern(), block_dropout(pattern, 0.5, s2));
  for (Index i = 0; i < kept.pattern().n_rows(); ++i)
    for (Index p = kept.pattern().row_offsets()[i]; p < kept.pattern().row_offsets()[i + 1]; ++p) {
      const Index c = kept.pattern().col_indices()[p];
      const auto row = pattern.row(i);
      const auto pos = std::lower_bound(row.begin(), row.end(), c) - row.begin();
      EXPECT_EQ(kept.signs()[p], signs[pattern.row_offsets()[i] + pos]);
    }
}

TEST(BlockShuffle, SingleCellUnchanged) {
  auto one = from_triplets(std::vector<Index>{0}, std::vector<Index>{0}, 1, 1);
  auto s = derive_block_stream(3, 0, 0);
  EXPECT_EQ(block_shuffle(one, s), one);
}

TEST(BlockShuffle, PreservesSumMultisetsAndSpectrum) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto b = oracle::random_sparse(12, 9, 0.3, 10 + seed);
    auto s = derive_block_stream(seed, 1, 1);
    auto sh = block_shuffle(b, s);
    EXPECT_EQ(sh.nnz(), b.nnz());
    EXPECT_EQ(oracle::sorted(row_sums(sh)), oracle::sorted(row_sums(b)));
    EXPECT_EQ(oracle::sorted(col_sums(sh)), oracle::sorted(col_sums(b)));
    const auto x = oracle::singular_values(to_dense(sh));
    const auto y = oracle::singular_values(to_dense(b));
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(x[i], y[i], 1e-10);
  }
}

TEST(BlockShuffle, DeterministicPerStream) {
  auto b = oracle::random_sparse(15, 15, 0.2, 7);
  auto s1 = derive_block_stream(8, 2, 3);
  auto s2 = derive_block_stream(8, 2, 3);
  EXPECT_EQ(block_shuffle(b, s1), block_shuffle(b, s2));
}

TEST(Expand, UnitMultiplierWithoutShuffleReproducesBase) {
  auto b = oracle::random_sparse(9, 11, 0.3, 5);
  for (auto mode : {ExpansionMode::deterministic, ExpansionMode::randomized}) {
    MemorySink sink;
    auto m = expand(config(constant(1, 1, 1.0), mode, false, 3), b, sink);
    EXPECT_EQ(shards::collect(sink), as_entries(b));
    EXPECT_EQ(m.total_nnz, b.nnz());
    EXPECT_TRUE(m.complete);
  }
}

TEST(Expand, ShapeLaw) {
  auto b = oracle::random_sparse(7, 5, 0.3, 6);
  MemorySink sink;
  auto m = expand(config(constant(3, 4, 0.5), ExpansionMode::randomized, true, 1), b, sink);
  EXPECT_EQ(m.expanded_rows, 21u);
  EXPECT_EQ(m.expanded_cols, 20u);
  EXPECT_EQ(m.blocks.size(), 12u);
  EXPECT_EQ(sink.shards().size(), 12u);
  for (const auto& e : shards::collect(sink)) {
    EXPECT_LT(e.row, 21u);
    EXPECT_LT(e.col, 20u);
  }
}

TEST(Expand, DeterministicEqualsKroneckerOracle) {
  const auto a = oracle::random_dense(3, 2, 9);
  const auto b = oracle::random_sparse(6, 4, 0.4, 9);
  MemorySink sink;
  expand(config(a, ExpansionMode::deterministic, false, 0), b, sink);
  const auto k = oracle::kron(a, to_dense(b));
  std::vector<shards::Entry> expected;
  for (Eigen::Index i = 0; i < k.rows(); ++i)
    for (Eigen::Index j = 0; j < k.cols(); ++j)
      if (k(i, j) != 0.0) expected.push_back({static_cast<Index>(i), static_cast<Index>(j), k(i, j)});
  EXPECT_EQ(shards::collect(sink), expected);
}

TEST(Expand, ExpectedNnzIsMultiplierWeighted) {
  auto b = oracle::random_sparse(10, 10, 0.3, 2);
  DenseMatrix a(2, 2);
  a << 0.1, 0.2, 0.3, 0.4;
  MemorySink sink;
  auto m = expand(config(a, ExpansionMode::randomized, true, 4), b, sink);
  EXPECT_NEAR(m.expected_nnz, 1.0 * static_cast<double>(b.nnz()), 1e-9);
}

TEST(Expand, ZeroMultiplierBlocksAreStillWritten) {
  auto b = oracle::random_sparse(5, 5, 0.4, 3);
  DenseMatrix a(1, 2);
  a << 0.0, 1.0;
  for (auto mode : {ExpansionMode::deterministic, ExpansionMode::randomized}) {
    MemorySink sink;
    auto m = expand(config(a, mode, true, 1), b, sink);
    ASSERT_EQ(sink.shards().count("part-00000-00000.tsv"), 1u);
    EXPECT_TRUE(sink.shards().at("part-00000-00000.tsv").empty());
    EXPECT_EQ(m.blocks[0].nnz, 0u);
    EXPECT_EQ(m.blocks[1].nnz, b.nnz());
  }
}

TEST(Expand, ByteIdenticalAcrossWorkerCounts) {
  auto b = oracle::random_sparse(40, 30, 0.1, 12);
  const DenseMatrix a = oracle::random_dense(4, 5, 12).array().abs().min(1.0).matrix();
  for (auto g : {ShardGranularity::per_block, ShardGranularity::per_block_row}) {
    std::vector<MemorySink> sinks(3);
    unsigned workers[] = {1, 4, 16};
    for (int w = 0; w < 3; ++w) {
      auto cfg = config(a, ExpansionMode::randomized, true, 77);
      cfg.workers = workers[w];
      cfg.shard_granularity = g;
      expand(cfg, b, sinks[w]);
    }
    for (int w = 1; w < 3; ++w) {
      EXPECT_EQ(sinks[w].shards(), sinks[0].shards());
      EXPECT_EQ(sinks[w].manifest(), sinks[0].manifest());
    }
  }
}

TEST(Expand, SeedChangesOutput) {
  auto b = oracle::random_sparse(30, 30, 0.2, 13);
  MemorySink x, y;
  expand(config(constant(2, 2, 0.5), ExpansionMode::randomized, true, 1), b, x);
  expand(config(constant(2, 2, 0.5), ExpansionMode::randomized, true, 2), b, y);
  EXPECT_NE(x.shards(), y.shards());
}

TEST(Expand, BlockRowShardsAreSortedAndComplete) {
  auto b = oracle::random_sparse(8, 6, 0.3, 14);
  auto cfg = config(constant(2, 3, 1.0), ExpansionMode::deterministic, false, 0);
  cfg.shard_granularity = ShardGranularity::per_block_row;
  MemorySink sink;
  auto m = expand(cfg, b, sink);
  ASSERT_EQ(sink.shards().size(), 2u);
  EXPECT_TRUE(sink.shards().count("part-00000.tsv"));
  EXPECT_TRUE(sink.shards().count("part-00001.tsv"));
  for (const auto& [name, content] : sink.shards()) {
    std::vector<std::pair<Index, Index>> seen;
    for_each_shard_line(content, name, [&](const ShardEntry& e) { seen.emplace_back(e.row, e.col); });
    EXPECT_TRUE(std::is_sorted(seen.begin(), seen.end()));
    EXPECT_EQ(seen.size(), 3 * b.nnz());
  }
  EXPECT_EQ(m.shards.size(), 2u);
}

TEST(Expand, OnlyBlocksRestrictsGeneration) {
  auto b = oracle::random_sparse(6, 6, 0.3, 15);
  auto cfg = config(constant(4, 4, 0.5), ExpansionMode::randomized, true, 3);
  cfg.only_blocks = std::vector<BlockId>{{3, 1}, {0, 2}};
  MemorySink sink;
  auto m = expand(cfg, b, sink);
  ASSERT_EQ(m.blocks.size(), 2u);
  EXPECT_EQ(m.blocks[0].block_row, 0u);
  EXPECT_EQ(m.blocks[1].block_row, 3u);
  EXPECT_EQ(m.config["blocks_generated"], 2);
  EXPECT_EQ(m.config["blocks_total"], 16);

  // The subset matches the same blocks of a full run.
  MemorySink full;
  auto all = config(constant(4, 4, 0.5), ExpansionMode::randomized, true, 3);
  expand(all, b, full);
  EXPECT_EQ(sink.shards().at("part-00003-00001.tsv"), full.shards().at("part-00003-00001.tsv"));
}

TEST(Expand, GzipShardsInflateToPlainContent) {
  const auto root = std::filesystem::temp_directory_path() / "fractex_gzip_test";
  std::filesystem::remove_all(root);
  auto b = oracle::random_sparse(10, 10, 0.3, 16);
  auto cfg = config(constant(2, 2, 0.7), ExpansionMode::randomized, true, 5);
  MemorySink plain;
  auto m_plain = expand(cfg, b, plain);
  cfg.gzip = true;
  DirectorySink gz(root / "a", true), gz2(root / "b", true);
  auto m_gz = expand(cfg, b, gz);
  expand(cfg, b, gz2);
  ASSERT_EQ(m_gz.shards.size(), m_plain.shards.size());
  for (std::size_t s = 0; s < m_gz.shards.size(); ++s) {
    EXPECT_EQ(m_gz.shards[s].file, m_plain.shards[s].file + ".gz");
    EXPECT_EQ(m_gz.shards[s].fnv1a64, m_plain.shards[s].fnv1a64);
    EXPECT_EQ(read_shard_file(root / "a" / m_gz.shards[s].file),
              plain.shards().at(m_plain.shards[s].file));
    std::ifstream x(root / "a" / m_gz.shards[s].file, std::ios::binary),
        y(root / "b" / m_gz.shards[s].file, std::ios::binary);
    EXPECT_EQ(std::string(std::istreambuf_iterator<char>(x), {}),
              std::string(std::istreambuf_iterator<char>(y), {}));
  }
  std::filesystem::remove_all(root);
}

TEST(Expand, FailureLeavesIncompleteManifest) {
  auto b = oracle::random_sparse(6, 6, 0.3, 17);
  MemorySink sink;
  sink.fail_on = "part-00001-00000.tsv";
  try {
    expand(config(constant(2, 2, 0.5), ExpansionMode::randomized, true, 1), b, sink);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::io);
  }
  auto m = parse_manifest(sink.manifest());
  EXPECT_FALSE(m.complete);
  EXPECT_NE(m.error.find("injected"), std::string::npos);
}

TEST(Expand, MultiplierRangeHandling) {
  auto b = oracle::random_sparse(5, 5, 0.4, 18);
  DenseMatrix a(1, 2);
  a << -0.25, 1.5;
  MemorySink sink;
  auto unit = config(a, ExpansionMode::randomized, true, 1);
  EXPECT_THROW(expand(unit, b, sink), Error);

  auto paper = unit;
  paper.reduced.rescale_mode = reducer::RescaleMode::paper_range_only;
  MemorySink ok;
  auto m = expand(paper, b, ok);
  EXPECT_EQ(m.config["clamped_entries"], 2);
  EXPECT_EQ(m.blocks[0].keep_prob, 0.0);
  EXPECT_EQ(m.blocks[1].keep_prob, 1.0);

  // Deterministic mode writes values as they are.
  MemorySink det;
  auto d = expand(config(a, ExpansionMode::deterministic, false, 0), b, det);
  EXPECT_EQ(d.blocks[0].keep_prob, -0.25);
}

TEST(SignedUnion, RejectsOverlapAndShapeMismatch) {
  auto train = from_triplets(std::vector<Index>{0, 1}, std::vector<Index>{0, 1}, 2, 2);
  auto test = from_triplets(std::vector<Index>{1}, std::vector<Index>{1}, 2, 2);
  try {
    signed_union(train, test);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("(1, 1)"), std::string::npos);
  }
  auto wide = from_triplets(std::vector<Index>{0}, std::vector<Index>{2}, 2, 3);
  EXPECT_THROW(signed_union(train, wide), Error);

  auto ok = from_triplets(std::vector<Index>{0}, std::vector<Index>{1}, 2, 2);
  auto u = signed_union(train, ok);
  EXPECT_EQ(u.pattern().nnz(), 3u);
  EXPECT_EQ(std::vector<std::int8_t>(u.signs().begin(), u.signs().end()),
            (std::vector<std::int8_t>{1, -1, 1}));
}

TEST(ExpandSplit, SupportsDisjointAndUnionMatchesUnsignedPipeline) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto all = oracle::random_sparse(12, 10, 0.35, 300 + seed);
    // Hold out every third non-zero.
    std::vector<Index> tr_r, tr_c, te_r, te_c;
    std::size_t p = 0;
    for (const auto& t : all.triplets()) {
      auto& r = (p % 3 == 0) ? te_r : tr_r;
      auto& c = (p % 3 == 0) ? te_c : tr_c;
      r.push_back(t.row);
      c.push_back(t.col);
      ++p;
    }
    auto train = from_triplets(tr_r, tr_c, 12, 10);
    auto test = from_triplets(te_r, te_c, 12, 10);
    const auto cfg = config(constant(3, 2, 0.6), ExpansionMode::randomized, true, seed);
    MemorySink tr, te, un;
    auto sm = expand_split(cfg, train, test, tr, te);
    expand(cfg, all, un);

    const auto a = shards::collect(tr);
    const auto b = shards::collect(te);
    auto merged = shards::positions(a);
    const auto tp = shards::positions(b);
    for (const auto& x : tp) EXPECT_FALSE(std::binary_search(merged.begin(), merged.end(), x));
    merged.insert(merged.end(), tp.begin(), tp.end());
    std::sort(merged.begin(), merged.end());
    EXPECT_EQ(merged, shards::positions(shards::collect(un)));
    EXPECT_EQ(sm.train.role, "train");
    EXPECT_EQ(sm.test.role, "test");
    EXPECT_EQ(sm.train.base_nnz, train.nnz());
    EXPECT_EQ(sm.test.base_nnz, test.nnz());
  }
}

TEST(Manifest, RoundTripsAndEchoesRunConfig) {
  auto b = oracle::random_sparse(6, 6, 0.3, 19);
  auto cfg = config(constant(2, 2, 0.5), ExpansionMode::randomized, true, 9);
  cfg.run_config = {{"rows", 2}, {"cols", 2}};
  MemorySink sink;
  auto m = expand(cfg, b, sink);
  auto back = parse_manifest(sink.manifest());
  EXPECT_EQ(dump_manifest(back), sink.manifest());
  EXPECT_EQ(back.config["run"]["rows"], 2);
  EXPECT_EQ(back.seed, 9u);
  EXPECT_EQ(back.shards, m.shards);
}
