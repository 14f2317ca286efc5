#include "fractex/reducer.hpp"

#include <gtest/gtest.h>

#include <sstream>

#include "support/oracles.hpp"

using namespace fractex;
using namespace fractex::reducer;

namespace {

SparseBinaryMatrix identity(Index n) {
  std::vector<Index> idx(n);
  for (Index i = 0; i < n; ++i) idx[i] = i;
  return from_triplets(idx, idx, n, n);
}

DenseMatrix row_vector(std::initializer_list<double> v) {
  DenseMatrix m(1, static_cast<Eigen::Index>(v.size()));
  Eigen::Index j = 0;
  for (double x : v) m(0, j++) = x;
  return m;
}

}  // namespace

TEST(Rescale, UnitInterval) {
  auto out = rescale(row_vector({-1, 0, 1}), RescaleMode::unit_interval);
  EXPECT_EQ(out, row_vector({0, 0.5, 1}));
  EXPECT_EQ(rescale(row_vector({2, 4}), RescaleMode::unit_interval), row_vector({0, 1}));
}

TEST(Rescale, RangeOnly) {
  auto out = rescale(row_vector({-1, 0, 1}), RescaleMode::paper_range_only);
  EXPECT_EQ(out, row_vector({-0.5, 0, 0.5}));
}

TEST(Rescale, ConstantMatrixIsAnError) {
  try {
    rescale(DenseMatrix::Constant(2, 3, 0.7), RescaleMode::unit_interval);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::numeric);
  }
}

TEST(Rescale, UnitModeAttainsBothEndpoints) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto out = rescale(oracle::random_dense(5, 7, seed) * 13.7, RescaleMode::unit_interval);
    EXPECT_EQ(out.minCoeff(), 0.0);
    EXPECT_EQ(out.maxCoeff(), 1.0);
  }
}

TEST(RescaleMode, Parsing) {
  EXPECT_EQ(parse_rescale_mode("unit"), RescaleMode::unit_interval);
  EXPECT_EQ(parse_rescale_mode("paper"), RescaleMode::paper_range_only);
  EXPECT_EQ(parse_rescale_mode("paper_range_only"), RescaleMode::paper_range_only);
  EXPECT_THROW(parse_rescale_mode("minmax"), Error);
}

TEST(BuildReduced, IdentityKeepsUnitSpectrum) {
  auto rm = build_reduced(identity(100), 4, 4, 1);
  ASSERT_EQ(rm.source_spectrum.size(), 4u);
  for (double s : rm.source_spectrum) EXPECT_NEAR(s, 1.0, 1e-10);
  const auto sv = oracle::singular_values(rm.unscaled);
  for (double s : sv) EXPECT_NEAR(s, 1.0, 1e-8);
}

TEST(BuildReduced, PreservesLeadingSpectrum) {
  auto r = oracle::random_sparse(60, 80, 0.15, 3);
  const auto ref = oracle::singular_values(to_dense(r));
  auto rm = build_reduced(r, 6, 9, 11);
  EXPECT_EQ(rm.data.rows(), 6);
  EXPECT_EQ(rm.data.cols(), 9);
  const auto got = oracle::singular_values(rm.unscaled);
  for (int i = 0; i < 6; ++i) EXPECT_LE(std::abs(got[i] - ref[i]) / ref[i], 1e-6) << i;
}

TEST(BuildReduced, RescaledEntriesInUnitInterval) {
  auto rm = build_reduced(oracle::random_sparse(40, 50, 0.2, 8), 4, 8, 2);
  EXPECT_EQ(rm.data.minCoeff(), 0.0);
  EXPECT_EQ(rm.data.maxCoeff(), 1.0);
  EXPECT_EQ(rm.rescale_mode, RescaleMode::unit_interval);
}

TEST(BuildReduced, RangeOnlyModeDividesByRange) {
  auto r = oracle::random_sparse(40, 50, 0.2, 8);
  auto unit = build_reduced(r, 4, 8, 2, RescaleMode::unit_interval);
  auto range_only = build_reduced(r, 4, 8, 2, RescaleMode::paper_range_only);
  EXPECT_EQ(unit.unscaled, range_only.unscaled);
  const double span = range_only.unscaled.maxCoeff() - range_only.unscaled.minCoeff();
  EXPECT_LE(oracle::max_abs_diff(range_only.data, range_only.unscaled / span), 1e-15);
}

TEST(BuildReduced, RejectsNonShrinkingDimensions) {
  auto r = oracle::random_sparse(10, 12, 0.3, 1);
  EXPECT_THROW(build_reduced(r, 10, 4, 1), Error);
  EXPECT_THROW(build_reduced(r, 4, 12, 1), Error);
  EXPECT_THROW(build_reduced(r, 0, 4, 1), Error);
}

TEST(BuildReduced, DeterministicPerSeed) {
  auto r = oracle::random_sparse(30, 40, 0.2, 5);
  EXPECT_EQ(build_reduced(r, 3, 5, 7).data, build_reduced(r, 3, 5, 7).data);
}

TEST(SketchReduced, FullSampleOfIdentityIsIdentity) {
  auto rm = sketch_reduced(identity(3), 3, 3, 9);
  EXPECT_EQ(rm.data, DenseMatrix(DenseMatrix::Identity(3, 3)));
}

TEST(SketchReduced, EntriesComeFromInput) {
  auto r = oracle::random_sparse(30, 30, 0.5, 6);
  auto rm = sketch_reduced(r, 5, 7, 3);
  EXPECT_EQ(rm.data.rows(), 5);
  EXPECT_EQ(rm.data.cols(), 7);
  for (Eigen::Index p = 0; p < rm.data.size(); ++p) {
    const double v = rm.data.data()[p];
    EXPECT_TRUE(v == 0.0 || v == 1.0);
  }
  EXPECT_EQ(sketch_reduced(r, 5, 7, 3).data, rm.data);
}

TEST(SketchReduced, ConstantSubmatrixKeptAsIs) {
  SparseBinaryMatrix zero(4, 4, std::vector<Index>(5, 0), {});
  auto rm = sketch_reduced(zero, 2, 2, 1);
  EXPECT_EQ(rm.data, DenseMatrix(DenseMatrix::Zero(2, 2)));
  EXPECT_THROW(sketch_reduced(zero, 5, 2, 1), Error);
}

TEST(ReducedText, RoundTripsExactly) {
  auto rm = build_reduced(oracle::random_sparse(20, 25, 0.3, 4), 3, 4, 99);
  std::stringstream s;
  write_reduced(s, rm);
  auto back = read_reduced(s);
  EXPECT_EQ(back.data, rm.data);
  EXPECT_EQ(back.seed, 99u);
  EXPECT_EQ(back.rescale_mode, RescaleMode::unit_interval);
}

TEST(ReducedText, RejectsMalformedTables) {
  std::stringstream truncated("2 2 unit_interval 1\n0 1\n0.5\n");
  EXPECT_THROW(read_reduced(truncated), Error);
  std::stringstream bad("1 2 unit_interval 1\n0 x\n");
  EXPECT_THROW(read_reduced(bad), Error);
  std::stringstream header("two 2\n");
  EXPECT_THROW(read_reduced(header), Error);
}
