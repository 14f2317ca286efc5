#pragma once

// Construction of the small multiplier matrix R̂ that drives the expansion.
//
// The spectral reducer keeps R's k = min(m', n') leading singular values
// exactly: the singular vectors are shrunk by area averaging, pulled back
// onto the nearest orthonormal frames, and recombined with the original Σ.
// The sketch reducer is the cheap alternative: a uniformly sampled submatrix.

#include <algorithm>
#include <cstdint>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "fractex/dense.hpp"
#include "fractex/error.hpp"
#include "fractex/rng.hpp"
#include "fractex/sparse.hpp"
#include "fractex/spectral.hpp"

namespace fractex::reducer {

enum class RescaleMode {
  unit_interval,     // (x - min) / (max - min), lands exactly on [0, 1]
  paper_range_only,  // x / (max - min), no shift
};

inline const char* to_string(RescaleMode mode) {
  return mode == RescaleMode::unit_interval ? "unit_interval" : "paper_range_only";
}

inline RescaleMode parse_rescale_mode(const std::string& text) {
  if (text == "unit_interval" || text == "unit") return RescaleMode::unit_interval;
  if (text == "paper_range_only" || text == "paper") return RescaleMode::paper_range_only;
  fail(ErrorKind::usage, "unknown rescale mode '" + text + "' (expected unit or paper)");
}

struct ReducedMatrix {
  DenseMatrix data;                   // rescaled R̂
  DenseMatrix unscaled;               // R̂ before rescaling
  DenseMatrix u_tilde, v_tilde;       // orthonormal frames (spectral method only)
  RescaleMode rescale_mode = RescaleMode::unit_interval;
  std::vector<double> source_spectrum;
  std::uint64_t seed = 0;
};

inline DenseMatrix rescale(const DenseMatrix& m, RescaleMode mode) {
  if (m.size() == 0) fail(ErrorKind::numeric, "rescale: empty matrix");
  require_finite(m, "rescale input");
  const double hi = m.maxCoeff();
  const double lo = m.minCoeff();
  if (!(hi > lo)) fail(ErrorKind::numeric, "rescale: constant matrix has a degenerate range");
  const double span = hi - lo;
  if (mode == RescaleMode::paper_range_only) return (m / span).eval();
  DenseMatrix out = ((m.array() - lo) / span).matrix();
  // Pin the extremes so both endpoints are attained exactly.
  for (Eigen::Index p = 0; p < m.size(); ++p) {
    if (m.data()[p] == hi) out.data()[p] = 1.0;
    if (m.data()[p] == lo) out.data()[p] = 0.0;
  }
  return out;
}

/// Spectral reduction of R down to m'×n'.
inline ReducedMatrix build_reduced(const SparseBinaryMatrix& r, Index m_prime, Index n_prime,
                                   std::uint64_t seed,
                                   RescaleMode mode = RescaleMode::unit_interval,
                                   spectral::SvdParams svd_params = {}) {
  if (m_prime == 0 || n_prime == 0)
    fail(ErrorKind::usage, "reduced dimensions must be positive");
  if (m_prime >= r.n_rows() || n_prime >= r.n_cols())
    fail(ErrorKind::usage, "reduced dimensions " + std::to_string(m_prime) + "x" +
                               std::to_string(n_prime) + " must be smaller than " +
                               std::to_string(r.n_rows()) + "x" + std::to_string(r.n_cols()));
  const Index k = std::min(m_prime, n_prime);

  const auto svd = spectral::truncated_svd(r, k, seed, svd_params);
  const auto kk = static_cast<Index>(k);
  const DenseMatrix u_bar = spectral::area_resize(svd.U, m_prime, kk);
  const DenseMatrix v_bar = spectral::area_resize(svd.V, kk, n_prime);
  const DenseMatrix u_tilde = spectral::orthogonalize_columns(u_bar);
  const DenseMatrix v_tilde = spectral::orthogonalize_rows(v_bar);

  const Eigen::Map<const Eigen::VectorXd> sigma(svd.sigma.data(),
                                                static_cast<Eigen::Index>(svd.sigma.size()));
  ReducedMatrix out;
  out.unscaled = u_tilde * sigma.asDiagonal() * v_tilde;
  out.u_tilde = u_tilde;
  out.v_tilde = v_tilde;
  out.data = rescale(out.unscaled, mode);
  out.rescale_mode = mode;
  out.source_spectrum = svd.sigma;
  out.seed = seed;
  return out;
}

/// Uniformly samples m' rows and n' columns without replacement (kept in
/// ascending order) and rescales the submatrix onto [0, 1]. A constant
/// submatrix of a binary matrix is already in [0, 1] and is kept as is.
inline ReducedMatrix sketch_reduced(const SparseBinaryMatrix& r, Index m_prime, Index n_prime,
                                    std::uint64_t seed) {
  if (m_prime == 0 || n_prime == 0)
    fail(ErrorKind::usage, "sketch dimensions must be positive");
  if (m_prime > r.n_rows() || n_prime > r.n_cols())
    fail(ErrorKind::usage, "sketch dimensions exceed the input matrix");

  RandomStream rng(derive_stream_seed(StreamPurpose::sketch_sampling, seed, 0, 0));
  auto sample = [&](Index population, Index count) {
    std::vector<Index> pool(population);
    for (Index p = 0; p < population; ++p) pool[p] = p;
    for (Index p = 0; p < count; ++p) std::swap(pool[p], pool[p + rng.bounded(population - p)]);
    pool.resize(count);
    std::sort(pool.begin(), pool.end());
    return pool;
  };
  const auto rows = sample(r.n_rows(), m_prime);
  const auto cols = sample(r.n_cols(), n_prime);

  DenseMatrix sub = DenseMatrix::Zero(static_cast<Eigen::Index>(m_prime),
                                      static_cast<Eigen::Index>(n_prime));
  for (Index a = 0; a < m_prime; ++a)
    for (Index b = 0; b < n_prime; ++b)
      if (r.contains(rows[a], cols[b]))
        sub(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = 1.0;

  ReducedMatrix out;
  out.unscaled = sub;
  out.data = sub.maxCoeff() > sub.minCoeff() ? rescale(sub, RescaleMode::unit_interval) : sub;
  out.rescale_mode = RescaleMode::unit_interval;
  auto sigma = spectral::singular_values(sub);
  sigma.resize(std::min(m_prime, n_prime));
  out.source_spectrum = std::move(sigma);
  out.seed = seed;
  return out;
}

// Text table: header `m' n' rescale_mode seed`, then m' rows of n'
// space-separated values at 17 significant digits.

inline void write_reduced(std::ostream& out, const ReducedMatrix& rm) {
  out << rm.data.rows() << ' ' << rm.data.cols() << ' ' << to_string(rm.rescale_mode) << ' '
      << rm.seed << '\n';
  for (Eigen::Index i = 0; i < rm.data.rows(); ++i) {
    for (Eigen::Index j = 0; j < rm.data.cols(); ++j) {
      if (j) out << ' ';
      write_exact(out, rm.data(i, j));
    }
    out << '\n';
  }
}

/// Reads a table written by write_reduced. Only the rescaled values are
/// stored, so `unscaled` and `source_spectrum` come back empty.
inline ReducedMatrix read_reduced(std::istream& in) {
  ReducedMatrix rm;
  Index rows = 0, cols = 0;
  std::string mode;
  if (!(in >> rows >> cols >> mode >> rm.seed))
    fail(ErrorKind::data, "reduced matrix header must be `rows cols rescale_mode seed`");
  if (rows == 0 || cols == 0) fail(ErrorKind::data, "reduced matrix has an empty dimension");
  rm.rescale_mode = parse_rescale_mode(mode);
  rm.data.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index p = 0; p < rm.data.size(); ++p) {
    std::string token;
    if (!(in >> token)) fail(ErrorKind::data, "reduced matrix table is truncated");
    try {
      std::size_t used = 0;
      rm.data.data()[p] = std::stod(token, &used);
      if (used != token.size()) throw std::invalid_argument(token);
    } catch (const std::exception&) {
      fail(ErrorKind::data, "reduced matrix entry '" + token + "' is not a number");
    }
  }
  std::string extra;
  if (in >> extra) fail(ErrorKind::data, "reduced matrix table has trailing data");
  require_finite(rm.data, "reduced matrix");
  return rm;
}

}  // namespace fractex::reducer
