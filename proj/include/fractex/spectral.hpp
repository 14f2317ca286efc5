#pragma once

// Spectral primitives: randomized truncated SVD of a sparse binary matrix,
// the symmetric inverse square root, area-weighted down-scaling and the
// nearest-orthonormal projections used to shrink singular vectors.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "fractex/dense.hpp"
#include "fractex/error.hpp"
#include "fractex/rng.hpp"
#include "fractex/sparse.hpp"

namespace fractex::spectral {

/// M ≈ U diag(sigma) V with U m×k column-orthonormal and V k×n
/// row-orthonormal. sigma is non-increasing.
struct TruncatedSVD {
  DenseMatrix U;
  std::vector<double> sigma;
  DenseMatrix V;
};

struct SvdParams {
  int power_iters = 8;
  int oversample = 10;
  // Past power_iters, iteration continues until the leading k Ritz values
  // move by less than `tolerance` (relative) between rounds, up to max_iters.
  int max_iters = 400;
  double tolerance = 1e-13;
};

namespace detail {

using EIndex = Eigen::Index;

// Y = M X, one output row per sparse row, summed in column order.
inline DenseMatrix times(const SparseBinaryMatrix& m, const DenseMatrix& x) {
  DenseMatrix y = DenseMatrix::Zero(static_cast<EIndex>(m.n_rows()), x.cols());
  for (fractex::Index i = 0; i < m.n_rows(); ++i) {
    auto out = y.row(static_cast<EIndex>(i));
    for (fractex::Index j : m.row(i)) out += x.row(static_cast<EIndex>(j));
  }
  return y;
}

// Z = Mᵀ Y, scattered in row-major non-zero order.
inline DenseMatrix times_transposed(const SparseBinaryMatrix& m, const DenseMatrix& y) {
  DenseMatrix z = DenseMatrix::Zero(static_cast<EIndex>(m.n_cols()), y.cols());
  for (fractex::Index i = 0; i < m.n_rows(); ++i) {
    auto in = y.row(static_cast<EIndex>(i));
    for (fractex::Index j : m.row(i)) z.row(static_cast<EIndex>(j)) += in;
  }
  return z;
}

// Modified Gram-Schmidt with a second projection pass. A column that loses
// all of its norm to the projection lies in the span of its predecessors;
// it is replaced by a fresh Gaussian direction so the block keeps full rank.
inline void orthonormalize(DenseMatrix& q, RandomStream& rng) {
  constexpr double collapse = 1e-10;
  constexpr int max_redraws = 4;
  for (EIndex c = 0; c < q.cols(); ++c) {
    int redraws = 0;
    for (;;) {
      const double before = q.col(c).norm();
      for (int pass = 0; pass < 2; ++pass)
        for (EIndex p = 0; p < c; ++p) q.col(c) -= q.col(p).dot(q.col(c)) * q.col(p);
      const double after = q.col(c).norm();
      if (after > collapse * before && after > 0.0 && std::isfinite(after)) {
        q.col(c) /= after;
        break;
      }
      if (++redraws > max_redraws)
        fail(ErrorKind::numeric,
             "orthonormalization degenerated: zero column norm at column " + std::to_string(c));
      for (EIndex r = 0; r < q.rows(); ++r) q(r, c) = rng.gaussian();
    }
  }
}

}  // namespace detail

/// Randomized subspace iteration. A seeded Gaussian block of k+oversample
/// columns is pushed through M and Mᵀ alternately, re-orthonormalized after
/// every half-step; the small projected matrix is then decomposed exactly.
inline TruncatedSVD truncated_svd(const SparseBinaryMatrix& m, Index k, std::uint64_t seed,
                                  SvdParams params = {}) {
  using detail::EIndex;
  const EIndex rows = static_cast<EIndex>(m.n_rows());
  const EIndex cols = static_cast<EIndex>(m.n_cols());
  const EIndex rank_cap = std::min(rows, cols);
  if (k < 1 || static_cast<EIndex>(k) > rank_cap)
    fail(ErrorKind::usage, "truncated_svd: k=" + std::to_string(k) + " outside [1, " +
                               std::to_string(rank_cap) + "]");
  if (params.power_iters < 0 || params.oversample < 0)
    fail(ErrorKind::usage, "truncated_svd: negative iteration or oversampling count");

  const EIndex width = std::min<EIndex>(static_cast<EIndex>(k) + params.oversample, rank_cap);
  RandomStream rng(derive_stream_seed(StreamPurpose::svd_test_matrix, seed, 0, 0));

  DenseMatrix omega(cols, width);
  for (EIndex c = 0; c < width; ++c)
    for (EIndex r = 0; r < cols; ++r) omega(r, c) = rng.gaussian();

  const EIndex kk = static_cast<EIndex>(k);
  // Ritz values of the current subspace from the Gram matrix of Mᵀ Y.
  auto ritz = [&](const DenseMatrix& z) {
    const Eigen::MatrixXd gram = z.transpose() * z;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
    Eigen::VectorXd lambda = eig.eigenvalues().reverse().head(kk);
    return lambda.cwiseMax(0.0).cwiseSqrt().eval();
  };

  DenseMatrix y = detail::times(m, omega);
  detail::orthonormalize(y, rng);
  Eigen::VectorXd previous;
  for (int it = 0; it < std::max(params.power_iters, params.max_iters); ++it) {
    DenseMatrix z = detail::times_transposed(m, y);
    if (it >= params.power_iters) {
      const Eigen::VectorXd current = ritz(z);
      const double scale = std::max(current(0), 1e-300);
      if (previous.size() == kk &&
          (current - previous).cwiseAbs().maxCoeff() <= params.tolerance * scale)
        break;
      previous = current;
    }
    detail::orthonormalize(z, rng);
    y = detail::times(m, z);
    detail::orthonormalize(y, rng);
  }

  // B = Yᵀ M, width × n.
  const DenseMatrix b = detail::times_transposed(m, y).transpose();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(b, Eigen::ComputeThinU | Eigen::ComputeThinV);

  TruncatedSVD out;
  out.U = y * svd.matrixU().leftCols(kk);
  out.V = svd.matrixV().leftCols(kk).transpose();
  out.sigma.assign(svd.singularValues().data(), svd.singularValues().data() + kk);
  return out;
}

/// All singular values of a dense matrix, non-increasing.
inline std::vector<double> singular_values(const DenseMatrix& m) {
  if (m.size() == 0) return {};
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const auto& s = svd.singularValues();
  return {s.data(), s.data() + s.size()};
}

/// S^{-1/2} for a symmetric positive definite S, via Q diag(λ^{-1/2}) Qᵀ.
/// Eigenvalues at or below 1e-12·max(λ) are reported as singular.
inline DenseMatrix inv_sqrt_sym(const DenseMatrix& s) {
  if (s.rows() != s.cols()) fail(ErrorKind::numeric, "inv_sqrt_sym: matrix is not square");
  require_finite(s, "inv_sqrt_sym input");
  if ((s - s.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, s.cwiseAbs().maxCoeff()))
    fail(ErrorKind::numeric, "inv_sqrt_sym: matrix is not symmetric");

  const Eigen::MatrixXd dense_s = s;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(dense_s);
  if (eig.info() != Eigen::Success)
    fail(ErrorKind::numeric, "inv_sqrt_sym: eigendecomposition failed");
  const auto& lambda = eig.eigenvalues();
  const double top = lambda.maxCoeff();
  const double floor = 1e-12 * top;
  if (!(top > 0.0) || lambda.minCoeff() <= floor)
    fail(ErrorKind::numeric,
         "inv_sqrt_sym: matrix is singular (min eigenvalue " + std::to_string(lambda.minCoeff()) +
             " vs max " + std::to_string(top) + "); use a smaller rank k");

  const Eigen::VectorXd scale = lambda.cwiseSqrt().cwiseInverse();
  DenseMatrix out = eig.eigenvectors() * scale.asDiagonal() * eig.eigenvectors().transpose();
  return (0.5 * (out + out.transpose())).eval();
}

namespace detail {

// Row-stochastic weights for collapsing `in` cells onto `out` cells: output
// cell i covers [i·in/out, (i+1)·in/out) and takes each input cell in
// proportion to its overlap.
inline DenseMatrix area_weights(Index out, Index in) {
  DenseMatrix w = DenseMatrix::Zero(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
  const double step = static_cast<double>(in) / static_cast<double>(out);
  for (Index i = 0; i < out; ++i) {
    // Boundaries as exact rationals i·in/out to avoid accumulated drift.
    const double lo = static_cast<double>(i * in) / static_cast<double>(out);
    const double hi = static_cast<double>((i + 1) * in) / static_cast<double>(out);
    const Index first = (i * in) / out;
    const Index last = std::min<Index>(((i + 1) * in + out - 1) / out, in);
    for (Index r = first; r < last; ++r) {
      const double overlap =
          std::min(hi, static_cast<double>(r + 1)) - std::max(lo, static_cast<double>(r));
      if (overlap > 0.0)
        w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(r)) = overlap / step;
    }
  }
  return w;
}

}  // namespace detail

/// Down-scales by local averaging with exact fractional-overlap weights.
inline DenseMatrix area_resize(const DenseMatrix& m, Index out_rows, Index out_cols) {
  const auto in_rows = static_cast<Index>(m.rows());
  const auto in_cols = static_cast<Index>(m.cols());
  if (out_rows == 0 || out_cols == 0)
    fail(ErrorKind::usage, "area_resize: output dimensions must be positive");
  if (out_rows > in_rows || out_cols > in_cols)
    fail(ErrorKind::usage, "area_resize: upscaling is not supported (" + std::to_string(in_rows) +
                               "x" + std::to_string(in_cols) + " -> " + std::to_string(out_rows) +
                               "x" + std::to_string(out_cols) + ")");
  const DenseMatrix wr = detail::area_weights(out_rows, in_rows);
  const DenseMatrix wc = detail::area_weights(out_cols, in_cols);
  return wr * m * wc.transpose();
}

/// Ũ = Ū (ŪᵀŪ)^{-1/2}: the column-orthonormal matrix nearest to Ū in
/// Frobenius norm.
inline DenseMatrix orthogonalize_columns(const DenseMatrix& ubar) {
  const DenseMatrix gram = ubar.transpose() * ubar;
  return ubar * inv_sqrt_sym(gram);
}

/// Ṽ = (V̄V̄ᵀ)^{-1/2} V̄: the row-orthonormal counterpart.
inline DenseMatrix orthogonalize_rows(const DenseMatrix& vbar) {
  const DenseMatrix gram = vbar * vbar.transpose();
  return inv_sqrt_sym(gram) * vbar;
}

/// `rank<TAB>singular_value` table, ranks starting at 1.
inline void write_spectrum(std::ostream& out, std::span<const double> sigma) {
  out << "rank\tsingular_value\n";
  for (std::size_t r = 0; r < sigma.size(); ++r) {
    out << (r + 1) << '\t';
    write_exact(out, sigma[r]) << '\n';
  }
}

}  // namespace fractex::spectral
