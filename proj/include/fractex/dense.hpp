#pragma once

#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <string>

#include <Eigen/Dense>

#include "fractex/error.hpp"
#include "fractex/sparse.hpp"

namespace fractex {

/// Small dense matrix, row-major. Holds the reduced matrix and every
/// spectral intermediate.
using DenseMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline void require_finite(const DenseMatrix& m, const char* what) {
  if (!m.allFinite()) fail(ErrorKind::numeric, std::string(what) + " has non-finite entries");
}

inline DenseMatrix to_dense(const SparseBinaryMatrix& m) {
  DenseMatrix out = DenseMatrix::Zero(static_cast<Eigen::Index>(m.n_rows()),
                                      static_cast<Eigen::Index>(m.n_cols()));
  for (Index i = 0; i < m.n_rows(); ++i)
    for (Index j : m.row(i)) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = 1.0;
  return out;
}

/// 17 significant digits; parses back to the identical double.
inline std::ostream& write_exact(std::ostream& out, double v) {
  return out << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
}

}  // namespace fractex
