#pragma once

// Compressed sparse row storage for binary interaction matrices and the
// signed {-1,+1} variant used to carry train/test membership.

#include <algorithm>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fractex/error.hpp"

namespace fractex {

using Index = std::uint64_t;

struct Triplet {
  Index row;
  Index col;
  friend bool operator==(const Triplet&, const Triplet&) = default;
  friend auto operator<=>(const Triplet&, const Triplet&) = default;
};

/// Binary matrix with implicit unit values. Columns are sorted and unique
/// within each row; the object is immutable once built.
class SparseBinaryMatrix {
 public:
  SparseBinaryMatrix() : row_offsets_(1, 0) {}

  /// Adopts CSR arrays after checking every structural invariant.
  SparseBinaryMatrix(Index n_rows, Index n_cols, std::vector<Index> row_offsets,
                     std::vector<Index> col_indices)
      : n_rows_(n_rows),
        n_cols_(n_cols),
        row_offsets_(std::move(row_offsets)),
        col_indices_(std::move(col_indices)) {
    validate();
  }

  Index n_rows() const noexcept { return n_rows_; }
  Index n_cols() const noexcept { return n_cols_; }
  Index nnz() const noexcept { return col_indices_.size(); }

  std::span<const Index> row_offsets() const noexcept { return row_offsets_; }
  std::span<const Index> col_indices() const noexcept { return col_indices_; }

  std::span<const Index> row(Index i) const noexcept {
    return std::span<const Index>(col_indices_)
        .subspan(row_offsets_[i], row_offsets_[i + 1] - row_offsets_[i]);
  }

  Index row_nnz(Index i) const noexcept { return row_offsets_[i + 1] - row_offsets_[i]; }

  bool contains(Index i, Index j) const noexcept {
    if (i >= n_rows_) return false;
    auto r = row(i);
    return std::binary_search(r.begin(), r.end(), j);
  }

  /// Non-zeros in row-major order.
  std::vector<Triplet> triplets() const {
    std::vector<Triplet> out;
    out.reserve(nnz());
    for (Index i = 0; i < n_rows_; ++i)
      for (Index j : row(i)) out.push_back({i, j});
    return out;
  }

  friend bool operator==(const SparseBinaryMatrix&, const SparseBinaryMatrix&) = default;

 private:
  void validate() const {
    if (row_offsets_.size() != n_rows_ + 1)
      fail(ErrorKind::data, "row_offsets must have n_rows+1 entries");
    if (row_offsets_.front() != 0) fail(ErrorKind::data, "row_offsets[0] must be 0");
    if (row_offsets_.back() != col_indices_.size())
      fail(ErrorKind::data, "row_offsets[n_rows] must equal nnz");
    for (Index i = 0; i < n_rows_; ++i) {
      if (row_offsets_[i] > row_offsets_[i + 1])
        fail(ErrorKind::data, "row_offsets must be non-decreasing");
      for (Index p = row_offsets_[i]; p < row_offsets_[i + 1]; ++p) {
        if (col_indices_[p] >= n_cols_)
          fail(ErrorKind::data, "column index out of range in row " + std::to_string(i));
        if (p > row_offsets_[i] && col_indices_[p - 1] >= col_indices_[p])
          fail(ErrorKind::data, "columns not strictly ascending in row " + std::to_string(i));
      }
    }
  }

  Index n_rows_ = 0;
  Index n_cols_ = 0;
  std::vector<Index> row_offsets_;
  std::vector<Index> col_indices_;
};

/// Sparse matrix with values in {-1,+1}, aligned with the pattern's
/// non-zeros. +1 marks train interactions, -1 test interactions.
class SignedSparseMatrix {
 public:
  SignedSparseMatrix() = default;

  SignedSparseMatrix(SparseBinaryMatrix pattern, std::vector<std::int8_t> signs)
      : pattern_(std::move(pattern)), signs_(std::move(signs)) {
    if (signs_.size() != pattern_.nnz())
      fail(ErrorKind::data, "sign array length must equal nnz");
    for (auto s : signs_)
      if (s != 1 && s != -1) fail(ErrorKind::data, "sign values must be -1 or +1");
  }

  /// All-positive view of a binary matrix.
  static SignedSparseMatrix positive(SparseBinaryMatrix pattern) {
    std::vector<std::int8_t> signs(pattern.nnz(), 1);
    return SignedSparseMatrix(std::move(pattern), std::move(signs));
  }

  const SparseBinaryMatrix& pattern() const noexcept { return pattern_; }
  std::span<const std::int8_t> signs() const noexcept { return signs_; }

  Index n_rows() const noexcept { return pattern_.n_rows(); }
  Index n_cols() const noexcept { return pattern_.n_cols(); }
  Index nnz() const noexcept { return pattern_.nnz(); }

  friend bool operator==(const SignedSparseMatrix&, const SignedSparseMatrix&) = default;

 private:
  SparseBinaryMatrix pattern_;
  std::vector<std::int8_t> signs_;
};

inline SparseBinaryMatrix from_triplets(std::span<const Index> rows, std::span<const Index> cols,
                                        Index n_rows, Index n_cols) {
  if (rows.size() != cols.size())
    fail(ErrorKind::data, "row and column lists differ in length");
  std::vector<Triplet> entries;
  entries.reserve(rows.size());
  for (std::size_t p = 0; p < rows.size(); ++p) {
    if (rows[p] >= n_rows || cols[p] >= n_cols) {
      std::ostringstream msg;
      msg << (rows[p] >= n_rows ? "row" : "column") << " index out of range at triplet " << p
          << " (" << rows[p] << ", " << cols[p] << ") for " << n_rows << "x" << n_cols;
      fail(ErrorKind::data, msg.str());
    }
    entries.push_back({rows[p], cols[p]});
  }
  std::sort(entries.begin(), entries.end());
  entries.erase(std::unique(entries.begin(), entries.end()), entries.end());

  std::vector<Index> offsets(n_rows + 1, 0);
  std::vector<Index> indices;
  indices.reserve(entries.size());
  for (const auto& t : entries) {
    ++offsets[t.row + 1];
    indices.push_back(t.col);
  }
  for (Index i = 0; i < n_rows; ++i) offsets[i + 1] += offsets[i];
  return SparseBinaryMatrix(n_rows, n_cols, std::move(offsets), std::move(indices));
}

inline SparseBinaryMatrix from_triplets(std::span<const Triplet> entries, Index n_rows,
                                        Index n_cols) {
  std::vector<Index> rows, cols;
  rows.reserve(entries.size());
  cols.reserve(entries.size());
  for (const auto& t : entries) {
    rows.push_back(t.row);
    cols.push_back(t.col);
  }
  return from_triplets(rows, cols, n_rows, n_cols);
}

inline std::vector<Index> row_sums(const SparseBinaryMatrix& m) {
  std::vector<Index> out(m.n_rows());
  for (Index i = 0; i < m.n_rows(); ++i) out[i] = m.row_nnz(i);
  return out;
}

inline std::vector<Index> col_sums(const SparseBinaryMatrix& m) {
  std::vector<Index> out(m.n_cols(), 0);
  for (Index j : m.col_indices()) ++out[j];
  return out;
}

inline SparseBinaryMatrix transpose(const SparseBinaryMatrix& m) {
  std::vector<Index> offsets(m.n_cols() + 1, 0);
  for (Index j : m.col_indices()) ++offsets[j + 1];
  for (Index j = 0; j < m.n_cols(); ++j) offsets[j + 1] += offsets[j];
  std::vector<Index> cursor(offsets.begin(), offsets.end() - 1);
  std::vector<Index> indices(m.nnz());
  // Rows are visited in ascending order, so each output row comes out sorted.
  for (Index i = 0; i < m.n_rows(); ++i)
    for (Index j : m.row(i)) indices[cursor[j]++] = i;
  return SparseBinaryMatrix(m.n_cols(), m.n_rows(), std::move(offsets), std::move(indices));
}

/// y = M x, accumulated row by row in ascending column order.
inline std::vector<double> matvec(const SparseBinaryMatrix& m, std::span<const double> x) {
  if (x.size() != m.n_cols())
    fail(ErrorKind::usage, "matvec: vector length " + std::to_string(x.size()) +
                               " does not match " + std::to_string(m.n_cols()) + " columns");
  std::vector<double> y(m.n_rows(), 0.0);
  for (Index i = 0; i < m.n_rows(); ++i) {
    double acc = 0.0;
    for (Index j : m.row(i)) acc += x[j];
    y[i] = acc;
  }
  return y;
}

/// y = Mᵀ x, scattered in row-major non-zero order.
inline std::vector<double> matvec_t(const SparseBinaryMatrix& m, std::span<const double> x) {
  if (x.size() != m.n_rows())
    fail(ErrorKind::usage, "matvec_t: vector length " + std::to_string(x.size()) +
                               " does not match " + std::to_string(m.n_rows()) + " rows");
  std::vector<double> y(m.n_cols(), 0.0);
  for (Index i = 0; i < m.n_rows(); ++i)
    for (Index j : m.row(i)) y[j] += x[i];
  return y;
}

// Triplet text format: header `n_rows<TAB>n_cols`, then one `row<TAB>col`
// pair per line.

inline void write_triplets(std::ostream& out, const SparseBinaryMatrix& m) {
  out << m.n_rows() << '\t' << m.n_cols() << '\n';
  for (Index i = 0; i < m.n_rows(); ++i)
    for (Index j : m.row(i)) out << i << '\t' << j << '\n';
}

inline SparseBinaryMatrix read_triplets(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  auto next_line = [&]() -> bool {
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) return true;
    }
    return false;
  };
  if (!next_line()) fail(ErrorKind::data, "triplet file is empty");
  Index n_rows = 0, n_cols = 0;
  {
    std::istringstream header(line);
    if (!(header >> n_rows >> n_cols))
      fail(ErrorKind::data, "triplet header must be `n_rows<TAB>n_cols` (line 1)");
  }
  std::vector<Index> rows, cols;
  while (next_line()) {
    std::istringstream fields(line);
    Index r = 0, c = 0;
    std::string extra;
    if (!(fields >> r >> c) || (fields >> extra))
      fail(ErrorKind::data, "malformed triplet at line " + std::to_string(line_no));
    rows.push_back(r);
    cols.push_back(c);
  }
  return from_triplets(rows, cols, n_rows, n_cols);
}

}  // namespace fractex
