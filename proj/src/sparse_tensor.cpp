#include "prunefl/sparse_tensor.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace prunefl {

StorageReport storage_cost(std::uint64_t total, std::uint64_t nonzero) {
  if (nonzero > total)
    throw std::invalid_argument("storage_cost: nonzero exceeds total");
  StorageReport r;
  r.dense_bytes = 4 * total;
  r.bitmap_bytes = (total + 7) / 8 + 4 * nonzero;
  r.tuple_bytes = 8 * nonzero;
  // tuple < bitmap  <=>  4*nnz < ceil(total/8)  <=>  32*nnz < total,
  // so the byte minimum and the density-threshold rule coincide.
  if (r.tuple_bytes < r.bitmap_bytes) {
    r.sparse_bytes = r.tuple_bytes;
    r.chosen_layout = SparseLayout::CoordTuple;
  } else {
    r.sparse_bytes = r.bitmap_bytes;
    r.chosen_layout = SparseLayout::Bitmap;
  }
  r.density = total == 0 ? 0.0
                         : static_cast<double>(nonzero) /
                               static_cast<double>(total);
  return r;
}

std::uint64_t fixed_pattern_bytes(std::uint64_t nonzero) { return 4 * nonzero; }

SparseMatrix sparse_from_dense(const DenseMatrix& m) {
  SparseMatrix s;
  s.rows = m.rows;
  s.cols = m.cols;
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t c = 0; c < m.cols; ++c) {
      double v = m.at(r, c);
      if (v != 0.0) {
        s.row_idx.push_back(static_cast<std::uint32_t>(r));
        s.col_idx.push_back(static_cast<std::uint32_t>(c));
        s.values.push_back(v);
      }
    }
  }
  s.layout = storage_cost(m.size(), s.nnz()).chosen_layout;
  if (s.layout == SparseLayout::CoordTuple &&
      (m.rows > kCoordTupleDimLimit || m.cols > kCoordTupleDimLimit)) {
    s.layout = SparseLayout::Bitmap;
  }
  return s;
}

SparseMatrix make_sparse(std::size_t rows, std::size_t cols,
                         std::vector<std::uint32_t> row_idx,
                         std::vector<std::uint32_t> col_idx,
                         std::vector<double> values, SparseLayout layout) {
  if (row_idx.size() != values.size() || col_idx.size() != values.size())
    throw std::invalid_argument("make_sparse: triplet arrays disagree in length");
  if (layout == SparseLayout::CoordTuple &&
      (rows > kCoordTupleDimLimit || cols > kCoordTupleDimLimit))
    throw std::invalid_argument(
        "make_sparse: dimension exceeds 65535, CoordTuple layout rejected");
  std::uint64_t prev = 0;
  bool first = true;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (row_idx[i] >= rows || col_idx[i] >= cols)
      throw std::invalid_argument("make_sparse: index out of bounds");
    if (values[i] == 0.0)
      throw std::invalid_argument("make_sparse: explicit zero entry");
    std::uint64_t key =
        static_cast<std::uint64_t>(row_idx[i]) * cols + col_idx[i];
    if (!first && key <= prev)
      throw std::invalid_argument("make_sparse: indices not sorted/unique");
    prev = key;
    first = false;
  }
  SparseMatrix s;
  s.rows = rows;
  s.cols = cols;
  s.layout = layout;
  s.row_idx = std::move(row_idx);
  s.col_idx = std::move(col_idx);
  s.values = std::move(values);
  return s;
}

DenseMatrix to_dense(const SparseMatrix& s) {
  DenseMatrix m(s.rows, s.cols, 0.0);
  for (std::size_t i = 0; i < s.nnz(); ++i)
    m.at(s.row_idx[i], s.col_idx[i]) = s.values[i];
  return m;
}

DenseMatrix spmm(const SparseMatrix& s, const DenseMatrix& d) {
  if (s.cols != d.rows)
    throw std::invalid_argument("spmm: inner dimensions mismatch (" +
                                std::to_string(s.cols) + " vs " +
                                std::to_string(d.rows) + ")");
  DenseMatrix out(s.rows, d.cols, 0.0);
  for (std::size_t i = 0; i < s.nnz(); ++i) {
    const double v = s.values[i];
    const double* drow = &d.values[s.col_idx[i] * d.cols];
    double* orow = &out.values[s.row_idx[i] * d.cols];
    for (std::size_t j = 0; j < d.cols; ++j) orow[j] += v * drow[j];
  }
  return out;
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols != b.rows)
    throw std::invalid_argument("matmul: inner dimensions mismatch (" +
                                std::to_string(a.cols) + " vs " +
                                std::to_string(b.rows) + ")");
  DenseMatrix out(a.rows, b.cols, 0.0);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* arow = &a.values[i * a.cols];
    double* orow = &out.values[i * b.cols];
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = &b.values[k * b.cols];
      for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

}  // namespace prunefl
