#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace prunefl {

// Row-major 2-D matrix of 64-bit reals. Compute runs in double precision;
// the wire/storage cost model below accounts in 32-bit values and 16-bit
// indices, which is independent of the in-memory representation.
struct DenseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;  // rows * cols entries

  DenseMatrix() = default;
  DenseMatrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), values(r * c, fill) {}

  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  std::size_t size() const { return rows * cols; }
};

enum class SparseLayout { Bitmap, CoordTuple };

// Sorted (row-major) unique coordinates, no explicit zeros. The layout tag
// selects the byte-accounting scheme; the in-memory form is the same triplet
// list either way. A value of -0.0 normalizes to +0.0 (dropped).
struct SparseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  SparseLayout layout = SparseLayout::Bitmap;
  std::vector<std::uint32_t> row_idx;
  std::vector<std::uint32_t> col_idx;
  std::vector<double> values;

  std::size_t nnz() const { return values.size(); }
};

// CoordTuple stores 16-bit row/col indices, so either dimension above this
// limit rejects that layout.
inline constexpr std::size_t kCoordTupleDimLimit = 65535;

struct StorageReport {
  std::uint64_t dense_bytes = 0;   // 4 bytes per entry
  std::uint64_t bitmap_bytes = 0;  // ceil(total/8) + 4 per nonzero
  std::uint64_t tuple_bytes = 0;   // (4 + 2 + 2) per nonzero
  std::uint64_t sparse_bytes = 0;  // min of the two layouts
  double density = 0.0;
  SparseLayout chosen_layout = SparseLayout::Bitmap;
};

// Byte cost of storing/transmitting a matrix with `total` entries of which
// `nonzero` are kept. The per-matrix 12-byte header (dims + layout tag) is
// excluded everywhere. CoordTuple wins exactly when density < 1/32; ties go
// to Bitmap.
StorageReport storage_cost(std::uint64_t total, std::uint64_t nonzero);

// When the sparsity pattern is already known to the peer, only values move:
// 4 bytes per nonzero.
std::uint64_t fixed_pattern_bytes(std::uint64_t nonzero);

// Layout chosen by storage_cost; falls back to Bitmap when CoordTuple would
// need indices wider than 16 bits.
SparseMatrix sparse_from_dense(const DenseMatrix& m);

// Validating constructor for pre-built triplets (sorted, unique, in bounds,
// zero-free). Throws on violations, including the CoordTuple dimension limit.
SparseMatrix make_sparse(std::size_t rows, std::size_t cols,
                         std::vector<std::uint32_t> row_idx,
                         std::vector<std::uint32_t> col_idx,
                         std::vector<double> values, SparseLayout layout);

DenseMatrix to_dense(const SparseMatrix& s);

// out = s * d. Accumulation order: for each stored (r, c, v) in row-major
// order, out[r, :] += v * d[c, :].
DenseMatrix spmm(const SparseMatrix& s, const DenseMatrix& d);

// Dense-dense product, the reference path for full-size models.
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);

}  // namespace prunefl
