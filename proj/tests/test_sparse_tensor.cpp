#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "prunefl/rng.hpp"
#include "prunefl/sparse_tensor.hpp"

using namespace prunefl;

namespace {

DenseMatrix random_matrix(std::mt19937_64& rng, std::size_t rows,
                          std::size_t cols, double zero_frac) {
  DenseMatrix m(rows, cols, 0.0);
  for (auto& v : m.values)
    if (uniform01(rng) >= zero_frac) v = uniform_in(rng, -2.0, 2.0);
  return m;
}

bool bitwise_equal(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows != b.rows || a.cols != b.cols) return false;
  for (std::size_t i = 0; i < a.values.size(); ++i)
    if (a.values[i] != b.values[i] ||
        std::signbit(a.values[i]) != std::signbit(b.values[i]))
      return false;
  return true;
}

}  // namespace

TEST_CASE("sparse_from_dense on a zero matrix stores nothing") {
  DenseMatrix z(3, 3, 0.0);
  SparseMatrix s = sparse_from_dense(z);
  CHECK(s.nnz() == 0);
  CHECK(bitwise_equal(to_dense(s), z));
}

TEST_CASE("sparse_from_dense on identity keeps the diagonal") {
  DenseMatrix id(3, 3, 0.0);
  for (std::size_t i = 0; i < 3; ++i) id.at(i, i) = 1.0;
  SparseMatrix s = sparse_from_dense(id);
  REQUIRE(s.nnz() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(s.row_idx[i] == i);
    CHECK(s.col_idx[i] == i);
    CHECK(s.values[i] == 1.0);
  }
}

TEST_CASE("round-trip is exact for a random matrix with zeros") {
  std::mt19937_64 rng(7);
  DenseMatrix m = random_matrix(rng, 8, 5, 0.4);
  CHECK(bitwise_equal(to_dense(sparse_from_dense(m)), m));
}

TEST_CASE("round-trip property across sizes and densities") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 60; ++trial) {
    std::size_t rows = 1 + bounded(rng, 16);
    std::size_t cols = 1 + bounded(rng, 16);
    double zf = uniform01(rng);
    DenseMatrix m = random_matrix(rng, rows, cols, zf);
    SparseMatrix s = sparse_from_dense(m);
    CHECK(bitwise_equal(to_dense(s), m));
    for (double v : s.values) CHECK(v != 0.0);
  }
}

TEST_CASE("spmm with a sparse identity returns the dense input") {
  DenseMatrix id(4, 4, 0.0);
  for (std::size_t i = 0; i < 4; ++i) id.at(i, i) = 1.0;
  std::mt19937_64 rng(3);
  DenseMatrix d = random_matrix(rng, 4, 3, 0.0);
  CHECK(bitwise_equal(spmm(sparse_from_dense(id), d), d));
}

TEST_CASE("spmm with a zero sparse matrix gives zeros") {
  SparseMatrix z = sparse_from_dense(DenseMatrix(5, 4, 0.0));
  std::mt19937_64 rng(4);
  DenseMatrix d = random_matrix(rng, 4, 2, 0.0);
  DenseMatrix out = spmm(z, d);
  for (double v : out.values) CHECK(v == 0.0);
}

TEST_CASE("spmm matches the dense oracle on random inputs") {
  std::mt19937_64 rng(5);
  DenseMatrix a = random_matrix(rng, 6, 6, 0.7);
  DenseMatrix d = random_matrix(rng, 6, 2, 0.0);
  DenseMatrix got = spmm(sparse_from_dense(a), d);
  DenseMatrix want = oracles::naive_matmul(a, d);
  for (std::size_t i = 0; i < got.values.size(); ++i)
    CHECK(std::abs(got.values[i] - want.values[i]) <= 1e-12);
}

TEST_CASE("spmm agreement property up to 64x64") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    std::size_t m = 1 + bounded(rng, 64);
    std::size_t k = 1 + bounded(rng, 64);
    std::size_t n = 1 + bounded(rng, 8);
    DenseMatrix a = random_matrix(rng, m, k, uniform01(rng));
    DenseMatrix d = random_matrix(rng, k, n, 0.0);
    DenseMatrix got = spmm(sparse_from_dense(a), d);
    DenseMatrix want = oracles::naive_matmul(a, d);
    for (std::size_t i = 0; i < got.values.size(); ++i)
      CHECK(std::abs(got.values[i] - want.values[i]) <= 1e-12);
  }
}

TEST_CASE("spmm rejects mismatched inner dimensions") {
  SparseMatrix s = sparse_from_dense(DenseMatrix(3, 4, 1.0));
  CHECK_THROWS_AS(spmm(s, DenseMatrix(5, 2, 0.0)), std::invalid_argument);
}

TEST_CASE("storage cost reproduces the half-density point") {
  StorageReport r = storage_cost(3200, 1600);
  CHECK(r.density == 0.5);
  CHECK(r.tuple_bytes == 12800);
  CHECK(r.bitmap_bytes == 6800);
  CHECK(r.sparse_bytes == 6800);
  CHECK(r.chosen_layout == SparseLayout::Bitmap);
  const double ratio = static_cast<double>(r.sparse_bytes) /
                       static_cast<double>(r.dense_bytes);
  CHECK(ratio == 0.53125);  // min{2d, 1/32 + d} at d = 0.5
  CHECK(ratio == std::min(2 * 0.5, 1.0 / 32 + 0.5));
}

TEST_CASE("layouts tie exactly at density 1/32 and the tie goes to Bitmap") {
  StorageReport r = storage_cost(3200, 100);
  CHECK(r.tuple_bytes == r.bitmap_bytes);
  CHECK(r.chosen_layout == SparseLayout::Bitmap);
  const double ratio = static_cast<double>(r.sparse_bytes) /
                       static_cast<double>(r.dense_bytes);
  CHECK(ratio == 1.0 / 16.0);
}

TEST_CASE("very sparse matrices choose coordinate tuples") {
  StorageReport r = storage_cost(100000, 100);
  CHECK(r.chosen_layout == SparseLayout::CoordTuple);
  CHECK(r.sparse_bytes == 800);
  const double ratio = static_cast<double>(r.sparse_bytes) /
                       static_cast<double>(r.dense_bytes);
  CHECK(ratio == 0.002);
}

TEST_CASE("byte formulas are exact and the layout flips at density 1/32") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 500; ++trial) {
    std::uint64_t total = 1 + bounded(rng, 1000000);
    std::uint64_t nnz = bounded(rng, total + 1);
    if (trial % 3 == 0) nnz = total / 32 + bounded(rng, 3) - 1;  // near the switch
    if (nnz > total) nnz = total;
    StorageReport r = storage_cost(total, nnz);
    CHECK(r.tuple_bytes == 8 * nnz);
    CHECK(r.bitmap_bytes == (total + 7) / 8 + 4 * nnz);
    CHECK(r.sparse_bytes == std::min(r.tuple_bytes, r.bitmap_bytes));
    CHECK(r.dense_bytes == 4 * total);
    const bool tuple_chosen = r.chosen_layout == SparseLayout::CoordTuple;
    CHECK(tuple_chosen == (32 * nnz < total));  // density < 1/32, ties Bitmap
  }
}

TEST_CASE("storage cost rejects nonzero > total") {
  CHECK_THROWS_AS(storage_cost(10, 11), std::invalid_argument);
}

TEST_CASE("make_sparse validates its triplets") {
  CHECK_THROWS_AS(make_sparse(2, 2, {0, 0}, {1, 0}, {1.0, 2.0},
                              SparseLayout::CoordTuple),
                  std::invalid_argument);  // unsorted
  CHECK_THROWS_AS(make_sparse(2, 2, {0}, {2}, {1.0}, SparseLayout::Bitmap),
                  std::invalid_argument);  // out of bounds
  CHECK_THROWS_AS(make_sparse(2, 2, {0}, {0}, {0.0}, SparseLayout::Bitmap),
                  std::invalid_argument);  // explicit zero
  CHECK_THROWS_AS(make_sparse(70000, 2, {0}, {0}, {1.0},
                              SparseLayout::CoordTuple),
                  std::invalid_argument);  // 16-bit index limit
  CHECK_NOTHROW(make_sparse(70000, 2, {0}, {0}, {1.0}, SparseLayout::Bitmap));
}

TEST_CASE("fixed-pattern exchange costs 4 bytes per nonzero") {
  CHECK(fixed_pattern_bytes(0) == 0);
  CHECK(fixed_pattern_bytes(1000) == 4000);
}
