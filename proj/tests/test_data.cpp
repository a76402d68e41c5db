#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <set>

#include "prunefl/data.hpp"
#include "prunefl/rng.hpp"

using namespace prunefl;

namespace {

bool same_dataset(const Dataset& a, const Dataset& b) {
  return a.train_x.values == b.train_x.values && a.train_y == b.train_y &&
         a.test_x.values == b.test_x.values && a.test_y == b.test_y;
}

void check_exact_partition(const std::vector<Shard>& shards, std::size_t n) {
  std::set<std::size_t> seen;
  std::size_t total = 0;
  for (const auto& s : shards) {
    total += s.size();
    for (auto i : s) {
      CHECK(i < n);
      CHECK(seen.insert(i).second);  // disjoint
    }
  }
  CHECK(total == n);  // covering
}

void write_be32(std::ofstream& os, std::uint32_t v) {
  char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
               static_cast<char>(v >> 8), static_cast<char>(v)};
  os.write(b, 4);
}

void write_idx_fixture(const std::string& img_path, const std::string& lab_path,
                       std::uint32_t count, std::uint32_t label_count,
                       std::uint32_t magic_img = 0x00000803u,
                       bool truncate_pixels = false) {
  std::ofstream img(img_path, std::ios::binary);
  write_be32(img, magic_img);
  write_be32(img, count);
  write_be32(img, 3);
  write_be32(img, 3);
  const std::size_t pixels = truncate_pixels ? 4 : 9;
  for (std::uint32_t i = 0; i < count; ++i)
    for (std::size_t p = 0; p < pixels; ++p) {
      char byte = static_cast<char>(i * 10 + p);
      img.write(&byte, 1);
    }
  img.close();
  std::ofstream lab(lab_path, std::ios::binary);
  write_be32(lab, 0x00000801u);
  write_be32(lab, label_count);
  for (std::uint32_t i = 0; i < label_count; ++i) {
    char byte = static_cast<char>(i % 3);
    lab.write(&byte, 1);
  }
}

}  // namespace

TEST_CASE("synthetic generation is deterministic per seed") {
  SyntheticSpec spec;
  spec.classes = 4;
  spec.dims = 6;
  spec.n_train = 100;
  spec.n_test = 40;
  spec.seed = 123;
  CHECK(same_dataset(generate_synthetic(spec), generate_synthetic(spec)));
  spec.seed = 124;
  CHECK(!same_dataset(generate_synthetic(spec), generate_synthetic(spec)));
}

TEST_CASE("well-separated two-class data is solved by the nearest-mean rule") {
  SyntheticSpec spec;
  spec.classes = 2;
  spec.dims = 2;
  spec.n_train = 400;
  spec.n_test = 400;
  spec.seed = 9;
  spec.separation = 8.0;
  Dataset ds = generate_synthetic(spec);

  // Oracle: classify by the closer empirical class mean.
  double mean[2][2] = {{0, 0}, {0, 0}};
  std::size_t count[2] = {0, 0};
  for (std::size_t i = 0; i < ds.train_size(); ++i) {
    const int c = ds.train_y[i];
    ++count[c];
    for (int d = 0; d < 2; ++d) mean[c][d] += ds.train_x.at(i, d);
  }
  for (int c = 0; c < 2; ++c)
    for (int d = 0; d < 2; ++d) mean[c][d] /= static_cast<double>(count[c]);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.test_size(); ++i) {
    double dist[2] = {0, 0};
    for (int c = 0; c < 2; ++c)
      for (int d = 0; d < 2; ++d) {
        const double diff = ds.test_x.at(i, d) - mean[c][d];
        dist[c] += diff * diff;
      }
    if ((dist[0] < dist[1] ? 0 : 1) == ds.test_y[i]) ++correct;
  }
  CHECK(static_cast<double>(correct) / 400.0 >= 0.99);
}

TEST_CASE("empty train split is a valid dataset") {
  SyntheticSpec spec;
  spec.classes = 3;
  spec.dims = 4;
  spec.n_train = 0;
  spec.n_test = 10;
  Dataset ds = generate_synthetic(spec);
  CHECK(ds.train_size() == 0);
  CHECK(ds.test_size() == 10);
}

TEST_CASE("a single client owns the whole train split") {
  SyntheticSpec spec;
  spec.n_train = 57;
  spec.n_test = 1;
  Dataset ds = generate_synthetic(spec);
  auto shards = partition(ds, {PartitionMode::IID, 1, 5, 2});
  REQUIRE(shards.size() == 1);
  check_exact_partition(shards, 57);
}

TEST_CASE("IID partition cuts equal disjoint covering shards") {
  SyntheticSpec spec;
  spec.n_train = 1000;
  spec.n_test = 1;
  Dataset ds = generate_synthetic(spec);
  auto shards = partition(ds, {PartitionMode::IID, 10, 7, 2});
  REQUIRE(shards.size() == 10);
  for (const auto& s : shards) CHECK(s.size() == 100);
  check_exact_partition(shards, 1000);
}

TEST_CASE("label-skew partition gives each client its own labels") {
  SyntheticSpec spec;
  spec.classes = 10;
  spec.n_train = 1000;
  spec.n_test = 1;
  spec.seed = 3;
  Dataset ds = generate_synthetic(spec);
  PartitionSpec ps{PartitionMode::LabelSkew, 5, 11, 2};
  auto shards = partition(ds, ps);
  check_exact_partition(shards, 1000);
  for (const auto& s : shards) {
    std::set<int> labels;
    for (auto i : s) labels.insert(ds.train_y[i]);
    CHECK(labels.size() == 2);
  }
}

TEST_CASE("impossible skew constraints are rejected") {
  SyntheticSpec spec;
  spec.classes = 10;
  spec.n_train = 200;
  spec.n_test = 1;
  Dataset ds = generate_synthetic(spec);
  // 3 clients x 2 labels < 10 labels
  CHECK_THROWS_AS(partition(ds, {PartitionMode::LabelSkew, 3, 1, 2}),
                  std::invalid_argument);
  // more clients than labels
  CHECK_THROWS_AS(partition(ds, {PartitionMode::LabelSkew, 40, 1, 2}),
                  std::invalid_argument);
  // more clients than examples
  CHECK_THROWS_AS(partition(ds, {PartitionMode::IID, 300, 1, 2}),
                  std::invalid_argument);
}

TEST_CASE("partitions stay exact across modes and seeds") {
  SyntheticSpec spec;
  spec.classes = 6;
  spec.n_train = 311;
  spec.n_test = 1;
  Dataset ds = generate_synthetic(spec);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto iid = partition(ds, {PartitionMode::IID, 7, seed, 2});
    check_exact_partition(iid, 311);
    auto skew = partition(ds, {PartitionMode::LabelSkew, 3, seed, 2});
    check_exact_partition(skew, 311);
  }
}

TEST_CASE("IDX fixtures load with scaling") {
  write_idx_fixture("t_img.idx", "t_lab.idx", 2, 2);
  Dataset ds = load_idx("t_img.idx", "t_lab.idx", 3);
  CHECK(ds.train_size() == 2);
  CHECK(ds.train_x.cols == 9);
  CHECK(ds.train_y == std::vector<int>{0, 1});
  CHECK(ds.train_x.at(0, 0) == 0.0);
  CHECK(ds.train_x.at(1, 0) == doctest::Approx(10.0 / 255.0));
  std::remove("t_img.idx");
  std::remove("t_lab.idx");
}

TEST_CASE("IDX loader distinguishes its error kinds") {
  write_idx_fixture("t_img.idx", "t_lab.idx", 2, 3);
  try {
    load_idx("t_img.idx", "t_lab.idx");
    CHECK(false);
  } catch (const IdxError& e) {
    CHECK(e.kind == IdxError::Kind::CountMismatch);
    CHECK(std::string(e.what()).find("2 images vs 3 labels") !=
          std::string::npos);
  }

  write_idx_fixture("t_img.idx", "t_lab.idx", 2, 2, 0x00000805u);
  try {
    load_idx("t_img.idx", "t_lab.idx");
    CHECK(false);
  } catch (const IdxError& e) {
    CHECK(e.kind == IdxError::Kind::BadMagic);
  }

  write_idx_fixture("t_img.idx", "t_lab.idx", 2, 2, 0x00000803u, true);
  try {
    load_idx("t_img.idx", "t_lab.idx");
    CHECK(false);
  } catch (const IdxError& e) {
    CHECK(e.kind == IdxError::Kind::Truncated);
  }
  std::remove("t_img.idx");
  std::remove("t_lab.idx");
}

TEST_CASE("batch sampler is deterministic and wraps around") {
  Shard shard{10, 11, 12, 13, 14};
  BatchSampler a(shard, 99), b(shard, 99);
  for (int i = 0; i < 5; ++i) CHECK(a.next(3) == b.next(3));

  BatchSampler c(shard, 7);
  std::set<std::size_t> seen;
  auto first = c.next(5);
  for (auto i : first) seen.insert(i);
  CHECK(seen.size() == 5);  // one full pass before wrapping

  auto big = c.next(12);  // wraps twice
  CHECK(big.size() == 12);
  for (auto i : big) CHECK(i >= 10);
  CHECK_THROWS_AS(BatchSampler({}, 1), std::invalid_argument);
}

TEST_CASE("gather_batch copies rows and labels") {
  SyntheticSpec spec;
  spec.n_train = 20;
  spec.n_test = 1;
  Dataset ds = generate_synthetic(spec);
  Batch b = gather_batch(ds, {3, 7});
  CHECK(b.size() == 2);
  for (std::size_t d = 0; d < b.x.cols; ++d) {
    CHECK(b.x.at(0, d) == ds.train_x.at(3, d));
    CHECK(b.x.at(1, d) == ds.train_x.at(7, d));
  }
  CHECK(b.labels[0] == ds.train_y[3]);
  CHECK(b.labels[1] == ds.train_y[7]);
}
