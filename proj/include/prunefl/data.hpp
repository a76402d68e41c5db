#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "prunefl/nn.hpp"

namespace prunefl {

struct Dataset {
  DenseMatrix train_x;  // n_train x dims
  std::vector<int> train_y;
  DenseMatrix test_x;
  std::vector<int> test_y;
  int num_classes = 0;

  std::size_t train_size() const { return train_y.size(); }
  std::size_t test_size() const { return test_y.size(); }
  int dims() const { return static_cast<int>(train_x.cols); }
};

// Index view into the train split.
using Shard = std::vector<std::size_t>;

enum class PartitionMode { IID, LabelSkew };

struct PartitionSpec {
  PartitionMode mode = PartitionMode::IID;
  std::size_t num_clients = 1;
  std::uint64_t seed = 0;
  int labels_per_client = 2;  // LabelSkew only
};

struct SyntheticSpec {
  int classes = 10;
  int dims = 32;
  std::size_t n_train = 2000;
  std::size_t n_test = 500;
  std::uint64_t seed = 0;
  double separation = 4.0;   // class-mean radius, in noise sigmas
  double noise_sigma = 1.0;
};

// Gaussian class clusters around seeded unit-sphere means scaled by
// `separation`. Deterministic per seed; separable enough that small MLPs
// clear 90% test accuracy at the defaults.
Dataset generate_synthetic(const SyntheticSpec& spec);

// IID: seeded shuffle, equal contiguous cuts, remainder to the last shard.
// LabelSkew: whole labels dealt contiguously, at most `labels_per_client`
// distinct labels each. Always an exact set partition of the train split.
std::vector<Shard> partition(const Dataset& ds, const PartitionSpec& spec);

struct IdxError : std::runtime_error {
  enum class Kind { BadMagic, Truncated, CountMismatch };
  Kind kind;
  IdxError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

// MNIST-style IDX pair (big-endian, magic 0x803 images / 0x801 labels).
// Pixels scale to [0, 1]. Both files land in the train split; callers split
// or pair with a second call for test data.
Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 int num_classes = 10);

// Deterministic mini-batch stream over a shard: seeded shuffle, sequential
// cuts with wraparound, reshuffled when exhausted.
class BatchSampler {
 public:
  BatchSampler() = default;
  BatchSampler(Shard shard, std::uint64_t seed);
  // Next `batch_size` indices; batches larger than the shard wrap around.
  std::vector<std::size_t> next(std::size_t batch_size);
  std::size_t shard_size() const { return shard_.size(); }

 private:
  Shard shard_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::mt19937_64 rng_;
  void reshuffle();
};

Batch gather_batch(const Dataset& ds, const std::vector<std::size_t>& indices);

}  // namespace prunefl
