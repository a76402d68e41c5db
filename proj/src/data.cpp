#include "prunefl/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "prunefl/rng.hpp"

namespace prunefl {

namespace {

void fill_split(std::mt19937_64& rng, const std::vector<std::vector<double>>& means,
                double sigma, std::size_t count, int dims, int classes,
                DenseMatrix& x, std::vector<int>& y) {
  x = DenseMatrix(count, dims, 0.0);
  y.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    int cls = static_cast<int>(bounded(rng, static_cast<std::size_t>(classes)));
    y[i] = cls;
    for (int d = 0; d < dims; ++d)
      x.at(i, d) = means[cls][d] + sigma * gaussian(rng);
  }
}

}  // namespace

Dataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.classes < 2)
    throw std::invalid_argument("generate_synthetic: need >= 2 classes");
  if (spec.dims < 1)
    throw std::invalid_argument("generate_synthetic: need >= 1 dims");
  std::mt19937_64 rng(derive_seed(spec.seed, SeedStream::Data));

  // Class means: seeded Gaussian directions normalized to the separation
  // radius. For dims >= 4 these are pairwise well apart with overwhelming
  // probability.
  std::vector<std::vector<double>> means(spec.classes,
                                         std::vector<double>(spec.dims));
  for (auto& m : means) {
    double norm2 = 0.0;
    for (auto& v : m) {
      v = gaussian(rng);
      norm2 += v * v;
    }
    double scale = spec.separation / std::sqrt(std::max(norm2, 1e-30));
    for (auto& v : m) v *= scale;
  }

  Dataset ds;
  ds.num_classes = spec.classes;
  fill_split(rng, means, spec.noise_sigma, spec.n_train, spec.dims,
             spec.classes, ds.train_x, ds.train_y);
  fill_split(rng, means, spec.noise_sigma, spec.n_test, spec.dims,
             spec.classes, ds.test_x, ds.test_y);
  return ds;
}

std::vector<Shard> partition(const Dataset& ds, const PartitionSpec& spec) {
  const std::size_t n = ds.train_size();
  if (spec.num_clients == 0)
    throw std::invalid_argument("partition: need at least one client");
  if (spec.num_clients > n)
    throw std::invalid_argument("partition: more clients than examples");

  std::vector<Shard> shards(spec.num_clients);
  if (spec.mode == PartitionMode::IID) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(derive_seed(spec.seed, SeedStream::Partition));
    fisher_yates(order, rng);
    const std::size_t base = n / spec.num_clients;
    std::size_t pos = 0;
    for (std::size_t c = 0; c < spec.num_clients; ++c) {
      std::size_t take = c + 1 == spec.num_clients ? n - pos : base;
      shards[c].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                       order.begin() + static_cast<std::ptrdiff_t>(pos + take));
      pos += take;
    }
    return shards;
  }

  // LabelSkew: deal whole labels in order, as evenly as possible.
  std::map<int, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < n; ++i) by_label[ds.train_y[i]].push_back(i);
  const std::size_t n_labels = by_label.size();
  if (n_labels > spec.num_clients *
                     static_cast<std::size_t>(spec.labels_per_client))
    throw std::invalid_argument(
        "partition: " + std::to_string(n_labels) + " labels cannot fit " +
        std::to_string(spec.num_clients) + " clients at " +
        std::to_string(spec.labels_per_client) + " labels each");
  if (spec.num_clients > n_labels)
    throw std::invalid_argument(
        "partition: more clients than distinct labels");

  const std::size_t base = n_labels / spec.num_clients;
  const std::size_t extra = n_labels % spec.num_clients;
  auto it = by_label.begin();
  for (std::size_t c = 0; c < spec.num_clients; ++c) {
    std::size_t take = base + (c < extra ? 1 : 0);
    for (std::size_t k = 0; k < take; ++k, ++it)
      shards[c].insert(shards[c].end(), it->second.begin(), it->second.end());
  }
  return shards;
}

namespace {

std::uint32_t read_be32(std::ifstream& is, const std::string& path) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is)
    throw IdxError(IdxError::Kind::Truncated, "idx: truncated header in " + path);
  return (static_cast<std::uint32_t>(b[0]) << 24) |
         (static_cast<std::uint32_t>(b[1]) << 16) |
         (static_cast<std::uint32_t>(b[2]) << 8) |
         static_cast<std::uint32_t>(b[3]);
}

}  // namespace

Dataset load_idx(const std::string& images_path,
                 const std::string& labels_path, int num_classes) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img)
    throw IdxError(IdxError::Kind::Truncated,
                   "idx: cannot open " + images_path);
  if (read_be32(img, images_path) != 0x00000803u)
    throw IdxError(IdxError::Kind::BadMagic,
                   "idx: bad image magic in " + images_path);
  const std::uint32_t count = read_be32(img, images_path);
  const std::uint32_t rows = read_be32(img, images_path);
  const std::uint32_t cols = read_be32(img, images_path);

  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab)
    throw IdxError(IdxError::Kind::Truncated,
                   "idx: cannot open " + labels_path);
  if (read_be32(lab, labels_path) != 0x00000801u)
    throw IdxError(IdxError::Kind::BadMagic,
                   "idx: bad label magic in " + labels_path);
  const std::uint32_t label_count = read_be32(lab, labels_path);
  if (label_count != count)
    throw IdxError(IdxError::Kind::CountMismatch,
                   "idx: " + std::to_string(count) + " images vs " +
                       std::to_string(label_count) + " labels");

  Dataset ds;
  ds.num_classes = num_classes;
  const std::size_t pixels = static_cast<std::size_t>(rows) * cols;
  ds.train_x = DenseMatrix(count, pixels, 0.0);
  std::vector<unsigned char> buf(pixels);
  for (std::uint32_t i = 0; i < count; ++i) {
    img.read(reinterpret_cast<char*>(buf.data()),
             static_cast<std::streamsize>(pixels));
    if (!img)
      throw IdxError(IdxError::Kind::Truncated,
                     "idx: truncated image data in " + images_path);
    for (std::size_t p = 0; p < pixels; ++p)
      ds.train_x.at(i, p) = static_cast<double>(buf[p]) / 255.0;
  }
  ds.train_y.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    unsigned char l;
    lab.read(reinterpret_cast<char*>(&l), 1);
    if (!lab)
      throw IdxError(IdxError::Kind::Truncated,
                     "idx: truncated label data in " + labels_path);
    ds.train_y[i] = l;
  }
  return ds;
}

BatchSampler::BatchSampler(Shard shard, std::uint64_t seed)
    : shard_(std::move(shard)), rng_(seed) {
  if (shard_.empty())
    throw std::invalid_argument("batch sampler: empty shard");
  reshuffle();
}

void BatchSampler::reshuffle() {
  order_ = shard_;
  fisher_yates(order_, rng_);
  cursor_ = 0;
}

std::vector<std::size_t> BatchSampler::next(std::size_t batch_size) {
  std::vector<std::size_t> out;
  out.reserve(batch_size);
  while (out.size() < batch_size) {
    if (cursor_ == order_.size()) reshuffle();
    out.push_back(order_[cursor_++]);
  }
  return out;
}

Batch gather_batch(const Dataset& ds, const std::vector<std::size_t>& indices) {
  Batch b;
  b.x = DenseMatrix(indices.size(), ds.train_x.cols, 0.0);
  b.labels.resize(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t src = indices[i];
    std::copy_n(&ds.train_x.values[src * ds.train_x.cols], ds.train_x.cols,
                &b.x.values[i * b.x.cols]);
    b.labels[i] = ds.train_y[src];
  }
  return b;
}

}  // namespace prunefl
