#include "prunefl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace prunefl {

namespace {

constexpr char kMagic[4] = {'P', 'F', 'N', 'N'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

void put_f64(std::ostream& os, double v) {
  put_u64(os, std::bit_cast<std::uint64_t>(v));
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& is) {
  return std::bit_cast<double>(get_u64(is));
}

}  // namespace

void save_checkpoint(const std::string& path, const MaskedParams& params,
                     std::uint64_t init_seed) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path);
  os.write(kMagic, 4);
  put_u32(os, kVersion);
  put_u64(os, init_seed);
  put_u32(os, static_cast<std::uint32_t>(params.layers.size()));
  for (const auto& l : params.layers) {
    put_u64(os, l.w.size());
    put_u64(os, l.b.size());
  }
  for (const auto& l : params.layers) {
    std::size_t nbytes = (l.mask.size() + 7) / 8;
    std::vector<char> bitmap(nbytes, 0);
    for (std::size_t j = 0; j < l.mask.size(); ++j)
      if (l.mask[j]) bitmap[j / 8] |= static_cast<char>(1 << (j % 8));
    os.write(bitmap.data(), static_cast<std::streamsize>(nbytes));
    for (double v : l.w) put_f64(os, v);
    for (double v : l.b) put_f64(os, v);
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  std::uint32_t version = get_u32(is);
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported version " +
                             std::to_string(version));
  Checkpoint ck;
  ck.init_seed = get_u64(is);
  std::uint32_t layer_count = get_u32(is);
  std::vector<std::pair<std::uint64_t, std::uint64_t>> table(layer_count);
  for (auto& [wc, bc] : table) {
    wc = get_u64(is);
    bc = get_u64(is);
  }
  ck.params.layers.resize(layer_count);
  for (std::uint32_t li = 0; li < layer_count; ++li) {
    auto [wc, bc] = table[li];
    LayerParams& lp = ck.params.layers[li];
    std::size_t nbytes = (wc + 7) / 8;
    std::vector<unsigned char> bitmap(nbytes);
    is.read(reinterpret_cast<char*>(bitmap.data()),
            static_cast<std::streamsize>(nbytes));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    lp.mask.resize(wc);
    for (std::uint64_t j = 0; j < wc; ++j)
      lp.mask[j] = (bitmap[j / 8] >> (j % 8)) & 1;
    lp.w.resize(wc);
    for (auto& v : lp.w) v = get_f64(is);
    lp.b.resize(bc);
    for (auto& v : lp.b) v = get_f64(is);
  }
  return ck;
}

}  // namespace prunefl
