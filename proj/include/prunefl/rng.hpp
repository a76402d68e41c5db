#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace prunefl {

// All randomness in the library flows through mt19937_64 plus the helpers
// below. The standard pins mt19937_64's output sequence, and we avoid
// std::*_distribution (whose sequences are implementation-defined), so a
// given seed produces the same stream on every platform.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Stream ids for deriving independent sub-seeds from one master seed.
enum class SeedStream : std::uint64_t {
  Init = 1,
  Data = 2,
  Partition = 3,
  ClientBatches = 4,
  ClientSelection = 5,
  LotteryReinit = 6,
};

inline std::uint64_t derive_seed(std::uint64_t master, SeedStream stream,
                                 std::uint64_t index = 0) {
  return splitmix64(master ^ splitmix64(static_cast<std::uint64_t>(stream) ^
                                        splitmix64(index)));
}

inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform_in(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

// Box-Muller; stateless (draws two words per sample, discards the sibling).
inline double gaussian(std::mt19937_64& rng) {
  double u1 = 1.0 - uniform01(rng);  // (0, 1]
  double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

// Bounded draw by modulo; the bias is < 2^-32 for n below 2^32, irrelevant
// for reproducibility since the mapping itself is fixed.
inline std::size_t bounded(std::mt19937_64& rng, std::size_t n) {
  return static_cast<std::size_t>(rng() % static_cast<std::uint64_t>(n));
}

template <typename T>
void fisher_yates(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = bounded(rng, i);
    std::swap(v[i - 1], v[j]);
  }
}

// Uniform sample of k distinct values from [0, n), ascending order.
std::vector<std::size_t> inline sample_without_replacement(
    std::size_t n, std::size_t k, std::mt19937_64& rng) {
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  std::vector<std::size_t> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t j = i + bounded(rng, n - i);
    std::swap(pool[i], pool[j]);
    out.push_back(pool[i]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace prunefl
