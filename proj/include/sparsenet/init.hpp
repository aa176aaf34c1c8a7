#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>

#include "sparsenet/tensor.hpp"

namespace sparsenet {

using Rng = std::mt19937_64;

// Zero-mean normal with std sqrt(2 / fan_in). Samples are drawn in double
// so float and double models built from the same seed agree up to rounding.
template <typename T>
void he_init(Tensor<T>& weight, std::size_t fan_in, Rng& rng) {
  if (fan_in == 0) throw std::invalid_argument("he_init: fan_in must be positive");
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (auto& v : weight.values()) v = static_cast<T>(normal(rng));
}

// splitmix64 finalizer; combines seeds into independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t a, std::uint64_t b) { return mix64(mix64(a) ^ (b + 0x632be59bd9b4e019ULL)); }
constexpr std::uint64_t derive_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return derive_seed(derive_seed(a, b), c);
}

}  // namespace sparsenet
