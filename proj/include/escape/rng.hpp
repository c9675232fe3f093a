#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include "escape/types.hpp"

namespace escape {

using Rng = std::mt19937_64;

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derives an independent stream key from a base seed and a path of
/// coordinates (strategy, trial, agent, ...). Changing any coordinate
/// yields an unrelated key, so streams never depend on thread layout.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = mix64(base);
  for (std::uint64_t p : path) h = mix64(h ^ mix64(p + 0x632be59bd9b4e019ULL));
  return h;
}

inline Rng make_rng(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
  return Rng(derive_seed(base, path));
}

template <typename Scalar = double>
VectorX<Scalar> standard_normal(Eigen::Index n, Rng& rng) {
  std::normal_distribution<Scalar> normal(Scalar(0), Scalar(1));
  VectorX<Scalar> v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(rng);
  return v;
}

inline Eigen::Index uniform_index(Eigen::Index n, Rng& rng) {
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  return pick(rng);
}

}  // namespace escape
