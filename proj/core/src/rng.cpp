// SPDX-License-Identifier: Apache-2.0
#include "mpfm/rng.hpp"

#include <cmath>
#include <numbers>

#include "mpfm/error.hpp"

namespace mpfm {

std::uint64_t mix64(std::uint64_t x) noexcept {
  // splitmix64 finalizer
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream)
    : key_(mix64(seed ^ mix64(stream + 0x632be59bd9b4e019ULL))) {}

std::uint64_t Rng::next_u64() {
  const std::uint64_t c = counter_++;
  return mix64(key_ ^ mix64(c * 0xd1b54a32d192ed03ULL + 1));
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  // 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::below(std::size_t n) {
  if (n == 0) throw InvalidInput("Rng::below: n must be positive");
  // Lemire-style multiply-shift; bias is < n / 2^64.
  __extension__ using u128 = unsigned __int128;
  const auto wide = static_cast<u128>(next_u64()) * n;
  return static_cast<std::size_t>(wide >> 64);
}

std::size_t Rng::categorical(std::span<const double> weights) {
  if (weights.empty()) throw InvalidInput("Rng::categorical: no weights");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw InvalidInput("Rng::categorical: weights must be finite and nonnegative");
    }
    total += w;
  }
  if (!(total > 0.0)) throw InvalidInput("Rng::categorical: weights sum to zero");
  const double target = uniform() * total;
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] > 0.0) last_positive = i;
    acc += weights[i];
    if (target < acc) return i;
  }
  return last_positive;
}

Rng Rng::split(std::uint64_t key) const {
  Rng child(0);
  child.key_ = mix64(key_ ^ mix64(key ^ 0xa0761d6478bd642fULL));
  child.counter_ = 0;
  return child;
}

}  // namespace mpfm
