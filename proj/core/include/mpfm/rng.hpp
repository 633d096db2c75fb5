// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

namespace mpfm {

/// Counter-based generator: output i is a pure hash of (key, i), so streams
/// can be split per (sample, step) and stay reproducible in any order.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0);

  std::uint64_t next_u64();

  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);

  /// Standard normal via Box-Muller (consumes two uniforms per draw).
  double normal();

  /// Uniform integer in [0, n). n must be positive.
  std::size_t below(std::size_t n);

  /// Index drawn with probability proportional to weights[i].
  std::size_t categorical(std::span<const double> weights);

  /// Independent child stream; does not advance this generator.
  Rng split(std::uint64_t key) const;

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x) noexcept;

}  // namespace mpfm
