// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mpfm/autodiff.hpp"
#include "mpfm/rng.hpp"
#include "mpfm/tensor.hpp"

namespace mpfm {

/// Isotropic Gaussian mixture with one shared standard deviation:
/// p(y) = sum_k pi_k N(y; mu_k, s^2 I).
struct GMPrototype {
  static constexpr double kStdFloor = 1e-3;
  static constexpr double kWeightFloor = 1e-12;

  std::vector<double> weights;  // K, on the simplex
  Tensor means;                 // K x d
  double shared_std = 1.0;

  /// Floors weights at kWeightFloor, renormalizes, clamps s to kStdFloor.
  static GMPrototype make(std::vector<double> weights, Tensor means, double shared_std);

  std::size_t components() const { return weights.size(); }
  std::size_t dim() const { return means.cols(); }

  /// Throws InvalidInput when an invariant does not hold.
  void validate() const;
};

struct Responsibilities {
  std::vector<double> values;
};

struct KMeansOptions {
  std::size_t max_iterations = 100;
  double relative_tolerance = 1e-8;
  /// Independent k-means++ seedings; the lowest within-cluster SSE wins.
  std::size_t restarts = 4;
  double std_floor = GMPrototype::kStdFloor;
};

/// k-means++ seeding followed by Lloyd iterations on N x d features.
/// pi_k = |C_k| / N and s^2 = SSE / (d N), floored at std_floor^2.
GMPrototype kmeanspp_init(const Tensor& features, std::size_t k, std::uint64_t seed, const KMeansOptions& options = {});

/// Nearest-centroid labels (ties to the lowest index).
std::vector<std::size_t> assign_clusters(const Tensor& features, const Tensor& centers);

double log_density(const GMPrototype& proto, std::span<const double> y);
Responsibilities responsibilities(const GMPrototype& proto, std::span<const double> y);
std::vector<double> sample_prior(const GMPrototype& proto, Rng& rng);

/// argmax_c N(y; mu_c, s^2 I), i.e. the nearest mean; ties to the lowest index.
std::size_t most_probable_component(const GMPrototype& proto, std::span<const double> y);
std::vector<std::size_t> most_probable_components(const Tensor& means, const Tensor& y);

/// n x K matrix of log pi_k + log N(y_i; mu_k, s^2 I), differentiable in y and
/// the means. Feeding it to logsumexp_rows gives the log density.
ad::Var component_log_terms(const ad::Var& y, const ad::Var& means, std::span<const double> weights, double shared_std);

}  // namespace mpfm
