// SPDX-License-Identifier: Apache-2.0
#include "mpfm/prototype.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>

#include "mpfm/error.hpp"

namespace mpfm {
namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double d = a[j] - b[j];
    acc += d * d;
  }
  return acc;
}

void check_dim(const GMPrototype& proto, std::span<const double> y) {
  if (y.size() != proto.dim()) {
    throw InvalidInput("point has dimension " + std::to_string(y.size()) + ", prototype has " +
                       std::to_string(proto.dim()));
  }
}

std::vector<double> log_terms(const GMPrototype& proto, std::span<const double> y) {
  check_dim(proto, y);
  const double s2 = proto.shared_std * proto.shared_std;
  const double norm = 0.5 * static_cast<double>(proto.dim()) * std::log(2.0 * std::numbers::pi * s2);
  std::vector<double> out(proto.components());
  for (std::size_t k = 0; k < out.size(); ++k) {
    out[k] = std::log(proto.weights[k]) - 0.5 * sq_dist(y, proto.means.row_span(k)) / s2 - norm;
  }
  return out;
}

struct Clustering {
  Tensor centers;
  std::vector<std::size_t> labels;
  double sse = 0.0;
};

Tensor seed_centers(const Tensor& x, std::size_t k, Rng& rng) {
  const std::size_t n = x.rows(), d = x.cols();
  Tensor centers = Tensor::matrix(k, d);
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  std::size_t pick = rng.below(n);
  for (std::size_t c = 0; c < k; ++c) {
    std::copy_n(x.row_span(pick).begin(), d, centers.row_span(c).begin());
    if (c + 1 == k) break;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      dist[i] = std::min(dist[i], sq_dist(x.row_span(i), centers.row_span(c)));
      total += dist[i];
    }
    pick = total > 0.0 ? rng.categorical(dist) : rng.below(n);
  }
  return centers;
}

Clustering lloyd(const Tensor& x, Tensor centers, const KMeansOptions& opt) {
  const std::size_t n = x.rows(), d = x.cols(), k = centers.rows();
  Clustering out;
  double prev_sse = std::numeric_limits<double>::infinity();
  for (std::size_t iter = 0; iter < opt.max_iterations; ++iter) {
    out.labels = assign_clusters(x, centers);

    // Re-seed empty clusters at the point farthest from its own centroid.
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t l : out.labels) ++counts[l];
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[out.labels[i]] <= 1) continue;
        const double dd = sq_dist(x.row_span(i), centers.row_span(out.labels[i]));
        if (dd > far_d) {
          far_d = dd;
          far = i;
        }
      }
      if (far_d < 0.0) break;  // fewer distinct donors than clusters
      --counts[out.labels[far]];
      out.labels[far] = c;
      counts[c] = 1;
      std::copy_n(x.row_span(far).begin(), d, centers.row_span(c).begin());
    }

    Tensor next = Tensor::matrix(k, d);
    for (std::size_t i = 0; i < n; ++i) {
      auto row = next.row_span(out.labels[i]);
      const auto xi = x.row_span(i);
      for (std::size_t j = 0; j < d; ++j) row[j] += xi[j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        std::copy_n(centers.row_span(c).begin(), d, next.row_span(c).begin());
        continue;
      }
      for (double& v : next.row_span(c)) v /= static_cast<double>(counts[c]);
    }
    centers = std::move(next);

    double sse = 0.0;
    for (std::size_t i = 0; i < n; ++i) sse += sq_dist(x.row_span(i), centers.row_span(out.labels[i]));
    out.sse = sse;
    const bool converged = std::isfinite(prev_sse) && std::abs(prev_sse - sse) <= opt.relative_tolerance * std::max(prev_sse, 1e-300);
    prev_sse = sse;
    if (converged) break;
  }
  // Final assignment consistent with the returned centers.
  out.labels = assign_clusters(x, centers);
  out.sse = 0.0;
  for (std::size_t i = 0; i < n; ++i) out.sse += sq_dist(x.row_span(i), centers.row_span(out.labels[i]));
  out.centers = std::move(centers);
  return out;
}

}  // namespace

GMPrototype GMPrototype::make(std::vector<double> weights, Tensor means, double shared_std) {
  if (weights.empty()) throw InvalidInput("prototype needs at least one component");
  double total = 0.0;
  for (double& w : weights) {
    if (!std::isfinite(w) || w < 0.0) throw InvalidInput("prototype weights must be finite and nonnegative");
    w = std::max(w, kWeightFloor);
    total += w;
  }
  for (double& w : weights) w /= total;
  GMPrototype p{std::move(weights), std::move(means), std::max(shared_std, kStdFloor)};
  p.validate();
  return p;
}

void GMPrototype::validate() const {
  if (weights.empty()) throw InvalidInput("prototype needs K >= 1");
  if (means.rank() != 2 || means.rows() != weights.size()) {
    throw InvalidInput("prototype means must be K x d with K = " + std::to_string(weights.size()));
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w > 0.0)) throw InvalidInput("prototype weights must be strictly positive");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) throw InvalidInput("prototype weights must sum to 1");
  if (!(shared_std >= kStdFloor) || !std::isfinite(shared_std)) {
    throw InvalidInput("prototype shared std must be finite and >= " + std::to_string(kStdFloor));
  }
  if (!means.all_finite()) throw InvalidInput("prototype means must be finite");
}

std::vector<std::size_t> assign_clusters(const Tensor& features, const Tensor& centers) {
  const std::size_t n = features.rows(), k = centers.rows();
  std::vector<std::size_t> labels(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      const double dd = sq_dist(features.row_span(i), centers.row_span(c));
      if (dd < best) {
        best = dd;
        labels[i] = c;
      }
    }
  }
  return labels;
}

GMPrototype kmeanspp_init(const Tensor& features, std::size_t k, std::uint64_t seed, const KMeansOptions& options) {
  if (features.rank() != 2) throw InvalidInput("kmeanspp_init: features must be N x d");
  const std::size_t n = features.rows(), d = features.cols();
  if (k == 0) throw InvalidInput("kmeanspp_init: K must be at least 1");
  if (n < k) {
    throw InsufficientData("kmeanspp_init: need N >= K, got N = " + std::to_string(n) + ", K = " + std::to_string(k));
  }
  if (!features.all_finite()) throw InvalidInput("kmeanspp_init: features must be finite");

  Rng rng(seed, 0x6b6d65616e73ULL);
  Clustering best;
  best.sse = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < std::max<std::size_t>(options.restarts, 1); ++r) {
    Rng stream = rng.split(r);
    Clustering c = lloyd(features, seed_centers(features, k, stream), options);
    if (c.sse < best.sse) best = std::move(c);
  }

  std::vector<double> weights(k, 0.0);
  for (std::size_t l : best.labels) weights[l] += 1.0;
  for (double& w : weights) w /= static_cast<double>(n);
  const double s2 = best.sse / (static_cast<double>(d) * static_cast<double>(n));
  const double s = std::max(std::sqrt(s2), options.std_floor);
  return GMPrototype::make(std::move(weights), std::move(best.centers), s);
}

double log_density(const GMPrototype& proto, std::span<const double> y) {
  const auto terms = log_terms(proto, y);
  const double mx = *std::max_element(terms.begin(), terms.end());
  double acc = 0.0;
  for (double t : terms) acc += std::exp(t - mx);
  return mx + std::log(acc);
}

Responsibilities responsibilities(const GMPrototype& proto, std::span<const double> y) {
  auto terms = log_terms(proto, y);
  const double mx = *std::max_element(terms.begin(), terms.end());
  double acc = 0.0;
  for (double& t : terms) {
    t = std::exp(t - mx);
    acc += t;
  }
  for (double& t : terms) t /= acc;
  return {std::move(terms)};
}

std::vector<double> sample_prior(const GMPrototype& proto, Rng& rng) {
  const std::size_t k = rng.categorical(proto.weights);
  std::vector<double> y(proto.means.row_span(k).begin(), proto.means.row_span(k).end());
  for (double& v : y) v += proto.shared_std * rng.normal();
  return y;
}

std::size_t most_probable_component(const GMPrototype& proto, std::span<const double> y) {
  check_dim(proto, y);
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < proto.components(); ++k) {
    const double dd = sq_dist(y, proto.means.row_span(k));
    if (dd < best_d) {
      best_d = dd;
      best = k;
    }
  }
  return best;
}

std::vector<std::size_t> most_probable_components(const Tensor& means, const Tensor& y) {
  if (y.cols() != means.cols()) throw InvalidInput("most_probable_components: dimension mismatch");
  return assign_clusters(y, means);
}

ad::Var component_log_terms(const ad::Var& y, const ad::Var& means, std::span<const double> weights, double shared_std) {
  const std::size_t k = means.rows();
  if (weights.size() != k) throw InvalidInput("component_log_terms: weight count differs from K");
  if (y.cols() != means.cols()) throw InvalidInput("component_log_terms: dimension mismatch");
  const double s2 = shared_std * shared_std;
  const double norm = 0.5 * static_cast<double>(means.cols()) * std::log(2.0 * std::numbers::pi * s2);
  Tensor log_pi = Tensor::matrix(1, k);
  for (std::size_t c = 0; c < k; ++c) log_pi(0, c) = std::log(weights[c]) - norm;
  return ad::add(ad::scale(ad::squared_distances(y, means), -0.5 / s2), ad::Var::constant(std::move(log_pi)));
}

}  // namespace mpfm
