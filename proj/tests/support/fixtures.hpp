// SPDX-License-Identifier: Apache-2.0
// Small hand-built models shared by several tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "mpfm/flow.hpp"
#include "mpfm/mlp.hpp"
#include "mpfm/prototype.hpp"
#include "mpfm/scoring.hpp"
#include "oracles.hpp"

namespace fixture {

// A velocity network that ignores its input: one linear layer with zero
// weights and bias [logits, means row-major].
inline mpfm::FlowModel constant_velocity(mpfm::GMPrototype proto, const std::vector<double>& logits,
                                         const mpfm::Tensor& means, std::size_t psi_steps = 8) {
  const std::size_t k = proto.components(), d = proto.dim();
  mpfm::DenseLayer layer{mpfm::Tensor::matrix(d + 1, k + k * d), mpfm::Tensor::matrix(1, k + k * d)};
  for (std::size_t j = 0; j < k; ++j) layer.bias(0, j) = logits[j];
  for (std::size_t j = 0; j < k * d; ++j) layer.bias(0, k + j) = means[j];
  mpfm::FlowModel m;
  m.velocity_net = mpfm::MLP({layer}, mpfm::Activation::Tanh);
  m.prototype = std::move(proto);
  m.psi_steps = psi_steps;
  return m;
}

inline mpfm::GMPrototype prototype(std::vector<double> w, mpfm::Tensor means, double s) {
  return mpfm::GMPrototype::make(std::move(w), std::move(means), s);
}

inline mpfm::GMPrototype random_prototype(std::size_t k, std::size_t d, mpfm::Rng& rng, double spread = 2.0,
                                          double s = 0.7) {
  std::vector<double> w(k);
  for (double& v : w) v = 0.2 + rng.uniform();
  double total = 0.0;
  for (double v : w) total += v;
  for (double& v : w) v /= total;
  return mpfm::GMPrototype::make(w, oracle::random_matrix(k, d, rng, spread), s);
}

// A random network with the production layout (d + 1 -> hidden -> K + K d)
// but no zeroed outputs, so weights and velocities vary with the input.
inline mpfm::FlowModel random_flow(mpfm::GMPrototype proto, mpfm::Rng& rng, std::vector<std::size_t> hidden = {6},
                                   std::size_t psi_steps = 4) {
  const std::size_t k = proto.components(), d = proto.dim();
  std::vector<std::size_t> sizes{d + 1};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(k + k * d);
  mpfm::FlowModel m;
  m.velocity_net = mpfm::MLP(sizes, mpfm::Activation::Tanh, rng);
  m.prototype = std::move(proto);
  m.psi_steps = psi_steps;
  return m;
}

inline mpfm::FeatureSample random_sample(std::int64_t id, std::size_t p, std::size_t c, mpfm::Rng& rng, int label = 0) {
  return mpfm::FeatureSample::make(id, oracle::random_matrix(p, c, rng), label);
}

// Central differences on model tensors in place. Returns the worst
// |analytic - numeric| / (|numeric| + floor) over every entry.
inline double model_fd_error(const std::vector<mpfm::Tensor*>& params, const std::vector<mpfm::Tensor>& analytic,
                             const std::function<double()>& eval, double step = 1e-5, double floor = 1e-3) {
  double worst = 0.0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    for (std::size_t i = 0; i < params[t]->size(); ++i) {
      double& x = (*params[t])[i];
      const double saved = x;
      x = saved + step;
      const double plus = eval();
      x = saved - step;
      const double minus = eval();
      x = saved;
      const double numeric = (plus - minus) / (2.0 * step);
      worst = std::max(worst, std::abs(analytic[t][i] - numeric) / (std::abs(numeric) + floor));
    }
  }
  return worst;
}

}  // namespace fixture
