// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mpfm/autodiff.hpp"
#include "mpfm/flow.hpp"
#include "mpfm/rng.hpp"
#include "mpfm/tensor.hpp"

namespace mpfm {

struct ReverseCoefficients {
  double c1 = 0.0;
  double c2 = 0.0;
  double c3 = 0.0;
  double beta = 0.0;
  double t = 0.0;
  double dt = 0.0;
};

/// Forward transition variance sigma_t^2 - (alpha_t / alpha_s)^2 sigma_s^2
/// with s = t - dt. Requires 0 < dt <= t <= 1.
double beta(double t, double dt);

ReverseCoefficients reverse_coefficients(double t, double dt);

/// q(z_0 | z_t): component k has mean z_t - sigma_t mu_k and std sigma_t s.
struct EndpointPosterior {
  std::vector<double> weights;
  Tensor means;  // K x d
  double shared_std = 0.0;
};

/// Throws DegenerateTime for t = 0.
EndpointPosterior endpoint_posterior(const GMVelocity& pred, std::span<const double> z_t, double t);

/// Mean and per-coordinate variance of one reverse-kernel component.
struct ReverseComponent {
  std::vector<double> mean;
  double variance = 0.0;
};

/// The K Gaussian components of the one-step reverse kernel, in weight order.
std::vector<ReverseComponent> reverse_kernel(const GMVelocity& pred, std::span<const double> z_t, double t, double dt);

/// One draw of z_{t - dt}: a component from the predicted weights, then a
/// Gaussian with mean c1 z_t + c2 mu_zk and variance (c3 + c2^2 s_z^2) I.
std::vector<double> reverse_step(const GMVelocity& pred, std::span<const double> z_t, double t, double dt, Rng& rng);

/// Runs `steps` reverse steps from t = 1 to t = 0 on a uniform grid, querying
/// the network at every grid point.
std::vector<double> sample_reverse_trajectory(const FlowModel& model, std::span<const double> z_start,
                                              std::size_t steps, Rng& rng);

/// Explicit Euler transport of z0 along the mixture-mean velocity from t = 0
/// to t = 1 using model.psi_steps steps (one step when one_step_psi is set).
std::vector<double> push_forward_psi(const FlowModel& model, std::span<const double> z0);
/// Row-wise transport of an n x d batch.
Tensor push_forward_psi(const FlowModel& model, const Tensor& z0);
/// Differentiable transport through the bound network parameters.
ad::Var push_forward_psi(const BoundFlow& flow, const ad::Var& z0);

}  // namespace mpfm
