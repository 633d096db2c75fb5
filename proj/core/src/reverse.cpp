// SPDX-License-Identifier: Apache-2.0
#include "mpfm/reverse.hpp"

#include <cmath>
#include <string>

#include "mpfm/error.hpp"

namespace mpfm {
namespace {

void check_step(double t, double dt) {
  if (!(t > 0.0 && t <= 1.0)) throw InvalidInput("reverse step: t must lie in (0, 1], got " + std::to_string(t));
  if (!(dt > 0.0) || dt > t) {
    throw InvalidInput("reverse step: need 0 < dt <= t, got dt = " + std::to_string(dt));
  }
}

void check_state(const GMVelocity& pred, std::span<const double> z_t) {
  if (z_t.size() != pred.dim()) throw InvalidInput("reverse step: state dimension differs from prediction");
}

void check_finite(std::span<const double> z, const char* where) {
  for (double v : z) {
    if (!std::isfinite(v)) throw NumericFault(std::string(where) + ": non-finite state");
  }
}

}  // namespace

double beta(double t, double dt) {
  check_step(t, dt);
  const double s = t - dt;
  const double at = NoiseSchedule::alpha(t), as = NoiseSchedule::alpha(s);
  const double st = NoiseSchedule::sigma(t), ss = NoiseSchedule::sigma(s);
  const double ratio = at / as;
  return st * st - ratio * ratio * ss * ss;
}

ReverseCoefficients reverse_coefficients(double t, double dt) {
  const double b = beta(t, dt);
  const double s = t - dt;
  const double at = NoiseSchedule::alpha(t), as = NoiseSchedule::alpha(s);
  const double st2 = NoiseSchedule::sigma(t) * NoiseSchedule::sigma(t);
  const double ss2 = NoiseSchedule::sigma(s) * NoiseSchedule::sigma(s);
  ReverseCoefficients c;
  c.c1 = (ss2 / st2) * (at / as);
  c.c2 = (b / st2) * as;
  c.c3 = (b / st2) * ss2;
  c.beta = b;
  c.t = t;
  c.dt = dt;
  return c;
}

EndpointPosterior endpoint_posterior(const GMVelocity& pred, std::span<const double> z_t, double t) {
  if (t == 0.0) throw DegenerateTime("endpoint_posterior: undefined at t = 0");
  if (!(t > 0.0 && t <= 1.0)) throw InvalidInput("endpoint_posterior: t must lie in (0, 1]");
  check_state(pred, z_t);
  const double st = NoiseSchedule::sigma(t);
  EndpointPosterior post{pred.weights, Tensor::matrix(pred.components(), pred.dim()), st * pred.shared_std};
  for (std::size_t k = 0; k < pred.components(); ++k)
    for (std::size_t j = 0; j < pred.dim(); ++j) post.means(k, j) = z_t[j] - st * pred.means(k, j);
  return post;
}

std::vector<ReverseComponent> reverse_kernel(const GMVelocity& pred, std::span<const double> z_t, double t,
                                             double dt) {
  const ReverseCoefficients c = reverse_coefficients(t, dt);
  const EndpointPosterior post = endpoint_posterior(pred, z_t, t);
  const double var = c.c3 + c.c2 * c.c2 * post.shared_std * post.shared_std;
  std::vector<ReverseComponent> out(pred.components());
  for (std::size_t k = 0; k < out.size(); ++k) {
    out[k].mean.resize(pred.dim());
    for (std::size_t j = 0; j < pred.dim(); ++j) out[k].mean[j] = c.c1 * z_t[j] + c.c2 * post.means(k, j);
    out[k].variance = var;
  }
  return out;
}

std::vector<double> reverse_step(const GMVelocity& pred, std::span<const double> z_t, double t, double dt,
                                 Rng& rng) {
  const auto kernel = reverse_kernel(pred, z_t, t, dt);
  const std::size_t k = rng.categorical(pred.weights);
  const double sd = std::sqrt(kernel[k].variance);
  std::vector<double> z = kernel[k].mean;
  for (double& v : z) v += sd * rng.normal();
  check_finite(z, "reverse_step");
  return z;
}

std::vector<double> sample_reverse_trajectory(const FlowModel& model, std::span<const double> z_start,
                                              std::size_t steps, Rng& rng) {
  if (steps == 0) throw InvalidInput("sample_reverse_trajectory: steps must be positive");
  if (z_start.size() != model.dim()) throw InvalidInput("sample_reverse_trajectory: wrong state dimension");
  std::vector<double> z(z_start.begin(), z_start.end());
  const double n = static_cast<double>(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const double t = static_cast<double>(steps - i) / n;
    const double next = static_cast<double>(steps - i - 1) / n;
    const GMVelocity pred = predict_velocity(model, z, t);
    z = reverse_step(pred, z, t, t - next, rng);
  }
  return z;
}

ad::Var push_forward_psi(const BoundFlow& flow, const ad::Var& z0) {
  const FlowModel& model = *flow.model;
  const std::size_t steps = model.one_step_psi ? 1 : model.psi_steps;
  if (steps == 0) throw InvalidInput("push_forward_psi: psi_steps must be positive");
  const double h = 1.0 / static_cast<double>(steps);
  ad::Var z = z0;
  for (std::size_t i = 0; i < steps; ++i) {
    const double t = static_cast<double>(i) * h;
    const ad::Var tcol = ad::Var::constant(Tensor::matrix(z.rows(), 1, t));
    const ad::Var v = mixture_mean(predict_velocity(flow, z, tcol));
    z = ad::add(z, ad::scale(v, h));
    if (!z.value().all_finite()) throw NumericFault("push_forward_psi: non-finite state");
  }
  return z;
}

Tensor push_forward_psi(const FlowModel& model, const Tensor& z0) {
  if (z0.rank() != 2 || z0.cols() != model.dim()) throw InvalidInput("push_forward_psi: batch must be n x d");
  const BoundFlow flow(model, false);
  return push_forward_psi(flow, ad::Var::constant(z0)).value();
}

std::vector<double> push_forward_psi(const FlowModel& model, std::span<const double> z0) {
  if (z0.size() != model.dim()) throw InvalidInput("push_forward_psi: wrong state dimension");
  const Tensor out = push_forward_psi(model, Tensor::row(z0));
  return {out.data().begin(), out.data().end()};
}

}  // namespace mpfm
