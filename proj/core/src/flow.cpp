// SPDX-License-Identifier: Apache-2.0
#include "mpfm/flow.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mpfm/error.hpp"

namespace mpfm {
namespace {

void check_same_dim(std::span<const double> a, std::span<const double> b, const char* op) {
  if (a.size() != b.size()) {
    throw InvalidInput(std::string(op) + ": dimension mismatch (" + std::to_string(a.size()) + " vs " +
                       std::to_string(b.size()) + ")");
  }
}

void check_time(double t, const char* op) {
  if (!(t >= 0.0 && t <= 1.0)) throw InvalidInput(std::string(op) + ": t must lie in [0, 1]");
}

ad::Var row_constant(std::span<const double> v) { return ad::Var::constant(Tensor::row(v)); }

}  // namespace

std::pair<double, double> schedule_at(double t) {
  check_time(t, "schedule_at");
  return {NoiseSchedule::alpha(t), NoiseSchedule::sigma(t)};
}

std::vector<double> interpolate(std::span<const double> z0, std::span<const double> zT, double t) {
  check_same_dim(z0, zT, "interpolate");
  check_time(t, "interpolate");
  std::vector<double> out(z0.size());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = (1.0 - t) * z0[j] + t * zT[j];
  return out;
}

std::vector<double> true_velocity(std::span<const double> z0, std::span<const double> zT) {
  check_same_dim(z0, zT, "true_velocity");
  std::vector<double> out(z0.size());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = zT[j] - z0[j];
  return out;
}

std::string to_string(EndpointSource e) {
  switch (e) {
    case EndpointSource::PriorSample: return "prior";
    case EndpointSource::GaussianNoise: return "noise";
    case EndpointSource::AssignedMean: return "assigned_mean";
    case EndpointSource::AssignedSample: return "assigned_sample";
  }
  return "prior";
}

EndpointSource endpoint_source_from_string(const std::string& name) {
  if (name == "prior") return EndpointSource::PriorSample;
  if (name == "noise") return EndpointSource::GaussianNoise;
  if (name == "assigned_mean") return EndpointSource::AssignedMean;
  if (name == "assigned_sample") return EndpointSource::AssignedSample;
  throw InvalidInput("unknown endpoint source '" + name + "'");
}

FlowModel FlowModel::create(GMPrototype prototype, const std::vector<std::size_t>& hidden, Activation act, Rng& rng,
                            std::size_t psi_steps) {
  prototype.validate();
  const std::size_t k = prototype.components(), d = prototype.dim();
  std::vector<std::size_t> sizes{d + 1};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(k + k * d);
  FlowModel model{MLP(sizes, act, rng), std::move(prototype), psi_steps, false};
  model.velocity_net.zero_final_outputs(0, k);
  model.validate();
  return model;
}

void FlowModel::validate() const {
  prototype.validate();
  const std::size_t k = components(), d = dim();
  if (velocity_net.input_size() != d + 1) throw InvalidInput("velocity network input must be d + 1");
  if (velocity_net.output_size() != k + k * d) throw InvalidInput("velocity network output must be K + K d");
  if (psi_steps == 0) throw InvalidInput("psi_steps must be positive");
}

BoundFlow::BoundFlow(const FlowModel& m, bool trainable)
    : model(&m),
      net(m.velocity_net, trainable),
      prototype_means(trainable ? ad::Var::parameter(m.prototype.means) : ad::Var::constant(m.prototype.means)) {}

GMVelocity VelocityBatch::row(std::size_t i) const {
  GMVelocity out;
  out.shared_std = shared_std;
  out.weights.resize(components);
  for (std::size_t k = 0; k < components; ++k) out.weights[k] = std::exp(log_weights.value()(i, k));
  out.means = Tensor::matrix(components, dim);
  for (std::size_t k = 0; k < components; ++k)
    for (std::size_t j = 0; j < dim; ++j) out.means(k, j) = means.value()(i, k * dim + j);
  return out;
}

VelocityBatch predict_velocity(const BoundFlow& flow, const ad::Var& z_t, const ad::Var& t) {
  const std::size_t k = flow.model->components(), d = flow.model->dim();
  if (z_t.value().rank() != 2 || z_t.cols() != d) throw InvalidInput("predict_velocity: z_t must be n x d");
  if (t.value().rank() != 2 || t.cols() != 1 || t.rows() != z_t.rows()) {
    throw InvalidInput("predict_velocity: t must be n x 1");
  }
  for (double v : t.value().data()) check_time(v, "predict_velocity");
  const ad::Var inputs[] = {z_t, t};
  const ad::Var out = flow.net.forward(ad::concat_cols(inputs));
  if (!out.value().all_finite()) throw NumericFault("predict_velocity: non-finite network output");
  VelocityBatch pred;
  pred.log_weights = ad::log_softmax_rows(ad::slice_cols(out, 0, k));
  pred.means = ad::slice_cols(out, k, k + k * d);
  pred.shared_std = flow.model->prototype.shared_std;
  pred.components = k;
  pred.dim = d;
  return pred;
}

GMVelocity predict_velocity(const FlowModel& model, std::span<const double> z_t, double t) {
  check_time(t, "predict_velocity");
  if (z_t.size() != model.dim()) throw InvalidInput("predict_velocity: z_t has wrong dimension");
  const BoundFlow flow(model, false);
  return predict_velocity(flow, row_constant(z_t), ad::Var::scalar(t)).row(0);
}

double gm_nll(const GMVelocity& pred, std::span<const double> u) {
  if (u.size() != pred.dim()) throw InvalidInput("gm_nll: dimension mismatch");
  const double s2 = pred.shared_std * pred.shared_std;
  const double norm = 0.5 * static_cast<double>(pred.dim()) * std::log(2.0 * std::numbers::pi * s2);
  std::vector<double> terms(pred.components());
  for (std::size_t k = 0; k < terms.size(); ++k) {
    double dist = 0.0;
    for (std::size_t j = 0; j < u.size(); ++j) {
      const double diff = u[j] - pred.means(k, j);
      dist += diff * diff;
    }
    terms[k] = std::log(pred.weights[k]) - 0.5 * dist / s2 - norm;
  }
  const double mx = *std::max_element(terms.begin(), terms.end());
  double acc = 0.0;
  for (double v : terms) acc += std::exp(v - mx);
  return -(mx + std::log(acc));
}

ad::Var gm_nll(const VelocityBatch& pred, const ad::Var& u) {
  if (u.value().rank() != 2 || u.cols() != pred.dim || u.rows() != pred.means.rows()) {
    throw InvalidInput("gm_nll: u must be n x d matching the prediction");
  }
  const double s2 = pred.shared_std * pred.shared_std;
  const double norm = 0.5 * static_cast<double>(pred.dim) * std::log(2.0 * std::numbers::pi * s2);
  const ad::Var diff = ad::sub(pred.means, ad::repeat_cols(u, pred.components));
  const ad::Var dist = ad::group_sum_cols(ad::square(diff), pred.dim);  // n x K
  const ad::Var terms = ad::add_scalar(ad::add(pred.log_weights, ad::scale(dist, -0.5 / s2)), -norm);
  return ad::neg(ad::logsumexp_rows(terms));
}

std::vector<double> mixture_mean(const GMVelocity& pred) {
  std::vector<double> out(pred.dim(), 0.0);
  for (std::size_t k = 0; k < pred.components(); ++k)
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += pred.weights[k] * pred.means(k, j);
  return out;
}

ad::Var mixture_mean(const VelocityBatch& pred) {
  return ad::mixture_combine(ad::exp(pred.log_weights), pred.means);
}

FlowBatchDraw draw_flow_batch(const FlowModel& model, const Tensor& z0, Rng& rng, const FlowLossOptions& options) {
  if (z0.rank() != 2 || z0.rows() == 0) throw InvalidInput("flow loss: empty batch");
  const std::size_t n = z0.rows(), d = model.dim();
  if (z0.cols() != d) throw InvalidInput("flow loss: batch dimension differs from the model");
  if (!(options.t_min > 0.0 && options.t_min < 1.0)) throw InvalidInput("flow loss: t_min must lie in (0, 1)");

  FlowBatchDraw draw{Tensor::matrix(n, d), Tensor::matrix(n, d), Tensor::matrix(n, 1)};
  const double shared_t = rng.uniform(options.t_min, 1.0);
  std::vector<std::size_t> assigned;
  if (options.endpoint == EndpointSource::AssignedMean || options.endpoint == EndpointSource::AssignedSample) {
    assigned = most_probable_components(model.prototype.means, z0);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double t = options.per_sample_t ? rng.uniform(options.t_min, 1.0) : shared_t;
    std::vector<double> zT;
    switch (options.endpoint) {
      case EndpointSource::PriorSample: zT = sample_prior(model.prototype, rng); break;
      case EndpointSource::GaussianNoise:
        zT.resize(d);
        for (double& v : zT) v = rng.normal();
        break;
      case EndpointSource::AssignedMean: {
        const auto mu = model.prototype.means.row_span(assigned[i]);
        zT.assign(mu.begin(), mu.end());
        break;
      }
      case EndpointSource::AssignedSample: {
        const auto mu = model.prototype.means.row_span(assigned[i]);
        zT.assign(mu.begin(), mu.end());
        for (double& v : zT) v += model.prototype.shared_std * rng.normal();
        break;
      }
    }
    const auto z0_row = z0.row_span(i);
    const auto zt = interpolate(z0_row, zT, t);
    const auto u = true_velocity(z0_row, zT);
    std::copy(zt.begin(), zt.end(), draw.z_t.row_span(i).begin());
    std::copy(u.begin(), u.end(), draw.u.row_span(i).begin());
    draw.t(i, 0) = t;
  }
  return draw;
}

ad::Var flow_nll_terms(const BoundFlow& flow, const FlowBatchDraw& draw) {
  const VelocityBatch pred = predict_velocity(flow, ad::Var::constant(draw.z_t), ad::Var::constant(draw.t));
  return gm_nll(pred, ad::Var::constant(draw.u));
}

ad::Var loss_flow_normal(const BoundFlow& flow, const FlowBatchDraw& draw) {
  return ad::mean(flow_nll_terms(flow, draw));
}

ad::Var loss_flow_anomaly(const BoundFlow& flow, const FlowBatchDraw& draw, double repulsion_clip) {
  if (!(repulsion_clip > 0.0)) throw InvalidInput("flow loss: repulsion clip must be positive");
  const ad::Var log_q = ad::neg(flow_nll_terms(flow, draw));
  return ad::mean(ad::clamp_min(log_q, -repulsion_clip));
}

ad::Var loss_flow_normal(const BoundFlow& flow, const Tensor& z0, Rng& rng, const FlowLossOptions& options) {
  return loss_flow_normal(flow, draw_flow_batch(*flow.model, z0, rng, options));
}

ad::Var loss_flow_anomaly(const BoundFlow& flow, const Tensor& z0, Rng& rng, const FlowLossOptions& options) {
  if (!(options.repulsion_clip > 0.0)) throw InvalidInput("flow loss: repulsion clip must be positive");
  return loss_flow_anomaly(flow, draw_flow_batch(*flow.model, z0, rng, options), options.repulsion_clip);
}

double loss_flow_normal(const FlowModel& model, const Tensor& z0, Rng& rng, const FlowLossOptions& options) {
  return loss_flow_normal(BoundFlow(model, false), z0, rng, options).item();
}

double loss_flow_anomaly(const FlowModel& model, const Tensor& z0, Rng& rng, const FlowLossOptions& options) {
  return loss_flow_anomaly(BoundFlow(model, false), z0, rng, options).item();
}

}  // namespace mpfm
