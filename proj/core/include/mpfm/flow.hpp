// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mpfm/autodiff.hpp"
#include "mpfm/mlp.hpp"
#include "mpfm/prototype.hpp"
#include "mpfm/rng.hpp"
#include "mpfm/tensor.hpp"

namespace mpfm {

/// Linear schedule on [0, 1]: alpha(t) = 1 - t, sigma(t) = t.
struct NoiseSchedule {
  static constexpr double kHorizon = 1.0;
  static double alpha(double t) { return 1.0 - t; }
  static double sigma(double t) { return t; }
};

/// (alpha_t, sigma_t); throws InvalidInput for t outside [0, 1].
std::pair<double, double> schedule_at(double t);

/// (1 - t) z0 + t zT
std::vector<double> interpolate(std::span<const double> z0, std::span<const double> zT, double t);

/// zT - z0, the constant velocity of the straight path.
std::vector<double> true_velocity(std::span<const double> z0, std::span<const double> zT);

/// One prediction of q(u | z_t): mixture over velocities with shared std.
struct GMVelocity {
  std::vector<double> weights;  // K
  Tensor means;                 // K x d
  double shared_std = 1.0;

  std::size_t components() const { return weights.size(); }
  std::size_t dim() const { return means.cols(); }
};

/// Where training endpoints z_T come from.
enum class EndpointSource { PriorSample, GaussianNoise, AssignedMean, AssignedSample };

std::string to_string(EndpointSource e);
EndpointSource endpoint_source_from_string(const std::string& name);

/// Velocity network, prototype, and transport settings.
struct FlowModel {
  MLP velocity_net;  // (d + 1) -> ... -> K + K d
  GMPrototype prototype;
  std::size_t psi_steps = 8;
  bool one_step_psi = false;

  /// Random network whose mixture-weight outputs start at zero, so an
  /// untrained model predicts uniform weights.
  static FlowModel create(GMPrototype prototype, const std::vector<std::size_t>& hidden, Activation act, Rng& rng,
                          std::size_t psi_steps = 8);

  std::size_t components() const { return prototype.components(); }
  std::size_t dim() const { return prototype.dim(); }
  void validate() const;
};

/// Graph binding of a FlowModel for one loss evaluation.
struct BoundFlow {
  BoundFlow(const FlowModel& model, bool trainable);

  const FlowModel* model;
  BoundMLP net;
  ad::Var prototype_means;  // K x d
};

/// Batched prediction: row i holds the mixture for (z_t[i], t[i]).
struct VelocityBatch {
  ad::Var log_weights;  // n x K
  ad::Var means;        // n x (K d), component-major
  double shared_std = 1.0;
  std::size_t components = 0;
  std::size_t dim = 0;

  GMVelocity row(std::size_t i) const;
};

VelocityBatch predict_velocity(const BoundFlow& flow, const ad::Var& z_t, const ad::Var& t);
GMVelocity predict_velocity(const FlowModel& model, std::span<const double> z_t, double t);

/// -log sum_k pi_k N(u; mu_k, s^2 I)
double gm_nll(const GMVelocity& pred, std::span<const double> u);
/// n x 1 batched negative log-likelihood.
ad::Var gm_nll(const VelocityBatch& pred, const ad::Var& u);

/// sum_k pi_k mu_k
std::vector<double> mixture_mean(const GMVelocity& pred);
ad::Var mixture_mean(const VelocityBatch& pred);

struct FlowLossOptions {
  double t_min = 1e-3;
  /// Lower bound on each anomaly term log q, keeping the repulsion finite.
  double repulsion_clip = 50.0;
  bool per_sample_t = false;
  EndpointSource endpoint = EndpointSource::PriorSample;
};

/// Interpolants, velocities, and times drawn for one flow-loss evaluation.
struct FlowBatchDraw {
  Tensor z_t;  // n x d
  Tensor u;    // n x d
  Tensor t;    // n x 1
};

/// Draws t in [t_min, 1] (shared or per sample) and endpoints z_T, in that order.
FlowBatchDraw draw_flow_batch(const FlowModel& model, const Tensor& z0, Rng& rng, const FlowLossOptions& options);

/// Per-sample NLL terms (n x 1) for pre-drawn interpolants.
ad::Var flow_nll_terms(const BoundFlow& flow, const FlowBatchDraw& draw);

/// Mean NLL of the true velocity over a batch of normal z0 rows.
ad::Var loss_flow_normal(const BoundFlow& flow, const Tensor& z0, Rng& rng, const FlowLossOptions& options = {});
/// Mean of max(log q, -repulsion_clip) over a batch of anomalous z0 rows.
ad::Var loss_flow_anomaly(const BoundFlow& flow, const Tensor& z0, Rng& rng, const FlowLossOptions& options = {});

/// The same losses over pre-drawn interpolants. Draws are constants of the
/// graph: no gradient flows through the endpoint sampling.
ad::Var loss_flow_normal(const BoundFlow& flow, const FlowBatchDraw& draw);
ad::Var loss_flow_anomaly(const BoundFlow& flow, const FlowBatchDraw& draw, double repulsion_clip);

double loss_flow_normal(const FlowModel& model, const Tensor& z0, Rng& rng, const FlowLossOptions& options = {});
double loss_flow_anomaly(const FlowModel& model, const Tensor& z0, Rng& rng, const FlowLossOptions& options = {});

}  // namespace mpfm
