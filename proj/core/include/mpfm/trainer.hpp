// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mpfm/error.hpp"
#include "mpfm/flow.hpp"
#include "mpfm/mimr.hpp"
#include "mpfm/model_io.hpp"
#include "mpfm/scoring.hpp"
#include "mpfm/tensor.hpp"

namespace mpfm {

struct TrainConfig {
  std::size_t components = 32;
  double lambda = 0.1;
  double top_fraction = 0.10;
  double learning_rate = 2e-4;
  double weight_decay = 1e-5;
  std::size_t epochs = 50;
  std::size_t iterations = 20;
  std::size_t normal_batch = 32;
  std::size_t anomaly_batch = 32;
  std::uint64_t seed = 0;

  std::size_t psi_steps = 8;
  bool one_step_psi = false;
  double repulsion_clip = 50.0;
  double t_min = 1e-3;
  bool per_sample_t = false;
  EndpointSource endpoint = EndpointSource::PriorSample;

  std::vector<std::size_t> flow_hidden{64, 64};
  std::vector<std::size_t> local_head_hidden{64, 64};  // head_a
  std::vector<std::size_t> head_hidden;                // head_n, head_r; empty: linear
  Activation activation = Activation::Tanh;            // velocity net
  Activation head_activation = Activation::Relu;

  MimrOptions mimr;
  BinaryLoss binary_loss = BinaryLoss::Logistic;
  NormalTarget normal_target = NormalTarget::Normality;
  Pooling pooling = Pooling::Mean;
  /// Only "f64" is implemented.
  std::string precision = "f64";
  std::size_t kmeans_restarts = 4;

  /// Save a snapshot every this many steps (0 disables).
  std::size_t checkpoint_every = 0;
  std::filesystem::path checkpoint_dir;

  void validate() const;

  /// Settings for the synthetic benchmark: K = 8 and a tight repulsion clip.
  /// The seen anomalies there are globally normal, so pushing their flow
  /// likelihood far down also pushes down the normals around them.
  static TrainConfig benchmark();
};

/// AdamW with decoupled decay: p <- p (1 - lr w), then the Adam update.
struct AdamW {
  double learning_rate = 2e-4;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  /// Moments are created on first use. A non-finite gradient throws
  /// NumericFault before anything is modified.
  void update(std::span<Tensor* const> params, std::span<const Tensor> grads);
};

struct LossReport {
  double local = 0.0;     // L_Ma
  double normal = 0.0;    // L_Mn
  double residual = 0.0;  // L_Mr
  double global = 0.0;    // L_Mg
  double flow_normal = 0.0;
  double flow_anomaly = 0.0;
  double mimr = 0.0;
  double total = 0.0;
  MimrReport mimr_report;
  std::vector<double> usage;  // batch-averaged responsibilities
};

struct IterationMetrics {
  std::size_t step = 0;
  std::size_t epoch = 0;
  LossReport losses;
};

struct TrainState {
  ModelBundle model;
  AdamW optimizer;
  std::vector<IterationMetrics> history;
  std::size_t step = 0;
};

/// Parameter tensors in the fixed training order: velocity network, prototype
/// means, head_a, head_n, head_r. The calibration gain and bias are scalars
/// and follow these in LossGraph::params.
std::vector<Tensor*> trainable_tensors(ModelBundle& model);

/// Graph for one evaluation of the total loss.
struct LossGraph {
  ad::Var total;
  std::vector<ad::Var> params;  // trainable_tensors order
  LossReport report;
};

/// Builds L = L_Ma + L_Mn + L_Mr + L_Mg + L_flow^n + L_flow^a + lambda L_mim.
/// The scoring terms average over the joint normal + anomaly batch; L_mim
/// uses the normal rows only.
LossGraph total_loss(const ModelBundle& model, std::span<const FeatureSample* const> normals,
                     std::span<const FeatureSample* const> anomalies, Rng& rng, const TrainConfig& config);

/// Flow interpolants for the normal and anomaly halves of one batch.
struct FlowDraws {
  FlowBatchDraw normal;
  FlowBatchDraw anomaly;
};

/// The draws total_loss would make from rng, in the same order.
FlowDraws draw_total_flow(const ModelBundle& model, std::span<const FeatureSample* const> normals,
                          std::span<const FeatureSample* const> anomalies, Rng& rng, const TrainConfig& config);

/// Total loss over fixed draws; the rng overload equals this applied to
/// draw_total_flow. Holding draws fixed makes the loss a deterministic
/// function of the parameters (the gradient treats draws as constants).
LossGraph total_loss(const ModelBundle& model, std::span<const FeatureSample* const> normals,
                     std::span<const FeatureSample* const> anomalies, const FlowDraws& draws,
                     const TrainConfig& config);

/// Untrained model: k-means++ prototype on the embedded normals, head networks
/// with zero final layers, and a velocity network whose output ignores its
/// input: uniform weights, component k offset toward prototype k.
ModelBundle initialize_model(const TrainConfig& config, std::span<const FeatureSample> normals);

using MetricsSink = std::function<void(const IterationMetrics&)>;

/// Thrown when a loss or gradient turns non-finite; carries the last state
/// whose parameters were all finite. With a checkpoint directory configured,
/// that state is also written there as diverged.mpfm.
class TrainingDiverged : public NumericFault {
 public:
  TrainingDiverged(const std::string& what, TrainState last) : NumericFault(what), last_(std::move(last)) {}
  const TrainState& last_state() const noexcept { return last_; }

 private:
  TrainState last_;
};

struct TrainResult {
  ModelBundle model;
  std::vector<IterationMetrics> history;
};

TrainResult train(const TrainConfig& config, std::span<const FeatureSample> normals,
                  std::span<const FeatureSample> anomalies, const MetricsSink& sink = {});

}  // namespace mpfm
