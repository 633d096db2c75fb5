// SPDX-License-Identifier: Apache-2.0
#include "mpfm/trainer.hpp"

#include <cmath>
#include <string>

#include "mpfm/prototype.hpp"
#include "mpfm/rng.hpp"

namespace mpfm {
namespace {

// Independent generator streams derived from the run seed.
enum Stream : std::uint64_t { kInitStream = 1, kBatchStream = 2, kFlowStream = 3 };

void check_positive(std::size_t v, const char* name) {
  if (v == 0) throw InvalidInput(std::string("train config: ") + name + " must be positive");
}

bool all_finite(std::span<const Tensor> ts) {
  for (const auto& t : ts) {
    if (!t.all_finite()) return false;
  }
  return true;
}

// Component k starts at the mean velocity toward prototype k, relative to the
// prototype centroid. Identical components would get identical gradients and
// never separate. The offsets cancel under the uniform initial weights, so psi
// still starts at (numerically) the identity.
void init_component_offsets(FlowModel& flow) {
  const std::size_t k = flow.components(), d = flow.dim();
  const Tensor& mu = flow.prototype.means;
  std::vector<double> centroid(d, 0.0);
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t j = 0; j < d; ++j) centroid[j] += mu(c, j) / static_cast<double>(k);
  Tensor& bias = flow.velocity_net.layers().back().bias;
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t j = 0; j < d; ++j) bias(0, k + c * d + j) = mu(c, j) - centroid[j];
}

}  // namespace

TrainConfig TrainConfig::benchmark() {
  TrainConfig c;
  c.components = 8;
  c.repulsion_clip = 2.0;
  c.endpoint = EndpointSource::AssignedSample;
  return c;
}

void TrainConfig::validate() const {
  check_positive(components, "components");
  check_positive(iterations, "iterations");
  check_positive(normal_batch, "normal_batch");
  check_positive(anomaly_batch, "anomaly_batch");
  check_positive(psi_steps, "psi_steps");
  check_positive(kmeans_restarts, "kmeans_restarts");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InvalidInput("train config: lambda must be >= 0");
  if (!(top_fraction > 0.0 && top_fraction <= 1.0)) throw InvalidInput("train config: top_fraction must lie in (0, 1]");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw InvalidInput("train config: learning_rate must be positive");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) throw InvalidInput("train config: weight_decay must be >= 0");
  if (!(repulsion_clip > 0.0)) throw InvalidInput("train config: repulsion_clip must be positive");
  if (!(t_min > 0.0 && t_min < 1.0)) throw InvalidInput("train config: t_min must lie in (0, 1)");
  if (precision != "f64") throw InvalidInput("train config: precision '" + precision + "' is not supported (only f64)");
  for (std::size_t h : flow_hidden) check_positive(h, "flow_hidden entries");
  for (std::size_t h : head_hidden) check_positive(h, "head_hidden entries");
  for (std::size_t h : local_head_hidden) check_positive(h, "local_head_hidden entries");
}

void AdamW::update(std::span<Tensor* const> params, std::span<const Tensor> grads) {
  if (params.size() != grads.size()) throw InvalidInput("AdamW: one gradient per parameter required");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->same_shape(grads[i])) {
      throw InvalidInput("AdamW: gradient " + std::to_string(i) + " has shape " + grads[i].shape_string() +
                         ", parameter has " + params[i]->shape_string());
    }
    if (!grads[i].all_finite()) throw NumericFault("AdamW: non-finite gradient for parameter " + std::to_string(i));
  }
  if (m.empty()) {
    for (const Tensor* p : params) {
      m.emplace_back(p->shape(), 0.0);
      v.emplace_back(p->shape(), 0.0);
    }
  }
  if (m.size() != params.size()) throw InvalidInput("AdamW: parameter count changed between steps");

  ++step;
  const double t = static_cast<double>(step);
  const double bc1 = 1.0 - std::pow(beta1, t);
  const double bc2 = 1.0 - std::pow(beta2, t);
  const double decay = 1.0 - learning_rate * weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->data();
    auto g = grads[i].data();
    auto mi = m[i].data();
    auto vi = v[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      p[j] *= decay;
      mi[j] = beta1 * mi[j] + (1.0 - beta1) * g[j];
      vi[j] = beta2 * vi[j] + (1.0 - beta2) * g[j] * g[j];
      const double mhat = mi[j] / bc1;
      const double vhat = vi[j] / bc2;
      p[j] -= learning_rate * mhat / (std::sqrt(vhat) + epsilon);
    }
  }
}

std::vector<Tensor*> trainable_tensors(ModelBundle& model) {
  std::vector<Tensor*> out = model.flow.velocity_net.parameter_refs();
  out.push_back(&model.flow.prototype.means);
  for (MLP* net : {&model.heads.head_a, &model.heads.head_n, &model.heads.head_r}) {
    for (Tensor* t : net->parameter_refs()) out.push_back(t);
  }
  return out;
}

FlowDraws draw_total_flow(const ModelBundle& model, std::span<const FeatureSample* const> normals,
                          std::span<const FeatureSample* const> anomalies, Rng& rng, const TrainConfig& config) {
  if (normals.empty()) throw InvalidInput("total_loss: empty normal batch");
  if (anomalies.empty()) throw InvalidInput("total_loss: empty anomaly batch");
  FlowLossOptions fo;
  fo.t_min = config.t_min;
  fo.repulsion_clip = config.repulsion_clip;
  fo.per_sample_t = config.per_sample_t;
  fo.endpoint = config.endpoint;
  const SampleBatch n = make_batch(normals, config.pooling);
  const SampleBatch a = make_batch(anomalies, config.pooling);
  FlowDraws d;
  d.normal = draw_flow_batch(model.flow, n.embedded, rng, fo);
  d.anomaly = draw_flow_batch(model.flow, a.embedded, rng, fo);
  return d;
}

LossGraph total_loss(const ModelBundle& model, std::span<const FeatureSample* const> normals,
                     std::span<const FeatureSample* const> anomalies, Rng& rng, const TrainConfig& config) {
  const FlowDraws draws = draw_total_flow(model, normals, anomalies, rng, config);
  return total_loss(model, normals, anomalies, draws, config);
}

LossGraph total_loss(const ModelBundle& model, std::span<const FeatureSample* const> normals,
                     std::span<const FeatureSample* const> anomalies, const FlowDraws& draws,
                     const TrainConfig& config) {
  if (normals.empty()) throw InvalidInput("total_loss: empty normal batch");
  if (anomalies.empty()) throw InvalidInput("total_loss: empty anomaly batch");
  if (draws.normal.z_t.rows() != normals.size() || draws.anomaly.z_t.rows() != anomalies.size()) {
    throw InvalidInput("total_loss: flow draws do not match the batch sizes");
  }

  const BoundFlow flow(model.flow, true);
  const BoundHeads heads(model.heads, true);

  std::vector<const FeatureSample*> joint(normals.begin(), normals.end());
  joint.insert(joint.end(), anomalies.begin(), anomalies.end());
  const SampleBatch batch = make_batch(std::span<const FeatureSample* const>(joint), config.pooling);
  const std::size_t nn = normals.size();

  const ScoringLosses sl = scoring_losses(flow, heads, batch,
                                          {config.top_fraction, config.binary_loss, config.normal_target});

  const ad::Var flow_n = loss_flow_normal(flow, draws.normal);
  const ad::Var flow_a = loss_flow_anomaly(flow, draws.anomaly, config.repulsion_clip);

  const ad::Var y_normal = ad::slice_rows(sl.scores.transformed, 0, nn);
  const MimrTerms mt = mimr_terms(y_normal, flow.prototype_means, model.flow.prototype.weights,
                                  model.flow.prototype.shared_std, config.mimr);

  ad::Var total = ad::add(sl.local, sl.normal);
  total = ad::add(total, sl.residual);
  total = ad::add(total, sl.global);
  total = ad::add(total, flow_n);
  total = ad::add(total, flow_a);
  total = ad::add(total, ad::scale(mt.loss, config.lambda));

  LossGraph g;
  g.total = total;
  g.params = flow.net.parameters();
  g.params.push_back(flow.prototype_means);
  for (const BoundMLP* net : {&heads.head_a, &heads.head_n, &heads.head_r}) {
    g.params.insert(g.params.end(), net->parameters().begin(), net->parameters().end());
  }
  g.params.push_back(heads.gain);
  g.params.push_back(heads.bias);

  LossReport& r = g.report;
  r.local = sl.local.item();
  r.normal = sl.normal.item();
  r.residual = sl.residual.item();
  r.global = sl.global.item();
  r.flow_normal = flow_n.item();
  r.flow_anomaly = flow_a.item();
  r.mimr = mt.loss.item();
  r.total = total.item();
  r.mimr_report = to_report(mt);
  const auto usage = mt.usage.value().data();
  r.usage.assign(usage.begin(), usage.end());
  return g;
}

ModelBundle initialize_model(const TrainConfig& config, std::span<const FeatureSample> normals) {
  config.validate();
  if (normals.empty()) throw InsufficientData("train: no normal samples");
  const SampleBatch all = make_batch(normals, config.pooling);
  KMeansOptions km;
  km.restarts = config.kmeans_restarts;
  GMPrototype proto = kmeanspp_init(all.embedded, config.components, mix64(config.seed ^ 0x6b6d65616e73ULL), km);

  Rng rng(config.seed, kInitStream);
  ModelBundle b;
  b.flow = FlowModel::create(std::move(proto), config.flow_hidden, config.activation, rng, config.psi_steps);
  b.flow.velocity_net.zero_final_layer();
  init_component_offsets(b.flow);
  b.flow.one_step_psi = config.one_step_psi;
  b.heads = ScoringHeads::create(all.pooled.cols(), b.flow.dim(), config.local_head_hidden, config.head_hidden,
                                 config.head_activation, rng);
  b.scoring.top_fraction = config.top_fraction;
  b.scoring.pooling = config.pooling;
  return b;
}

TrainResult train(const TrainConfig& config, std::span<const FeatureSample> normals,
                  std::span<const FeatureSample> anomalies, const MetricsSink& sink) {
  config.validate();
  if (normals.size() < config.components) {
    throw InsufficientData("train: need at least K = " + std::to_string(config.components) + " normal samples, got " +
                           std::to_string(normals.size()));
  }
  if (anomalies.empty()) throw InsufficientData("train: need at least one anomalous sample");
  for (const auto& s : normals) {
    if (s.label != 0) throw InvalidInput("train: normal set contains a labeled anomaly");
  }
  for (const auto& s : anomalies) {
    if (s.label != 1) throw InvalidInput("train: anomaly set contains a normal sample");
  }

  TrainState state;
  state.model = initialize_model(config, normals);
  state.optimizer.learning_rate = config.learning_rate;
  state.optimizer.weight_decay = config.weight_decay;

  Rng batch_rng(config.seed, kBatchStream);
  Rng flow_rng(config.seed, kFlowStream);
  std::vector<const FeatureSample*> nb(config.normal_batch), ab(config.anomaly_batch);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t it = 0; it < config.iterations; ++it) {
      for (auto& p : nb) p = &normals[batch_rng.below(normals.size())];
      for (auto& p : ab) p = &anomalies[batch_rng.below(anomalies.size())];

      const std::size_t step = state.step + 1;
      LossGraph g;
      std::vector<Tensor> grads;
      try {
        g = total_loss(state.model, nb, ab, flow_rng, config);
        if (!std::isfinite(g.report.total)) throw NumericFault("non-finite total loss");
        grads = ad::gradients(g.total, g.params);
        if (!all_finite(grads)) throw NumericFault("non-finite gradient");
      } catch (const NumericFault& e) {
        if (!config.checkpoint_dir.empty()) {
          std::filesystem::create_directories(config.checkpoint_dir);
          save_model(state.model, config.checkpoint_dir / "diverged.mpfm");
        }
        throw TrainingDiverged("training diverged at step " + std::to_string(step) + ": " + e.what(), state);
      }

      std::vector<Tensor*> targets = trainable_tensors(state.model);
      Tensor gain = Tensor::scalar(state.model.heads.gain), bias = Tensor::scalar(state.model.heads.bias);
      targets.push_back(&gain);
      targets.push_back(&bias);
      state.optimizer.update(targets, grads);
      state.model.heads.gain = gain.item();
      state.model.heads.bias = bias.item();
      state.step = step;

      IterationMetrics m{step, epoch, std::move(g.report)};
      if (sink) sink(m);
      state.history.push_back(std::move(m));

      if (config.checkpoint_every != 0 && step % config.checkpoint_every == 0) {
        std::filesystem::create_directories(config.checkpoint_dir);
        save_model(state.model, config.checkpoint_dir / ("checkpoint_" + std::to_string(step) + ".mpfm"));
      }
    }
  }
  return {std::move(state.model), std::move(state.history)};
}

}  // namespace mpfm
