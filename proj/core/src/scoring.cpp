// SPDX-License-Identifier: Apache-2.0
#include "mpfm/scoring.hpp"

#include <algorithm>
#include <cmath>

#include "mpfm/error.hpp"
#include "mpfm/prototype.hpp"
#include "mpfm/reverse.hpp"

namespace mpfm {
namespace {

void check_label(int label) {
  if (label != 0 && label != 1) throw InvalidInput("label must be 0 or 1, got " + std::to_string(label));
}

Tensor label_column(std::span<const int> labels) {
  Tensor col = Tensor::matrix(labels.size(), 1);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    check_label(labels[i]);
    col(i, 0) = labels[i];
  }
  return col;
}

double column_value(const ad::Var& v, std::size_t i) { return v.value()(i, 0); }

}  // namespace

FeatureSample FeatureSample::make(std::int64_t id, Tensor patches, int label) {
  check_label(label);
  if (patches.rank() != 2 || patches.rows() == 0) throw InvalidInput("sample needs at least one patch");
  FeatureSample s;
  s.id = id;
  s.label = label;
  s.pooled.assign(patches.cols(), 0.0);
  for (std::size_t p = 0; p < patches.rows(); ++p)
    for (std::size_t c = 0; c < patches.cols(); ++c) s.pooled[c] += patches(p, c);
  const double inv = 1.0 / static_cast<double>(patches.rows());
  for (double& v : s.pooled) v *= inv;
  s.patches = std::move(patches);
  return s;
}

std::string to_string(Pooling p) { return p == Pooling::Mean ? "mean" : "flatten"; }

Pooling pooling_from_string(const std::string& name) {
  if (name == "mean") return Pooling::Mean;
  if (name == "flatten") return Pooling::Flatten;
  throw InvalidInput("unknown pooling '" + name + "'");
}

std::size_t embedding_dim(Pooling pooling, std::size_t patches, std::size_t channels) {
  return pooling == Pooling::Mean ? channels : patches * channels;
}

std::vector<double> embed(const FeatureSample& sample, Pooling pooling) {
  if (pooling == Pooling::Mean) return sample.pooled;
  const auto flat = sample.patches.data();
  return {flat.begin(), flat.end()};
}

SampleBatch make_batch(std::span<const FeatureSample* const> samples, Pooling pooling) {
  if (samples.empty()) throw InvalidInput("empty sample batch");
  const std::size_t n = samples.size(), p = samples[0]->patch_count(), c = samples[0]->channels();
  const std::size_t d = embedding_dim(pooling, p, c);
  SampleBatch b;
  b.patch_count = p;
  b.pooled = Tensor::matrix(n, c);
  b.embedded = Tensor::matrix(n, d);
  b.patches = Tensor::matrix(n * p, c);
  for (std::size_t i = 0; i < n; ++i) {
    const FeatureSample& s = *samples[i];
    if (s.patch_count() != p || s.channels() != c) throw InvalidInput("samples in a batch must share P and C");
    b.ids.push_back(s.id);
    b.labels.push_back(s.label);
    std::copy(s.pooled.begin(), s.pooled.end(), b.pooled.row_span(i).begin());
    const auto z = embed(s, pooling);
    std::copy(z.begin(), z.end(), b.embedded.row_span(i).begin());
    const auto flat = s.patches.data();
    std::copy(flat.begin(), flat.end(), b.patches.data().begin() + static_cast<std::ptrdiff_t>(i * p * c));
  }
  return b;
}

SampleBatch make_batch(std::span<const FeatureSample> samples, Pooling pooling) {
  std::vector<const FeatureSample*> ptrs;
  ptrs.reserve(samples.size());
  for (const auto& s : samples) ptrs.push_back(&s);
  return make_batch(std::span<const FeatureSample* const>(ptrs), pooling);
}

std::string to_string(BinaryLoss b) { return b == BinaryLoss::Logistic ? "logistic" : "deviation"; }

BinaryLoss binary_loss_from_string(const std::string& name) {
  if (name == "logistic") return BinaryLoss::Logistic;
  if (name == "deviation") return BinaryLoss::Deviation;
  throw InvalidInput("unknown binary loss '" + name + "'");
}

std::string to_string(NormalTarget t) { return t == NormalTarget::Normality ? "normality" : "label"; }

NormalTarget normal_target_from_string(const std::string& name) {
  if (name == "normality") return NormalTarget::Normality;
  if (name == "label") return NormalTarget::Label;
  throw InvalidInput("unknown normal-head target '" + name + "'");
}

ScoringHeads ScoringHeads::create(std::size_t channels, std::size_t dim, const std::vector<std::size_t>& hidden,
                                  Activation act, Rng& rng) {
  return create(channels, dim, hidden, hidden, act, rng);
}

ScoringHeads ScoringHeads::create(std::size_t channels, std::size_t dim, const std::vector<std::size_t>& local_hidden,
                                  const std::vector<std::size_t>& hidden, Activation act, Rng& rng) {
  auto build = [&](std::size_t in, const std::vector<std::size_t>& hidden) {
    std::vector<std::size_t> sizes{in};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(1);
    MLP net(sizes, act, rng);
    net.zero_final_layer();
    return net;
  };
  ScoringHeads h;
  h.head_a = build(channels, local_hidden);
  h.head_n = build(channels, hidden);
  h.head_r = build(dim, hidden);
  return h;
}

BoundHeads::BoundHeads(const ScoringHeads& heads, bool trainable)
    : head_a(heads.head_a, trainable),
      head_n(heads.head_n, trainable),
      head_r(heads.head_r, trainable),
      gain(trainable ? ad::Var::parameter(Tensor::scalar(heads.gain)) : ad::Var::scalar(heads.gain)),
      bias(trainable ? ad::Var::parameter(Tensor::scalar(heads.bias)) : ad::Var::scalar(heads.bias)) {}

std::size_t top_count(double fraction, std::size_t patches) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw InvalidInput("top-O fraction must lie in (0, 1]");
  if (patches == 0) throw InvalidInput("empty patch set");
  // The slack keeps products such as 0.3 * 10 from rounding up to 4.
  const auto o = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(patches) - 1e-9));
  return std::clamp<std::size_t>(o, 1, patches);
}

HeadScores forward_scores(const BoundFlow& flow, const BoundHeads& heads, const SampleBatch& batch,
                          double top_fraction) {
  const FlowModel& model = *flow.model;
  const std::size_t n = batch.size(), p = batch.patch_count;
  if (n == 0) throw InvalidInput("empty sample batch");
  if (batch.embedded.cols() != model.dim()) throw InvalidInput("sample embedding does not match the flow dimension");
  const std::size_t o = top_count(top_fraction, p);

  HeadScores out;
  out.transformed = push_forward_psi(flow, ad::Var::constant(batch.embedded));
  const ad::Var terms = component_log_terms(out.transformed, flow.prototype_means, model.prototype.weights,
                                            model.prototype.shared_std);
  out.s_g = ad::neg(ad::logsumexp_rows(terms));

  const ad::Var patch_scores = heads.head_a.forward(ad::Var::constant(batch.patches));
  out.s_a = ad::topk_mean_rows(ad::reshape(patch_scores, n, p), o);

  out.s_n = heads.head_n.forward(ad::Var::constant(batch.pooled));

  const auto nearest = most_probable_components(flow.prototype_means.value(), out.transformed.value());
  const ad::Var centers = ad::gather_rows(flow.prototype_means, nearest);
  const ad::Var residual = ad::scale(ad::sub(out.transformed, centers), 1.0 / model.prototype.shared_std);
  out.s_r = heads.head_r.forward(residual);
  return out;
}

double combine(double s_g, double s_a, double s_n, double s_r) { return s_g + s_a + s_r - s_n; }

std::vector<ScoreBreakdown> score_batch(const FlowModel& model, const ScoringHeads& heads,
                                        std::span<const FeatureSample> samples, const ScoringOptions& options) {
  if (samples.empty()) return {};
  const SampleBatch batch = make_batch(samples, options.pooling);
  const BoundFlow flow(model, false);
  const BoundHeads bound(heads, false);
  const HeadScores hs = forward_scores(flow, bound, batch, options.top_fraction);
  std::vector<ScoreBreakdown> out(batch.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    ScoreBreakdown& b = out[i];
    b.id = batch.ids[i];
    b.label = batch.labels[i];
    b.s_g = column_value(hs.s_g, i);
    b.s_a = column_value(hs.s_a, i);
    b.s_n = column_value(hs.s_n, i);
    b.s_r = column_value(hs.s_r, i);
    b.s = combine(b.s_g, b.s_a, b.s_n, b.s_r);
    if (!std::isfinite(b.s)) throw NumericFault("non-finite score for sample " + std::to_string(b.id));
  }
  return out;
}

ScoreBreakdown combined_score(const FlowModel& model, const ScoringHeads& heads, const FeatureSample& sample,
                              const ScoringOptions& options) {
  return score_batch(model, heads, std::span<const FeatureSample>(&sample, 1), options).front();
}

double score_global(const FlowModel& model, const FeatureSample& sample, Pooling pooling) {
  return -log_density(model.prototype, push_forward_psi(model, embed(sample, pooling)));
}

double score_local(const ScoringHeads& heads, const FeatureSample& sample, double top_fraction) {
  const std::size_t p = sample.patch_count();
  const std::size_t o = top_count(top_fraction, p);
  const Tensor scores = heads.head_a.forward(sample.patches);
  return ad::topk_mean_rows(ad::Var::constant(scores.reshaped({1, p})), o).item();
}

double score_normal(const ScoringHeads& heads, const FeatureSample& sample) {
  return heads.head_n.forward(Tensor::row(sample.pooled)).item();
}

double score_residual(const FlowModel& model, const ScoringHeads& heads, const FeatureSample& sample,
                      Pooling pooling) {
  const auto y = push_forward_psi(model, embed(sample, pooling));
  const std::size_t c = most_probable_component(model.prototype, y);
  std::vector<double> r(y.size());
  for (std::size_t j = 0; j < y.size(); ++j) r[j] = (y[j] - model.prototype.means(c, j)) / model.prototype.shared_std;
  return heads.head_r.forward(Tensor::row(r)).item();
}

double binary_score_loss(double raw, int label, BinaryLoss kind) {
  check_label(label);
  if (kind == BinaryLoss::Deviation) {
    return label == 0 ? std::abs(raw) : std::max(0.0, kDeviationMargin - raw);
  }
  const double softplus = raw > 0.0 ? raw + std::log1p(std::exp(-raw)) : std::log1p(std::exp(raw));
  return softplus - label * raw;
}

ad::Var binary_score_loss(const ad::Var& raw, std::span<const int> labels, BinaryLoss kind) {
  if (raw.value().rank() != 2 || raw.cols() != 1 || raw.rows() != labels.size()) {
    throw InvalidInput("binary loss: raw scores must be n x 1 with one label each");
  }
  const ad::Var y = ad::Var::constant(label_column(labels));
  if (kind == BinaryLoss::Deviation) {
    Tensor inv = y.value();
    for (double& v : inv.data()) v = 1.0 - v;
    const ad::Var abs_raw = ad::add(ad::relu(raw), ad::relu(ad::neg(raw)));
    const ad::Var hinge = ad::relu(ad::add_scalar(ad::neg(raw), kDeviationMargin));
    return ad::mean(ad::add(ad::mul(ad::Var::constant(inv), abs_raw), ad::mul(y, hinge)));
  }
  return ad::mean(ad::sub(ad::softplus(raw), ad::mul(y, raw)));
}

ScoringLosses scoring_losses(const BoundFlow& flow, const BoundHeads& heads, const SampleBatch& batch,
                             const ScoringLossOptions& options) {
  ScoringLosses out;
  out.scores = forward_scores(flow, heads, batch, options.top_fraction);
  std::vector<int> normal_labels = batch.labels;
  if (options.normal_target == NormalTarget::Normality) {
    for (int& l : normal_labels) l = 1 - l;
  }
  const ad::Var calibrated = ad::add(ad::mul(out.scores.s_g, heads.gain), heads.bias);
  out.global = binary_score_loss(calibrated, batch.labels, options.loss);
  out.local = binary_score_loss(out.scores.s_a, batch.labels, options.loss);
  out.normal = binary_score_loss(out.scores.s_n, normal_labels, options.loss);
  out.residual = binary_score_loss(out.scores.s_r, batch.labels, options.loss);
  return out;
}

}  // namespace mpfm
