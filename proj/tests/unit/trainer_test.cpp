// SPDX-License-Identifier: Apache-2.0
#include "mpfm/trainer.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "fixtures.hpp"
#include "mpfm/data.hpp"
#include "mpfm/error.hpp"
#include "oracles.hpp"

namespace ad = mpfm::ad;
using mpfm::FeatureSample;
using mpfm::Rng;
using mpfm::Tensor;
using mpfm::TrainConfig;

namespace {

TrainConfig small_config() {
  TrainConfig c;
  c.components = 2;
  c.flow_hidden = {6};
  c.local_head_hidden = {4};
  c.head_hidden = {};
  c.normal_batch = 5;
  c.anomaly_batch = 3;
  c.epochs = 2;
  c.iterations = 3;
  c.psi_steps = 3;
  c.kmeans_restarts = 1;
  return c;
}

std::vector<FeatureSample> samples(std::size_t n, int label, Rng& rng, std::int64_t first_id = 0) {
  std::vector<FeatureSample> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(fixture::random_sample(first_id + static_cast<std::int64_t>(i), 4, 3, rng, label));
  return out;
}

std::vector<const FeatureSample*> ptrs(const std::vector<FeatureSample>& v) {
  std::vector<const FeatureSample*> out;
  for (const auto& s : v) out.push_back(&s);
  return out;
}

// Non-zero final layers so every term has a gradient.
void perturb(mpfm::ModelBundle& m, Rng& rng) {
  for (Tensor* t : mpfm::trainable_tensors(m))
    for (double& x : t->data()) x += 0.3 * rng.normal();
  m.heads.gain = 0.4;
  m.heads.bias = -0.2;
}

}  // namespace

TEST(TrainConfig, Validation) {
  EXPECT_NO_THROW(TrainConfig{}.validate());
  EXPECT_NO_THROW(TrainConfig::benchmark().validate());
  TrainConfig c;
  c.components = 0;
  EXPECT_THROW(c.validate(), mpfm::InvalidInput);
  c = {};
  c.lambda = -1.0;
  EXPECT_THROW(c.validate(), mpfm::InvalidInput);
  c = {};
  c.precision = "f32";
  EXPECT_THROW(c.validate(), mpfm::InvalidInput);
  c = {};
  c.top_fraction = 0.0;
  EXPECT_THROW(c.validate(), mpfm::InvalidInput);
}

TEST(TrainConfig, Defaults) {
  const TrainConfig c;
  EXPECT_EQ(c.components, 32u);
  EXPECT_DOUBLE_EQ(c.lambda, 0.1);
  EXPECT_DOUBLE_EQ(c.top_fraction, 0.10);
  EXPECT_DOUBLE_EQ(c.learning_rate, 2e-4);
  EXPECT_DOUBLE_EQ(c.weight_decay, 1e-5);
  EXPECT_EQ(c.epochs * c.iterations, 1000u);
}

TEST(TotalLoss, UntrainedScoringTermsAreLogTwo) {
  Rng rng(1);
  const auto normals = samples(12, 0, rng), anomalies = samples(3, 1, rng, 100);
  const TrainConfig cfg = small_config();
  const auto model = mpfm::initialize_model(cfg, normals);
  Rng r(3);
  const auto g = mpfm::total_loss(model, ptrs(normals), ptrs(anomalies), r, cfg);
  for (double v : {g.report.local, g.report.normal, g.report.residual, g.report.global})
    EXPECT_NEAR(v, std::log(2.0), 1e-15);
}

TEST(TotalLoss, SumOfTermsAndLambdaLinearity) {
  Rng rng(2);
  const auto normals = samples(12, 0, rng), anomalies = samples(3, 1, rng, 100);
  TrainConfig cfg = small_config();
  auto model = mpfm::initialize_model(cfg, normals);
  perturb(model, rng);
  cfg.lambda = 0.0;
  Rng a(5), b(5);
  const auto r0 = mpfm::total_loss(model, ptrs(normals), ptrs(anomalies), a, cfg).report;
  EXPECT_EQ(r0.total,
            r0.local + r0.normal + r0.residual + r0.global + r0.flow_normal + r0.flow_anomaly + 0.0 * r0.mimr);
  cfg.lambda = 0.7;
  const auto r1 = mpfm::total_loss(model, ptrs(normals), ptrs(anomalies), b, cfg).report;
  EXPECT_NEAR(r1.total, r0.total + 0.7 * r1.mimr, 1e-12);
  EXPECT_EQ(r1.mimr, r0.mimr);
  EXPECT_NEAR(r1.mimr_report.mi_estimate, -r1.mimr, 1e-15);
  double usage = 0.0;
  for (double u : r1.usage) usage += u;
  EXPECT_NEAR(usage, 1.0, 1e-12);
}

TEST(TotalLoss, RejectsEmptyBatches) {
  Rng rng(3);
  const auto normals = samples(6, 0, rng), anomalies = samples(2, 1, rng, 100);
  const TrainConfig cfg = small_config();
  const auto model = mpfm::initialize_model(cfg, normals);
  EXPECT_THROW(mpfm::total_loss(model, {}, ptrs(anomalies), rng, cfg), mpfm::InvalidInput);
  EXPECT_THROW(mpfm::total_loss(model, ptrs(normals), {}, rng, cfg), mpfm::InvalidInput);
}

TEST(TotalLoss, RngOverloadEqualsFixedDraws) {
  Rng rng(10);
  const auto normals = samples(8, 0, rng), anomalies = samples(3, 1, rng, 100);
  TrainConfig cfg = small_config();
  cfg.endpoint = mpfm::EndpointSource::AssignedSample;
  auto model = mpfm::initialize_model(cfg, normals);
  perturb(model, rng);
  Rng a(11), b(11);
  const auto direct = mpfm::total_loss(model, ptrs(normals), ptrs(anomalies), a, cfg).report;
  const auto draws = mpfm::draw_total_flow(model, ptrs(normals), ptrs(anomalies), b, cfg);
  const auto fixed = mpfm::total_loss(model, ptrs(normals), ptrs(anomalies), draws, cfg).report;
  EXPECT_EQ(direct.total, fixed.total);
  EXPECT_EQ(direct.flow_normal, fixed.flow_normal);
  EXPECT_EQ(direct.flow_anomaly, fixed.flow_anomaly);
  EXPECT_EQ(a.next_u64(), b.next_u64());
  auto short_draws = draws;
  short_draws.anomaly = mpfm::draw_total_flow(model, ptrs(normals), ptrs(normals), b, cfg).anomaly;
  EXPECT_THROW(mpfm::total_loss(model, ptrs(normals), ptrs(anomalies), short_draws, cfg), mpfm::InvalidInput);
}

// Endpoint draws are graph constants, so the check holds them fixed.
TEST(TotalLoss, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  for (int trial = 0; trial < 3; ++trial) {
    const auto normals = samples(8, 0, rng), anomalies = samples(2 + trial, 1, rng, 100);
    TrainConfig cfg = small_config();
    cfg.head_activation = mpfm::Activation::Tanh;
    cfg.mimr.batch_marginal = trial == 2;
    cfg.repulsion_clip = trial == 1 ? 1.0 : 50.0;
    cfg.endpoint = trial == 0 ? mpfm::EndpointSource::AssignedSample : mpfm::EndpointSource::PriorSample;
    auto model = mpfm::initialize_model(cfg, normals);
    perturb(model, rng);
    Rng r(trial);
    const auto draws = mpfm::draw_total_flow(model, ptrs(normals), ptrs(anomalies), r, cfg);
    const auto g = mpfm::total_loss(model, ptrs(normals), ptrs(anomalies), draws, cfg);
    const auto analytic = ad::gradients(g.total, g.params);

    std::vector<Tensor*> tensors = mpfm::trainable_tensors(model);
    Tensor gain = Tensor::scalar(model.heads.gain), bias = Tensor::scalar(model.heads.bias);
    tensors.push_back(&gain);
    tensors.push_back(&bias);
    const double err = fixture::model_fd_error(tensors, analytic, [&] {
      model.heads.gain = gain[0];
      model.heads.bias = bias[0];
      return mpfm::total_loss(model, ptrs(normals), ptrs(anomalies), draws, cfg).report.total;
    });
    EXPECT_LT(err, 1e-6) << "trial " << trial;
  }
}

TEST(AdamW, ZeroGradientNoDecayLeavesParameters) {
  Rng rng(5);
  Tensor p = oracle::random_matrix(3, 2, rng);
  const Tensor before = p;
  mpfm::AdamW opt;
  opt.weight_decay = 0.0;
  Tensor* params[] = {&p};
  const Tensor grads[] = {Tensor::matrix(3, 2)};
  for (int i = 0; i < 5; ++i) opt.update(params, grads);
  EXPECT_EQ(p, before);
}

TEST(AdamW, ZeroGradientAppliesDecoupledDecay) {
  Rng rng(6);
  Tensor p = oracle::random_matrix(4, 1, rng);
  const Tensor before = p;
  mpfm::AdamW opt;
  opt.learning_rate = 0.1;
  opt.weight_decay = 0.5;
  Tensor* params[] = {&p};
  const Tensor grads[] = {Tensor::matrix(4, 1)};
  opt.update(params, grads);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(p[i], before[i] * (1.0 - 0.1 * 0.5));
}

TEST(AdamW, MatchesReferenceRecurrence) {
  mpfm::AdamW opt;
  opt.learning_rate = 0.01;
  opt.weight_decay = 0.1;
  Tensor p = Tensor::scalar(1.5);
  Tensor* params[] = {&p};
  long double x = 1.5L, m = 0.0L, v = 0.0L;
  const double g = 0.3;
  for (int t = 1; t <= 50; ++t) {
    const Tensor grads[] = {Tensor::scalar(g)};
    opt.update(params, grads);
    x *= 1.0L - 0.01L * 0.1L;
    m = 0.9L * m + 0.1L * g;
    v = 0.999L * v + 0.001L * g * g;
    const long double mh = m / (1.0L - std::pow(0.9L, t)), vh = v / (1.0L - std::pow(0.999L, t));
    x -= 0.01L * mh / (std::sqrt(vh) + 1e-8L);
    EXPECT_NEAR(p.item(), static_cast<double>(x), 1e-13) << "step " << t;
  }
  EXPECT_EQ(opt.step, 50u);
}

TEST(AdamW, NonFiniteGradientLeavesStateUnchanged) {
  mpfm::AdamW opt;
  Tensor a = Tensor::from_rows({{1.0, 2.0}}), b = Tensor::scalar(3.0);
  Tensor* params[] = {&a, &b};
  const Tensor good[] = {Tensor::from_rows({{0.1, 0.2}}), Tensor::scalar(0.3)};
  opt.update(params, good);
  const Tensor a0 = a, b0 = b;
  const auto m0 = opt.m, v0 = opt.v;
  const Tensor bad[] = {Tensor::from_rows({{0.1, 0.2}}), Tensor::scalar(NAN)};
  EXPECT_THROW(opt.update(params, bad), mpfm::NumericFault);
  EXPECT_EQ(a, a0);
  EXPECT_EQ(b, b0);
  EXPECT_EQ(opt.step, 1u);
  EXPECT_EQ(opt.m, m0);
  EXPECT_EQ(opt.v, v0);
  const Tensor wrong[] = {Tensor::matrix(2, 1), Tensor::scalar(0.0)};
  EXPECT_THROW(opt.update(params, wrong), mpfm::InvalidInput);
}

TEST(Train, ZeroEpochsReturnsInitialization) {
  Rng rng(7);
  const auto normals = samples(10, 0, rng), anomalies = samples(2, 1, rng, 100);
  TrainConfig cfg = small_config();
  cfg.epochs = 0;
  const auto res = mpfm::train(cfg, normals, anomalies);
  EXPECT_TRUE(res.history.empty());
  EXPECT_EQ(res.model, mpfm::initialize_model(cfg, normals));
}

TEST(Train, DeterministicAndFinite) {
  Rng rng(8);
  const auto normals = samples(15, 0, rng), anomalies = samples(3, 1, rng, 100);
  const TrainConfig cfg = small_config();
  std::size_t seen = 0;
  const auto a = mpfm::train(cfg, normals, anomalies, [&](const mpfm::IterationMetrics&) { ++seen; });
  const auto b = mpfm::train(cfg, normals, anomalies);
  EXPECT_EQ(a.model, b.model);
  EXPECT_EQ(seen, cfg.epochs * cfg.iterations);
  ASSERT_EQ(a.history.size(), cfg.epochs * cfg.iterations);
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    const auto& l = a.history[i].losses;
    EXPECT_EQ(a.history[i].step, i + 1);
    EXPECT_EQ(a.history[i].epoch, i / cfg.iterations);
    for (double v : {l.local, l.normal, l.residual, l.global, l.flow_normal, l.flow_anomaly, l.mimr, l.total})
      EXPECT_TRUE(std::isfinite(v));
    EXPECT_EQ(l.total, b.history[i].losses.total);
  }
  TrainConfig other = cfg;
  other.seed = 1;
  EXPECT_FALSE(mpfm::train(other, normals, anomalies).model == a.model);
}

TEST(Train, Preconditions) {
  Rng rng(9);
  const auto normals = samples(3, 0, rng), anomalies = samples(2, 1, rng, 100);
  TrainConfig cfg = small_config();
  cfg.components = 4;
  EXPECT_THROW(mpfm::train(cfg, normals, anomalies), mpfm::InsufficientData);
  cfg.components = 2;
  EXPECT_THROW(mpfm::train(cfg, normals, {}), mpfm::InsufficientData);
  EXPECT_THROW(mpfm::train(cfg, anomalies, anomalies), mpfm::InvalidInput);
  EXPECT_THROW(mpfm::train(cfg, normals, normals), mpfm::InvalidInput);
}

TEST(Train, DivergenceKeepsLastFiniteState) {
  Rng rng(10);
  auto normals = samples(10, 0, rng);
  const auto anomalies = samples(2, 1, rng, 100);
  TrainConfig cfg = small_config();
  cfg.learning_rate = 1e12;  // the first update sends the weights to extremes
  cfg.epochs = 5;
  try {
    mpfm::train(cfg, normals, anomalies);
    GTEST_SKIP() << "did not diverge";
  } catch (const mpfm::TrainingDiverged& e) {
    const auto& st = e.last_state();
    for (const Tensor* t : mpfm::trainable_tensors(const_cast<mpfm::ModelBundle&>(st.model)))
      EXPECT_TRUE(t->all_finite());
    EXPECT_EQ(st.history.size(), st.step);
  }
}

TEST(Train, FlowLossDecreasesOnBenchmark) {
  mpfm::SyntheticSpec spec = mpfm::SyntheticSpec::benchmark();
  const auto data = mpfm::generate(spec);
  TrainConfig cfg = TrainConfig::benchmark();
  cfg.epochs = 5;
  const auto res = mpfm::train(cfg, data.train_normal.samples, data.train_anomaly.samples);
  ASSERT_EQ(res.history.size(), 100u);
  auto window = [&](std::size_t end) {
    double s = 0.0;
    for (std::size_t i = end - 20; i < end; ++i) s += res.history[i].losses.flow_normal;
    return s / 20.0;
  };
  // Moving average over each block of 20 steps.
  for (std::size_t end = 40; end <= 100; end += 20) EXPECT_LT(window(end), window(end - 20)) << "window ending " << end;
}

TEST(Train, BatchMarginalMimrAvoidsCollapse) {
  const auto data = mpfm::generate(mpfm::SyntheticSpec::benchmark());
  TrainConfig cfg = TrainConfig::benchmark();
  cfg.mimr.batch_marginal = true;
  const auto res = mpfm::train(cfg, data.train_normal.samples, data.train_anomaly.samples);
  const auto& usage = res.history.back().losses.usage;
  EXPECT_LE(*std::max_element(usage.begin(), usage.end()), 0.99);
}
