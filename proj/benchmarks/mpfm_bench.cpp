// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <vector>

#include "mpfm/autodiff.hpp"
#include "mpfm/data.hpp"
#include "mpfm/eval.hpp"
#include "mpfm/flow.hpp"
#include "mpfm/mlp.hpp"
#include "mpfm/prototype.hpp"
#include "mpfm/reverse.hpp"
#include "mpfm/rng.hpp"
#include "mpfm/trainer.hpp"

namespace {

mpfm::Tensor random_matrix(std::size_t r, std::size_t c, mpfm::Rng& rng) {
  mpfm::Tensor t = mpfm::Tensor::matrix(r, c);
  for (double& x : t.data()) x = rng.normal();
  return t;
}

mpfm::GMPrototype random_prototype(std::size_t k, std::size_t d, mpfm::Rng& rng) {
  return mpfm::GMPrototype::make(std::vector<double>(k, 1.0), random_matrix(k, d, rng), 0.5);
}

void BM_MlpForward(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  mpfm::Rng rng(1);
  const mpfm::MLP net({9, 64, 64, 72}, mpfm::Activation::Tanh, rng);
  const mpfm::Tensor x = random_matrix(batch, 9, rng);
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(x));
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations() * batch));
}
BENCHMARK(BM_MlpForward)->Arg(1)->Arg(32)->Arg(256);

void BM_MlpForwardBackward(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  mpfm::Rng rng(2);
  const mpfm::MLP net({9, 64, 64, 72}, mpfm::Activation::Tanh, rng);
  const mpfm::Tensor x = random_matrix(batch, 9, rng);
  for (auto _ : state) {
    const mpfm::BoundMLP bound(net, true);
    const auto loss = mpfm::ad::mean(mpfm::ad::square(bound.forward(mpfm::ad::Var::constant(x))));
    benchmark::DoNotOptimize(mpfm::ad::gradients(loss, bound.parameters()));
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations() * batch));
}
BENCHMARK(BM_MlpForwardBackward)->Arg(32)->Arg(128);

void BM_LogDensity(benchmark::State& state) {
  const auto k = static_cast<std::size_t>(state.range(0));
  mpfm::Rng rng(3);
  const auto proto = random_prototype(k, 8, rng);
  const std::vector<double> y(8, 0.3);
  for (auto _ : state) benchmark::DoNotOptimize(mpfm::log_density(proto, y));
}
BENCHMARK(BM_LogDensity)->Arg(1)->Arg(8)->Arg(32);

void BM_KMeans(benchmark::State& state) {
  mpfm::Rng rng(4);
  const mpfm::Tensor x = random_matrix(2000, 8, rng);
  for (auto _ : state) benchmark::DoNotOptimize(mpfm::kmeanspp_init(x, static_cast<std::size_t>(state.range(0)), 7));
}
BENCHMARK(BM_KMeans)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_ReverseStep(benchmark::State& state) {
  mpfm::Rng rng(5);
  mpfm::GMVelocity pred{std::vector<double>(8, 0.125), random_matrix(8, 8, rng), 0.5};
  std::vector<double> z(8, 0.1);
  for (auto _ : state) benchmark::DoNotOptimize(mpfm::reverse_step(pred, z, 0.6, 0.1, rng));
}
BENCHMARK(BM_ReverseStep);

void BM_PushForwardPsi(benchmark::State& state) {
  mpfm::Rng rng(6);
  auto model = mpfm::FlowModel::create(random_prototype(8, 8, rng), {64, 64}, mpfm::Activation::Tanh, rng);
  const mpfm::Tensor z = random_matrix(static_cast<std::size_t>(state.range(0)), 8, rng);
  for (auto _ : state) benchmark::DoNotOptimize(mpfm::push_forward_psi(model, z));
}
BENCHMARK(BM_PushForwardPsi)->Arg(1)->Arg(64);

void BM_RocAuc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  mpfm::Rng rng(7);
  std::vector<double> s(n);
  std::vector<int> l(n);
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = rng.normal();
    l[i] = static_cast<int>(i % 2);
  }
  for (auto _ : state) benchmark::DoNotOptimize(mpfm::roc_auc(s, l));
}
BENCHMARK(BM_RocAuc)->Arg(1000)->Arg(100000);

void BM_TrainStep(benchmark::State& state) {
  mpfm::SyntheticSpec spec = mpfm::SyntheticSpec::benchmark();
  spec.train_normal = 256;
  spec.test_normal = 10;
  spec.test_anomaly = 10;
  const auto data = mpfm::generate(spec);
  mpfm::TrainConfig cfg;
  cfg.components = static_cast<std::size_t>(state.range(0));
  cfg.epochs = 1;
  cfg.iterations = 1;
  const auto model = mpfm::initialize_model(cfg, data.train_normal.samples);
  std::vector<const mpfm::FeatureSample*> nb, ab;
  for (std::size_t i = 0; i < cfg.normal_batch; ++i) nb.push_back(&data.train_normal.samples[i]);
  for (std::size_t i = 0; i < cfg.anomaly_batch; ++i) ab.push_back(&data.train_anomaly.samples[i % 10]);
  mpfm::Rng rng(8);
  for (auto _ : state) {
    const auto g = mpfm::total_loss(model, nb, ab, rng, cfg);
    benchmark::DoNotOptimize(mpfm::ad::gradients(g.total, g.params));
  }
}
BENCHMARK(BM_TrainStep)->Arg(1)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
