// SPDX-License-Identifier: Apache-2.0
#include "mpfm/invariants.hpp"

#include <cmath>
#include <functional>
#include <sstream>

#include "mpfm/error.hpp"
#include "mpfm/eval.hpp"
#include "mpfm/finite_diff.hpp"
#include "mpfm/flow.hpp"
#include "mpfm/mimr.hpp"
#include "mpfm/prototype.hpp"
#include "mpfm/reverse.hpp"
#include "mpfm/rng.hpp"
#include "mpfm/scoring.hpp"

namespace mpfm {
namespace {

GMPrototype random_prototype(Rng& rng, std::size_t k, std::size_t d) {
  std::vector<double> w(k);
  for (double& x : w) x = rng.uniform(0.2, 1.0);
  Tensor means = Tensor::matrix(k, d);
  for (double& x : means.data()) x = rng.uniform(-3.0, 3.0);
  return GMPrototype::make(std::move(w), std::move(means), rng.uniform(0.3, 1.5));
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(3);
  s << std::scientific << v;
  return s.str();
}

InvariantResult check_coefficients(Rng& rng) {
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double t = rng.uniform(1e-3, 1.0);
    const double dt = t * (1.0 - rng.uniform());  // in (0, t]
    const auto c = reverse_coefficients(t, dt);
    const double s = t - dt;
    worst = std::max(worst, std::abs(c.c1 * NoiseSchedule::alpha(t) + c.c2 - NoiseSchedule::alpha(s)));
    worst = std::max(worst, std::abs(c.c1 * c.c1 * t * t + c.c3 - s * s));
  }
  return {"reverse coefficient chain identities", worst <= 1e-12, "max deviation " + fmt(worst)};
}

InvariantResult check_full_jump() {
  double worst = 0.0;
  for (double t : {1.0, 0.7, 0.25, 1e-3}) {
    const auto c = reverse_coefficients(t, t);
    worst = std::max({worst, std::abs(c.c1), std::abs(c.c2 - 1.0), std::abs(c.c3)});
  }
  return {"full reverse jump gives (0, 1, 0)", worst == 0.0, "max deviation " + fmt(worst)};
}

InvariantResult check_mimr(Rng& rng) {
  bool ok = true;
  double worst_neg = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 1 + rng.below(6), d = 1 + rng.below(4), n = 1 + rng.below(16);
    const GMPrototype proto = random_prototype(rng, k, d);
    Tensor y = Tensor::matrix(n, d);
    for (double& x : y.data()) x = rng.uniform(-4.0, 4.0);
    const MimrReport r = mimr_loss(proto, y);
    const double logk = std::log(static_cast<double>(k));
    ok = ok && r.loss >= -logk - 1e-12 && r.loss <= logk + 1e-12;
    ok = ok && r.mi_estimate == -r.loss;
    worst_neg = std::max(worst_neg, std::abs(r.mi_estimate + r.loss));
  }
  return {"MIMR loss bounds and mi = -loss", ok, "max |mi + loss| " + fmt(worst_neg)};
}

InvariantResult check_auc(Rng& rng) {
  bool ok = true;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.below(40);
    std::vector<double> s(n), neg(n);
    std::vector<int> l(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng.below(6));
      neg[i] = -s[i];
      l[i] = static_cast<int>(rng.below(2));
    }
    l[0] = 0;
    l[1] = 1;
    ok = ok && roc_auc(s, l) + roc_auc(neg, l) == 1.0;
  }
  return {"AUC complement identity", ok, ""};
}

InvariantResult check_gm_nll_gradient(Rng& rng) {
  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t k = 1 + rng.below(4), d = 1 + rng.below(3), n = 3;
    Tensor logits = Tensor::matrix(n, k), means = Tensor::matrix(n, k * d), u = Tensor::matrix(n, d);
    for (double& x : logits.data()) x = rng.uniform(-1.0, 1.0);
    for (double& x : means.data()) x = rng.uniform(-2.0, 2.0);
    for (double& x : u.data()) x = rng.uniform(-2.0, 2.0);
    const double s = rng.uniform(0.5, 1.5);
    const Tensor params[] = {logits, means};
    const auto rep = finite_diff_check(
        [&](std::span<const ad::Var> p) {
          VelocityBatch b{ad::log_softmax_rows(p[0]), p[1], s, k, d};
          return ad::mean(gm_nll(b, ad::Var::constant(u)));
        },
        params);
    worst = std::max(worst, rep.max_relative_error);
  }
  return {"velocity NLL gradient vs finite differences", worst <= 1e-4, "max relative error " + fmt(worst)};
}

InvariantResult check_score_identity(Rng& rng) {
  const std::size_t c = 3, p = 5;
  const GMPrototype proto = random_prototype(rng, 3, c);
  FlowModel model = FlowModel::create(proto, {6}, Activation::Tanh, rng);
  ScoringHeads heads = ScoringHeads::create(c, c, {4}, Activation::Tanh, rng);
  for (MLP* net : {&heads.head_a, &heads.head_n, &heads.head_r}) {
    for (Tensor* t : net->parameter_refs())
      for (double& x : t->data()) x = rng.uniform(-0.5, 0.5);
  }
  std::vector<FeatureSample> samples;
  for (int i = 0; i < 20; ++i) {
    Tensor patches = Tensor::matrix(p, c);
    for (double& x : patches.data()) x = rng.uniform(-3.0, 3.0);
    samples.push_back(FeatureSample::make(i, std::move(patches), i % 2));
  }
  bool ok = true;
  for (const auto& b : score_batch(model, heads, samples)) ok = ok && b.s == b.s_g + b.s_a + b.s_r - b.s_n;
  return {"combined score identity", ok, ""};
}

}  // namespace

std::vector<InvariantResult> run_invariant_suite(std::uint64_t seed) {
  Rng rng(seed, 0xc4ec);
  std::vector<std::function<InvariantResult()>> checks = {
      [&] { return check_coefficients(rng); }, [] { return check_full_jump(); },
      [&] { return check_mimr(rng); },         [&] { return check_auc(rng); },
      [&] { return check_gm_nll_gradient(rng); }, [&] { return check_score_identity(rng); },
  };
  std::vector<InvariantResult> out;
  for (auto& check : checks) {
    try {
      out.push_back(check());
    } catch (const std::exception& e) {
      out.push_back({"(check raised)", false, e.what()});
    }
  }
  return out;
}

}  // namespace mpfm
