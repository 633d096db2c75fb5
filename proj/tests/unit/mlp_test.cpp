// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "mpfm/error.hpp"
#include "mpfm/finite_diff.hpp"
#include "mpfm/mlp.hpp"
#include "oracles.hpp"

using mpfm::Activation;
using mpfm::MLP;
using mpfm::Tensor;

TEST(Mlp, ZeroFinalLayerGivesZeroOutput) {
  mpfm::Rng rng(2);
  MLP net({4, 8, 3}, Activation::Tanh, rng);
  net.zero_final_layer();
  const Tensor out = net.forward(oracle::random_matrix(5, 4, rng));
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(Mlp, IdentityLayer) {
  mpfm::Rng rng(3);
  const Tensor x = oracle::random_matrix(3, 4, rng);
  EXPECT_EQ(MLP::identity(4).forward(x), x);
}

TEST(Mlp, ForwardMatchesStraightLineOracle) {
  for (Activation act : {Activation::Tanh, Activation::Relu}) {
    mpfm::Rng rng(5);
    const MLP net({3, 6, 2}, act, rng);
    const Tensor x = oracle::random_matrix(4, 3, rng);
    const Tensor out = net.forward(x);
    for (std::size_t i = 0; i < 4; ++i) {
      const auto ref = oracle::mlp_forward(net, {x(i, 0), x(i, 1), x(i, 2)});
      for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(out(i, j), ref[j], 1e-14);
    }
  }
}

TEST(Mlp, InitIsFanInScaled) {
  mpfm::Rng rng(9);
  const MLP net({16, 64, 1}, Activation::Tanh, rng);
  const double bound = 1.0 / 4.0;
  for (double v : net.layers()[0].weight.data()) {
    EXPECT_LE(std::abs(v), bound);
  }
}

TEST(Mlp, RejectsShapeMismatch) {
  mpfm::Rng rng(1);
  const MLP net({3, 2}, Activation::Tanh, rng);
  EXPECT_THROW(net.forward(Tensor::matrix(2, 4)), mpfm::InvalidInput);
  const mpfm::BoundMLP bound(net, false);
  EXPECT_THROW(bound.forward(mpfm::ad::Var::constant(Tensor::matrix(2, 4))), mpfm::InvalidInput);
  EXPECT_THROW(MLP({3}, Activation::Tanh, rng), mpfm::InvalidInput);
}

TEST(Mlp, ParameterCountAndSizes) {
  mpfm::Rng rng(1);
  const MLP net({3, 5, 2}, Activation::Relu, rng);
  EXPECT_EQ(net.parameter_count(), 3u * 5 + 5 + 5 * 2 + 2);
  EXPECT_EQ(net.sizes(), (std::vector<std::size_t>{3, 5, 2}));
}

TEST(Mlp, ZeroFinalOutputsOnlyTouchesRange) {
  mpfm::Rng rng(4);
  MLP net({3, 5, 4}, Activation::Tanh, rng);
  net.zero_final_outputs(0, 2);
  const Tensor out = net.forward(oracle::random_matrix(3, 3, rng));
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(out(i, 0), 0.0);
    EXPECT_EQ(out(i, 1), 0.0);
    EXPECT_NE(out(i, 2), 0.0);
  }
  EXPECT_THROW(net.zero_final_outputs(3, 5), mpfm::InvalidInput);
}

TEST(Mlp, BoundForwardEqualsPlainAndHasFiniteDifferenceGradients) {
  mpfm::Rng rng(8);
  const MLP net({3, 4, 4, 2}, Activation::Tanh, rng);
  const Tensor x = oracle::random_matrix(5, 3, rng);
  const mpfm::BoundMLP bound(net, true);
  EXPECT_EQ(bound.forward(mpfm::ad::Var::constant(x)).value(), net.forward(x));

  std::vector<Tensor> params;
  for (const Tensor* p : net.parameter_refs()) params.push_back(*p);
  auto loss = [&](std::span<const mpfm::ad::Var> p) {
    auto h = mpfm::ad::Var::constant(x);
    for (std::size_t l = 0; l < p.size() / 2; ++l) {
      h = mpfm::ad::add(mpfm::ad::matmul(h, p[2 * l]), p[2 * l + 1]);
      if (2 * l + 2 < p.size()) h = mpfm::ad::tanh(h);
    }
    return mpfm::ad::sum(mpfm::ad::square(h));
  };
  EXPECT_LT(mpfm::finite_diff_check(loss, params).max_relative_error, 1e-6);
}
