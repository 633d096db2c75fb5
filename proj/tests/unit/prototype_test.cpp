// SPDX-License-Identifier: Apache-2.0
#include "mpfm/prototype.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fixtures.hpp"
#include "mpfm/error.hpp"
#include "oracles.hpp"

using mpfm::GMPrototype;
using mpfm::Rng;
using mpfm::Tensor;

namespace {

// Means sorted by first coordinate so cluster order does not matter.
std::vector<std::vector<double>> sorted_means(const GMPrototype& p) {
  auto m = oracle::to_matrix(p.means);
  std::sort(m.begin(), m.end());
  return m;
}

}  // namespace

TEST(KMeans, TwoClusterExample) {
  const Tensor x = Tensor::from_rows({{0, 0}, {0, 1}, {10, 0}, {10, 1}});
  const GMPrototype p = mpfm::kmeanspp_init(x, 2, 7);
  const auto m = sorted_means(p);
  EXPECT_NEAR(m[0][0], 0.0, 1e-12);
  EXPECT_NEAR(m[0][1], 0.5, 1e-12);
  EXPECT_NEAR(m[1][0], 10.0, 1e-12);
  EXPECT_NEAR(m[1][1], 0.5, 1e-12);
  EXPECT_NEAR(p.weights[0], 0.5, 1e-12);
  EXPECT_NEAR(p.weights[1], 0.5, 1e-12);
  EXPECT_NEAR(p.shared_std * p.shared_std, 0.125, 1e-12);
}

TEST(KMeans, SingleComponentIsCentroid) {
  Rng rng(3);
  const Tensor x = oracle::random_matrix(50, 3, rng);
  const GMPrototype p = mpfm::kmeanspp_init(x, 1, 1);
  double sse = 0.0;
  for (std::size_t j = 0; j < 3; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < 50; ++i) mean += x(i, j);
    mean /= 50.0;
    EXPECT_NEAR(p.means(0, j), mean, 1e-12);
    for (std::size_t i = 0; i < 50; ++i) sse += (x(i, j) - mean) * (x(i, j) - mean);
  }
  EXPECT_DOUBLE_EQ(p.weights[0], 1.0);
  EXPECT_NEAR(p.shared_std, std::sqrt(sse / 150.0), 1e-12);
}

TEST(KMeans, OnePointPerClusterHitsStdFloor) {
  const Tensor x = Tensor::from_rows({{0, 0}, {1, 1}, {5, -2}});
  const GMPrototype p = mpfm::kmeanspp_init(x, 3, 0);
  EXPECT_DOUBLE_EQ(p.shared_std, GMPrototype::kStdFloor);
  for (double w : p.weights) EXPECT_NEAR(w, 1.0 / 3.0, 1e-15);
}

TEST(KMeans, FewerPointsThanComponents) {
  const Tensor x = Tensor::from_rows({{0, 0}, {1, 1}});
  EXPECT_THROW(mpfm::kmeanspp_init(x, 3, 0), mpfm::InsufficientData);
  EXPECT_THROW(mpfm::kmeanspp_init(x, 0, 0), mpfm::InvalidInput);
}

TEST(KMeans, DeterministicForSeed) {
  Rng rng(11);
  const Tensor x = oracle::random_matrix(200, 4, rng, 3.0);
  const GMPrototype a = mpfm::kmeanspp_init(x, 5, 42), b = mpfm::kmeanspp_init(x, 5, 42);
  EXPECT_EQ(a.means, b.means);
  EXPECT_EQ(a.weights, b.weights);
  EXPECT_EQ(a.shared_std, b.shared_std);
}

TEST(KMeans, RecoversSeparatedClusters) {
  Rng rng(5);
  const std::vector<std::vector<double>> centers{{-20, 0}, {0, 20}, {20, 0}};
  Tensor x = Tensor::matrix(300, 2);
  for (std::size_t i = 0; i < 300; ++i)
    for (std::size_t j = 0; j < 2; ++j) x(i, j) = centers[i % 3][j] + 0.5 * rng.normal();
  const auto m = sorted_means(mpfm::kmeanspp_init(x, 3, 9));
  auto want = centers;
  std::sort(want.begin(), want.end());
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(m[k][j], want[k][j], 0.2);
}

TEST(LogDensity, StandardNormalAtOrigin) {
  const GMPrototype p = fixture::prototype({1.0}, Tensor::from_rows({{0.0}}), 1.0);
  const double y[] = {0.0};
  EXPECT_NEAR(mpfm::log_density(p, y), -0.918939, 1e-6);
}

TEST(LogDensity, SymmetricPairHasEqualResponsibilities) {
  const GMPrototype p = fixture::prototype({0.5, 0.5}, Tensor::from_rows({{-1.0}, {1.0}}), 1.0);
  const double y[] = {0.0};
  const auto r = mpfm::responsibilities(p, y).values;
  EXPECT_NEAR(r[0], 0.5, 1e-15);
  EXPECT_NEAR(r[1], 0.5, 1e-15);
  // Both components sit one unit away, so the density is that of one of them.
  EXPECT_NEAR(mpfm::log_density(p, y), -0.918939 - 0.5, 1e-6);
}

TEST(LogDensity, MatchesLongDoubleOracle) {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 1 + rng.below(6), d = 1 + rng.below(5);
    const GMPrototype p = fixture::random_prototype(k, d, rng, 2.0, 0.5 + rng.uniform());
    const auto y = oracle::random_vector(d, rng, 2.0);
    const auto want = oracle::gm_log_density(p.weights, oracle::to_matrix(p.means), p.shared_std, y);
    EXPECT_NEAR(mpfm::log_density(p, y), static_cast<double>(want), 1e-10 * (1.0 + std::fabs(static_cast<double>(want))));
    const auto r = mpfm::responsibilities(p, y).values;
    const auto ro = oracle::gm_responsibilities(p.weights, oracle::to_matrix(p.means), p.shared_std, y);
    double total = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      EXPECT_NEAR(r[c], ro[c], 1e-12);
      total += r[c];
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(LogDensity, FarPointStaysFinite) {
  const GMPrototype p = fixture::prototype({0.3, 0.7}, Tensor::from_rows({{0.0, 0.0}, {1.0, 0.0}}), 0.01);
  const double y[] = {500.0, -300.0};
  EXPECT_TRUE(std::isfinite(mpfm::log_density(p, y)));
  const auto r = mpfm::responsibilities(p, y).values;
  EXPECT_NEAR(r[0] + r[1], 1.0, 1e-12);
  EXPECT_GT(r[1], 0.999);  // nearer component
}

TEST(LogDensity, InvariantUnderComponentPermutation) {
  Rng rng(23);
  const GMPrototype p = fixture::random_prototype(4, 3, rng);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  std::vector<double> w(4);
  Tensor mu = Tensor::matrix(4, 3);
  for (std::size_t k = 0; k < 4; ++k) {
    w[k] = p.weights[perm[k]];
    for (std::size_t j = 0; j < 3; ++j) mu(k, j) = p.means(perm[k], j);
  }
  const GMPrototype q = fixture::prototype(w, mu, p.shared_std);
  for (int i = 0; i < 20; ++i) {
    const auto y = oracle::random_vector(3, rng, 2.0);
    EXPECT_NEAR(mpfm::log_density(p, y), mpfm::log_density(q, y), 1e-12);
    const auto rp = mpfm::responsibilities(p, y).values, rq = mpfm::responsibilities(q, y).values;
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(rq[k], rp[perm[k]], 1e-14);
  }
}

TEST(LogDensity, RejectsWrongDimension) {
  const GMPrototype p = fixture::prototype({1.0}, Tensor::from_rows({{0.0, 0.0}}), 1.0);
  const double y[] = {0.0};
  EXPECT_THROW(mpfm::log_density(p, y), mpfm::InvalidInput);
}

TEST(Prior, SampleMoments) {
  const GMPrototype p = fixture::prototype({0.25, 0.75}, Tensor::from_rows({{-2.0, 0.0}, {2.0, 1.0}}), 0.5);
  Rng rng(99);
  const int n = 40000;
  double m0 = 0.0, m1 = 0.0, v0 = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto y = mpfm::sample_prior(p, rng);
    m0 += y[0];
    m1 += y[1];
    v0 += y[0] * y[0];
  }
  m0 /= n;
  m1 /= n;
  v0 = v0 / n - m0 * m0;
  // Var y0 = s^2 + E[mu0^2] - (E mu0)^2.
  const double want_var0 = 0.25 + (0.25 * 4.0 + 0.75 * 4.0) - 1.0;
  EXPECT_NEAR(m0, 1.0, 4.0 * std::sqrt(want_var0 / n));
  EXPECT_NEAR(m1, 0.75, 4.0 * std::sqrt((0.25 + 0.1875) / n));
  EXPECT_NEAR(v0, want_var0, 0.05);
}

TEST(Prior, SameStreamSameDraws) {
  const GMPrototype p = fixture::prototype({0.5, 0.5}, Tensor::from_rows({{0.0}, {3.0}}), 1.0);
  Rng a(4, 1), b(4, 1);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(mpfm::sample_prior(p, a), mpfm::sample_prior(p, b));
}

TEST(Prototype, MakeFloorsAndValidates) {
  const GMPrototype p = fixture::prototype({1.0, 0.0}, Tensor::from_rows({{0.0}, {1.0}}), 1e-9);
  EXPECT_NEAR(p.weights[1], GMPrototype::kWeightFloor, 1e-20);
  EXPECT_NEAR(p.weights[0] + p.weights[1], 1.0, 1e-15);
  EXPECT_GE(p.shared_std, GMPrototype::kStdFloor);
  EXPECT_THROW(fixture::prototype({1.0}, Tensor::from_rows({{0.0}, {1.0}}), 1.0), mpfm::InvalidInput);
}

TEST(Prototype, MostProbableComponentIsNearestMean) {
  const Tensor mu = Tensor::from_rows({{0, 0}, {4, 0}, {0, 4}});
  const GMPrototype p = fixture::prototype({1.0 / 3, 1.0 / 3, 1.0 / 3}, mu, 1.0);
  const double a[] = {3.0, 0.5}, b[] = {0.5, 2.9};
  EXPECT_EQ(mpfm::most_probable_component(p, a), 1u);
  EXPECT_EQ(mpfm::most_probable_component(p, b), 2u);
  const auto batch = mpfm::most_probable_components(mu, Tensor::from_rows({{3.0, 0.5}, {0.5, 2.9}, {0.1, 0.1}}));
  EXPECT_EQ(batch, (std::vector<std::size_t>{1, 2, 0}));
}
