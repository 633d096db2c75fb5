// SPDX-License-Identifier: Apache-2.0
// Straight-line reference implementations used as test oracles. Nothing here
// calls into the library's numeric code; inputs are read through plain
// accessors only.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

#include "mpfm/mlp.hpp"
#include "mpfm/rng.hpp"
#include "mpfm/tensor.hpp"

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

inline Matrix to_matrix(const mpfm::Tensor& t) {
  Matrix m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t(i, j);
  return m;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < b.size(); ++k) s += a[i][k] * b[k][j];
      c[i][j] = s;
    }
  return c;
}

// x W + b, then tanh/relu between layers.
inline std::vector<double> mlp_forward(const mpfm::MLP& net, std::vector<double> x) {
  const auto& layers = net.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& w = layers[l].weight;
    std::vector<double> y(w.cols());
    for (std::size_t j = 0; j < w.cols(); ++j) {
      double s = layers[l].bias(0, j);
      for (std::size_t i = 0; i < w.rows(); ++i) s += x[i] * w(i, j);
      y[j] = s;
    }
    if (l + 1 < layers.size()) {
      for (double& v : y) v = net.activation() == mpfm::Activation::Tanh ? std::tanh(v) : std::max(v, 0.0);
    }
    x = std::move(y);
  }
  return x;
}

// Naive sum of weighted Gaussian densities in long double.
inline long double gm_log_density(const std::vector<double>& w, const Matrix& mu, double s,
                                  const std::vector<double>& y) {
  const long double two_pi = 2.0L * std::numbers::pi_v<long double>;
  long double total = 0.0L;
  for (std::size_t k = 0; k < w.size(); ++k) {
    long double d2 = 0.0L;
    for (std::size_t j = 0; j < y.size(); ++j) d2 += (static_cast<long double>(y[j]) - mu[k][j]) * (y[j] - mu[k][j]);
    const long double norm = std::pow(two_pi * s * s, -static_cast<long double>(y.size()) / 2.0L);
    total += w[k] * norm * std::exp(-d2 / (2.0L * s * s));
  }
  return std::log(total);
}

inline std::vector<double> gm_responsibilities(const std::vector<double>& w, const Matrix& mu, double s,
                                               const std::vector<double>& y) {
  std::vector<long double> p(w.size());
  long double z = 0.0L;
  for (std::size_t k = 0; k < w.size(); ++k) {
    long double d2 = 0.0L;
    for (std::size_t j = 0; j < y.size(); ++j) d2 += (static_cast<long double>(y[j]) - mu[k][j]) * (y[j] - mu[k][j]);
    p[k] = w[k] * std::exp(-d2 / (2.0L * s * s));
    z += p[k];
  }
  std::vector<double> out(w.size());
  for (std::size_t k = 0; k < w.size(); ++k) out[k] = static_cast<double>(p[k] / z);
  return out;
}

inline double entropy(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

// Fraction of (positive, negative) pairs ordered correctly, ties one half.
// Counted in half-units so the result is an exact ratio of integers.
inline double pairwise_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  unsigned long long half_units = 0, pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) half_units += 2;
      else if (scores[i] == scores[j]) half_units += 1;
    }
  }
  return static_cast<double>(half_units) / static_cast<double>(2 * pairs);
}

inline mpfm::Tensor random_matrix(std::size_t r, std::size_t c, mpfm::Rng& rng, double scale = 1.0) {
  mpfm::Tensor t = mpfm::Tensor::matrix(r, c);
  for (double& v : t.data()) v = scale * rng.normal();
  return t;
}

inline std::vector<double> random_vector(std::size_t n, mpfm::Rng& rng, double scale = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = scale * rng.normal();
  return v;
}

// Upper-tail chi-square probability via the regularized gamma function
// (series for x < a + 1, continued fraction otherwise).
inline double chi2_sf(double x, double dof) {
  const double a = dof / 2.0, z = x / 2.0;
  if (z <= 0.0) return 1.0;
  const double lg = std::lgamma(a);
  if (z < a + 1.0) {
    double term = 1.0 / a, sum = term;
    for (int n = 1; n < 1000; ++n) {
      term *= z / (a + n);
      sum += term;
      if (term < sum * 1e-15) break;
    }
    return 1.0 - sum * std::exp(-z + a * std::log(z) - lg);
  }
  double b = z + 1.0 - a, c = 1e300, d = 1.0 / b, h = d;
  for (int i = 1; i < 1000; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < 1e-300) d = 1e-300;
    c = b + an / c;
    if (std::fabs(c) < 1e-300) c = 1e-300;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < 1e-15) break;
  }
  return std::exp(-z + a * std::log(z) - lg) * h;
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace oracle
