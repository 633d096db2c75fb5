// SPDX-License-Identifier: Apache-2.0
#include "mpfm/finite_diff.hpp"

#include <cmath>

#include "mpfm/error.hpp"

namespace mpfm {
namespace {

double evaluate(const LossBuilder& loss, const std::vector<Tensor>& values) {
  std::vector<ad::Var> leaves;
  leaves.reserve(values.size());
  for (const Tensor& v : values) leaves.push_back(ad::Var::constant(v));
  const ad::Var out = loss(leaves);
  if (out.value().size() != 1) throw ContractViolation("finite_diff_check: loss is not a scalar");
  return out.item();
}

}  // namespace

FiniteDiffReport finite_diff_check(const LossBuilder& loss, std::span<const Tensor> params, double step) {
  if (!(step > 0.0)) throw InvalidInput("finite_diff_check: step must be positive");
  std::vector<Tensor> values(params.begin(), params.end());

  std::vector<ad::Var> leaves;
  for (const Tensor& v : values) leaves.push_back(ad::Var::parameter(v));
  const ad::Var root = loss(leaves);
  const std::vector<Tensor> analytic = ad::gradients(root, leaves);

  const double base = root.item();
  if (evaluate(loss, values) != base || evaluate(loss, values) != base) {
    throw CheckInvalid("finite_diff_check: loss is not deterministic at a fixed point");
  }

  FiniteDiffReport report;
  for (std::size_t t = 0; t < values.size(); ++t) {
    for (std::size_t i = 0; i < values[t].size(); ++i) {
      const double saved = values[t][i];
      values[t][i] = saved + step;
      const double plus = evaluate(loss, values);
      values[t][i] = saved - step;
      const double minus = evaluate(loss, values);
      values[t][i] = saved;

      const double numeric = (plus - minus) / (2.0 * step);
      const double a = analytic[t][i];
      const double rel = std::abs(a - numeric) / (std::abs(numeric) + 1e-12);
      ++report.entries_checked;
      if (!std::isfinite(rel) || rel > report.max_relative_error) {
        report.max_relative_error = std::isfinite(rel) ? rel : INFINITY;
        report.worst_tensor = t;
        report.worst_index = i;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace mpfm
