// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "mpfm/autodiff.hpp"
#include "mpfm/tensor.hpp"

namespace mpfm {

/// Builds a scalar loss from graph leaves bound to the current parameter
/// values. Must be deterministic: any randomness needs a fixed seed inside.
using LossBuilder = std::function<ad::Var(std::span<const ad::Var> params)>;

struct FiniteDiffReport {
  double max_relative_error = 0.0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t entries_checked = 0;
};

/// Compares reverse-mode gradients against central differences
/// (f(p + h) - f(p - h)) / 2h for every entry of every parameter.
/// Relative error is |analytic - numeric| / (|numeric| + 1e-12).
/// Throws CheckInvalid if two evaluations at the same point differ.
FiniteDiffReport finite_diff_check(const LossBuilder& loss, std::span<const Tensor> params, double step = 1e-5);

}  // namespace mpfm
