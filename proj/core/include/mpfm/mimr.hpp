// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "mpfm/autodiff.hpp"
#include "mpfm/prototype.hpp"
#include "mpfm/tensor.hpp"

namespace mpfm {

/// Entropies in nats.
struct MimrReport {
  double conditional_entropy = 0.0;  // H(c|y), batch mean
  double marginal_entropy = 0.0;     // H(c)
  double loss = 0.0;
  double mi_estimate = 0.0;          // H(c) - H(c|y)
};

struct MimrOptions {
  /// Use loss = H(c) - H(c|y) exactly as printed, which minimizes the MI.
  bool literal_sign = false;
  /// Take H(c) from the batch-averaged responsibilities instead of pi.
  bool batch_marginal = false;
};

/// y: n x d transformed normal features.
MimrReport mimr_loss(const GMPrototype& proto, const Tensor& y, const MimrOptions& options = {});
/// Same, after checking that every label is 0 (throws ContractViolation otherwise).
MimrReport mimr_loss(const GMPrototype& proto, const Tensor& y, std::span<const int> labels,
                     const MimrOptions& options = {});

double mutual_info_estimate(const GMPrototype& proto, const Tensor& y, const MimrOptions& options = {});

struct MimrTerms {
  ad::Var loss;                 // 1 x 1
  ad::Var conditional_entropy;  // 1 x 1
  ad::Var marginal_entropy;     // 1 x 1
  ad::Var usage;                // 1 x K batch-averaged responsibilities
};

/// Differentiable in y and the means.
MimrTerms mimr_terms(const ad::Var& y, const ad::Var& means, std::span<const double> weights, double shared_std,
                     const MimrOptions& options = {});

MimrReport to_report(const MimrTerms& terms);

}  // namespace mpfm
