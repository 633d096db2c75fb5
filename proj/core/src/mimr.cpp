// SPDX-License-Identifier: Apache-2.0
#include "mpfm/mimr.hpp"

#include <cmath>

#include "mpfm/error.hpp"

namespace mpfm {

MimrTerms mimr_terms(const ad::Var& y, const ad::Var& means, std::span<const double> weights, double shared_std,
                     const MimrOptions& options) {
  if (y.value().rank() != 2 || y.rows() == 0) throw InvalidInput("mimr: empty batch");
  const ad::Var terms = component_log_terms(y, means, weights, shared_std);
  const ad::Var log_r = ad::log_softmax_rows(terms);
  const ad::Var r = ad::exp(log_r);

  MimrTerms out;
  out.conditional_entropy = ad::neg(ad::mean(ad::row_sum(ad::mul(r, log_r))));
  out.usage = ad::col_mean(r);
  if (options.batch_marginal) {
    out.marginal_entropy = ad::neg(ad::sum(ad::xlogx(out.usage)));
  } else {
    double h = 0.0;
    for (double p : weights) h -= p > 0.0 ? p * std::log(p) : 0.0;
    out.marginal_entropy = ad::Var::scalar(h);
  }
  out.loss = options.literal_sign ? ad::sub(out.marginal_entropy, out.conditional_entropy)
                                  : ad::sub(out.conditional_entropy, out.marginal_entropy);
  return out;
}

MimrReport to_report(const MimrTerms& terms) {
  MimrReport rep;
  rep.conditional_entropy = terms.conditional_entropy.item();
  rep.marginal_entropy = terms.marginal_entropy.item();
  rep.loss = terms.loss.item();
  rep.mi_estimate = rep.marginal_entropy - rep.conditional_entropy;
  return rep;
}

MimrReport mimr_loss(const GMPrototype& proto, const Tensor& y, const MimrOptions& options) {
  if (y.rank() != 2 || y.rows() == 0) throw InvalidInput("mimr: empty batch");
  if (y.cols() != proto.dim()) throw InvalidInput("mimr: feature dimension differs from the prototype");
  return to_report(mimr_terms(ad::Var::constant(y), ad::Var::constant(proto.means), proto.weights, proto.shared_std,
                              options));
}

MimrReport mimr_loss(const GMPrototype& proto, const Tensor& y, std::span<const int> labels,
                     const MimrOptions& options) {
  if (y.rank() == 2 && labels.size() != y.rows()) throw InvalidInput("mimr: one label per row required");
  for (int l : labels) {
    if (l != 0) throw ContractViolation("mimr: the regularizer is defined on normal samples only");
  }
  return mimr_loss(proto, y, options);
}

double mutual_info_estimate(const GMPrototype& proto, const Tensor& y, const MimrOptions& options) {
  return mimr_loss(proto, y, options).mi_estimate;
}

}  // namespace mpfm
