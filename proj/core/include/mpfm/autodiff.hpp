// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "mpfm/tensor.hpp"

/// Tape-free reverse-mode differentiation over matrix-valued nodes.
///
/// Each operation returns a Var holding its value. When at least one input
/// requires a gradient, the result keeps references to its inputs and a local
/// vector-Jacobian rule; otherwise it is a detached constant and no graph is
/// retained. backward() walks the graph reachable from a scalar root in
/// reverse topological order.
namespace mpfm::ad {

struct Node {
  Tensor value;
  Tensor grad;  // empty until something is accumulated
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backprop;

  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var constant(Tensor value);
  static Var parameter(Tensor value);
  static Var scalar(double value) { return constant(Tensor::scalar(value)); }

  const Tensor& value() const { return node_->value; }
  /// Gradient accumulated by the last backward(); zeros if never reached.
  Tensor grad() const;
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const noexcept { return static_cast<bool>(node_); }

  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  double item() const { return node_->value.item(); }

  Node* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node>& shared() const noexcept { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Nodes reachable from root that require gradients, inputs before users.
std::vector<Node*> topological_order(const Var& root);

/// Accumulates d(root)/d(leaf) into every reachable leaf; interior nodes are
/// recomputed from zero on each call. Root must be 1x1.
void backward(const Var& root);

/// Zeroes the gradients of params, runs backward, and returns one gradient
/// tensor per parameter (zeros for parameters the root does not depend on).
std::vector<Tensor> gradients(const Var& root, std::span<const Var> params);

// Elementwise binary ops broadcast each operand whose row or column count is
// 1 against the other (matrix, row vector, column vector, scalar).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);

Var matmul(const Var& a, const Var& b);

Var neg(const Var& a);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double offset);
Var square(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var tanh(const Var& a);
Var relu(const Var& a);
Var sigmoid(const Var& a);
/// log(1 + e^x), stable for large |x|.
Var softplus(const Var& a);
/// x log x with 0 log 0 = 0.
Var xlogx(const Var& a);
/// max(a, floor); gradient is zero where the floor is active.
Var clamp_min(const Var& a, double floor);

Var sum(const Var& a);
Var mean(const Var& a);
/// n x m -> n x 1
Var row_sum(const Var& a);
/// n x m -> 1 x m
Var col_sum(const Var& a);
Var col_mean(const Var& a);
/// n x m -> n x 1, log sum_j exp(a_ij)
Var logsumexp_rows(const Var& a);
Var log_softmax_rows(const Var& a);
Var softmax_rows(const Var& a);

Var slice_cols(const Var& a, std::size_t begin, std::size_t end);
Var slice_rows(const Var& a, std::size_t begin, std::size_t end);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var reshape(const Var& a, std::size_t rows, std::size_t cols);
/// n x m -> n x (m * times): [a a ... a]
Var repeat_cols(const Var& a, std::size_t times);
/// n x (g * k) -> n x k, summing consecutive groups of g columns.
Var group_sum_cols(const Var& a, std::size_t group);
/// Rows of a selected by index (repeats allowed).
Var gather_rows(const Var& a, std::span<const std::size_t> index);

/// y: n x d, centers: k x d -> n x k squared Euclidean distances.
Var squared_distances(const Var& y, const Var& centers);
/// weights: n x k, means: n x (k * d) -> n x d, sum_k w_ik mu_ik.
Var mixture_combine(const Var& weights, const Var& means);
/// a: n x p -> n x 1, mean of the `count` largest entries of each row.
/// Ties are broken by lower column index.
Var topk_mean_rows(const Var& a, std::size_t count);

}  // namespace mpfm::ad
