// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mpfm/autodiff.hpp"
#include "mpfm/rng.hpp"
#include "mpfm/tensor.hpp"

namespace mpfm {

enum class Activation { Tanh, Relu };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

struct DenseLayer {
  Tensor weight;  // in x out
  Tensor bias;    // 1 x out
};

/// Fully connected network; the activation is applied between layers but not
/// after the last one.
class MLP {
 public:
  MLP() = default;
  /// Fan-in scaled uniform init U(-1/sqrt(in), 1/sqrt(in)) for every layer.
  MLP(std::vector<std::size_t> sizes, Activation act, Rng& rng);
  MLP(std::vector<DenseLayer> layers, Activation act);

  /// Single linear map with W = I, b = 0.
  static MLP identity(std::size_t width);

  std::size_t input_size() const { return layers_.front().weight.rows(); }
  std::size_t output_size() const { return layers_.back().bias.cols(); }
  std::vector<std::size_t> sizes() const;
  Activation activation() const noexcept { return act_; }
  std::size_t parameter_count() const;

  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
  std::vector<DenseLayer>& layers() noexcept { return layers_; }

  /// Zeroes the final layer (weights and bias).
  void zero_final_layer();
  /// Zeroes output columns [begin, end) of the final layer.
  void zero_final_outputs(std::size_t begin, std::size_t end);

  /// Plain evaluation; input is n x input_size().
  Tensor forward(const Tensor& input) const;

  /// References to every parameter tensor, layer by layer (weight, bias).
  std::vector<Tensor*> parameter_refs();
  std::vector<const Tensor*> parameter_refs() const;

  friend bool operator==(const MLP& a, const MLP& b);

 private:
  std::vector<DenseLayer> layers_;
  Activation act_ = Activation::Tanh;
};

/// Graph-bound view of an MLP: one leaf Var per parameter tensor.
class BoundMLP {
 public:
  BoundMLP() = default;
  BoundMLP(const MLP& net, bool trainable);

  ad::Var forward(const ad::Var& input) const;
  /// Leaves in MLP::parameter_refs() order.
  const std::vector<ad::Var>& parameters() const noexcept { return params_; }

 private:
  std::vector<ad::Var> params_;
  Activation act_ = Activation::Tanh;
};

}  // namespace mpfm
