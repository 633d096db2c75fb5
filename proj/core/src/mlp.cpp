// SPDX-License-Identifier: Apache-2.0
#include "mpfm/mlp.hpp"

#include <cmath>

#include "mpfm/error.hpp"

namespace mpfm {

std::string to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "relu"; }

Activation activation_from_string(const std::string& name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "relu") return Activation::Relu;
  throw InvalidInput("unknown activation '" + name + "'");
}

MLP::MLP(std::vector<std::size_t> sizes, Activation act, Rng& rng) : act_(act) {
  if (sizes.size() < 2) throw InvalidInput("MLP needs at least input and output sizes");
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    const std::size_t in = sizes[i], out = sizes[i + 1];
    if (in == 0 || out == 0) throw InvalidInput("MLP layer sizes must be positive");
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    DenseLayer layer{Tensor::matrix(in, out), Tensor::matrix(1, out)};
    for (double& w : layer.weight.data()) w = rng.uniform(-bound, bound);
    for (double& b : layer.bias.data()) b = rng.uniform(-bound, bound);
    layers_.push_back(std::move(layer));
  }
}

MLP::MLP(std::vector<DenseLayer> layers, Activation act) : layers_(std::move(layers)), act_(act) {
  if (layers_.empty()) throw InvalidInput("MLP needs at least one layer");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.bias.rows() != 1 || l.bias.cols() != l.weight.cols()) {
      throw InvalidInput("MLP layer " + std::to_string(i) + ": bias shape does not match weight");
    }
    if (i > 0 && layers_[i - 1].weight.cols() != l.weight.rows()) {
      throw InvalidInput("MLP layer " + std::to_string(i) + ": incompatible with previous layer");
    }
  }
}

MLP MLP::identity(std::size_t width) {
  DenseLayer layer{Tensor::matrix(width, width), Tensor::matrix(1, width)};
  for (std::size_t i = 0; i < width; ++i) layer.weight(i, i) = 1.0;
  return MLP({std::move(layer)}, Activation::Tanh);
}

std::vector<std::size_t> MLP::sizes() const {
  std::vector<std::size_t> s{input_size()};
  for (const auto& l : layers_) s.push_back(l.weight.cols());
  return s;
}

std::size_t MLP::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

void MLP::zero_final_layer() {
  layers_.back().weight.fill(0.0);
  layers_.back().bias.fill(0.0);
}

void MLP::zero_final_outputs(std::size_t begin, std::size_t end) {
  auto& last = layers_.back();
  if (begin > end || end > last.weight.cols()) throw InvalidInput("zero_final_outputs: bad range");
  for (std::size_t r = 0; r < last.weight.rows(); ++r)
    for (std::size_t c = begin; c < end; ++c) last.weight(r, c) = 0.0;
  for (std::size_t c = begin; c < end; ++c) last.bias(0, c) = 0.0;
}

Tensor MLP::forward(const Tensor& input) const {
  return BoundMLP(*this, false).forward(ad::Var::constant(input)).value();
}

std::vector<Tensor*> MLP::parameter_refs() {
  std::vector<Tensor*> refs;
  for (auto& l : layers_) {
    refs.push_back(&l.weight);
    refs.push_back(&l.bias);
  }
  return refs;
}

std::vector<const Tensor*> MLP::parameter_refs() const {
  std::vector<const Tensor*> refs;
  for (const auto& l : layers_) {
    refs.push_back(&l.weight);
    refs.push_back(&l.bias);
  }
  return refs;
}

bool operator==(const MLP& a, const MLP& b) {
  if (a.act_ != b.act_ || a.layers_.size() != b.layers_.size()) return false;
  for (std::size_t i = 0; i < a.layers_.size(); ++i) {
    if (!(a.layers_[i].weight == b.layers_[i].weight) || !(a.layers_[i].bias == b.layers_[i].bias)) return false;
  }
  return true;
}

BoundMLP::BoundMLP(const MLP& net, bool trainable) : act_(net.activation()) {
  for (const Tensor* p : net.parameter_refs()) {
    params_.push_back(trainable ? ad::Var::parameter(*p) : ad::Var::constant(*p));
  }
}

ad::Var BoundMLP::forward(const ad::Var& input) const {
  if (params_.empty()) throw ContractViolation("BoundMLP::forward on an empty network");
  const std::size_t in = params_[0].rows();
  if (input.value().rank() != 2 || input.cols() != in) {
    throw InvalidInput("MLP input has shape " + input.value().shape_string() + ", expected n x " +
                       std::to_string(in));
  }
  ad::Var h = input;
  const std::size_t n_layers = params_.size() / 2;
  for (std::size_t i = 0; i < n_layers; ++i) {
    h = ad::add(ad::matmul(h, params_[2 * i]), params_[2 * i + 1]);
    if (i + 1 < n_layers) h = (act_ == Activation::Tanh) ? ad::tanh(h) : ad::relu(h);
  }
  return h;
}

}  // namespace mpfm
