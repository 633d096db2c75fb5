// SPDX-License-Identifier: Apache-2.0
#include "mpfm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "mpfm/error.hpp"

namespace mpfm {
namespace {

std::size_t element_count(const std::vector<std::size_t>& shape) {
  if (shape.empty()) throw InvalidInput("tensor shape must have at least one dimension");
  std::size_t n = 1;
  for (std::size_t dim : shape) {
    if (dim == 0) throw InvalidInput("tensor dimensions must be positive");
    n *= dim;
  }
  return n;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (element_count(shape_) != data_.size()) {
    throw InvalidInput("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string());
  }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, double fill) {
  return Tensor({rows, cols}, fill);
}

Tensor Tensor::scalar(double value) { return Tensor({1, 1}, value); }

Tensor Tensor::row(std::span<const double> values) {
  return Tensor({1, values.size()}, std::vector<double>(values.begin(), values.end()));
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  if (rows.size() == 0) throw InvalidInput("from_rows: no rows");
  const std::size_t cols = rows.begin()->size();
  std::vector<double> data;
  data.reserve(rows.size() * cols);
  for (const auto& r : rows) {
    if (r.size() != cols) throw InvalidInput("from_rows: ragged rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor({rows.size(), cols}, std::move(data));
}

std::size_t Tensor::rows() const {
  if (shape_.size() != 2) throw InvalidInput("expected a matrix, got shape " + shape_string());
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (shape_.size() != 2) throw InvalidInput("expected a matrix, got shape " + shape_string());
  return shape_[1];
}

std::span<const double> Tensor::row_span(std::size_t r) const {
  const std::size_t c = cols();
  return std::span<const double>(data_).subspan(r * c, c);
}

std::span<double> Tensor::row_span(std::size_t r) {
  const std::size_t c = cols();
  return std::span<double>(data_).subspan(r * c, c);
}

double Tensor::item() const {
  if (data_.size() != 1) throw InvalidInput("item() on tensor of shape " + shape_string());
  return data_[0];
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_string() const {
  std::string s = "[";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape_[i]);
  }
  return s + "]";
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const { return Tensor(std::move(shape), data_); }

}  // namespace mpfm
