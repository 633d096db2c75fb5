// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace mpfm {

/// Dense row-major array of doubles. Most operations in the library work on
/// rank-2 tensors (matrices); a scalar is a 1x1 matrix.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  static Tensor scalar(double value);
  static Tensor row(std::span<const double> values);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  /// Matrix view of the shape; throws unless rank is 2.
  std::size_t rows() const;
  std::size_t cols() const;

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<const double> row_span(std::size_t r) const;
  std::span<double> row_span(std::size_t r);

  /// Scalar value of a one-element tensor.
  double item() const;

  bool all_finite() const noexcept;
  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }
  std::string shape_string() const;

  void fill(double value);
  Tensor reshaped(std::vector<std::size_t> shape) const;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

}  // namespace mpfm
