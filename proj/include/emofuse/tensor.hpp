// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace emofuse {

using Shape = std::vector<std::size_t>;

std::string shapeToString(const Shape &shape);
std::size_t shapeNumel(const Shape &shape);

/// Dense row-major array of doubles. A rank-0 tensor holds one scalar.
/// Every construction path rejects NaN and Inf.
class Tensor {
public:
  /// Empty rank-1 tensor of shape {0}; allocates nothing.
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  const Shape &shape() const noexcept {
    return shape_.empty() && data_.empty() ? emptyShape() : shape_;
  }
  std::size_t rank() const noexcept { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<const double> values() const noexcept { return data_; }
  std::span<double> values() noexcept { return data_; }
  const std::vector<double> &data() const noexcept { return data_; }
  double *raw() noexcept { return data_.data(); }
  const double *raw() const noexcept { return data_.data(); }

  double operator[](std::size_t i) const { return data_[i]; }
  double &operator[](std::size_t i) { return data_[i]; }

  double &at(std::size_t i, std::size_t j);
  double at(std::size_t i, std::size_t j) const;
  double &at(std::size_t i, std::size_t j, std::size_t k);
  double at(std::size_t i, std::size_t j, std::size_t k) const;

  double item() const;
  Tensor reshaped(Shape shape) const;
  void fill(double value);

  /// Throws NumericError naming `where` if any entry is NaN or Inf.
  void requireFinite(const char *where) const;

  bool operator==(const Tensor &other) const {
    return shape() == other.shape() && data_ == other.data_;
  }

private:
  static const Shape &emptyShape() noexcept;

  Shape shape_;
  std::vector<double> data_;
};

} // namespace emofuse
