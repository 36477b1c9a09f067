// SPDX-License-Identifier: Apache-2.0
#include "emofuse/tensor.hpp"

#include <cmath>

#include "emofuse/error.hpp"

namespace emofuse {

std::string shapeToString(const Shape &shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i)
      s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::size_t shapeNumel(const Shape &shape) {
  std::size_t n = 1;
  for (auto d : shape)
    n *= d;
  return n;
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shapeNumel(shape_), fill) {
  if (!std::isfinite(fill))
    throw NumericError("tensor fill value is not finite");
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (shapeNumel(shape_) != data_.size())
    throw ShapeError("tensor shape " + shapeToString(shape_) + " needs " +
                     std::to_string(shapeNumel(shape_)) + " values, got " +
                     std::to_string(data_.size()));
  requireFinite("tensor creation");
}

const Shape &Tensor::emptyShape() noexcept {
  static const Shape kEmpty{0};
  return kEmpty;
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, {value}); }

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor(Shape{values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(
    std::initializer_list<std::initializer_list<double>> rows) {
  std::size_t cols = rows.size() ? rows.begin()->size() : 0;
  std::vector<double> v;
  v.reserve(rows.size() * cols);
  for (const auto &r : rows) {
    if (r.size() != cols)
      throw ShapeError("ragged matrix literal");
    v.insert(v.end(), r.begin(), r.end());
  }
  return Tensor(Shape{rows.size(), cols}, std::move(v));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank())
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                     shapeToString(shape()));
  return shape()[axis];
}

double &Tensor::at(std::size_t i, std::size_t j) {
  return data_[i * shape_[1] + j];
}
double Tensor::at(std::size_t i, std::size_t j) const {
  return data_[i * shape_[1] + j];
}
double &Tensor::at(std::size_t i, std::size_t j, std::size_t k) {
  return data_[(i * shape_[1] + j) * shape_[2] + k];
}
double Tensor::at(std::size_t i, std::size_t j, std::size_t k) const {
  return data_[(i * shape_[1] + j) * shape_[2] + k];
}

double Tensor::item() const {
  if (data_.size() != 1)
    throw ShapeError("item() on tensor of shape " + shapeToString(shape()));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shapeNumel(shape) != data_.size())
    throw ShapeError("cannot reshape " + shapeToString(this->shape()) + " to " +
                     shapeToString(shape));
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = data_;
  return t;
}

void Tensor::fill(double value) {
  if (!std::isfinite(value))
    throw NumericError("tensor fill value is not finite");
  for (auto &x : data_)
    x = value;
}

void Tensor::requireFinite(const char *where) const {
  for (std::size_t i = 0; i < data_.size(); ++i)
    if (!std::isfinite(data_[i]))
      throw NumericError(std::string("non-finite value at flat index ") +
                         std::to_string(i) + " in " + where);
}

} // namespace emofuse
