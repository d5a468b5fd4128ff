#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qclass/errors.hpp"

namespace qclass {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// Dense row-major array with an optional gradient buffer of identical shape.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)), data_(numel(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), data_(std::move(values)) {
    if (data_.size() != numel(shape_)) {
      throw ShapeError("tensor data size " + std::to_string(data_.size()) + " does not match shape " +
                       shape_str(shape_));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  const std::vector<T>& vector() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const T& at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  T& at(std::size_t i, std::size_t j, std::size_t k) { return data_[(i * shape_[1] + j) * shape_[2] + k]; }
  const T& at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  bool requires_grad() const noexcept { return requires_grad_; }
  void set_requires_grad(bool on) { requires_grad_ = on; }

  bool has_grad() const noexcept { return !grad_.empty(); }
  // Allocates a zeroed gradient buffer on first use.
  std::span<T> grad() {
    if (grad_.size() != data_.size()) grad_.assign(data_.size(), T(0));
    return grad_;
  }
  std::span<const T> grad() const { return grad_; }
  void zero_grad() { std::fill(grad_.begin(), grad_.end(), T(0)); }
  void drop_grad() { grad_.clear(); grad_.shrink_to_fit(); }

  void reshape(Shape shape) {
    if (numel(shape) != data_.size()) {
      throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    shape_ = std::move(shape);
  }

  bool all_finite() const {
    for (T v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  // Same shape and data, element type converted. Gradients are not carried over.
  template <class U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

 private:
  Shape shape_;
  std::vector<T> data_;
  std::vector<T> grad_;
  bool requires_grad_ = false;
};

}  // namespace qclass
