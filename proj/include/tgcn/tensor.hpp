#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "tgcn/errors.hpp"

namespace tgcn {

std::size_t shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

// Dense row-major n-dimensional array of doubles. Plain value type; all
// graph/tape bookkeeping lives elsewhere.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape)
      : shape_(std::move(shape)), data_(checked_numel(shape_), 0.0) {}

  Tensor(std::vector<int> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != checked_numel(shape_))
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
  }

  static Tensor full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    for (double& x : t.data_) x = v;
    return t;
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int extent(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty() && shape_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double at(std::initializer_list<int> idx) const {
    return data_[flat_index(idx)];
  }
  double& at(std::initializer_list<int> idx) { return data_[flat_index(idx)]; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  std::size_t flat_index(std::initializer_list<int> idx) const;

 private:
  static std::size_t checked_numel(const std::vector<int>& shape);

  std::vector<int> shape_;
  std::vector<double> data_;
};

}  // namespace tgcn
