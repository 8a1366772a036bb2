#include "tgcn/tensor.hpp"

#include <sstream>

namespace tgcn {

std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int e : shape) n *= static_cast<std::size_t>(e);
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

std::size_t Tensor::checked_numel(const std::vector<int>& shape) {
  for (int e : shape)
    if (e <= 0)
      throw ShapeError("non-positive extent in shape " + shape_str(shape));
  return shape_numel(shape);
}

std::size_t Tensor::flat_index(std::initializer_list<int> idx) const {
  if (idx.size() != shape_.size())
    throw ShapeError("index rank " + std::to_string(idx.size()) +
                     " does not match tensor rank " +
                     std::to_string(shape_.size()));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (int i : idx) {
    const int extent = shape_[axis];
    if (i < 0 || i >= extent)
      throw ShapeError("index " + std::to_string(i) + " out of range for axis " +
                       std::to_string(axis) + " of " + shape_str(shape_));
    flat = flat * static_cast<std::size_t>(extent) + static_cast<std::size_t>(i);
    ++axis;
  }
  return flat;
}

}  // namespace tgcn
