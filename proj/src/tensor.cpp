#include "ddlab/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace ddlab {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw std::invalid_argument("tensor: shape " + shape_str(shape_) + " does not match " +
                                std::to_string(data_.size()) + " values");
  }
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw std::invalid_argument("tensor: item() on tensor of shape " + shape_str(shape_));
  }
  return data_[0];
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw std::invalid_argument("tensor: cannot reshape " + shape_str(shape_) + " to " +
                                shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double v) {
  for (auto& x : data_) x = v;
}

std::span<double> Tensor::row(std::size_t r) {
  const auto n = last_dim();
  return std::span<double>(data_).subspan(r * n, n);
}

std::span<const double> Tensor::row(std::size_t r) const {
  const auto n = last_dim();
  return std::span<const double>(data_).subspan(r * n, n);
}

}  // namespace ddlab
