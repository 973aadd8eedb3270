#include "contactsense/tensor.hpp"

#include <cmath>

#include "contactsense/errors.hpp"

namespace contactsense {

int shape_size(const std::vector<int>& shape) {
  int n = 1;
  for (int d : shape) {
    if (d <= 0) throw NumericError("tensor dimensions must be positive, got " + shape_string(shape));
    n *= d;
  }
  return n;
}

std::string shape_string(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(std::vector<int> shape)
    : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_size(shape_)), 0.0) {}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (static_cast<std::size_t>(shape_size(shape_)) != data_.size())
    throw NumericError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
}

Tensor Tensor::full(std::vector<int> shape, double value) {
  Tensor t(std::move(shape));
  for (double& x : t.data_) x = value;
  return t;
}

bool Tensor::all_finite() const {
  for (double x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

std::string Tensor::shape_string() const { return contactsense::shape_string(shape_); }

}  // namespace contactsense
