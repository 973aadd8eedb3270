#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace contactsense {

// Dense row-major tensor of 64-bit floats. Value semantics; the shape/data
// length invariant is enforced on every constructor.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);  // zero-filled
  Tensor(std::vector<int> shape, std::vector<double> data);

  static Tensor full(std::vector<int> shape, double value);
  static Tensor scalar(double value) { return Tensor({1}, {value}); }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
  int size() const { return static_cast<int>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](int i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](int i) const { return data_[static_cast<std::size_t>(i)]; }

  // 2-d / 3-d element access (row-major).
  double& at(int i, int j) { return data_[static_cast<std::size_t>(i) * shape_[1] + j]; }
  double at(int i, int j) const { return data_[static_cast<std::size_t>(i) * shape_[1] + j]; }
  double& at(int i, int j, int k) {
    return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
  }
  double at(int i, int j, int k) const {
    return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
  }

  bool all_finite() const;
  std::string shape_string() const;  // e.g. "[40x21]"

  bool requires_grad = false;

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

int shape_size(const std::vector<int>& shape);
std::string shape_string(const std::vector<int>& shape);

}  // namespace contactsense
