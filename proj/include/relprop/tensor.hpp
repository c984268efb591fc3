#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "relprop/error.hpp"

namespace relprop {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major array of doubles (last index fastest).
///
/// The shape is fixed at construction. Values may be written while a tensor
/// is being built; once handed to another component it is treated as a value.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)) {
    check_extents();
    data_.assign(shape_size(shape_), fill);
  }

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents();
    if (shape_size(shape_) != data_.size()) {
      throw Error(ErrorKind::Shape,
                  "tensor shape " + shape_string(shape_) + " needs " +
                      std::to_string(shape_size(shape_)) + " values, got " +
                      std::to_string(data_.size()));
    }
  }

  static Tensor vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t n = rows.size();
    const std::size_t m = n ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(n * m);
    for (const auto& row : rows) {
      if (row.size() != m) throw Error(ErrorKind::Shape, "ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({n, m}, std::move(data));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<const double> values() const noexcept { return data_; }
  std::span<double> values() noexcept { return data_; }
  const std::vector<double>& vec() const noexcept { return data_; }

  double operator[](std::size_t i) const noexcept { return data_[i]; }
  double& operator[](std::size_t i) noexcept { return data_[i]; }

  double at(std::size_t i) const { return data_[checked(i)]; }
  double& at(std::size_t i) { return data_[checked(i)]; }

  double at(std::initializer_list<std::size_t> index) const {
    return data_[offset(index)];
  }
  double& at(std::initializer_list<std::size_t> index) {
    return data_[offset(index)];
  }

  /// Same values under a new shape of equal size.
  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

  double sum() const {
    double s = 0.0;
    for (double v : data_) s += v;
    return s;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_extents() const {
    for (std::size_t e : shape_) {
      if (e == 0) {
        throw Error(ErrorKind::Shape,
                    "tensor extents must be positive, got " + shape_string(shape_));
      }
    }
  }

  std::size_t checked(std::size_t i) const {
    if (i >= data_.size()) {
      throw Error(ErrorKind::Shape, "flat index " + std::to_string(i) +
                                        " out of range for " + shape_string(shape_));
    }
    return i;
  }

  std::size_t offset(std::initializer_list<std::size_t> index) const {
    if (index.size() != shape_.size()) {
      throw Error(ErrorKind::Shape, "index rank " + std::to_string(index.size()) +
                                        " does not match " + shape_string(shape_));
    }
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (std::size_t i : index) {
      if (i >= shape_[axis]) {
        throw Error(ErrorKind::Shape, "index " + std::to_string(i) + " out of range on axis " +
                                          std::to_string(axis) + " of " + shape_string(shape_));
      }
      flat = flat * shape_[axis] + i;
      ++axis;
    }
    return flat;
  }

  Shape shape_;
  std::vector<double> data_;
};

}  // namespace relprop
