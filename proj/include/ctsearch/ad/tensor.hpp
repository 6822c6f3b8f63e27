#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ctsearch/common.hpp"

namespace ctsearch::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

/// Dense row-major tensor of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
    if (data_.size() != shape_size(shape_)) {
      throw Error("tensor of shape " + shape_string(shape_) + " given " + std::to_string(data_.size()) +
                  " values");
    }
  }

  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  /// Last-axis length; rows() * cols() == size().
  std::size_t cols() const { return shape_.empty() ? 1 : shape_.back(); }
  std::size_t rows() const { return cols() == 0 ? 0 : size() / cols(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  void reshape(Shape s) {
    if (shape_size(s) != data_.size()) {
      throw Error("cannot reshape " + shape_string(shape_) + " to " + shape_string(s));
    }
    shape_ = std::move(s);
  }
  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// A named trainable tensor. Gradients are kept outside, in Gradients.
struct Parameter {
  std::string name;
  Tensor value;
};

}  // namespace ctsearch::ad
