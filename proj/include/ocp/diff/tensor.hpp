#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ocp::diff {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
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

/// Dense row-major array of doubles. Rank 0 is a scalar.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
    check_dims();
  }

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_dims();
    if (data_.size() != shape_size(shape_)) {
      throw std::invalid_argument("tensor: " + std::to_string(data_.size()) +
                                  " elements do not fill shape " + shape_string(shape_));
    }
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

  static Tensor row(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor(Shape{1, n}, std::move(values));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& values() & { return data_; }
  const std::vector<double>& values() const& { return data_; }
  std::vector<double> values() && { return std::move(data_); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double item() const {
    if (data_.size() != 1) {
      throw std::logic_error("tensor: item() on shape " + shape_string(shape_));
    }
    return data_[0];
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
      throw std::invalid_argument("tensor: cannot reshape " + shape_string(shape_) + " to " +
                                  shape_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_dims() const {
    for (auto d : shape_) {
      if (d == 0) throw std::invalid_argument("tensor: zero-sized dimension in " + shape_string(shape_));
    }
  }

  Shape shape_;
  std::vector<double> data_;
};

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace ocp::diff
