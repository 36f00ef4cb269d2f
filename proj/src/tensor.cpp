#include "rfer/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "rfer/errors.hpp"
#include "rfer/rng.hpp"

namespace rfer {

Tensor::Tensor(std::vector<std::size_t> shape, double fill) : shape_(std::move(shape)) {
  const auto n = std::accumulate(shape_.begin(), shape_.end(), std::size_t{1},
                                 std::multiplies<>());
  data_.assign(shape_.empty() ? 0 : n, fill);
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size())
    throw ContractError("axis " + std::to_string(axis) + " out of range for shape " +
                        shape_string(shape_));
  return shape_[axis];
}

std::span<double> Tensor::row(std::size_t r) noexcept {
  const auto stride = shape_.empty() ? 0 : data_.size() / shape_[0];
  return {data_.data() + r * stride, stride};
}

std::span<const double> Tensor::row(std::size_t r) const noexcept {
  const auto stride = shape_.empty() ? 0 : data_.size() / shape_[0];
  return {data_.data() + r * stride, stride};
}

void Tensor::fill(double value) noexcept { std::fill(data_.begin(), data_.end(), value); }

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b))
    throw ContractError(std::string(what) + ": shape " + shape_string(a.shape()) +
                        " does not match " + shape_string(b.shape()));
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * 3.14159265358979323846 * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

}  // namespace rfer
