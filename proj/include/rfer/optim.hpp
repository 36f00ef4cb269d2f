#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "rfer/model.hpp"

namespace rfer {

struct AdamOptions {
  double lr = 5e-4;
  double weight_decay = 1e-4;  // L2: lambda * theta is added to the gradient
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam. State is keyed by position in the parameter list, so
// the same list (same order) must be passed to every step.
class Adam {
 public:
  explicit Adam(AdamOptions options) : options_(options) {}

  // Throws NumericalError naming the parameter if any gradient is non-finite;
  // in that case nothing is updated.
  void step(std::span<Parameter* const> parameters);

  std::size_t steps() const noexcept { return t_; }
  const AdamOptions& options() const noexcept { return options_; }

 private:
  AdamOptions options_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace rfer
