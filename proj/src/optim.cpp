#include "rfer/optim.hpp"

#include <cmath>

#include "rfer/errors.hpp"

namespace rfer {

void Adam::step(std::span<Parameter* const> parameters) {
  for (const auto* p : parameters)
    for (double g : p->grad.values())
      if (!std::isfinite(g)) throw NumericalError("non-finite gradient in parameter " + p->name);

  if (m_.empty()) {
    for (const auto* p : parameters) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }
  if (m_.size() != parameters.size()) throw ContractError("Adam parameter list changed size");

  ++t_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < parameters.size(); ++i) {
    Parameter& p = *parameters[i];
    if (!m_[i].same_shape(p.value)) throw ContractError("Adam state shape mismatch for " + p.name);
    double* theta = p.value.data();
    const double* grad = p.grad.data();
    double* m = m_[i].data();
    double* v = v_[i].data();
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double g = grad[j] + options_.weight_decay * theta[j];
      m[j] = b1 * m[j] + (1.0 - b1) * g;
      v[j] = b2 * v[j] + (1.0 - b2) * g * g;
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      theta[j] -= options_.lr * m_hat / (std::sqrt(v_hat) + options_.eps);
    }
  }
}

}  // namespace rfer
