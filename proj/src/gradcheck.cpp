#include <algorithm>
#include <cmath>
#include <set>
#include <utility>

#include "rfer/errors.hpp"
#include "rfer/model.hpp"
#include "rfer/rng.hpp"

namespace rfer {

GradCheckReport numerical_gradient_check(const std::function<double()>& loss_fn,
                                         std::span<Parameter* const> parameters,
                                         const GradCheckOptions& options) {
  struct Probe {
    Parameter* param;
    std::size_t index;
  };
  std::vector<Probe> probes;
  std::size_t total = 0;
  for (auto* p : parameters) total += p->value.size();
  if (total == 0) throw ContractError("gradient check needs at least one parameter");

  // Distinct entries: one per tensor first, then uniform over the rest.
  Rng rng(options.seed);
  std::set<std::pair<const Parameter*, std::size_t>> taken;
  auto add = [&](Parameter* p, std::size_t index) {
    if (taken.emplace(p, index).second) probes.push_back({p, index});
  };
  for (auto* p : parameters)
    if (p->value.size() > 0) add(p, static_cast<std::size_t>(rng.below(p->value.size())));
  const std::size_t target = std::min(std::max(options.samples, probes.size()), total);
  while (probes.size() < target) {
    auto flat = rng.below(total);
    for (auto* p : parameters) {
      if (flat < p->value.size()) {
        add(p, static_cast<std::size_t>(flat));
        break;
      }
      flat -= p->value.size();
    }
  }

  auto eval = [&] {
    const double f = loss_fn();
    if (!std::isfinite(f)) throw NumericalError("loss is not finite during gradient check");
    return f;
  };

  GradCheckReport report;
  for (const auto& probe : probes) {
    double& x = probe.param->value[probe.index];
    const double saved = x;
    x = saved + options.epsilon;
    const double f_plus = eval();
    x = saved - options.epsilon;
    const double f_minus = eval();
    x = saved;
    const double numeric = (f_plus - f_minus) / (2.0 * options.epsilon);
    const double analytic = probe.param->grad[probe.index];
    const double denom = std::max({std::abs(analytic), std::abs(numeric), options.abs_floor});
    const double rel = std::abs(analytic - numeric) / denom;
    ++report.checked;
    if (rel >= report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_parameter = probe.param->name;
      report.worst_index = probe.index;
      report.worst_analytic = analytic;
      report.worst_numeric = numeric;
    }
  }
  report.passed = report.max_rel_error < options.tolerance;
  return report;
}

}  // namespace rfer
