#include "rfer/losses.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>

#include "rfer/errors.hpp"

namespace rfer {
namespace {

std::atomic<std::size_t> g_clamp_events{0};

double safe_log(double p) noexcept {
  if (p < kProbFloor) {
    g_clamp_events.fetch_add(1, std::memory_order_relaxed);
    return std::log(kProbFloor);
  }
  return std::log(p);
}

void require_prob_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2 || t.dim(1) == 0)
    throw ContractError(std::string(what) + " must be N x C, got " + shape_string(t.shape()));
}

void require_labels(std::span<const int> labels, std::size_t n, std::size_t classes) {
  if (labels.size() != n)
    throw ContractError("label count " + std::to_string(labels.size()) + " != batch size " +
                        std::to_string(n));
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= classes)
      throw ContractError("label " + std::to_string(y) + " out of range");
}

void require_tau(std::span<const double> tau, std::size_t classes) {
  if (tau.size() != classes)
    throw ContractError("threshold vector has " + std::to_string(tau.size()) + " entries, need " +
                        std::to_string(classes));
}

}  // namespace

std::size_t clamp_events() noexcept { return g_clamp_events.load(std::memory_order_relaxed); }
void reset_clamp_events() noexcept { g_clamp_events.store(0, std::memory_order_relaxed); }

Tensor softmax_rows(const Tensor& logits) {
  Tensor probs(logits.shape());
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = logits.at(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits.at(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += probs.at(i, j) = std::exp(logits.at(i, j) - mx);
    for (std::size_t j = 0; j < c; ++j) probs.at(i, j) /= s;
  }
  return probs;
}

std::size_t argmax_row(std::span<const double> row) noexcept {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

std::size_t argmin_row(std::span<const double> row) noexcept {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j)
    if (row[j] < row[best]) best = j;
  return best;
}

LossResult cross_entropy(const Tensor& probs, std::span<const int> labels) {
  require_prob_matrix(probs, "cross_entropy probs");
  const std::size_t n = probs.dim(0), c = probs.dim(1);
  require_labels(labels, n, c);
  LossResult r;
  r.grad = Tensor(probs.shape());
  if (n == 0) return r;
  const double count = static_cast<double>(n);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    sum += -safe_log(probs.at(i, y));
    for (std::size_t j = 0; j < c; ++j)
      r.grad.at(i, j) = (probs.at(i, j) - (j == y ? 1.0 : 0.0)) / count;
  }
  r.loss = {sum / count, n};
  return r;
}

WeightedCeResult weighted_cross_entropy(const Tensor& logits, std::span<const double> alpha,
                                        std::span<const int> labels,
                                        std::span<const std::uint8_t> include) {
  require_prob_matrix(logits, "weighted_cross_entropy logits");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  require_labels(labels, n, c);
  if (alpha.size() != n) throw ContractError("alpha must have one entry per sample");
  if (!include.empty() && include.size() != n)
    throw ContractError("include mask must have one entry per sample");

  WeightedCeResult r;
  r.grad_logits = Tensor({n, c});
  r.grad_alpha = Tensor({n});
  std::size_t used = 0;
  for (std::size_t i = 0; i < n; ++i) used += include.empty() || include[i] ? 1 : 0;
  if (used == 0) return r;

  Tensor scaled({n, c});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) scaled.at(i, j) = alpha[i] * logits.at(i, j);
  const Tensor probs = softmax_rows(scaled);

  const double count = static_cast<double>(used);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(include.empty() || include[i])) continue;
    const auto y = static_cast<std::size_t>(labels[i]);
    sum += -safe_log(probs.at(i, y));
    double da = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double d = probs.at(i, j) - (j == y ? 1.0 : 0.0);
      r.grad_logits.at(i, j) = alpha[i] * d / count;
      da += logits.at(i, j) * d;
    }
    r.grad_alpha[i] = da / count;
  }
  r.loss = {sum / count, used};
  return r;
}

WeightedCeFeatureResult weighted_cross_entropy(const Tensor& pooled_features,
                                               const Tensor& head_weights,
                                               std::span<const double> alpha,
                                               std::span<const int> labels) {
  if (pooled_features.rank() != 2 || head_weights.rank() != 2 ||
      pooled_features.dim(1) != head_weights.dim(1))
    throw ContractError("weighted_cross_entropy: features " +
                        shape_string(pooled_features.shape()) + " vs weights " +
                        shape_string(head_weights.shape()));
  const std::size_t n = pooled_features.dim(0), d = pooled_features.dim(1);
  const std::size_t c = head_weights.dim(0);
  Tensor logits({n, c});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += head_weights.at(j, k) * pooled_features.at(i, k);
      logits.at(i, j) = s;
    }
  auto inner = weighted_cross_entropy(logits, alpha, labels);
  WeightedCeFeatureResult r;
  r.loss = inner.loss;
  r.grad_alpha = std::move(inner.grad_alpha);
  r.grad_features = Tensor({n, d});
  r.grad_weights = Tensor({c, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      const double g = inner.grad_logits.at(i, j);
      for (std::size_t k = 0; k < d; ++k) {
        r.grad_weights.at(j, k) += g * pooled_features.at(i, k);
        r.grad_features.at(i, k) += g * head_weights.at(j, k);
      }
    }
  return r;
}

std::vector<std::uint8_t> confident_mask(const Tensor& tpc_weak, std::span<const double> tau) {
  require_prob_matrix(tpc_weak, "tpc_weak");
  require_tau(tau, tpc_weak.dim(1));
  std::vector<std::uint8_t> mask(tpc_weak.dim(0));
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const auto row = tpc_weak.row(i);
    const auto top = argmax_row(row);
    mask[i] = row[top] >= tau[top] ? 1 : 0;
  }
  return mask;
}

TopKMask top_k_mask(const Tensor& probs, std::size_t k) {
  require_prob_matrix(probs, "top-k probs");
  const std::size_t n = probs.dim(0), c = probs.dim(1);
  if (k < 1 || k > c) throw ContractError("k must be in [1, " + std::to_string(c) + "]");
  TopKMask m;
  m.k = k;
  m.g.assign(n * c, 0);
  std::vector<std::size_t> order(c);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = probs.row(i);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
    for (std::size_t j = 0; j < k; ++j) m.g[i * c + order[j]] = 1;
  }
  return m;
}

LossResult pseudo_label_loss(const Tensor& tpc_weak, const Tensor& tpc_strong,
                             std::span<const double> tau) {
  require_same_shape(tpc_weak, tpc_strong, "pseudo_label_loss");
  const auto mask = confident_mask(tpc_weak, tau);
  const std::size_t n = tpc_weak.dim(0), c = tpc_weak.dim(1);
  LossResult r;
  r.grad = Tensor(tpc_strong.shape());
  if (n == 0) return r;
  const double mu_b = static_cast<double>(n);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    ++r.loss.n_contributing;
    const auto target = argmax_row(tpc_weak.row(i));
    sum += -safe_log(tpc_strong.at(i, target));
    for (std::size_t j = 0; j < c; ++j)
      r.grad.at(i, j) = (tpc_strong.at(i, j) - (j == target ? 1.0 : 0.0)) / mu_b;
  }
  r.loss.value = sum / mu_b;
  return r;
}

LossResult negative_consistency_loss(const Tensor& tpc_weak, const Tensor& tnc_weak,
                                     const Tensor& tnc_strong, std::span<const double> tau,
                                     std::size_t k) {
  require_same_shape(tpc_weak, tnc_weak, "negative_consistency_loss");
  require_same_shape(tnc_weak, tnc_strong, "negative_consistency_loss");
  const auto confident = confident_mask(tpc_weak, tau);
  const auto topk = top_k_mask(tnc_weak, k);
  const std::size_t n = tnc_weak.dim(0), c = tnc_weak.dim(1);
  LossResult r;
  r.grad = Tensor(tnc_strong.shape());
  if (n == 0) return r;
  const double mu_b = static_cast<double>(n);
  const double inv_k = 1.0 / static_cast<double>(k);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (confident[i]) continue;
    ++r.loss.n_contributing;
    double weight_sum = 0.0, row = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      if (!topk.g[i * c + j]) continue;
      const double w = tnc_weak.at(i, j) * inv_k;
      weight_sum += w;
      row += -w * safe_log(tnc_strong.at(i, j));
    }
    sum += row;
    for (std::size_t j = 0; j < c; ++j) {
      const double w = topk.g[i * c + j] ? tnc_weak.at(i, j) * inv_k : 0.0;
      r.grad.at(i, j) = (weight_sum * tnc_strong.at(i, j) - w) / mu_b;
    }
  }
  r.loss.value = sum / mu_b;
  return r;
}

LossResult separation_loss(const Tensor& tnc_weak, const Tensor& tpc_weak,
                           std::span<const double> tau) {
  require_same_shape(tnc_weak, tpc_weak, "separation_loss");
  const auto confident = confident_mask(tpc_weak, tau);
  const std::size_t n = tnc_weak.dim(0), c = tnc_weak.dim(1);
  LossResult r;
  r.grad = Tensor(tnc_weak.shape());
  std::size_t used = 0;
  for (auto m : confident) used += m ? 0 : 1;
  if (used == 0) return r;
  const double count = static_cast<double>(used);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (confident[i]) continue;
    const auto target = argmin_row(tpc_weak.row(i));
    sum += -safe_log(tnc_weak.at(i, target));
    for (std::size_t j = 0; j < c; ++j)
      r.grad.at(i, j) = (tnc_weak.at(i, j) - (j == target ? 1.0 : 0.0)) / count;
  }
  r.loss = {sum / count, used};
  return r;
}

PairLossResult attention_consistency_loss(const Tensor& am_weak, const Tensor& am_strong_aligned) {
  require_same_shape(am_weak, am_strong_aligned, "attention_consistency_loss");
  PairLossResult r;
  r.grad_a = Tensor(am_weak.shape());
  r.grad_b = Tensor(am_weak.shape());
  const std::size_t m = am_weak.size();
  if (m == 0) return r;
  const double count = static_cast<double>(m);
  double sum = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double d = am_weak[i] - am_strong_aligned[i];
    sum += d * d;
    r.grad_a[i] = 2.0 * d / count;
    r.grad_b[i] = -2.0 * d / count;
  }
  r.loss = {sum / count, am_weak.rank() > 0 ? am_weak.dim(0) : 0};
  return r;
}

double total_loss(const std::map<std::string, LossValue>& components,
                  const std::map<std::string, double>& weights) {
  const auto& known = loss_component_names();
  auto is_known = [&](const std::string& name) {
    return std::find(known.begin(), known.end(), name) != known.end();
  };
  for (const auto& [name, w] : weights) {
    if (!is_known(name)) throw ConfigError("unknown loss component '" + name + "'");
    if (!(w >= 0.0)) throw ConfigError("loss weight for '" + name + "' must be non-negative");
  }
  double total = 0.0;
  for (const auto& [name, value] : components) {
    if (!is_known(name)) throw ConfigError("unknown loss component '" + name + "'");
    const auto it = weights.find(name);
    if (it == weights.end()) throw ConfigError("no weight given for loss component '" + name + "'");
    total += it->second * value.value;
  }
  return total;
}

}  // namespace rfer
