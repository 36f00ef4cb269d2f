#include "rfer/thresholds.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <vector>
#include <string>

#include "rfer/errors.hpp"

namespace rfer {
namespace {

void check_labels(std::span<const int> labels, std::size_t n) {
  if (labels.size() != n)
    throw ContractError("label count " + std::to_string(labels.size()) + " != " +
                        std::to_string(n));
  for (int y : labels)
    if (y < 0 || y >= 8) throw ContractError("label " + std::to_string(y) + " out of range");
}

// Per-class mean of the values, summed in ascending order so the result does
// not depend on sample order. Classes without samples yield nullopt.
std::array<std::optional<double>, 8> class_means(std::span<const int> labels,
                                                 const std::function<double(std::size_t)>& value) {
  std::array<std::vector<double>, 8> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(value(i));
  std::array<std::optional<double>, 8> means;
  for (std::size_t c = 0; c < 8; ++c) {
    auto& v = by_class[c];
    if (v.empty()) continue;
    std::sort(v.begin(), v.end());
    double sum = 0.0;
    for (double x : v) sum += x;
    means[c] = sum / static_cast<double>(v.size());
  }
  return means;
}

double epoch_factor(double beta, double gamma, int epoch) {
  return beta / (1.0 + std::pow(gamma, -static_cast<double>(epoch)));
}

}  // namespace

ClassVector epoch_scaled_threshold(std::span<const double> gt_probs, std::span<const int> labels,
                                   int epoch, double beta, double gamma,
                                   const ClassVector& last_valid) {
  check_labels(labels, gt_probs.size());
  const auto means = class_means(labels, [&](std::size_t i) { return gt_probs[i]; });
  ClassVector tau = last_valid;
  for (std::size_t c = 0; c < 8; ++c)
    if (means[c]) tau[c] = beta * *means[c] / (1.0 + std::pow(gamma, -static_cast<double>(epoch)));
  return tau;
}

ClassVector batch_mean_threshold(const Tensor& probs, std::span<const int> labels,
                                 const ClassVector& last_valid) {
  if (probs.rank() != 2 || probs.dim(1) != 8)
    throw ContractError("probs must be N x 8, got " + shape_string(probs.shape()));
  check_labels(labels, probs.dim(0));
  const auto means = class_means(labels, [&](std::size_t i) { return probs.at(i, labels[i]); });
  ClassVector tau = last_valid;
  for (std::size_t c = 0; c < 8; ++c)
    if (means[c]) tau[c] = *means[c];
  return tau;
}

CleanNoisyPartition partition_clean_noisy(const Tensor& probs, std::span<const int> labels,
                                          const ClassVector& tau) {
  if (probs.rank() != 2 || probs.dim(1) != 8)
    throw ContractError("probs must be N x 8, got " + shape_string(probs.shape()));
  check_labels(labels, probs.dim(0));
  CleanNoisyPartition p;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    (probs.at(i, y) >= tau[y] ? p.clean : p.noisy).push_back(i);
  }
  return p;
}

std::string_view threshold_mode_name(ThresholdMode mode) noexcept {
  switch (mode) {
    case ThresholdMode::epoch_scaled: return "epoch_scaled";
    case ThresholdMode::batch_mean: return "batch_mean";
    case ThresholdMode::fixed: return "fixed";
  }
  return "?";
}

ThresholdMode parse_threshold_mode(std::string_view name) {
  if (name == "epoch_scaled") return ThresholdMode::epoch_scaled;
  if (name == "batch_mean") return ThresholdMode::batch_mean;
  if (name == "fixed") return ThresholdMode::fixed;
  throw ConfigError("unknown threshold mode '" + std::string(name) + "'");
}

ThresholdState::ThresholdState(ThresholdMode mode, double beta, double gamma, double initial,
                               bool epoch_scaling)
    : mode_(mode), beta_(beta), gamma_(gamma), epoch_scaling_(epoch_scaling) {
  if (!(initial >= 0.0 && initial <= 1.0)) throw ConfigError("initial threshold must be in [0, 1]");
  if (!(gamma > 1.0)) throw ConfigError("gamma must exceed 1");
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("beta must be in [0, 1]");
  tau_.fill(initial);
}

void ThresholdState::accumulate(std::span<const double> gt_probs, std::span<const int> labels) {
  if (mode_ != ThresholdMode::epoch_scaled) return;
  check_labels(labels, gt_probs.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    sums_[labels[i]] += gt_probs[i];
    ++counts_[labels[i]];
  }
}

void ThresholdState::end_epoch() {
  ++epoch_;
  if (mode_ == ThresholdMode::epoch_scaled) {
    for (std::size_t c = 0; c < 8; ++c)
      if (counts_[c] > 0)
        tau_[c] = beta_ * (sums_[c] / static_cast<double>(counts_[c])) /
                  (1.0 + std::pow(gamma_, -static_cast<double>(epoch_)));
  }
  sums_.fill(0.0);
  counts_.fill(0);
}

void ThresholdState::update_batch(const Tensor& probs, std::span<const int> labels) {
  if (mode_ != ThresholdMode::batch_mean) return;
  const ClassVector unscaled = batch_mean_threshold(probs, labels, tau_);
  if (!epoch_scaling_) {
    tau_ = unscaled;
    return;
  }
  // Scale only the classes present in this batch; absent ones carry forward.
  std::array<bool, 8> present{};
  for (int y : labels) present[y] = true;
  const double f = epoch_factor(beta_, gamma_, epoch_);
  for (std::size_t c = 0; c < 8; ++c)
    if (present[c]) tau_[c] = unscaled[c] * f;
}

}  // namespace rfer
