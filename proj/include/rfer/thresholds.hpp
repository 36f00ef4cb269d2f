#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "rfer/tensor.hpp"

namespace rfer {

using ClassVector = std::array<double, 8>;

inline constexpr double kDefaultBeta = 0.95;
inline constexpr double kDefaultGamma = 2.718281828459045;  // e

// T^c = beta * mean{p_i : y_i = c} / (1 + gamma^-epoch). p_i is the predicted
// probability of sample i's ground-truth class. Classes with no samples keep
// last_valid[c].
ClassVector epoch_scaled_threshold(std::span<const double> gt_probs, std::span<const int> labels,
                                   int epoch, double beta, double gamma,
                                   const ClassVector& last_valid = {});

// T^c = mean{probs[n, c] : y_n = c}; absent classes keep last_valid[c].
ClassVector batch_mean_threshold(const Tensor& probs, std::span<const int> labels,
                                 const ClassVector& last_valid = {});

struct CleanNoisyPartition {
  std::vector<std::size_t> clean;  // ascending
  std::vector<std::size_t> noisy;  // ascending
};

// Sample n is clean iff probs[n, y_n] >= tau[y_n].
CleanNoisyPartition partition_clean_noisy(const Tensor& probs, std::span<const int> labels,
                                          const ClassVector& tau);

enum class ThresholdMode { epoch_scaled, batch_mean, fixed };

std::string_view threshold_mode_name(ThresholdMode mode) noexcept;
ThresholdMode parse_threshold_mode(std::string_view name);  // throws ConfigError

// Per-class threshold with carry-forward for classes missing from a window.
//
// epoch_scaled: statistics accumulate over an epoch; end_epoch() advances the
//   counter and recomputes tau for the new epoch from them.
// batch_mean: update_batch() recomputes tau from every batch. With
//   epoch_scaling the batch mean also gets the beta / (1 + gamma^-epoch) factor.
// fixed: tau never moves from the initial value.
class ThresholdState {
 public:
  ThresholdState(ThresholdMode mode, double beta = kDefaultBeta, double gamma = kDefaultGamma,
                 double initial = 0.0, bool epoch_scaling = false);

  ThresholdMode mode() const noexcept { return mode_; }
  const ClassVector& tau() const noexcept { return tau_; }
  int epoch() const noexcept { return epoch_; }
  double beta() const noexcept { return beta_; }
  double gamma() const noexcept { return gamma_; }

  void accumulate(std::span<const double> gt_probs, std::span<const int> labels);
  void end_epoch();
  void update_batch(const Tensor& probs, std::span<const int> labels);

 private:
  ThresholdMode mode_;
  double beta_, gamma_;
  bool epoch_scaling_;
  int epoch_ = 0;
  ClassVector tau_{};
  ClassVector sums_{};
  std::array<std::size_t, 8> counts_{};
};

}  // namespace rfer
