#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "rfer/tensor.hpp"

namespace rfer {

struct LossValue {
  double value = 0.0;
  std::size_t n_contributing = 0;  // samples that passed the loss's mask
};

// Value plus dLoss/dInput for the tensor the loss differentiates through
// (pre-softmax logits for the probability losses).
struct LossResult {
  LossValue loss;
  Tensor grad;
};

// log() arguments are floored at this value; each use of the floor is counted.
inline constexpr double kProbFloor = 1e-12;
std::size_t clamp_events() noexcept;
void reset_clamp_events() noexcept;

// Row-wise numerically stable softmax. The model and the losses share this
// routine so that identical logits give bit-identical probabilities.
Tensor softmax_rows(const Tensor& logits);

// Lowest index wins ties.
std::size_t argmax_row(std::span<const double> row) noexcept;
std::size_t argmin_row(std::span<const double> row) noexcept;

// Mean over samples of -log probs[n, label_n]. grad is w.r.t. the logits that
// produced probs: (probs - onehot) / N.
LossResult cross_entropy(const Tensor& probs, std::span<const int> labels);

struct WeightedCeResult {
  LossValue loss;
  Tensor grad_logits;  // N x 8 (rows outside `include` are zero)
  Tensor grad_alpha;   // N
};

// Importance-weighted cross-entropy: softmax(alpha_n * z_n) against y_n,
// averaged over the included rows. An empty `include` means all rows.
WeightedCeResult weighted_cross_entropy(const Tensor& logits, std::span<const double> alpha,
                                        std::span<const int> labels,
                                        std::span<const std::uint8_t> include = {});

struct WeightedCeFeatureResult {
  LossValue loss;
  Tensor grad_features;  // N x d
  Tensor grad_weights;   // 8 x d
  Tensor grad_alpha;     // N
};

// Same loss with bias-free logits z_n = W x_n formed from pooled features.
WeightedCeFeatureResult weighted_cross_entropy(const Tensor& pooled_features,
                                               const Tensor& head_weights,
                                               std::span<const double> alpha,
                                               std::span<const int> labels);

// confident[n] = 1 iff max(tpc_weak[n]) >= tau[argmax(tpc_weak[n])].
std::vector<std::uint8_t> confident_mask(const Tensor& tpc_weak, std::span<const double> tau);

struct TopKMask {
  std::vector<std::uint8_t> g;  // N x 8, row-major
  std::size_t k = 0;
};
// Selects the k largest entries per row; among equal values the lower class
// index is taken first.
TopKMask top_k_mask(const Tensor& probs, std::size_t k);

// Pseudo-label loss on confident unlabeled samples, normalised by the full
// unlabeled batch size. grad is w.r.t. the strong-view TPC logits; the
// pseudo-labels are treated as constants.
LossResult pseudo_label_loss(const Tensor& tpc_weak, const Tensor& tpc_strong,
                             std::span<const double> tau);

// Negative consistency loss on low-confidence samples over the top-k TNC
// classes, normalised by the full unlabeled batch size. grad is w.r.t. the
// strong-view TNC logits; the weak TNC probabilities act as fixed weights.
LossResult negative_consistency_loss(const Tensor& tpc_weak, const Tensor& tnc_weak,
                                     const Tensor& tnc_strong, std::span<const double> tau,
                                     std::size_t k);

// TNC on the weak view is trained toward the TPC's least likely class, for
// low-confidence samples only; mean over those samples. grad is w.r.t. the
// weak-view TNC logits.
LossResult separation_loss(const Tensor& tnc_weak, const Tensor& tpc_weak,
                           std::span<const double> tau);

struct PairLossResult {
  LossValue loss;
  Tensor grad_a;
  Tensor grad_b;
};

// Mean squared difference over every element. Throws ContractError on shape
// mismatch.
PairLossResult attention_consistency_loss(const Tensor& am_weak, const Tensor& am_strong_aligned);

// Component names understood by total_loss and the trainers.
inline const std::vector<std::string>& loss_component_names() {
  static const std::vector<std::string> names{"sup", "pseudo", "neg", "sep", "consistency"};
  return names;
}

// sum_i weights[name_i] * components[name_i].value. Throws ConfigError for a
// name outside loss_component_names(), a component without a weight, or a
// negative weight.
double total_loss(const std::map<std::string, LossValue>& components,
                  const std::map<std::string, double>& weights);

}  // namespace rfer
