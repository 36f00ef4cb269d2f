#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>

#include <nlohmann/json.hpp>

namespace rfer {

// counts[true][predicted]
struct ConfusionMatrix {
  std::array<std::array<std::uint64_t, 8>, 8> counts{};

  std::uint64_t total() const noexcept;
  ConfusionMatrix& operator+=(const ConfusionMatrix& other) noexcept;
  bool operator==(const ConfusionMatrix&) const = default;
};

// Throws ContractError on length mismatch or a class outside 0..7.
ConfusionMatrix confusion(std::span<const int> y_true, std::span<const int> y_pred);

// Per-class F1 as a percentage. Precision or recall with an empty denominator
// is 0, and F1 is 0 whenever precision + recall is 0, so a class with no
// support and no predictions scores 0 rather than being skipped.
std::array<double, 8> per_class_f1(const ConfusionMatrix& cm);

// Unweighted mean of per_class_f1 over all 8 classes, in [0, 100].
double macro_f1(const ConfusionMatrix& cm);

// Percentage of samples on the diagonal; 0 for an empty matrix.
double accuracy(const ConfusionMatrix& cm);

struct MetricsReport {
  double macro_f1 = 0.0;
  std::array<double, 8> per_class_f1{};
  double accuracy = 0.0;
  ConfusionMatrix confusion;
  std::size_t n_scored = 0;

  nlohmann::json to_json() const;
};

MetricsReport metrics_report(const ConfusionMatrix& cm);

}  // namespace rfer
