#include "rfer/metrics.hpp"

#include <string>

#include "rfer/errors.hpp"

namespace rfer {

std::uint64_t ConfusionMatrix::total() const noexcept {
  std::uint64_t s = 0;
  for (const auto& row : counts)
    for (auto v : row) s += v;
  return s;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) noexcept {
  for (std::size_t t = 0; t < 8; ++t)
    for (std::size_t p = 0; p < 8; ++p) counts[t][p] += other.counts[t][p];
  return *this;
}

ConfusionMatrix confusion(std::span<const int> y_true, std::span<const int> y_pred) {
  if (y_true.size() != y_pred.size())
    throw ContractError("confusion: " + std::to_string(y_true.size()) + " truths vs " +
                        std::to_string(y_pred.size()) + " predictions");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const int t = y_true[i], p = y_pred[i];
    if (t < 0 || t >= 8 || p < 0 || p >= 8)
      throw ContractError("confusion: class out of range at index " + std::to_string(i));
    ++cm.counts[t][p];
  }
  return cm;
}

std::array<double, 8> per_class_f1(const ConfusionMatrix& cm) {
  std::array<double, 8> f1{};
  for (std::size_t c = 0; c < 8; ++c) {
    std::uint64_t row = 0, col = 0;
    for (std::size_t k = 0; k < 8; ++k) {
      row += cm.counts[c][k];
      col += cm.counts[k][c];
    }
    const double tp = static_cast<double>(cm.counts[c][c]);
    const double precision = col ? tp / static_cast<double>(col) : 0.0;
    const double recall = row ? tp / static_cast<double>(row) : 0.0;
    f1[c] = precision + recall > 0.0 ? 100.0 * 2.0 * precision * recall / (precision + recall) : 0.0;
  }
  return f1;
}

double macro_f1(const ConfusionMatrix& cm) {
  double s = 0.0;
  for (double v : per_class_f1(cm)) s += v;
  return s / 8.0;
}

double accuracy(const ConfusionMatrix& cm) {
  const auto n = cm.total();
  if (n == 0) return 0.0;
  std::uint64_t diag = 0;
  for (std::size_t c = 0; c < 8; ++c) diag += cm.counts[c][c];
  return 100.0 * static_cast<double>(diag) / static_cast<double>(n);
}

MetricsReport metrics_report(const ConfusionMatrix& cm) {
  MetricsReport r;
  r.confusion = cm;
  r.per_class_f1 = per_class_f1(cm);
  r.macro_f1 = macro_f1(cm);
  r.accuracy = accuracy(cm);
  r.n_scored = cm.total();
  return r;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json cm = nlohmann::json::array();
  for (const auto& row : confusion.counts) cm.push_back(row);
  return {{"macro_f1", macro_f1},
          {"per_class_f1", per_class_f1},
          {"accuracy", accuracy},
          {"n_scored", n_scored},
          {"confusion_matrix", cm}};
}

}  // namespace rfer
