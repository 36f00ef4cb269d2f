#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rfer/config.hpp"
#include "rfer/data.hpp"
#include "rfer/metrics.hpp"
#include "rfer/model.hpp"
#include "rfer/thresholds.hpp"

namespace rfer {

struct EpochReport {
  int epoch = 0;
  std::map<std::string, double> losses;  // per-component mean over the epoch's steps
  double train_accuracy = 0.0;           // percent, against the labels as given
  std::optional<double> val_macro_f1;
  std::optional<double> val_accuracy;
  ClassVector thresholds{};
  std::optional<double> clean_fraction;      // noise_aware
  std::optional<double> confident_fraction;  // mutex_ssl
  std::optional<std::size_t> skipped_supervised_batches;  // noise_aware
  double wall_seconds = 0.0;

  // The epoch-log line. Wall-clock time is left out so that logs of identical
  // runs are byte-identical; it goes to the separate timing log.
  nlohmann::json to_json() const;
};

struct TrainResult {
  std::unique_ptr<DualHeadModel> model;  // final parameters
  std::vector<Tensor> best_parameters;   // snapshot at best validation macro-F1
  int best_epoch = -1;                   // -1 without a validation set
  double best_val_macro_f1 = 0.0;
  std::vector<EpochReport> reports;
};

using EpochCallback = std::function<void(const EpochReport&, const DualHeadModel&)>;

// Each trainer throws ConfigError when the data cannot support it and
// NumericalError (naming epoch and step) on a non-finite loss.
TrainResult train_supervised(const TrainConfig& config, const Dataset& train,
                             const Dataset* validation = nullptr, const EpochCallback& on_epoch = {});
TrainResult train_mutex_ssl(const TrainConfig& config, const Dataset& train,
                            const Dataset* validation = nullptr, const EpochCallback& on_epoch = {});
TrainResult train_noise_aware(const TrainConfig& config, const Dataset& train,
                              const Dataset* validation = nullptr,
                              const EpochCallback& on_epoch = {});

// Dispatches on config.trainer.
TrainResult train(const TrainConfig& config, const Dataset& train,
                  const Dataset* validation = nullptr, const EpochCallback& on_epoch = {});

// Eval-mode forward over every present record with label != -1, resized to
// the model input and otherwise unaugmented. Throws DataError when there is
// nothing to score.
MetricsReport evaluate(const DualHeadModel& model, const Dataset& data);
MetricsReport evaluate(const std::filesystem::path& checkpoint, const Dataset& data);

// Argmax TPC predictions for `images` (already model-sized), eval mode.
std::vector<int> predict(const DualHeadModel& model, std::span<const Image> images);

// Copies parameter values (not gradients) between models of the same layout.
std::vector<Tensor> snapshot_parameters(const DualHeadModel& model);
void restore_parameters(DualHeadModel& model, const std::vector<Tensor>& values);

}  // namespace rfer
