#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "rfer/augment.hpp"
#include "rfer/model.hpp"
#include "rfer/thresholds.hpp"

namespace rfer {

enum class TrainerKind { supervised, mutex_ssl, noise_aware };

std::string_view trainer_name(TrainerKind kind) noexcept;
TrainerKind parse_trainer(std::string_view name);  // throws ConfigError

struct ThresholdConfig {
  ThresholdMode mode = ThresholdMode::epoch_scaled;
  double beta = kDefaultBeta;
  double gamma = kDefaultGamma;
  std::size_t k = 4;          // top-k for the negative consistency loss
  double initial = 0.0;       // tau before any statistics exist
  bool epoch_scaling = false; // batch_mean only: apply beta / (1 + gamma^-epoch)
};

// Full description of a training run. from_json() fills every omitted key
// with its (trainer-dependent) default, so to_json() of the result is the
// complete effective configuration.
struct TrainConfig {
  TrainerKind trainer = TrainerKind::supervised;
  int epochs = 20;
  std::size_t batch_size = 64;
  double mu = 0.0;  // unlabeled-to-labeled batch ratio, mutex_ssl only
  double lr = 5e-4;
  double weight_decay = 1e-4;
  std::map<std::string, double> loss_weights{{"sup", 1.0}};
  ThresholdConfig threshold;
  AugmentPolicy augment;
  bool consistency_flip = true;  // noise_aware: mirror the strong view
  bool freeze_alpha = false;     // noise_aware: alpha fixed at 1
  int warmup_epochs = 0;         // supervised-only epochs before the unlabeled losses or the clean filter engage
  ModelConfig model;
  std::uint64_t seed = 0;

  static TrainConfig defaults(TrainerKind kind);
  static TrainConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;  // throws ConfigError
  std::string hash() const;  // FNV-1a over the canonical JSON, hex
};

TrainConfig load_config(const std::filesystem::path& path);

}  // namespace rfer
