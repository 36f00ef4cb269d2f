#include "rfer/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

#include "rfer/errors.hpp"
#include "rfer/losses.hpp"

namespace rfer {
namespace {

using nlohmann::json;

std::vector<std::string> components_for(TrainerKind kind) {
  switch (kind) {
    case TrainerKind::supervised: return {"sup"};
    case TrainerKind::mutex_ssl: return {"sup", "pseudo", "neg", "sep"};
    case TrainerKind::noise_aware: return {"sup", "consistency"};
  }
  return {};
}

void reject_unknown_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& item : j.items())
    if (!allowed.count(item.key()))
      throw ConfigError("unknown key '" + item.key() + "' in " + where);
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("bad value for '" + std::string(key) + "': " + j.at(key).dump());
  }
}

}  // namespace

std::string_view trainer_name(TrainerKind kind) noexcept {
  switch (kind) {
    case TrainerKind::supervised: return "supervised";
    case TrainerKind::mutex_ssl: return "mutex_ssl";
    case TrainerKind::noise_aware: return "noise_aware";
  }
  return "?";
}

TrainerKind parse_trainer(std::string_view name) {
  if (name == "supervised") return TrainerKind::supervised;
  if (name == "mutex_ssl") return TrainerKind::mutex_ssl;
  if (name == "noise_aware") return TrainerKind::noise_aware;
  throw ConfigError("unknown trainer '" + std::string(name) + "'");
}

TrainConfig TrainConfig::defaults(TrainerKind kind) {
  TrainConfig c;
  c.trainer = kind;
  c.loss_weights.clear();
  for (const auto& name : components_for(kind)) c.loss_weights[name] = 1.0;
  switch (kind) {
    case TrainerKind::supervised:
      c.lr = 5e-4;
      break;
    case TrainerKind::mutex_ssl:
      c.lr = 5e-4;
      c.mu = 2.0;
      break;
    case TrainerKind::noise_aware:
      c.lr = 1e-4;
      c.threshold.mode = ThresholdMode::batch_mean;
      break;
  }
  return c;
}

TrainConfig TrainConfig::from_json(const json& j) {
  reject_unknown_keys(j,
                      {"trainer", "epochs", "batch_size", "mu", "lr", "weight_decay",
                       "loss_weights", "threshold", "augment", "consistency_flip", "freeze_alpha",
                       "warmup_epochs",
                       "model", "seed"},
                      "config");
  if (!j.contains("trainer")) throw ConfigError("config must name a trainer");
  TrainConfig c = defaults(parse_trainer(j.at("trainer").get<std::string>()));
  read(j, "epochs", c.epochs);
  read(j, "batch_size", c.batch_size);
  read(j, "mu", c.mu);
  read(j, "lr", c.lr);
  read(j, "weight_decay", c.weight_decay);
  read(j, "consistency_flip", c.consistency_flip);
  read(j, "freeze_alpha", c.freeze_alpha);
  read(j, "warmup_epochs", c.warmup_epochs);
  read(j, "seed", c.seed);
  if (j.contains("loss_weights")) {
    const auto allowed = components_for(c.trainer);
    for (const auto& item : j.at("loss_weights").items()) {
      if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end())
        throw ConfigError("loss weight '" + item.key() + "' does not apply to trainer " +
                          std::string(trainer_name(c.trainer)));
      c.loss_weights[item.key()] = item.value().get<double>();
    }
  }
  if (j.contains("threshold")) {
    const auto& t = j.at("threshold");
    reject_unknown_keys(t, {"mode", "beta", "gamma", "k", "initial", "epoch_scaling"}, "threshold");
    if (t.contains("mode")) c.threshold.mode = parse_threshold_mode(t.at("mode").get<std::string>());
    read(t, "beta", c.threshold.beta);
    read(t, "gamma", c.threshold.gamma);
    read(t, "k", c.threshold.k);
    read(t, "initial", c.threshold.initial);
    read(t, "epoch_scaling", c.threshold.epoch_scaling);
  }
  if (j.contains("augment")) {
    const auto& a = j.at("augment");
    reject_unknown_keys(a, {"crop_padding", "target_size", "rand_ops", "rand_magnitude"}, "augment");
    read(a, "crop_padding", c.augment.crop_padding);
    read(a, "rand_ops", c.augment.rand_ops);
    read(a, "rand_magnitude", c.augment.rand_magnitude);
    if (a.contains("target_size")) {
      const auto size = a.at("target_size").get<std::vector<std::size_t>>();
      if (size.size() != 2) throw ConfigError("augment.target_size must be [height, width]");
      c.augment.target_height = size[0];
      c.augment.target_width = size[1];
    }
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    reject_unknown_keys(m, {"backbone", "backbone_config", "dropout", "alpha_bias_init"}, "model");
    read(m, "backbone", c.model.backbone);
    if (m.contains("backbone_config"))
      c.model.backbone_config = m.at("backbone_config");
    else if (c.model.backbone != "reference")
      c.model.backbone_config = json::object();
    read(m, "dropout", c.model.dropout);
    read(m, "alpha_bias_init", c.model.alpha_bias_init);
  }
  c.model.input_height = c.augment.target_height;
  c.model.input_width = c.augment.target_width;
  c.validate();
  return c;
}

json TrainConfig::to_json() const {
  return {{"trainer", trainer_name(trainer)},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"mu", mu},
          {"lr", lr},
          {"weight_decay", weight_decay},
          {"loss_weights", loss_weights},
          {"threshold",
           {{"mode", threshold_mode_name(threshold.mode)},
            {"beta", threshold.beta},
            {"gamma", threshold.gamma},
            {"k", threshold.k},
            {"initial", threshold.initial},
            {"epoch_scaling", threshold.epoch_scaling}}},
          {"augment",
           {{"crop_padding", augment.crop_padding},
            {"target_size", {augment.target_height, augment.target_width}},
            {"rand_ops", augment.rand_ops},
            {"rand_magnitude", augment.rand_magnitude}}},
          {"consistency_flip", consistency_flip},
          {"freeze_alpha", freeze_alpha},
          {"warmup_epochs", warmup_epochs},
          {"model",
           {{"backbone", model.backbone},
            {"backbone_config", model.backbone_config},
            {"dropout", model.dropout},
            {"alpha_bias_init", model.alpha_bias_init}}},
          {"seed", seed}};
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(lr >= 0.0)) throw ConfigError("lr must be non-negative");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (!(mu >= 0.0)) throw ConfigError("mu must be non-negative");
  if (trainer == TrainerKind::mutex_ssl && !(mu > 0.0))
    throw ConfigError("trainer mutex_ssl needs mu > 0");
  if (trainer != TrainerKind::mutex_ssl && mu != 0.0)
    throw ConfigError("mu applies only to trainer mutex_ssl");
  if (warmup_epochs < 0) throw ConfigError("warmup_epochs must be non-negative");
  if (warmup_epochs > 0 && trainer == TrainerKind::supervised)
    throw ConfigError("warmup_epochs applies only to trainers mutex_ssl and noise_aware");
  if (threshold.k < 1 || threshold.k > 8) throw ConfigError("threshold.k must be in [1, 8]");
  if (!(threshold.gamma > 1.0)) throw ConfigError("threshold.gamma must exceed 1");
  if (!(threshold.beta >= 0.0 && threshold.beta <= 1.0))
    throw ConfigError("threshold.beta must be in [0, 1]");
  if (!(threshold.initial >= 0.0 && threshold.initial <= 1.0))
    throw ConfigError("threshold.initial must be in [0, 1]");
  if (augment.rand_magnitude < 0 || augment.rand_magnitude > 10)
    throw ConfigError("augment.rand_magnitude must be in [0, 10]");
  if (augment.target_height < 8 || augment.target_width < 8)
    throw ConfigError("augment.target_size must be at least 8x8");
  if (!(model.dropout >= 0.0 && model.dropout < 1.0))
    throw ConfigError("model.dropout must be in [0, 1)");
  if (!backbone_registered(model.backbone))
    throw ConfigError("backbone '" + model.backbone + "' is not registered");
  if (model.backbone == "reference")
    reject_unknown_keys(model.backbone_config, {"channels"}, "model.backbone_config");
  else if (model.backbone == "resnet18")
    reject_unknown_keys(model.backbone_config, {"width", "weights"}, "model.backbone_config");
  for (const auto& name : components_for(trainer))
    if (!loss_weights.count(name)) throw ConfigError("missing loss weight '" + name + "'");
  for (const auto& [name, w] : loss_weights)
    if (!(w >= 0.0)) throw ConfigError("loss weight '" + name + "' must be non-negative");
}

std::string TrainConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_json().dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return TrainConfig::from_json(j);
}

}  // namespace rfer
