#include "rfer/trainers.hpp"

#include <chrono>
#include <cmath>
#include <string>

#include "rfer/augment.hpp"
#include "rfer/errors.hpp"
#include "rfer/losses.hpp"
#include "rfer/optim.hpp"
#include "rfer/rng.hpp"

namespace rfer {
namespace {

// Stream tags for derive_seed; distinct per use so that no two consumers of
// randomness ever share a stream.
enum : std::uint64_t {
  kTagInit = 0x11,
  kTagBatches = 0x22,
  kTagLabeledAug = 0x33,
  kTagUnlabeledAug = 0x44,
  kTagDropout = 0x55,
};

enum : std::uint64_t { kViewLabeled = 0, kViewLabeledStrong = 1, kViewUnlabeledStrong = 2 };

Tensor scaled(const Tensor& t, double w) {
  Tensor out = t;
  for (auto& v : out.values()) v *= w;
  return out;
}

double weight_of(const TrainConfig& cfg, const char* name) {
  const auto it = cfg.loss_weights.find(name);
  return it == cfg.loss_weights.end() ? 0.0 : it->second;
}

std::vector<int> labels_of(const Dataset& d, const std::vector<std::size_t>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(d.manifest.records[i].label);
  return out;
}

const Image& image_of(const Dataset& d, std::size_t i) {
  const Image& img = d.images.at(i);
  if (img.pixels.empty())
    throw DataError("image for " + d.manifest.records[i].path + " was not loaded");
  return img;
}

std::vector<Image> weak_views(const Dataset& d, const std::vector<std::size_t>& idx,
                              const AugmentPolicy& policy, std::uint64_t seed, std::uint64_t tag,
                              int epoch, std::size_t step) {
  std::vector<Image> out;
  out.reserve(idx.size());
  for (std::size_t s = 0; s < idx.size(); ++s) {
    Rng rng(derive_seed({seed, tag, static_cast<std::uint64_t>(epoch), step, s}));
    out.push_back(weak_augment(image_of(d, idx[s]), policy, rng));
  }
  return out;
}

struct PairViews {
  std::vector<Image> weak, strong;
};

PairViews pair_views(const Dataset& d, const std::vector<std::size_t>& idx,
                     const AugmentPolicy& policy, std::uint64_t seed, std::uint64_t tag, int epoch,
                     std::size_t step, bool flip_strong) {
  PairViews out;
  for (std::size_t s = 0; s < idx.size(); ++s) {
    auto pair = augment_pair(image_of(d, idx[s]), policy,
                             derive_seed({seed, tag, static_cast<std::uint64_t>(epoch), step, s}),
                             flip_strong);
    out.weak.push_back(std::move(pair.weak));
    out.strong.push_back(std::move(pair.strong));
  }
  return out;
}

std::uint64_t dropout_seed(const TrainConfig& cfg, int epoch, std::size_t step, std::uint64_t view) {
  return derive_seed({cfg.seed, kTagDropout, static_cast<std::uint64_t>(epoch), step, view});
}

std::size_t count_correct(const Tensor& probs, std::span<const int> labels) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (static_cast<int>(argmax_row(probs.row(i))) == labels[i]) ++n;
  return n;
}

void check_finite(double value, int epoch, std::size_t step) {
  if (!std::isfinite(value))
    throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                         std::to_string(step));
}

std::vector<double> gt_probs(const Tensor& probs, std::span<const int> labels) {
  std::vector<double> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = probs.at(i, labels[i]);
  return out;
}

// Shared epoch bookkeeping and model/optimizer ownership.
class Session {
 public:
  Session(const TrainConfig& cfg, const Dataset& train, const Dataset* validation,
          const EpochCallback& on_epoch)
      : cfg_(cfg),
        train_(train),
        validation_(validation),
        on_epoch_(on_epoch),
        model_(std::make_unique<DualHeadModel>(cfg.model, derive_seed({cfg.seed, kTagInit}))),
        params_(model_->parameters()),
        adam_(AdamOptions{cfg.lr, cfg.weight_decay}) {
    cfg_.validate();
    if (train.manifest.labeled_indices().empty())
      throw ConfigError("training data has no labeled samples");
  }

  DualHeadModel& model() { return *model_; }
  const TrainConfig& config() const { return cfg_; }

  void begin_epoch() {
    start_ = std::chrono::steady_clock::now();
    loss_sums_.clear();
    steps_ = 0;
    correct_ = seen_ = 0;
  }

  void record_step(const std::map<std::string, LossValue>& components, int epoch, std::size_t step) {
    const double total = total_loss(components, cfg_.loss_weights);
    check_finite(total, epoch, step);
    for (const auto& [name, v] : components) loss_sums_[name] += v.value;
    ++steps_;
  }

  void record_accuracy(const Tensor& probs, std::span<const int> labels) {
    correct_ += count_correct(probs, labels);
    seen_ += labels.size();
  }

  void apply_gradients() { adam_.step(params_); }

  EpochReport end_epoch(int epoch, const ClassVector& thresholds) {
    EpochReport r;
    r.epoch = epoch;
    for (const auto& [name, sum] : loss_sums_) r.losses[name] = sum / static_cast<double>(steps_);
    r.train_accuracy = seen_ ? 100.0 * static_cast<double>(correct_) / static_cast<double>(seen_) : 0.0;
    r.thresholds = thresholds;
    if (validation_) {
      const auto m = evaluate(*model_, *validation_);
      r.val_macro_f1 = m.macro_f1;
      r.val_accuracy = m.accuracy;
    }
    r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    return r;
  }

  void publish(EpochReport report, TrainResult& result) {
    if (report.val_macro_f1 && (result.best_epoch < 0 || *report.val_macro_f1 > result.best_val_macro_f1)) {
      result.best_epoch = report.epoch;
      result.best_val_macro_f1 = *report.val_macro_f1;
      result.best_parameters = snapshot_parameters(*model_);
    }
    if (on_epoch_) on_epoch_(report, *model_);
    result.reports.push_back(std::move(report));
  }

  TrainResult finish(TrainResult result) {
    if (result.best_parameters.empty()) result.best_parameters = snapshot_parameters(*model_);
    result.model = std::move(model_);
    return result;
  }

 private:
  TrainConfig cfg_;
  const Dataset& train_;
  const Dataset* validation_;
  EpochCallback on_epoch_;
  std::unique_ptr<DualHeadModel> model_;
  std::vector<Parameter*> params_;
  Adam adam_;
  std::chrono::steady_clock::time_point start_;
  std::map<std::string, double> loss_sums_;
  std::size_t steps_ = 0;
  std::size_t correct_ = 0, seen_ = 0;
};

ThresholdState make_threshold_state(const TrainConfig& cfg) {
  return ThresholdState(cfg.threshold.mode, cfg.threshold.beta, cfg.threshold.gamma,
                        cfg.threshold.initial, cfg.threshold.epoch_scaling);
}

}  // namespace

nlohmann::json EpochReport::to_json() const {
  nlohmann::json j = {{"epoch", epoch},
                      {"losses", losses},
                      {"train_accuracy", train_accuracy},
                      {"thresholds", thresholds}};
  if (val_macro_f1) j["val_macro_f1"] = *val_macro_f1;
  if (val_accuracy) j["val_accuracy"] = *val_accuracy;
  if (clean_fraction) j["clean_fraction"] = *clean_fraction;
  if (confident_fraction) j["confident_fraction"] = *confident_fraction;
  if (skipped_supervised_batches) j["skipped_supervised_batches"] = *skipped_supervised_batches;
  return j;
}

std::vector<Tensor> snapshot_parameters(const DualHeadModel& model) {
  std::vector<Tensor> out;
  for (const auto* p : model.parameters()) out.push_back(p->value);
  return out;
}

void restore_parameters(DualHeadModel& model, const std::vector<Tensor>& values) {
  auto params = model.parameters();
  if (params.size() != values.size()) throw ContractError("parameter snapshot has wrong length");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(params[i]->value, values[i], params[i]->name.c_str());
    params[i]->value = values[i];
  }
}

// ---------------------------------------------------------------------------

TrainResult train_supervised(const TrainConfig& config, const Dataset& train,
                             const Dataset* validation, const EpochCallback& on_epoch) {
  if (config.trainer != TrainerKind::supervised)
    throw ConfigError("train_supervised called with trainer " + std::string(trainer_name(config.trainer)));
  Session session(config, train, validation, on_epoch);
  auto& model = session.model();
  const auto& cfg = session.config();
  const double w_sup = weight_of(cfg, "sup");
  // Diagnostic only: the epoch-scaled thresholds the labeled stream would yield.
  ThresholdState thresholds = make_threshold_state(cfg);
  BatchStream stream(train.manifest.labeled_indices(), {}, cfg.batch_size, 0.0,
                     derive_seed({cfg.seed, kTagBatches}));
  TrainResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    session.begin_epoch();
    for (std::size_t step = 0; step < stream.steps_per_epoch(); ++step) {
      const auto batch = stream.next();
      const auto labels = labels_of(train, batch.labeled);
      const auto views =
          weak_views(train, batch.labeled, cfg.augment, cfg.seed, kTagLabeledAug, epoch, step);
      ForwardCache cache;
      const auto out = model.forward(stack_images(views), Mode::train,
                                     dropout_seed(cfg, epoch, step, kViewLabeled), &cache);
      const auto ce = cross_entropy(out.tpc_probs, labels);
      session.record_step({{"sup", ce.loss}}, epoch, step);
      session.record_accuracy(out.tpc_probs, labels);
      thresholds.accumulate(gt_probs(out.tpc_probs, labels), labels);

      model.zero_grad();
      model.backward(cache, out, {scaled(ce.grad, w_sup), {}, {}, {}});
      session.apply_gradients();
    }
    auto report = session.end_epoch(epoch, thresholds.tau());
    thresholds.end_epoch();
    session.publish(std::move(report), result);
  }
  return session.finish(std::move(result));
}

TrainResult train_mutex_ssl(const TrainConfig& config, const Dataset& train,
                            const Dataset* validation, const EpochCallback& on_epoch) {
  if (config.trainer != TrainerKind::mutex_ssl)
    throw ConfigError("train_mutex_ssl called with trainer " + std::string(trainer_name(config.trainer)));
  if (train.manifest.unlabeled_indices().empty())
    throw ConfigError("mutex_ssl with mu = " + std::to_string(config.mu) +
                      " needs unlabeled samples (label -1) but the data has none");
  Session session(config, train, validation, on_epoch);
  auto& model = session.model();
  const auto& cfg = session.config();
  const double w_sup = weight_of(cfg, "sup"), w_p = weight_of(cfg, "pseudo");
  const double w_n = weight_of(cfg, "neg"), w_sep = weight_of(cfg, "sep");
  ThresholdState thresholds = make_threshold_state(cfg);
  BatchStream stream(train.manifest.labeled_indices(), train.manifest.unlabeled_indices(),
                     cfg.batch_size, cfg.mu, derive_seed({cfg.seed, kTagBatches}));
  TrainResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    session.begin_epoch();
    std::size_t confident = 0, unlabeled_seen = 0;
    for (std::size_t step = 0; step < stream.steps_per_epoch(); ++step) {
      const auto batch = stream.next();
      const auto labels = labels_of(train, batch.labeled);
      const auto views =
          weak_views(train, batch.labeled, cfg.augment, cfg.seed, kTagLabeledAug, epoch, step);
      ForwardCache lab_cache;
      const auto lab = model.forward(stack_images(views), Mode::train,
                                     dropout_seed(cfg, epoch, step, kViewLabeled), &lab_cache);
      const auto ce = cross_entropy(lab.tpc_probs, labels);
      unlabeled_seen += batch.unlabeled.size();

      // During warm-up the unlabeled branch is skipped and its losses log as 0.
      if (epoch < cfg.warmup_epochs) {
        session.record_step({{"sup", ce.loss}, {"pseudo", {}}, {"neg", {}}, {"sep", {}}}, epoch, step);
        session.record_accuracy(lab.tpc_probs, labels);
        thresholds.accumulate(gt_probs(lab.tpc_probs, labels), labels);
        model.zero_grad();
        model.backward(lab_cache, lab, {scaled(ce.grad, w_sup), {}, {}, {}});
        session.apply_gradients();
        continue;
      }

      const auto pairs = pair_views(train, batch.unlabeled, cfg.augment, cfg.seed,
                                    kTagUnlabeledAug, epoch, step, false);
      ForwardCache weak_cache, strong_cache;
      // Pseudo-labels come from the dropout-free weak view.
      const auto weak = model.forward(stack_images(pairs.weak), Mode::eval, 0, &weak_cache);
      const auto strong =
          model.forward(stack_images(pairs.strong), Mode::train,
                        dropout_seed(cfg, epoch, step, kViewUnlabeledStrong), &strong_cache);
      const auto& tau = thresholds.tau();
      const auto lp = pseudo_label_loss(weak.tpc_probs, strong.tpc_probs, tau);
      const auto ln = negative_consistency_loss(weak.tpc_probs, weak.tnc_probs, strong.tnc_probs,
                                                tau, cfg.threshold.k);
      const auto lsep = separation_loss(weak.tnc_probs, weak.tpc_probs, tau);

      session.record_step({{"sup", ce.loss}, {"pseudo", lp.loss}, {"neg", ln.loss}, {"sep", lsep.loss}},
                          epoch, step);
      session.record_accuracy(lab.tpc_probs, labels);
      thresholds.accumulate(gt_probs(lab.tpc_probs, labels), labels);
      confident += lp.loss.n_contributing;

      model.zero_grad();
      model.backward(lab_cache, lab, {scaled(ce.grad, w_sup), {}, {}, {}});
      if (w_sep > 0.0 && lsep.loss.n_contributing > 0)
        model.backward(weak_cache, weak, {{}, scaled(lsep.grad, w_sep), {}, {}});
      const bool strong_p = w_p > 0.0 && lp.loss.n_contributing > 0;
      const bool strong_n = w_n > 0.0 && ln.loss.n_contributing > 0;
      if (strong_p || strong_n)
        model.backward(strong_cache, strong,
                       {strong_p ? scaled(lp.grad, w_p) : Tensor(),
                        strong_n ? scaled(ln.grad, w_n) : Tensor(), {}, {}});
      session.apply_gradients();
    }
    auto report = session.end_epoch(epoch, thresholds.tau());
    report.confident_fraction =
        unlabeled_seen ? static_cast<double>(confident) / static_cast<double>(unlabeled_seen) : 0.0;
    thresholds.end_epoch();
    session.publish(std::move(report), result);
  }
  return session.finish(std::move(result));
}

TrainResult train_noise_aware(const TrainConfig& config, const Dataset& train,
                              const Dataset* validation, const EpochCallback& on_epoch) {
  if (config.trainer != TrainerKind::noise_aware)
    throw ConfigError("train_noise_aware called with trainer " + std::string(trainer_name(config.trainer)));
  Session session(config, train, validation, on_epoch);
  auto& model = session.model();
  const auto& cfg = session.config();
  const double w_sup = weight_of(cfg, "sup"), w_cons = weight_of(cfg, "consistency");
  ThresholdState thresholds = make_threshold_state(cfg);
  BatchStream stream(train.manifest.labeled_indices(), {}, cfg.batch_size, 0.0,
                     derive_seed({cfg.seed, kTagBatches}));
  TrainResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    session.begin_epoch();
    std::size_t clean = 0, seen = 0, skipped = 0;
    for (std::size_t step = 0; step < stream.steps_per_epoch(); ++step) {
      const auto batch = stream.next();
      const auto labels = labels_of(train, batch.labeled);
      const auto pairs = pair_views(train, batch.labeled, cfg.augment, cfg.seed, kTagLabeledAug,
                                    epoch, step, cfg.consistency_flip);
      ForwardCache weak_cache, strong_cache;
      const auto weak = model.forward(stack_images(pairs.weak), Mode::train,
                                      dropout_seed(cfg, epoch, step, kViewLabeled), &weak_cache);
      const auto strong =
          model.forward(stack_images(pairs.strong), Mode::train,
                        dropout_seed(cfg, epoch, step, kViewLabeledStrong), &strong_cache);

      thresholds.update_batch(weak.tpc_probs, labels);
      thresholds.accumulate(gt_probs(weak.tpc_probs, labels), labels);
      // During warm-up every sample counts as clean; thresholds are still tracked.
      static const ClassVector kOpen{};
      const bool warm = epoch < cfg.warmup_epochs;
      const auto partition = partition_clean_noisy(weak.tpc_probs, labels, warm ? kOpen : thresholds.tau());
      std::vector<std::uint8_t> include(labels.size(), 0);
      for (auto i : partition.clean) include[i] = 1;
      clean += partition.clean.size();
      seen += labels.size();

      std::vector<double> alpha(labels.size(), 1.0);
      if (!cfg.freeze_alpha) alpha.assign(weak.alpha.values().begin(), weak.alpha.values().end());
      const auto wce = weighted_cross_entropy(weak.tpc_logits, alpha, labels, include);
      const bool has_clean = !partition.clean.empty();
      if (!has_clean) ++skipped;

      const Tensor& head = model.tpc_weight().value;
      const Tensor am_weak = attention_maps(weak.feature_maps, head);
      const Tensor am_strong = attention_maps(strong.feature_maps, head);
      const auto cons = attention_consistency_loss(
          am_weak, cfg.consistency_flip ? flip_maps_horizontal(am_strong) : am_strong);

      session.record_step({{"sup", wce.loss}, {"consistency", cons.loss}}, epoch, step);
      session.record_accuracy(weak.tpc_probs, labels);

      model.zero_grad();
      Tensor d_feat_weak, d_feat_strong;
      if (w_cons > 0.0) {
        d_feat_weak = Tensor(weak.feature_maps.shape());
        d_feat_strong = Tensor(strong.feature_maps.shape());
        const Tensor g_strong = cfg.consistency_flip ? flip_maps_horizontal(cons.grad_b) : cons.grad_b;
        attention_maps_backward(weak.feature_maps, head, scaled(cons.grad_a, w_cons), d_feat_weak,
                                model.tpc_weight().grad);
        attention_maps_backward(strong.feature_maps, head, scaled(g_strong, w_cons), d_feat_strong,
                                model.tpc_weight().grad);
      }
      OutputGrads weak_grads;
      if (has_clean) {
        weak_grads.tpc_logits = scaled(wce.grad_logits, w_sup);
        if (!cfg.freeze_alpha) weak_grads.alpha = scaled(wce.grad_alpha, w_sup);
      }
      weak_grads.feature_maps = std::move(d_feat_weak);
      if (!weak_grads.tpc_logits.empty() || !weak_grads.feature_maps.empty())
        model.backward(weak_cache, weak, weak_grads);
      if (w_cons > 0.0) model.backward(strong_cache, strong, {{}, {}, {}, std::move(d_feat_strong)});
      session.apply_gradients();
    }
    auto report = session.end_epoch(epoch, thresholds.tau());
    report.clean_fraction = seen ? static_cast<double>(clean) / static_cast<double>(seen) : 0.0;
    report.skipped_supervised_batches = skipped;
    thresholds.end_epoch();
    session.publish(std::move(report), result);
  }
  return session.finish(std::move(result));
}

TrainResult train(const TrainConfig& config, const Dataset& train_data, const Dataset* validation,
                  const EpochCallback& on_epoch) {
  switch (config.trainer) {
    case TrainerKind::supervised: return train_supervised(config, train_data, validation, on_epoch);
    case TrainerKind::mutex_ssl: return train_mutex_ssl(config, train_data, validation, on_epoch);
    case TrainerKind::noise_aware: return train_noise_aware(config, train_data, validation, on_epoch);
  }
  throw ConfigError("unknown trainer");
}

// ---------------------------------------------------------------------------

std::vector<int> predict(const DualHeadModel& model, std::span<const Image> images) {
  constexpr std::size_t kChunk = 128;
  std::vector<int> out;
  out.reserve(images.size());
  for (std::size_t start = 0; start < images.size(); start += kChunk) {
    const auto chunk = images.subspan(start, std::min(kChunk, images.size() - start));
    const auto o = model.forward(stack_images(chunk), Mode::eval);
    for (std::size_t i = 0; i < chunk.size(); ++i)
      out.push_back(static_cast<int>(argmax_row(o.tpc_probs.row(i))));
  }
  return out;
}

MetricsReport evaluate(const DualHeadModel& model, const Dataset& data) {
  const auto idx = data.manifest.labeled_indices();
  if (idx.empty()) throw DataError("no scorable samples (every row is -1 or missing)");
  const auto& cfg = model.config();
  std::vector<Image> images;
  std::vector<int> labels;
  images.reserve(idx.size());
  for (auto i : idx) {
    images.push_back(resize_bilinear(image_of(data, i), cfg.input_height, cfg.input_width));
    labels.push_back(data.manifest.records[i].label);
  }
  const auto preds = predict(model, images);
  return metrics_report(confusion(labels, preds));
}

MetricsReport evaluate(const std::filesystem::path& checkpoint, const Dataset& data) {
  const auto loaded = load_checkpoint(checkpoint);
  return evaluate(*loaded.model, data);
}

}  // namespace rfer
