#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rfer/image.hpp"
#include "rfer/tensor.hpp"

namespace rfer {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;  // same shape as value; accumulated by backward passes

  Parameter() = default;
  Parameter(std::string n, std::vector<std::size_t> shape)
      : name(std::move(n)), value(shape), grad(std::move(shape)) {}
};

// ---------------------------------------------------------------------------
// Backbones

class BackboneCache {
 public:
  virtual ~BackboneCache() = default;
};

// Maps an N x 3 x H x W batch to final feature maps N x L x h x w. Pooled
// features are always the spatial mean of these maps (taken by the model),
// which is what lets class attention maps explain the logits.
class Backbone {
 public:
  virtual ~Backbone() = default;

  virtual std::string kind() const = 0;
  virtual std::size_t feature_channels() const = 0;
  // Architecture description stored in checkpoints; passing it back to the
  // registered factory must rebuild an identical layout.
  virtual nlohmann::json describe() const = 0;

  virtual Tensor forward(const Tensor& input, std::unique_ptr<BackboneCache>* cache) const = 0;
  // Accumulates parameter gradients from dLoss/dFeatureMaps.
  virtual void backward(const BackboneCache& cache, const Tensor& grad_features) = 0;
  virtual std::vector<Parameter*> parameters() = 0;
};

using BackboneFactory =
    std::function<std::unique_ptr<Backbone>(const nlohmann::json& config, std::uint64_t seed)>;

// "reference" and "resnet18" are always registered; other backbones plug in
// here under their own name.
void register_backbone(const std::string& name, BackboneFactory factory);
bool backbone_registered(const std::string& name);
std::unique_ptr<Backbone> make_backbone(const std::string& name, const nlohmann::json& config,
                                        std::uint64_t seed);

// Three blocks of conv3x3(pad 1) -> ReLU -> 2x2 max pool.
class ReferenceBackbone final : public Backbone {
 public:
  ReferenceBackbone(std::vector<std::size_t> channels, std::size_t input_height,
                    std::size_t input_width, std::uint64_t seed);

  std::string kind() const override { return "reference"; }
  std::size_t feature_channels() const override { return channels_.back(); }
  nlohmann::json describe() const override;
  Tensor forward(const Tensor& input, std::unique_ptr<BackboneCache>* cache) const override;
  void backward(const BackboneCache& cache, const Tensor& grad_features) override;
  std::vector<Parameter*> parameters() override;

  std::size_t input_height() const noexcept { return input_height_; }
  std::size_t input_width() const noexcept { return input_width_; }

 private:
  std::vector<std::size_t> channels_;
  std::size_t input_height_, input_width_;
  std::vector<Parameter> weights_;  // conv{i}.weight: O x C x 3 x 3
  std::vector<Parameter> biases_;   // conv{i}.bias: O
};

// ResNet-18 with torchvision parameter names. Batch norm is frozen and folded
// into a per-channel affine map (bn*.weight scales, bn*.bias shifts), the usual
// way to fine-tune a pretrained backbone with small batches; a converter must
// fold running statistics into those two vectors. Feature maps are the output
// of layer4, before global pooling. `width` is the channel count of layer1
// (64 in the standard network).
class ResNet18Backbone final : public Backbone {
 public:
  ResNet18Backbone(std::size_t width, std::size_t input_height, std::size_t input_width,
                   std::uint64_t seed);
  ~ResNet18Backbone() override;

  std::string kind() const override { return "resnet18"; }
  std::size_t feature_channels() const override { return 8 * width_; }
  nlohmann::json describe() const override;
  Tensor forward(const Tensor& input, std::unique_ptr<BackboneCache>* cache) const override;
  void backward(const BackboneCache& cache, const Tensor& grad_features) override;
  std::vector<Parameter*> parameters() override;

  // Copies every parameter of this backbone from a checkpoint that has one of
  // the same name and shape; throws ContractError if any is absent.
  void load_weights(const std::filesystem::path& checkpoint);

 private:
  struct Layers;
  std::size_t width_, input_height_, input_width_;
  std::unique_ptr<Layers> layers_;
};

// ---------------------------------------------------------------------------
// Dual-head classifier

inline constexpr std::size_t kClasses = 8;

struct ModelConfig {
  std::string backbone = "reference";
  nlohmann::json backbone_config = {{"channels", {16, 32, 64}}};
  std::size_t input_height = 32;
  std::size_t input_width = 32;
  double dropout = 0.5;
  double alpha_bias_init = 2.0;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

enum class Mode { train, eval };

struct ModelOutput {
  Tensor feature_maps;  // N x L x h x w
  Tensor pooled;        // N x L, spatial mean of feature_maps
  Tensor tpc_logits;    // N x 8
  Tensor tpc_probs;     // N x 8
  Tensor tnc_logits;    // N x 8
  Tensor tnc_probs;     // N x 8
  Tensor alpha;         // N, sigmoid importance weight from the pooled features
};

struct ForwardCache {
  std::unique_ptr<BackboneCache> backbone;
  Tensor dropout_scale;  // N x L; 0 or 1/(1-p) in train mode, all 1 in eval mode
  Tensor dropped;        // N x L, pooled * dropout_scale
};

// Upstream gradients. Empty tensors mean "no gradient from this output".
struct OutputGrads {
  Tensor tpc_logits;
  Tensor tnc_logits;
  Tensor alpha;
  Tensor feature_maps;
};

class DualHeadModel {
 public:
  DualHeadModel(ModelConfig config, std::uint64_t init_seed);
  DualHeadModel(ModelConfig config, std::unique_ptr<Backbone> backbone, std::uint64_t init_seed);

  const ModelConfig& config() const noexcept { return config_; }
  std::size_t feature_channels() const noexcept { return backbone_->feature_channels(); }
  const Backbone& backbone() const noexcept { return *backbone_; }

  // images: N x H x W x 3 (channel-last, as decoded). Dropout in train mode is
  // driven entirely by dropout_seed, so forward passes never share RNG state.
  ModelOutput forward(const Tensor& images, Mode mode, std::uint64_t dropout_seed = 0,
                      ForwardCache* cache = nullptr) const;

  void backward(const ForwardCache& cache, const ModelOutput& out, const OutputGrads& grads);

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  void zero_grad();

  Parameter& tpc_weight() noexcept { return tpc_weight_; }
  const Parameter& tpc_weight() const noexcept { return tpc_weight_; }
  Parameter& tnc_weight() noexcept { return tnc_weight_; }

 private:
  void init_heads(std::uint64_t seed);

  ModelConfig config_;
  std::unique_ptr<Backbone> backbone_;
  Parameter tpc_weight_, tpc_bias_;      // 8 x L, 8
  Parameter tnc_weight_, tnc_bias_;      // 8 x L, 8
  Parameter alpha_weight_, alpha_bias_;  // L, 1
};

// Stacks images (all target-sized) into N x H x W x 3.
Tensor stack_images(std::span<const Image> images);

// maps[n, c, i, j] = sum_l head_weights[c, l] * feature_maps[n, l, i, j]. No bias.
Tensor attention_maps(const Tensor& feature_maps, const Tensor& head_weights);
// Accumulates into grad_features (N x L x h x w) and grad_weights (8 x L).
void attention_maps_backward(const Tensor& feature_maps, const Tensor& head_weights,
                             const Tensor& grad_maps, Tensor& grad_features, Tensor& grad_weights);
// Mirrors N x C x h x w maps along the width axis.
Tensor flip_maps_horizontal(const Tensor& maps);

// ---------------------------------------------------------------------------
// Checkpoints

struct CheckpointMeta {
  int epoch = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
  nlohmann::json extra = nlohmann::json::object();
};

void save_checkpoint(const std::filesystem::path& path, const DualHeadModel& model,
                     const CheckpointMeta& meta);

struct LoadedCheckpoint {
  std::unique_ptr<DualHeadModel> model;
  CheckpointMeta meta;
};

// Throws ContractError when the file is not a checkpoint or its class count or
// parameter shapes disagree with the architecture it describes.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

// Parameter tensors of a checkpoint by name, without building the model.
std::map<std::string, Tensor> read_checkpoint_parameters(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Finite-difference gradient check

struct GradCheckReport {
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool passed = false;
};

struct GradCheckOptions {
  double epsilon = 1e-6;
  double tolerance = 1e-4;
  std::size_t samples = 128;  // scalar parameters probed, at least one per tensor
  // Relative error is |a - n| / max(|a|, |n|, abs_floor); the floor keeps
  // round-off on vanishing gradients from reading as a relative failure.
  double abs_floor = 1e-6;
  std::uint64_t seed = 0;
};

// Compares each probed Parameter::grad entry with the central difference
// (f(x + eps) - f(x - eps)) / 2eps. Throws NumericalError on a non-finite loss.
GradCheckReport numerical_gradient_check(const std::function<double()>& loss_fn,
                                         std::span<Parameter* const> parameters,
                                         const GradCheckOptions& options = {});

}  // namespace rfer
