#include "rfer/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>

#include "rfer/errors.hpp"
#include "rfer/kernels.hpp"
#include "rfer/losses.hpp"
#include "rfer/rng.hpp"

namespace rfer {
namespace {

// ---------------------------------------------------------------------------
// Backbone registry

std::map<std::string, BackboneFactory>& registry() {
  static std::map<std::string, BackboneFactory> r = [] {
    std::map<std::string, BackboneFactory> m;
    m["reference"] = [](const nlohmann::json& cfg, std::uint64_t seed) {
      return std::make_unique<ReferenceBackbone>(
          cfg.value("channels", std::vector<std::size_t>{16, 32, 64}),
          cfg.at("input_height").get<std::size_t>(), cfg.at("input_width").get<std::size_t>(),
          seed);
    };
    m["resnet18"] = [](const nlohmann::json& cfg, std::uint64_t seed) {
      auto b = std::make_unique<ResNet18Backbone>(
          cfg.value("width", std::size_t{64}), cfg.at("input_height").get<std::size_t>(),
          cfg.at("input_width").get<std::size_t>(), seed);
      if (cfg.contains("weights")) b->load_weights(cfg.at("weights").get<std::string>());
      return b;
    };
    return m;
  }();
  return r;
}

std::mutex& registry_mutex() {
  static std::mutex m;
  return m;
}

// ---------------------------------------------------------------------------
// Convolution helpers (3x3, stride 1, zero padding 1), one image at a time.

void im2col3x3(const double* in, std::size_t channels, std::size_t h, std::size_t w,
               double* col) {
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < channels; ++c) {
    const double* plane = in + c * hw;
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        double* dst = col + ((c * 3 + ky) * 3 + kx) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
          double* row = dst + y * w;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(row, row + w, 0.0);
            continue;
          }
          // Column x reads source x + kx - 1; only the first or last column can fall outside.
          const double* src = plane + static_cast<std::size_t>(sy) * w;
          if (kx == 0) {
            row[0] = 0.0;
            std::copy(src, src + w - 1, row + 1);
          } else if (kx == 1) {
            std::copy(src, src + w, row);
          } else {
            std::copy(src + 1, src + w, row);
            row[w - 1] = 0.0;
          }
        }
      }
    }
  }
}

void col2im3x3(const double* col, std::size_t channels, std::size_t h, std::size_t w,
               double* out) {
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < channels; ++c) {
    double* plane = out + c * hw;
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        const double* src = col + ((c * 3 + ky) * 3 + kx) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
          double* dst = plane + static_cast<std::size_t>(sy) * w;
          const double* row = src + y * w;
          const std::size_t lo = kx == 0 ? 1 : 0;
          const std::size_t hi = kx == 2 ? w - 1 : w;
          double* d = dst + lo + kx - 1;
          for (std::size_t x = lo; x < hi; ++x) d[x - lo] += row[x];
        }
      }
    }
  }
}

struct BlockCache {
  Tensor input;                       // N x C x H x W
  Tensor activation;                  // N x O x H x W, after ReLU
  std::vector<std::uint8_t> argmax;   // per pooled output, 0..3 within the 2x2 window
};

struct ReferenceCache final : BackboneCache {
  std::vector<BlockCache> blocks;
};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void normal_init(Tensor& t, double stddev, Rng& rng) {
  for (auto& v : t.values()) v = stddev * rng.normal();
}

}  // namespace

void register_backbone(const std::string& name, BackboneFactory factory) {
  std::lock_guard lock(registry_mutex());
  registry()[name] = std::move(factory);
}

bool backbone_registered(const std::string& name) {
  std::lock_guard lock(registry_mutex());
  return registry().count(name) > 0;
}

std::unique_ptr<Backbone> make_backbone(const std::string& name, const nlohmann::json& config,
                                        std::uint64_t seed) {
  BackboneFactory factory;
  {
    std::lock_guard lock(registry_mutex());
    const auto it = registry().find(name);
    if (it == registry().end())
      throw ConfigError("backbone '" + name + "' is not registered");
    factory = it->second;
  }
  return factory(config, seed);
}

// ---------------------------------------------------------------------------
// ReferenceBackbone

ReferenceBackbone::ReferenceBackbone(std::vector<std::size_t> channels, std::size_t input_height,
                                     std::size_t input_width, std::uint64_t seed)
    : channels_(std::move(channels)), input_height_(input_height), input_width_(input_width) {
  if (channels_.empty()) throw ConfigError("reference backbone needs at least one block");
  std::size_t h = input_height_, w = input_width_;
  for (std::size_t i = 0; i < channels_.size(); ++i) {
    if (h < 2 || w < 2)
      throw ConfigError("input " + std::to_string(input_height_) + "x" +
                        std::to_string(input_width_) + " too small for " +
                        std::to_string(channels_.size()) + " downsampling blocks");
    h /= 2, w /= 2;
  }
  Rng rng(derive_seed({seed, 0xbb}));
  std::size_t in_ch = 3;
  for (std::size_t i = 0; i < channels_.size(); ++i) {
    const std::size_t out_ch = channels_[i];
    weights_.emplace_back("conv" + std::to_string(i + 1) + ".weight",
                          std::vector<std::size_t>{out_ch, in_ch, 3, 3});
    biases_.emplace_back("conv" + std::to_string(i + 1) + ".bias",
                         std::vector<std::size_t>{out_ch});
    normal_init(weights_.back().value, std::sqrt(2.0 / static_cast<double>(in_ch * 9)), rng);
    in_ch = out_ch;
  }
}

nlohmann::json ReferenceBackbone::describe() const {
  return {{"channels", channels_}, {"input_height", input_height_}, {"input_width", input_width_}};
}

std::vector<Parameter*> ReferenceBackbone::parameters() {
  std::vector<Parameter*> out;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    out.push_back(&weights_[i]);
    out.push_back(&biases_[i]);
  }
  return out;
}

Tensor ReferenceBackbone::forward(const Tensor& input, std::unique_ptr<BackboneCache>* cache) const {
  if (input.rank() != 4 || input.dim(1) != 3 || input.dim(2) != input_height_ ||
      input.dim(3) != input_width_)
    throw ContractError("reference backbone expects Nx3x" + std::to_string(input_height_) + "x" +
                        std::to_string(input_width_) + " input, got " +
                        shape_string(input.shape()));
  auto rc = cache ? std::make_unique<ReferenceCache>() : nullptr;
  const std::size_t n = input.dim(0);
  Tensor x = input;
  std::vector<double> col;
  for (std::size_t b = 0; b < channels_.size(); ++b) {
    const std::size_t c_in = x.dim(1), h = x.dim(2), w = x.dim(3), hw = h * w;
    const std::size_t c_out = channels_[b];
    const std::size_t k = c_in * 9;
    const double* wt = weights_[b].value.data();
    const double* bias = biases_[b].value.data();
    Tensor act({n, c_out, h, w});
    col.resize(k * hw);
    for (std::size_t i = 0; i < n; ++i) {
      im2col3x3(x.data() + i * c_in * hw, c_in, h, w, col.data());
      double* out = act.data() + i * c_out * hw;
      for (std::size_t o = 0; o < c_out; ++o) std::fill(out + o * hw, out + (o + 1) * hw, bias[o]);
      kernels::gemm_nn(c_out, hw, k, wt, col.data(), out);
    }
    for (auto& v : act.values()) v = v > 0.0 ? v : 0.0;

    const std::size_t ph = h / 2, pw = w / 2;
    Tensor pooled({n, c_out, ph, pw});
    std::vector<std::uint8_t> argmax(pooled.size());
    for (std::size_t p = 0; p < n * c_out; ++p) {
      const double* src = act.data() + p * hw;
      double* dst = pooled.data() + p * ph * pw;
      std::uint8_t* am = argmax.data() + p * ph * pw;
      for (std::size_t y = 0; y < ph; ++y)
        for (std::size_t xx = 0; xx < pw; ++xx) {
          const double* base = src + 2 * y * w + 2 * xx;
          const double cand[4] = {base[0], base[1], base[w], base[w + 1]};
          std::uint8_t best = 0;
          for (std::uint8_t q = 1; q < 4; ++q)
            if (cand[q] > cand[best]) best = q;
          dst[y * pw + xx] = cand[best];
          am[y * pw + xx] = best;
        }
    }
    if (rc) rc->blocks.push_back({std::move(x), std::move(act), std::move(argmax)});
    x = std::move(pooled);
  }
  if (cache) *cache = std::move(rc);
  return x;
}

void ReferenceBackbone::backward(const BackboneCache& cache_base, const Tensor& grad_features) {
  const auto& cache = dynamic_cast<const ReferenceCache&>(cache_base);
  Tensor grad = grad_features;
  std::vector<double> col, dcol;
  for (std::size_t b = channels_.size(); b-- > 0;) {
    const auto& bc = cache.blocks[b];
    const std::size_t n = bc.activation.dim(0), c_out = bc.activation.dim(1);
    const std::size_t h = bc.activation.dim(2), w = bc.activation.dim(3), hw = h * w;
    const std::size_t ph = h / 2, pw = w / 2;
    const std::size_t c_in = bc.input.dim(1), k = c_in * 9;

    // unpool + ReLU mask
    Tensor dact({n, c_out, h, w});
    for (std::size_t p = 0; p < n * c_out; ++p) {
      const double* g = grad.data() + p * ph * pw;
      const std::uint8_t* am = bc.argmax.data() + p * ph * pw;
      const double* a = bc.activation.data() + p * hw;
      double* d = dact.data() + p * hw;
      for (std::size_t y = 0; y < ph; ++y)
        for (std::size_t xx = 0; xx < pw; ++xx) {
          const std::uint8_t q = am[y * pw + xx];
          const std::size_t pos = (2 * y + (q >> 1)) * w + 2 * xx + (q & 1);
          if (a[pos] > 0.0) d[pos] += g[y * pw + xx];
        }
    }

    double* dw = weights_[b].grad.data();
    double* db = biases_[b].grad.data();
    const double* wt = weights_[b].value.data();
    const bool need_input_grad = b > 0;
    Tensor dinput;
    if (need_input_grad) dinput = Tensor(bc.input.shape());
    col.resize(k * hw);
    if (need_input_grad) dcol.resize(k * hw);
    for (std::size_t i = 0; i < n; ++i) {
      const double* g = dact.data() + i * c_out * hw;
      for (std::size_t o = 0; o < c_out; ++o) {
        double s = 0.0;
        for (std::size_t j = 0; j < hw; ++j) s += g[o * hw + j];
        db[o] += s;
      }
      im2col3x3(bc.input.data() + i * c_in * hw, c_in, h, w, col.data());
      kernels::gemm_nt(c_out, k, hw, g, col.data(), dw);
      if (need_input_grad) {
        std::fill(dcol.begin(), dcol.end(), 0.0);
        kernels::gemm_tn(k, hw, c_out, wt, g, dcol.data());
        col2im3x3(dcol.data(), c_in, h, w, dinput.data() + i * c_in * hw);
      }
    }
    if (need_input_grad) grad = std::move(dinput);
  }
}

// ---------------------------------------------------------------------------
// ModelConfig

nlohmann::json ModelConfig::to_json() const {
  return {{"backbone", backbone},
          {"backbone_config", backbone_config},
          {"input_height", input_height},
          {"input_width", input_width},
          {"dropout", dropout},
          {"alpha_bias_init", alpha_bias_init},
          {"num_classes", kClasses}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.backbone = j.value("backbone", c.backbone);
  c.backbone_config = j.value("backbone_config", c.backbone_config);
  c.input_height = j.value("input_height", c.input_height);
  c.input_width = j.value("input_width", c.input_width);
  c.dropout = j.value("dropout", c.dropout);
  c.alpha_bias_init = j.value("alpha_bias_init", c.alpha_bias_init);
  if (j.contains("num_classes") && j.at("num_classes").get<std::size_t>() != kClasses)
    throw ContractError("model has " + j.at("num_classes").dump() + " classes, expected " +
                        std::to_string(kClasses));
  return c;
}

// ---------------------------------------------------------------------------
// DualHeadModel

namespace {

nlohmann::json backbone_json(const ModelConfig& config) {
  nlohmann::json j = config.backbone_config;
  if (!j.is_object()) j = nlohmann::json::object();
  j["input_height"] = config.input_height;
  j["input_width"] = config.input_width;
  return j;
}

}  // namespace

DualHeadModel::DualHeadModel(ModelConfig config, std::uint64_t init_seed)
    : DualHeadModel(config, make_backbone(config.backbone, backbone_json(config), init_seed),
                    init_seed) {}

DualHeadModel::DualHeadModel(ModelConfig config, std::unique_ptr<Backbone> backbone,
                             std::uint64_t init_seed)
    : config_(std::move(config)), backbone_(std::move(backbone)) {
  if (!(config_.dropout >= 0.0 && config_.dropout < 1.0))
    throw ConfigError("dropout must be in [0, 1)");
  init_heads(init_seed);
}

void DualHeadModel::init_heads(std::uint64_t seed) {
  const std::size_t l = backbone_->feature_channels();
  tpc_weight_ = Parameter("tpc.weight", {kClasses, l});
  tpc_bias_ = Parameter("tpc.bias", {kClasses});
  tnc_weight_ = Parameter("tnc.weight", {kClasses, l});
  tnc_bias_ = Parameter("tnc.bias", {kClasses});
  alpha_weight_ = Parameter("alpha.weight", {l});
  alpha_bias_ = Parameter("alpha.bias", {1});
  Rng rng(derive_seed({seed, 0x4ead}));
  const double s = 1.0 / std::sqrt(static_cast<double>(l));
  normal_init(tpc_weight_.value, s, rng);
  normal_init(tnc_weight_.value, s, rng);
  alpha_bias_.value[0] = config_.alpha_bias_init;
}

std::vector<Parameter*> DualHeadModel::parameters() {
  auto out = backbone_->parameters();
  for (auto* p : {&tpc_weight_, &tpc_bias_, &tnc_weight_, &tnc_bias_, &alpha_weight_, &alpha_bias_})
    out.push_back(p);
  return out;
}

std::vector<const Parameter*> DualHeadModel::parameters() const {
  auto mutable_params = const_cast<DualHeadModel*>(this)->parameters();
  return {mutable_params.begin(), mutable_params.end()};
}

void DualHeadModel::zero_grad() {
  for (auto* p : parameters()) p->grad.fill(0.0);
}

ModelOutput DualHeadModel::forward(const Tensor& images, Mode mode, std::uint64_t dropout_seed,
                                   ForwardCache* cache) const {
  if (images.rank() != 4 || images.dim(3) != 3 || images.dim(1) != config_.input_height ||
      images.dim(2) != config_.input_width)
    throw ContractError("expected N x " + std::to_string(config_.input_height) + " x " +
                        std::to_string(config_.input_width) + " x 3 images, got " +
                        shape_string(images.shape()));
  const std::size_t n = images.dim(0), h = images.dim(1), w = images.dim(2);
  // Pixels in [0, 1] are mapped to [-1, 1] on the way in.
  Tensor nchw({n, 3, h, w});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t c = 0; c < 3; ++c)
          nchw.at(i, c, y, x) = 2.0 * images[((i * h + y) * w + x) * 3 + c] - 1.0;

  ModelOutput out;
  out.feature_maps = backbone_->forward(nchw, cache ? &cache->backbone : nullptr);
  const std::size_t l = out.feature_maps.dim(1);
  const std::size_t fhw = out.feature_maps.dim(2) * out.feature_maps.dim(3);
  out.pooled = Tensor({n, l});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < l; ++c) {
      const double* m = out.feature_maps.data() + (i * l + c) * fhw;
      double s = 0.0;
      for (std::size_t j = 0; j < fhw; ++j) s += m[j];
      out.pooled.at(i, c) = s / static_cast<double>(fhw);
    }

  Tensor scale({n, l}, 1.0);
  if (mode == Mode::train && config_.dropout > 0.0) {
    Rng rng(dropout_seed);
    const double keep = 1.0 / (1.0 - config_.dropout);
    for (auto& v : scale.values()) v = rng.uniform() < config_.dropout ? 0.0 : keep;
  }
  Tensor dropped({n, l});
  for (std::size_t i = 0; i < dropped.size(); ++i) dropped[i] = out.pooled[i] * scale[i];

  out.tpc_logits = Tensor({n, kClasses});
  out.tnc_logits = Tensor({n, kClasses});
  out.alpha = Tensor({n});
  for (std::size_t i = 0; i < n; ++i) {
    const double* x = dropped.data() + i * l;
    for (std::size_t c = 0; c < kClasses; ++c) {
      out.tpc_logits.at(i, c) = kernels::dot(l, tpc_weight_.value.data() + c * l, x) + tpc_bias_.value[c];
      out.tnc_logits.at(i, c) = kernels::dot(l, tnc_weight_.value.data() + c * l, x) + tnc_bias_.value[c];
    }
    out.alpha[i] = sigmoid(kernels::dot(l, alpha_weight_.value.data(), out.pooled.data() + i * l) +
                           alpha_bias_.value[0]);
  }
  out.tpc_probs = softmax_rows(out.tpc_logits);
  out.tnc_probs = softmax_rows(out.tnc_logits);

  if (cache) {
    cache->dropout_scale = std::move(scale);
    cache->dropped = std::move(dropped);
  }
  return out;
}

void DualHeadModel::backward(const ForwardCache& cache, const ModelOutput& out,
                             const OutputGrads& grads) {
  if (!cache.backbone) throw ContractError("backward needs a forward cache");
  const std::size_t n = out.pooled.dim(0), l = out.pooled.dim(1);
  Tensor d_dropped({n, l});
  Tensor d_pooled({n, l});

  auto head_backward = [&](const Tensor& dz, Parameter& weight, Parameter& bias) {
    if (dz.empty()) return;
    if (dz.shape() != std::vector<std::size_t>{n, kClasses})
      throw ContractError("logit gradient has shape " + shape_string(dz.shape()));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < kClasses; ++c) {
        const double g = dz.at(i, c);
        if (g == 0.0) continue;
        kernels::axpy(l, g, cache.dropped.data() + i * l, weight.grad.data() + c * l);
        kernels::axpy(l, g, weight.value.data() + c * l, d_dropped.data() + i * l);
        bias.grad[c] += g;
      }
  };
  head_backward(grads.tpc_logits, tpc_weight_, tpc_bias_);
  head_backward(grads.tnc_logits, tnc_weight_, tnc_bias_);
  for (std::size_t i = 0; i < d_pooled.size(); ++i) d_pooled[i] = d_dropped[i] * cache.dropout_scale[i];

  if (!grads.alpha.empty()) {
    if (grads.alpha.size() != n) throw ContractError("alpha gradient has wrong length");
    for (std::size_t i = 0; i < n; ++i) {
      const double a = out.alpha[i];
      const double da = grads.alpha[i] * a * (1.0 - a);
      if (da == 0.0) continue;
      kernels::axpy(l, da, out.pooled.data() + i * l, alpha_weight_.grad.data());
      kernels::axpy(l, da, alpha_weight_.value.data(), d_pooled.data() + i * l);
      alpha_bias_.grad[0] += da;
    }
  }

  Tensor d_features(out.feature_maps.shape());
  const std::size_t fhw = out.feature_maps.dim(2) * out.feature_maps.dim(3);
  for (std::size_t p = 0; p < n * l; ++p) {
    const double g = d_pooled[p] / static_cast<double>(fhw);
    std::fill(d_features.data() + p * fhw, d_features.data() + (p + 1) * fhw, g);
  }
  if (!grads.feature_maps.empty()) {
    require_same_shape(grads.feature_maps, d_features, "feature map gradient");
    for (std::size_t i = 0; i < d_features.size(); ++i) d_features[i] += grads.feature_maps[i];
  }
  backbone_->backward(*cache.backbone, d_features);
}

Tensor stack_images(std::span<const Image> images) {
  if (images.empty()) return Tensor({0, 0, 0, 3});
  const std::size_t h = images[0].height, w = images[0].width;
  Tensor out({images.size(), h, w, 3});
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].height != h || images[i].width != w)
      throw ContractError("images in a batch must share one size");
    std::copy(images[i].pixels.begin(), images[i].pixels.end(), out.data() + i * h * w * 3);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Attention maps

Tensor attention_maps(const Tensor& feature_maps, const Tensor& head_weights) {
  if (feature_maps.rank() != 4 || head_weights.rank() != 2 ||
      feature_maps.dim(1) != head_weights.dim(1))
    throw ContractError("attention maps: features " + shape_string(feature_maps.shape()) +
                        " incompatible with head weights " + shape_string(head_weights.shape()));
  const std::size_t n = feature_maps.dim(0), l = feature_maps.dim(1);
  const std::size_t c = head_weights.dim(0);
  const std::size_t hw = feature_maps.dim(2) * feature_maps.dim(3);
  Tensor maps({n, c, feature_maps.dim(2), feature_maps.dim(3)});
  for (std::size_t i = 0; i < n; ++i)
    kernels::gemm_nn(c, hw, l, head_weights.data(), feature_maps.data() + i * l * hw,
                     maps.data() + i * c * hw);
  return maps;
}

void attention_maps_backward(const Tensor& feature_maps, const Tensor& head_weights,
                             const Tensor& grad_maps, Tensor& grad_features, Tensor& grad_weights) {
  const std::size_t n = feature_maps.dim(0), l = feature_maps.dim(1);
  const std::size_t c = head_weights.dim(0);
  const std::size_t hw = feature_maps.dim(2) * feature_maps.dim(3);
  if (grad_maps.shape() != std::vector<std::size_t>{n, c, feature_maps.dim(2), feature_maps.dim(3)})
    throw ContractError("attention map gradient has shape " + shape_string(grad_maps.shape()));
  require_same_shape(grad_features, feature_maps, "attention feature gradient");
  require_same_shape(grad_weights, head_weights, "attention weight gradient");
  for (std::size_t i = 0; i < n; ++i) {
    const double* g = grad_maps.data() + i * c * hw;
    kernels::gemm_tn(l, hw, c, head_weights.data(), g, grad_features.data() + i * l * hw);
    kernels::gemm_nt(c, l, hw, g, feature_maps.data() + i * l * hw, grad_weights.data());
  }
}

Tensor flip_maps_horizontal(const Tensor& maps) {
  Tensor out(maps.shape());
  const std::size_t planes = maps.dim(0) * maps.dim(1), h = maps.dim(2), w = maps.dim(3);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        out[(p * h + y) * w + x] = maps[(p * h + y) * w + (w - 1 - x)];
  return out;
}

}  // namespace rfer
