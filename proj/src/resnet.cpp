#include <algorithm>
#include <cmath>
#include <limits>

#include "rfer/errors.hpp"
#include "rfer/kernels.hpp"
#include "rfer/model.hpp"
#include "rfer/rng.hpp"

namespace rfer {
namespace {

std::size_t out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

struct Conv {
  Parameter weight;  // O x C x k x k, no bias (a folded norm follows)
  std::size_t k = 3, stride = 1, pad = 1;
};

// Frozen batch norm: y = weight[c] * x + bias[c].
struct Affine {
  Parameter weight, bias;
};

struct Block {
  Conv conv1, conv2;
  Affine bn1, bn2;
  bool has_down = false;
  Conv down;
  Affine down_bn;
};

// col[(c*k + ky)*k + kx][oy*ow + ox] = in[c][oy*s + ky - p][ox*s + kx - p], 0 outside.
void im2col(const double* in, std::size_t c_in, std::size_t h, std::size_t w, const Conv& conv,
            std::size_t oh, std::size_t ow, double* col) {
  const auto k = conv.k, s = conv.stride;
  const auto p = static_cast<std::ptrdiff_t>(conv.pad);
  for (std::size_t c = 0; c < c_in; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        double* dst = col + ((c * k + ky) * k + kx) * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * s + ky) - p;
          double* row = dst + oy * ow;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(row, row + ow, 0.0);
            continue;
          }
          const double* src = in + (c * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * s + kx) - p;
            row[ox] = ix < 0 || ix >= static_cast<std::ptrdiff_t>(w) ? 0.0 : src[ix];
          }
        }
      }
}

void col2im(const double* col, std::size_t c_in, std::size_t h, std::size_t w, const Conv& conv,
            std::size_t oh, std::size_t ow, double* out) {
  const auto k = conv.k, s = conv.stride;
  const auto p = static_cast<std::ptrdiff_t>(conv.pad);
  for (std::size_t c = 0; c < c_in; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        const double* src = col + ((c * k + ky) * k + kx) * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * s + ky) - p;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          double* dst = out + (c * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * s + kx) - p;
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) dst[ix] += src[oy * ow + ox];
          }
        }
      }
}

Tensor conv_forward(const Conv& conv, const Tensor& x) {
  const std::size_t n = x.dim(0), c_in = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t c_out = conv.weight.value.dim(0), kk = c_in * conv.k * conv.k;
  const std::size_t oh = out_extent(h, conv.k, conv.stride, conv.pad);
  const std::size_t ow = out_extent(w, conv.k, conv.stride, conv.pad);
  Tensor y({n, c_out, oh, ow});
  std::vector<double> col(kk * oh * ow);
  for (std::size_t i = 0; i < n; ++i) {
    im2col(x.data() + i * c_in * h * w, c_in, h, w, conv, oh, ow, col.data());
    kernels::gemm_nn(c_out, oh * ow, kk, conv.weight.value.data(), col.data(),
                     y.data() + i * c_out * oh * ow);
  }
  return y;
}

// Accumulates the weight gradient; returns dL/dx when asked.
Tensor conv_backward(Conv& conv, const Tensor& x, const Tensor& gy, bool need_input_grad) {
  const std::size_t n = x.dim(0), c_in = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t c_out = gy.dim(1), oh = gy.dim(2), ow = gy.dim(3);
  const std::size_t kk = c_in * conv.k * conv.k, ohw = oh * ow;
  Tensor gx;
  if (need_input_grad) gx = Tensor(x.shape());
  std::vector<double> col(kk * ohw), dcol;
  if (need_input_grad) dcol.resize(kk * ohw);
  for (std::size_t i = 0; i < n; ++i) {
    const double* g = gy.data() + i * c_out * ohw;
    im2col(x.data() + i * c_in * h * w, c_in, h, w, conv, oh, ow, col.data());
    kernels::gemm_nt(c_out, kk, ohw, g, col.data(), conv.weight.grad.data());
    if (need_input_grad) {
      std::fill(dcol.begin(), dcol.end(), 0.0);
      kernels::gemm_tn(kk, ohw, c_out, conv.weight.value.data(), g, dcol.data());
      col2im(dcol.data(), c_in, h, w, conv, oh, ow, gx.data() + i * c_in * h * w);
    }
  }
  return gx;
}

Tensor affine_forward(const Affine& a, const Tensor& x) {
  Tensor y(x.shape());
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double s = a.weight.value[ch], b = a.bias.value[ch];
      const double* src = x.data() + (i * c + ch) * hw;
      double* dst = y.data() + (i * c + ch) * hw;
      for (std::size_t j = 0; j < hw; ++j) dst[j] = s * src[j] + b;
    }
  return y;
}

Tensor affine_backward(Affine& a, const Tensor& x, const Tensor& gy) {
  Tensor gx(x.shape());
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double s = a.weight.value[ch];
      const double* xs = x.data() + (i * c + ch) * hw;
      const double* g = gy.data() + (i * c + ch) * hw;
      double* d = gx.data() + (i * c + ch) * hw;
      double ds = 0.0, db = 0.0;
      for (std::size_t j = 0; j < hw; ++j) {
        ds += g[j] * xs[j];
        db += g[j];
        d[j] = s * g[j];
      }
      a.weight.grad[ch] += ds;
      a.bias.grad[ch] += db;
    }
  return gx;
}

void relu_inplace(Tensor& t) {
  for (auto& v : t.values()) v = v > 0.0 ? v : 0.0;
}

// Zeroes gradient entries where the ReLU output was not positive.
void relu_mask(Tensor& grad, const Tensor& out) {
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!(out[i] > 0.0)) grad[i] = 0.0;
}

struct BlockCache {
  Tensor x, c1, r1, c2, d, out;
};

struct ResNetCache final : BackboneCache {
  Tensor input, c0, r0;
  std::vector<std::size_t> pool_argmax;  // flat index into r0 per pooled output
  std::vector<std::size_t> pooled_shape;
  std::vector<BlockCache> blocks;
};

}  // namespace

struct ResNet18Backbone::Layers {
  Conv conv1;
  Affine bn1;
  std::vector<Block> blocks;  // layer1.0, layer1.1, ..., layer4.1
};

namespace {

Conv make_conv(const std::string& name, std::size_t c_out, std::size_t c_in, std::size_t k,
               std::size_t stride, std::size_t pad, Rng& rng) {
  Conv c;
  c.weight = Parameter(name + ".weight", {c_out, c_in, k, k});
  c.k = k, c.stride = stride, c.pad = pad;
  const double sd = std::sqrt(2.0 / static_cast<double>(c_out * k * k));
  for (auto& v : c.weight.value.values()) v = sd * rng.normal();
  return c;
}

Affine make_affine(const std::string& name, std::size_t channels) {
  Affine a;
  a.weight = Parameter(name + ".weight", {channels});
  a.bias = Parameter(name + ".bias", {channels});
  a.weight.value.fill(1.0);
  return a;
}

Tensor block_forward(const Block& b, const Tensor& x, BlockCache* cache) {
  Tensor c1 = conv_forward(b.conv1, x);
  Tensor r1 = affine_forward(b.bn1, c1);
  relu_inplace(r1);
  Tensor c2 = conv_forward(b.conv2, r1);
  Tensor out = affine_forward(b.bn2, c2);
  Tensor d;
  if (b.has_down) {
    d = conv_forward(b.down, x);
    const Tensor shortcut = affine_forward(b.down_bn, d);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += shortcut[i];
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += x[i];
  }
  relu_inplace(out);
  if (cache) *cache = {x, std::move(c1), std::move(r1), std::move(c2), std::move(d), out};
  return out;
}

Tensor block_backward(Block& b, const BlockCache& c, Tensor grad) {
  relu_mask(grad, c.out);
  Tensor g = affine_backward(b.bn2, c.c2, grad);
  g = conv_backward(b.conv2, c.r1, g, true);
  relu_mask(g, c.r1);
  g = affine_backward(b.bn1, c.c1, g);
  Tensor gx = conv_backward(b.conv1, c.x, g, true);
  if (b.has_down) {
    const Tensor gd = affine_backward(b.down_bn, c.d, grad);
    const Tensor gs = conv_backward(b.down, c.x, gd, true);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gs[i];
  } else {
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += grad[i];
  }
  return gx;
}

}  // namespace

ResNet18Backbone::ResNet18Backbone(std::size_t width, std::size_t input_height,
                                   std::size_t input_width, std::uint64_t seed)
    : width_(width), input_height_(input_height), input_width_(input_width),
      layers_(std::make_unique<Layers>()) {
  if (width_ == 0) throw ConfigError("resnet18 width must be positive");
  if (input_height_ == 0 || input_width_ == 0) throw ConfigError("resnet18 input must be non-empty");
  Rng rng(derive_seed({seed, 0x18}));
  layers_->conv1 = make_conv("conv1", width_, 3, 7, 2, 3, rng);
  layers_->bn1 = make_affine("bn1", width_);
  std::size_t in_ch = width_;
  for (std::size_t stage = 0; stage < 4; ++stage) {
    const std::size_t out_ch = width_ << stage;
    for (std::size_t i = 0; i < 2; ++i) {
      const std::string prefix = "layer" + std::to_string(stage + 1) + "." + std::to_string(i);
      const std::size_t stride = stage > 0 && i == 0 ? 2 : 1;
      Block b;
      b.conv1 = make_conv(prefix + ".conv1", out_ch, in_ch, 3, stride, 1, rng);
      b.bn1 = make_affine(prefix + ".bn1", out_ch);
      b.conv2 = make_conv(prefix + ".conv2", out_ch, out_ch, 3, 1, 1, rng);
      b.bn2 = make_affine(prefix + ".bn2", out_ch);
      if (stride != 1 || in_ch != out_ch) {
        b.has_down = true;
        b.down = make_conv(prefix + ".downsample.0", out_ch, in_ch, 1, stride, 0, rng);
        b.down_bn = make_affine(prefix + ".downsample.1", out_ch);
      }
      layers_->blocks.push_back(std::move(b));
      in_ch = out_ch;
    }
  }
}

ResNet18Backbone::~ResNet18Backbone() = default;

nlohmann::json ResNet18Backbone::describe() const {
  return {{"width", width_}, {"input_height", input_height_}, {"input_width", input_width_}};
}

std::vector<Parameter*> ResNet18Backbone::parameters() {
  std::vector<Parameter*> out{&layers_->conv1.weight, &layers_->bn1.weight, &layers_->bn1.bias};
  for (auto& b : layers_->blocks) {
    for (auto* p : {&b.conv1.weight, &b.bn1.weight, &b.bn1.bias, &b.conv2.weight, &b.bn2.weight,
                    &b.bn2.bias})
      out.push_back(p);
    if (b.has_down)
      for (auto* p : {&b.down.weight, &b.down_bn.weight, &b.down_bn.bias}) out.push_back(p);
  }
  return out;
}

void ResNet18Backbone::load_weights(const std::filesystem::path& checkpoint) {
  const auto stored = read_checkpoint_parameters(checkpoint);
  for (auto* p : parameters()) {
    const auto it = stored.find(p->name);
    if (it == stored.end())
      throw ContractError(checkpoint.string() + " has no parameter " + p->name);
    if (it->second.shape() != p->value.shape())
      throw ContractError(checkpoint.string() + " parameter " + p->name +
                          shape_string(it->second.shape()) + " does not match " +
                          shape_string(p->value.shape()));
    p->value = it->second;
  }
}

Tensor ResNet18Backbone::forward(const Tensor& input, std::unique_ptr<BackboneCache>* cache) const {
  if (input.rank() != 4 || input.dim(1) != 3 || input.dim(2) != input_height_ ||
      input.dim(3) != input_width_)
    throw ContractError("resnet18 backbone expects Nx3x" + std::to_string(input_height_) + "x" +
                        std::to_string(input_width_) + " input, got " + shape_string(input.shape()));
  auto rc = cache ? std::make_unique<ResNetCache>() : nullptr;
  Tensor c0 = conv_forward(layers_->conv1, input);
  Tensor r0 = affine_forward(layers_->bn1, c0);
  relu_inplace(r0);

  // 3x3 max pool, stride 2, padding 1; padding never wins.
  const std::size_t n = r0.dim(0), c = r0.dim(1), h = r0.dim(2), w = r0.dim(3);
  const std::size_t ph = out_extent(h, 3, 2, 1), pw = out_extent(w, 3, 2, 1);
  Tensor x({n, c, ph, pw});
  std::vector<std::size_t> argmax(x.size());
  for (std::size_t p = 0; p < n * c; ++p)
    for (std::size_t oy = 0; oy < ph; ++oy)
      for (std::size_t ox = 0; ox < pw; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t at = 0;
        for (std::size_t ky = 0; ky < 3; ++ky)
          for (std::size_t kx = 0; kx < 3; ++kx) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(2 * oy + ky) - 1;
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(2 * ox + kx) - 1;
            if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(h) ||
                ix >= static_cast<std::ptrdiff_t>(w))
              continue;
            const std::size_t idx = p * h * w + static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix);
            if (r0[idx] > best) best = r0[idx], at = idx;
          }
        const std::size_t o = (p * ph + oy) * pw + ox;
        x[o] = best;
        argmax[o] = at;
      }

  if (rc) {
    rc->input = input;
    rc->c0 = std::move(c0);
    rc->r0 = std::move(r0);
    rc->pool_argmax = std::move(argmax);
    rc->pooled_shape = x.shape();
    rc->blocks.resize(layers_->blocks.size());
  }
  for (std::size_t i = 0; i < layers_->blocks.size(); ++i)
    x = block_forward(layers_->blocks[i], x, rc ? &rc->blocks[i] : nullptr);
  if (cache) *cache = std::move(rc);
  return x;
}

void ResNet18Backbone::backward(const BackboneCache& cache_base, const Tensor& grad_features) {
  const auto& cache = dynamic_cast<const ResNetCache&>(cache_base);
  Tensor grad = grad_features;
  for (std::size_t i = layers_->blocks.size(); i-- > 0;)
    grad = block_backward(layers_->blocks[i], cache.blocks[i], std::move(grad));
  Tensor g0(cache.r0.shape());
  for (std::size_t o = 0; o < grad.size(); ++o) g0[cache.pool_argmax[o]] += grad[o];
  relu_mask(g0, cache.r0);
  g0 = affine_backward(layers_->bn1, cache.c0, g0);
  conv_backward(layers_->conv1, cache.input, g0, false);
}

}  // namespace rfer
