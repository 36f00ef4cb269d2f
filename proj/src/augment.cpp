#include "rfer/augment.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "rfer/errors.hpp"

namespace rfer {
namespace {

constexpr double kFill = 0.5;
constexpr double kPi = 3.14159265358979323846;

void clamp01(Image& img) {
  for (auto& v : img.pixels) v = std::clamp(v, 0.0, 1.0);
}

double sample_bilinear(const Image& img, double y, double x, std::size_t c) {
  if (y < -0.5 || x < -0.5 || y > static_cast<double>(img.height) - 0.5 ||
      x > static_cast<double>(img.width) - 0.5)
    return kFill;
  const double yc = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
  const double xc = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
  const auto y0 = static_cast<std::size_t>(std::floor(yc));
  const auto x0 = static_cast<std::size_t>(std::floor(xc));
  const std::size_t y1 = std::min(y0 + 1, img.height - 1);
  const std::size_t x1 = std::min(x0 + 1, img.width - 1);
  const double fy = yc - static_cast<double>(y0), fx = xc - static_cast<double>(x0);
  const double top = img.at(y0, x0, c) * (1 - fx) + img.at(y0, x1, c) * fx;
  const double bot = img.at(y1, x0, c) * (1 - fx) + img.at(y1, x1, c) * fx;
  return top * (1 - fy) + bot * fy;
}

// out(y, x) = in(A * (y - cy, x - cx) + (cy, cx) + shift), i.e. an inverse map.
Image affine(const Image& img, const std::array<double, 4>& a, double shift_y, double shift_x) {
  Image out(img.height, img.width);
  const double cy = (static_cast<double>(img.height) - 1) / 2;
  const double cx = (static_cast<double>(img.width) - 1) / 2;
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
      const double sy = a[0] * dy + a[1] * dx + cy + shift_y;
      const double sx = a[2] * dy + a[3] * dx + cx + shift_x;
      for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = sample_bilinear(img, sy, sx, c);
    }
  }
  return out;
}

double luminance_mean(const Image& img) {
  double s = 0.0;
  for (std::size_t i = 0; i < img.height * img.width; ++i)
    s += 0.299 * img.pixels[3 * i] + 0.587 * img.pixels[3 * i + 1] + 0.114 * img.pixels[3 * i + 2];
  return s / static_cast<double>(img.height * img.width);
}

Image smooth(const Image& img) {
  // PIL's SMOOTH kernel; border pixels are left as-is.
  Image out = img;
  for (std::size_t y = 1; y + 1 < img.height; ++y)
    for (std::size_t x = 1; x + 1 < img.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        double s = 4.0 * img.at(y, x, c);
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) s += img.at(y + dy, x + dx, c);
        out.at(y, x, c) = s / 13.0;
      }
  return out;
}

Image equalize(const Image& img) {
  Image out = img;
  const std::size_t n = img.height * img.width;
  for (std::size_t c = 0; c < 3; ++c) {
    std::array<std::size_t, 256> hist{};
    for (std::size_t i = 0; i < n; ++i)
      ++hist[static_cast<std::size_t>(std::lround(std::clamp(img.pixels[3 * i + c], 0.0, 1.0) * 255))];
    std::size_t cdf_min = 0;
    for (auto h : hist)
      if (h) {
        cdf_min = h;
        break;
      }
    if (n == cdf_min) continue;  // flat channel
    std::array<double, 256> lut{};
    std::size_t cdf = 0;
    for (std::size_t v = 0; v < 256; ++v) {
      cdf += hist[v];
      lut[v] = cdf <= cdf_min ? 0.0
                              : static_cast<double>(cdf - cdf_min) / static_cast<double>(n - cdf_min);
    }
    for (std::size_t i = 0; i < n; ++i)
      out.pixels[3 * i + c] =
          lut[static_cast<std::size_t>(std::lround(std::clamp(img.pixels[3 * i + c], 0.0, 1.0) * 255))];
  }
  return out;
}

}  // namespace

Image horizontal_flip(const Image& image) {
  Image out(image.height, image.width);
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < image.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = image.at(y, image.width - 1 - x, c);
  return out;
}

Image resize_bilinear(const Image& image, std::size_t height, std::size_t width) {
  if (image.height == height && image.width == width) return image;
  Image out(height, width);
  const double sy = static_cast<double>(image.height) / static_cast<double>(height);
  const double sx = static_cast<double>(image.width) / static_cast<double>(width);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const double src_y = (static_cast<double>(y) + 0.5) * sy - 0.5;
      const double src_x = (static_cast<double>(x) + 0.5) * sx - 0.5;
      for (std::size_t c = 0; c < 3; ++c)
        out.at(y, x, c) = sample_bilinear(image, std::clamp(src_y, 0.0, image.height - 1.0),
                                          std::clamp(src_x, 0.0, image.width - 1.0), c);
    }
  return out;
}

Image reflect_pad(const Image& image, std::size_t pad) {
  if (pad == 0) return image;
  if (pad >= image.height || pad >= image.width)
    throw ContractError("reflect padding must be smaller than the image");
  const auto reflect = [](std::ptrdiff_t i, std::ptrdiff_t n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * (n - 1) - i;
    return i;
  };
  Image out(image.height + 2 * pad, image.width + 2 * pad);
  const auto h = static_cast<std::ptrdiff_t>(image.height);
  const auto w = static_cast<std::ptrdiff_t>(image.width);
  const auto p = static_cast<std::ptrdiff_t>(pad);
  for (std::size_t y = 0; y < out.height; ++y)
    for (std::size_t x = 0; x < out.width; ++x) {
      const auto sy = static_cast<std::size_t>(reflect(static_cast<std::ptrdiff_t>(y) - p, h));
      const auto sx = static_cast<std::size_t>(reflect(static_cast<std::ptrdiff_t>(x) - p, w));
      for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = image.at(sy, sx, c);
    }
  return out;
}

WeakDraws draw_weak(const AugmentPolicy& policy, Rng& rng) {
  WeakDraws d;
  const std::uint64_t span = 2 * policy.crop_padding + 1;
  d.crop_y = static_cast<std::size_t>(rng.below(span));
  d.crop_x = static_cast<std::size_t>(rng.below(span));
  d.flip = rng.bernoulli(0.5);
  return d;
}

Image apply_weak(const Image& image, const AugmentPolicy& policy, const WeakDraws& draws) {
  if (image.height == 0 || image.width == 0 || image.pixels.size() != image.height * image.width * 3)
    throw DataError("image does not decode to HxWx3");
  Image cropped(image.height, image.width);
  if (policy.crop_padding == 0) {
    cropped = image;
  } else {
    const Image padded = reflect_pad(image, policy.crop_padding);
    for (std::size_t y = 0; y < image.height; ++y)
      for (std::size_t x = 0; x < image.width; ++x)
        for (std::size_t c = 0; c < 3; ++c)
          cropped.at(y, x, c) = padded.at(y + draws.crop_y, x + draws.crop_x, c);
  }
  if (draws.flip) cropped = horizontal_flip(cropped);
  Image out = resize_bilinear(cropped, policy.target_height, policy.target_width);
  clamp01(out);
  return out;
}

Image weak_augment(const Image& image, const AugmentPolicy& policy, Rng& rng) {
  const auto draws = draw_weak(policy, rng);
  return apply_weak(image, policy, draws);
}

std::string_view rand_op_name(RandOp op) noexcept {
  switch (op) {
    case RandOp::rotate: return "rotate";
    case RandOp::translate: return "translate";
    case RandOp::shear: return "shear";
    case RandOp::contrast: return "contrast";
    case RandOp::brightness: return "brightness";
    case RandOp::sharpness: return "sharpness";
    case RandOp::posterize: return "posterize";
    case RandOp::solarize: return "solarize";
    case RandOp::equalize: return "equalize";
  }
  return "?";
}

std::vector<RandOpDraw> draw_rand_ops(const AugmentPolicy& policy, Rng& rng) {
  std::vector<RandOpDraw> ops(policy.rand_ops);
  for (auto& d : ops) {
    d.op = static_cast<RandOp>(rng.below(kNumRandOps));
    d.negate = rng.bernoulli(0.5);
    d.vertical = rng.bernoulli(0.5);
  }
  return ops;
}

Image apply_rand_op(const Image& image, const RandOpDraw& draw, int magnitude) {
  const double level = std::clamp(magnitude, 0, 10) / 10.0;
  const double sign = draw.negate ? -1.0 : 1.0;
  const double factor = 1.0 + sign * 0.9 * level;  // enhance factor in [0.1, 1.9]
  Image out;
  switch (draw.op) {
    case RandOp::rotate: {
      const double t = sign * 30.0 * level * kPi / 180.0;
      out = affine(image, {std::cos(t), -std::sin(t), std::sin(t), std::cos(t)}, 0, 0);
      break;
    }
    case RandOp::translate: {
      const double shift_y = draw.vertical ? sign * 0.3 * level * image.height : 0.0;
      const double shift_x = draw.vertical ? 0.0 : sign * 0.3 * level * image.width;
      out = affine(image, {1, 0, 0, 1}, shift_y, shift_x);
      break;
    }
    case RandOp::shear: {
      const double s = sign * 0.3 * level;
      out = draw.vertical ? affine(image, {1, s, 0, 1}, 0, 0) : affine(image, {1, 0, s, 1}, 0, 0);
      break;
    }
    case RandOp::contrast: {
      const double mean = luminance_mean(image);
      out = image;
      for (auto& v : out.pixels) v = mean + factor * (v - mean);
      break;
    }
    case RandOp::brightness:
      out = image;
      for (auto& v : out.pixels) v *= factor;
      break;
    case RandOp::sharpness: {
      const Image blurred = smooth(image);
      out = image;
      for (std::size_t i = 0; i < out.pixels.size(); ++i)
        out.pixels[i] = blurred.pixels[i] + factor * (image.pixels[i] - blurred.pixels[i]);
      break;
    }
    case RandOp::posterize: {
      const int bits = 8 - static_cast<int>(std::lround(4.0 * level));
      const unsigned mask = (0xFFu << (8 - bits)) & 0xFFu;
      out = image;
      for (auto& v : out.pixels)
        v = static_cast<double>(static_cast<unsigned>(std::lround(std::clamp(v, 0.0, 1.0) * 255)) &
                                mask) /
            255.0;
      break;
    }
    case RandOp::solarize: {
      const double threshold = 1.0 - level;
      out = image;
      for (auto& v : out.pixels)
        if (v >= threshold) v = 1.0 - v;
      break;
    }
    case RandOp::equalize:
      out = equalize(image);
      break;
  }
  clamp01(out);
  return out;
}

Image strong_augment(const Image& image, const AugmentPolicy& policy, Rng& rng) {
  Image out = weak_augment(image, policy, rng);
  for (const auto& d : draw_rand_ops(policy, rng)) out = apply_rand_op(out, d, policy.rand_magnitude);
  clamp01(out);
  return out;
}

AugmentedPair augment_pair(const Image& image, const AugmentPolicy& policy,
                           std::uint64_t sample_seed, bool flip_strong) {
  AugmentedPair pair;
  Rng weak_rng(sample_seed);
  pair.weak = weak_augment(image, policy, weak_rng);
  Rng strong_rng(sample_seed);
  pair.strong = strong_augment(image, policy, strong_rng);
  if (flip_strong) pair.strong = horizontal_flip(pair.strong);
  pair.flip_applied_strong = flip_strong;
  return pair;
}

}  // namespace rfer
