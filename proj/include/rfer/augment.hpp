#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

#include "rfer/image.hpp"
#include "rfer/rng.hpp"

namespace rfer {

struct AugmentPolicy {
  std::size_t crop_padding = 4;
  std::size_t target_height = 32;
  std::size_t target_width = 32;
  std::size_t rand_ops = 2;
  int rand_magnitude = 9;  // 0..10
};

// Geometry drawn by the weak pipeline. crop offsets index the reflect-padded
// image; (crop_padding, crop_padding) is the centered, identity crop.
struct WeakDraws {
  std::size_t crop_y = 0;
  std::size_t crop_x = 0;
  bool flip = false;
};

WeakDraws draw_weak(const AugmentPolicy& policy, Rng& rng);
Image apply_weak(const Image& image, const AugmentPolicy& policy, const WeakDraws& draws);

// Random crop after reflect padding, horizontal flip with p = 0.5, resize.
Image weak_augment(const Image& image, const AugmentPolicy& policy, Rng& rng);

enum class RandOp {
  rotate,
  translate,
  shear,
  contrast,
  brightness,
  sharpness,
  posterize,
  solarize,
  equalize,
};
inline constexpr std::size_t kNumRandOps = 9;
std::string_view rand_op_name(RandOp op) noexcept;

struct RandOpDraw {
  RandOp op = RandOp::rotate;
  bool negate = false;     // direction of the magnitude for signed ops
  bool vertical = false;   // axis for translate / shear
};

std::vector<RandOpDraw> draw_rand_ops(const AugmentPolicy& policy, Rng& rng);
Image apply_rand_op(const Image& image, const RandOpDraw& draw, int magnitude);

// weak_augment followed by policy.rand_ops operations at policy.rand_magnitude.
// Output is clamped to [0, 1].
Image strong_augment(const Image& image, const AugmentPolicy& policy, Rng& rng);

struct AugmentedPair {
  Image weak;
  Image strong;
  bool flip_applied_strong = false;  // strong view mirrored relative to weak
};

// Both views are drawn from the same per-sample stream, so they share crop and
// flip. With flip_strong the strong view is additionally mirrored; consumers
// comparing spatial maps must mirror back.
AugmentedPair augment_pair(const Image& image, const AugmentPolicy& policy,
                           std::uint64_t sample_seed, bool flip_strong);

Image horizontal_flip(const Image& image);
Image resize_bilinear(const Image& image, std::size_t height, std::size_t width);
Image reflect_pad(const Image& image, std::size_t pad);

}  // namespace rfer
