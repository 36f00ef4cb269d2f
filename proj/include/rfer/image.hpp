#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace rfer {

// H x W x 3 image, channel-interleaved, values nominally in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, double fill = 0.0)
      : height(h), width(w), pixels(h * w * 3, fill) {}

  double& at(std::size_t y, std::size_t x, std::size_t c) noexcept {
    return pixels[(y * width + x) * 3 + c];
  }
  double at(std::size_t y, std::size_t x, std::size_t c) const noexcept {
    return pixels[(y * width + x) * 3 + c];
  }
  bool operator==(const Image&) const = default;
};

// 8-bit round trip: v -> round(clamp(v) * 255) / 255.
Image quantize8(const Image& image);

// Decodes PNG or JPEG (sniffed from the file signature) into RGB.
// Throws DataError naming the path on any decode failure.
Image read_image(const std::filesystem::path& path);

// Writes 8-bit RGB PNG. Throws DataError on I/O failure.
void write_png(const std::filesystem::path& path, const Image& image);

// Encodes 8-bit RGB PNG bytes without touching the filesystem.
std::vector<std::uint8_t> encode_png(const Image& image);

}  // namespace rfer
