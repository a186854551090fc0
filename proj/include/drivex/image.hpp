#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace drivex {

/// H x W x 3 raster, channel-interleaved, values in [0,1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w, float fill = 0.0f)
      : height(h), width(w), pixels(static_cast<size_t>(h) * w * 3, fill) {}

  float& at(int y, int x, int c) { return pixels[(static_cast<size_t>(y) * width + x) * 3 + c]; }
  float at(int y, int x, int c) const {
    return pixels[(static_cast<size_t>(y) * width + x) * 3 + c];
  }

  bool operator==(const Image&) const = default;
};

/// Rounds to the nearest representable 8-bit level so PNG storage is lossless.
inline float quantize_unit(float v) {
  if (!(v > 0.0f)) return 0.0f;
  if (v >= 1.0f) return 1.0f;
  return static_cast<float>(static_cast<int>(v * 255.0f + 0.5f)) / 255.0f;
}

void quantize(Image& image);

/// 8-bit RGB PNG. Throws std::runtime_error on I/O failure.
void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

/// Raw 8-bit RGB buffer writer, used by the visualizer.
void write_png_rgb8(const std::filesystem::path& path, int height, int width,
                    const std::vector<std::uint8_t>& rgb);

}  // namespace drivex
