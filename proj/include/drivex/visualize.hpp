#pragma once

// Keyframe overlays: red tint on patches marked 1 in the attention map,
// blue on patches marked 0, detection borders whose brightness follows the
// significance score, and generated / reference text in a bottom margin.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "drivex/geometry.hpp"
#include "drivex/image.hpp"

namespace drivex::visualize {

struct Raster {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> rgb;

  std::array<std::uint8_t, 3> at(int y, int x) const {
    const size_t i = (static_cast<size_t>(y) * width + x) * 3;
    return {rgb[i], rgb[i + 1], rgb[i + 2]};
  }
};

struct OverlaySpec {
  /// Absent map is drawn as all ones.
  std::optional<geometry::PatchAttentionMap> map;
  std::vector<geometry::Box> boxes;
  /// Per-box strength in [0, 1]; empty means full strength.
  std::vector<double> box_strength;
  std::string generated;
  std::string reference;
  int scale = 4;
  double tint_alpha = 0.4;
};

inline constexpr std::array<std::uint8_t, 3> kFocusTint = {255, 0, 0};
inline constexpr std::array<std::uint8_t, 3> kBackgroundTint = {0, 0, 255};

/// (1 - alpha) * pixel + alpha * tint, rounded, for a pixel in [0, 1].
std::uint8_t blend(float pixel, std::uint8_t tint, double alpha);

/// Canvas is (H * scale + H) x (W * scale): the upscaled frame above a text
/// margin one frame-height tall. Throws std::invalid_argument when the map
/// grid does not match the frame or the strengths do not match the boxes.
Raster render_overlay(const Image& keyframe, const OverlaySpec& spec);

void write_overlay(const std::filesystem::path& path, const Image& keyframe, const OverlaySpec& spec);

/// Draws text with a 5x7 bitmap font (letters are drawn as capitals),
/// wrapping at word boundaries. Returns the y just below the last line.
int draw_text(Raster& canvas, int x, int y, const std::string& text, std::array<std::uint8_t, 3> color);

}  // namespace drivex::visualize
