#include "drivex/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace drivex::geometry {

void validate(const Box& box) {
  const bool finite = std::isfinite(box.x_min) && std::isfinite(box.y_min) &&
                      std::isfinite(box.x_max) && std::isfinite(box.y_max);
  if (!finite || box.x_min > box.x_max || box.y_min > box.y_max) {
    throw std::invalid_argument("malformed box (" + std::to_string(box.x_min) + ", " +
                                std::to_string(box.y_min) + ", " + std::to_string(box.x_max) +
                                ", " + std::to_string(box.y_max) + ")");
  }
}

Box intersect(const Box& a, const Box& b) {
  Box out{std::max(a.x_min, b.x_min), std::max(a.y_min, b.y_min), std::min(a.x_max, b.x_max),
          std::min(a.y_max, b.y_max)};
  if (out.x_max < out.x_min) out.x_max = out.x_min;
  if (out.y_max < out.y_min) out.y_max = out.y_min;
  return out;
}

Box clip_to_frame(const Box& box, double width, double height) {
  Box out{std::clamp(box.x_min, 0.0, width), std::clamp(box.y_min, 0.0, height),
          std::clamp(box.x_max, 0.0, width), std::clamp(box.y_max, 0.0, height)};
  return out;
}

double iou(const Box& a, const Box& b) {
  validate(a);
  validate(b);
  const double inter = intersect(a, b).area();
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

PatchAttentionMap::PatchAttentionMap(int frame_height, int frame_width, int patch_size) {
  if (patch_size <= 0 || frame_height <= 0 || frame_width <= 0 ||
      frame_height % patch_size != 0 || frame_width % patch_size != 0) {
    throw std::invalid_argument("frame " + std::to_string(frame_height) + "x" +
                                std::to_string(frame_width) + " is not divisible by patch size " +
                                std::to_string(patch_size));
  }
  rows_ = frame_height / patch_size;
  cols_ = frame_width / patch_size;
  patch_size_ = patch_size;
  cells_.assign(static_cast<size_t>(rows_ * cols_), 0);
}

PatchAttentionMap PatchAttentionMap::filled(int frame_height, int frame_width, int patch_size,
                                            bool value) {
  PatchAttentionMap map(frame_height, frame_width, patch_size);
  std::fill(map.cells_.begin(), map.cells_.end(), value ? 1 : 0);
  return map;
}

int PatchAttentionMap::count() const {
  return static_cast<int>(std::count(cells_.begin(), cells_.end(), 1));
}

bool PatchAttentionMap::all_of(bool value) const {
  const unsigned char v = value ? 1 : 0;
  return std::all_of(cells_.begin(), cells_.end(), [v](unsigned char c) { return c == v; });
}

PatchAttentionMap project_to_patch_map(std::span<const Box> boxes, int frame_height,
                                       int frame_width, int patch_size) {
  PatchAttentionMap map(frame_height, frame_width, patch_size);
  const double p = patch_size;
  for (const Box& raw : boxes) {
    validate(raw);
    const Box box = clip_to_frame(raw, frame_width, frame_height);
    if (box.width() <= 0.0 || box.height() <= 0.0) continue;
    // Patch c spans [c*p, (c+1)*p); overlap is positive iff x_min < (c+1)p and x_max > c*p.
    const int c0 = static_cast<int>(std::floor(box.x_min / p));
    const int c1 = static_cast<int>(std::ceil(box.x_max / p)) - 1;
    const int r0 = static_cast<int>(std::floor(box.y_min / p));
    const int r1 = static_cast<int>(std::ceil(box.y_max / p)) - 1;
    for (int r = std::max(r0, 0); r <= std::min(r1, map.rows() - 1); ++r) {
      for (int c = std::max(c0, 0); c <= std::min(c1, map.cols() - 1); ++c) {
        map.set(r, c, true);
      }
    }
  }
  return map;
}

std::string_view position_label(const Box& box, double frame_width) {
  const double cx = box.center_x();
  if (cx < frame_width / 3.0) return "on the left";
  if (cx < 2.0 * frame_width / 3.0) return "ahead";
  return "on the right";
}

}  // namespace drivex::geometry
