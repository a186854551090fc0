#pragma once

// Rasterisation oracles for box arithmetic. Boxes are expected to have
// coordinates on a 1/resolution grid so cell counting is exact.

#include <algorithm>
#include <cmath>
#include <vector>

#include "drivex/geometry.hpp"

namespace drivex::oracle {

inline bool contains_point(const geometry::Box& b, double x, double y) {
  return x >= b.x_min && x < b.x_max && y >= b.y_min && y < b.y_max;
}

/// Counts sub-pixel cells whose centers fall inside each box.
inline double raster_iou(const geometry::Box& a, const geometry::Box& b, int resolution) {
  const double lo_x = std::floor(std::min(a.x_min, b.x_min));
  const double hi_x = std::ceil(std::max(a.x_max, b.x_max));
  const double lo_y = std::floor(std::min(a.y_min, b.y_min));
  const double hi_y = std::ceil(std::max(a.y_max, b.y_max));
  long inter = 0;
  long uni = 0;
  const double step = 1.0 / resolution;
  for (double y = lo_y + 0.5 * step; y < hi_y; y += step) {
    for (double x = lo_x + 0.5 * step; x < hi_x; x += step) {
      const bool in_a = contains_point(a, x, y);
      const bool in_b = contains_point(b, x, y);
      inter += (in_a && in_b) ? 1 : 0;
      uni += (in_a || in_b) ? 1 : 0;
    }
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// Marks patch (r, c) iff a sample point of some box falls inside it.
inline std::vector<unsigned char> brute_force_patch_map(const std::vector<geometry::Box>& boxes,
                                                        int height, int width, int patch,
                                                        int resolution) {
  const int rows = height / patch;
  const int cols = width / patch;
  std::vector<unsigned char> grid(static_cast<size_t>(rows * cols), 0);
  const double step = 1.0 / resolution;
  for (int sy = 0; sy < height * resolution; ++sy) {
    for (int sx = 0; sx < width * resolution; ++sx) {
      const double x = (sx + 0.5) * step;
      const double y = (sy + 0.5) * step;
      for (const auto& b : boxes) {
        if (contains_point(b, x, y)) {
          grid[static_cast<size_t>((sy / resolution / patch) * cols + (sx / resolution / patch))] = 1;
          break;
        }
      }
    }
  }
  return grid;
}

}  // namespace drivex::oracle
