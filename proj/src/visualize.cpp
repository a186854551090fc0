#include "drivex/visualize.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace drivex::visualize {

namespace {

// Rows top to bottom, bit 4 = leftmost column.
struct Glyph {
  char ch;
  std::uint8_t rows[7];
};

constexpr Glyph kFont[] = {
    {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}}, {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
    {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}}, {'D', {0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E}},
    {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}}, {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
    {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}}, {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
    {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}}, {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
    {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}}, {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
    {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}}, {'N', {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11}},
    {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}}, {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
    {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}}, {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
    {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}}, {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
    {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}}, {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
    {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}}, {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
    {'Y', {0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04}}, {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
    {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}}, {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}}, {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
    {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}}, {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
    {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}}, {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
    {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}}, {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
    {':', {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00}}, {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
    {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}}, {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F}},
    {'<', {0x02, 0x04, 0x08, 0x10, 0x08, 0x04, 0x02}}, {'>', {0x08, 0x04, 0x02, 0x01, 0x02, 0x04, 0x08}},
    {' ', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},
};
constexpr Glyph kUnknown = {'?', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x00, 0x04}};
constexpr int kAdvance = 6;
constexpr int kLineHeight = 10;

const Glyph& glyph_for(char c) {
  const char up = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  for (const auto& g : kFont) {
    if (g.ch == up) return g;
  }
  return kUnknown;
}

void put(Raster& r, int y, int x, std::array<std::uint8_t, 3> c) {
  if (y < 0 || x < 0 || y >= r.height || x >= r.width) return;
  const size_t i = (static_cast<size_t>(y) * r.width + x) * 3;
  r.rgb[i] = c[0];
  r.rgb[i + 1] = c[1];
  r.rgb[i + 2] = c[2];
}

}  // namespace

std::uint8_t blend(float pixel, std::uint8_t tint, double alpha) {
  const double v = (1.0 - alpha) * std::clamp(static_cast<double>(pixel), 0.0, 1.0) * 255.0 + alpha * tint;
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
}

int draw_text(Raster& canvas, int x, int y, const std::string& text, std::array<std::uint8_t, 3> color) {
  const int max_chars = std::max(1, (canvas.width - x) / kAdvance);
  std::istringstream in(text);
  std::vector<std::string> lines(1);
  std::string word;
  while (in >> word) {
    std::string& cur = lines.back();
    const size_t need = cur.empty() ? word.size() : cur.size() + 1 + word.size();
    if (!cur.empty() && need > static_cast<size_t>(max_chars)) {
      lines.push_back(word);
    } else {
      cur += (cur.empty() ? "" : " ") + word;
    }
  }
  for (const auto& line : lines) {
    for (size_t k = 0; k < line.size(); ++k) {
      const Glyph& g = glyph_for(line[k]);
      const int gx = x + static_cast<int>(k) * kAdvance;
      for (int row = 0; row < 7; ++row) {
        for (int col = 0; col < 5; ++col) {
          if (g.rows[row] & (0x10 >> col)) put(canvas, y + row, gx + col, color);
        }
      }
    }
    y += kLineHeight;
  }
  return y;
}

Raster render_overlay(const Image& frame, const OverlaySpec& spec) {
  if (spec.scale <= 0) throw std::invalid_argument("overlay scale must be positive");
  if (frame.height <= 0 || frame.width <= 0 ||
      frame.pixels.size() != static_cast<size_t>(frame.height) * frame.width * 3) {
    throw std::invalid_argument("overlay: malformed frame");
  }
  if (spec.map && (spec.map->frame_height() != frame.height || spec.map->frame_width() != frame.width)) {
    throw std::invalid_argument("overlay: attention map does not cover the frame");
  }
  if (!spec.box_strength.empty() && spec.box_strength.size() != spec.boxes.size()) {
    throw std::invalid_argument("overlay: one strength per box required");
  }
  const int s = spec.scale;
  Raster r;
  r.width = frame.width * s;
  r.height = frame.height * s + frame.height;
  r.rgb.assign(static_cast<size_t>(r.width) * r.height * 3, 0);
  for (int y = 0; y < frame.height; ++y) {
    for (int x = 0; x < frame.width; ++x) {
      bool focus = true;
      if (spec.map) focus = spec.map->at(y / spec.map->patch_size(), x / spec.map->patch_size());
      const auto& tint = focus ? kFocusTint : kBackgroundTint;
      std::array<std::uint8_t, 3> c;
      for (int ch = 0; ch < 3; ++ch) c[static_cast<size_t>(ch)] = blend(frame.at(y, x, ch), tint[static_cast<size_t>(ch)], spec.tint_alpha);
      for (int dy = 0; dy < s; ++dy) {
        for (int dx = 0; dx < s; ++dx) put(r, y * s + dy, x * s + dx, c);
      }
    }
  }
  for (size_t b = 0; b < spec.boxes.size(); ++b) {
    const double strength = spec.box_strength.empty() ? 1.0 : std::clamp(spec.box_strength[b], 0.0, 1.0);
    const auto v = [&](double hi, double lo) { return static_cast<std::uint8_t>(std::lround(lo + strength * (hi - lo))); };
    const std::array<std::uint8_t, 3> color = {v(255, 60), v(255, 60), v(0, 60)};
    const auto& box = spec.boxes[b];
    const int x0 = static_cast<int>(std::floor(box.x_min * s));
    const int x1 = static_cast<int>(std::ceil(box.x_max * s)) - 1;
    const int y0 = static_cast<int>(std::floor(box.y_min * s));
    const int y1 = static_cast<int>(std::ceil(box.y_max * s)) - 1;
    const int frame_h = frame.height * s;
    for (int t = 0; t < 2; ++t) {
      for (int x = x0; x <= x1; ++x) {
        if (y0 + t < frame_h) put(r, y0 + t, x, color);
        if (y1 - t < frame_h) put(r, y1 - t, x, color);
      }
      for (int y = y0; y <= y1 && y < frame_h; ++y) {
        put(r, y, x0 + t, color);
        put(r, y, x1 - t, color);
      }
    }
  }
  int y = frame.height * s + 4;
  y = draw_text(r, 4, y, "gen: " + spec.generated, {255, 255, 255});
  draw_text(r, 4, y, "ref: " + spec.reference, {160, 220, 160});
  return r;
}

void write_overlay(const std::filesystem::path& path, const Image& keyframe, const OverlaySpec& spec) {
  const Raster r = render_overlay(keyframe, spec);
  write_png_rgb8(path, r.height, r.width, r.rgb);
}

}  // namespace drivex::visualize
