#pragma once

#include <span>
#include <string_view>
#include <vector>

namespace drivex::geometry {

/// Axis-aligned box in pixel units: origin top-left, x right, y down,
/// max-exclusive. Zero-area boxes are valid values.
struct Box {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (x_min + x_max); }
  double center_y() const { return 0.5 * (y_min + y_max); }

  bool operator==(const Box&) const = default;
};

/// Throws std::invalid_argument unless every coordinate is finite and
/// min <= max on both axes.
void validate(const Box& box);

Box intersect(const Box& a, const Box& b);
Box clip_to_frame(const Box& box, double width, double height);

/// Intersection over union; 0 when the union is empty.
double iou(const Box& a, const Box& b);

/// Binary grid over non-overlapping square patches, row-major.
class PatchAttentionMap {
 public:
  PatchAttentionMap() = default;
  PatchAttentionMap(int frame_height, int frame_width, int patch_size);

  static PatchAttentionMap filled(int frame_height, int frame_width,
                                  int patch_size, bool value);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int patch_size() const { return patch_size_; }
  int frame_height() const { return rows_ * patch_size_; }
  int frame_width() const { return cols_ * patch_size_; }
  int size() const { return rows_ * cols_; }

  bool at(int r, int c) const { return cells_[static_cast<size_t>(r * cols_ + c)] != 0; }
  void set(int r, int c, bool v) { cells_[static_cast<size_t>(r * cols_ + c)] = v ? 1 : 0; }
  std::span<const unsigned char> cells() const { return cells_; }

  int count() const;
  bool all_of(bool value) const;

  bool operator==(const PatchAttentionMap&) const = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  int patch_size_ = 1;
  std::vector<unsigned char> cells_;
};

/// Sets every patch whose interior overlaps some box with positive area.
/// Boxes touching a patch only along an edge leave it unset.
/// Throws std::invalid_argument when H or W is not a multiple of patch_size.
PatchAttentionMap project_to_patch_map(std::span<const Box> boxes, int frame_height,
                                       int frame_width, int patch_size);

/// Horizontal third of the frame containing the box center.
std::string_view position_label(const Box& box, double frame_width);

}  // namespace drivex::geometry
