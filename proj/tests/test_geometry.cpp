#include <gtest/gtest.h>

#include <random>

#include "drivex/geometry.hpp"
#include "oracles/geometry_oracle.hpp"

using drivex::geometry::Box;
using drivex::geometry::iou;
using drivex::geometry::position_label;
using drivex::geometry::project_to_patch_map;

TEST(Iou, IdenticalBoxes) { EXPECT_DOUBLE_EQ(iou({0, 0, 2, 2}, {0, 0, 2, 2}), 1.0); }

TEST(Iou, DisjointBoxes) { EXPECT_DOUBLE_EQ(iou({0, 0, 1, 1}, {2, 2, 3, 3}), 0.0); }

TEST(Iou, HalfOverlap) {
  EXPECT_NEAR(iou({0, 0, 2, 2}, {1, 1, 3, 3}), 1.0 / 7.0, 1e-12);
  EXPECT_NEAR(drivex::oracle::raster_iou({0, 0, 2, 2}, {1, 1, 3, 3}, 8), 1.0 / 7.0, 1e-12);
}

TEST(Iou, ZeroUnion) { EXPECT_DOUBLE_EQ(iou({1, 1, 1, 1}, {1, 1, 1, 1}), 0.0); }

TEST(Iou, MalformedBoxThrows) {
  EXPECT_THROW(iou({2, 0, 1, 1}, {0, 0, 1, 1}), std::invalid_argument);
  EXPECT_THROW(iou({0, 0, 1, 1}, {0, 0, 1, std::nan("")}), std::invalid_argument);
}

TEST(Iou, SymmetricAndBounded) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 20.0);
  for (int t = 0; t < 500; ++t) {
    double a0 = u(rng), a1 = u(rng), b0 = u(rng), b1 = u(rng);
    Box a{std::min(a0, a1), std::min(b0, b1), std::max(a0, a1), std::max(b0, b1)};
    double c0 = u(rng), c1 = u(rng), d0 = u(rng), d1 = u(rng);
    Box b{std::min(c0, c1), std::min(d0, d1), std::max(c0, c1), std::max(d0, d1)};
    const double ab = iou(a, b);
    EXPECT_EQ(ab, iou(b, a));
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 1.0);
    if (a.area() > 0) {
      EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
    }
  }
}

TEST(PatchMap, SinglePatchBox) {
  const Box boxes[] = {{0, 0, 16, 16}};
  const auto map = project_to_patch_map(boxes, 64, 64, 16);
  EXPECT_EQ(map.count(), 1);
  EXPECT_TRUE(map.at(0, 0));
}

TEST(PatchMap, FullFrame) {
  const Box boxes[] = {{0, 0, 64, 64}};
  EXPECT_EQ(project_to_patch_map(boxes, 64, 64, 16).count(), 16);
}

TEST(PatchMap, PartialCoverage) {
  const Box boxes[] = {{8, 8, 40, 24}};
  const auto map = project_to_patch_map(boxes, 64, 64, 16);
  const auto oracle = drivex::oracle::brute_force_patch_map({boxes[0]}, 64, 64, 16, 1);
  EXPECT_EQ(map.count(), 6);
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) {
      EXPECT_EQ(map.at(r, c), r <= 1 && c <= 2) << r << "," << c;
      EXPECT_EQ(map.at(r, c), oracle[static_cast<size_t>(r * 4 + c)] != 0);
    }
  }
}

TEST(PatchMap, EdgeContactDoesNotSetPatch) {
  // Touches patch column 1 only along x = 16.
  const Box boxes[] = {{4, 4, 16, 12}};
  const auto map = project_to_patch_map(boxes, 64, 64, 16);
  EXPECT_EQ(map.count(), 1);
  EXPECT_FALSE(map.at(0, 1));
}

TEST(PatchMap, EmptyListAndBadDims) {
  EXPECT_EQ(project_to_patch_map({}, 64, 64, 8).count(), 0);
  EXPECT_THROW(project_to_patch_map({}, 60, 64, 16), std::invalid_argument);
}

TEST(PatchMap, MonotoneInBoxes) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> u(0, 64 * 4);
  std::vector<Box> boxes;
  auto prev = project_to_patch_map(boxes, 64, 64, 8);
  for (int i = 0; i < 20; ++i) {
    const double a = u(rng) / 4.0, b = u(rng) / 4.0, c = u(rng) / 4.0, d = u(rng) / 4.0;
    boxes.push_back({std::min(a, b), std::min(c, d), std::max(a, b), std::max(c, d)});
    const auto next = project_to_patch_map(boxes, 64, 64, 8);
    for (int k = 0; k < next.size(); ++k) {
      if (prev.cells()[static_cast<size_t>(k)]) {
        EXPECT_TRUE(next.cells()[static_cast<size_t>(k)]);
      }
    }
    prev = next;
  }
}

TEST(PositionLabel, Thirds) {
  const double W = 64;
  EXPECT_EQ(position_label({W / 2 - 1, 0, W / 2 + 1, 1}, W), "ahead");
  EXPECT_EQ(position_label({0, 0, 0, 1}, W), "on the left");
  EXPECT_EQ(position_label({W / 3, 0, W / 3, 1}, W), "ahead");
  EXPECT_EQ(position_label({W - 2, 0, W, 1}, W), "on the right");
}
