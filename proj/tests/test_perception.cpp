#include <gtest/gtest.h>

#include <random>

#include "ocp/diff/gradcheck.hpp"
#include "ocp/perception.hpp"

using namespace ocp;
using namespace ocp::perception;
using diff::Shape;

namespace {

Tensor random_map(Shape shape, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(-1, 1);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

BoundingBox whole(std::size_t h, std::size_t w, std::size_t stride) {
  return {ObjectClass::Vehicle, 0, 0, static_cast<double>(w * stride), static_cast<double>(h * stride)};
}

}  // namespace

TEST(Backbone, ZeroImageZeroBiasGivesZeroMap) {
  BackboneConfig cfg;
  std::mt19937_64 rng(1);
  ParamSet p;
  init_backbone(p, cfg, rng);
  for (auto& [name, t] : p) {
    if (name.find("bias") != std::string::npos) t.fill(0.0);
  }
  const Tensor map = backbone_forward(Tensor({3, 96, 96}), p, cfg);
  for (double v : map.values()) EXPECT_EQ(v, 0.0);
}

TEST(Backbone, ShapeFromStrides) {
  BackboneConfig cfg;
  std::mt19937_64 rng(2);
  ParamSet p;
  init_backbone(p, cfg, rng);
  // each 3x3/s2/p1 block maps n to ceil(n/2): 96 -> 48 -> 24 -> 12 -> 6
  std::size_t n = 96;
  for (int i = 0; i < 4; ++i) n = (n + 1) / 2;
  EXPECT_EQ(cfg.out_extent(96), n);
  Tensor img({3, 96, 96});
  std::uniform_real_distribution<double> u(0, 1);
  for (auto& v : img.values()) v = u(rng);
  const Tensor map = backbone_forward(img, p, cfg);
  EXPECT_EQ(map.shape(), (Shape{64, n, n}));
  EXPECT_EQ(backbone_forward(img, p, cfg), map);
}

TEST(Backbone, RejectsWrongChannels) {
  BackboneConfig cfg;
  std::mt19937_64 rng(3);
  ParamSet p;
  init_backbone(p, cfg, rng);
  EXPECT_THROW(backbone_forward(Tensor({1, 96, 96}), p, cfg), std::invalid_argument);
}

TEST(GlobalPool, ConstantAndMean) {
  for (double v : global_pool(Tensor({3, 2, 5}, 0.7)).values()) EXPECT_NEAR(v, 0.7, 1e-12);
  const Tensor m({1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  EXPECT_DOUBLE_EQ(global_pool(m)[0], 2.5);
}

TEST(RoiPool, QuadrantMaxima) {
  std::vector<double> v(16);
  for (int i = 0; i < 16; ++i) v[i] = i + 1;
  const Tensor m({1, 4, 4}, v);
  // brute-force oracle over the four 2x2 quadrants
  std::vector<double> expected;
  for (int qy = 0; qy < 2; ++qy) {
    for (int qx = 0; qx < 2; ++qx) {
      double best = -1e300;
      for (int y = 0; y < 2; ++y) {
        for (int x = 0; x < 2; ++x) best = std::max(best, v[(qy * 2 + y) * 4 + qx * 2 + x]);
      }
      expected.push_back(best);
    }
  }
  ASSERT_EQ(expected, (std::vector<double>{6, 8, 14, 16}));
  EXPECT_EQ(roi_pool(m, whole(4, 4, 16), 2).values(), expected);
}

TEST(RoiPool, ConstantMap) {
  const Tensor m({4, 6, 6}, -0.3);
  const BoundingBox b{ObjectClass::Pedestrian, 10, 20, 40, 33};
  EXPECT_EQ(roi_pool(m, b, 2).values(), std::vector<double>(16, -0.3));
}

TEST(RoiPool, SingleBinIsChannelMax) {
  std::mt19937_64 rng(4);
  const Tensor m = random_map({5, 6, 6}, rng);
  const Tensor out = roi_pool(m, whole(6, 6, 16), 1);
  for (std::size_t c = 0; c < 5; ++c) {
    double best = -1e300;
    for (std::size_t p = 0; p < 36; ++p) best = std::max(best, m[c * 36 + p]);
    EXPECT_EQ(out[c], best);
  }
}

TEST(RoiPool, IgnoresValuesOutsideTheWindow) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor m = random_map({3, 6, 6}, rng);
    std::uniform_real_distribution<double> u(-20, 110);
    BoundingBox b{ObjectClass::Vehicle, u(rng), u(rng), 0, 0};
    b.x_max = b.x_min + 1 + std::abs(u(rng)) * 0.5;
    b.y_max = b.y_min + 1 + std::abs(u(rng)) * 0.5;
    const auto win = roi_window(b, 6, 6, 16, 2);
    const Tensor before = roi_pool(m, b, 2);
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t y = 0; y < 6; ++y) {
        for (std::size_t x = 0; x < 6; ++x) {
          if (y < win.y0 || y >= win.y1 || x < win.x0 || x >= win.x1) m[(c * 6 + y) * 6 + x] = 1e6;
        }
      }
    }
    EXPECT_EQ(roi_pool(m, b, 2), before);
  }
}

TEST(RoiWindow, SmallBoxExpandsToBins) {
  const BoundingBox b{ObjectClass::Vehicle, 40, 40, 44, 44};  // inside cell (2,2)
  const auto w = roi_window(b, 6, 6, 16, 2);
  EXPECT_FALSE(w.degenerate);
  EXPECT_EQ(w.x1 - w.x0, 2u);
  EXPECT_EQ(w.y1 - w.y0, 2u);
  EXPECT_LE(w.x0, 2u);
  EXPECT_GT(w.x1, 2u);
}

TEST(RoiWindow, ZeroAreaCollapsesToNearestCell) {
  // x = 50 lies in cell 3, the y midpoint 45 in cell 2
  const BoundingBox b{ObjectClass::Vehicle, 50, 30, 50, 60};
  const auto w = roi_window(b, 6, 6, 16, 2);
  EXPECT_TRUE(w.degenerate);
  EXPECT_EQ(w.x0, 3u);
  EXPECT_EQ(w.x1, 4u);
  EXPECT_EQ(w.y0, 2u);
  EXPECT_EQ(w.y1, 3u);
}

TEST(PixelAttention, ZeroParamsEqualsGlobalPool) {
  std::mt19937_64 rng(6);
  const Tensor m = random_map({8, 6, 6}, rng);
  const auto att = pixel_attention_pool(m, Tensor({8, 1}), Tensor({1}));
  EXPECT_LT(diff::max_abs_diff(att.feature, global_pool(m)), 1e-12);
}

TEST(PixelAttention, SaturatedCellDominates) {
  std::mt19937_64 rng(7);
  Tensor m = random_map({4, 3, 3}, rng);
  // weight on an indicator channel puts +1000 on cell (1,2)
  for (std::size_t p = 0; p < 9; ++p) m[3 * 9 + p] = p == 5 ? 1.0 : 0.0;
  Tensor w({4, 1});
  w[3] = 1000.0;
  const auto att = pixel_attention_pool(m, w, Tensor({1}));
  for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(att.feature[c], m[c * 9 + 5], 1e-9);
}

TEST(PixelAttention, MassNormalizedAndOutputInConvexHull) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor m = random_map({6, 4, 5}, rng);
    Tensor w = random_map({6, 1}, rng);
    for (auto& v : w.values()) v *= 5;
    const auto att = pixel_attention_pool(m, w, Tensor::row({0.3}).reshaped({1}));
    double s = 0;
    for (double v : att.mass.values()) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
    EXPECT_EQ(att.mass.shape(), (Shape{4, 5}));
    for (std::size_t c = 0; c < 6; ++c) {
      double lo = 1e300, hi = -1e300;
      for (std::size_t p = 0; p < 20; ++p) {
        lo = std::min(lo, m[c * 20 + p]);
        hi = std::max(hi, m[c * 20 + p]);
      }
      EXPECT_GE(att.feature[c], lo - 1e-12);
      EXPECT_LE(att.feature[c], hi + 1e-12);
    }
  }
}

TEST(PoolingGradients, GlobalRoiAndAttention) {
  using diff::GradCheckSpec;
  using diff::NodeId;

  GradCheckSpec global;
  global.input_shapes = {{4, 3, 3}};
  global.build = [](Graph& g, const std::vector<NodeId>& in) { return g.global_avg_pool(in[0]); };
  EXPECT_LT(diff::gradient_check(global).max_relative_error, 1e-5);

  GradCheckSpec roi;
  roi.input_shapes = {{4, 6, 6}};
  roi.build = [](Graph& g, const std::vector<NodeId>& in) {
    const BoundingBox a{ObjectClass::Vehicle, 5, 5, 70, 40}, b{ObjectClass::Pedestrian, 60, 60, 66, 75};
    return g.roi_max_pool(in[0], {roi_window(a, 6, 6, 16, 2), roi_window(b, 6, 6, 16, 2)}, 2);
  };
  EXPECT_LT(diff::gradient_check(roi).max_relative_error, 1e-5);

  GradCheckSpec att;
  att.input_shapes = {{4, 3, 3}, {4, 1}, {1}};
  att.input_names = {"map", kAttentionWeight, kAttentionBias};
  att.build = [](Graph& g, const std::vector<NodeId>& in) { return pixel_attention(g, in[0], 9).feature; };
  EXPECT_LT(diff::gradient_check(att).max_relative_error, 1e-5);
}

TEST(ClipBox, KeepsInsideDropsOutside) {
  BoundingBox inside{ObjectClass::Vehicle, -5, 10, 20, 120};
  EXPECT_TRUE(clip_box(inside, 96, 96));
  EXPECT_EQ(inside, (BoundingBox{ObjectClass::Vehicle, 0, 10, 20, 96}));
  BoundingBox outside{ObjectClass::Vehicle, 100, 10, 120, 20};
  EXPECT_FALSE(clip_box(outside, 96, 96));
  BoundingBox edge{ObjectClass::Vehicle, 96, 10, 110, 20};
  EXPECT_FALSE(clip_box(edge, 96, 96));
  BoundingBox flat{ObjectClass::Pedestrian, 30, 40, 30, 50};
  EXPECT_TRUE(clip_box(flat, 96, 96));
  BoundingBox inverted{ObjectClass::Vehicle, 30, 40, 20, 50};
  EXPECT_FALSE(clip_box(inverted, 96, 96));
}
