#pragma once

// Ego-centric bird's-eye rasterization and ground-truth boxes.
// Image axes: column u grows to the ego's right, row v grows backwards;
// the ego's reference point sits at the bottom centre of the image.

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <vector>

#include "ocp/diff/tensor.hpp"
#include "ocp/perception.hpp"
#include "ocp/sim/world.hpp"

namespace ocp::sim {

using diff::Tensor;
using perception::BoundingBox;
using perception::ObjectClass;

struct RenderConfig {
  std::size_t size = 96;
  double metres_per_pixel = 0.5;
  double route_spacing = 2.0;
  double route_horizon = 50.0;
};

inline constexpr std::size_t kChannels = 3;  // drivable, vehicles, pedestrians + route

struct Scene {
  Vec2 ego_pos;
  double ego_heading = 0;
  std::vector<OrientedRect> drivable;
  std::vector<OrientedRect> vehicles;
  std::vector<OrientedRect> pedestrians;
  std::vector<Vec2> route;
};

inline Scene scene_of(const World& w, const RenderConfig& cfg = {}) {
  Scene s;
  s.ego_pos = w.ego.pos;
  s.ego_heading = w.ego.heading;
  s.drivable = w.map->drivable();
  for (const auto& v : w.vehicles) s.vehicles.push_back(v.footprint());
  for (const auto& p : w.pedestrians) s.pedestrians.push_back(p.footprint());
  const Polyline& path = w.ego_route().path;
  for (double d = cfg.route_spacing; d <= cfg.route_horizon + 1e-9; d += cfg.route_spacing) {
    const double at = w.ego.progress + d;
    if (at > path.length()) break;
    s.route.push_back(path.point_at(at));
  }
  return s;
}

/// World point to continuous pixel coordinates (u, v).
inline Vec2 to_pixel(Vec2 p, Vec2 ego_pos, double ego_heading, const RenderConfig& cfg) {
  const Vec2 rel = p - ego_pos;
  const Vec2 h = heading_vector(ego_heading);
  const double f = rel.dot(h);
  const double l = rel.dot(left_of(h));
  const double half = 0.5 * static_cast<double>(cfg.size);
  return {half - l / cfg.metres_per_pixel, static_cast<double>(cfg.size) - f / cfg.metres_per_pixel};
}

namespace detail {

inline bool inside_convex(const std::array<Vec2, 4>& q, Vec2 p) {
  bool pos = false, neg = false;
  for (std::size_t i = 0; i < 4; ++i) {
    const double c = (q[(i + 1) % 4] - q[i]).cross(p - q[i]);
    pos = pos || c > 0;
    neg = neg || c < 0;
  }
  return !(pos && neg);
}

/// Marks 2x2 sub-samples of every pixel covered by the rect.
inline void rasterize(std::vector<std::uint8_t>& mask, std::size_t sub, const OrientedRect& r, const Scene& s,
                      const RenderConfig& cfg) {
  std::array<Vec2, 4> q;
  const auto corners = r.corners();
  double u0 = 1e300, u1 = -1e300, v0 = 1e300, v1 = -1e300;
  for (std::size_t i = 0; i < 4; ++i) {
    q[i] = to_pixel(corners[i], s.ego_pos, s.ego_heading, cfg);
    u0 = std::min(u0, q[i].x);
    u1 = std::max(u1, q[i].x);
    v0 = std::min(v0, q[i].y);
    v1 = std::max(v1, q[i].y);
  }
  const double n = static_cast<double>(cfg.size);
  if (u1 <= 0 || v1 <= 0 || u0 >= n || v0 >= n) return;
  const auto lo = [&](double x) { return static_cast<std::size_t>(std::max(0.0, std::floor(x * 2.0))); };
  const auto hi = [&](double x) { return static_cast<std::size_t>(std::min(2.0 * n, std::ceil(x * 2.0))); };
  for (std::size_t j = lo(v0); j < hi(v1); ++j) {
    for (std::size_t i = lo(u0); i < hi(u1); ++i) {
      const Vec2 p{(static_cast<double>(i) + 0.5) * 0.5, (static_cast<double>(j) + 0.5) * 0.5};
      if (inside_convex(q, p)) mask[j * sub + i] = 1;
    }
  }
}

inline void downsample(const std::vector<std::uint8_t>& mask, std::size_t n, double* out) {
  const std::size_t sub = 2 * n;
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const int c = mask[(2 * y) * sub + 2 * x] + mask[(2 * y) * sub + 2 * x + 1] + mask[(2 * y + 1) * sub + 2 * x] +
                    mask[(2 * y + 1) * sub + 2 * x + 1];
      out[y * n + x] = 0.25 * c;
    }
  }
}

}  // namespace detail

/// Three-channel [C, H, W] image with pixel values in [0, 1]. The ego
/// itself is not drawn.
inline Tensor render_scene(const Scene& s, const RenderConfig& cfg = {}) {
  const std::size_t n = cfg.size;
  const std::size_t sub = 2 * n;
  Tensor img({kChannels, n, n});
  double* data = img.data().data();
  std::vector<std::uint8_t> mask(sub * sub);
  auto layer = [&](const std::vector<OrientedRect>& rects, std::size_t channel) {
    std::fill(mask.begin(), mask.end(), 0);
    for (const auto& r : rects) detail::rasterize(mask, sub, r, s, cfg);
    detail::downsample(mask, n, data + channel * n * n);
  };
  layer(s.drivable, 0);
  layer(s.vehicles, 1);
  layer(s.pedestrians, 2);
  double* route = data + 2 * n * n;
  for (const Vec2& p : s.route) {
    const Vec2 px = to_pixel(p, s.ego_pos, s.ego_heading, cfg);
    if (px.x < 0 || px.y < 0 || px.x >= static_cast<double>(n) || px.y >= static_cast<double>(n)) continue;
    double& cell = route[static_cast<std::size_t>(px.y) * n + static_cast<std::size_t>(px.x)];
    cell = std::max(cell, 0.5);
  }
  return img;
}

inline Tensor render(const World& w, const RenderConfig& cfg = {}) { return render_scene(scene_of(w, cfg), cfg); }

// ---------------------------------------------------------------------------
// Boxes

inline std::vector<BoundingBox> scene_boxes(const Scene& s, const RenderConfig& cfg = {}) {
  std::vector<BoundingBox> out;
  const double n = static_cast<double>(cfg.size);
  auto add = [&](const OrientedRect& r, ObjectClass cls) {
    BoundingBox b{cls, 1e300, 1e300, -1e300, -1e300};
    for (const Vec2& c : r.corners()) {
      const Vec2 p = to_pixel(c, s.ego_pos, s.ego_heading, cfg);
      b.x_min = std::min(b.x_min, p.x);
      b.x_max = std::max(b.x_max, p.x);
      b.y_min = std::min(b.y_min, p.y);
      b.y_max = std::max(b.y_max, p.y);
    }
    if (perception::clip_box(b, n, n) && b.valid()) out.push_back(b);
  };
  for (const auto& r : s.vehicles) add(r, ObjectClass::Vehicle);
  for (const auto& r : s.pedestrians) add(r, ObjectClass::Pedestrian);
  return out;
}

/// Exact ground-truth boxes of every agent at least partly in view.
inline std::vector<BoundingBox> ground_truth_boxes(const World& w, const RenderConfig& cfg = {}) {
  Scene s;
  s.ego_pos = w.ego.pos;
  s.ego_heading = w.ego.heading;
  for (const auto& v : w.vehicles) s.vehicles.push_back(v.footprint());
  for (const auto& p : w.pedestrians) s.pedestrians.push_back(p.footprint());
  return scene_boxes(s, cfg);
}

struct DetectionNoise {
  double sigma = 0.0;           // pixels, per corner coordinate
  double drop = 0.0;            // probability per box
  double false_positive = 0.0;  // probability per frame

  bool clean() const { return sigma == 0.0 && drop == 0.0 && false_positive == 0.0; }
};

/// Simulated detector: drops, jitters and hallucinates boxes. Draws from
/// `rng` only, so the world's own stream is untouched.
inline std::vector<BoundingBox> perturb_detections(const std::vector<BoundingBox>& boxes, const DetectionNoise& noise,
                                                   std::mt19937_64& rng, const RenderConfig& cfg = {}) {
  if (noise.clean()) return boxes;
  const double n = static_cast<double>(cfg.size);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> jitter(0.0, 1.0);
  std::vector<BoundingBox> out;
  for (BoundingBox b : boxes) {
    if (unit(rng) < noise.drop) continue;
    if (noise.sigma > 0) {
      b.x_min += noise.sigma * jitter(rng);
      b.y_min += noise.sigma * jitter(rng);
      b.x_max += noise.sigma * jitter(rng);
      b.y_max += noise.sigma * jitter(rng);
      if (b.x_min > b.x_max) std::swap(b.x_min, b.x_max);
      if (b.y_min > b.y_max) std::swap(b.y_min, b.y_max);
    }
    if (perception::clip_box(b, n, n) && b.valid()) out.push_back(b);
  }
  if (unit(rng) < noise.false_positive) {
    const double w = 4.0 + 6.0 * unit(rng);
    const double h = 4.0 + 6.0 * unit(rng);
    const double x = unit(rng) * (n - w);
    const double y = unit(rng) * (n - h);
    out.push_back({ObjectClass::Vehicle, x, y, x + w, y + h});
  }
  return out;
}

}  // namespace ocp::sim
