#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace ocp::sim {

struct Vec2 {
  double x = 0.0, y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  double dot(Vec2 o) const { return x * o.x + y * o.y; }
  double cross(Vec2 o) const { return x * o.y - y * o.x; }
  double norm() const { return std::hypot(x, y); }
  Vec2 normalized() const {
    const double n = norm();
    return n > 0 ? Vec2{x / n, y / n} : Vec2{};
  }
  friend bool operator==(const Vec2&, const Vec2&) = default;
};

inline Vec2 heading_vector(double heading) { return {std::cos(heading), std::sin(heading)}; }
/// Unit vector 90 degrees counter-clockwise (to the left of travel).
inline Vec2 left_of(Vec2 d) { return {-d.y, d.x}; }

inline double wrap_angle(double a) {
  a = std::fmod(a + std::numbers::pi, 2.0 * std::numbers::pi);
  if (a < 0) a += 2.0 * std::numbers::pi;
  return a - std::numbers::pi;
}

/// Rectangle with its length along `heading`.
struct OrientedRect {
  Vec2 center;
  double heading = 0.0;
  double length = 0.0;
  double width = 0.0;

  std::array<Vec2, 4> corners() const {
    const Vec2 f = heading_vector(heading) * (0.5 * length);
    const Vec2 l = left_of(heading_vector(heading)) * (0.5 * width);
    return {center + f + l, center + f - l, center - f - l, center - f + l};
  }
  double radius() const { return 0.5 * std::hypot(length, width); }

  bool contains(Vec2 p) const {
    const Vec2 d = p - center;
    const Vec2 f = heading_vector(heading);
    return std::abs(d.dot(f)) <= 0.5 * length && std::abs(d.dot(left_of(f))) <= 0.5 * width;
  }
};

/// Separating-axis test; touching edges do not count as overlap.
inline bool overlaps(const OrientedRect& a, const OrientedRect& b) {
  const double r = a.radius() + b.radius();
  const Vec2 d = a.center - b.center;
  if (d.dot(d) > r * r) return false;
  const auto ca = a.corners(), cb = b.corners();
  const std::array<Vec2, 4> axes{heading_vector(a.heading), left_of(heading_vector(a.heading)),
                                 heading_vector(b.heading), left_of(heading_vector(b.heading))};
  for (const Vec2& axis : axes) {
    double amin = 1e300, amax = -1e300, bmin = 1e300, bmax = -1e300;
    for (const Vec2& p : ca) {
      amin = std::min(amin, p.dot(axis));
      amax = std::max(amax, p.dot(axis));
    }
    for (const Vec2& p : cb) {
      bmin = std::min(bmin, p.dot(axis));
      bmax = std::max(bmax, p.dot(axis));
    }
    if (amax <= bmin || bmax <= amin) return false;
  }
  return true;
}

/// Arc-length parameterized polyline.
class Polyline {
 public:
  Polyline() = default;
  explicit Polyline(std::vector<Vec2> points) : points_(std::move(points)) {
    if (points_.size() < 2) throw std::invalid_argument("polyline: need at least two points");
    s_.resize(points_.size());
    s_[0] = 0.0;
    for (std::size_t i = 1; i < points_.size(); ++i) {
      const double seg = (points_[i] - points_[i - 1]).norm();
      if (!(seg > 0)) throw std::invalid_argument("polyline: repeated point");
      s_[i] = s_[i - 1] + seg;
    }
  }

  double length() const { return s_.empty() ? 0.0 : s_.back(); }
  const std::vector<Vec2>& points() const { return points_; }
  const std::vector<double>& arc() const { return s_; }
  bool empty() const { return points_.empty(); }

  Vec2 point_at(double s) const {
    const std::size_t i = segment(s);
    const double t = (std::clamp(s, 0.0, length()) - s_[i]) / (s_[i + 1] - s_[i]);
    return points_[i] + (points_[i + 1] - points_[i]) * t;
  }

  double heading_at(double s) const {
    const std::size_t i = segment(s);
    const Vec2 d = points_[i + 1] - points_[i];
    return std::atan2(d.y, d.x);
  }

  /// Arc length of the closest point to p with s in [lo, hi].
  double project(Vec2 p, double lo, double hi) const {
    lo = std::clamp(lo, 0.0, length());
    hi = std::clamp(hi, lo, length());
    std::size_t i = segment(lo);
    const std::size_t last = segment(hi);
    double best_s = lo, best_d = 1e300;
    for (; i <= last; ++i) {
      const Vec2 a = points_[i], b = points_[i + 1];
      const Vec2 ab = b - a;
      double t = std::clamp((p - a).dot(ab) / ab.dot(ab), 0.0, 1.0);
      double s = std::clamp(s_[i] + t * (s_[i + 1] - s_[i]), lo, hi);
      const Vec2 q = point_at(s);
      const double d = (p - q).dot(p - q);
      if (d < best_d) {
        best_d = d;
        best_s = s;
      }
    }
    return best_s;
  }

 private:
  std::size_t segment(double s) const {
    if (points_.size() < 2) throw std::logic_error("polyline: empty");
    auto it = std::upper_bound(s_.begin(), s_.end(), s);
    std::size_t i = it == s_.begin() ? 0 : static_cast<std::size_t>(it - s_.begin()) - 1;
    return std::min(i, points_.size() - 2);
  }

  std::vector<Vec2> points_;
  std::vector<double> s_;
};

/// Quadratic Bezier sampled at roughly `step` spacing, endpoints included.
inline std::vector<Vec2> sample_bezier(Vec2 p0, Vec2 c, Vec2 p2, double step) {
  const double approx = (c - p0).norm() + (p2 - c).norm();
  const int n = std::max(2, static_cast<int>(std::ceil(approx / step)));
  std::vector<Vec2> out;
  for (int i = 0; i <= n; ++i) {
    const double t = static_cast<double>(i) / n;
    const double a = (1 - t) * (1 - t), b = 2 * (1 - t) * t, d = t * t;
    out.push_back(p0 * a + c * b + p2 * d);
  }
  return out;
}

/// Intersection of lines p + t*u and q + s*v, or the midpoint of p and q
/// when they are parallel.
inline Vec2 line_intersection(Vec2 p, Vec2 u, Vec2 q, Vec2 v) {
  const double den = u.cross(v);
  if (std::abs(den) < 1e-9) return (p + q) * 0.5;
  const double t = (q - p).cross(v) / den;
  return p + u * t;
}

}  // namespace ocp::sim
