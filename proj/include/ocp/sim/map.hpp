#pragma once

// Road maps built from versioned JSON templates. Urban templates list
// nodes and two-way roads (one lane each way, right-hand traffic); every
// node is a square intersection zone and turns through it follow quadratic
// Bezier connectors. Highway templates list a centerline driven one way on
// parallel lanes.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ocp/io.hpp"
#include "ocp/sim/geometry.hpp"

namespace ocp::sim {

enum class ScenarioKind { Urban, Highway };

inline std::string kind_name(ScenarioKind k) { return k == ScenarioKind::Urban ? "urban" : "highway"; }

inline ScenarioKind parse_kind(const std::string& s) {
  if (s == "urban") return ScenarioKind::Urban;
  if (s == "highway") return ScenarioKind::Highway;
  throw std::invalid_argument("unknown scenario kind '" + s + "'");
}

inline constexpr int kTemplateVersion = 1;

struct Range {
  double lo = 0, hi = 0;
};

struct MapTemplate {
  std::string name;
  ScenarioKind kind = ScenarioKind::Urban;
  double lane_width = 3.5;
  double zone_half_size = 9.0;    // urban
  double crosswalk_offset = 17.0;  // urban, from the node centre
  int lanes = 2;                   // highway
  std::vector<Vec2> nodes;         // urban nodes or highway centerline
  std::vector<std::pair<int, int>> roads;
  Range vehicles{6, 12};
  Range pedestrians{2, 6};
  Range vehicle_speed{3.0, 5.5};
  double route_length = 1500.0;
};

inline nlohmann::json template_to_json(const MapTemplate& t) {
  nlohmann::json j;
  j["version"] = kTemplateVersion;
  j["name"] = t.name;
  j["kind"] = kind_name(t.kind);
  j["lane_width"] = t.lane_width;
  auto pts = nlohmann::json::array();
  for (const auto& p : t.nodes) pts.push_back({p.x, p.y});
  if (t.kind == ScenarioKind::Urban) {
    j["zone_half_size"] = t.zone_half_size;
    j["crosswalk_offset"] = t.crosswalk_offset;
    j["nodes"] = pts;
    auto roads = nlohmann::json::array();
    for (const auto& [a, b] : t.roads) roads.push_back({a, b});
    j["roads"] = roads;
  } else {
    j["lanes"] = t.lanes;
    j["centerline"] = pts;
  }
  j["vehicles"] = {t.vehicles.lo, t.vehicles.hi};
  j["pedestrians"] = {t.pedestrians.lo, t.pedestrians.hi};
  j["vehicle_speed"] = {t.vehicle_speed.lo, t.vehicle_speed.hi};
  j["route_length"] = t.route_length;
  return j;
}

inline MapTemplate template_from_json(const nlohmann::json& j) {
  auto fail = [](const std::string& m) { throw io::FormatError(io::FormatError::Kind::Corrupt, "template: " + m); };
  if (!j.is_object()) fail("not an object");
  if (!j.contains("version") || !j.at("version").is_number_integer()) fail("missing version");
  if (j.at("version").get<int>() != kTemplateVersion) {
    throw io::FormatError(io::FormatError::Kind::VersionMismatch,
                          "template: unsupported version " + j.at("version").dump());
  }
  MapTemplate t;
  try {
    t.name = j.at("name").get<std::string>();
    t.kind = parse_kind(j.at("kind").get<std::string>());
    t.lane_width = j.at("lane_width").get<double>();
    auto range = [&](const char* key, Range def) {
      if (!j.contains(key)) return def;
      return Range{j.at(key).at(0).get<double>(), j.at(key).at(1).get<double>()};
    };
    t.vehicles = range("vehicles", t.vehicles);
    t.pedestrians = range("pedestrians", t.kind == ScenarioKind::Urban ? t.pedestrians : Range{0, 0});
    t.vehicle_speed = range("vehicle_speed", t.vehicle_speed);
    t.route_length = j.value("route_length", t.route_length);
    const auto& pts = j.at(t.kind == ScenarioKind::Urban ? "nodes" : "centerline");
    for (const auto& p : pts) t.nodes.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    if (t.kind == ScenarioKind::Urban) {
      t.zone_half_size = j.value("zone_half_size", t.zone_half_size);
      t.crosswalk_offset = j.value("crosswalk_offset", t.crosswalk_offset);
      for (const auto& r : j.at("roads")) t.roads.emplace_back(r.at(0).get<int>(), r.at(1).get<int>());
    } else {
      t.lanes = j.value("lanes", t.lanes);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(e.what());
  }
  if (!(t.lane_width > 0)) fail("lane_width must be positive");
  if (t.nodes.size() < 2) fail("need at least two nodes");
  if (t.kind == ScenarioKind::Highway && t.pedestrians.hi > 0) fail("highway templates carry no pedestrians");
  if (t.kind == ScenarioKind::Highway && t.lanes < 1) fail("lanes must be >= 1");
  for (const auto& [a, b] : t.roads) {
    const int n = static_cast<int>(t.nodes.size());
    if (a < 0 || b < 0 || a >= n || b >= n || a == b) fail("road references invalid node");
  }
  return t;
}

inline MapTemplate load_template(const std::filesystem::path& path) {
  try {
    return template_from_json(nlohmann::json::parse(io::read_text(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw io::FormatError(io::FormatError::Kind::Corrupt, "template " + path.string() + ": " + e.what());
  }
}

/// cols x rows grid; `skip` removes roads by (a, b) node pair.
inline MapTemplate grid_template(std::string name, int cols, int rows, double spacing,
                                 std::vector<std::pair<int, int>> skip = {}) {
  MapTemplate t;
  t.name = std::move(name);
  t.kind = ScenarioKind::Urban;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) t.nodes.push_back({c * spacing, r * spacing});
  }
  auto add = [&](int a, int b) {
    if (std::find(skip.begin(), skip.end(), std::pair{a, b}) == skip.end()) t.roads.emplace_back(a, b);
  };
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const int i = r * cols + c;
      if (c + 1 < cols) add(i, i + 1);
      if (r + 1 < rows) add(i, i + cols);
    }
  }
  return t;
}

inline MapTemplate highway_template(std::string name, std::vector<Vec2> centerline) {
  MapTemplate t;
  t.name = std::move(name);
  t.kind = ScenarioKind::Highway;
  t.nodes = std::move(centerline);
  t.vehicles = {2, 6};
  t.pedestrians = {0, 0};
  return t;
}

/// Built-in templates, serialized through the JSON schema so the loader is
/// exercised on every run.
inline const std::vector<MapTemplate>& builtin_templates() {
  static const std::vector<MapTemplate> all = [] {
    std::vector<MapTemplate> raw;
    raw.push_back(grid_template("urban_grid_3x3_50", 3, 3, 50));
    raw.push_back(grid_template("urban_grid_3x3_60", 3, 3, 60));
    raw.push_back(grid_template("urban_grid_4x2_50", 4, 2, 50));
    raw.push_back(grid_template("urban_grid_3x4_45_t", 3, 4, 45, {{4, 7}}));
    std::vector<Vec2> straight;
    for (int i = 0; i <= 20; ++i) straight.push_back({i * 100.0, 0.0});
    raw.push_back(highway_template("highway_straight", straight));
    std::vector<Vec2> curved;
    for (int i = 0; i <= 80; ++i) {
      const double x = i * 25.0;
      curved.push_back({x, 60.0 * std::sin(x / 400.0)});
    }
    raw.push_back(highway_template("highway_curved", curved));
    std::vector<MapTemplate> out;
    for (const auto& t : raw) out.push_back(template_from_json(nlohmann::json::parse(template_to_json(t).dump())));
    return out;
  }();
  return all;
}

inline std::vector<const MapTemplate*> templates_of(ScenarioKind kind) {
  std::vector<const MapTemplate*> out;
  for (const auto& t : builtin_templates()) {
    if (t.kind == kind) out.push_back(&t);
  }
  return out;
}

// ---------------------------------------------------------------------------

struct Lane {
  Polyline path;
  int road = -1;
  int from_node = -1;  // urban: zone at the start, -1 on highways
  int to_node = -1;
};

struct Zone {
  Vec2 center;
  double half_size = 0;
  OrientedRect rect() const { return {center, 0.0, 2 * half_size, 2 * half_size}; }
};

struct Crosswalk {
  Vec2 a, b;        // walking endpoints (sidewalk to sidewalk)
  Vec2 center;
  Vec2 road_dir;    // unit vector along the road
  double road_half_width = 0;
  int road = -1;
};

struct Connector {
  int zone = -1;
  int in_lane = -1;
  int out_lane = -1;
  Polyline path;
  bool turn = false;
};

class RoadMap {
 public:
  explicit RoadMap(MapTemplate t) : tpl_(std::move(t)) {
    if (tpl_.kind == ScenarioKind::Urban) {
      build_urban();
    } else {
      build_highway();
    }
  }

  const MapTemplate& spec() const { return tpl_; }
  ScenarioKind kind() const { return tpl_.kind; }
  const std::vector<Lane>& lanes() const { return lanes_; }
  const std::vector<Zone>& zones() const { return zones_; }
  const std::vector<Crosswalk>& crosswalks() const { return crosswalks_; }
  const std::vector<OrientedRect>& drivable() const { return drivable_; }
  const std::vector<Connector>& connectors() const { return connectors_; }

  bool on_road(Vec2 p) const {
    for (const auto& r : drivable_) {
      if (r.contains(p)) return true;
    }
    return false;
  }

  /// Two connectors of the same zone conflict when their centre lines pass
  /// within a car width plus margin of each other. A connector never
  /// conflicts with itself (vehicles on one path simply follow).
  bool connectors_conflict(int a, int b) const {
    if (a == b) return false;
    const std::size_t n = connectors_.size();
    return conflict_[static_cast<std::size_t>(a) * n + static_cast<std::size_t>(b)] != 0;
  }

  /// Connectors leaving `lane` at its end zone (U-turns excluded).
  std::vector<int> successors(int lane) const {
    auto it = successors_.find(lane);
    return it == successors_.end() ? std::vector<int>{} : it->second;
  }

 private:
  void build_urban() {
    const double hw = tpl_.lane_width;
    for (const auto& n : tpl_.nodes) zones_.push_back({n, tpl_.zone_half_size});
    for (std::size_t r = 0; r < tpl_.roads.size(); ++r) {
      const auto [a, b] = tpl_.roads[r];
      const Vec2 pa = tpl_.nodes[static_cast<std::size_t>(a)], pb = tpl_.nodes[static_cast<std::size_t>(b)];
      const Vec2 d = (pb - pa).normalized();
      const double len = (pb - pa).norm();
      if (len <= 2 * tpl_.zone_half_size + 1.0) throw std::invalid_argument("map: road shorter than its zones");
      drivable_.push_back({(pa + pb) * 0.5, std::atan2(d.y, d.x), len + hw, 2 * hw});
      for (int dir = 0; dir < 2; ++dir) {
        const Vec2 from = dir == 0 ? pa : pb, to = dir == 0 ? pb : pa;
        const Vec2 u = dir == 0 ? d : d * -1.0;
        const Vec2 right = left_of(u) * -1.0;
        const Vec2 off = right * (0.5 * hw);
        Lane lane;
        lane.path = Polyline({from + u * tpl_.zone_half_size + off, to - u * tpl_.zone_half_size + off});
        lane.road = static_cast<int>(r);
        lane.from_node = dir == 0 ? a : b;
        lane.to_node = dir == 0 ? b : a;
        lanes_.push_back(std::move(lane));
      }
      for (int end = 0; end < 2; ++end) {
        const Vec2 c = end == 0 ? pa + d * tpl_.crosswalk_offset : pb - d * tpl_.crosswalk_offset;
        const Vec2 n = left_of(d) * (hw + 1.5);
        crosswalks_.push_back({c - n, c + n, c, d, hw, static_cast<int>(r)});
      }
    }
    for (const auto& z : zones_) drivable_.push_back(z.rect());
    for (std::size_t i = 0; i < lanes_.size(); ++i) {
      const Lane& in = lanes_[i];
      for (std::size_t o = 0; o < lanes_.size(); ++o) {
        const Lane& out = lanes_[o];
        if (out.from_node != in.to_node || out.road == in.road) continue;
        const Vec2 p0 = in.path.points().back(), p2 = out.path.points().front();
        const Vec2 u = heading_vector(in.path.heading_at(in.path.length()));
        const Vec2 v = heading_vector(out.path.heading_at(0.0));
        const Vec2 c = line_intersection(p0, u, p2, v);
        Connector con;
        con.zone = in.to_node;
        con.in_lane = static_cast<int>(i);
        con.out_lane = static_cast<int>(o);
        con.path = Polyline(sample_bezier(p0, c, p2, 0.5));
        con.turn = std::abs(u.cross(v)) > 0.5;
        successors_[static_cast<int>(i)].push_back(static_cast<int>(connectors_.size()));
        connectors_.push_back(std::move(con));
      }
    }
    const std::size_t n = connectors_.size();
    conflict_.assign(n * n, 0);
    constexpr double kClearance = 2.6;
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t b = a + 1; b < n; ++b) {
        if (connectors_[a].zone != connectors_[b].zone) continue;
        bool hit = false;
        for (const Vec2& p : connectors_[a].path.points()) {
          for (const Vec2& q : connectors_[b].path.points()) {
            if ((p - q).norm() < kClearance) {
              hit = true;
              break;
            }
          }
          if (hit) break;
        }
        conflict_[a * n + b] = conflict_[b * n + a] = hit ? 1 : 0;
      }
    }
  }

  void build_highway() {
    const auto& c = tpl_.nodes;
    const double hw = tpl_.lane_width;
    const double total = hw * tpl_.lanes;
    for (std::size_t i = 0; i + 1 < c.size(); ++i) {
      const Vec2 d = (c[i + 1] - c[i]).normalized();
      drivable_.push_back({(c[i] + c[i + 1]) * 0.5, std::atan2(d.y, d.x), (c[i + 1] - c[i]).norm() + total, total});
    }
    for (int l = 0; l < tpl_.lanes; ++l) {
      // lane 0 is the rightmost
      const double offset = -0.5 * total + (l + 0.5) * hw;
      std::vector<Vec2> pts;
      for (std::size_t i = 0; i < c.size(); ++i) {
        const Vec2 a = i == 0 ? c[0] : c[i - 1], b = i + 1 == c.size() ? c[i] : c[i + 1];
        const Vec2 n = left_of((b - a).normalized());
        pts.push_back(c[i] + n * offset);
      }
      Lane lane;
      lane.path = Polyline(std::move(pts));
      lane.road = 0;
      lanes_.push_back(std::move(lane));
    }
  }

  MapTemplate tpl_;
  std::vector<Lane> lanes_;
  std::vector<Zone> zones_;
  std::vector<Crosswalk> crosswalks_;
  std::vector<OrientedRect> drivable_;
  std::vector<Connector> connectors_;
  std::map<int, std::vector<int>> successors_;
  std::vector<std::uint8_t> conflict_;
};

// ---------------------------------------------------------------------------
// Routes

struct ZoneSpan {
  double enter = 0, exit = 0;  // arc length along the route
  int zone = -1;
  int connector = -1;
};

struct Route {
  Polyline path;
  std::vector<ZoneSpan> zones;
  std::vector<int> roads;  // urban roads traversed, in order

  /// First span whose exit lies ahead of s, or nullptr.
  const ZoneSpan* next_zone(double s) const {
    for (const auto& z : zones) {
      if (z.exit > s) return &z;
    }
    return nullptr;
  }
};

/// Random walk over lanes without U-turns, starting `start_s` metres into
/// `lane`, until at least `length` metres of path exist ahead of the start.
inline Route random_route(const RoadMap& map, int lane, double start_s, double length, std::mt19937_64& rng) {
  Route route;
  std::vector<Vec2> pts;
  auto append = [&](const Polyline& p, double from) {
    const auto& src = p.points();
    const auto& arc = p.arc();
    auto push = [&](Vec2 q) {
      if (pts.empty() || (q - pts.back()).norm() > 1e-9) pts.push_back(q);
    };
    push(p.point_at(from));
    for (std::size_t i = 0; i < src.size(); ++i) {
      if (arc[i] > from) push(src[i]);
    }
  };
  auto current_length = [&] {
    double s = 0;
    for (std::size_t i = 1; i < pts.size(); ++i) s += (pts[i] - pts[i - 1]).norm();
    return s;
  };
  int cur = lane;
  append(map.lanes()[static_cast<std::size_t>(cur)].path, start_s);
  route.roads.push_back(map.lanes()[static_cast<std::size_t>(cur)].road);
  double total = current_length();
  while (total < length) {
    const auto next = map.successors(cur);
    if (next.empty()) break;  // highway lanes end
    const int ci = next[std::uniform_int_distribution<std::size_t>(0, next.size() - 1)(rng)];
    const Connector& con = map.connectors()[static_cast<std::size_t>(ci)];
    const double enter = total;
    append(con.path, 0.0);
    total = current_length();
    route.zones.push_back({enter, total, con.zone, ci});
    cur = con.out_lane;
    append(map.lanes()[static_cast<std::size_t>(cur)].path, 0.0);
    route.roads.push_back(map.lanes()[static_cast<std::size_t>(cur)].road);
    total = current_length();
  }
  route.path = Polyline(std::move(pts));
  return route;
}

}  // namespace ocp::sim
