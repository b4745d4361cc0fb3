#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ocp/controller.hpp"
#include "ocp/io.hpp"
#include "ocp/sim/geometry.hpp"
#include "ocp/sim/map.hpp"

namespace ocp::sim {

using controller::Control;

inline constexpr double kDt = 1.0 / 12.0;
inline constexpr double kSpeedCap = 5.556;  // 20 km/h

struct Dynamics {
  double wheelbase = 2.5;
  double max_wheel_angle = std::numbers::pi / 6.0;
  double throttle_accel = 3.0;
  double brake_decel = 6.0;
  double drag = 0.1;  // per second, times speed
};

inline constexpr double kVehicleLength = 4.5;
inline constexpr double kVehicleWidth = 1.8;
inline constexpr double kPedestrianSize = 0.8;
inline constexpr double kPedestrianSpeed = 1.2;

struct Ego {
  Vec2 pos;
  double heading = 0;
  double speed = 0;
  double yaw_rate = 0;
  double progress = 0;  // arc length along routes[0]
  OrientedRect footprint() const { return {pos, heading, kVehicleLength, kVehicleWidth}; }
};

struct Vehicle {
  int route = -1;
  double s = 0;
  double speed = 0;
  double cruise = 0;
  int claim = -1;  // index into the route's zone spans, -1 when none held
  Vec2 pos;
  double heading = 0;
  OrientedRect footprint() const { return {pos, heading, kVehicleLength, kVehicleWidth}; }
};

struct Pedestrian {
  int crosswalk = -1;
  double t = 0;  // metres walked from endpoint a
  int dir = 1;   // +1 walking a -> b
  bool crossing = false;
  double wait = 0;
  Vec2 pos;
  double heading = 0;
  OrientedRect footprint() const { return {pos, heading, kPedestrianSize, kPedestrianSize}; }
};

/// Agent ids used in collision bookkeeping.
inline int vehicle_id(std::size_t i) { return static_cast<int>(i); }
inline int pedestrian_id(std::size_t i) { return 100000 + static_cast<int>(i); }

class World {
 public:
  std::shared_ptr<const RoadMap> map;
  std::vector<Route> routes;  // routes[0] belongs to the ego
  std::uint64_t seed = 0;
  double time = 0;
  std::uint64_t frame = 0;
  Ego ego;
  std::vector<Vehicle> vehicles;
  std::vector<Pedestrian> pedestrians;
  std::mt19937_64 rng;
  Dynamics dynamics;

  ScenarioKind kind() const { return map->kind(); }
  const Route& ego_route() const { return routes.front(); }
};

// ---------------------------------------------------------------------------
// Corridor queries

/// Footprint-sized boxes swept along `path` from s0 over `length` metres.
inline std::vector<OrientedRect> corridor(const Polyline& path, double s0, double length, double width) {
  std::vector<OrientedRect> out;
  if (length <= 0) return out;
  const double step = 1.0;
  const int n = std::max(1, static_cast<int>(std::ceil(length / step)));
  const double seg = length / n;
  for (int i = 0; i < n; ++i) {
    const double s = s0 + (i + 0.5) * seg;
    if (s > path.length()) break;
    out.push_back({path.point_at(s), path.heading_at(s), seg + 0.2, width});
  }
  return out;
}

inline bool hits(const std::vector<OrientedRect>& cells, const OrientedRect& r) {
  for (const auto& c : cells) {
    if (overlaps(c, r)) return true;
  }
  return false;
}

inline double corridor_length(double speed) { return 1.5 * speed + 3.0; }

// ---------------------------------------------------------------------------
// Spawning

struct SpawnOptions {
  int template_index = -1;  // -1 picks from the seed
};

namespace detail {

inline void place_vehicle(const World& w, Vehicle& v) {
  const Polyline& p = w.routes[static_cast<std::size_t>(v.route)].path;
  v.pos = p.point_at(v.s);
  v.heading = p.heading_at(v.s);
}

inline void place_pedestrian(const RoadMap& map, Pedestrian& p) {
  const Crosswalk& c = map.crosswalks()[static_cast<std::size_t>(p.crosswalk)];
  const Vec2 d = c.b - c.a;
  const double len = d.norm();
  p.pos = c.a + d * (p.t / len);
  const Vec2 walk = d * (static_cast<double>(p.dir) / len);
  p.heading = std::atan2(walk.y, walk.x);
}

inline void place_ego(World& w, double s) {
  const Polyline& p = w.ego_route().path;
  w.ego.pos = p.point_at(s);
  w.ego.heading = p.heading_at(s);
  w.ego.progress = s;
}

}  // namespace detail

inline World spawn_scenario(ScenarioKind kind, std::uint64_t seed, const SpawnOptions& opt = {}) {
  World w;
  w.seed = seed;
  w.rng.seed(seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(kind) + 1);
  auto& rng = w.rng;
  const auto templates = templates_of(kind);
  std::size_t ti = 0;
  if (opt.template_index >= 0) {
    ti = static_cast<std::size_t>(opt.template_index);
    if (ti >= templates.size()) throw std::invalid_argument("spawn: template index out of range");
  } else {
    ti = std::uniform_int_distribution<std::size_t>(0, templates.size() - 1)(rng);
  }
  w.map = std::make_shared<const RoadMap>(*templates[ti]);
  const RoadMap& map = *w.map;
  const MapTemplate& t = map.spec();
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto count = [&](Range r) {
    return std::uniform_int_distribution<int>(static_cast<int>(r.lo), static_cast<int>(r.hi))(rng);
  };
  const auto nlanes = map.lanes().size();
  auto random_lane = [&] { return static_cast<int>(std::uniform_int_distribution<std::size_t>(0, nlanes - 1)(rng)); };

  // ego
  {
    const int lane = random_lane();
    const double len = map.lanes()[static_cast<std::size_t>(lane)].path.length();
    const double s = kind == ScenarioKind::Highway ? uniform(50.0, 200.0) : uniform(3.0, std::max(3.5, len - 8.0));
    w.routes.push_back(random_route(map, lane, s, t.route_length, rng));
    detail::place_ego(w, 0.0);
  }

  // vehicles
  const int n_vehicles = count(t.vehicles);
  int attempts = 0;
  while (static_cast<int>(w.vehicles.size()) < n_vehicles && attempts++ < 500) {
    const int lane = random_lane();
    const double len = map.lanes()[static_cast<std::size_t>(lane)].path.length();
    double s = 0;
    if (kind == ScenarioKind::Highway) {
      s = std::clamp(map.lanes()[static_cast<std::size_t>(lane)].path.project(w.ego.pos, 0, len) + uniform(-60.0, 400.0),
                     5.0, len - 100.0);
    } else {
      if (len < 6.0) continue;
      s = uniform(3.0, len - 3.0);
    }
    Route r = random_route(map, lane, s, t.route_length, rng);
    Vehicle v;
    v.s = 0;
    v.cruise = uniform(t.vehicle_speed.lo, t.vehicle_speed.hi);
    v.speed = v.cruise * 0.5;
    v.pos = r.path.point_at(0);
    v.heading = r.path.heading_at(0);
    OrientedRect padded = v.footprint();
    padded.length += 6.0;
    padded.width += 0.6;
    bool clear = !overlaps(padded, w.ego.footprint()) && (v.pos - w.ego.pos).norm() > 15.0;
    for (const auto& o : w.vehicles) clear = clear && !overlaps(padded, o.footprint());
    if (!clear) continue;
    v.route = static_cast<int>(w.routes.size());
    w.routes.push_back(std::move(r));
    w.vehicles.push_back(v);
  }

  // pedestrians, preferring crosswalks on roads the ego will drive
  const int n_peds = count(t.pedestrians);
  if (n_peds > 0 && !map.crosswalks().empty()) {
    std::vector<int> preferred, others;
    const auto& roads = w.ego_route().roads;
    const std::size_t horizon = std::min<std::size_t>(roads.size(), 10);
    for (std::size_t c = 0; c < map.crosswalks().size(); ++c) {
      const int road = map.crosswalks()[c].road;
      const bool near = std::find(roads.begin(), roads.begin() + static_cast<std::ptrdiff_t>(horizon), road) !=
                        roads.begin() + static_cast<std::ptrdiff_t>(horizon);
      (near ? preferred : others).push_back(static_cast<int>(c));
    }
    std::shuffle(preferred.begin(), preferred.end(), rng);
    std::shuffle(others.begin(), others.end(), rng);
    preferred.insert(preferred.end(), others.begin(), others.end());
    for (int i = 0; i < n_peds && i < static_cast<int>(preferred.size()); ++i) {
      Pedestrian p;
      p.crosswalk = preferred[static_cast<std::size_t>(i)];
      const Crosswalk& c = map.crosswalks()[static_cast<std::size_t>(p.crosswalk)];
      const bool at_b = uniform(0, 1) < 0.5;
      p.t = at_b ? (c.b - c.a).norm() : 0.0;
      p.dir = at_b ? -1 : 1;
      p.wait = uniform(0.0, 8.0);
      detail::place_pedestrian(map, p);
      w.pedestrians.push_back(p);
    }
  }
  return w;
}

// ---------------------------------------------------------------------------
// Intersection claims

/// Zone span the agent at arc length `s` (centre) is approaching or inside.
inline const ZoneSpan* active_span(const Route& r, double s_rear) { return r.next_zone(s_rear); }

/// True when the ego announces use of `zone`: its front is within 6 m of
/// the entry or it is already inside its connector span.
inline const ZoneSpan* ego_intent(const World& w) {
  const Route& r = w.ego_route();
  const double front = w.ego.progress + 0.5 * kVehicleLength;
  const double rear = w.ego.progress - 0.5 * kVehicleLength;
  const ZoneSpan* span = r.next_zone(rear);
  if (!span) return nullptr;
  if (span->enter - front <= 6.0) return span;
  return nullptr;
}

inline bool claim_conflicts(const World& w, const ZoneSpan& span, std::size_t self) {
  const RoadMap& map = *w.map;
  for (std::size_t i = 0; i < w.vehicles.size(); ++i) {
    if (i == self) continue;
    const Vehicle& o = w.vehicles[i];
    if (o.claim < 0) continue;
    const ZoneSpan& os = w.routes[static_cast<std::size_t>(o.route)].zones[static_cast<std::size_t>(o.claim)];
    if (os.zone == span.zone && map.connectors_conflict(os.connector, span.connector)) return true;
  }
  return false;
}

// ---------------------------------------------------------------------------
// Step

namespace detail {

inline void step_ego(World& w, const Control& raw) {
  const Control c = raw.clamped();
  Ego& e = w.ego;
  const Dynamics& d = w.dynamics;
  const double v = e.speed;
  const double delta = c.steer * d.max_wheel_angle;
  e.yaw_rate = v / d.wheelbase * std::tan(delta);
  e.pos = e.pos + heading_vector(e.heading) * (v * kDt);
  e.heading = wrap_angle(e.heading + e.yaw_rate * kDt);
  const double accel = d.throttle_accel * c.throttle - d.brake_decel * c.brake - d.drag * v;
  e.speed = std::clamp(v + accel * kDt, 0.0, kSpeedCap);
  const Polyline& p = w.ego_route().path;
  e.progress = p.project(e.pos, e.progress - 2.0, e.progress + 10.0);
}

inline bool exit_clear(const World& w, std::size_t self, const ZoneSpan& span) {
  const Vehicle& v = w.vehicles[self];
  const Polyline& p = w.routes[static_cast<std::size_t>(v.route)].path;
  const auto cells = corridor(p, span.exit, kVehicleLength + 2.0, kVehicleWidth + 0.6);
  for (std::size_t i = 0; i < w.vehicles.size(); ++i) {
    if (i != self && hits(cells, w.vehicles[i].footprint())) return false;
  }
  return !hits(cells, w.ego.footprint());
}

inline void step_vehicle(World& w, std::size_t idx) {
  Vehicle& v = w.vehicles[idx];
  const Route& route = w.routes[static_cast<std::size_t>(v.route)];
  const RoadMap& map = *w.map;
  const double front = v.s + 0.5 * kVehicleLength;
  const double rear = v.s - 0.5 * kVehicleLength;
  const OrientedRect ego_fp = w.ego.footprint();
  const bool touching_ego = overlaps(v.footprint(), ego_fp);

  if (v.claim >= 0 && rear > route.zones[static_cast<std::size_t>(v.claim)].exit) v.claim = -1;

  double target = v.cruise;
  if (const ZoneSpan* span = route.next_zone(rear)) {
    const auto span_idx = static_cast<int>(span - route.zones.data());
    const double dist = span->enter - front;
    const bool turn = map.connectors()[static_cast<std::size_t>(span->connector)].turn;
    if (dist < 10.0) target = std::min(target, turn ? 2.5 : 4.0);
    if (v.claim != span_idx && dist < v.speed * v.speed / (2.0 * w.dynamics.brake_decel) + 2.0) {
      bool ok = dist < 0.0;  // already inside (e.g. pushed in): keep going
      if (!ok) {
        ok = !claim_conflicts(w, *span, idx) && exit_clear(w, idx, *span);
        const ZoneSpan* ego_span = ego_intent(w);
        if (ok && ego_span && ego_span->zone == span->zone &&
            map.connectors_conflict(ego_span->connector, span->connector)) {
          ok = false;
        }
      }
      if (ok) {
        v.claim = span_idx;
      } else {
        target = 0.0;
      }
    }
  }

  const auto cells = corridor(route.path, front, corridor_length(v.speed), kVehicleWidth + 0.6);
  bool blocked = false;
  for (std::size_t i = 0; i < w.vehicles.size() && !blocked; ++i) {
    if (i != idx) blocked = hits(cells, w.vehicles[i].footprint());
  }
  const auto ped_cells = corridor(route.path, front, corridor_length(v.speed), kVehicleWidth + 2.2);
  for (std::size_t i = 0; i < w.pedestrians.size() && !blocked; ++i) blocked = hits(ped_cells, w.pedestrians[i].footprint());
  if (!blocked && !touching_ego) blocked = hits(cells, ego_fp);
  if (blocked) target = 0.0;

  v.speed = std::clamp(v.speed + std::clamp(target - v.speed, -w.dynamics.brake_decel * kDt,
                                            w.dynamics.throttle_accel * kDt),
                       0.0, kSpeedCap);
  const double end = route.path.length() - 0.5 * kVehicleLength;
  v.s = std::min(v.s + v.speed * kDt, end);
  if (v.s >= end) v.speed = 0.0;
  place_vehicle(w, v);
}

inline bool crosswalk_clear(const World& w, const Crosswalk& c) {
  const Vec2 n = left_of(c.road_dir);
  auto near = [&](Vec2 p, double gap) {
    const Vec2 d = p - c.center;
    return std::abs(d.dot(c.road_dir)) <= gap && std::abs(d.dot(n)) <= c.road_half_width + 3.0;
  };
  // Gap acceptance: 12 m plus 3 s of travel at the approaching speed.
  if (near(w.ego.pos, 12.0 + 3.0 * w.ego.speed)) return false;
  for (const auto& v : w.vehicles) {
    if (near(v.pos, 12.0 + 3.0 * v.speed)) return false;
  }
  return true;
}

inline void step_pedestrian(World& w, Pedestrian& p) {
  const RoadMap& map = *w.map;
  const Crosswalk& c = map.crosswalks()[static_cast<std::size_t>(p.crosswalk)];
  const double len = (c.b - c.a).norm();
  if (!p.crossing) {
    p.wait -= kDt;
    if (p.wait <= 0.0 && crosswalk_clear(w, c)) p.crossing = true;
    return;
  }
  const Vec2 dir = heading_vector(p.heading);
  const OrientedRect ahead{p.pos + dir * (0.5 * kPedestrianSize + 0.75), p.heading, 1.5, kPedestrianSize};
  bool blocked = false;
  // A car already stopped for the crossing will stay stopped; only yield to moving ones.
  for (const auto& v : w.vehicles) blocked = blocked || (v.speed > 0.1 && overlaps(ahead, v.footprint()));
  const OrientedRect ego_fp = w.ego.footprint();
  if (!overlaps(p.footprint(), ego_fp)) blocked = blocked || overlaps(ahead, ego_fp);
  if (blocked) return;
  p.t = std::clamp(p.t + p.dir * kPedestrianSpeed * kDt, 0.0, len);
  if ((p.dir > 0 && p.t >= len) || (p.dir < 0 && p.t <= 0.0)) {
    p.crossing = false;
    p.dir = -p.dir;
    p.wait = std::uniform_real_distribution<double>(2.0, 8.0)(w.rng);
  }
  place_pedestrian(map, p);
}

}  // namespace detail

/// Advances the world by one frame: ego dynamics, scripted vehicles (in
/// index order), pedestrians, then the clock.
inline void step(World& w, const Control& ego_control) {
  detail::step_ego(w, ego_control);
  for (std::size_t i = 0; i < w.vehicles.size(); ++i) detail::step_vehicle(w, i);
  for (auto& p : w.pedestrians) detail::step_pedestrian(w, p);
  w.frame += 1;
  w.time = static_cast<double>(w.frame) * kDt;
}

// ---------------------------------------------------------------------------
// Expert

struct ExpertDecision {
  controller::Targets raw;  // continuous targets before discretization
  int action = 0;
  double route_error = 0;   // pure-pursuit angle to the look-ahead point
};

inline double route_heading_error(const World& w, double lookahead = 4.0) {
  const Polyline& p = w.ego_route().path;
  const Vec2 target = p.point_at(w.ego.progress + lookahead);
  const Vec2 d = target - w.ego.pos;
  if (d.norm() < 1e-9) return 0.0;
  return wrap_angle(std::atan2(d.y, d.x) - w.ego.heading);
}

inline bool ego_zone_blocked(const World& w, const ZoneSpan& span) {
  return claim_conflicts(w, span, w.vehicles.size());
}

inline ExpertDecision expert_decide(const World& w, const controller::DiscretizeConfig& dc = {}) {
  const Route& route = w.ego_route();
  const Polyline& p = route.path;
  const double s = w.ego.progress;
  ExpertDecision out;
  out.route_error = route_heading_error(w);
  if (s >= p.length() - 1.0) {
    out.action = controller::discretize_action(0.0, 0.0, dc);
    return out;
  }
  const double offset = wrap_angle(p.heading_at(s + 6.0) - p.heading_at(s));
  const double front = s + 0.5 * kVehicleLength;
  double target = 5.5;

  const double near_len = corridor_length(w.ego.speed);
  const auto near = corridor(p, front, near_len, kVehicleWidth + 0.6);
  const auto far = corridor(p, front + near_len, 8.0, kVehicleWidth + 0.6);
  bool blocked = false, caution = false;
  for (const auto& v : w.vehicles) {
    const auto fp = v.footprint();
    blocked = blocked || hits(near, fp);
    caution = caution || hits(far, fp);
  }
  // Pedestrians get a wider berth: they walk into the lane from the side.
  const auto near_ped = corridor(p, front, near_len, kVehicleWidth + 2.2);
  const auto far_ped = corridor(p, front, near_len + 8.0, kVehicleWidth + 5.0);
  for (const auto& q : w.pedestrians) {
    const auto fp = q.footprint();
    blocked = blocked || hits(near_ped, fp);
    caution = caution || (q.crossing && hits(far_ped, fp));
  }
  if (caution) target = std::min(target, 2.0);
  if (std::abs(offset) > dc.offset_threshold) target = std::min(target, 2.0);
  if (const ZoneSpan* span = route.next_zone(s - 0.5 * kVehicleLength)) {
    const double dist = span->enter - front;
    if (dist <= 12.0) target = std::min(target, 2.0);
    // Yield: roll up to the entry, then wait while a conflicting claim holds.
    if (dist > 0.0 && dist <= 2.5 && ego_zone_blocked(w, *span)) blocked = true;
  }
  if (blocked) target = 0.0;
  out.raw = {target, offset};
  out.action = controller::discretize_action(offset, target, dc);
  return out;
}

/// Expert control executed through the shared PID on its own discretized
/// action, so demonstrations are reproducible by a policy that outputs the
/// same label.
inline std::pair<Control, int> expert_control(const World& w, controller::PidState& pid,
                                              const controller::DiscretizeConfig& dc = {}) {
  const ExpertDecision d = expert_decide(w, dc);
  const auto targets = controller::decode(d.action, pid.config);
  return {controller::pid_step(pid, targets, w.ego.speed, d.route_error, kDt), d.action};
}

// ---------------------------------------------------------------------------
// Collisions and interventions

/// Ids of agents whose footprint overlaps the ego.
inline std::set<int> ego_contacts(const World& w) {
  std::set<int> out;
  const auto fp = w.ego.footprint();
  for (std::size_t i = 0; i < w.vehicles.size(); ++i) {
    if (overlaps(fp, w.vehicles[i].footprint())) out.insert(vehicle_id(i));
  }
  for (std::size_t i = 0; i < w.pedestrians.size(); ++i) {
    if (overlaps(fp, w.pedestrians[i].footprint())) out.insert(pedestrian_id(i));
  }
  return out;
}

/// Contact-episode collision detector: an agent produces one event when it
/// starts overlapping the ego and re-arms once separated.
class CollisionTracker {
 public:
  std::vector<int> update(const World& w) {
    const auto now = ego_contacts(w);
    std::vector<int> fresh;
    for (int id : now) {
      if (!contacts_.count(id)) fresh.push_back(id);
    }
    contacts_ = now;
    return fresh;
  }
  bool touching() const { return !contacts_.empty(); }
  void clear() { contacts_.clear(); }

 private:
  std::set<int> contacts_;
};

enum class EventType : std::uint8_t { Collision = 0, InterventionStart = 1, InterventionEnd = 2 };
enum class Reason : std::uint8_t { None = 0, Collision = 1, Stuck = 2, OffRoad = 3 };

inline const char* reason_name(Reason r) {
  switch (r) {
    case Reason::None: return "none";
    case Reason::Collision: return "collision";
    case Reason::Stuck: return "stuck";
    case Reason::OffRoad: return "offroad";
  }
  return "?";
}

struct Event {
  EventType type = EventType::Collision;
  std::uint64_t frame = 0;
  double time = 0;
  Reason reason = Reason::None;
  int agent = -1;
  friend bool operator==(const Event&, const Event&) = default;
};

struct InterventionConfig {
  double min_duration = 15.0;      // s
  double stuck_window = 10.0;      // s
  double stuck_distance = 0.5;     // m
  double offroad_time = 1.0;       // s
  double release_speed = 0.5;      // m/s
};

/// Watches the ego after every step and hands control to the expert on a
/// collision, when stuck, or when off the road.
class Supervisor {
 public:
  explicit Supervisor(InterventionConfig c = {}) : cfg_(c) {}

  bool active() const { return active_; }

  /// Call after step(). Returns the events of this frame; when an
  /// intervention starts the ego has been snapped back onto its route.
  std::vector<Event> after_step(World& w) {
    std::vector<Event> events;
    const auto fresh = collisions_.update(w);
    if (active_) {
      const bool done = w.time - start_time_ >= cfg_.min_duration - 1e-9 && !collisions_.touching() &&
                        w.map->on_road(w.ego.pos) && w.ego.speed > cfg_.release_speed;
      if (done) {
        active_ = false;
        events.push_back({EventType::InterventionEnd, w.frame, w.time, reason_, -1});
        reason_ = Reason::None;
        history_.clear();
        offroad_frames_ = 0;
      }
      return events;
    }
    Reason trigger = Reason::None;
    for (int id : fresh) events.push_back({EventType::Collision, w.frame, w.time, Reason::Collision, id});
    if (!fresh.empty()) trigger = Reason::Collision;

    history_.push_back(w.ego.pos);
    const auto window = static_cast<std::size_t>(std::llround(cfg_.stuck_window / kDt));
    if (history_.size() > window + 1) history_.pop_front();
    if (trigger == Reason::None && history_.size() == window + 1 &&
        (history_.back() - history_.front()).norm() < cfg_.stuck_distance) {
      trigger = Reason::Stuck;
    }
    offroad_frames_ = w.map->on_road(w.ego.pos) ? 0 : offroad_frames_ + 1;
    if (trigger == Reason::None && offroad_frames_ * kDt > cfg_.offroad_time + 1e-9) trigger = Reason::OffRoad;

    if (trigger != Reason::None) {
      active_ = true;
      reason_ = trigger;
      start_time_ = w.time;
      detail::place_ego(w, w.ego.progress);
      w.ego.speed = 0.0;
      w.ego.yaw_rate = 0.0;
      events.push_back({EventType::InterventionStart, w.frame, w.time, trigger, -1});
    }
    return events;
  }

 private:
  InterventionConfig cfg_;
  CollisionTracker collisions_;
  std::deque<Vec2> history_;
  int offroad_frames_ = 0;
  bool active_ = false;
  Reason reason_ = Reason::None;
  double start_time_ = 0;
};

// ---------------------------------------------------------------------------
// Serialization (determinism checks and replay)

inline std::vector<std::uint8_t> serialize(const World& w) {
  io::Writer out;
  out.bytes("OBJW");
  out.u16(1);
  out.bytes(w.map->spec().name);
  out.u8(0);
  out.u64(w.seed);
  out.u64(w.frame);
  out.f64(w.time);
  const Ego& e = w.ego;
  for (double v : {e.pos.x, e.pos.y, e.heading, e.speed, e.yaw_rate, e.progress}) out.f64(v);
  out.u32(static_cast<std::uint32_t>(w.vehicles.size()));
  for (const auto& v : w.vehicles) {
    out.u32(static_cast<std::uint32_t>(v.route));
    for (double x : {v.s, v.speed, v.cruise, v.pos.x, v.pos.y, v.heading}) out.f64(x);
    out.u32(static_cast<std::uint32_t>(v.claim + 1));
  }
  out.u32(static_cast<std::uint32_t>(w.pedestrians.size()));
  for (const auto& p : w.pedestrians) {
    out.u32(static_cast<std::uint32_t>(p.crosswalk));
    for (double x : {p.t, p.wait, p.pos.x, p.pos.y, p.heading}) out.f64(x);
    out.u8(p.dir > 0 ? 1 : 0);
    out.u8(p.crossing ? 1 : 0);
  }
  std::ostringstream rs;
  rs << w.rng;
  out.bytes(rs.str());
  return out.take();
}

}  // namespace ocp::sim
