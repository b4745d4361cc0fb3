#pragma once

// Discrete action vocabulary and the PID layer that turns an action into
// throttle / brake / steer. Shared by every policy and by the expert.

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

namespace ocp::controller {

struct Control {
  double throttle = 0.0;  // [0, 1]
  double brake = 0.0;     // [0, 1]
  double steer = 0.0;     // [-1, 1], left positive

  Control clamped() const {
    return {std::clamp(throttle, 0.0, 1.0), std::clamp(brake, 0.0, 1.0), std::clamp(steer, -1.0, 1.0)};
  }
  friend bool operator==(const Control&, const Control&) = default;
};

enum class SteerCommand { Left = 0, Straight = 1, Right = 2 };
enum class SpeedCommand { Fast = 0, Slow = 1, Stop = 2 };

inline constexpr int kNumActions = 9;

inline int encode_action(SteerCommand steer, SpeedCommand speed) {
  return static_cast<int>(steer) * 3 + static_cast<int>(speed);
}

inline void check_action(int action) {
  if (action < 0 || action >= kNumActions) throw std::out_of_range("action " + std::to_string(action) + " not in [0, 8]");
}

inline SteerCommand steer_of(int action) {
  check_action(action);
  return static_cast<SteerCommand>(action / 3);
}

inline SpeedCommand speed_of(int action) {
  check_action(action);
  return static_cast<SpeedCommand>(action % 3);
}

inline std::string action_name(int action) {
  static constexpr std::array<const char*, 3> steer{"left", "straight", "right"};
  static constexpr std::array<const char*, 3> speed{"fast", "slow", "stop"};
  return std::string(steer[static_cast<std::size_t>(steer_of(action))]) + "_" +
         speed[static_cast<std::size_t>(speed_of(action))];
}

/// Thresholds that map the expert's continuous targets to an action.
struct DiscretizeConfig {
  double offset_threshold = 0.1;  // rad; strict inequality
  double stop_below = 0.5;        // m/s
  double fast_above = 3.5;        // m/s
};

inline int discretize_action(double heading_offset, double target_speed, const DiscretizeConfig& c = {}) {
  SteerCommand s = SteerCommand::Straight;
  if (heading_offset > c.offset_threshold) s = SteerCommand::Left;
  if (heading_offset < -c.offset_threshold) s = SteerCommand::Right;
  SpeedCommand v = SpeedCommand::Slow;
  if (target_speed < c.stop_below) v = SpeedCommand::Stop;
  if (target_speed > c.fast_above) v = SpeedCommand::Fast;
  return encode_action(s, v);
}

struct PidConfig {
  double kp = 0.5;
  double ki = 0.1;
  double kd = 0.05;
  double ks = 1.0;
  double integral_limit = 5.0;
  std::array<double, 3> speed_targets{5.5, 2.0, 0.0};     // fast, slow, stop
  std::array<double, 3> heading_offsets{0.35, 0.0, -0.35};  // left, straight, right

  void validate() const {
    if (kp < 0 || ki < 0 || kd < 0 || ks < 0) throw std::invalid_argument("pid: gains must be nonnegative");
    if (!(integral_limit >= 0)) throw std::invalid_argument("pid: integral_limit must be nonnegative");
  }
};

struct Targets {
  double speed = 0.0;           // m/s
  double heading_offset = 0.0;  // rad, left positive
  friend bool operator==(const Targets&, const Targets&) = default;
};

inline Targets decode(int action, const PidConfig& c = {}) {
  return {c.speed_targets[static_cast<std::size_t>(speed_of(action))],
          c.heading_offsets[static_cast<std::size_t>(steer_of(action))]};
}

struct PidState {
  PidConfig config;
  double integral = 0.0;
  double previous_error = 0.0;
};

inline void reset(PidState& pid) {
  pid.integral = 0.0;
  pid.previous_error = 0.0;
}

/// One control tick. `route_heading_error` is the lane-following term
/// (angle to the look-ahead point on the route); the discrete heading offset
/// is added on top of it.
inline Control pid_step(PidState& pid, const Targets& target, double current_speed, double route_heading_error,
                        double dt) {
  if (!(dt > 0)) throw std::invalid_argument("pid_step: dt must be positive");
  const PidConfig& c = pid.config;
  const double e = target.speed - current_speed;
  const double derivative = (e - pid.previous_error) / dt;
  pid.previous_error = e;
  // Anti-windup: clamp, and hold the integral while the actuator is
  // saturated in the direction the error pushes.
  const double held = c.kp * e + c.ki * pid.integral + c.kd * derivative;
  const bool saturated = (held >= 1.0 && e > 0) || (held <= -1.0 && e < 0);
  if (!saturated) pid.integral = std::clamp(pid.integral + e * dt, -c.integral_limit, c.integral_limit);
  const double u = c.kp * e + c.ki * pid.integral + c.kd * derivative;
  Control out;
  if (u > 0) {
    out.throttle = std::min(u, 1.0);
  } else if (u < 0) {
    out.brake = std::min(-u, 1.0);
  }
  out.steer = std::clamp(c.ks * (target.heading_offset + route_heading_error), -1.0, 1.0);
  return out;
}

}  // namespace ocp::controller
