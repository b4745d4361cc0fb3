#include <gtest/gtest.h>

#include <random>
#include <set>

#include "ocp/controller.hpp"
#include "ocp/sim/world.hpp"

using namespace ocp::controller;

TEST(Actions, EncodingAndNames) {
  EXPECT_EQ(encode_action(SteerCommand::Left, SpeedCommand::Fast), 0);
  EXPECT_EQ(encode_action(SteerCommand::Straight, SpeedCommand::Fast), 3);
  EXPECT_EQ(encode_action(SteerCommand::Right, SpeedCommand::Stop), 8);
  EXPECT_EQ(action_name(5), "straight_stop");
  for (int a = 0; a < kNumActions; ++a) EXPECT_EQ(encode_action(steer_of(a), speed_of(a)), a);
  EXPECT_THROW(check_action(9), std::out_of_range);
  EXPECT_THROW(check_action(-1), std::out_of_range);
}

TEST(Decode, TableExamples) {
  EXPECT_EQ(decode(encode_action(SteerCommand::Straight, SpeedCommand::Fast)), (Targets{5.5, 0.0}));
  EXPECT_EQ(decode(encode_action(SteerCommand::Left, SpeedCommand::Stop)), (Targets{0.0, 0.35}));
  std::set<std::pair<double, double>> seen;
  for (int a = 0; a < kNumActions; ++a) {
    const auto t = decode(a);
    seen.insert({t.speed, t.heading_offset});
  }
  EXPECT_EQ(seen.size(), 9u);
  EXPECT_THROW(decode(9), std::out_of_range);
}

TEST(Discretize, Thresholds) {
  EXPECT_EQ(discretize_action(0.0, 5.5), encode_action(SteerCommand::Straight, SpeedCommand::Fast));
  EXPECT_EQ(discretize_action(0.35, 0.0), encode_action(SteerCommand::Left, SpeedCommand::Stop));
  EXPECT_EQ(steer_of(discretize_action(0.1, 2.0)), SteerCommand::Straight);
  EXPECT_EQ(steer_of(discretize_action(-0.1, 2.0)), SteerCommand::Straight);
  EXPECT_EQ(steer_of(discretize_action(std::nextafter(0.1, 1.0), 2.0)), SteerCommand::Left);
  EXPECT_EQ(steer_of(discretize_action(-0.2, 2.0)), SteerCommand::Right);
  EXPECT_EQ(speed_of(discretize_action(0.0, 0.5)), SpeedCommand::Slow);
  EXPECT_EQ(speed_of(discretize_action(0.0, 3.5)), SpeedCommand::Slow);
  EXPECT_EQ(speed_of(discretize_action(0.0, 0.49)), SpeedCommand::Stop);
  EXPECT_EQ(speed_of(discretize_action(0.0, 3.51)), SpeedCommand::Fast);
}

TEST(Discretize, RoundTripsDecodedTargets) {
  for (int a = 0; a < kNumActions; ++a) {
    const auto t = decode(a);
    EXPECT_EQ(discretize_action(t.heading_offset, t.speed), a);
  }
}

TEST(Pid, ZeroErrorGivesZeroOutput) {
  PidState pid;
  const Control c = pid_step(pid, {0.0, 0.0}, 0.0, 0.0, 1.0 / 12);
  EXPECT_EQ(c, Control{});
}

TEST(Pid, OverspeedBrakes) {
  PidState pid;
  const Control c = pid_step(pid, {0.0, 0.0}, 5.0, 0.0, 1.0 / 12);
  EXPECT_GT(c.brake, 0.0);
  EXPECT_EQ(c.throttle, 0.0);
}

TEST(Pid, SteerFollowsOffsetPlusRouteError) {
  PidState pid;
  EXPECT_DOUBLE_EQ(pid_step(pid, {0.0, 0.35}, 0.0, 0.1, 0.1).steer, 0.45);
  EXPECT_DOUBLE_EQ(pid_step(pid, {0.0, -0.35}, 0.0, -2.0, 0.1).steer, -1.0);
}

TEST(Pid, BadDtThrows) {
  PidState pid;
  EXPECT_THROW(pid_step(pid, {}, 0, 0, 0.0), std::invalid_argument);
  EXPECT_THROW(pid_step(pid, {}, 0, 0, -1.0), std::invalid_argument);
}

TEST(Pid, ResetZeroesAndIsIdempotent) {
  PidState pid;
  pid_step(pid, {5.5, 0}, 0.0, 0.0, 0.5);
  reset(pid);
  EXPECT_EQ(pid.integral, 0.0);
  EXPECT_EQ(pid.previous_error, 0.0);
  PidState again = pid;
  reset(again);
  EXPECT_EQ(again.integral, pid.integral);
  EXPECT_EQ(again.previous_error, pid.previous_error);
  EXPECT_EQ(pid_step(pid, {0, 0}, 0, 0, 0.1), Control{});
}

TEST(Pid, ConfigValidation) {
  PidConfig c;
  EXPECT_NO_THROW(c.validate());
  c.kd = -1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

// Random inputs: ranges, exclusivity, clamped integral, determinism.
TEST(PidProperties, RangesAndExclusivity) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> speed(0, 6), err(-3, 3), dt(0.01, 0.5);
  std::uniform_int_distribution<int> action(0, 8);
  PidState a, b;
  for (int i = 0; i < 20000; ++i) {
    const auto t = decode(action(rng));
    const double v = speed(rng), e = err(rng), h = dt(rng);
    const Control ca = pid_step(a, t, v, e, h);
    const Control cb = pid_step(b, t, v, e, h);
    EXPECT_EQ(ca, cb);
    EXPECT_GE(ca.throttle, 0.0);
    EXPECT_LE(ca.throttle, 1.0);
    EXPECT_GE(ca.brake, 0.0);
    EXPECT_LE(ca.brake, 1.0);
    EXPECT_GE(ca.steer, -1.0);
    EXPECT_LE(ca.steer, 1.0);
    EXPECT_FALSE(ca.throttle > 0 && ca.brake > 0);
    EXPECT_LE(std::abs(a.integral), a.config.integral_limit);
  }
}

// Closed loop on the simulator's ego dynamics: from rest to the fast target.
TEST(PidStepResponse, ReachesFastTargetWithoutOvershoot) {
  using namespace ocp::sim;
  World w = spawn_scenario(ScenarioKind::Highway, 3);
  w.vehicles.clear();
  PidState pid;
  const Targets target{5.5, 0.0};
  double settled_at = -1, peak = 0;
  for (int f = 0; f < 12 * 20; ++f) {
    step(w, pid_step(pid, target, w.ego.speed, route_heading_error(w), kDt));
    peak = std::max(peak, w.ego.speed);
    const bool inside = std::abs(w.ego.speed - target.speed) <= 0.3;
    if (inside && settled_at < 0) settled_at = w.time;
    if (!inside) settled_at = -1;
  }
  ASSERT_GE(settled_at, 0.0);
  EXPECT_LE(settled_at, 5.0);
  EXPECT_LE(peak, 1.1 * target.speed);
}

TEST(PidStepResponse, StopsFromFastTarget) {
  using namespace ocp::sim;
  World w = spawn_scenario(ScenarioKind::Highway, 3);
  w.vehicles.clear();
  PidState pid;
  for (int f = 0; f < 12 * 10; ++f) step(w, pid_step(pid, {5.5, 0}, w.ego.speed, route_heading_error(w), kDt));
  for (int f = 0; f < 12 * 5; ++f) step(w, pid_step(pid, {0.0, 0}, w.ego.speed, route_heading_error(w), kDt));
  EXPECT_LT(w.ego.speed, 0.05);
}
