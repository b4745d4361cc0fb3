#pragma once

// Run configuration: every knob of the pipeline with its default, read from
// JSON (a required `version` field, unknown keys rejected) and written back
// in full so an output directory records exactly what produced it.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ocp/datapipe.hpp"
#include "ocp/evalharness.hpp"
#include "ocp/policy.hpp"

namespace ocp::config {

using nlohmann::json;

inline constexpr int kConfigVersion = 1;

/// Bad configuration or arguments; the CLI maps it to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CollectSection {
  std::vector<sim::ScenarioKind> kinds{sim::ScenarioKind::Urban, sim::ScenarioKind::Highway};
  std::size_t episodes = 8;  // per kind, seeds seed .. seed + episodes - 1
  double episode_seconds = 61.0;
  data::NoiseSchedule noise;
};

struct TrainSection {
  objectcentric::Variant variant = objectcentric::Variant::SparseSum;
  data::Head head = data::Head::Action9;
  std::size_t k = 5;
  std::size_t bins = 2;
  bool selector_uses_global = true;
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  std::size_t batch_size = 32;
  std::size_t epochs = 3;
  bool zero_head = false;
};

struct EvalSection {
  double duration = 120.0;
  std::vector<sim::ScenarioKind> kinds{sim::ScenarioKind::Urban, sim::ScenarioKind::Highway};
  std::vector<eval::BoxCondition> box_conditions{eval::BoxCondition::GroundTruth, eval::BoxCondition::Noisy};
  std::uint64_t first_seed = 100000;  // disjoint from collection seeds
  std::size_t seeds = 10;
  sim::DetectionNoise noise{2.0, 0.1, 0.1};
  bool include_expert = true;
};

struct OfflineSection {
  std::vector<double> fractions{0.05, 0.10, 0.25, 0.50, 1.0};
  std::vector<objectcentric::Variant> variants{objectcentric::kAllVariants.begin(), objectcentric::kAllVariants.end()};
  std::size_t min_steps = 0;
};

struct RunConfig {
  int version = kConfigVersion;
  std::uint64_t seed = 0;
  CollectSection collect;
  TrainSection train;
  EvalSection eval;
  OfflineSection offline;
  sim::RenderConfig render;
  controller::PidConfig pid;
  controller::DiscretizeConfig discretize;
  data::Binning binning;

  data::CollectConfig collect_config() const {
    data::CollectConfig c;
    c.kinds = collect.kinds;
    c.seeds.clear();
    for (std::size_t i = 0; i < collect.episodes; ++i) c.seeds.push_back(seed + i);
    c.episode_seconds = collect.episode_seconds;
    c.noise = collect.noise;
    c.pid = pid;
    c.discretize = discretize;
    c.render = render;
    c.binning = binning;
    return c;
  }

  policy::PolicyConfig policy_config() const {
    policy::PolicyConfig p;
    p.representation.variant = train.variant;
    p.representation.k = train.k;
    p.representation.bins = train.bins;
    p.representation.selector_uses_global = train.selector_uses_global;
    p.head = train.head;
    p.binning = binning;
    return p;
  }

  policy::TrainConfig train_config() const {
    return {train.learning_rate, train.weight_decay, train.batch_size, train.epochs, seed, train.zero_head, 0.0};
  }

  eval::RolloutConfig rollout_config() const {
    eval::RolloutConfig r;
    r.duration = eval.duration;
    r.noise = eval.noise;
    r.pid = pid;
    r.discretize = discretize;
    r.render = render;
    return r;
  }

  std::vector<std::uint64_t> eval_seeds() const {
    std::vector<std::uint64_t> s;
    for (std::size_t i = 0; i < eval.seeds; ++i) s.push_back(eval.first_seed + i);
    return s;
  }

  eval::SweepConfig sweep_config() const {
    eval::SweepConfig s;
    s.fractions = offline.fractions;
    s.variants = offline.variants;
    s.subset_seed = seed;
    s.train = train_config();
    s.min_steps = offline.min_steps;
    s.representation = policy_config().representation;
    return s;
  }
};

inline void validate(const RunConfig& c);

// ---------------------------------------------------------------------------
// JSON

inline json to_json(const RunConfig& c) {
  json kinds = json::array(), eval_kinds = json::array(), conds = json::array(), variants = json::array();
  for (auto k : c.collect.kinds) kinds.push_back(sim::kind_name(k));
  for (auto k : c.eval.kinds) eval_kinds.push_back(sim::kind_name(k));
  for (auto b : c.eval.box_conditions) conds.push_back(eval::condition_name(b));
  for (auto v : c.offline.variants) variants.push_back(std::string(objectcentric::variant_name(v)));
  const auto& n = c.collect.noise;
  return {
      {"version", c.version},
      {"seed", c.seed},
      {"collect",
       {{"kinds", kinds},
        {"episodes", c.collect.episodes},
        {"episode_seconds", c.collect.episode_seconds},
        {"noise",
         {{"enabled", n.enabled},
          {"period", n.period},
          {"pulse_frames", n.pulse_frames},
          {"tail_frames", n.tail_frames},
          {"steer_amplitude", n.steer_amplitude}}}}},
      {"train",
       {{"variant", std::string(objectcentric::variant_name(c.train.variant))},
        {"head", data::head_name(c.train.head)},
        {"k", c.train.k},
        {"bins", c.train.bins},
        {"selector_uses_global", c.train.selector_uses_global},
        {"learning_rate", c.train.learning_rate},
        {"weight_decay", c.train.weight_decay},
        {"batch_size", c.train.batch_size},
        {"epochs", c.train.epochs},
        {"zero_head", c.train.zero_head}}},
      {"eval",
       {{"duration", c.eval.duration},
        {"kinds", eval_kinds},
        {"box_conditions", conds},
        {"first_seed", c.eval.first_seed},
        {"seeds", c.eval.seeds},
        {"noise",
         {{"sigma", c.eval.noise.sigma}, {"drop", c.eval.noise.drop}, {"false_positive", c.eval.noise.false_positive}}},
        {"include_expert", c.eval.include_expert}}},
      {"offline", {{"fractions", c.offline.fractions}, {"variants", variants}, {"min_steps", c.offline.min_steps}}},
      {"render",
       {{"size", c.render.size},
        {"metres_per_pixel", c.render.metres_per_pixel},
        {"route_spacing", c.render.route_spacing},
        {"route_horizon", c.render.route_horizon}}},
      {"pid",
       {{"kp", c.pid.kp},
        {"ki", c.pid.ki},
        {"kd", c.pid.kd},
        {"ks", c.pid.ks},
        {"integral_limit", c.pid.integral_limit},
        {"speed_targets", c.pid.speed_targets},
        {"heading_offsets", c.pid.heading_offsets}}},
      {"discretize",
       {{"offset_threshold", c.discretize.offset_threshold},
        {"stop_below", c.discretize.stop_below},
        {"fast_above", c.discretize.fast_above}}},
      {"binning",
       {{"speed_max", c.binning.speed_max},
        {"angular_min", c.binning.angular_min},
        {"angular_max", c.binning.angular_max},
        {"bins", c.binning.bins}}},
  };
}

namespace detail {

/// Overlays `patch` onto `base`, rejecting keys the base does not have.
inline void overlay(json& base, const json& patch, const std::string& path) {
  if (!patch.is_object()) throw ConfigError("config: " + (path.empty() ? "top level" : path) + " must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) throw ConfigError("config: unknown key '" + where + "'");
    json& slot = base[key];
    if (slot.is_object()) {
      overlay(slot, value, where);
      continue;
    }
    const bool numeric = slot.is_number() && value.is_number();
    if (slot.type() != value.type() && !numeric) {
      throw ConfigError("config: '" + where + "' should be " + std::string(slot.type_name()) + ", got " +
                        value.type_name());
    }
    slot = value;
  }
}

template <class T>
T get(const json& j, const char* key, const std::string& section) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config: bad value for '" + section + "." + key + "': " + e.what());
  }
}

}  // namespace detail

inline RunConfig from_json(const json& patch) {
  if (!patch.is_object()) throw ConfigError("config: top level must be an object");
  if (!patch.contains("version")) throw ConfigError("config: missing required 'version'");
  if (!patch.at("version").is_number_integer() || patch.at("version").get<int>() != kConfigVersion) {
    throw ConfigError("config: unsupported version " + patch.at("version").dump() + " (expected " +
                      std::to_string(kConfigVersion) + ")");
  }
  json j = to_json(RunConfig{});
  detail::overlay(j, patch, "");
  using detail::get;
  RunConfig c;
  try {
    c.seed = get<std::uint64_t>(j, "seed", "");
    const auto& col = j.at("collect");
    c.collect.kinds.clear();
    for (const auto& k : col.at("kinds")) c.collect.kinds.push_back(sim::parse_kind(k.get<std::string>()));
    c.collect.episodes = get<std::size_t>(col, "episodes", "collect");
    c.collect.episode_seconds = get<double>(col, "episode_seconds", "collect");
    const auto& n = col.at("noise");
    c.collect.noise = {get<bool>(n, "enabled", "collect.noise"), get<double>(n, "period", "collect.noise"),
                       get<int>(n, "pulse_frames", "collect.noise"), get<int>(n, "tail_frames", "collect.noise"),
                       get<double>(n, "steer_amplitude", "collect.noise")};

    const auto& t = j.at("train");
    c.train.variant = objectcentric::parse_variant(get<std::string>(t, "variant", "train"));
    c.train.head = data::parse_head(get<std::string>(t, "head", "train"));
    c.train.k = get<std::size_t>(t, "k", "train");
    c.train.bins = get<std::size_t>(t, "bins", "train");
    c.train.selector_uses_global = get<bool>(t, "selector_uses_global", "train");
    c.train.learning_rate = get<double>(t, "learning_rate", "train");
    c.train.weight_decay = get<double>(t, "weight_decay", "train");
    c.train.batch_size = get<std::size_t>(t, "batch_size", "train");
    c.train.epochs = get<std::size_t>(t, "epochs", "train");
    c.train.zero_head = get<bool>(t, "zero_head", "train");

    const auto& e = j.at("eval");
    c.eval.duration = get<double>(e, "duration", "eval");
    c.eval.kinds.clear();
    for (const auto& k : e.at("kinds")) c.eval.kinds.push_back(sim::parse_kind(k.get<std::string>()));
    c.eval.box_conditions.clear();
    for (const auto& b : e.at("box_conditions")) c.eval.box_conditions.push_back(eval::parse_condition(b.get<std::string>()));
    c.eval.first_seed = get<std::uint64_t>(e, "first_seed", "eval");
    c.eval.seeds = get<std::size_t>(e, "seeds", "eval");
    const auto& en = e.at("noise");
    c.eval.noise = {get<double>(en, "sigma", "eval.noise"), get<double>(en, "drop", "eval.noise"),
                    get<double>(en, "false_positive", "eval.noise")};
    c.eval.include_expert = get<bool>(e, "include_expert", "eval");

    const auto& o = j.at("offline");
    c.offline.fractions = get<std::vector<double>>(o, "fractions", "offline");
    c.offline.variants.clear();
    for (const auto& v : o.at("variants")) c.offline.variants.push_back(objectcentric::parse_variant(v.get<std::string>()));
    c.offline.min_steps = get<std::size_t>(o, "min_steps", "offline");

    const auto& r = j.at("render");
    c.render = {get<std::size_t>(r, "size", "render"), get<double>(r, "metres_per_pixel", "render"),
                get<double>(r, "route_spacing", "render"), get<double>(r, "route_horizon", "render")};
    const auto& p = j.at("pid");
    c.pid.kp = get<double>(p, "kp", "pid");
    c.pid.ki = get<double>(p, "ki", "pid");
    c.pid.kd = get<double>(p, "kd", "pid");
    c.pid.ks = get<double>(p, "ks", "pid");
    c.pid.integral_limit = get<double>(p, "integral_limit", "pid");
    c.pid.speed_targets = get<std::array<double, 3>>(p, "speed_targets", "pid");
    c.pid.heading_offsets = get<std::array<double, 3>>(p, "heading_offsets", "pid");
    const auto& d = j.at("discretize");
    c.discretize = {get<double>(d, "offset_threshold", "discretize"), get<double>(d, "stop_below", "discretize"),
                    get<double>(d, "fast_above", "discretize")};
    const auto& b = j.at("binning");
    c.binning = {get<double>(b, "speed_max", "binning"), get<double>(b, "angular_min", "binning"),
                 get<double>(b, "angular_max", "binning"), get<int>(b, "bins", "binning")};
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  validate(c);
  return c;
}

inline std::string to_text(const RunConfig& c) { return to_json(c).dump(2) + "\n"; }

inline RunConfig parse(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  return from_json(j);
}

inline void validate(const RunConfig& c) {
  auto fail = [](const std::string& m) { throw ConfigError("config: " + m); };
  if (c.collect.kinds.empty() || c.eval.kinds.empty()) fail("scenario kind lists must not be empty");
  if (c.collect.episodes == 0) fail("collect.episodes must be positive");
  if (!(c.collect.episode_seconds > 0)) fail("collect.episode_seconds must be positive");
  if (c.train.batch_size == 0 || c.train.epochs == 0) fail("train.batch_size and train.epochs must be positive");
  if (!(c.train.learning_rate >= 0) || !(c.train.weight_decay >= 0)) fail("train rates must be nonnegative");
  if (c.train.k == 0 || c.train.bins == 0) fail("train.k and train.bins must be positive");
  if (!(c.eval.duration > 0) || c.eval.seeds == 0) fail("eval.duration and eval.seeds must be positive");
  if (c.eval.box_conditions.empty()) fail("eval.box_conditions must not be empty");
  if (c.render.size < 16) fail("render.size must be at least 16");
  if (c.binning.bins <= 0 || !(c.binning.speed_max > 0) || !(c.binning.angular_max > c.binning.angular_min)) {
    fail("binning ranges are empty");
  }
  try {
    c.pid.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

}  // namespace ocp::config
