#pragma once

// On-policy rollouts, driving metrics, comparison tables, low-data
// perplexity sweeps and annotated frames.
//
// Rollout log container (little-endian):
//   "OBJR" u16 version u8 kind u64 seed u8 box_condition
//   u16 n + n bytes variant, f64 duration, u32 frames
//   per frame: f64 time, x, y, heading, speed, distance; u8 action; u8 flags (bit0 intervention)
//   u32 events, per event: u8 type, u64 frame, f64 time, u8 reason, i32 agent

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ocp/datapipe.hpp"
#include "ocp/io.hpp"
#include "ocp/parallel.hpp"
#include "ocp/policy.hpp"
#include "ocp/sim/render.hpp"
#include "ocp/sim/world.hpp"

namespace ocp::eval {

using diff::ParamSet;
using diff::Tensor;
using io::FormatError;
using perception::BoundingBox;
using policy::PolicyConfig;

inline constexpr std::uint16_t kRolloutVersion = 1;

enum class BoxCondition : std::uint8_t { GroundTruth = 0, Noisy = 1 };

inline const char* condition_name(BoxCondition c) { return c == BoxCondition::GroundTruth ? "gt" : "noisy"; }
inline BoxCondition parse_condition(const std::string& s) {
  if (s == "gt") return BoxCondition::GroundTruth;
  if (s == "noisy") return BoxCondition::Noisy;
  throw std::invalid_argument("unknown box condition '" + s + "'");
}

/// The expert, or a trained policy.
struct Driver {
  std::string name = "expert";
  std::optional<PolicyConfig> config;
  std::shared_ptr<const ParamSet> params;

  bool expert() const { return !config; }

  static Driver make_expert() { return {}; }
  static Driver make_policy(std::string name, PolicyConfig cfg, ParamSet params) {
    policy::check_params(params, cfg);
    if (cfg.head != data::Head::Action9) throw std::invalid_argument("driver '" + name + "': driving needs the 9-way head");
    return {std::move(name), std::move(cfg), std::make_shared<const ParamSet>(std::move(params))};
  }
};

struct RolloutConfig {
  double duration = 120.0;
  BoxCondition boxes = BoxCondition::GroundTruth;
  sim::DetectionNoise noise{2.0, 0.1, 0.1};
  controller::PidConfig pid;
  controller::DiscretizeConfig discretize;
  sim::RenderConfig render;
  sim::InterventionConfig intervention;
};

struct FrameLog {
  double time = 0;
  double x = 0, y = 0, heading = 0, speed = 0;
  double distance = 0;  // ego displacement over this frame's step
  std::uint8_t action = 0;
  bool intervention = false;
  friend bool operator==(const FrameLog&, const FrameLog&) = default;
};

struct RolloutLog {
  sim::ScenarioKind kind = sim::ScenarioKind::Urban;
  std::uint64_t seed = 0;
  BoxCondition boxes = BoxCondition::GroundTruth;
  std::string variant;
  double duration = 0;
  std::vector<FrameLog> frames;
  std::vector<sim::Event> events;
  friend bool operator==(const RolloutLog&, const RolloutLog&) = default;
};

/// What an observer sees each frame, before the step is applied.
struct FrameView {
  std::size_t frame = 0;
  const sim::World* world = nullptr;
  const Tensor* image = nullptr;
  const std::vector<BoundingBox>* boxes = nullptr;  // boxes the policy received
  const policy::Prediction* prediction = nullptr;   // null for the expert and during interventions
  int action = 0;
  bool intervention = false;
};

using FrameObserver = std::function<void(const FrameView&)>;

inline std::uint64_t detection_seed(std::uint64_t seed) { return seed * 0xBF58476D1CE4E5B9ULL ^ 0x94D049BB133111EBULL; }

/// One closed-loop episode: render, detect, predict, decode, PID, step, then
/// let the supervisor intervene. While an intervention is active the expert
/// drives and the frame is flagged.
inline RolloutLog run_rollout(const Driver& driver, const RolloutConfig& cfg, sim::ScenarioKind kind,
                              std::uint64_t seed, const FrameObserver& observe = {}) {
  if (!(cfg.duration > 0)) throw std::invalid_argument("rollout: duration must be positive");
  RolloutLog log;
  log.kind = kind;
  log.seed = seed;
  log.boxes = cfg.boxes;
  log.variant = driver.name;
  log.duration = cfg.duration;
  sim::World w = sim::spawn_scenario(kind, seed);
  sim::Supervisor supervisor(cfg.intervention);
  controller::PidState pid{cfg.pid};
  std::mt19937_64 detection_rng(detection_seed(seed));
  const auto n = static_cast<std::size_t>(std::llround(cfg.duration / sim::kDt));
  log.frames.reserve(n);
  for (std::size_t f = 0; f < n; ++f) {
    FrameLog fl;
    fl.time = w.time;
    fl.x = w.ego.pos.x;
    fl.y = w.ego.pos.y;
    fl.heading = w.ego.heading;
    fl.speed = w.ego.speed;
    fl.intervention = supervisor.active();

    controller::Control control;
    int action = 0;
    Tensor image;
    std::vector<BoundingBox> boxes;
    std::optional<policy::Prediction> pred;
    if (driver.expert() || fl.intervention) {
      auto [c, a] = sim::expert_control(w, pid, cfg.discretize);
      control = c;
      action = a;
      if (observe) image = sim::render(w, cfg.render);
    } else {
      image = sim::render(w, cfg.render);
      boxes = sim::ground_truth_boxes(w, cfg.render);
      if (cfg.boxes == BoxCondition::Noisy) boxes = sim::perturb_detections(boxes, cfg.noise, detection_rng, cfg.render);
      // Quantized like the training frames so train and test inputs match.
      const Tensor input = data::image_tensor(data::quantize_image(image), {static_cast<std::uint16_t>(image.dim(0)),
                                                                            static_cast<std::uint16_t>(image.dim(1)),
                                                                            static_cast<std::uint16_t>(image.dim(2))});
      pred = policy::predict_full(input, boxes, *driver.params, *driver.config);
      action = static_cast<int>(policy::argmax(pred->logits));
      control = controller::pid_step(pid, controller::decode(action), w.ego.speed, sim::route_heading_error(w),
                                     sim::kDt);
    }
    fl.action = static_cast<std::uint8_t>(action);
    if (observe) observe({f, &w, &image, &boxes, pred ? &*pred : nullptr, action, fl.intervention});

    const sim::Vec2 before = w.ego.pos;
    sim::step(w, control);
    fl.distance = (w.ego.pos - before).norm();
    log.frames.push_back(fl);
    for (const auto& ev : supervisor.after_step(w)) {
      if (ev.type == sim::EventType::InterventionStart || ev.type == sim::EventType::InterventionEnd) {
        controller::reset(pid);
      }
      log.events.push_back(ev);
    }
  }
  return log;
}

// ---------------------------------------------------------------------------
// Rollout container

inline std::vector<std::uint8_t> encode_rollout(const RolloutLog& log) {
  if (log.variant.size() > 0xFFFF) throw std::invalid_argument("rollout: variant name too long");
  io::Writer out;
  out.bytes("OBJR");
  out.u16(kRolloutVersion);
  out.u8(static_cast<std::uint8_t>(log.kind));
  out.u64(log.seed);
  out.u8(static_cast<std::uint8_t>(log.boxes));
  out.u16(static_cast<std::uint16_t>(log.variant.size()));
  out.bytes(log.variant);
  out.f64(log.duration);
  out.u32(static_cast<std::uint32_t>(log.frames.size()));
  for (const auto& f : log.frames) {
    for (double v : {f.time, f.x, f.y, f.heading, f.speed, f.distance}) out.f64(v);
    out.u8(f.action);
    out.u8(f.intervention ? 1 : 0);
  }
  out.u32(static_cast<std::uint32_t>(log.events.size()));
  for (const auto& e : log.events) {
    out.u8(static_cast<std::uint8_t>(e.type));
    out.u64(e.frame);
    out.f64(e.time);
    out.u8(static_cast<std::uint8_t>(e.reason));
    out.u32(static_cast<std::uint32_t>(e.agent));
  }
  return out.take();
}

inline RolloutLog decode_rollout(const std::vector<std::uint8_t>& bytes) {
  auto corrupt = [](const std::string& m) { return FormatError(FormatError::Kind::Corrupt, "rollout: " + m); };
  io::Reader in(bytes);
  if (bytes.size() < 4 || in.bytes(4) != "OBJR") throw FormatError(FormatError::Kind::BadMagic, "rollout: bad magic");
  const auto version = in.u16();
  if (version != kRolloutVersion) {
    throw FormatError(FormatError::Kind::VersionMismatch, "rollout: unsupported version " + std::to_string(version));
  }
  RolloutLog log;
  const auto kind = in.u8();
  if (kind > 1) throw corrupt("bad scenario kind");
  log.kind = static_cast<sim::ScenarioKind>(kind);
  log.seed = in.u64();
  const auto cond = in.u8();
  if (cond > 1) throw corrupt("bad box condition");
  log.boxes = static_cast<BoxCondition>(cond);
  log.variant = in.bytes(in.u16());
  log.duration = in.f64();
  const auto frames = in.u32();
  for (std::uint32_t i = 0; i < frames; ++i) {
    FrameLog f;
    f.time = in.f64();
    f.x = in.f64();
    f.y = in.f64();
    f.heading = in.f64();
    f.speed = in.f64();
    f.distance = in.f64();
    f.action = in.u8();
    if (f.action >= controller::kNumActions) throw corrupt("bad action");
    const auto flags = in.u8();
    if (flags > 1) throw corrupt("bad frame flags");
    f.intervention = flags == 1;
    log.frames.push_back(f);
  }
  const auto events = in.u32();
  for (std::uint32_t i = 0; i < events; ++i) {
    sim::Event e;
    const auto type = in.u8();
    if (type > 2) throw corrupt("bad event type");
    e.type = static_cast<sim::EventType>(type);
    e.frame = in.u64();
    e.time = in.f64();
    const auto reason = in.u8();
    if (reason > 3) throw corrupt("bad event reason");
    e.reason = static_cast<sim::Reason>(reason);
    e.agent = static_cast<int>(in.u32());
    log.events.push_back(e);
  }
  if (!in.at_end()) {
    throw FormatError(FormatError::Kind::CountMismatch,
                      "rollout: " + std::to_string(in.remaining()) + " trailing bytes after the event list");
  }
  return log;
}

inline void save_rollout(const std::filesystem::path& path, const RolloutLog& log) {
  io::write_file(path, encode_rollout(log));
}
inline RolloutLog load_rollout(const std::filesystem::path& path) { return decode_rollout(io::read_file(path)); }

/// Pose trace for plotting: time, x, y, intervention.
inline std::string pose_csv(const RolloutLog& log) {
  std::ostringstream os;
  os << "time,x,y,heading,speed,action,intervention\n" << std::setprecision(10);
  for (const auto& f : log.frames) {
    os << f.time << ',' << f.x << ',' << f.y << ',' << f.heading << ',' << f.speed << ',' << int{f.action} << ','
       << (f.intervention ? 1 : 0) << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Metrics

struct Metrics {
  std::size_t rollouts = 0;
  double total_m = 0;
  std::size_t interventions = 0;
  std::size_t collisions = 0;
  std::size_t stuck = 0;    // interventions triggered by getting stuck
  std::size_t offroad = 0;  // interventions triggered by leaving the road

  double dist_between_m() const { return total_m / static_cast<double>(std::max<std::size_t>(1, interventions)); }
  std::optional<double> per_100m(std::size_t count) const {
    if (!(total_m > 0)) return std::nullopt;
    return static_cast<double>(count) * 100.0 / total_m;
  }
  std::optional<double> interventions_per_100m() const { return per_100m(interventions); }
  std::optional<double> collisions_per_100m() const { return per_100m(collisions); }
};

/// Pools counts and distances over every log. Frames flagged as an
/// intervention contribute no distance.
inline Metrics compute_metrics(const std::vector<RolloutLog>& logs) {
  if (logs.empty()) throw std::invalid_argument("metrics: no rollouts");
  Metrics m;
  for (const auto& log : logs) {
    ++m.rollouts;
    for (const auto& f : log.frames) {
      if (!f.intervention) m.total_m += f.distance;
    }
    for (const auto& e : log.events) {
      if (e.type == sim::EventType::Collision) ++m.collisions;
      if (e.type == sim::EventType::InterventionStart) {
        ++m.interventions;
        if (e.reason == sim::Reason::Stuck) ++m.stuck;
        if (e.reason == sim::Reason::OffRoad) ++m.offroad;
      }
    }
  }
  return m;
}

struct MetricsRow {
  std::string variant;
  sim::ScenarioKind kind = sim::ScenarioKind::Urban;
  BoxCondition boxes = BoxCondition::GroundTruth;
  Metrics metrics;
};

inline constexpr const char* kMetricsHeader =
    "variant,scenario,box_condition,seeds,total_m,interventions,collisions,dist_between_m,interv_per_100m,"
    "coll_per_100m";

inline std::string format_number(std::optional<double> v) {
  if (!v) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

inline std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::ostringstream os;
  os << "# pooled over rollouts; dist_between_m = total_m / max(1, interventions); NA = no distance driven\n";
  os << kMetricsHeader << '\n';
  for (const auto& r : rows) {
    const auto& m = r.metrics;
    os << r.variant << ',' << sim::kind_name(r.kind) << ',' << condition_name(r.boxes) << ',' << m.rollouts << ','
       << format_number(m.total_m) << ',' << m.interventions << ',' << m.collisions << ','
       << format_number(m.dist_between_m()) << ',' << format_number(m.interventions_per_100m()) << ','
       << format_number(m.collisions_per_100m()) << '\n';
  }
  return os.str();
}

struct Comparison {
  std::vector<MetricsRow> rows;
  std::vector<RolloutLog> logs;  // row-major: driver, kind, condition, seed
};

/// Every driver on every (kind, condition, seed). The expert ignores
/// detections, so it runs under ground truth only. Results are ordered by
/// the inputs, independent of `jobs`.
inline Comparison compare(const std::vector<Driver>& drivers, const std::vector<sim::ScenarioKind>& kinds,
                          const std::vector<BoxCondition>& conditions, const std::vector<std::uint64_t>& seeds,
                          const RolloutConfig& base, std::size_t jobs = 1) {
  if (drivers.empty() || kinds.empty() || conditions.empty() || seeds.empty()) {
    throw std::invalid_argument("compare: empty drivers, kinds, conditions or seeds");
  }
  struct Job {
    std::size_t driver;
    sim::ScenarioKind kind;
    BoxCondition cond;
    std::uint64_t seed;
  };
  struct Group {
    std::size_t driver;
    sim::ScenarioKind kind;
    BoxCondition cond;
    std::size_t first, count;
  };
  std::vector<Job> work;
  std::vector<Group> groups;
  for (std::size_t d = 0; d < drivers.size(); ++d) {
    for (auto k : kinds) {
      for (auto c : conditions) {
        if (drivers[d].expert() && c != BoxCondition::GroundTruth) continue;
        groups.push_back({d, k, c, work.size(), seeds.size()});
        for (auto s : seeds) work.push_back({d, k, c, s});
      }
    }
  }
  Comparison out;
  out.logs.resize(work.size());
  parallel_for(work.size(), jobs, [&](std::size_t i) {
    RolloutConfig cfg = base;
    cfg.boxes = work[i].cond;
    out.logs[i] = run_rollout(drivers[work[i].driver], cfg, work[i].kind, work[i].seed);
  });
  for (const auto& g : groups) {
    std::vector<RolloutLog> part(out.logs.begin() + static_cast<std::ptrdiff_t>(g.first),
                                 out.logs.begin() + static_cast<std::ptrdiff_t>(g.first + g.count));
    out.rows.push_back({drivers[g.driver].name, g.kind, g.cond, compute_metrics(part)});
  }
  return out;
}

/// Groups logs by (variant, kind, condition), in order of first appearance.
inline std::vector<MetricsRow> pool_logs(const std::vector<RolloutLog>& logs) {
  std::vector<std::tuple<std::string, sim::ScenarioKind, BoxCondition>> keys;
  std::map<std::tuple<std::string, sim::ScenarioKind, BoxCondition>, std::vector<RolloutLog>> groups;
  for (const auto& l : logs) {
    auto key = std::make_tuple(l.variant, l.kind, l.boxes);
    auto [it, fresh] = groups.try_emplace(key);
    if (fresh) keys.push_back(key);
    it->second.push_back(l);
  }
  std::vector<MetricsRow> rows;
  for (const auto& k : keys) rows.push_back({std::get<0>(k), std::get<1>(k), std::get<2>(k), compute_metrics(groups[k])});
  return rows;
}

// ---------------------------------------------------------------------------
// Low-data perplexity sweep

/// Held-out perplexity reported for the real-world dataset, for context.
inline std::optional<double> reference_perplexity(objectcentric::Variant v, double fraction) {
  static const double fractions[] = {0.05, 0.10, 0.25, 0.50, 1.0};
  static const std::map<objectcentric::Variant, std::array<double, 5>> table{
      {objectcentric::Variant::GlobalOnly, {2.52, 2.40, 2.29, 1.94, 1.80}},
      {objectcentric::Variant::PixelAttention, {2.70, 2.33, 2.15, 1.96, 1.84}},
      {objectcentric::Variant::DenseSum, {2.34, 2.24, 2.07, 2.06, 2.01}},
      {objectcentric::Variant::HeuristicSparseSum, {2.48, 2.39, 2.31, 2.13, 2.10}},
      {objectcentric::Variant::SparseSum, {2.31, 2.23, 2.19, 2.07, 2.10}},
      {objectcentric::Variant::SparseConcat, {2.37, 2.31, 2.04, 1.93, 1.82}},
  };
  for (std::size_t i = 0; i < 5; ++i) {
    if (std::abs(fractions[i] - fraction) < 1e-12) return table.at(v)[i];
  }
  return std::nullopt;
}

struct SweepRow {
  objectcentric::Variant variant = objectcentric::Variant::GlobalOnly;
  double fraction = 1.0;
  std::size_t episodes = 0;
  std::size_t samples = 0;
  std::size_t epochs = 0;
  double perplexity = 0;
};

struct SweepConfig {
  std::vector<double> fractions{0.05, 0.10, 0.25, 0.50, 1.0};
  std::vector<objectcentric::Variant> variants{objectcentric::kAllVariants.begin(), objectcentric::kAllVariants.end()};
  std::uint64_t subset_seed = 0;
  policy::TrainConfig train;
  /// Lower bound on optimizer steps; small fractions get extra epochs so
  /// every model sees a comparable amount of optimization.
  std::size_t min_steps = 0;
  perception::BackboneConfig backbone;
  objectcentric::RepresentationConfig representation;  // variant overwritten per row
};

/// Trains one 900-way model per (variant, fraction) on nested episode
/// subsets of `train_ds` and scores it on all of `test_ds`.
inline std::vector<SweepRow> lowdata_sweep(const data::Dataset& train_ds, const data::Dataset& test_ds,
                                           const SweepConfig& cfg, std::size_t jobs = 1) {
  if (cfg.fractions.empty() || cfg.variants.empty()) throw std::invalid_argument("sweep: nothing to run");
  const auto test = data::samples(test_ds, data::Head::Offline900, data::all_episodes(test_ds));
  if (test.empty()) throw std::invalid_argument("sweep: held-out set has no labeled frames");
  struct Job {
    objectcentric::Variant variant;
    double fraction;
    std::vector<std::size_t> episodes;
  };
  std::vector<Job> work;
  for (auto v : cfg.variants) {
    for (double f : cfg.fractions) work.push_back({v, f, data::episode_subset(train_ds.episodes.size(), f, cfg.subset_seed)});
  }
  std::vector<SweepRow> rows(work.size());
  parallel_for(work.size(), jobs, [&](std::size_t i) {
    const auto& job = work[i];
    PolicyConfig pc;
    pc.representation = cfg.representation;
    pc.representation.variant = job.variant;
    pc.backbone = cfg.backbone;
    pc.head = data::Head::Offline900;
    pc.binning = train_ds.manifest.binning;
    const auto s = data::samples(train_ds, data::Head::Offline900, job.episodes);
    policy::TrainConfig tc = cfg.train;
    const std::size_t steps_per_epoch = (s.size() + tc.batch_size - 1) / std::max<std::size_t>(1, tc.batch_size);
    if (steps_per_epoch > 0 && cfg.min_steps > tc.epochs * steps_per_epoch) {
      tc.epochs = (cfg.min_steps + steps_per_epoch - 1) / steps_per_epoch;
    }
    const auto trained = policy::train(train_ds, s, pc, tc);
    rows[i] = {job.variant, job.fraction, job.episodes.size(), s.size(), trained.epoch_loss.size(),
               policy::evaluate_perplexity(trained.params, pc, test_ds, test)};
  });
  return rows;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "variant,fraction,episodes,samples,epochs,perplexity,reference_perplexity\n";
  for (const auto& r : rows) {
    char frac[32];
    std::snprintf(frac, sizeof frac, "%.2f", r.fraction);
    os << objectcentric::variant_name(r.variant) << ',' << frac << ',' << r.episodes << ',' << r.samples << ','
       << r.epochs << ',' << format_number(r.perplexity) << ',' << format_number(reference_perplexity(r.variant, r.fraction))
       << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Annotated frames

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

class Canvas {
 public:
  Canvas(std::size_t w, std::size_t h) : w_(w), h_(h), px_(w * h) {}
  std::size_t width() const { return w_; }
  std::size_t height() const { return h_; }
  Rgb& at(std::size_t x, std::size_t y) { return px_.at(y * w_ + x); }
  const Rgb& at(std::size_t x, std::size_t y) const { return px_.at(y * w_ + x); }

  void fill_rect(long x0, long y0, long x1, long y1, Rgb c) {
    for (long y = std::max(0L, y0); y < std::min<long>(static_cast<long>(h_), y1); ++y) {
      for (long x = std::max(0L, x0); x < std::min<long>(static_cast<long>(w_), x1); ++x) at(x, y) = c;
    }
  }
  void outline_rect(long x0, long y0, long x1, long y1, Rgb c) {
    fill_rect(x0, y0, x1, y0 + 1, c);
    fill_rect(x0, y1 - 1, x1, y1, c);
    fill_rect(x0, y0, x0 + 1, y1, c);
    fill_rect(x1 - 1, y0, x1, y1, c);
  }

  std::vector<std::uint8_t> ppm() const {
    const std::string header = "P6\n" + std::to_string(w_) + " " + std::to_string(h_) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    for (const auto& p : px_) {
      out.push_back(p.r);
      out.push_back(p.g);
      out.push_back(p.b);
    }
    return out;
  }

 private:
  std::size_t w_, h_;
  std::vector<Rgb> px_;
};

/// Red at weight 1, blue at weight 0.
inline Rgb weight_color(double w) {
  w = std::clamp(w, 0.0, 1.0);
  return {static_cast<std::uint8_t>(std::lround(255 * w)), 0, static_cast<std::uint8_t>(std::lround(255 * (1 - w)))};
}

struct Annotation {
  std::vector<BoundingBox> boxes;
  std::vector<double> weights;    // per box, normalized object weights
  std::vector<double> attention;  // row-major attention mass over the feature map
  std::size_t attention_h = 0, attention_w = 0;
  int action = 0;
};

inline constexpr std::size_t kSquare = 6;  // action square side, px

/// Corner squares: accelerate (top centre), then left, brake and right
/// along the bottom. Filled white when active, outlined grey otherwise.
inline void draw_action(Canvas& c, int action) {
  const auto steer = controller::steer_of(action);
  const auto speed = controller::speed_of(action);
  const long w = static_cast<long>(c.width()), h = static_cast<long>(c.height()), s = kSquare;
  struct Square {
    long x, y;
    bool on;
  };
  const Square squares[] = {{(w - s) / 2, 1, speed == controller::SpeedCommand::Fast},
                            {1, h - s - 1, steer == controller::SteerCommand::Left},
                            {(w - s) / 2, h - s - 1, speed == controller::SpeedCommand::Stop},
                            {w - s - 1, h - s - 1, steer == controller::SteerCommand::Right}};
  for (const auto& q : squares) {
    if (q.on) {
      c.fill_rect(q.x, q.y, q.x + s, q.y + s, {255, 255, 255});
    } else {
      c.outline_rect(q.x, q.y, q.x + s, q.y + s, {96, 96, 96});
    }
  }
}

/// Renders a simulator frame with the policy's view drawn over it.
inline Canvas annotate_canvas(const Tensor& image, const Annotation& a) {
  if (image.rank() != 3 || image.dim(0) != sim::kChannels) throw std::invalid_argument("annotate: expected a 3xHxW frame");
  if (a.weights.empty() && a.attention.empty() && !a.boxes.empty()) {
    throw std::invalid_argument("annotate: boxes without object weights");
  }
  if (a.weights.size() != a.boxes.size()) throw std::invalid_argument("annotate: one weight per box required");
  if (!a.attention.empty() && a.attention.size() != a.attention_h * a.attention_w) {
    throw std::invalid_argument("annotate: attention size does not match its grid");
  }
  const std::size_t h = image.dim(1), w = image.dim(2);
  Canvas c(w, h);
  double peak = 0;
  for (double m : a.attention) peak = std::max(peak, m);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double road = image[y * w + x], car = image[(h + y) * w + x], ped = image[(2 * h + y) * w + x];
      double r = 0.45 * road + 0.55 * car, g = 0.45 * road + 0.55 * ped, b = 0.45 * road;
      if (!a.attention.empty()) {
        const std::size_t ay = std::min(a.attention_h - 1, y * a.attention_h / h);
        const std::size_t ax = std::min(a.attention_w - 1, x * a.attention_w / w);
        const double k = peak > 0 ? 0.2 + 0.8 * a.attention[ay * a.attention_w + ax] / peak : 1.0;
        r *= k;
        g *= k;
        b *= k;
      }
      c.at(x, y) = {static_cast<std::uint8_t>(std::lround(255 * std::min(1.0, r))),
                    static_cast<std::uint8_t>(std::lround(255 * std::min(1.0, g))),
                    static_cast<std::uint8_t>(std::lround(255 * std::min(1.0, b)))};
    }
  }
  for (std::size_t i = 0; i < a.boxes.size(); ++i) {
    const auto& b = a.boxes[i];
    c.outline_rect(std::lround(std::floor(b.x_min)), std::lround(std::floor(b.y_min)), std::lround(std::ceil(b.x_max)),
                   std::lround(std::ceil(b.y_max)), weight_color(a.weights[i]));
  }
  draw_action(c, a.action);
  return c;
}

inline std::vector<std::uint8_t> annotate_frame(const Tensor& image, const Annotation& a) {
  return annotate_canvas(image, a).ppm();
}

/// Replays `log` with `driver` and writes one annotated PPM per frame. The
/// replay must reproduce the logged actions, otherwise the log came from a
/// different policy or configuration.
inline std::size_t annotate_rollout(const Driver& driver, const RolloutConfig& base, const RolloutLog& log,
                                    const std::filesystem::path& dir) {
  if (driver.expert()) throw std::invalid_argument("annotate: needs a policy checkpoint");
  const auto& pc = *driver.config;
  if (pc.representation.variant == objectcentric::Variant::GlobalOnly) {
    throw std::invalid_argument("annotate: the global-only variant has neither object weights nor attention");
  }
  RolloutConfig cfg = base;
  cfg.boxes = log.boxes;
  cfg.duration = static_cast<double>(log.frames.size()) * sim::kDt;
  std::filesystem::create_directories(dir);
  std::size_t written = 0;
  run_rollout(driver, cfg, log.kind, log.seed, [&](const FrameView& v) {
    if (v.action != log.frames.at(v.frame).action) {
      throw std::runtime_error("annotate: replay diverges from the log at frame " + std::to_string(v.frame));
    }
    Annotation a;
    a.action = v.action;
    if (v.prediction) {
      a.boxes = v.prediction->boxes;
      a.weights = v.prediction->object_weights;
      if (a.weights.empty()) a.boxes.clear();
      a.attention = v.prediction->attention;
      a.attention_h = pc.backbone.out_extent(v.image->dim(1));
      a.attention_w = pc.backbone.out_extent(v.image->dim(2));
    }
    char name[32];
    std::snprintf(name, sizeof name, "frame_%05zu.ppm", v.frame);
    io::write_file(dir / name, annotate_frame(*v.image, a));
    ++written;
  });
  return written;
}

}  // namespace ocp::eval
