#pragma once

// Expert demonstrations: collection with periodic control noise, label
// discretization, and the on-disk dataset container.
//
// Layout: <dir>/manifest.json and <dir>/episodes/ep_<id>.bin. Episode files
// are little-endian:
//   "OBJD" u16 version u32 frames u16 C u16 H u16 W
//   per frame: u32 index, u8 action, u8 flags (bit0 noise, bit1 intervention),
//              f32 speed, f32 angular velocity, f32 throttle/brake/steer,
//              u16 box count, per box (u8 class, f32 x4), C*H*W image bytes

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ocp/controller.hpp"
#include "ocp/diff/tensor.hpp"
#include "ocp/io.hpp"
#include "ocp/parallel.hpp"
#include "ocp/sim/render.hpp"

namespace ocp::data {

using diff::Tensor;
using io::FormatError;
using perception::BoundingBox;

inline constexpr std::uint16_t kEpisodeVersion = 1;
inline constexpr int kManifestVersion = 1;

// ---------------------------------------------------------------------------
// Labels

/// Joint speed / angular-velocity grid for the 900-way offline head.
struct Binning {
  double speed_max = 5.556;
  double angular_min = -1.0;
  double angular_max = 1.0;
  int bins = 30;

  int classes() const { return bins * bins; }
  friend bool operator==(const Binning&, const Binning&) = default;
};

inline int bin_index(double v, double lo, double hi, int bins) {
  if (!(v > lo)) return 0;  // also maps NaN to the lowest bin
  const double t = (v - lo) / (hi - lo) * bins;
  return std::min(bins - 1, static_cast<int>(std::floor(t)));
}

inline int discretize_speed_angle(double speed, double angular, const Binning& b = {}) {
  return bin_index(speed, 0.0, b.speed_max, b.bins) * b.bins +
         bin_index(angular, b.angular_min, b.angular_max, b.bins);
}

inline constexpr int kFutureHorizon = 4;  // 1/3 s at 12 fps

// ---------------------------------------------------------------------------
// Records

struct FrameRecord {
  std::uint32_t index = 0;
  std::uint8_t action = 0;
  bool noise = false;
  bool intervention = false;
  float speed = 0;
  float angular = 0;
  controller::Control control;  // stored as f32
  std::vector<BoundingBox> boxes;
  std::vector<std::uint8_t> image;  // C*H*W, value*255 rounded

  bool trainable() const { return !noise && !intervention; }
};

struct ImageDims {
  std::uint16_t c = 3, h = 96, w = 96;
  std::size_t size() const { return std::size_t{c} * h * w; }
  friend bool operator==(const ImageDims&, const ImageDims&) = default;
};

struct Episode {
  std::uint32_t id = 0;
  sim::ScenarioKind kind = sim::ScenarioKind::Urban;
  std::uint64_t seed = 0;
  ImageDims dims;
  std::vector<FrameRecord> frames;
};

/// Future-speed labels: frame t gets the bin of frame t + horizon; the last
/// `horizon` frames get -1.
inline std::vector<int> future_labels(const std::vector<FrameRecord>& frames, const Binning& b = {},
                                      int horizon = kFutureHorizon) {
  std::vector<int> out(frames.size(), -1);
  for (std::size_t t = 0; t + static_cast<std::size_t>(horizon) < frames.size(); ++t) {
    const auto& f = frames[t + static_cast<std::size_t>(horizon)];
    out[t] = discretize_speed_angle(f.speed, f.angular, b);
  }
  return out;
}

inline std::vector<std::uint8_t> quantize_image(const Tensor& img) {
  std::vector<std::uint8_t> out(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    out[i] = static_cast<std::uint8_t>(std::lround(std::clamp(img[i], 0.0, 1.0) * 255.0));
  }
  return out;
}

inline Tensor image_tensor(const std::vector<std::uint8_t>& bytes, const ImageDims& d) {
  if (bytes.size() != d.size()) throw std::invalid_argument("image: byte count does not match dims");
  Tensor t({d.c, d.h, d.w});
  for (std::size_t i = 0; i < bytes.size(); ++i) t[i] = bytes[i] / 255.0;
  return t;
}

// ---------------------------------------------------------------------------
// Collection

struct NoiseSchedule {
  bool enabled = true;
  double period = 30.0;        // s between events
  int pulse_frames = 6;        // perturbed frames
  int tail_frames = 7;         // dropped after the pulse
  double steer_amplitude = 0.5;

  friend bool operator==(const NoiseSchedule&, const NoiseSchedule&) = default;
};

struct CollectConfig {
  std::vector<sim::ScenarioKind> kinds{sim::ScenarioKind::Urban};
  std::vector<std::uint64_t> seeds{0};
  double episode_seconds = 61.0;
  NoiseSchedule noise;
  controller::PidConfig pid;
  controller::DiscretizeConfig discretize;
  sim::RenderConfig render;
  Binning binning;
};

/// Frames whose executed steer is perturbed: events every `period`, only
/// when the whole pulse + tail window fits inside the episode.
inline std::vector<std::pair<std::size_t, std::size_t>> noise_windows(std::size_t frames, const NoiseSchedule& n) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  if (!n.enabled) return out;
  const auto period = static_cast<std::size_t>(std::llround(n.period / sim::kDt));
  const auto span = static_cast<std::size_t>(n.pulse_frames + n.tail_frames);
  for (std::size_t start = period; start + span <= frames; start += period) out.emplace_back(start, span);
  return out;
}

inline Episode collect_episode(sim::ScenarioKind kind, std::uint64_t seed, std::uint32_t id, const CollectConfig& cfg) {
  if (cfg.noise.enabled && cfg.episode_seconds < cfg.noise.period + 1.0) {
    throw std::invalid_argument("collect: episodes shorter than period + 1 s contain no noise event");
  }
  Episode ep;
  ep.id = id;
  ep.kind = kind;
  ep.seed = seed;
  ep.dims = {static_cast<std::uint16_t>(sim::kChannels), static_cast<std::uint16_t>(cfg.render.size),
             static_cast<std::uint16_t>(cfg.render.size)};
  sim::World w = sim::spawn_scenario(kind, seed);
  controller::PidState pid{cfg.pid};
  sim::Supervisor supervisor;
  std::mt19937_64 noise_rng(seed ^ 0xD1B54A32D192ED03ULL);
  const auto n = static_cast<std::size_t>(std::llround(cfg.episode_seconds / sim::kDt));
  const auto windows = noise_windows(n, cfg.noise);
  std::vector<double> offsets;
  std::uniform_real_distribution<double> offset(-cfg.noise.steer_amplitude, cfg.noise.steer_amplitude);
  for (std::size_t i = 0; i < windows.size(); ++i) offsets.push_back(offset(noise_rng));

  for (std::size_t f = 0; f < n; ++f) {
    FrameRecord r;
    r.index = static_cast<std::uint32_t>(f);
    r.image = quantize_image(sim::render(w, cfg.render));
    r.boxes = sim::ground_truth_boxes(w, cfg.render);
    r.speed = static_cast<float>(w.ego.speed);
    r.angular = static_cast<float>(w.ego.yaw_rate);
    r.intervention = supervisor.active();
    auto [control, action] = sim::expert_control(w, pid, cfg.discretize);
    r.action = static_cast<std::uint8_t>(action);
    r.control = {static_cast<float>(control.throttle), static_cast<float>(control.brake),
                 static_cast<float>(control.steer)};
    controller::Control executed = control;
    for (std::size_t e = 0; e < windows.size(); ++e) {
      const auto [start, span] = windows[e];
      if (f >= start && f < start + span) r.noise = true;
      if (f >= start && f < start + static_cast<std::size_t>(cfg.noise.pulse_frames)) {
        executed.steer = std::clamp(executed.steer + offsets[e], -1.0, 1.0);
      }
    }
    ep.frames.push_back(std::move(r));
    sim::step(w, executed);
    for (const auto& ev : supervisor.after_step(w)) {
      if (ev.type == sim::EventType::InterventionStart) controller::reset(pid);
    }
  }
  return ep;
}

// ---------------------------------------------------------------------------
// Episode container

inline std::vector<std::uint8_t> encode_episode(const Episode& ep) {
  io::Writer out;
  out.bytes("OBJD");
  out.u16(kEpisodeVersion);
  out.u32(static_cast<std::uint32_t>(ep.frames.size()));
  out.u16(ep.dims.c);
  out.u16(ep.dims.h);
  out.u16(ep.dims.w);
  for (const auto& f : ep.frames) {
    if (f.image.size() != ep.dims.size()) throw std::invalid_argument("episode: frame image size mismatch");
    out.u32(f.index);
    out.u8(f.action);
    out.u8(static_cast<std::uint8_t>((f.noise ? 1 : 0) | (f.intervention ? 2 : 0)));
    out.f32(f.speed);
    out.f32(f.angular);
    out.f32(static_cast<float>(f.control.throttle));
    out.f32(static_cast<float>(f.control.brake));
    out.f32(static_cast<float>(f.control.steer));
    out.u16(static_cast<std::uint16_t>(f.boxes.size()));
    for (const auto& b : f.boxes) {
      out.u8(static_cast<std::uint8_t>(b.cls));
      out.f32(static_cast<float>(b.x_min));
      out.f32(static_cast<float>(b.y_min));
      out.f32(static_cast<float>(b.x_max));
      out.f32(static_cast<float>(b.y_max));
    }
    out.bytes(f.image);
  }
  return out.take();
}

inline Episode decode_episode(const std::vector<std::uint8_t>& bytes) {
  io::Reader in(bytes);
  if (bytes.size() < 4 || in.bytes(4) != "OBJD") throw FormatError(FormatError::Kind::BadMagic, "episode: bad magic");
  const auto version = in.u16();
  if (version != kEpisodeVersion) {
    throw FormatError(FormatError::Kind::VersionMismatch, "episode: unsupported version " + std::to_string(version));
  }
  Episode ep;
  const auto count = in.u32();
  ep.dims = {in.u16(), in.u16(), in.u16()};
  for (std::uint32_t i = 0; i < count; ++i) {
    FrameRecord f;
    f.index = in.u32();
    f.action = in.u8();
    if (f.action >= controller::kNumActions) throw FormatError(FormatError::Kind::Corrupt, "episode: bad action");
    const auto flags = in.u8();
    if (flags > 3) throw FormatError(FormatError::Kind::Corrupt, "episode: bad flags");
    f.noise = flags & 1;
    f.intervention = flags & 2;
    f.speed = in.f32();
    f.angular = in.f32();
    f.control.throttle = in.f32();
    f.control.brake = in.f32();
    f.control.steer = in.f32();
    const auto boxes = in.u16();
    for (std::uint16_t b = 0; b < boxes; ++b) {
      BoundingBox box;
      const auto cls = in.u8();
      if (cls > 1) throw FormatError(FormatError::Kind::Corrupt, "episode: bad box class");
      box.cls = static_cast<perception::ObjectClass>(cls);
      box.x_min = in.f32();
      box.y_min = in.f32();
      box.x_max = in.f32();
      box.y_max = in.f32();
      f.boxes.push_back(box);
    }
    const std::uint8_t* img = in.raw(ep.dims.size());
    f.image.assign(img, img + ep.dims.size());
    ep.frames.push_back(std::move(f));
  }
  if (!in.at_end()) {
    throw FormatError(FormatError::Kind::CountMismatch, "episode: " + std::to_string(in.remaining()) +
                                                            " trailing bytes after " + std::to_string(count) + " frames");
  }
  return ep;
}

// ---------------------------------------------------------------------------
// Dataset directory

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

struct Manifest {
  ImageDims dims;
  std::uint64_t frames = 0;
  double dt = sim::kDt;
  Binning binning;
  controller::DiscretizeConfig discretize;
  std::string config_hash;
  struct Entry {
    std::uint32_t id;
    sim::ScenarioKind kind;
    std::uint64_t seed;
    std::uint32_t frames;
  };
  std::vector<Entry> episodes;
};

inline nlohmann::json manifest_to_json(const Manifest& m) {
  nlohmann::json eps = nlohmann::json::array();
  for (const auto& e : m.episodes) {
    eps.push_back({{"id", e.id}, {"kind", sim::kind_name(e.kind)}, {"seed", e.seed}, {"frames", e.frames}});
  }
  return {{"version", kManifestVersion},
          {"image", {{"channels", m.dims.c}, {"height", m.dims.h}, {"width", m.dims.w}}},
          {"frame_count", m.frames},
          {"episode_count", m.episodes.size()},
          {"dt", m.dt},
          {"binning",
           {{"speed_range", {0.0, m.binning.speed_max}},
            {"angular_range", {m.binning.angular_min, m.binning.angular_max}},
            {"bins", {m.binning.bins, m.binning.bins}}}},
          {"discretize",
           {{"offset_threshold", m.discretize.offset_threshold},
            {"stop_below", m.discretize.stop_below},
            {"fast_above", m.discretize.fast_above}}},
          {"config_hash", m.config_hash},
          {"episodes", eps}};
}

inline Manifest manifest_from_json(const nlohmann::json& j) {
  auto corrupt = [](const std::string& m) { return FormatError(FormatError::Kind::Corrupt, "manifest: " + m); };
  if (!j.is_object() || !j.contains("version") || !j.at("version").is_number_integer()) throw corrupt("missing version");
  if (j.at("version").get<int>() != kManifestVersion) {
    throw FormatError(FormatError::Kind::VersionMismatch, "manifest: unsupported version " + j.at("version").dump());
  }
  Manifest m;
  try {
    const auto& img = j.at("image");
    m.dims = {img.at("channels").get<std::uint16_t>(), img.at("height").get<std::uint16_t>(),
              img.at("width").get<std::uint16_t>()};
    m.frames = j.at("frame_count").get<std::uint64_t>();
    m.dt = j.at("dt").get<double>();
    const auto& b = j.at("binning");
    m.binning.speed_max = b.at("speed_range").at(1).get<double>();
    m.binning.angular_min = b.at("angular_range").at(0).get<double>();
    m.binning.angular_max = b.at("angular_range").at(1).get<double>();
    m.binning.bins = b.at("bins").at(0).get<int>();
    const auto& d = j.at("discretize");
    m.discretize = {d.at("offset_threshold").get<double>(), d.at("stop_below").get<double>(),
                    d.at("fast_above").get<double>()};
    m.config_hash = j.at("config_hash").get<std::string>();
    for (const auto& e : j.at("episodes")) {
      m.episodes.push_back({e.at("id").get<std::uint32_t>(), sim::parse_kind(e.at("kind").get<std::string>()),
                            e.at("seed").get<std::uint64_t>(), e.at("frames").get<std::uint32_t>()});
    }
    if (j.at("episode_count").get<std::size_t>() != m.episodes.size()) {
      throw FormatError(FormatError::Kind::CountMismatch, "manifest: episode_count disagrees with episode list");
    }
  } catch (const nlohmann::json::exception& e) {
    throw corrupt(e.what());
  } catch (const std::invalid_argument& e) {
    throw corrupt(e.what());
  }
  return m;
}

struct Dataset {
  Manifest manifest;
  std::vector<Episode> episodes;

  std::size_t frame_count() const {
    std::size_t n = 0;
    for (const auto& e : episodes) n += e.frames.size();
    return n;
  }
};

inline std::string episode_file(std::uint32_t id) {
  std::ostringstream os;
  os << "ep_" << std::setw(5) << std::setfill('0') << id << ".bin";
  return os.str();
}

inline Manifest make_manifest(const std::vector<Episode>& eps, const Binning& binning,
                              const controller::DiscretizeConfig& dc, std::string config_hash) {
  Manifest m;
  if (!eps.empty()) m.dims = eps.front().dims;
  m.binning = binning;
  m.discretize = dc;
  m.config_hash = std::move(config_hash);
  for (const auto& e : eps) {
    if (!(e.dims == m.dims)) throw std::invalid_argument("dataset: episodes disagree on image dims");
    m.episodes.push_back({e.id, e.kind, e.seed, static_cast<std::uint32_t>(e.frames.size())});
    m.frames += e.frames.size();
  }
  return m;
}

inline std::string manifest_text(const Manifest& m) { return manifest_to_json(m).dump(2) + "\n"; }

inline void write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir / "episodes");
  for (const auto& e : ds.episodes) io::write_file(dir / "episodes" / episode_file(e.id), encode_episode(e));
  io::write_text(dir / "manifest.json", manifest_text(ds.manifest));
}

inline Manifest read_manifest(const std::filesystem::path& dir) {
  try {
    return manifest_from_json(nlohmann::json::parse(io::read_text(dir / "manifest.json")));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(FormatError::Kind::Corrupt, std::string("manifest: ") + e.what());
  }
}

/// Reads and cross-checks every episode against the manifest.
inline Dataset read_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  ds.manifest = read_manifest(dir);
  std::uint64_t total = 0;
  for (const auto& entry : ds.manifest.episodes) {
    Episode ep = decode_episode(io::read_file(dir / "episodes" / episode_file(entry.id)));
    if (ep.frames.size() != entry.frames) {
      throw FormatError(FormatError::Kind::CountMismatch, "dataset: episode " + std::to_string(entry.id) + " has " +
                                                              std::to_string(ep.frames.size()) + " frames, manifest says " +
                                                              std::to_string(entry.frames));
    }
    if (!(ep.dims == ds.manifest.dims)) throw FormatError(FormatError::Kind::Corrupt, "dataset: image dims mismatch");
    ep.id = entry.id;
    ep.kind = entry.kind;
    ep.seed = entry.seed;
    total += ep.frames.size();
    ds.episodes.push_back(std::move(ep));
  }
  if (total != ds.manifest.frames) {
    throw FormatError(FormatError::Kind::CountMismatch, "dataset: manifest frame_count " +
                                                            std::to_string(ds.manifest.frames) + " but episodes hold " +
                                                            std::to_string(total));
  }
  return ds;
}

/// Collects one episode per (kind, seed) pair, ids in that order.
inline Dataset collect(const CollectConfig& cfg, std::string config_hash, std::size_t jobs = 1) {
  std::vector<std::pair<sim::ScenarioKind, std::uint64_t>> work;
  for (auto k : cfg.kinds) {
    for (auto s : cfg.seeds) work.emplace_back(k, s);
  }
  std::vector<Episode> eps(work.size());
  parallel_for(work.size(), jobs, [&](std::size_t i) {
    eps[i] = collect_episode(work[i].first, work[i].second, static_cast<std::uint32_t>(i), cfg);
  });
  Dataset ds;
  ds.manifest = make_manifest(eps, cfg.binning, cfg.discretize, std::move(config_hash));
  ds.episodes = std::move(eps);
  return ds;
}

// ---------------------------------------------------------------------------
// Training samples

enum class Head { Action9, Offline900 };

inline const char* head_name(Head h) { return h == Head::Action9 ? "action9" : "offline900"; }
inline Head parse_head(const std::string& s) {
  if (s == "action9") return Head::Action9;
  if (s == "offline900") return Head::Offline900;
  throw std::invalid_argument("unknown head '" + s + "'");
}
inline int head_classes(Head h, const Binning& b = {}) { return h == Head::Action9 ? controller::kNumActions : b.classes(); }

struct SampleRef {
  std::uint32_t episode = 0;  // index into Dataset::episodes
  std::uint32_t frame = 0;
  int label = 0;
};

/// Training-eligible frames of the given episodes: never noise- or
/// intervention-flagged, and (for the offline head) with a future label.
inline std::vector<SampleRef> samples(const Dataset& ds, Head head, const std::vector<std::size_t>& episodes) {
  std::vector<SampleRef> out;
  for (std::size_t e : episodes) {
    const auto& ep = ds.episodes.at(e);
    const auto future = head == Head::Offline900 ? future_labels(ep.frames, ds.manifest.binning) : std::vector<int>{};
    for (std::size_t f = 0; f < ep.frames.size(); ++f) {
      const auto& r = ep.frames[f];
      if (!r.trainable()) continue;
      const int label = head == Head::Action9 ? r.action : future[f];
      if (label < 0) continue;
      out.push_back({static_cast<std::uint32_t>(e), static_cast<std::uint32_t>(f), label});
    }
  }
  return out;
}

inline std::vector<std::size_t> all_episodes(const Dataset& ds) {
  std::vector<std::size_t> v(ds.episodes.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = i;
  return v;
}

/// Nested low-data subsets: episodes shuffled once by `seed`; fraction f
/// keeps the first llround(f * n) of that order.
inline std::vector<std::size_t> episode_subset(std::size_t n, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("subset: fraction must be in (0, 1]");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto keep = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (keep == 0) {
    throw std::invalid_argument("subset: fraction " + std::to_string(fraction) + " of " + std::to_string(n) +
                                " episodes selects none");
  }
  order.resize(keep);
  std::sort(order.begin(), order.end());
  return order;
}

}  // namespace ocp::data
