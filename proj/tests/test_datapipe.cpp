#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "ocp/datapipe.hpp"

using namespace ocp;
using namespace ocp::data;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ocp_datapipe_" + name);
  fs::remove_all(p);
  return p;
}

CollectConfig short_config() {
  CollectConfig c;
  c.kinds = {sim::ScenarioKind::Urban, sim::ScenarioKind::Highway};
  c.seeds = {1};
  c.episode_seconds = 61.0;
  return c;
}

Episode synthetic_episode(std::uint32_t id, std::size_t frames) {
  Episode ep;
  ep.id = id;
  ep.seed = id;
  ep.dims = {3, 4, 5};
  for (std::size_t f = 0; f < frames; ++f) {
    FrameRecord r;
    r.index = static_cast<std::uint32_t>(f);
    r.action = static_cast<std::uint8_t>(f % 9);
    r.noise = f % 7 == 0;
    r.speed = 0.1f * static_cast<float>(f);
    r.angular = -0.3f;
    r.control = {0.25, 0.0, -0.5};
    r.boxes.push_back({perception::ObjectClass::Pedestrian, 1.0, 2.0, 3.5, 4.0});
    r.image.assign(ep.dims.size(), static_cast<std::uint8_t>(f));
    ep.frames.push_back(r);
  }
  return ep;
}

Dataset synthetic_dataset(std::size_t episodes, std::size_t frames) {
  Dataset ds;
  std::vector<Episode> eps;
  for (std::size_t i = 0; i < episodes; ++i) eps.push_back(synthetic_episode(static_cast<std::uint32_t>(i), frames));
  ds.manifest = make_manifest(eps, {}, {}, "abc");
  ds.episodes = std::move(eps);
  return ds;
}

std::vector<std::uint8_t> dir_bytes(const fs::path& dir) {
  std::vector<std::uint8_t> all;
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    const auto name = fs::relative(f, dir).string();
    all.insert(all.end(), name.begin(), name.end());
    const auto b = io::read_file(f);
    all.insert(all.end(), b.begin(), b.end());
  }
  return all;
}

}  // namespace

TEST(SpeedAngleBins, Examples) {
  EXPECT_EQ(discretize_speed_angle(0.0, -1.0), 0);
  EXPECT_EQ(discretize_speed_angle(2.778, 0.0), 465);
  EXPECT_EQ(discretize_speed_angle(5.556, 1.0), 899);
  EXPECT_EQ(discretize_speed_angle(40.0, 7.0), 899);
  EXPECT_EQ(discretize_speed_angle(-3.0, -9.0), 0);
}

TEST(SpeedAngleBins, MonotoneAndSurjective) {
  std::vector<bool> hit(900, false);
  const int steps = 300;
  for (int i = 0; i <= steps; ++i) {
    const double v = -0.5 + 6.5 * i / steps;
    int last = -1;
    for (int j = 0; j <= steps; ++j) {
      const double a = -1.2 + 2.4 * j / steps;
      const int bin = discretize_speed_angle(v, a);
      ASSERT_GE(bin, 0);
      ASSERT_LT(bin, 900);
      EXPECT_GE(bin, last);
      last = bin;
      hit[static_cast<std::size_t>(bin)] = true;
      if (i > 0) {
        EXPECT_GE(bin, discretize_speed_angle(-0.5 + 6.5 * (i - 1) / steps, a));
      }
    }
  }
  EXPECT_TRUE(std::all_of(hit.begin(), hit.end(), [](bool b) { return b; }));
}

TEST(FutureLabels, CountsAndShift) {
  auto ep = synthetic_episode(0, 732);
  const auto labels = future_labels(ep.frames);
  EXPECT_EQ(std::count_if(labels.begin(), labels.end(), [](int l) { return l >= 0; }), 728);
  // Ramp: speed rises one bin width per frame, so the label at t names bin t+4.
  const double width = 5.556 / 30;
  std::vector<FrameRecord> ramp(30);
  for (std::size_t t = 0; t < ramp.size(); ++t) {
    ramp[t].speed = static_cast<float>((static_cast<double>(t) + 0.5) * width);
    ramp[t].angular = 0.0f;
  }
  const auto l = future_labels(ramp);
  for (std::size_t t = 0; t + 4 < ramp.size(); ++t) EXPECT_EQ(l[t], static_cast<int>(t + 4) * 30 + 15);
  for (std::size_t t = ramp.size() - 4; t < ramp.size(); ++t) EXPECT_EQ(l[t], -1);
  EXPECT_TRUE(std::all_of(future_labels(std::vector<FrameRecord>(4)).begin(),
                          future_labels(std::vector<FrameRecord>(4)).end(), [](int x) { return x == -1; }));
}

TEST(FutureLabels, ConstantEpisodeHasOneLabel) {
  std::vector<FrameRecord> frames(50);
  for (auto& f : frames) f.speed = 3.0f;
  const auto l = future_labels(frames);
  for (std::size_t t = 0; t + 4 < frames.size(); ++t) EXPECT_EQ(l[t], l[0]);
}

TEST(NoiseWindows, FullWindowsOnly) {
  NoiseSchedule n;
  EXPECT_EQ(noise_windows(732, n).size(), 1u);
  EXPECT_EQ(noise_windows(732, n)[0], (std::pair<std::size_t, std::size_t>{360, 13}));
  EXPECT_EQ(noise_windows(373, n).size(), 1u);
  EXPECT_EQ(noise_windows(372, n).size(), 0u);
  n.enabled = false;
  EXPECT_TRUE(noise_windows(10000, n).empty());
}

TEST(Collect, SixtyOneSecondsKeeps719) {
  CollectConfig c;
  const Episode ep = collect_episode(sim::ScenarioKind::Highway, 4, 0, c);
  ASSERT_EQ(ep.frames.size(), 732u);
  std::size_t noise = 0, intervention = 0, kept = 0;
  for (const auto& f : ep.frames) {
    noise += f.noise;
    intervention += f.intervention;
    kept += f.trainable();
    EXPECT_LT(f.action, 9);
    EXPECT_EQ(f.image.size(), ep.dims.size());
  }
  EXPECT_EQ(noise, 13u);
  EXPECT_EQ(intervention, 0u);
  EXPECT_EQ(kept, 719u);
  for (std::size_t f = 360; f < 373; ++f) EXPECT_TRUE(ep.frames[f].noise);
}

TEST(Collect, DisabledNoiseKeepsAllFrames) {
  CollectConfig c;
  c.noise.enabled = false;
  c.episode_seconds = 20.0;
  const Episode ep = collect_episode(sim::ScenarioKind::Urban, 2, 0, c);
  EXPECT_EQ(ep.frames.size(), 240u);
  for (const auto& f : ep.frames) EXPECT_TRUE(f.trainable());
}

TEST(Collect, TooShortWithNoiseThrows) {
  CollectConfig c;
  c.episode_seconds = 20.0;
  EXPECT_THROW(collect_episode(sim::ScenarioKind::Urban, 0, 0, c), std::invalid_argument);
}

TEST(Collect, NoiseChangesExecutedSteer) {
  CollectConfig noisy;
  CollectConfig clean;
  clean.noise.enabled = false;
  const Episode a = collect_episode(sim::ScenarioKind::Highway, 9, 0, noisy);
  const Episode b = collect_episode(sim::ScenarioKind::Highway, 9, 0, clean);
  for (std::size_t f = 0; f <= 360; ++f) ASSERT_EQ(a.frames[f].image, b.frames[f].image) << f;
  bool diverged = false;
  for (std::size_t f = 361; f < 373; ++f) diverged = diverged || a.frames[f].image != b.frames[f].image;
  EXPECT_TRUE(diverged);
}

TEST(Collect, SameSeedsGiveIdenticalFiles) {
  const auto c = short_config();
  const fs::path d1 = scratch("det1"), d2 = scratch("det2");
  write_dataset(d1, collect(c, "h"));
  write_dataset(d2, collect(c, "h", 2));
  EXPECT_EQ(dir_bytes(d1), dir_bytes(d2));
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST(Collect, NoTrainingSampleIsFlagged) {
  const Dataset ds = collect(short_config(), "h");
  for (Head h : {Head::Action9, Head::Offline900}) {
    const auto s = samples(ds, h, all_episodes(ds));
    EXPECT_FALSE(s.empty());
    for (const auto& r : s) EXPECT_TRUE(ds.episodes[r.episode].frames[r.frame].trainable());
  }
}

TEST(Samples, OfflineHeadDropsUnlabeledTail) {
  const Dataset ds = synthetic_dataset(1, 20);
  const auto a = samples(ds, Head::Action9, {0});
  const auto o = samples(ds, Head::Offline900, {0});
  // Frames 0, 7, 14 carry the noise flag.
  EXPECT_EQ(a.size(), 17u);
  EXPECT_EQ(o.size(), 13u);
  for (const auto& r : o) EXPECT_LT(r.frame, 16u);
}

TEST(Container, EpisodeRoundTrip) {
  const Episode ep = synthetic_episode(3, 12);
  const auto bytes = encode_episode(ep);
  EXPECT_EQ(encode_episode(decode_episode(bytes)), bytes);
}

TEST(Container, StructuredErrors) {
  const auto good = encode_episode(synthetic_episode(0, 3));
  auto expect_kind = [](std::vector<std::uint8_t> b, FormatError::Kind k) {
    try {
      decode_episode(b);
      ADD_FAILURE() << "decode accepted a damaged episode";
    } catch (const FormatError& e) {
      EXPECT_EQ(e.kind(), k) << e.what();
    }
  };
  auto bad = good;
  bad[0] = 'X';
  expect_kind(bad, FormatError::Kind::BadMagic);
  bad = good;
  bad[4] = 9;
  expect_kind(bad, FormatError::Kind::VersionMismatch);
  expect_kind(std::vector<std::uint8_t>(good.begin(), good.end() - 5), FormatError::Kind::Truncated);
  bad = good;
  bad.push_back(0);
  expect_kind(bad, FormatError::Kind::CountMismatch);
  bad = good;
  bad[6] = 2;  // frame count 3 -> 2 leaves a frame of trailing bytes
  expect_kind(bad, FormatError::Kind::CountMismatch);
}

TEST(Container, DatasetWriteReadWrite) {
  const fs::path a = scratch("rt_a"), b = scratch("rt_b");
  const Dataset ds = synthetic_dataset(3, 9);
  write_dataset(a, ds);
  const Dataset back = read_dataset(a);
  EXPECT_EQ(back.frame_count(), 27u);
  write_dataset(b, back);
  EXPECT_EQ(dir_bytes(a), dir_bytes(b));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Container, EmptyDatasetRoundTrips) {
  const fs::path a = scratch("empty_a"), b = scratch("empty_b");
  Dataset ds;
  ds.manifest = make_manifest({}, {}, {}, "none");
  write_dataset(a, ds);
  const Dataset back = read_dataset(a);
  EXPECT_TRUE(back.episodes.empty());
  write_dataset(b, back);
  EXPECT_EQ(dir_bytes(a), dir_bytes(b));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Container, CorruptedFrameCountInManifest) {
  const fs::path a = scratch("count");
  write_dataset(a, synthetic_dataset(2, 5));
  auto j = nlohmann::json::parse(io::read_text(a / "manifest.json"));
  j["frame_count"] = 11;
  io::write_text(a / "manifest.json", j.dump(2));
  try {
    read_dataset(a);
    ADD_FAILURE() << "read accepted a wrong frame count";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.kind(), FormatError::Kind::CountMismatch);
  }
  j["frame_count"] = 10;
  j["episodes"][1]["frames"] = 4;
  io::write_text(a / "manifest.json", j.dump(2));
  try {
    read_dataset(a);
    ADD_FAILURE() << "read accepted a wrong episode frame count";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.kind(), FormatError::Kind::CountMismatch);
  }
  j["episodes"][1]["frames"] = 5;
  j["version"] = 2;
  io::write_text(a / "manifest.json", j.dump(2));
  try {
    read_dataset(a);
    ADD_FAILURE() << "read accepted a future version";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.kind(), FormatError::Kind::VersionMismatch);
  }
  fs::remove_all(a);
}

TEST(Subsets, NestedAndSorted) {
  const std::vector<double> fractions{0.05, 0.10, 0.25, 0.50, 1.0};
  std::vector<std::size_t> prev;
  for (double f : fractions) {
    const auto s = episode_subset(40, f, 17);
    EXPECT_EQ(s.size(), static_cast<std::size_t>(std::llround(f * 40)));
    EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
    EXPECT_TRUE(std::includes(s.begin(), s.end(), prev.begin(), prev.end()));
    prev = s;
  }
  EXPECT_EQ(prev, all_episodes(synthetic_dataset(40, 1)));
  EXPECT_THROW(episode_subset(5, 0.05, 0), std::invalid_argument);
  EXPECT_THROW(episode_subset(5, 0.0, 0), std::invalid_argument);
  EXPECT_THROW(episode_subset(5, 1.5, 0), std::invalid_argument);
}

TEST(Images, QuantizeRoundTrip) {
  Tensor t({3, 2, 2});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i) / 11.0;
  const auto q = quantize_image(t);
  const Tensor back = image_tensor(q, {3, 2, 2});
  EXPECT_LE(diff::max_abs_diff(t, back), 0.5 / 255 + 1e-12);
  EXPECT_EQ(quantize_image(back), q);
}
