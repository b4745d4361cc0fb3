#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "ocp/cli.hpp"

using namespace ocp;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "ocp");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    root = fs::temp_directory_path() / ("ocp_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root);
    fs::create_directories(root);
    io::write_text(root / "c.json", R"({"version": 1,
      "collect": {"episodes": 1, "episode_seconds": 6, "noise": {"enabled": false}},
      "render": {"size": 48, "metres_per_pixel": 1.0},
      "train": {"epochs": 1, "batch_size": 16},
      "eval": {"duration": 2, "seeds": 1, "include_expert": false}})");
  }
  void TearDown() override { fs::remove_all(root); }

  fs::path dir(const std::string& name) {
    fs::create_directories(root / name);
    return root / name;
  }
  std::string cfg() const { return (root / "c.json").string(); }

  fs::path root;
};

std::map<std::string, std::vector<std::uint8_t>> snapshot(const fs::path& dir) {
  std::map<std::string, std::vector<std::uint8_t>> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = io::read_file(e.path());
  }
  return files;
}

}  // namespace

TEST(CliConfig, DefaultsRoundTrip) {
  const config::RunConfig c;
  const auto text = config::to_text(c);
  EXPECT_EQ(config::to_text(config::parse(text)), text);
}

TEST(CliConfig, VersionRequiredAndUnknownKeysRejected) {
  EXPECT_THROW(config::parse(R"({"seed": 1})"), config::ConfigError);
  EXPECT_THROW(config::parse(R"({"version": 2})"), config::ConfigError);
  EXPECT_THROW(config::parse(R"({"version": 1, "train": {"lr": 1}})"), config::ConfigError);
  EXPECT_THROW(config::parse(R"({"version": 1, "train": {"epochs": "many"}})"), config::ConfigError);
  EXPECT_THROW(config::parse(R"({"version": 1, "train": {"variant": "nope"}})"), config::ConfigError);
  EXPECT_THROW(config::parse("{"), config::ConfigError);
  const auto c = config::parse(R"({"version": 1, "seed": 9, "train": {"variant": "baseline"}})");
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.train.variant, objectcentric::Variant::GlobalOnly);
  EXPECT_EQ(c.train.epochs, config::RunConfig{}.train.epochs);
}

TEST(CliConfig, OverridePatch) {
  EXPECT_EQ(cli::override_patch("train.epochs=4"), (nlohmann::json{{"train", {{"epochs", 4}}}}));
  EXPECT_EQ(cli::override_patch("train.variant=baseline"), (nlohmann::json{{"train", {{"variant", "baseline"}}}}));
  EXPECT_THROW(cli::override_patch("novalue"), config::ConfigError);
}

TEST_F(Cli, CollectMatchesDirectCallAndRerunsIdentically) {
  const auto a = dir("a"), b = dir("b");
  ASSERT_EQ(invoke({"collect", "--config", cfg(), "--out", a.string(), "--jobs", "2"}).code, 0);

  const auto cfgv = config::parse(io::read_text(a / "config.json"));
  const auto direct = data::collect(cfgv.collect_config(), data::hex64(data::fnv1a(config::to_text(cfgv))));
  const auto c = dir("direct");
  data::write_dataset(c, direct);
  auto got = snapshot(a);
  got.erase("config.json");
  EXPECT_EQ(got, snapshot(c));

  ASSERT_EQ(invoke({"collect", "--config", (a / "config.json").string(), "--out", b.string()}).code, 0);
  EXPECT_EQ(snapshot(a), snapshot(b));
}

TEST_F(Cli, FlagsOverrideAndAreArchived) {
  const auto a = dir("a");
  ASSERT_EQ(invoke({"collect", "--config", cfg(), "--seed", "7", "--set", "collect.kinds=[\"highway\"]", "--out",
                 a.string()})
                .code,
            0);
  const auto c = config::parse(io::read_text(a / "config.json"));
  EXPECT_EQ(c.seed, 7u);
  ASSERT_EQ(c.collect.kinds.size(), 1u);
  EXPECT_EQ(c.collect.kinds[0], sim::ScenarioKind::Highway);
  const auto m = data::read_manifest(a);
  EXPECT_EQ(m.episodes.at(0).seed, 7u);
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(invoke({}).code, 2);
  EXPECT_EQ(invoke({"collect", "--config", cfg(), "--out", (root / "missing").string()}).code, 2);
  EXPECT_EQ(invoke({"collect", "--config", (root / "nope.json").string(), "--out", dir("x").string()}).code, 2);
  EXPECT_EQ(invoke({"collect", "--config", cfg(), "--set", "bogus=1", "--out", dir("x").string()}).code, 2);
  EXPECT_EQ(invoke({"collect", "--help"}).code, 0);

  // A corrupt dataset is a runtime failure, not a usage error.
  const auto d = dir("d");
  ASSERT_EQ(invoke({"collect", "--config", cfg(), "--out", d.string()}).code, 0);
  auto bytes = io::read_file(d / "episodes" / data::episode_file(0));
  bytes[0] ^= 0xff;
  io::write_file(d / "episodes" / data::episode_file(0), bytes);
  const auto r = invoke({"train", "--config", cfg(), "--dataset", d.string(), "--out", dir("m").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("error:"), std::string::npos);
}

TEST_F(Cli, TrainMatchesDirectCallAndRefusesOverwrite) {
  const auto d = dir("d"), m = dir("m");
  ASSERT_EQ(invoke({"collect", "--config", cfg(), "--out", d.string()}).code, 0);
  ASSERT_EQ(invoke({"train", "--config", cfg(), "--dataset", d.string(), "--out", m.string()}).code, 0);

  const auto c = config::parse(io::read_text(m / "config.json"));
  const auto ds = data::read_dataset(d);
  const auto pc = c.policy_config();
  const auto direct = policy::train(ds, data::samples(ds, pc.head, data::all_episodes(ds)), pc, c.train_config());
  EXPECT_EQ(io::read_file(m / "checkpoint.bin"), diff::encode_checkpoint(direct.params));
  EXPECT_EQ(io::read_text(m / "loss.csv"), policy::loss_csv(direct.epoch_loss));

  const auto before = io::read_file(m / "checkpoint.bin");
  const auto again = invoke({"train", "--config", cfg(), "--seed", "3", "--dataset", d.string(), "--out", m.string()});
  EXPECT_EQ(again.code, 2);
  EXPECT_NE(again.err.find("--force"), std::string::npos);
  EXPECT_EQ(io::read_file(m / "checkpoint.bin"), before);
  EXPECT_EQ(invoke({"train", "--config", cfg(), "--seed", "3", "--dataset", d.string(), "--out", m.string(), "--force"}).code,
            0);
  EXPECT_NE(io::read_file(m / "checkpoint.bin"), before);
}

TEST_F(Cli, EvalDriveRejectsMissingCheckpointAndWrongHead) {
  const auto d = dir("d"), m = dir("m");
  ASSERT_EQ(invoke({"collect", "--config", cfg(), "--out", d.string()}).code, 0);
  ASSERT_EQ(invoke({"train", "--config", cfg(), "--set", "train.head=offline900", "--dataset", d.string(), "--out",
                 m.string()})
                .code,
            0);
  EXPECT_EQ(invoke({"eval-drive", "--config", cfg(), "--model", m.string(), "--out", dir("e").string()}).code, 2);
  fs::remove(m / "checkpoint.bin");
  const auto r = invoke({"eval-drive", "--config", cfg(), "--model", m.string(), "--out", dir("e").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("sparse_object"), std::string::npos);
}

TEST_F(Cli, ReportPoolsSixVariantsIntoTwentyFourRows) {
  const auto d = dir("d");
  ASSERT_EQ(invoke({"collect", "--config", cfg(), "--out", d.string()}).code, 0);
  std::vector<std::string> evals;
  for (auto v : objectcentric::kAllVariants) {
    const std::string name(objectcentric::variant_name(v));
    const auto m = dir("m_" + name), e = dir("e_" + name);
    ASSERT_EQ(invoke({"train", "--config", cfg(), "--set", "train.variant=" + name, "--dataset", d.string(), "--out",
                   m.string()})
                  .code,
              0);
    ASSERT_EQ(invoke({"eval-drive", "--config", cfg(), "--model", m.string(), "--out", e.string()}).code, 0);
    evals.push_back(e.string());
  }
  // Listing one directory twice must not double-count its rollouts.
  evals.push_back(evals.front());
  const auto r = dir("r");
  std::vector<std::string> args{"report", "--config", cfg(), "--out", r.string()};
  args.insert(args.end(), evals.begin(), evals.end());
  ASSERT_EQ(invoke(args).code, 0);

  const auto text = io::read_text(r / "report.csv");
  std::istringstream in(text);
  std::string line;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("variant,", 0) == 0) continue;
    ++rows;
    EXPECT_NE(line.find(",1,"), std::string::npos) << line;  // one seed per row
  }
  EXPECT_EQ(rows, 24u);

  // Re-running from the archived config reproduces the report.
  const auto r2 = dir("r2");
  args = {"report", "--config", (r / "config.json").string(), "--out", r2.string()};
  args.insert(args.end(), evals.rbegin(), evals.rend());
  ASSERT_EQ(invoke(args).code, 0);
  EXPECT_EQ(snapshot(r), snapshot(r2));
}

TEST_F(Cli, AnnotateTenFrameLogWritesTenImages) {
  const auto d = dir("d"), m = dir("m"), e = dir("e"), a = dir("a");
  ASSERT_EQ(invoke({"collect", "--config", cfg(), "--out", d.string()}).code, 0);
  ASSERT_EQ(invoke({"train", "--config", cfg(), "--dataset", d.string(), "--out", m.string()}).code, 0);
  const std::string ten = "eval.duration=" + std::to_string(10 * sim::kDt);
  ASSERT_EQ(invoke({"eval-drive", "--config", cfg(), "--set", ten, "--set", "eval.kinds=[\"urban\"]", "--set",
                 "eval.box_conditions=[\"gt\"]", "--model", m.string(), "--out", e.string()})
                .code,
            0);
  const auto log = e / "logs" / "sparse_object_urban_gt_100000.objr";
  ASSERT_EQ(eval::load_rollout(log).frames.size(), 10u);
  ASSERT_EQ(invoke({"annotate", "--config", cfg(), "--model", m.string(), "--log", log.string(), "--out", a.string()}).code,
            0);
  std::size_t ppm = 0;
  for (const auto& f : fs::directory_iterator(a)) ppm += f.path().extension() == ".ppm";
  EXPECT_EQ(ppm, 10u);

  const auto a2 = dir("a2");
  ASSERT_EQ(invoke({"annotate", "--config", (a / "config.json").string(), "--model", m.string(), "--log", log.string(),
                 "--out", a2.string()})
                .code,
            0);
  EXPECT_EQ(snapshot(a), snapshot(a2));
}

TEST_F(Cli, EvalCommandsRerunIdentically) {
  const auto d = dir("d"), t = dir("t"), m = dir("m"), e = dir("e"), e2 = dir("e2"), o = dir("o"), o2 = dir("o2");
  ASSERT_EQ(invoke({"collect", "--config", cfg(), "--set", "collect.episodes=2", "--out", d.string()}).code, 0);
  ASSERT_EQ(invoke({"collect", "--config", cfg(), "--seed", "50", "--out", t.string()}).code, 0);
  ASSERT_EQ(invoke({"train", "--config", cfg(), "--dataset", d.string(), "--out", m.string()}).code, 0);

  ASSERT_EQ(invoke({"eval-drive", "--config", cfg(), "--model", m.string(), "--out", e.string(), "--jobs", "2"}).code, 0);
  ASSERT_EQ(invoke({"eval-drive", "--config", (e / "config.json").string(), "--model", m.string(), "--out", e2.string()}).code,
            0);
  EXPECT_EQ(snapshot(e), snapshot(e2));

  const std::vector<std::string> sweep{"--set", "offline.fractions=[0.5,1.0]", "--set",
                                       "offline.variants=[\"baseline\",\"sparse_object\"]"};
  std::vector<std::string> args{"eval-offline", "--config", cfg(), "--dataset", d.string(), "--test-dataset",
                                t.string(),     "--out",    o.string()};
  args.insert(args.end(), sweep.begin(), sweep.end());
  ASSERT_EQ(invoke(args).code, 0);
  ASSERT_EQ(invoke({"eval-offline", "--config", (o / "config.json").string(), "--dataset", d.string(), "--test-dataset",
                 t.string(), "--out", o2.string()})
                .code,
            0);
  EXPECT_EQ(snapshot(o), snapshot(o2));
  EXPECT_NE(io::read_text(o / "sweep.csv").find("sparse_object,0.5"), std::string::npos);
}
