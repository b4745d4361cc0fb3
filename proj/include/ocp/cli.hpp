#pragma once

// Command-line front end. Each subcommand reads a RunConfig (file plus flag
// overrides), does one pipeline step and archives the merged config next to
// its outputs as config.json.

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <CLI11.hpp>

#include "ocp/config.hpp"

namespace ocp::cli {

namespace fs = std::filesystem;
using config::ConfigError;
using config::RunConfig;
using nlohmann::json;

inline constexpr int kOk = 0;
inline constexpr int kInternal = 1;
inline constexpr int kUsage = 2;

inline constexpr const char* kConfigFile = "config.json";
inline constexpr const char* kCheckpointFile = "checkpoint.bin";

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::size_t jobs = 1;
  bool force = false;
};

/// `key.path=value`; the value is parsed as JSON, or taken as a string.
inline json override_patch(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + assignment + "'");
  const std::string value = assignment.substr(eq + 1);
  json v = json::parse(value, nullptr, false);
  if (v.is_discarded()) v = value;
  json patch = json::object();
  json* slot = &patch;
  std::string path = assignment.substr(0, eq);
  for (std::size_t pos; (pos = path.find('.')) != std::string::npos; path = path.substr(pos + 1)) {
    slot = &(*slot)[path.substr(0, pos)];
  }
  (*slot)[path] = v;
  return patch;
}

inline RunConfig load_config(const Common& c) {
  json j = config::to_json(RunConfig{});
  if (!c.config.empty()) {
    std::string text;
    try {
      text = io::read_text(c.config);
    } catch (const std::exception& e) {
      throw ConfigError("cannot read config '" + c.config + "': " + e.what());
    }
    json file = json::parse(text, nullptr, false);
    if (file.is_discarded()) throw ConfigError("config '" + c.config + "' is not valid JSON");
    if (!file.is_object() || !file.contains("version")) throw ConfigError("config: missing required 'version'");
    j = file;
  }
  for (const auto& s : c.sets) j.merge_patch(override_patch(s));
  if (c.seed) j["seed"] = *c.seed;
  return config::from_json(j);
}

inline void write_config(const fs::path& dir, const RunConfig& cfg) { io::write_text(dir / kConfigFile, config::to_text(cfg)); }

inline void refuse_existing(const fs::path& file, bool force) {
  if (fs::exists(file) && !force) {
    throw ConfigError(file.string() + " already exists; pass --force to overwrite");
  }
}

struct Model {
  RunConfig config;
  eval::Driver driver;
};

/// A training output directory: its archived config and checkpoint.
inline Model load_model(const fs::path& dir) {
  if (!fs::exists(dir / kConfigFile)) throw ConfigError("model '" + dir.string() + "' has no " + kConfigFile);
  RunConfig cfg = config::parse(io::read_text(dir / kConfigFile));
  const auto pc = cfg.policy_config();
  const std::string name(objectcentric::variant_name(pc.representation.variant));
  if (!fs::exists(dir / kCheckpointFile)) {
    throw ConfigError("model '" + dir.string() + "' (" + name + ") has no " + kCheckpointFile);
  }
  auto params = diff::load_checkpoint(dir / kCheckpointFile);
  return {cfg, eval::Driver::make_policy(name, pc, std::move(params))};
}

// ---------------------------------------------------------------------------
// Subcommands

inline void cmd_collect(const Common& c, std::ostream& log) {
  const RunConfig cfg = load_config(c);
  const fs::path out = c.out;
  refuse_existing(out / "manifest.json", c.force);
  const auto ds = data::collect(cfg.collect_config(), data::hex64(data::fnv1a(config::to_text(cfg))), c.jobs);
  data::write_dataset(out, ds);
  write_config(out, cfg);
  log << "collected " << ds.episodes.size() << " episodes, " << ds.manifest.frames << " frames into " << out.string()
      << "\n";
}

inline void cmd_train(const Common& c, const std::string& dataset, std::ostream& log) {
  const RunConfig cfg = load_config(c);
  const fs::path out = c.out;
  refuse_existing(out / kCheckpointFile, c.force);
  const auto ds = data::read_dataset(dataset);
  const auto pc = cfg.policy_config();
  const auto refs = data::samples(ds, pc.head, data::all_episodes(ds));
  const auto result = policy::train(ds, refs, pc, cfg.train_config(), [&](std::size_t epoch, double loss) {
    log << "epoch " << epoch + 1 << " loss " << loss << "\n";
  });
  diff::save_checkpoint(out / kCheckpointFile, result.params);
  io::write_text(out / "loss.csv", policy::loss_csv(result.epoch_loss));
  write_config(out, cfg);
}

inline std::string log_name(const eval::RolloutLog& l) {
  return l.variant + "_" + sim::kind_name(l.kind) + "_" + eval::condition_name(l.boxes) + "_" + std::to_string(l.seed) +
         ".objr";
}

inline void cmd_eval_drive(const Common& c, const std::vector<std::string>& models, std::ostream& log) {
  const RunConfig cfg = load_config(c);
  const fs::path out = c.out;
  refuse_existing(out / "metrics.csv", c.force);
  std::vector<eval::Driver> drivers;
  if (cfg.eval.include_expert) drivers.push_back(eval::Driver::make_expert());
  for (const auto& m : models) {
    auto model = load_model(m);
    if (model.config.render.size != cfg.render.size) {
      throw ConfigError("model '" + m + "' was trained on " + std::to_string(model.config.render.size) +
                        " px renders, evaluation uses " + std::to_string(cfg.render.size));
    }
    drivers.push_back(std::move(model.driver));
  }
  if (drivers.empty()) throw ConfigError("eval-drive: no drivers (pass --model or enable eval.include_expert)");
  const auto result = eval::compare(drivers, cfg.eval.kinds, cfg.eval.box_conditions, cfg.eval_seeds(),
                                    cfg.rollout_config(), c.jobs);
  fs::create_directories(out / "logs");
  for (const auto& l : result.logs) eval::save_rollout(out / "logs" / log_name(l), l);
  io::write_text(out / "metrics.csv", eval::metrics_csv(result.rows));
  write_config(out, cfg);
  log << "wrote " << result.logs.size() << " rollouts, " << result.rows.size() << " rows to " << out.string() << "\n";
}

inline void cmd_eval_offline(const Common& c, const std::string& train_dir, const std::string& test_dir,
                             std::ostream& log) {
  const RunConfig cfg = load_config(c);
  const fs::path out = c.out;
  refuse_existing(out / "sweep.csv", c.force);
  const auto train_ds = data::read_dataset(train_dir);
  const auto test_ds = data::read_dataset(test_dir);
  const auto rows = eval::lowdata_sweep(train_ds, test_ds, cfg.sweep_config(), c.jobs);
  io::write_text(out / "sweep.csv", eval::sweep_csv(rows));
  write_config(out, cfg);
  log << "wrote " << rows.size() << " sweep rows to " << out.string() << "\n";
}

/// Pools the rollout logs of several eval-drive directories. A rollout that
/// appears in more than one directory must be identical and counts once.
inline std::vector<eval::RolloutLog> gather_logs(const std::vector<std::string>& dirs) {
  std::vector<eval::RolloutLog> logs;
  std::map<std::tuple<std::string, sim::ScenarioKind, eval::BoxCondition, std::uint64_t>, std::size_t> seen;
  for (const auto& d : dirs) {
    const fs::path logdir = fs::path(d) / "logs";
    if (!fs::is_directory(logdir)) throw ConfigError("'" + d + "' has no logs/ directory");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(logdir)) {
      if (e.path().extension() == ".objr") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      auto l = eval::load_rollout(f);
      auto key = std::make_tuple(l.variant, l.kind, l.boxes, l.seed);
      auto [it, fresh] = seen.try_emplace(key, logs.size());
      if (!fresh) {
        if (!(logs[it->second] == l)) throw std::runtime_error("report: conflicting logs for " + f.filename().string());
        continue;
      }
      logs.push_back(std::move(l));
    }
  }
  if (logs.empty()) throw ConfigError("report: no rollout logs found");
  // Stable order regardless of directory order: variant, kind, condition, seed.
  std::stable_sort(logs.begin(), logs.end(), [](const auto& a, const auto& b) {
    return std::tie(a.variant, a.kind, a.boxes, a.seed) < std::tie(b.variant, b.kind, b.boxes, b.seed);
  });
  return logs;
}

inline void cmd_report(const Common& c, const std::vector<std::string>& dirs, std::ostream& log) {
  const RunConfig cfg = load_config(c);
  const fs::path out = c.out;
  refuse_existing(out / "report.csv", c.force);
  const auto rows = eval::pool_logs(gather_logs(dirs));
  io::write_text(out / "report.csv", eval::metrics_csv(rows));
  write_config(out, cfg);
  log << "wrote " << rows.size() << " pooled rows to " << out.string() << "\n";
}

inline void cmd_annotate(const Common& c, const std::string& model_dir, const std::string& log_file, std::ostream& log) {
  const RunConfig cfg = load_config(c);
  const fs::path out = c.out;
  refuse_existing(out / "frame_00000.ppm", c.force);
  const auto model = load_model(model_dir);
  const auto rollout = eval::load_rollout(log_file);
  const auto n = eval::annotate_rollout(model.driver, cfg.rollout_config(), rollout, out);
  write_config(out, cfg);
  log << "wrote " << n << " frames to " << out.string() << "\n";
}

// ---------------------------------------------------------------------------

inline void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "JSON run configuration (defaults apply to missing keys)");
  sub->add_option("--set", c.sets, "Override a config value, e.g. --set train.variant=global_only");
  sub->add_option("--seed", c.seed, "Run seed (overrides the config)");
  sub->add_option("--out", c.out, "Existing output directory")->required()->check(CLI::ExistingDirectory);
  sub->add_option("--jobs", c.jobs, "Worker threads")->check(CLI::PositiveNumber);
  sub->add_flag("--force", c.force, "Overwrite existing outputs");
}

/// Runs the CLI; returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Object-centric driving policy pipeline"};
  app.require_subcommand(1);
  Common common;
  std::string dataset, test_dataset, model, log_file;
  std::vector<std::string> models, dirs;

  auto* collect = app.add_subcommand("collect", "Collect expert demonstrations");
  add_common(collect, common);
  auto* train = app.add_subcommand("train", "Train a policy by behaviour cloning");
  add_common(train, common);
  train->add_option("--dataset", dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  auto* drive = app.add_subcommand("eval-drive", "Closed-loop rollouts");
  add_common(drive, common);
  drive->add_option("--model", models, "Training output directory (repeatable)")->check(CLI::ExistingDirectory);
  auto* offline = app.add_subcommand("eval-offline", "Held-out perplexity over nested training fractions");
  add_common(offline, common);
  offline->add_option("--dataset", dataset, "Training dataset")->required()->check(CLI::ExistingDirectory);
  offline->add_option("--test-dataset", test_dataset, "Held-out dataset")->required()->check(CLI::ExistingDirectory);
  auto* report = app.add_subcommand("report", "Pool rollout logs of eval-drive runs");
  add_common(report, common);
  report->add_option("dirs", dirs, "eval-drive output directories")->required()->check(CLI::ExistingDirectory);
  auto* annotate = app.add_subcommand("annotate", "Render per-frame object weights of a logged rollout");
  add_common(annotate, common);
  annotate->add_option("--model", model, "Training output directory")->required()->check(CLI::ExistingDirectory);
  annotate->add_option("--log", log_file, "Rollout log (.objr)")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e, log, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, log, err);
    return kUsage;
  }

  try {
    if (*collect) cmd_collect(common, log);
    if (*train) cmd_train(common, dataset, log);
    if (*drive) cmd_eval_drive(common, models, log);
    if (*offline) cmd_eval_offline(common, dataset, test_dataset, log);
    if (*report) cmd_report(common, dirs, log);
    if (*annotate) cmd_annotate(common, model, log_file, log);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kInternal;
  }
  return kOk;
}

}  // namespace ocp::cli
