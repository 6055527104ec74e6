#pragma once

// End-to-end runs: configuration, strategy presets, warm-up, the online loop
// with lazy scoring, and report/log writers.

#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "dost/data.hpp"
#include "dost/engine.hpp"
#include "dost/errors.hpp"
#include "dost/io.hpp"
#include "dost/memory.hpp"
#include "dost/metrics.hpp"
#include "dost/model.hpp"
#include "dost/scheduler.hpp"

namespace dost {

/// Everything a run needs. Model locations/features are taken from the dataset.
struct RunConfig {
  ModelConfig model;
  TrainerConfig trainer;
  std::size_t memory_slots = 1000;
  std::size_t episodic_size = 8;
  std::optional<std::int64_t> intervals_per_week;  // default: from dataset meta
  std::optional<std::int64_t> awake_len;           // default: intervals_per_week
  double lambda = 1.0;
  StrategyConfig strategy;
  std::uint64_t seed = 0;
  std::string dataset_dir;
  std::string output_dir;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

inline UpdateScope parse_scope(const std::string& s) {
  if (s == "adapter") return UpdateScope::Adapter;
  if (s == "full") return UpdateScope::Full;
  if (s == "none") return UpdateScope::None;
  throw ConfigError("unknown update_scope '" + s + "'");
}

inline MemoryMode parse_memory_mode(const std::string& s) {
  if (s == "smu") return MemoryMode::Smu;
  if (s == "smur") return MemoryMode::Smur;
  if (s == "er") return MemoryMode::Er;
  if (s == "none") return MemoryMode::None;
  throw ConfigError("unknown memory_mode '" + s + "'");
}

inline const std::vector<std::string>& known_config_keys() {
  static const std::vector<std::string> keys = {
      "lookback", "horizon", "hidden", "st_out", "bottleneck", "st_blocks", "diffusion_steps", "kernel",
      "use_adapter", "shared_adapter", "learning_rate", "max_epochs", "patience", "batch_size", "weight_decay",
      "beta1", "beta2", "epsilon", "memory_slots", "episodic_size", "intervals_per_week", "awake_len", "lambda",
      "update_scope", "hibernate_enabled", "reset_enabled", "memory_mode", "strategy_lambda", "seed", "dataset_dir",
      "output_dir", "locations", "features"};
  return keys;
}

inline RunConfig parse_run_config(const io::KeyValues& kv) {
  for (const auto& [k, v] : kv.entries()) {
    const auto& keys = known_config_keys();
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) throw ConfigError("unknown config key '" + k + "'");
  }
  RunConfig c;
  c.model.merge(kv);
  c.trainer.learning_rate = kv.real_or("learning_rate", c.trainer.learning_rate);
  c.trainer.max_epochs = kv.size_or("max_epochs", c.trainer.max_epochs);
  c.trainer.patience = kv.size_or("patience", c.trainer.patience);
  c.trainer.batch_size = kv.size_or("batch_size", c.trainer.batch_size);
  c.trainer.weight_decay = kv.real_or("weight_decay", c.trainer.weight_decay);
  c.trainer.beta1 = kv.real_or("beta1", c.trainer.beta1);
  c.trainer.beta2 = kv.real_or("beta2", c.trainer.beta2);
  c.trainer.epsilon = kv.real_or("epsilon", c.trainer.epsilon);
  c.memory_slots = kv.size_or("memory_slots", c.memory_slots);
  c.episodic_size = kv.size_or("episodic_size", c.episodic_size);
  if (kv.has("intervals_per_week")) c.intervals_per_week = kv.int_or("intervals_per_week", 0);
  if (kv.has("awake_len")) c.awake_len = kv.int_or("awake_len", 0);
  c.lambda = kv.real_or("lambda", c.lambda);
  c.strategy.update_scope = parse_scope(kv.str_or("update_scope", "adapter"));
  c.strategy.hibernate_enabled = kv.flag_or("hibernate_enabled", true);
  c.strategy.reset_enabled = kv.flag_or("reset_enabled", true);
  c.strategy.memory_mode = parse_memory_mode(kv.str_or("memory_mode", "smu"));
  if (kv.has("strategy_lambda")) c.strategy.lambda = kv.real_or("strategy_lambda", 0.0);
  c.seed = static_cast<std::uint64_t>(kv.int_or("seed", 0));
  c.dataset_dir = kv.str_or("dataset_dir", "");
  c.output_dir = kv.str_or("output_dir", "");
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  auto kv = io::KeyValues::load(path);
  RunConfig c = parse_run_config(kv);
  // Relative dataset/output paths resolve against the config file's directory.
  auto resolve = [&path](std::string& p) {
    if (!p.empty() && std::filesystem::path(p).is_relative()) p = (path.parent_path() / p).lexically_normal().string();
  };
  resolve(c.dataset_dir);
  resolve(c.output_dir);
  return c;
}

/// Effective configuration as key=value, for logging and preset diffs.
inline io::KeyValues effective_config(const RunConfig& c) {
  io::KeyValues kv = c.model.to_kv();
  kv.set("learning_rate", io::format_double(c.trainer.learning_rate));
  kv.set("max_epochs", std::to_string(c.trainer.max_epochs));
  kv.set("patience", std::to_string(c.trainer.patience));
  kv.set("batch_size", std::to_string(c.trainer.batch_size));
  kv.set("weight_decay", io::format_double(c.trainer.weight_decay));
  kv.set("beta1", io::format_double(c.trainer.beta1));
  kv.set("beta2", io::format_double(c.trainer.beta2));
  kv.set("epsilon", io::format_double(c.trainer.epsilon));
  kv.set("memory_slots", std::to_string(c.memory_slots));
  kv.set("episodic_size", std::to_string(c.episodic_size));
  kv.set("intervals_per_week", c.intervals_per_week ? std::to_string(*c.intervals_per_week) : "auto");
  kv.set("awake_len", c.awake_len ? std::to_string(*c.awake_len) : "auto");
  kv.set("lambda", io::format_double(c.lambda));
  kv.set("update_scope", to_string(c.strategy.update_scope));
  kv.set("hibernate_enabled", c.strategy.hibernate_enabled ? "true" : "false");
  kv.set("reset_enabled", c.strategy.reset_enabled ? "true" : "false");
  kv.set("memory_mode", to_string(c.strategy.memory_mode));
  kv.set("strategy_lambda", c.strategy.lambda ? io::format_double(*c.strategy.lambda) : "none");
  kv.set("seed", std::to_string(c.seed));
  kv.set("dataset_dir", c.dataset_dir);
  kv.set("output_dir", c.output_dir);
  return kv;
}

inline const std::vector<std::string>& strategy_presets() {
  static const std::vector<std::string> names = {"dost", "frozen", "no-hibernate", "full", "er", "erh",
                                                 "smur", "no-reset", "no-via", "shared-adapter", "no-smu"};
  return names;
}

/// Applies an ablation preset on top of `base`; each preset touches only its
/// own knobs.
inline RunConfig apply_preset(RunConfig base, const std::string& name) {
  StrategyConfig& s = base.strategy;
  if (name == "dost") {
    s = StrategyConfig{};
  } else if (name == "frozen") {
    s.update_scope = UpdateScope::None;
    s.memory_mode = MemoryMode::None;
  } else if (name == "no-hibernate") {
    s.hibernate_enabled = false;
  } else if (name == "full") {
    s.update_scope = UpdateScope::Full;
  } else if (name == "er") {
    s.memory_mode = MemoryMode::Er;
    s.hibernate_enabled = false;
  } else if (name == "erh") {
    s.memory_mode = MemoryMode::Er;
    s.hibernate_enabled = true;
  } else if (name == "smur") {
    s.memory_mode = MemoryMode::Smur;
  } else if (name == "no-reset") {
    s.reset_enabled = false;
  } else if (name == "no-via") {
    base.model.use_adapter = false;
  } else if (name == "shared-adapter") {
    base.model.shared_adapter = true;
  } else if (name == "no-smu") {
    s.memory_mode = MemoryMode::None;
  } else {
    throw ConfigError("unknown strategy preset '" + name + "'");
  }
  return base;
}

/// Model config with the dataset's location and feature counts filled in.
inline ModelConfig model_for(const RunConfig& cfg, const DatasetMeta& meta) {
  ModelConfig m = cfg.model;
  m.locations = meta.locations;
  m.features = meta.features;
  return m;
}

/// Result of the warm-up phase; reusable across online strategies that share
/// the model and trainer configuration.
struct WarmStart {
  AdaptiveSTNetwork network;
  NormStats stats;
  PhaseSplit split;
  std::vector<MemoryEntry> validation;
  WarmupReport report;
};

inline WarmStart warm_up(const Dataset& ds, const RunConfig& cfg, std::ostream* log = nullptr) {
  const auto& frame = ds.frame;
  const ModelConfig mc = model_for(cfg, frame.meta);
  PhaseSplit split = split_phases(frame.steps());
  NormStats stats = NormStats::compute(frame, split.warmup_train);
  auto train = make_windows(frame, split.warmup_train, mc.lookback, mc.horizon);
  auto val = make_windows(frame, split.warmup_val, mc.lookback, mc.horizon);
  if (train.empty()) throw ConfigError("warm-up training range too short for one (L, H) window");
  AdaptiveSTNetwork net(mc, derive_seed(cfg.seed, 0));
  TrainerConfig tc = cfg.trainer;
  tc.seed = cfg.seed;
  auto report = warmup_train(net, ds.adjacency, prepare_all(train, stats), prepare_all(val, stats), tc);
  if (log) {
    *log << "warm-up: " << report.epochs_run << " epochs, best epoch " << report.best_epoch << " (validation MAE "
         << report.best_validation << ")\n";
  }
  return WarmStart{std::move(net), std::move(stats), split, std::move(val), std::move(report)};
}

struct RunResult {
  WarmupReport warmup;
  std::vector<StepRecord> log;
  std::vector<ResolvedPair> pairs;
  MetricReport report;
};

inline OnlineConfig online_config(const RunConfig& cfg, const DatasetMeta& meta, std::int64_t online_start) {
  OnlineConfig oc;
  oc.memory_slots = cfg.memory_slots;
  oc.episodic_size = cfg.episodic_size;
  const std::int64_t ipw = cfg.intervals_per_week.value_or(meta.intervals_per_week());
  oc.schedule = AHConfig{ipw, cfg.awake_len.value_or(ipw), cfg.lambda, online_start};
  oc.strategy = cfg.strategy;
  oc.optimizer = cfg.trainer.adamw();
  oc.seed = cfg.seed;
  return oc;
}

/// Online phase over the dataset's online range, starting from `warm`
/// (copied, so one warm start can serve several strategies).
inline RunResult run_online(const WarmStart& warm, const Dataset& ds, const RunConfig& cfg) {
  if (!(model_for(cfg, ds.frame.meta) == warm.network.config())) {
    throw ConfigError("warm start was trained with a different model configuration");
  }
  const auto& frame = ds.frame;
  AdaptiveSTNetwork net = warm.network;
  const auto online = warm.split.online;
  OnlineEngine engine(net, ds.adjacency, warm.stats,
                      online_config(cfg, frame.meta, static_cast<std::int64_t>(online.begin)));
  engine.seed_memory(warm.validation);

  const std::size_t history = net.config().lookback + net.config().horizon - 1;
  for (std::size_t t = online.begin > history ? online.begin - history : 0; t < online.begin; ++t) {
    engine.prime(static_cast<std::int64_t>(t), frame.row(t));
  }

  RunResult result;
  result.warmup = warm.report;
  PredictionLedger ledger(net.config().horizon);
  result.report = MetricReport(net.config().horizon);
  for (std::size_t t = online.begin; t < online.end; ++t) {
    const auto tau = static_cast<std::int64_t>(t);
    Tensor row = frame.row(t);
    for (const auto& pair : ledger.observe(tau, row)) result.report.add(pair);
    StepOutput out = engine.step(tau, row);
    if (out.forecast) ledger.issue(tau, out.record.phase, std::move(*out.forecast));
    result.log.push_back(out.record);
  }
  result.report.unresolved = ledger.pending();
  result.pairs = ledger.resolved();
  return result;
}

inline RunResult run_stream(const Dataset& ds, const RunConfig& cfg, std::ostream* log = nullptr) {
  return run_online(warm_up(ds, cfg, log), ds, cfg);
}

/// `step,phase,fwd,bwd,loss`; loss is empty on steps without an update.
inline void write_run_log(std::ostream& out, const std::vector<StepRecord>& log) {
  out << "step,phase,fwd,bwd,loss\n";
  for (const auto& r : log) {
    out << r.step << ',' << phase_name(r.phase) << ',' << r.forward_count << ',' << r.backward_count << ','
        << (r.loss ? io::format_double(*r.loss) : "") << '\n';
  }
}

}  // namespace dost
