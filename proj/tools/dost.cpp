// dost: command-line front end.
//
//   dost generate --out DIR [generator flags]
//   dost run --config FILE [--strategy NAME] [--set key=value ...]
//   dost eval --ledger FILE [--metrics FILE]
//   dost gradcheck [--seed N] [--tolerance X]
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dost/data.hpp"
#include "dost/errors.hpp"
#include "dost/gradcheck.hpp"
#include "dost/io.hpp"
#include "dost/metrics.hpp"
#include "dost/run.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

int cmd_generate(const dost::SyntheticSpec& spec, const std::string& out_dir) {
  auto syn = dost::generate_synthetic(spec);
  dost::save_dataset(out_dir, syn.data.frame, syn.data.adjacency.raw());
  std::cout << "wrote " << syn.data.frame.steps() << " steps x " << spec.locations << " locations to " << out_dir
            << '\n';
  return 0;
}

struct RunArgs {
  std::string config;
  std::string strategy;
  std::string dataset;
  std::string output;
  std::vector<std::string> overrides;
};

dost::RunConfig resolve_run_config(const RunArgs& a) {
  dost::io::KeyValues kv = dost::io::KeyValues::load(a.config);
  for (const auto& o : a.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw dost::ConfigError("--set expects key=value, got '" + o + "'");
    kv.set(std::string(dost::io::trim(o.substr(0, eq))), std::string(dost::io::trim(o.substr(eq + 1))));
  }
  dost::RunConfig cfg = dost::parse_run_config(kv);
  const fs::path base = fs::path(a.config).parent_path();
  auto resolve = [&base](std::string& p) {
    if (!p.empty() && fs::path(p).is_relative()) p = (base / p).lexically_normal().string();
  };
  resolve(cfg.dataset_dir);
  resolve(cfg.output_dir);
  if (!a.dataset.empty()) cfg.dataset_dir = a.dataset;
  if (!a.output.empty()) cfg.output_dir = a.output;
  if (!a.strategy.empty()) cfg = dost::apply_preset(cfg, a.strategy);
  if (cfg.dataset_dir.empty()) throw dost::ConfigError("no dataset_dir in config and no --dataset given");
  return cfg;
}

int cmd_run(const RunArgs& args) {
  const dost::RunConfig cfg = resolve_run_config(args);
  const dost::Dataset ds = dost::load_dataset(cfg.dataset_dir);
  const auto started = std::chrono::steady_clock::now();
  const dost::RunResult result = dost::run_stream(ds, cfg, &std::cout);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

  if (!cfg.output_dir.empty()) {
    const fs::path out = cfg.output_dir;
    fs::create_directories(out);
    {
      std::ofstream f(out / "metrics.csv");
      dost::write_metrics(f, result.pairs, result.report);
    }
    {
      std::ofstream f(out / "run_log.csv");
      dost::write_run_log(f, result.log);
    }
    {
      std::ofstream f(out / "effective_config.txt");
      dost::effective_config(cfg).write(f);
    }
    const auto& meta = ds.frame.meta;
    dost::save_ledger(out / "ledger.csv", result.pairs, meta.locations, cfg.model.horizon, meta.features,
                      result.report.unresolved);
    std::cout << "outputs written to " << out.string() << '\n';
  }
  dost::write_summary(std::cout, result.report);
  std::cout << "elapsed " << seconds << " s\n";
  return 0;
}

int cmd_eval(const std::string& ledger_path, const std::string& metrics_path) {
  const dost::LedgerFile lf = dost::load_ledger(ledger_path);
  const auto report = dost::MetricReport::from_pairs(lf.pairs, lf.horizon, lf.unresolved);
  if (!metrics_path.empty()) {
    std::ofstream f(metrics_path);
    if (!f) throw dost::ParseError("cannot write " + metrics_path);
    dost::write_metrics(f, lf.pairs, report);
  }
  dost::write_summary(std::cout, report);
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, double tolerance) {
  double worst = 0.0;
  for (const auto& g : dost::op_gradchecks(seed)) {
    std::printf("op    %-28s %.3e\n", g.name.c_str(), g.max_relative_error);
    worst = std::max(worst, g.max_relative_error);
  }
  const auto net = dost::network_gradcheck(dost::tiny_model_config(), seed);
  for (const auto& g : net.groups) {
    std::printf("param %-28s %.3e\n", g.name.c_str(), g.max_relative_error);
  }
  worst = std::max(worst, net.max_relative_error);
  std::printf("max relative error %.3e (tolerance %.1e)\n", worst, tolerance);
  return worst < tolerance ? 0 : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Online spatio-temporal forecasting with location-specific adapters"};
  app.require_subcommand(1);

  dost::SyntheticSpec spec;
  std::string gen_out;
  auto* gen = app.add_subcommand("generate", "Write a synthetic drifting dataset");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--locations", spec.locations, "Number of locations")->capture_default_str();
  gen->add_option("--days", spec.days, "Length in days")->capture_default_str();
  gen->add_option("--interval-minutes", spec.interval_minutes, "Sampling interval")->capture_default_str();
  gen->add_option("--drift-rate", spec.drift_rate, "Relative mean drift per week")->capture_default_str();
  gen->add_option("--drift-heterogeneity", spec.drift_heterogeneity, "Spread of per-location drift in [0, 1]")
      ->capture_default_str();
  gen->add_option("--noise-std", spec.noise_std, "Gaussian noise standard deviation")->capture_default_str();
  gen->add_option("--graph-degree", spec.graph_degree, "Expected node degree")->capture_default_str();
  gen->add_option("--amplitude-min", spec.amplitude_min, "Smallest location amplitude")->capture_default_str();
  gen->add_option("--amplitude-max", spec.amplitude_max, "Largest location amplitude")->capture_default_str();
  gen->add_option("--seed", spec.seed, "Random seed")->capture_default_str();

  RunArgs run_args;
  auto* run = app.add_subcommand("run", "Warm up, then stream the online phase");
  run->add_option("--config", run_args.config, "key=value run configuration")->required();
  run->add_option("--strategy", run_args.strategy, "Strategy preset")
      ->check(CLI::IsMember(dost::strategy_presets()));
  run->add_option("--dataset", run_args.dataset, "Dataset directory (overrides dataset_dir)");
  run->add_option("--output", run_args.output, "Output directory (overrides output_dir)");
  run->add_option("--set", run_args.overrides, "Override a config key (key=value), repeatable");

  std::string ledger_path, metrics_path;
  auto* eval = app.add_subcommand("eval", "Rescore a stored prediction ledger");
  eval->add_option("--ledger", ledger_path, "Ledger file written by `run`")->required();
  eval->add_option("--metrics", metrics_path, "Write the metrics report here");

  std::uint64_t gc_seed = 1;
  double gc_tol = 1e-4;
  auto* grad = app.add_subcommand("gradcheck", "Compare autodiff gradients with finite differences");
  grad->add_option("--seed", gc_seed, "Random seed")->capture_default_str();
  grad->add_option("--tolerance", gc_tol, "Maximum accepted relative error")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*gen) return cmd_generate(spec, gen_out);
    if (*run) return cmd_run(run_args);
    if (*eval) return cmd_eval(ledger_path, metrics_path);
    if (*grad) return cmd_gradcheck(gc_seed, gc_tol);
  } catch (const dost::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const dost::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
