// Drives the online engine by hand on a small synthetic stream and prints a
// line per day: the phase, how many forward/backward passes ran, and the
// running MAE of resolved forecasts.

#include <cstdio>

#include "dost/data.hpp"
#include "dost/engine.hpp"
#include "dost/metrics.hpp"

int main() {
  dost::SyntheticSpec spec;
  spec.locations = 5;
  spec.days = 28;
  spec.seed = 3;
  const auto syn = dost::generate_synthetic(spec);
  const auto& frame = syn.data.frame;

  dost::ModelConfig mc;
  mc.locations = spec.locations;
  mc.hidden = 16;
  mc.st_out = 32;
  mc.horizon = 6;

  const auto split = dost::split_phases(frame.steps());
  const auto stats = dost::NormStats::compute(frame, split.warmup_train);
  const auto train = dost::make_windows(frame, split.warmup_train, mc.lookback, mc.horizon);
  const auto val = dost::make_windows(frame, split.warmup_val, mc.lookback, mc.horizon);

  dost::AdaptiveSTNetwork net(mc, 11);
  dost::TrainerConfig tc;
  tc.max_epochs = 20;
  const auto report =
      dost::warmup_train(net, syn.data.adjacency, dost::prepare_all(train, stats), dost::prepare_all(val, stats), tc);
  std::printf("warm-up: %zu epochs, best validation MAE %.4f\n", report.epochs_run, report.best_validation);

  dost::OnlineConfig oc;
  oc.memory_slots = 64;
  oc.schedule = dost::AHConfig{frame.meta.intervals_per_week(), 24, 1.0, static_cast<std::int64_t>(split.online.begin)};
  dost::OnlineEngine engine(net, syn.data.adjacency, stats, oc);
  engine.seed_memory(val);

  dost::PredictionLedger ledger(mc.horizon);
  dost::MetricReport metrics(mc.horizon);
  std::size_t fwd = 0, bwd = 0;
  for (std::size_t t = split.online.begin; t < split.online.end; ++t) {
    const auto tau = static_cast<std::int64_t>(t);
    const auto row = frame.row(t);
    for (const auto& pair : ledger.observe(tau, row)) metrics.add(pair);
    auto out = engine.step(tau, row);
    fwd += out.record.forward_count;
    bwd += out.record.backward_count;
    if (out.forecast) ledger.issue(tau, out.record.phase, std::move(*out.forecast));
    if ((t - split.online.begin) % 24 == 23) {
      std::printf("step %5lld  %-9s  fwd %4zu  bwd %3zu  running MAE %.4f\n", static_cast<long long>(tau),
                  dost::phase_name(out.record.phase), fwd, bwd, metrics.overall.mae());
      fwd = bwd = 0;
    }
  }
  std::printf("scored %zu forecasts, %zu unresolved at end of stream\n", metrics.pairs, ledger.pending());
}
