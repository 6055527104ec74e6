#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <limits>
#include <random>

#include "dost/data.hpp"
#include "dost/engine.hpp"
#include "dost/gradcheck.hpp"

using dost::AdaptiveSTNetwork;
using dost::AdjacencyMatrix;
using dost::MemoryEntry;
using dost::MemoryMode;
using dost::ModelConfig;
using dost::NormStats;
using dost::OnlineConfig;
using dost::OnlineEngine;
using dost::Parameter;
using dost::Phase;
using dost::Shape;
using dost::Tensor;
using dost::UpdateScope;

namespace {

ModelConfig engine_config() {
  ModelConfig c;
  c.locations = 3;
  c.lookback = 6;
  c.horizon = 3;
  c.hidden = 8;
  c.st_out = 16;
  c.bottleneck = 3;
  return c;
}

struct Stream {
  dost::SyntheticDataset syn;
  NormStats stats;
};

Stream make_stream(std::size_t days = 4) {
  dost::SyntheticSpec spec;
  spec.locations = 3;
  spec.days = days;
  spec.drift_rate = 0.3;
  Stream s{dost::generate_synthetic(spec), {}};
  s.stats = NormStats::compute(s.syn.data.frame, {0, 40});
  return s;
}

OnlineConfig online_config(std::int64_t start, std::int64_t awake, std::size_t m = 16, std::size_t me = 4) {
  OnlineConfig cfg;
  cfg.memory_slots = m;
  cfg.episodic_size = me;
  cfg.schedule = dost::AHConfig{168, awake, 1.0, start};
  cfg.seed = 3;
  return cfg;
}

std::uint64_t checksum_of(const std::vector<Parameter*>& params) {
  std::uint64_t h = 0;
  for (const auto* p : params) h = dost::checksum(p->value, h ^ 0x5bd1e995ULL);
  return h;
}

// Adapter weights start at W_a2 = 0; randomising them makes adapter updates observable.
void randomise_adapter(AdaptiveSTNetwork& net, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto* p : net.adapter_parameters()) p->value = dost::detail::random_tensor(p->value.shape(), rng, -0.3, 0.3);
}

MemoryEntry window_entry(const dost::SeriesFrame& f, std::size_t start, const ModelConfig& c) {
  return dost::make_windows(f, {start, start + c.lookback + c.horizon}, c.lookback, c.horizon).at(0);
}

}  // namespace

TEST(AdamW, FirstStepMovesByLearningRate) {
  Parameter p("theta", Tensor::scalar(0.0));
  p.grad[0] = 1.0;
  dost::AdamW opt({&p}, dost::AdamWOptions{1e-3, 0.9, 0.999, 1e-8, 0.0});
  opt.step();
  // m̂ = 1 and v̂ = 1 after bias correction, so the step is lr/(1 + ε).
  EXPECT_NEAR(p.value[0], -1e-3, 1e-11);
  EXPECT_EQ(p.grad[0], 0.0);
  EXPECT_EQ(opt.steps(), 1u);
}

TEST(AdamW, ZeroGradientWithoutDecayIsNoop) {
  Parameter p("w", Tensor(Shape{2, 2}, {1, -2, 3, 4}));
  const Tensor before = p.value;
  dost::AdamW opt({&p}, dost::AdamWOptions{1e-3, 0.9, 0.999, 1e-8, 0.0});
  for (int i = 0; i < 5; ++i) opt.step();
  EXPECT_TRUE(dost::bitwise_equal(p.value, before));
}

TEST(AdamW, PureDecoupledDecay) {
  Parameter p("w", Tensor(Shape{3}, {1.0, -2.0, 0.5}));
  dost::AdamW opt({&p}, dost::AdamWOptions{1e-2, 0.9, 0.999, 1e-8, 0.1});
  opt.step();
  EXPECT_DOUBLE_EQ(p.value[0], 1.0 * (1 - 1e-3));
  EXPECT_DOUBLE_EQ(p.value[1], -2.0 * (1 - 1e-3));
  EXPECT_DOUBLE_EQ(p.value[2], 0.5 * (1 - 1e-3));
}

TEST(AdamW, MatchesReferenceOverSeveralSteps) {
  // Scalar reference recursion written out independently.
  Parameter p("w", Tensor::scalar(0.7));
  const dost::AdamWOptions o{5e-3, 0.8, 0.99, 1e-8, 0.01};
  dost::AdamW opt({&p}, o);
  double theta = 0.7, m = 0, v = 0;
  const double grads[] = {0.3, -1.2, 2.0, 0.0, 0.5};
  for (int t = 1; t <= 5; ++t) {
    const double g = grads[t - 1];
    p.grad[0] = g;
    opt.step();
    m = o.beta1 * m + (1 - o.beta1) * g;
    v = o.beta2 * v + (1 - o.beta2) * g * g;
    const double mh = m / (1 - std::pow(o.beta1, t)), vh = v / (1 - std::pow(o.beta2, t));
    theta -= o.learning_rate * (mh / (std::sqrt(vh) + o.epsilon) + o.weight_decay * theta);
    EXPECT_NEAR(p.value[0], theta, 1e-15) << "step " << t;
  }
}

TEST(AdamW, NonFiniteGradientRejectedWithStateUnchanged) {
  Parameter a("a", Tensor(Shape{2}, {1.0, 2.0}));
  Parameter b("b", Tensor(Shape{1}, {3.0}));
  dost::AdamW opt({&a, &b}, dost::AdamWOptions{});
  a.grad[0] = 0.5;
  opt.step();
  const Tensor a_before = a.value, m_before = opt.first_moment(0), v_before = opt.second_moment(0);
  a.grad[1] = 1.0;
  b.grad[0] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(opt.step(), dost::NumericError);
  EXPECT_TRUE(dost::bitwise_equal(a.value, a_before));
  EXPECT_TRUE(dost::bitwise_equal(opt.first_moment(0), m_before));
  EXPECT_TRUE(dost::bitwise_equal(opt.second_moment(0), v_before));
  EXPECT_EQ(opt.steps(), 1u);
}

TEST(EarlyStopping, PatienceTwo) {
  dost::EarlyStopping es(2);
  const double losses[] = {5, 4, 6, 7, 8};
  std::size_t stopped_after = 0;
  for (double l : losses) {
    es.record(l);
    if (es.should_stop()) {
      stopped_after = es.epochs();
      break;
    }
  }
  EXPECT_EQ(stopped_after, 4u);
  EXPECT_EQ(es.best_epoch(), 2u);
  EXPECT_EQ(es.best(), 4.0);
}

TEST(EarlyStopping, TiesDoNotResetPatience) {
  dost::EarlyStopping es(2);
  es.record(3);
  es.record(3);
  EXPECT_FALSE(es.should_stop());
  es.record(3);
  EXPECT_TRUE(es.should_stop());
  EXPECT_EQ(es.best_epoch(), 1u);
}

namespace {

std::vector<dost::PreparedSample> constant_samples(const ModelConfig& c, double value, std::size_t count) {
  std::vector<dost::PreparedSample> out;
  for (std::size_t i = 0; i < count; ++i) {
    Tensor x(Shape{c.locations, c.lookback, c.features});
    Tensor y(Shape{c.locations, c.horizon, c.features});
    x.fill(value);
    y.fill(value);
    out.push_back({x, y});
  }
  return out;
}

}  // namespace

TEST(WarmupTrain, MaxEpochsOne) {
  ModelConfig c = engine_config();
  AdaptiveSTNetwork net(c, 1);
  AdjacencyMatrix adj(Tensor(Shape{3, 3}));
  dost::TrainerConfig tc;
  tc.max_epochs = 1;
  tc.patience = 100;
  const auto report = dost::warmup_train(net, adj, constant_samples(c, 1.0, 4), constant_samples(c, 1.0, 2), tc);
  EXPECT_EQ(report.epochs_run, 1u);
  EXPECT_EQ(report.train_history.size(), 1u);
}

TEST(WarmupTrain, EmptyTrainingSetIsError) {
  ModelConfig c = engine_config();
  AdaptiveSTNetwork net(c, 1);
  AdjacencyMatrix adj(Tensor(Shape{3, 3}));
  EXPECT_THROW(dost::warmup_train(net, adj, {}, {}, dost::TrainerConfig{}), dost::ConfigError);
}

TEST(WarmupTrain, ConstantDatasetConverges) {
  ModelConfig c = engine_config();
  c.st_blocks = 1;
  c.lookback = 4;
  AdaptiveSTNetwork net(c, 2);
  AdjacencyMatrix adj(Tensor(Shape{3, 3}));
  dost::TrainerConfig tc;
  tc.batch_size = 4;
  const auto train = constant_samples(c, 0.7, 32);
  const auto val = constant_samples(c, 0.7, 4);
  const auto report = dost::warmup_train(net, adj, train, val, tc);
  EXPECT_LE(report.epochs_run, 150u);
  EXPECT_LT(dost::evaluate_mae(net, adj, val), 1e-3);
  EXPECT_EQ(dost::evaluate_mae(net, adj, val), report.best_validation);
}

TEST(SeedMemory, FillsWhenValidationFits) {
  const Stream s = make_stream();
  const ModelConfig c = engine_config();
  AdaptiveSTNetwork net(c, 1);
  const auto windows = dost::make_windows(s.syn.data.frame, {0, 20}, c.lookback, c.horizon);
  OnlineEngine engine(net, s.syn.data.adjacency, s.stats, online_config(20, 4, 16));
  engine.seed_memory(windows);
  ASSERT_EQ(engine.memory().size(), windows.size());
  for (std::size_t i = 0; i < windows.size(); ++i)
    EXPECT_EQ(engine.memory().slots()[i].origin_time, windows[i].origin_time);

  AdaptiveSTNetwork net2(c, 1);
  OnlineEngine empty(net2, s.syn.data.adjacency, s.stats, online_config(20, 4, 16));
  empty.seed_memory({});
  EXPECT_TRUE(empty.memory().empty());
  EXPECT_FALSE(empty.update().loss.has_value());
}

TEST(SeedMemory, DoubleCapacityRetainsHalf) {
  const std::size_t m = 20, trials = 4000;
  std::vector<double> kept(2 * m, 0.0);
  std::vector<MemoryEntry> samples(2 * m);
  for (std::size_t i = 0; i < samples.size(); ++i) samples[i].origin_time = static_cast<std::int64_t>(i);
  for (std::size_t trial = 0; trial < trials; ++trial) {
    dost::StreamingMemoryBuffer smb(m);
    std::mt19937_64 rng(dost::derive_seed(99, trial));
    for (const auto& e : samples) smb.offer(e, rng);
    for (const auto& e : smb.slots()) kept[static_cast<std::size_t>(e.origin_time)] += 1.0;
  }
  for (double k : kept) EXPECT_NEAR(k / trials, 0.5, 0.03);
}

TEST(SmuUpdate, AdapterScopeFreezesTraditionalParameters) {
  const Stream s = make_stream();
  const ModelConfig c = engine_config();
  AdaptiveSTNetwork net(c, 4);
  randomise_adapter(net, 4);
  const auto trad = checksum_of(net.traditional_parameters());
  const auto adapt = checksum_of(net.adapter_parameters());
  OnlineEngine engine(net, s.syn.data.adjacency, s.stats, online_config(30, 4));
  dost::EpisodicBatch batch;
  for (std::size_t i = 0; i < 4; ++i) batch.entries.push_back(window_entry(s.syn.data.frame, i * 5, c));
  const auto res = engine.update_on(batch);
  ASSERT_TRUE(res.loss.has_value());
  EXPECT_EQ(checksum_of(net.traditional_parameters()), trad);
  EXPECT_NE(checksum_of(net.adapter_parameters()), adapt);
}

TEST(SmuUpdate, FullScopeTouchesEverything) {
  const Stream s = make_stream();
  const ModelConfig c = engine_config();
  AdaptiveSTNetwork net(c, 4);
  randomise_adapter(net, 4);
  const auto trad = checksum_of(net.traditional_parameters());
  OnlineConfig cfg = online_config(30, 4);
  cfg.strategy.update_scope = UpdateScope::Full;
  OnlineEngine engine(net, s.syn.data.adjacency, s.stats, cfg);
  dost::EpisodicBatch batch;
  batch.entries.push_back(window_entry(s.syn.data.frame, 3, c));
  engine.update_on(batch);
  EXPECT_NE(checksum_of(net.traditional_parameters()), trad);
}

TEST(SmuUpdate, ExactPredictionGivesZeroLossAndNoChange) {
  const Stream s = make_stream();
  const ModelConfig c = engine_config();
  AdaptiveSTNetwork net(c, 5);
  randomise_adapter(net, 5);
  MemoryEntry e = window_entry(s.syn.data.frame, 10, c);
  const NormStats identity = NormStats::identity(1);
  const Tensor pred = net.predict(dost::to_model_layout(e.x, identity), s.syn.data.adjacency);
  e.y = dost::swap_leading_axes(pred);
  const auto before = net.snapshot();
  OnlineConfig cfg = online_config(30, 4);
  cfg.optimizer.weight_decay = 0.0;
  OnlineEngine engine(net, s.syn.data.adjacency, identity, cfg);
  const auto res = engine.update_on(dost::EpisodicBatch{{e}});
  ASSERT_TRUE(res.loss.has_value());
  EXPECT_EQ(*res.loss, 0.0);
  const auto after = net.snapshot();
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_TRUE(dost::bitwise_equal(before[i], after[i]));
}

TEST(SmuUpdate, OneStepDescendsOnItsBatch) {
  const Stream s = make_stream();
  const ModelConfig c = engine_config();
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    AdaptiveSTNetwork net(c, seed);
    randomise_adapter(net, seed);
    dost::EpisodicBatch batch;
    for (std::size_t i = 0; i < 4; ++i) batch.entries.push_back(window_entry(s.syn.data.frame, 7 * i + seed, c));
    const auto prepared = dost::prepare_all(batch.entries, s.stats);
    const double before = dost::evaluate_mae(net, s.syn.data.adjacency, prepared);
    OnlineEngine engine(net, s.syn.data.adjacency, s.stats, online_config(40, 4));
    const auto res = engine.update_on(batch);
    EXPECT_NEAR(*res.loss, before, 1e-12);
    EXPECT_LT(dost::evaluate_mae(net, s.syn.data.adjacency, prepared), before) << "seed " << seed;
  }
}

TEST(SmuUpdate, EmptyBatchIsNoop) {
  const Stream s = make_stream();
  AdaptiveSTNetwork net(engine_config(), 1);
  OnlineEngine engine(net, s.syn.data.adjacency, s.stats, online_config(30, 4));
  const auto res = engine.update_on({});
  EXPECT_FALSE(res.loss.has_value());
  EXPECT_EQ(res.forwards, 0u);
}

namespace {

struct CycleRun {
  std::vector<dost::StepRecord> records;
  std::vector<std::optional<Tensor>> forecasts;
};

// Drives an engine from the first online step to `end` after priming with the
// L+H-1 rows that precede it and seeding with earlier windows.
CycleRun drive(OnlineEngine& engine, const dost::SeriesFrame& f, std::int64_t start, std::int64_t end,
               const std::function<void(std::int64_t, const dost::StepOutput&)>& inspect = {}) {
  const auto& c = engine.network().config();
  const auto span = static_cast<std::int64_t>(c.lookback + c.horizon - 1);
  engine.seed_memory(dost::make_windows(f, {0, static_cast<std::size_t>(start)}, c.lookback, c.horizon));
  for (std::int64_t t = start - span; t < start; ++t) engine.prime(t, f.row(static_cast<std::size_t>(t)));
  CycleRun run;
  for (std::int64_t t = start; t < end; ++t) {
    auto out = engine.step(t, f.row(static_cast<std::size_t>(t)));
    if (inspect) inspect(t, out);
    run.records.push_back(out.record);
    run.forecasts.push_back(out.forecast);
  }
  return run;
}

}  // namespace

TEST(OnlineStep, CounterTableOverTwoCycles) {
  const Stream s = make_stream();
  const ModelConfig c = engine_config();
  AdaptiveSTNetwork net(c, 6);
  const std::int64_t start = 30, awake = 6;
  const std::size_t me = 4;
  OnlineEngine engine(net, s.syn.data.adjacency, s.stats, online_config(start, awake, 16, me));
  std::size_t awake_steps = 0, hib_steps = 0;
  drive(engine, s.syn.data.frame, start, start + 3 * 2 * awake, [&](std::int64_t, const dost::StepOutput& out) {
    ASSERT_TRUE(out.forecast.has_value());
    const auto& r = out.record;
    if (r.phase == Phase::Hibernate) {
      ++hib_steps;
      EXPECT_EQ(r.forward_count, 1u);
      EXPECT_EQ(r.backward_count, 0u);
      EXPECT_FALSE(r.loss.has_value());
    } else {
      ++awake_steps;
      ASSERT_GE(engine.memory().size(), me);
      EXPECT_EQ(r.forward_count, me + 1);
      EXPECT_EQ(r.backward_count, 1u);
      EXPECT_TRUE(r.loss.has_value());
    }
  });
  EXPECT_EQ(awake_steps, 18u);
  EXPECT_EQ(hib_steps, 18u);
}

TEST(OnlineStep, SmurAndErAddTheLatestEntry) {
  const Stream s = make_stream();
  const ModelConfig c = engine_config();
  for (MemoryMode mode : {MemoryMode::Smur, MemoryMode::Er}) {
    AdaptiveSTNetwork net(c, 6);
    OnlineConfig cfg = online_config(30, 6, 16, 4);
    cfg.strategy.memory_mode = mode;
    OnlineEngine engine(net, s.syn.data.adjacency, s.stats, cfg);
    const auto run = drive(engine, s.syn.data.frame, 30, 36);
    for (const auto& r : run.records) EXPECT_EQ(r.forward_count, 4u + 1u + 1u) << dost::to_string(mode);
  }
}

TEST(OnlineStep, WithoutMemoryOnlyTheLatestEntryTrains) {
  const Stream s = make_stream();
  AdaptiveSTNetwork net(engine_config(), 6);
  OnlineConfig cfg = online_config(30, 6);
  cfg.strategy.memory_mode = MemoryMode::None;
  OnlineEngine engine(net, s.syn.data.adjacency, s.stats, cfg);
  for (const auto& r : drive(engine, s.syn.data.frame, 30, 42).records) {
    if (r.phase == Phase::Hibernate) continue;
    EXPECT_EQ(r.forward_count, 2u);
    EXPECT_EQ(r.backward_count, 1u);
  }
}

TEST(OnlineStep, NoneScopeNeverUpdates) {
  const Stream s = make_stream();
  AdaptiveSTNetwork net(engine_config(), 6);
  randomise_adapter(net, 6);
  OnlineConfig cfg = online_config(30, 6);
  cfg.strategy.update_scope = UpdateScope::None;
  OnlineEngine engine(net, s.syn.data.adjacency, s.stats, cfg);
  const auto before = checksum_of(net.all_parameters());
  for (const auto& r : drive(engine, s.syn.data.frame, 30, 50).records) {
    EXPECT_EQ(r.backward_count, 0u);
    EXPECT_EQ(r.forward_count, 1u);
  }
  EXPECT_EQ(checksum_of(net.all_parameters()), before);
}

TEST(OnlineStep, HibernateDisabledIsAlwaysAwake) {
  const Stream s = make_stream();
  AdaptiveSTNetwork net(engine_config(), 6);
  OnlineConfig cfg = online_config(30, 4);
  cfg.strategy.hibernate_enabled = false;
  OnlineEngine engine(net, s.syn.data.adjacency, s.stats, cfg);
  for (const auto& r : drive(engine, s.syn.data.frame, 30, 46).records) {
    EXPECT_EQ(r.phase, Phase::Awake);
    EXPECT_EQ(r.backward_count, 1u);
  }
}

TEST(OnlineStep, FreezeAndHibernateContracts) {
  const Stream s = make_stream();
  const ModelConfig c = engine_config();
  AdaptiveSTNetwork net(c, 7);
  randomise_adapter(net, 7);
  const std::int64_t start = 30, awake = 5;
  OnlineEngine engine(net, s.syn.data.adjacency, s.stats, online_config(start, awake));
  const auto trad = checksum_of(net.traditional_parameters());
  std::optional<std::uint64_t> hib_sum;
  std::size_t hib_checks = 0, adapter_changes = 0;
  std::uint64_t previous = checksum_of(net.adapter_parameters());
  drive(engine, s.syn.data.frame, start, start + 3 * 2 * awake, [&](std::int64_t, const dost::StepOutput& out) {
    EXPECT_EQ(checksum_of(net.traditional_parameters()), trad);
    const auto now = checksum_of(net.adapter_parameters());
    adapter_changes += now != previous;
    previous = now;
    if (out.record.phase == Phase::Hibernate) {
      if (hib_sum) {
        EXPECT_EQ(now, *hib_sum);
        ++hib_checks;
      }
      hib_sum = now;
    } else {
      hib_sum.reset();
    }
  });
  EXPECT_EQ(hib_checks, 3u * (awake - 1));
  EXPECT_EQ(adapter_changes, 3u * awake);
}

TEST(OnlineStep, MemoryOnlyHoldsPostResetSamples) {
  const Stream s = make_stream();
  const ModelConfig c = engine_config();
  AdaptiveSTNetwork net(c, 8);
  OnlineEngine engine(net, s.syn.data.adjacency, s.stats, online_config(30, 5));
  std::size_t resets = 0;
  drive(engine, s.syn.data.frame, 30, 70, [&](std::int64_t t, const dost::StepOutput&) {
    if (!engine.last_reset()) return;
    resets += *engine.last_reset() == t;
    for (const auto& e : engine.memory().slots())
      EXPECT_GE(e.origin_time + static_cast<std::int64_t>(c.horizon), *engine.last_reset());
  });
  EXPECT_EQ(resets, 4u);
}

TEST(OnlineStep, FrozenStrategyMatchesOfflinePrediction) {
  const Stream s = make_stream();
  const ModelConfig c = engine_config();
  AdaptiveSTNetwork net(c, 9);
  randomise_adapter(net, 9);
  AdaptiveSTNetwork offline = net;
  OnlineConfig cfg = online_config(30, 4);
  cfg.strategy = dost::StrategyConfig{UpdateScope::None, true, true, MemoryMode::None, std::nullopt};
  OnlineEngine engine(net, s.syn.data.adjacency, s.stats, cfg);
  const auto& f = s.syn.data.frame;
  const auto run = drive(engine, f, 30, 90);
  for (std::size_t i = 0; i < run.forecasts.size(); ++i) {
    const std::size_t t = 30 + i;
    const Tensor input = dost::to_model_layout(f.rows(t + 1 - c.lookback, c.lookback), s.stats);
    const Tensor expected = s.stats.denormalize(offline.predict(input, s.syn.data.adjacency));
    ASSERT_TRUE(run.forecasts[i].has_value());
    EXPECT_TRUE(dost::bitwise_equal(*run.forecasts[i], expected)) << "t=" << t;
  }
}

TEST(OnlineStep, OutOfOrderIsError) {
  const Stream s = make_stream();
  AdaptiveSTNetwork net(engine_config(), 1);
  OnlineEngine engine(net, s.syn.data.adjacency, s.stats, online_config(30, 4));
  engine.step(30, s.syn.data.frame.row(30));
  EXPECT_THROW(engine.step(32, s.syn.data.frame.row(32)), dost::ConfigError);
  EXPECT_THROW(engine.step(30, s.syn.data.frame.row(30)), dost::ConfigError);
  EXPECT_THROW(engine.prime(31, s.syn.data.frame.row(31)), dost::ConfigError);
}

TEST(OnlineStep, ForecastAbsentUntilLookbackFilled) {
  const Stream s = make_stream();
  const ModelConfig c = engine_config();
  AdaptiveSTNetwork net(c, 1);
  OnlineEngine engine(net, s.syn.data.adjacency, s.stats, online_config(30, 4));
  for (std::int64_t t = 30; t < 30 + static_cast<std::int64_t>(c.lookback) + 2; ++t) {
    const auto out = engine.step(t, s.syn.data.frame.row(static_cast<std::size_t>(t)));
    const bool available = t - 30 + 1 >= static_cast<std::int64_t>(c.lookback);
    EXPECT_EQ(out.forecast.has_value(), available) << "t=" << t;
    EXPECT_EQ(out.record.forward_count, available ? 1u : 0u);
  }
}

TEST(OnlineStep, ForecastIsCausal) {
  const Stream s = make_stream();
  const ModelConfig c = engine_config();
  const std::int64_t start = 30, cut = 47;
  dost::SeriesFrame altered = s.syn.data.frame;
  for (std::size_t t = cut + 1; t < altered.steps(); ++t)
    for (std::size_t n = 0; n < c.locations; ++n) altered.values.at(t, n, 0) *= 3.0;

  AdaptiveSTNetwork a(c, 10), b(c, 10);
  OnlineEngine ea(a, s.syn.data.adjacency, s.stats, online_config(start, 5));
  OnlineEngine eb(b, s.syn.data.adjacency, s.stats, online_config(start, 5));
  const auto ra = drive(ea, s.syn.data.frame, start, 70);
  const auto rb = drive(eb, altered, start, 70);
  bool later_differs = false;
  for (std::size_t i = 0; i < ra.forecasts.size(); ++i) {
    const bool same = dost::bitwise_equal(*ra.forecasts[i], *rb.forecasts[i]);
    if (start + static_cast<std::int64_t>(i) <= cut) {
      EXPECT_TRUE(same) << "step " << start + i;
    }
    later_differs = later_differs || !same;
  }
  EXPECT_TRUE(later_differs);
}

TEST(OnlineStep, SameSeedIsDeterministic) {
  const Stream s = make_stream();
  const ModelConfig c = engine_config();
  AdaptiveSTNetwork a(c, 11), b(c, 11);
  OnlineEngine ea(a, s.syn.data.adjacency, s.stats, online_config(30, 5));
  OnlineEngine eb(b, s.syn.data.adjacency, s.stats, online_config(30, 5));
  const auto ra = drive(ea, s.syn.data.frame, 30, 60);
  const auto rb = drive(eb, s.syn.data.frame, 30, 60);
  for (std::size_t i = 0; i < ra.forecasts.size(); ++i)
    EXPECT_TRUE(dost::bitwise_equal(*ra.forecasts[i], *rb.forecasts[i]));
}

TEST(DeriveSeed, StreamsDiffer) {
  EXPECT_NE(dost::derive_seed(7, 0), dost::derive_seed(7, 1));
  EXPECT_NE(dost::derive_seed(7, 0), dost::derive_seed(8, 0));
  EXPECT_EQ(dost::derive_seed(7, 3), dost::derive_seed(7, 3));
}
