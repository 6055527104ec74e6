#pragma once

// Training machinery: AdamW, early-stopped warm-up training, and the online
// engine that runs one awake/hibernate step per incoming observation.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dost/autodiff.hpp"
#include "dost/data.hpp"
#include "dost/errors.hpp"
#include "dost/memory.hpp"
#include "dost/model.hpp"
#include "dost/scheduler.hpp"
#include "dost/tensor.hpp"

namespace dost {

/// splitmix64 finaliser; derives independent seeds from one run seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

struct AdamWOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-4;
};

/// Adam with decoupled weight decay:
///   θ ← θ - lr·(m̂/(√v̂ + ε) + wd·θ)
class AdamW {
 public:
  AdamW(std::vector<Parameter*> params, AdamWOptions opts) : params_(std::move(params)), opts_(opts) {
    for (auto* p : params_) {
      first_.emplace_back(p->value.shape());
      second_.emplace_back(p->value.shape());
    }
  }

  const AdamWOptions& options() const { return opts_; }
  std::uint64_t steps() const { return step_; }
  const std::vector<Parameter*>& parameters() const { return params_; }
  const Tensor& first_moment(std::size_t i) const { return first_.at(i); }
  const Tensor& second_moment(std::size_t i) const { return second_.at(i); }

  /// Applies one update and zeroes the gradients. A non-finite gradient
  /// rejects the whole step and leaves parameters and moments untouched.
  void step() {
    for (auto* p : params_) {
      if (!p->grad.all_finite()) throw NumericError("non-finite gradient in " + p->name + "; step rejected");
    }
    ++step_;
    const double t = static_cast<double>(step_);
    const double c1 = 1.0 - std::pow(opts_.beta1, t);
    const double c2 = 1.0 - std::pow(opts_.beta2, t);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Parameter& p = *params_[i];
      double* m = first_[i].raw();
      double* v = second_[i].raw();
      double* w = p.value.raw();
      const double* g = p.grad.raw();
      for (std::size_t k = 0; k < p.value.size(); ++k) {
        m[k] = opts_.beta1 * m[k] + (1.0 - opts_.beta1) * g[k];
        v[k] = opts_.beta2 * v[k] + (1.0 - opts_.beta2) * g[k] * g[k];
        const double mhat = m[k] / c1;
        const double vhat = v[k] / c2;
        w[k] -= opts_.learning_rate * (mhat / (std::sqrt(vhat) + opts_.epsilon) + opts_.weight_decay * w[k]);
      }
      p.zero_grad();
    }
  }

 private:
  std::vector<Parameter*> params_;
  AdamWOptions opts_;
  std::vector<Tensor> first_, second_;
  std::uint64_t step_ = 0;
};

/// Stops after `patience` consecutive epochs without a strict improvement.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  /// Records an epoch's validation loss; true when it is a new best.
  bool record(double loss) {
    ++epoch_;
    if (epoch_ == 1 || loss < best_) {
      best_ = loss;
      best_epoch_ = epoch_;
      stale_ = 0;
      return true;
    }
    ++stale_;
    return false;
  }

  bool should_stop() const { return epoch_ > 0 && stale_ >= patience_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best() const { return best_; }
  std::size_t epochs() const { return epoch_; }

 private:
  std::size_t patience_;
  std::size_t epoch_ = 0;
  std::size_t best_epoch_ = 0;
  std::size_t stale_ = 0;
  double best_ = 0.0;
};

struct TrainerConfig {
  double learning_rate = 1e-3;
  std::size_t max_epochs = 150;
  std::size_t patience = 10;
  std::size_t batch_size = 32;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;

  AdamWOptions adamw() const { return AdamWOptions{learning_rate, beta1, beta2, epsilon, weight_decay}; }
};

/// Model-ready sample: normalised input [N×L×d] and target [N×H×d].
struct PreparedSample {
  Tensor input;
  Tensor target;
};

inline Tensor to_model_layout(const Tensor& time_major, const NormStats& stats) {
  return swap_leading_axes(stats.normalize(time_major));
}

inline PreparedSample prepare(const MemoryEntry& e, const NormStats& stats) {
  return PreparedSample{to_model_layout(e.x, stats), to_model_layout(e.y, stats)};
}

inline std::vector<PreparedSample> prepare_all(const std::vector<MemoryEntry>& entries, const NormStats& stats) {
  std::vector<PreparedSample> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(prepare(e, stats));
  return out;
}

/// Records the mean per-sample MAE of `batch` on `tape`. Returns the loss Var.
inline Var batch_mae(Tape& tape, AdaptiveSTNetwork& net, const AdjacencyMatrix& adj,
                     const std::vector<const PreparedSample*>& batch) {
  Var total;
  for (const auto* s : batch) {
    Var loss = ad::mae_loss(net.forward(tape, s->input, adj), s->target);
    total = total.valid() ? ad::add(total, loss) : loss;
  }
  return ad::scale(total, 1.0 / static_cast<double>(batch.size()));
}

inline double evaluate_mae(AdaptiveSTNetwork& net, const AdjacencyMatrix& adj,
                           const std::vector<PreparedSample>& samples) {
  double total = 0.0;
  for (const auto& s : samples) {
    Tensor pred = net.predict(s.input, adj);
    double err = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) err += std::abs(pred[i] - s.target[i]);
    total += err / static_cast<double>(pred.size());
  }
  return total / static_cast<double>(samples.size());
}

struct WarmupReport {
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  double best_validation = 0.0;
  std::vector<double> train_history;
  std::vector<double> validation_history;
};

/// Mini-batch MAE training of every active parameter with a shuffled training
/// set and unshuffled validation; restores the best-validation snapshot.
/// Without validation samples the training loss drives model selection.
inline WarmupReport warmup_train(AdaptiveSTNetwork& net, const AdjacencyMatrix& adj,
                                 const std::vector<PreparedSample>& train, const std::vector<PreparedSample>& val,
                                 const TrainerConfig& cfg) {
  if (train.empty()) throw ConfigError("warm-up training set is empty");
  if (cfg.batch_size == 0) throw ConfigError("batch_size must be positive");
  const bool adapters = net.config().use_adapter;
  net.set_trainable(true, adapters);
  std::vector<Parameter*> active;
  for (auto* p : net.all_parameters())
    if (p->trainable) active.push_back(p);
  AdamW opt(active, cfg.adamw());
  net.zero_grad();

  std::mt19937_64 rng(derive_seed(cfg.seed, 1));
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  EarlyStopping stopper(cfg.patience);
  std::vector<Tensor> best = net.snapshot();
  WarmupReport report;
  Tape tape;
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      std::vector<const PreparedSample*> batch;
      for (std::size_t i = start; i < stop; ++i) batch.push_back(&train[order[i]]);
      tape.reset();
      Var loss = batch_mae(tape, net, adj, batch);
      tape.backward(loss);
      opt.step();
      epoch_loss += loss.value().item() * static_cast<double>(batch.size());
    }
    epoch_loss /= static_cast<double>(train.size());
    const double score = val.empty() ? epoch_loss : evaluate_mae(net, adj, val);
    report.train_history.push_back(epoch_loss);
    report.validation_history.push_back(score);
    if (stopper.record(score)) best = net.snapshot();
    if (stopper.should_stop()) break;
  }
  net.restore(best);
  report.epochs_run = stopper.epochs();
  report.best_epoch = stopper.best_epoch();
  report.best_validation = stopper.best();
  return report;
}

enum class UpdateScope { Adapter, Full, None };
enum class MemoryMode { Smu, Smur, Er, None };

inline const char* to_string(UpdateScope s) {
  switch (s) {
    case UpdateScope::Adapter: return "adapter";
    case UpdateScope::Full: return "full";
    case UpdateScope::None: return "none";
  }
  return "?";
}

inline const char* to_string(MemoryMode m) {
  switch (m) {
    case MemoryMode::Smu: return "smu";
    case MemoryMode::Smur: return "smur";
    case MemoryMode::Er: return "er";
    case MemoryMode::None: return "none";
  }
  return "?";
}

/// Online learning behaviour. The default is the full method: adapter-only
/// updates, hibernation, buffer reset at each hibernate start, and episodic
/// batches drawn from the streaming buffer.
struct StrategyConfig {
  UpdateScope update_scope = UpdateScope::Adapter;
  bool hibernate_enabled = true;
  bool reset_enabled = true;
  MemoryMode memory_mode = MemoryMode::Smu;
  std::optional<double> lambda;

  friend bool operator==(const StrategyConfig&, const StrategyConfig&) = default;
};

struct OnlineConfig {
  std::size_t memory_slots = 1000;  // M
  std::size_t episodic_size = 8;    // M_e
  AHConfig schedule;
  StrategyConfig strategy;
  AdamWOptions optimizer;
  std::uint64_t seed = 0;
};

struct StepRecord {
  std::int64_t step = 0;
  Phase phase = Phase::Awake;
  std::size_t forward_count = 0;
  std::size_t backward_count = 0;
  std::optional<double> loss;
  double wall_seconds = 0.0;
};

struct StepOutput {
  std::optional<Tensor> forecast;  // [N×H×d], original units
  StepRecord record;
};

/// Runs the online phase one observation at a time:
///   push into the placeholder, reset the buffer at hibernate starts, offer the
///   newly completed sample, update on an episodic batch while awake, forecast.
class OnlineEngine {
 public:
  OnlineEngine(AdaptiveSTNetwork& net, AdjacencyMatrix adj, NormStats stats, OnlineConfig cfg)
      : net_(net),
        adj_(std::move(adj)),
        stats_(std::move(stats)),
        cfg_(cfg),
        clock_(effective_schedule(cfg)),
        smb_(cfg.memory_slots),
        global_(cfg.memory_slots),
        rng_(derive_seed(cfg.seed, 2)),
        optimizer_(scope_parameters(net, cfg.strategy.update_scope), cfg.optimizer) {
    if (adj_.nodes() != net_.config().locations) throw DimensionError("adjacency size does not match the model");
  }

  const PhaseClock& clock() const { return clock_; }
  const StreamingMemoryBuffer& memory() const { return smb_; }
  const StreamingMemoryBuffer& global_memory() const { return global_; }
  const std::optional<MemoryPlaceholder>& placeholder() const { return mp_; }
  std::optional<std::int64_t> last_reset() const { return last_reset_; }
  const OnlineConfig& config() const { return cfg_; }
  AdaptiveSTNetwork& network() { return net_; }

  /// Offers validation samples to the streaming buffer in temporal order.
  void seed_memory(const std::vector<MemoryEntry>& samples) {
    for (const auto& e : samples) {
      smb_.offer(e, rng_);
      if (cfg_.strategy.memory_mode == MemoryMode::Er) global_.offer(e, rng_);
    }
  }

  /// Pushes a pre-online observation into the placeholder without offering
  /// anything to memory or updating the model.
  void prime(std::int64_t tau, const Tensor& row) {
    if (tau >= clock_.config().online_start) throw ConfigError("prime() is only for pre-online history");
    push(tau, row);
  }

  StepOutput step(std::int64_t tau, const Tensor& row) {
    const auto started = std::chrono::steady_clock::now();
    const Phase scheduled = clock_.phase_at(tau);
    push(tau, row);
    StepOutput out;
    StepRecord& rec = out.record;
    rec.step = tau;
    rec.phase = cfg_.strategy.hibernate_enabled ? scheduled : Phase::Awake;

    if (cfg_.strategy.reset_enabled && clock_.is_hibernate_start(tau)) {
      smb_.reset();
      last_reset_ = tau;
    }
    latest_ = mp_->extract();
    if (latest_) {
      smb_.offer(*latest_, rng_);
      if (cfg_.strategy.memory_mode == MemoryMode::Er) global_.offer(*latest_, rng_);
    }
    if (rec.phase == Phase::Awake && cfg_.strategy.update_scope != UpdateScope::None) {
      auto upd = update();
      rec.loss = upd.loss;
      rec.forward_count += upd.forwards;
      rec.backward_count += upd.backwards;
    }
    const std::size_t lookback = net_.config().lookback;
    if (mp_->size() >= lookback) {
      Tensor input = to_model_layout(mp_->latest(lookback), stats_);
      Tensor pred = net_.predict(input, adj_);
      if (!pred.all_finite()) throw NumericError("non-finite forecast at step " + std::to_string(tau));
      out.forecast = stats_.denormalize(pred);
      ++rec.forward_count;
    }
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return out;
  }

  struct UpdateResult {
    std::optional<double> loss;
    std::size_t forwards = 0;
    std::size_t backwards = 0;
  };

  /// One gradient step on an episodic batch; a no-op when the batch is empty.
  UpdateResult update() {
    EpisodicBatch batch;
    switch (cfg_.strategy.memory_mode) {
      case MemoryMode::Smu: batch = smb_.sample(cfg_.episodic_size, rng_); break;
      case MemoryMode::Smur: batch = smb_.sample(cfg_.episodic_size, rng_); break;
      case MemoryMode::Er: batch = global_.sample(cfg_.episodic_size, rng_); break;
      case MemoryMode::None: break;
    }
    if (cfg_.strategy.memory_mode != MemoryMode::Smu && latest_) batch.entries.push_back(*latest_);
    return update_on(batch);
  }

  UpdateResult update_on(const EpisodicBatch& batch) {
    UpdateResult res;
    if (batch.empty() || cfg_.strategy.update_scope == UpdateScope::None) return res;
    const bool full = cfg_.strategy.update_scope == UpdateScope::Full;
    net_.set_trainable(full, true);
    std::vector<PreparedSample> prepared;
    prepared.reserve(batch.size());
    for (const auto& e : batch.entries) prepared.push_back(prepare(e, stats_));
    std::vector<const PreparedSample*> ptrs;
    for (const auto& p : prepared) ptrs.push_back(&p);
    tape_.reset();
    Var loss = batch_mae(tape_, net_, adj_, ptrs);
    tape_.backward(loss);
    optimizer_.step();
    res.loss = loss.value().item();
    res.forwards = batch.size();
    res.backwards = 1;
    return res;
  }

 private:
  static AHConfig effective_schedule(const OnlineConfig& cfg) {
    AHConfig s = cfg.schedule;
    if (cfg.strategy.lambda) s.lambda = *cfg.strategy.lambda;
    return s;
  }

  static std::vector<Parameter*> scope_parameters(AdaptiveSTNetwork& net, UpdateScope scope) {
    switch (scope) {
      case UpdateScope::Adapter: return net.adapter_parameters();
      case UpdateScope::Full: return net.all_parameters();
      case UpdateScope::None: return {};
    }
    return {};
  }

  void push(std::int64_t tau, const Tensor& row) {
    if (!mp_) {
      const auto& c = net_.config();
      mp_.emplace(c.lookback, c.horizon, c.locations, c.features, tau);
    } else if (tau != mp_->current_time() + 1) {
      throw ConfigError("observation for step " + std::to_string(tau) + " arrived out of order (expected " +
                        std::to_string(mp_->current_time() + 1) + ")");
    }
    mp_->push(row);
  }

  AdaptiveSTNetwork& net_;
  AdjacencyMatrix adj_;
  NormStats stats_;
  OnlineConfig cfg_;
  PhaseClock clock_;
  StreamingMemoryBuffer smb_;
  StreamingMemoryBuffer global_;  // never reset; used by the ER strategies
  std::mt19937_64 rng_;
  AdamW optimizer_;
  std::optional<MemoryPlaceholder> mp_;
  std::optional<MemoryEntry> latest_;
  std::optional<std::int64_t> last_reset_;
  Tape tape_;
};

}  // namespace dost
