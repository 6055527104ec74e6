#pragma once

// Forecast scoring: MAE / RMSE / WMAPE, the lazy prediction ledger that pairs
// each H-step forecast with its ground truth once observed, and the report
// that aggregates resolved pairs.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "dost/errors.hpp"
#include "dost/io.hpp"
#include "dost/scheduler.hpp"
#include "dost/tensor.hpp"

namespace dost {

namespace detail {
inline void check_pair(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) {
    throw DimensionError("metric inputs differ in length: " + std::to_string(pred.size()) + " vs " +
                         std::to_string(truth.size()));
  }
  if (pred.empty()) throw DimensionError("metric inputs are empty");
}
}  // namespace detail

inline double mae(std::span<const double> pred, std::span<const double> truth) {
  detail::check_pair(pred, truth);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(truth[i] - pred[i]);
  return s / static_cast<double>(pred.size());
}

inline double rmse(std::span<const double> pred, std::span<const double> truth) {
  detail::check_pair(pred, truth);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (truth[i] - pred[i]) * (truth[i] - pred[i]);
  return std::sqrt(s / static_cast<double>(pred.size()));
}

/// Σ|y - ŷ| / Σ|y|; absent when the truth is identically zero.
inline std::optional<double> wmape(std::span<const double> pred, std::span<const double> truth) {
  detail::check_pair(pred, truth);
  double err = 0.0, vol = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    err += std::abs(truth[i] - pred[i]);
    vol += std::abs(truth[i]);
  }
  if (!(vol > 0.0)) return std::nullopt;
  return err / vol;
}

struct ErrorAccumulator {
  double abs_sum = 0.0;
  double sq_sum = 0.0;
  double truth_abs_sum = 0.0;
  std::size_t count = 0;

  void add(double pred, double truth) {
    const double e = truth - pred;
    abs_sum += std::abs(e);
    sq_sum += e * e;
    truth_abs_sum += std::abs(truth);
    ++count;
  }

  double mae() const { return count ? abs_sum / static_cast<double>(count) : 0.0; }
  double rmse() const { return count ? std::sqrt(sq_sum / static_cast<double>(count)) : 0.0; }
  std::optional<double> wmape() const {
    if (!(truth_abs_sum > 0.0)) return std::nullopt;
    return abs_sum / truth_abs_sum;
  }
};

/// A forecast issued at `step` with the H observations that followed it.
/// Both tensors are [N×H×d] in original units.
struct ResolvedPair {
  std::int64_t step = 0;
  Phase phase = Phase::Awake;
  Tensor prediction;
  Tensor truth;
};

class PredictionLedger {
 public:
  explicit PredictionLedger(std::size_t horizon) : horizon_(horizon) {
    if (horizon == 0) throw ConfigError("ledger horizon must be positive");
  }

  std::size_t horizon() const { return horizon_; }
  std::size_t pending() const { return pending_.size(); }
  const std::vector<ResolvedPair>& resolved() const { return resolved_; }

  void issue(std::int64_t step, Phase phase, Tensor prediction) {
    if (prediction.rank() != 3 || prediction.dim(1) != horizon_) {
      throw DimensionError("ledger expects [N×" + std::to_string(horizon_) + "×d] predictions, got " +
                           shape_string(prediction.shape()));
    }
    if (pending_.count(step) != 0) throw ConfigError("prediction for step " + std::to_string(step) + " already issued");
    Tensor truth(prediction.shape());
    pending_.emplace(step, Pending{phase, std::move(prediction), std::move(truth)});
  }

  /// Feeds the observation X_t; returns the pairs whose horizon completed.
  std::vector<ResolvedPair> observe(std::int64_t t, const Tensor& row) {
    std::vector<ResolvedPair> done;
    const auto h_len = static_cast<std::int64_t>(horizon_);
    for (auto it = pending_.lower_bound(t - h_len); it != pending_.end() && it->first < t;) {
      const std::int64_t h = t - it->first - 1;
      Pending& p = it->second;
      const std::size_t locations = p.truth.dim(0), features = p.truth.dim(2);
      if (row.shape() != Shape{locations, features}) {
        throw DimensionError("ledger observation has shape " + shape_string(row.shape()));
      }
      for (std::size_t n = 0; n < locations; ++n)
        for (std::size_t f = 0; f < features; ++f)
          p.truth.at(n, static_cast<std::size_t>(h), f) = row.at(n, f);
      if (h == h_len - 1) {
        done.push_back(ResolvedPair{it->first, p.phase, std::move(p.prediction), std::move(p.truth)});
        it = pending_.erase(it);
      } else {
        ++it;
      }
    }
    for (const auto& r : done) resolved_.push_back(r);
    return done;
  }

 private:
  struct Pending {
    Phase phase;
    Tensor prediction;
    Tensor truth;
  };

  std::size_t horizon_;
  std::map<std::int64_t, Pending> pending_;
  std::vector<ResolvedPair> resolved_;
};

/// Aggregates over resolved pairs in original units. Per-horizon figures
/// average over every location and feature.
struct MetricReport {
  std::size_t horizon = 0;
  ErrorAccumulator overall;
  std::vector<ErrorAccumulator> per_horizon;
  std::array<ErrorAccumulator, 2> per_phase;  // indexed by Phase
  std::size_t pairs = 0;
  std::size_t unresolved = 0;

  explicit MetricReport(std::size_t h = 0) : horizon(h), per_horizon(h) {}

  void add(const ResolvedPair& pair) {
    const Tensor& p = pair.prediction;
    const Tensor& y = pair.truth;
    if (p.shape() != y.shape() || p.dim(1) != horizon) throw DimensionError("report: pair shape mismatch");
    auto& phase_acc = per_phase[static_cast<std::size_t>(pair.phase)];
    for (std::size_t n = 0; n < p.dim(0); ++n)
      for (std::size_t h = 0; h < horizon; ++h)
        for (std::size_t f = 0; f < p.dim(2); ++f) {
          const double pv = p.at(n, h, f), yv = y.at(n, h, f);
          overall.add(pv, yv);
          per_horizon[h].add(pv, yv);
          phase_acc.add(pv, yv);
        }
    ++pairs;
  }

  static MetricReport from_pairs(const std::vector<ResolvedPair>& pairs, std::size_t horizon, std::size_t unresolved) {
    MetricReport r(horizon);
    for (const auto& p : pairs) r.add(p);
    r.unresolved = unresolved;
    return r;
  }
};

inline std::string optional_field(const std::optional<double>& v) { return v ? io::format_double(*v) : ""; }

/// Line-delimited `step,phase,horizon,mae,rmse,wmape` records (one per pair
/// and horizon, horizons 1-based) followed by a summary block.
inline void write_metrics(std::ostream& out, const std::vector<ResolvedPair>& pairs, const MetricReport& report) {
  out << "step,phase,horizon,mae,rmse,wmape\n";
  for (const auto& pair : pairs) {
    const std::size_t locations = pair.prediction.dim(0), features = pair.prediction.dim(2);
    for (std::size_t h = 0; h < report.horizon; ++h) {
      ErrorAccumulator acc;
      for (std::size_t n = 0; n < locations; ++n)
        for (std::size_t f = 0; f < features; ++f) acc.add(pair.prediction.at(n, h, f), pair.truth.at(n, h, f));
      out << pair.step << ',' << phase_name(pair.phase) << ',' << (h + 1) << ',' << io::format_double(acc.mae())
          << ',' << io::format_double(acc.rmse()) << ',' << optional_field(acc.wmape()) << '\n';
    }
  }
  out << "# summary\n";
  out << "scope,phase,horizon,mae,rmse,wmape,count\n";
  auto line = [&out](const char* scope, const std::string& phase, const std::string& horizon,
                     const ErrorAccumulator& a) {
    out << scope << ',' << phase << ',' << horizon << ',' << io::format_double(a.mae()) << ','
        << io::format_double(a.rmse()) << ',' << optional_field(a.wmape()) << ',' << a.count << '\n';
  };
  line("overall", "all", "all", report.overall);
  line("phase", "awake", "all", report.per_phase[0]);
  line("phase", "hibernate", "all", report.per_phase[1]);
  for (std::size_t h = 0; h < report.horizon; ++h) line("horizon", "all", std::to_string(h + 1), report.per_horizon[h]);
  out << "pairs," << report.pairs << '\n';
  out << "unresolved," << report.unresolved << '\n';
}

inline void write_summary(std::ostream& out, const MetricReport& r) {
  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return std::string(buf);
  };
  auto wm = [&fmt](const std::optional<double>& v) { return v ? fmt(*v) : std::string("n/a"); };
  out << "pairs scored: " << r.pairs << " (unresolved: " << r.unresolved << ")\n";
  out << "overall    MAE " << fmt(r.overall.mae()) << "  RMSE " << fmt(r.overall.rmse()) << "  WMAPE "
      << wm(r.overall.wmape()) << '\n';
  out << "awake      MAE " << fmt(r.per_phase[0].mae()) << "  RMSE " << fmt(r.per_phase[0].rmse()) << '\n';
  out << "hibernate  MAE " << fmt(r.per_phase[1].mae()) << "  RMSE " << fmt(r.per_phase[1].rmse()) << '\n';
}

// Ledger file: header line
//   # dost-ledger locations=<N> horizon=<H> features=<d> unresolved=<k>
// then one line per resolved pair: step,phase,<N·H·d predictions>,<N·H·d truths>
inline void save_ledger(const std::filesystem::path& path, const std::vector<ResolvedPair>& pairs,
                        std::size_t locations, std::size_t horizon, std::size_t features, std::size_t unresolved) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write ledger " + path.string());
  out << "# dost-ledger locations=" << locations << " horizon=" << horizon << " features=" << features
      << " unresolved=" << unresolved << '\n';
  for (const auto& p : pairs) {
    out << p.step << ',' << phase_name(p.phase);
    for (double v : p.prediction.data()) out << ',' << io::format_double(v);
    for (double v : p.truth.data()) out << ',' << io::format_double(v);
    out << '\n';
  }
}

struct LedgerFile {
  std::size_t locations = 0, horizon = 0, features = 0, unresolved = 0;
  std::vector<ResolvedPair> pairs;
};

inline LedgerFile load_ledger(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingFileError("cannot open ledger " + path.string());
  std::string line = io::expect_line(in, "ledger header");
  const std::string tag = "# dost-ledger ";
  if (line.rfind(tag, 0) != 0) throw ParseError("ledger: bad header");
  io::KeyValues kv;
  for (const auto& tok : io::split(line.substr(tag.size()), ' ')) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw ParseError("ledger: bad header token '" + tok + "'");
    kv.set(tok.substr(0, eq), tok.substr(eq + 1));
  }
  LedgerFile lf;
  lf.locations = kv.size_or("locations", 0);
  lf.horizon = kv.size_or("horizon", 0);
  lf.features = kv.size_or("features", 0);
  lf.unresolved = kv.size_or("unresolved", 0);
  if (lf.locations == 0 || lf.horizon == 0 || lf.features == 0) throw ParseError("ledger: bad dimensions");
  const std::size_t k = lf.locations * lf.horizon * lf.features;
  const Shape shape{lf.locations, lf.horizon, lf.features};
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (io::trim(line).empty()) continue;
    auto cells = io::split(io::trim(line), ',');
    if (cells.size() != 2 + 2 * k) {
      throw ParseError("ledger row " + std::to_string(row) + ": expected " + std::to_string(2 + 2 * k) + " columns");
    }
    ResolvedPair p;
    p.step = io::parse_int(cells[0], "ledger row " + std::to_string(row) + " column 1");
    if (cells[1] == "awake") {
      p.phase = Phase::Awake;
    } else if (cells[1] == "hibernate") {
      p.phase = Phase::Hibernate;
    } else {
      throw ParseError("ledger row " + std::to_string(row) + " column 2: unknown phase '" + cells[1] + "'");
    }
    std::vector<double> pred(k), truth(k);
    for (std::size_t i = 0; i < k; ++i) {
      const std::string ctx = "ledger row " + std::to_string(row) + " column ";
      pred[i] = io::parse_double(cells[2 + i], ctx + std::to_string(3 + i));
      truth[i] = io::parse_double(cells[2 + k + i], ctx + std::to_string(3 + k + i));
    }
    p.prediction = Tensor(shape, std::move(pred));
    p.truth = Tensor(shape, std::move(truth));
    lf.pairs.push_back(std::move(p));
  }
  return lf;
}

}  // namespace dost
