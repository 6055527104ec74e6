#pragma once

// Dataset I/O, phase splitting, z-score normalisation and the synthetic
// drifting-stream generator.
//
// On-disk dataset layout (one directory):
//   meta.txt       n_locations, n_features, interval_minutes, n_steps, feature_names
//   series.csv     header loc<i>_f<j> (location-major), then T rows of N·d values
//   adjacency.csv  N rows of N values, no header

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "dost/errors.hpp"
#include "dost/io.hpp"
#include "dost/memory.hpp"
#include "dost/model.hpp"
#include "dost/tensor.hpp"

namespace dost {

inline constexpr std::int64_t kMinutesPerWeek = 10080;
inline constexpr std::int64_t kMinutesPerDay = 1440;

struct DatasetMeta {
  std::size_t locations = 0;
  std::size_t features = 1;
  std::int64_t interval_minutes = 60;
  std::size_t steps = 0;
  std::vector<std::string> feature_names;

  std::int64_t intervals_per_week() const { return kMinutesPerWeek / interval_minutes; }
  std::int64_t intervals_per_day() const { return kMinutesPerDay / interval_minutes; }

  void validate() const {
    if (locations == 0 || features == 0) throw ParseError("meta: n_locations and n_features must be positive");
    if (interval_minutes <= 0 || kMinutesPerWeek % interval_minutes != 0) {
      throw ParseError("meta: interval_minutes must divide 10080");
    }
    if (feature_names.size() != features) throw ParseError("meta: feature_names count differs from n_features");
  }
};

/// values[t, n, f]
struct SeriesFrame {
  Tensor values;
  DatasetMeta meta;

  std::size_t steps() const { return values.dim(0); }

  /// Observation X_t as [N×d].
  Tensor row(std::size_t t) const {
    const std::size_t width = meta.locations * meta.features;
    Tensor out(Shape{meta.locations, meta.features});
    std::copy(values.raw() + t * width, values.raw() + (t + 1) * width, out.raw());
    return out;
  }

  /// Rows [begin, begin+count) as [count×N×d].
  Tensor rows(std::size_t begin, std::size_t count) const {
    const std::size_t width = meta.locations * meta.features;
    Tensor out(Shape{count, meta.locations, meta.features});
    std::copy(values.raw() + begin * width, values.raw() + (begin + count) * width, out.raw());
    return out;
  }
};

struct Dataset {
  SeriesFrame frame;
  AdjacencyMatrix adjacency;
};

struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  friend bool operator==(const IndexRange&, const IndexRange&) = default;
};

/// warm-up : online = 2 : 6, and within warm-up train : val = 4 : 1.
struct PhaseSplit {
  IndexRange warmup_train;
  IndexRange warmup_val;
  IndexRange online;
};

inline PhaseSplit split_phases(std::size_t steps) {
  if (steps < 8) throw ConfigError("series too short to split: need at least 8 steps, got " + std::to_string(steps));
  const std::size_t warmup = steps * 2 / 8;
  const std::size_t train = warmup * 4 / 5;
  return PhaseSplit{{0, train}, {train, warmup}, {warmup, steps}};
}

/// Per-feature z-score statistics.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> stdev;

  /// Statistics over rows [range.begin, range.end) only.
  static NormStats compute(const SeriesFrame& frame, IndexRange range, std::ostream* warn = &std::cerr) {
    const std::size_t n = frame.meta.locations, d = frame.meta.features;
    if (range.size() == 0) throw ConfigError("normalisation range is empty");
    NormStats s{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
    const double count = static_cast<double>(range.size() * n);
    for (std::size_t f = 0; f < d; ++f) {
      double sum = 0.0;
      for (std::size_t t = range.begin; t < range.end; ++t)
        for (std::size_t i = 0; i < n; ++i) sum += frame.values.at(t, i, f);
      const double mu = sum / count;
      double sq = 0.0;
      for (std::size_t t = range.begin; t < range.end; ++t)
        for (std::size_t i = 0; i < n; ++i) {
          const double dv = frame.values.at(t, i, f) - mu;
          sq += dv * dv;
        }
      double sd = std::sqrt(sq / count);
      if (!(sd > 0.0)) {
        if (warn) *warn << "warning: feature " << f << " is constant on the training range; using unit scale\n";
        sd = 1.0;
      }
      s.mean[f] = mu;
      s.stdev[f] = sd;
    }
    return s;
  }

  static NormStats identity(std::size_t features) {
    return NormStats{std::vector<double>(features, 0.0), std::vector<double>(features, 1.0)};
  }

  /// Applies (x - μ)/s along the trailing (feature) axis.
  Tensor normalize(const Tensor& x) const {
    check(x);
    Tensor out = x;
    const std::size_t d = mean.size();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (out[i] - mean[i % d]) / stdev[i % d];
    return out;
  }

  Tensor denormalize(const Tensor& z) const {
    check(z);
    Tensor out = z;
    const std::size_t d = mean.size();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] * stdev[i % d] + mean[i % d];
    return out;
  }

 private:
  void check(const Tensor& x) const {
    if (x.rank() == 0 || x.shape().back() != mean.size()) {
      throw DimensionError("normalisation expects trailing axis " + std::to_string(mean.size()) + ", got " +
                           shape_string(x.shape()));
    }
  }
};

/// Every complete (L, H) window lying inside `range`, in temporal order.
inline std::vector<MemoryEntry> make_windows(const SeriesFrame& frame, IndexRange range, std::size_t lookback,
                                             std::size_t horizon) {
  std::vector<MemoryEntry> out;
  if (range.size() < lookback + horizon) return out;
  for (std::size_t end = range.begin + lookback + horizon; end <= range.end; ++end) {
    const std::size_t start = end - lookback - horizon;
    MemoryEntry e;
    e.x = frame.rows(start, lookback);
    e.y = frame.rows(start + lookback, horizon);
    e.origin_time = static_cast<std::int64_t>(start + lookback - 1);
    out.push_back(std::move(e));
  }
  return out;
}

inline std::string column_name(std::size_t location, std::size_t feature) {
  return "loc" + std::to_string(location) + "_f" + std::to_string(feature);
}

inline void save_dataset(const std::filesystem::path& dir, const SeriesFrame& frame, const Tensor& adjacency) {
  std::filesystem::create_directories(dir);
  const auto& m = frame.meta;
  {
    std::ofstream out(dir / "meta.txt");
    if (!out) throw ParseError("cannot write " + (dir / "meta.txt").string());
    out << "n_locations=" << m.locations << '\n' << "n_features=" << m.features << '\n';
    out << "interval_minutes=" << m.interval_minutes << '\n' << "n_steps=" << frame.steps() << '\n';
    out << "feature_names=";
    for (std::size_t f = 0; f < m.feature_names.size(); ++f) out << (f ? "," : "") << m.feature_names[f];
    out << '\n';
  }
  {
    std::ofstream out(dir / "series.csv");
    if (!out) throw ParseError("cannot write " + (dir / "series.csv").string());
    for (std::size_t i = 0; i < m.locations; ++i)
      for (std::size_t f = 0; f < m.features; ++f) out << ((i || f) ? "," : "") << column_name(i, f);
    out << '\n';
    const std::size_t width = m.locations * m.features;
    for (std::size_t t = 0; t < frame.steps(); ++t) {
      for (std::size_t c = 0; c < width; ++c) out << (c ? "," : "") << io::format_double(frame.values[t * width + c]);
      out << '\n';
    }
  }
  {
    std::ofstream out(dir / "adjacency.csv");
    if (!out) throw ParseError("cannot write " + (dir / "adjacency.csv").string());
    const std::size_t n = adjacency.dim(0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) out << (j ? "," : "") << io::format_double(adjacency.at(i, j));
      out << '\n';
    }
  }
}

namespace detail {

inline std::ifstream open_required(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingFileError("missing file: " + path.string());
  std::ifstream in(path);
  if (!in) throw MissingFileError("cannot open " + path.string());
  return in;
}

inline std::vector<double> parse_csv_row(const std::string& line, std::size_t expected, const std::string& file,
                                         std::size_t row) {
  auto cells = io::split(line, ',');
  if (cells.size() != expected) {
    throw ParseError(file + " row " + std::to_string(row) + ": expected " + std::to_string(expected) +
                     " columns, got " + std::to_string(cells.size()));
  }
  std::vector<double> out(expected);
  for (std::size_t c = 0; c < expected; ++c) {
    out[c] = io::parse_double(cells[c], file + " row " + std::to_string(row) + " column " + std::to_string(c + 1));
    if (!std::isfinite(out[c])) {
      throw ParseError(file + " row " + std::to_string(row) + " column " + std::to_string(c + 1) + ": non-finite value");
    }
  }
  return out;
}

}  // namespace detail

/// Parses a dataset directory. The adjacency is symmetrised as (A + Aᵀ)/2.
inline Dataset load_dataset(const std::filesystem::path& dir) {
  const auto meta_path = dir / "meta.txt";
  const auto series_path = dir / "series.csv";
  const auto adj_path = dir / "adjacency.csv";
  for (const auto& p : {meta_path, series_path, adj_path})
    if (!std::filesystem::exists(p)) throw MissingFileError("missing file: " + p.string());

  auto kv = io::KeyValues::load(meta_path);
  DatasetMeta meta;
  meta.locations = kv.size_or("n_locations", 0);
  meta.features = kv.size_or("n_features", 0);
  meta.interval_minutes = kv.int_or("interval_minutes", 0);
  meta.steps = kv.size_or("n_steps", 0);
  if (kv.has("feature_names")) {
    meta.feature_names = io::split(kv.str("feature_names"), ',');
  } else {
    for (std::size_t f = 0; f < meta.features; ++f) meta.feature_names.push_back("f" + std::to_string(f));
  }
  meta.validate();

  const std::size_t n = meta.locations, d = meta.features, width = n * d;
  auto in = detail::open_required(series_path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("series.csv: missing header");
  auto header = io::split(std::string(io::trim(line)), ',');
  if (header.size() != width) {
    throw ParseError("series.csv header: expected " + std::to_string(width) + " columns, got " +
                     std::to_string(header.size()));
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t f = 0; f < d; ++f) {
      const std::size_t c = i * d + f;
      if (std::string(io::trim(header[c])) != column_name(i, f)) {
        throw ParseError("series.csv header column " + std::to_string(c + 1) + ": expected '" + column_name(i, f) +
                         "', got '" + header[c] + "'");
      }
    }
  std::vector<double> values;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (io::trim(line).empty()) continue;
    ++rows;
    auto row = detail::parse_csv_row(std::string(io::trim(line)), width, "series.csv", rows);
    values.insert(values.end(), row.begin(), row.end());
  }
  if (meta.steps != 0 && rows != meta.steps) {
    throw ParseError("series.csv: meta declares " + std::to_string(meta.steps) + " steps, file has " +
                     std::to_string(rows));
  }
  if (rows == 0) throw ParseError("series.csv: no data rows");
  meta.steps = rows;

  auto ain = detail::open_required(adj_path);
  std::vector<double> adj;
  std::size_t arows = 0;
  while (std::getline(ain, line)) {
    if (io::trim(line).empty()) continue;
    ++arows;
    if (arows > n) throw ParseError("adjacency.csv: more than " + std::to_string(n) + " rows");
    auto row = detail::parse_csv_row(std::string(io::trim(line)), n, "adjacency.csv", arows);
    adj.insert(adj.end(), row.begin(), row.end());
  }
  if (arows != n) throw ParseError("adjacency.csv: expected " + std::to_string(n) + " rows, got " + std::to_string(arows));

  Tensor a(Shape{n, n}, std::move(adj));
  Tensor sym(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) sym.at(i, j) = 0.5 * (a.at(i, j) + a.at(j, i));

  Dataset ds;
  ds.frame.values = Tensor(Shape{rows, n, d}, std::move(values));
  ds.frame.meta = std::move(meta);
  ds.adjacency = AdjacencyMatrix(std::move(sym));
  return ds;
}

/// Parameters of the synthetic drifting stream.
///
/// For location n at step t:
///   base  b_n(t) = a_n·(1 + 0.5·sin(2πt/day) + 0.3·sin(2πt/week + φ_n))
///   drift m_n(t) = 1 + ρ_n·t/week,  ρ_n = drift_rate·(1 + heterogeneity·u_n), u_n ~ U(-1, 1)
///   value x_n(t) = max(0, b_n(t)·m_n(t) + 0.2·mean_{m∈nbr(n)} b_m(t) + ε),  ε ~ N(0, noise_std²)
/// The graph is a random geometric graph on the unit square with the radius
/// chosen so the expected degree is graph_degree.
struct SyntheticSpec {
  std::size_t locations = 10;
  std::size_t days = 112;
  std::int64_t interval_minutes = 60;
  double drift_rate = 0.05;
  double drift_heterogeneity = 1.0;
  double noise_std = 1.0;
  double graph_degree = 3.0;
  double amplitude_min = 10.0;
  double amplitude_max = 30.0;
  std::uint64_t seed = 7;

  void validate() const {
    if (locations == 0 || days == 0) throw ConfigError("synthetic: locations and days must be positive");
    if (interval_minutes <= 0 || kMinutesPerDay % interval_minutes != 0) {
      throw ConfigError("synthetic: interval_minutes must divide 1440");
    }
    if (drift_rate < 0.0) throw ConfigError("synthetic: drift_rate must be non-negative");
    if (drift_heterogeneity < 0.0 || drift_heterogeneity > 1.0) {
      throw ConfigError("synthetic: drift_heterogeneity must lie in [0, 1]");
    }
    if (noise_std < 0.0 || graph_degree < 0.0) throw ConfigError("synthetic: noise_std and graph_degree must be >= 0");
    if (!(amplitude_min > 0.0) || amplitude_max < amplitude_min) throw ConfigError("synthetic: bad amplitude range");
  }
};

struct SyntheticDataset {
  Dataset data;
  std::vector<double> drift_rates;  // ρ_n
  std::vector<double> amplitudes;   // a_n
};

inline SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t n = spec.locations;
  const std::int64_t day = kMinutesPerDay / spec.interval_minutes;
  const std::int64_t week = kMinutesPerWeek / spec.interval_minutes;
  const std::size_t steps = spec.days * static_cast<std::size_t>(day);

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);

  SyntheticDataset out;
  std::vector<double> phase(n), px(n), py(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.amplitudes.push_back(spec.amplitude_min + (spec.amplitude_max - spec.amplitude_min) * unit(rng));
    phase[i] = 2.0 * std::numbers::pi * unit(rng);
    const double u = 2.0 * unit(rng) - 1.0;
    out.drift_rates.push_back(spec.drift_rate * (1.0 + spec.drift_heterogeneity * u));
    px[i] = unit(rng);
    py[i] = unit(rng);
  }

  Tensor adj(Shape{n, n});
  if (n > 1 && spec.graph_degree > 0.0) {
    const double radius = std::sqrt(spec.graph_degree / (std::numbers::pi * static_cast<double>(n - 1)));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        if (std::hypot(px[i] - px[j], py[i] - py[j]) < radius) adj.at(i, j) = 1.0;
      }
  }
  std::vector<std::vector<std::size_t>> nbrs(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (adj.at(i, j) > 0.0) nbrs[i].push_back(j);

  Tensor values(Shape{steps, n, 1});
  std::vector<double> base(n);
  const double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t t = 0; t < steps; ++t) {
    const double td = static_cast<double>(t);
    for (std::size_t i = 0; i < n; ++i) {
      base[i] = out.amplitudes[i] * (1.0 + 0.5 * std::sin(two_pi * td / static_cast<double>(day)) +
                                     0.3 * std::sin(two_pi * td / static_cast<double>(week) + phase[i]));
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double drift = 1.0 + out.drift_rates[i] * td / static_cast<double>(week);
      double mixing = 0.0;
      if (!nbrs[i].empty()) {
        for (auto j : nbrs[i]) mixing += base[j];
        mixing = 0.2 * mixing / static_cast<double>(nbrs[i].size());
      }
      values.at(t, i, 0) = std::max(0.0, base[i] * drift + mixing + spec.noise_std * noise(rng));
    }
  }

  out.data.frame.values = std::move(values);
  out.data.frame.meta = DatasetMeta{n, 1, spec.interval_minutes, steps, {"value"}};
  out.data.adjacency = AdjacencyMatrix(std::move(adj));
  return out;
}

}  // namespace dost
