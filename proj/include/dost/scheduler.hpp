#pragma once

// Calendar-aligned awake/hibernate alternation. Each cycle is L_a awake steps
// followed by L_h = round(λ·L_a) hibernate steps, starting at the first online
// timestep τ₀.

#include <cmath>
#include <cstdint>
#include <string>

#include "dost/errors.hpp"

namespace dost {

enum class Phase { Awake, Hibernate };

inline const char* phase_name(Phase p) { return p == Phase::Awake ? "awake" : "hibernate"; }

struct AHConfig {
  std::int64_t intervals_per_week = 672;
  std::int64_t awake_len = 672;  // L_a
  double lambda = 1.0;
  std::int64_t online_start = 0;  // τ₀

  std::int64_t hibernate_len() const { return std::llround(lambda * static_cast<double>(awake_len)); }
  std::int64_t cycle_len() const { return awake_len + hibernate_len(); }

  void validate() const {
    if (intervals_per_week < 1) throw ConfigError("intervals_per_week must be positive");
    if (awake_len < 1) throw ConfigError("awake_len must be at least 1");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be a finite non-negative number");
  }

  /// Defaults from the dataset cadence: L_a = one week of intervals.
  static AHConfig weekly(std::int64_t intervals_per_week, double lambda, std::int64_t online_start) {
    return AHConfig{intervals_per_week, intervals_per_week, lambda, online_start};
  }
};

class PhaseClock {
 public:
  explicit PhaseClock(AHConfig config) : config_(config) { config_.validate(); }

  const AHConfig& config() const { return config_; }

  Phase phase_at(std::int64_t tau) const {
    check(tau);
    const std::int64_t r = (tau - config_.online_start) % config_.cycle_len();
    return r < config_.awake_len ? Phase::Awake : Phase::Hibernate;
  }

  bool is_hibernate_start(std::int64_t tau) const {
    if (phase_at(tau) != Phase::Hibernate) return false;
    return tau == config_.online_start || phase_at(tau - 1) == Phase::Awake;
  }

  /// Index of the cycle containing τ (0 for the first).
  std::int64_t cycle_index(std::int64_t tau) const {
    check(tau);
    return (tau - config_.online_start) / config_.cycle_len();
  }

 private:
  void check(std::int64_t tau) const {
    if (tau < config_.online_start) {
      throw ConfigError("timestep " + std::to_string(tau) + " precedes the online start " +
                        std::to_string(config_.online_start));
    }
  }

  AHConfig config_;
};

}  // namespace dost
