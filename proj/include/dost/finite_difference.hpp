#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "dost/errors.hpp"
#include "dost/tensor.hpp"

namespace dost {

/// Central-difference gradient (f(x+δe_i) - f(x-δe_i)) / 2δ, one coordinate at a time.
inline Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                         double step) {
  if (!(step > 0.0)) throw ConfigError("finite difference step must be positive");
  Tensor probe = x;
  Tensor grad(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + step;
    const double up = f(probe);
    probe[i] = orig - step;
    const double down = f(probe);
    probe[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("non-finite function value at coordinate " + std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

/// |a-b| / max(|a|, |b|, floor). The floor keeps coordinates whose true
/// gradient is ~0 from reporting round-off as relative error.
inline double relative_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double max_relative_error(const Tensor& a, const Tensor& b, double floor = 1e-6) {
  if (a.shape() != b.shape()) {
    throw DimensionError("shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, relative_error(a[i], b[i], floor));
  return worst;
}

}  // namespace dost
