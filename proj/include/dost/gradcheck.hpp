#pragma once

// Autodiff-vs-finite-difference checks over the full network, used by the
// `gradcheck` command and the test suites.

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dost/autodiff.hpp"
#include "dost/finite_difference.hpp"
#include "dost/model.hpp"

namespace dost {

/// Small configuration used for gradient checks.
inline ModelConfig tiny_model_config() {
  ModelConfig c;
  c.locations = 3;
  c.lookback = 4;
  c.horizon = 2;
  c.features = 1;
  c.hidden = 4;
  c.st_out = 8;
  c.bottleneck = 2;
  c.st_blocks = 1;
  c.diffusion_steps = 2;
  c.kernel = 2;
  return c;
}

struct GroupError {
  std::string name;
  double max_relative_error = 0.0;
};

struct GradcheckReport {
  std::vector<GroupError> groups;
  double max_relative_error = 0.0;
};

/// Compares tape gradients of a smooth scalar probe Σ R⊙forward(x) against
/// central differences for every parameter. Adapter up-projections are
/// randomised first so that gradients reach the down-projections.
inline GradcheckReport network_gradcheck(const ModelConfig& config, std::uint64_t seed, double step = 1e-5) {
  AdaptiveSTNetwork net(config, seed);
  std::mt19937_64 rng(seed ^ 0xA5A5A5A5ULL);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto* p : net.adapter_parameters())
    for (auto& v : p->value.data()) v = 0.5 * u(rng);

  Tensor x(Shape{config.locations, config.lookback, config.features});
  for (auto& v : x.data()) v = u(rng);
  Tensor raw(Shape{config.locations, config.locations});
  for (std::size_t i = 0; i < config.locations; ++i)
    for (std::size_t j = 0; j < config.locations; ++j)
      if (i != j) raw.at(i, j) = std::abs(u(rng));
  AdjacencyMatrix adj(raw);
  Tensor weights(Shape{config.locations, config.horizon, config.features});
  for (auto& v : weights.data()) v = u(rng);

  auto probe = [&](Tape& tape) {
    return ad::sum(ad::mul(net.forward(tape, x, adj, true), tape.constant(weights)));
  };

  net.set_trainable(true, true);
  net.zero_grad();
  {
    Tape tape;
    tape.backward(probe(tape));
  }

  GradcheckReport report;
  for (auto& p : net.parameters()) {
    const Tensor analytic = p.grad;
    const Tensor original = p.value;
    auto f = [&](const Tensor& v) {
      p.value = v;
      Tape tape(false);
      return probe(tape).value().item();
    };
    const Tensor numeric = finite_difference_gradient(f, original, step);
    p.value = original;
    const double err = max_relative_error(analytic, numeric);
    report.groups.push_back({p.name, err});
    report.max_relative_error = std::max(report.max_relative_error, err);
  }
  return report;
}

namespace detail {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = u(rng);
  return t;
}

// Keeps values away from the kinks of relu/abs so central differences stay
// on one side.
inline Tensor away_from_zero(Shape shape, std::mt19937_64& rng) {
  Tensor t = random_tensor(std::move(shape), rng, 0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (auto& v : t.data())
    if (sign(rng)) v = -v;
  return t;
}

// Checks d/dx of Σ R⊙op(x, fixed...) for one argument at a time.
template <class Op>
double check_op(const std::vector<Tensor>& inputs, Op op, std::mt19937_64& rng, double step) {
  double worst = 0.0;
  Tensor probe_weights;
  for (std::size_t arg = 0; arg < inputs.size(); ++arg) {
    std::vector<Parameter> params;
    for (std::size_t i = 0; i < inputs.size(); ++i) params.emplace_back("in" + std::to_string(i), inputs[i]);
    auto eval = [&](Tape& tape) {
      std::vector<Var> vars;
      for (auto& p : params) vars.push_back(tape.param(p));
      Var out = op(vars);
      if (probe_weights.empty()) probe_weights = random_tensor(out.shape(), rng);
      return ad::sum(ad::mul(out, tape.constant(probe_weights)));
    };
    {
      Tape tape;
      tape.backward(eval(tape));
    }
    auto f = [&](const Tensor& v) {
      const Tensor saved = params[arg].value;
      params[arg].value = v;
      Tape tape(false);
      const double r = eval(tape).value().item();
      params[arg].value = saved;
      return r;
    };
    const Tensor numeric = finite_difference_gradient(f, params[arg].value, step);
    worst = std::max(worst, max_relative_error(params[arg].grad, numeric));
  }
  return worst;
}

}  // namespace detail

/// Finite-difference checks of every differentiable primitive on random
/// inputs.
inline std::vector<GroupError> op_gradchecks(std::uint64_t seed, double step = 1e-5) {
  std::mt19937_64 rng(seed);
  using detail::away_from_zero;
  using detail::check_op;
  using detail::random_tensor;
  std::vector<GroupError> out;
  auto add = [&](const char* name, double err) { out.push_back({name, err}); };
  using Vars = std::vector<Var>;

  add("matmul", check_op({random_tensor({3, 4}, rng), random_tensor({4, 5}, rng)},
                         [](const Vars& v) { return ad::matmul(v[0], v[1]); }, rng, step));
  add("bmm", check_op({random_tensor({2, 3, 4}, rng), random_tensor({2, 4, 2}, rng)},
                      [](const Vars& v) { return ad::bmm(v[0], v[1]); }, rng, step));
  add("add", check_op({random_tensor({3, 2}, rng), random_tensor({3, 2}, rng)},
                      [](const Vars& v) { return ad::add(v[0], v[1]); }, rng, step));
  add("sub", check_op({random_tensor({3, 2}, rng), random_tensor({3, 2}, rng)},
                      [](const Vars& v) { return ad::sub(v[0], v[1]); }, rng, step));
  add("mul", check_op({random_tensor({3, 2}, rng), random_tensor({3, 2}, rng)},
                      [](const Vars& v) { return ad::mul(v[0], v[1]); }, rng, step));
  add("add_bias", check_op({random_tensor({2, 3, 4}, rng), random_tensor({4}, rng)},
                           [](const Vars& v) { return ad::add_bias(v[0], v[1]); }, rng, step));
  add("scale", check_op({random_tensor({5}, rng)}, [](const Vars& v) { return ad::scale(v[0], -1.7); }, rng, step));
  add("relu", check_op({away_from_zero({4, 3}, rng)}, [](const Vars& v) { return ad::relu(v[0]); }, rng, step));
  add("sigmoid", check_op({random_tensor({4, 3}, rng, -3, 3)}, [](const Vars& v) { return ad::sigmoid(v[0]); }, rng,
                          step));
  add("tanh", check_op({random_tensor({4, 3}, rng, -3, 3)}, [](const Vars& v) { return ad::tanh(v[0]); }, rng, step));
  add("abs", check_op({away_from_zero({4, 3}, rng)}, [](const Vars& v) { return ad::abs(v[0]); }, rng, step));
  add("narrow", check_op({random_tensor({3, 5, 2}, rng)}, [](const Vars& v) { return ad::narrow(v[0], 1, 1, 3); },
                         rng, step));
  add("reduce", check_op({random_tensor({3, 4, 2}, rng)},
                         [](const Vars& v) { return ad::reduce(v[0], 1, ad::Reduce::Mean); }, rng, step));
  add("causal_conv1d", check_op({random_tensor({2, 7, 3}, rng), random_tensor({2, 3, 4}, rng)},
                                [](const Vars& v) { return ad::causal_conv1d(v[0], v[1], 2); }, rng, step));
  return out;
}

}  // namespace dost
