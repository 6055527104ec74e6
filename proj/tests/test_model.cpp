#include <gtest/gtest.h>

#include <chrono>
#include <filesystem>
#include <random>
#include <set>

#include "dost/errors.hpp"
#include "dost/gradcheck.hpp"
#include "dost/model.hpp"

using dost::AdaptiveSTNetwork;
using dost::AdjacencyMatrix;
using dost::ModelConfig;
using dost::Shape;
using dost::Tape;
using dost::Tensor;
using dost::Var;

namespace {

ModelConfig small_config(std::size_t n = 3) {
  ModelConfig c;
  c.locations = n;
  c.lookback = 6;
  c.horizon = 3;
  c.features = 2;
  c.hidden = 8;
  c.st_out = 16;
  c.bottleneck = 3;
  return c;
}

Tensor random(Shape shape, std::mt19937_64& rng) { return dost::detail::random_tensor(std::move(shape), rng); }

AdjacencyMatrix random_adjacency(std::size_t n, std::mt19937_64& rng) {
  Tensor a = dost::detail::random_tensor({n, n}, rng, 0.0, 1.0);
  return AdjacencyMatrix(a);
}

}  // namespace

TEST(ModelConfig, PaperDefaults) {
  ModelConfig c;
  EXPECT_EQ(c.lookback, 12u);
  EXPECT_EQ(c.horizon, 12u);
  EXPECT_EQ(c.hidden, 32u);
  EXPECT_EQ(c.st_out, 256u);
  EXPECT_EQ(c.bottleneck, 4u);
  EXPECT_EQ(c.receptive_field(), 4u);
}

TEST(ModelConfig, Validation) {
  ModelConfig c = small_config();
  c.bottleneck = c.hidden;
  EXPECT_THROW(c.validate(), dost::ConfigError);
  c = small_config();
  c.lookback = 3;
  EXPECT_THROW(AdaptiveSTNetwork(c, 1), dost::ConfigError);
  c = small_config();
  c.hidden = 0;
  EXPECT_THROW(c.validate(), dost::ConfigError);
}

TEST(Adjacency, RowStochasticWithSelfLoops) {
  std::mt19937_64 rng(3);
  for (std::size_t n : {1u, 2u, 7u}) {
    AdjacencyMatrix adj = random_adjacency(n, rng);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += adj.normalized().at(i, j);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Adjacency, IsolatedNodeKeepsItself) {
  AdjacencyMatrix adj(Tensor({3, 3}, {0, 1, 0, 1, 0, 0, 0, 0, 0}));
  EXPECT_EQ(adj.normalized().at(2, 2), 1.0);
  EXPECT_EQ(adj.normalized().at(0, 0), 0.5);
  EXPECT_EQ(adj.normalized().at(0, 1), 0.5);
  EXPECT_TRUE(adj.normalized().all_finite());
}

TEST(Adjacency, RejectsBadInput) {
  EXPECT_THROW(AdjacencyMatrix(Tensor({2, 3})), dost::DimensionError);
  EXPECT_THROW(AdjacencyMatrix(Tensor({2, 2}, {0, -1, 0, 0})), dost::ConfigError);
}

TEST(Embed, IdentityWeightsReproduceInput) {
  ModelConfig c = small_config(2);
  c.features = c.hidden;
  AdaptiveSTNetwork net(c, 1);
  auto& w = net.parameter("embed.weight").value;
  w.fill(0.0);
  for (std::size_t i = 0; i < c.hidden; ++i) w.at(i, i) = 1.0;
  net.parameter("embed.bias").value.fill(0.0);
  std::mt19937_64 rng(2);
  const Tensor x = random({2, c.lookback, c.features}, rng);
  Tape tape(false);
  EXPECT_TRUE(dost::bitwise_equal(net.embed(tape, x).value(), x));
}

TEST(Embed, ZeroInputGivesBias) {
  ModelConfig c = small_config(2);
  AdaptiveSTNetwork net(c, 1);
  net.parameter("embed.bias").value.fill(0.75);
  Tape tape(false);
  const Tensor h = net.embed(tape, Tensor({2, c.lookback, c.features})).value();
  for (double v : h.data()) EXPECT_EQ(v, 0.75);
}

TEST(Embed, DefaultShapes) {
  ModelConfig c;
  c.locations = 5;
  AdaptiveSTNetwork net(c, 1);
  Tape tape(false);
  EXPECT_EQ(net.embed(tape, Tensor({5, 12, 1})).shape(), (Shape{5, 12, 32}));
  EXPECT_THROW(net.embed(tape, Tensor({5, 11, 1})), dost::DimensionError);
}

TEST(Adapter, ZeroUpProjectionIsBitwiseIdentity) {
  ModelConfig c = small_config(4);
  AdaptiveSTNetwork net(c, 8);
  std::mt19937_64 rng(1);
  const Tensor h = random({4, c.lookback, c.hidden}, rng);
  Tape tape(false);
  EXPECT_TRUE(dost::bitwise_equal(net.adapt(tape.constant(h)).value(), h));
}

TEST(Adapter, HandEvaluation) {
  ModelConfig c;
  c.locations = 1;
  c.lookback = 4;
  c.horizon = 1;
  c.hidden = 2;
  c.bottleneck = 1;
  AdaptiveSTNetwork net(c, 1);
  net.parameter("adapter.down").value = Tensor({1, 2, 1}, {1, 0});
  net.parameter("adapter.up").value = Tensor({1, 1, 2}, {1, 1});
  Tape tape(false);
  Tensor h({1, 4, 2});
  for (std::size_t t = 0; t < 4; ++t) {
    h.at(0, t, 0) = 2.0;
    h.at(0, t, 1) = 3.0;
  }
  const Tensor out = net.adapt(tape.constant(h)).value();
  for (std::size_t t = 0; t < 4; ++t) {
    EXPECT_EQ(out.at(0, t, 0), 4.0);
    EXPECT_EQ(out.at(0, t, 1), 5.0);
  }
}

TEST(Adapter, PerLocationIndependence) {
  ModelConfig c = small_config(4);
  AdaptiveSTNetwork net(c, 8);
  std::mt19937_64 rng(6);
  net.parameter("adapter.up").value = random({4, c.bottleneck, c.hidden}, rng);
  const Tensor h = random({4, c.lookback, c.hidden}, rng);
  Tensor h2 = h;
  const std::size_t changed = 2;
  for (std::size_t t = 0; t < c.lookback; ++t) h2.at(changed, t, 1) += 0.5;
  Tape tape(false);
  const Tensor a = net.adapt(tape.constant(h)).value();
  const Tensor b = net.adapt(tape.constant(h2)).value();
  for (std::size_t n = 0; n < 4; ++n) {
    bool same = true;
    for (std::size_t t = 0; t < c.lookback; ++t)
      for (std::size_t k = 0; k < c.hidden; ++k) same = same && a.at(n, t, k) == b.at(n, t, k);
    EXPECT_EQ(same, n != changed) << "location " << n;
  }
}

TEST(Adapter, LocationCountMismatch) {
  AdaptiveSTNetwork net(small_config(4), 1);
  Tape tape(false);
  EXPECT_THROW(net.adapt(tape.constant(Tensor({3, 6, 8}))), dost::DimensionError);
}

TEST(Adapter, SharedBankHasOneAdapter) {
  ModelConfig c = small_config(4);
  c.shared_adapter = true;
  AdaptiveSTNetwork net(c, 1);
  EXPECT_EQ(net.parameter("adapter.down").value.shape(), (Shape{c.hidden, c.bottleneck}));
  std::mt19937_64 rng(2);
  net.parameter("adapter.up").value = random({c.bottleneck, c.hidden}, rng);
  // The same embedding row maps to the same output at every location.
  Tensor h({4, c.lookback, c.hidden});
  const Tensor row = random({c.hidden}, rng);
  for (std::size_t n = 0; n < 4; ++n)
    for (std::size_t t = 0; t < c.lookback; ++t)
      for (std::size_t k = 0; k < c.hidden; ++k) h.at(n, t, k) = row[k];
  Tape tape(false);
  const Tensor out = net.adapt(tape.constant(h)).value();
  for (std::size_t n = 1; n < 4; ++n)
    for (std::size_t k = 0; k < c.hidden; ++k) EXPECT_EQ(out.at(n, 0, k), out.at(0, 0, k));
}

TEST(ParameterPartition, DisjointAndComplete) {
  ModelConfig c = small_config(5);
  AdaptiveSTNetwork net(c, 1);
  std::set<const dost::Parameter*> adapter, traditional;
  std::size_t adapter_entries = 0, total = 0;
  for (auto* p : net.adapter_parameters()) {
    adapter.insert(p);
    adapter_entries += p->value.size();
  }
  for (auto* p : net.traditional_parameters()) {
    traditional.insert(p);
    total += p->value.size();
  }
  for (auto* p : adapter) EXPECT_EQ(traditional.count(p), 0u);
  EXPECT_EQ(adapter.size() + traditional.size(), net.parameters().size());
  EXPECT_EQ(adapter_entries + total, net.parameter_count());
  EXPECT_EQ(adapter_entries, c.locations * (c.hidden * c.bottleneck + c.bottleneck * c.hidden));
}

TEST(SpatioTemporal, SingleLocationDiffusionCollapsesToDense) {
  ModelConfig c = small_config(1);
  c.diffusion_steps = 2;
  AdaptiveSTNetwork with_k(c, 5);
  ModelConfig c0 = c;
  c0.diffusion_steps = 0;
  AdaptiveSTNetwork no_k(c0, 5);
  for (auto& p : no_k.parameters()) {
    if (p.name.find("diffusion0.weight") != std::string::npos) {
      const std::string block = p.name.substr(0, p.name.find('.'));
      Tensor sum = with_k.parameter(block + ".diffusion0.weight").value;
      for (std::size_t k = 1; k <= 2; ++k) {
        const Tensor& wk = with_k.parameter(block + ".diffusion" + std::to_string(k) + ".weight").value;
        for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += wk[i];
      }
      p.value = sum;
    } else {
      p.value = with_k.parameter(p.name).value;
    }
  }
  std::mt19937_64 rng(3);
  const Tensor x = random({1, c.lookback, c.features}, rng);
  const AdjacencyMatrix adj = AdjacencyMatrix::identity(1);
  EXPECT_LT(dost::max_abs_diff(with_k.predict(x, adj), no_k.predict(x, adj)), 1e-12);
}

TEST(SpatioTemporal, ZeroDiffusionStepsIgnoreAdjacency) {
  ModelConfig c = small_config(4);
  c.diffusion_steps = 0;
  AdaptiveSTNetwork net(c, 2);
  std::mt19937_64 rng(4);
  const Tensor x = random({4, c.lookback, c.features}, rng);
  const Tensor base = net.predict(x, random_adjacency(4, rng));
  for (int trial = 0; trial < 5; ++trial) {
    EXPECT_TRUE(dost::bitwise_equal(net.predict(x, random_adjacency(4, rng)), base));
  }
}

TEST(SpatioTemporal, DiffusionMixesLocations) {
  ModelConfig c = small_config(3);
  AdaptiveSTNetwork net(c, 2);
  std::mt19937_64 rng(4);
  const Tensor x = random({3, c.lookback, c.features}, rng);
  const AdjacencyMatrix chain(Tensor({3, 3}, {0, 1, 0, 1, 0, 0, 0, 0, 0}));
  Tensor x2 = x;
  x2.at(1, c.lookback - 1, 0) += 1.0;
  const Tensor a = net.predict(x, chain), b = net.predict(x2, chain);
  EXPECT_NE(a.at(0, 0, 0), b.at(0, 0, 0));
  EXPECT_EQ(a.at(2, 0, 0), b.at(2, 0, 0));
}

TEST(SpatioTemporal, DefaultOutputShape) {
  ModelConfig c;
  c.locations = 4;
  AdaptiveSTNetwork net(c, 1);
  Tape tape(false);
  Var h = net.embed(tape, Tensor({4, 12, 1}));
  EXPECT_EQ(net.st(h, AdjacencyMatrix::identity(4)).shape(), (Shape{4, 256}));
  EXPECT_THROW(net.st(h, AdjacencyMatrix::identity(3)), dost::DimensionError);
}

TEST(SpatioTemporal, OnlyReceptiveFieldReachesOutput) {
  ModelConfig c = small_config(2);
  AdaptiveSTNetwork net(c, 9);
  std::mt19937_64 rng(5);
  const Tensor x = random({2, c.lookback, c.features}, rng);
  const AdjacencyMatrix adj = random_adjacency(2, rng);
  const std::size_t oldest_used = c.lookback - c.receptive_field();
  Tensor older = x, newer = x;
  for (std::size_t n = 0; n < 2; ++n) {
    older.at(n, oldest_used - 1, 0) += 3.0;
    newer.at(n, oldest_used, 0) += 3.0;
  }
  EXPECT_TRUE(dost::bitwise_equal(net.predict(older, adj), net.predict(x, adj)));
  EXPECT_FALSE(dost::bitwise_equal(net.predict(newer, adj), net.predict(x, adj)));
}

TEST(Decoder, ZeroWeightsGiveBias) {
  ModelConfig c = small_config(2);
  AdaptiveSTNetwork net(c, 1);
  net.parameter("decoder.weight").value.fill(0.0);
  net.parameter("decoder.bias").value.fill(-2.5);
  std::mt19937_64 rng(1);
  const Tensor y = net.predict(random({2, c.lookback, c.features}, rng), AdjacencyMatrix::identity(2));
  EXPECT_EQ(y.shape(), (Shape{2, c.horizon, c.features}));
  for (double v : y.data()) EXPECT_EQ(v, -2.5);
}

TEST(Decoder, HandEvaluation) {
  ModelConfig c;
  c.locations = 1;
  c.horizon = 2;
  c.st_out = 1;
  AdaptiveSTNetwork net(c, 1);
  net.parameter("decoder.weight").value = Tensor({1, 2}, {1, 2});
  net.parameter("decoder.bias").value.fill(0.0);
  Tape tape(false);
  const Tensor y = net.decode(tape.constant(Tensor({1, 1}, {3}))).value();
  ASSERT_EQ(y.shape(), (Shape{1, 2, 1}));
  EXPECT_EQ(y[0], 3.0);
  EXPECT_EQ(y[1], 6.0);
}

TEST(Decoder, DefaultShape) {
  ModelConfig c;
  c.locations = 3;
  c.features = 2;
  AdaptiveSTNetwork net(c, 1);
  Tape tape(false);
  EXPECT_EQ(net.decode(tape.constant(Tensor({3, 256}))).shape(), (Shape{3, 12, 2}));
  EXPECT_THROW(net.decode(tape.constant(Tensor({3, 255}))), dost::DimensionError);
}

TEST(Forward, AdapterPathIsIdentityAtInitialisation) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    ModelConfig c = small_config(3);
    AdaptiveSTNetwork net(c, seed);
    std::mt19937_64 rng(seed + 100);
    const Tensor x = random({3, c.lookback, c.features}, rng);
    const AdjacencyMatrix adj = random_adjacency(3, rng);
    EXPECT_TRUE(dost::bitwise_equal(net.predict(x, adj, true), net.predict(x, adj, false)));
  }
}

TEST(Forward, FiniteAcross100Seeds) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    ModelConfig c = small_config(3);
    AdaptiveSTNetwork net(c, seed);
    std::mt19937_64 rng(seed);
    Tensor x = random({3, c.lookback, c.features}, rng);
    for (auto& v : x.data()) v *= 50.0;
    EXPECT_TRUE(net.predict(x, random_adjacency(3, rng)).all_finite()) << "seed " << seed;
  }
}

TEST(Forward, SameSeedSameNetwork) {
  AdaptiveSTNetwork a(small_config(), 77), b(small_config(), 77), c(small_config(), 78);
  for (std::size_t i = 0; i < a.parameters().size(); ++i)
    EXPECT_TRUE(dost::bitwise_equal(a.parameters()[i].value, b.parameters()[i].value));
  EXPECT_FALSE(dost::bitwise_equal(a.parameter("decoder.weight").value, c.parameter("decoder.weight").value));
}

TEST(Gradcheck, TinyConfigAllParameterGroups) {
  const auto started = std::chrono::steady_clock::now();
  const auto report = dost::network_gradcheck(dost::tiny_model_config(), 1);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  for (const auto& g : report.groups) EXPECT_LT(g.max_relative_error, 1e-4) << g.name;
  EXPECT_LT(seconds, 60.0);
}

TEST(Gradcheck, DefaultDepthAndSeveralSeeds) {
  for (std::uint64_t seed = 2; seed < 6; ++seed) {
    ModelConfig c = dost::tiny_model_config();
    c.st_blocks = 2;
    const auto report = dost::network_gradcheck(c, seed);
    EXPECT_LT(report.max_relative_error, 1e-4) << "seed " << seed;
  }
}

TEST(Gradcheck, SharedAdapter) {
  ModelConfig c = dost::tiny_model_config();
  c.shared_adapter = true;
  EXPECT_LT(dost::network_gradcheck(c, 3).max_relative_error, 1e-4);
}

TEST(Checkpoint, RoundTripIsBitwise) {
  const auto dir = std::filesystem::temp_directory_path() / "dost_model_ckpt";
  std::filesystem::create_directories(dir);
  ModelConfig c = small_config();
  AdaptiveSTNetwork net(c, 4);
  std::mt19937_64 rng(4);
  net.parameter("adapter.up").value = random({c.locations, c.bottleneck, c.hidden}, rng);
  net.save(dir / "net.ckpt");
  AdaptiveSTNetwork loaded = AdaptiveSTNetwork::from_checkpoint(dir / "net.ckpt");
  EXPECT_EQ(loaded.config(), c);
  for (std::size_t i = 0; i < net.parameters().size(); ++i)
    EXPECT_TRUE(dost::bitwise_equal(net.parameters()[i].value, loaded.parameters()[i].value));

  ModelConfig other = c;
  other.hidden = 10;
  AdaptiveSTNetwork mismatched(other, 1);
  EXPECT_THROW(mismatched.load(dir / "net.ckpt"), dost::ConfigError);
  EXPECT_THROW(AdaptiveSTNetwork::from_checkpoint(dir / "missing.ckpt"), dost::MissingFileError);
  std::filesystem::remove_all(dir);
}

TEST(Snapshot, RestoreUndoesChanges) {
  AdaptiveSTNetwork net(small_config(), 4);
  const auto snap = net.snapshot();
  net.parameter("decoder.bias").value.fill(9.0);
  net.restore(snap);
  EXPECT_TRUE(dost::bitwise_equal(net.parameter("decoder.bias").value, snap.back()));
}
