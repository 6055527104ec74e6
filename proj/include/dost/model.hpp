#pragma once

// Adaptive spatio-temporal forecasting network.
//
//   x[N×L×d] --embed--> h[N×L×d_h] --adapter--> H[N×L×d_h]
//            --ST stack--> h~[N×d_o] --decoder--> y^[N×H×d]
//
// The ST stack is a small Graph-WaveNet-style network: each block applies a
// gated dilated causal convolution (tanh ⊙ sigmoid), then K-step graph
// diffusion Σ_k Â^k·u·W_k, then a residual connection to the cropped block
// input. Dilations double per block. The last remaining time step is projected
// to d_o and passed through ReLU.
//
// Parameters split into two disjoint groups: adapter (one bottleneck MLP per
// location, or a single shared one) and traditional (everything else).

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dost/autodiff.hpp"
#include "dost/errors.hpp"
#include "dost/io.hpp"
#include "dost/tensor.hpp"

namespace dost {

struct ModelConfig {
  std::size_t locations = 1;        // N
  std::size_t lookback = 12;        // L
  std::size_t horizon = 12;         // H
  std::size_t features = 1;         // d
  std::size_t hidden = 32;          // d_h, also the residual channel width
  std::size_t st_out = 256;         // d_o
  std::size_t bottleneck = 4;       // d_m
  std::size_t st_blocks = 2;
  std::size_t diffusion_steps = 2;  // K, may be 0
  std::size_t kernel = 2;
  bool use_adapter = true;
  bool shared_adapter = false;

  std::size_t dilation(std::size_t block) const { return std::size_t{1} << block; }

  std::size_t receptive_field() const {
    std::size_t field = 1;
    for (std::size_t b = 0; b < st_blocks; ++b) field += (kernel - 1) * dilation(b);
    return field;
  }

  void validate() const {
    auto positive = [](std::size_t v, const char* name) {
      if (v == 0) throw ConfigError(std::string("model config: ") + name + " must be positive");
    };
    positive(locations, "locations");
    positive(lookback, "lookback");
    positive(horizon, "horizon");
    positive(features, "features");
    positive(hidden, "hidden");
    positive(st_out, "st_out");
    positive(bottleneck, "bottleneck");
    positive(st_blocks, "st_blocks");
    positive(kernel, "kernel");
    if (st_blocks > 16) throw ConfigError("model config: st_blocks too large");
    if (bottleneck >= hidden) throw ConfigError("model config: bottleneck must be smaller than hidden");
    if (lookback < receptive_field()) {
      throw ConfigError("model config: lookback " + std::to_string(lookback) + " is shorter than the receptive field " +
                        std::to_string(receptive_field()) + " of the ST stack");
    }
  }

  io::KeyValues to_kv() const {
    io::KeyValues kv;
    kv.set("locations", std::to_string(locations));
    kv.set("lookback", std::to_string(lookback));
    kv.set("horizon", std::to_string(horizon));
    kv.set("features", std::to_string(features));
    kv.set("hidden", std::to_string(hidden));
    kv.set("st_out", std::to_string(st_out));
    kv.set("bottleneck", std::to_string(bottleneck));
    kv.set("st_blocks", std::to_string(st_blocks));
    kv.set("diffusion_steps", std::to_string(diffusion_steps));
    kv.set("kernel", std::to_string(kernel));
    kv.set("use_adapter", use_adapter ? "true" : "false");
    kv.set("shared_adapter", shared_adapter ? "true" : "false");
    return kv;
  }

  /// Reads known keys from `kv`, keeping current values for absent ones.
  void merge(const io::KeyValues& kv) {
    locations = kv.size_or("locations", locations);
    lookback = kv.size_or("lookback", lookback);
    horizon = kv.size_or("horizon", horizon);
    features = kv.size_or("features", features);
    hidden = kv.size_or("hidden", hidden);
    st_out = kv.size_or("st_out", st_out);
    bottleneck = kv.size_or("bottleneck", bottleneck);
    st_blocks = kv.size_or("st_blocks", st_blocks);
    diffusion_steps = kv.size_or("diffusion_steps", diffusion_steps);
    kernel = kv.size_or("kernel", kernel);
    use_adapter = kv.flag_or("use_adapter", use_adapter);
    shared_adapter = kv.flag_or("shared_adapter", shared_adapter);
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Raw non-negative adjacency A plus its random-walk normalisation D⁻¹(A+I).
class AdjacencyMatrix {
 public:
  AdjacencyMatrix() = default;

  explicit AdjacencyMatrix(Tensor raw) : raw_(std::move(raw)) {
    if (raw_.rank() != 2 || raw_.dim(0) != raw_.dim(1)) {
      throw DimensionError("adjacency must be square, got " + shape_string(raw_.shape()));
    }
    const std::size_t n = raw_.dim(0);
    normalized_ = Tensor(Shape{n, n});
    for (std::size_t i = 0; i < n; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double a = raw_.at(i, j);
        if (!std::isfinite(a) || a < 0.0) {
          throw ConfigError("adjacency entries must be finite and non-negative (row " + std::to_string(i) +
                            ", column " + std::to_string(j) + ")");
        }
        const double w = a + (i == j ? 1.0 : 0.0);
        normalized_.at(i, j) = w;
        row += w;
      }
      for (std::size_t j = 0; j < n; ++j) normalized_.at(i, j) /= row;
    }
  }

  static AdjacencyMatrix identity(std::size_t n) { return AdjacencyMatrix(Tensor(Shape{n, n})); }

  std::size_t nodes() const { return raw_.empty() ? 0 : raw_.dim(0); }
  const Tensor& raw() const { return raw_; }
  const Tensor& normalized() const { return normalized_; }

 private:
  Tensor raw_;
  Tensor normalized_;
};

class AdaptiveSTNetwork {
 public:
  AdaptiveSTNetwork(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    build(seed);
  }

  const ModelConfig& config() const { return config_; }

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }

  std::vector<Parameter*> adapter_parameters() {
    return {&params_[adapter_down_], &params_[adapter_up_]};
  }

  std::vector<Parameter*> traditional_parameters() {
    std::vector<Parameter*> out;
    for (std::size_t i = 0; i < params_.size(); ++i)
      if (i != adapter_down_ && i != adapter_up_) out.push_back(&params_[i]);
    return out;
  }

  std::vector<Parameter*> all_parameters() {
    std::vector<Parameter*> out;
    for (auto& p : params_) out.push_back(&p);
    return out;
  }

  bool is_adapter(const Parameter& p) const {
    return &p == &params_[adapter_down_] || &p == &params_[adapter_up_];
  }

  void set_trainable(bool traditional, bool adapter) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      params_[i].trainable = (i == adapter_down_ || i == adapter_up_) ? adapter : traditional;
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  std::vector<Tensor> snapshot() const {
    std::vector<Tensor> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.value);
    return out;
  }

  void restore(const std::vector<Tensor>& values) {
    if (values.size() != params_.size()) throw DimensionError("snapshot has wrong parameter count");
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (values[i].shape() != params_[i].value.shape()) {
        throw DimensionError("snapshot shape mismatch for " + params_[i].name);
      }
      params_[i].value = values[i];
    }
  }

  /// h = x·W_e + b_e at every (location, time) position. x is [N×L×d].
  Var embed(Tape& tape, const Tensor& x) {
    const Shape expected{config_.locations, config_.lookback, config_.features};
    if (x.shape() != expected) {
      throw DimensionError("embed: expected input " + shape_string(expected) + ", got " + shape_string(x.shape()));
    }
    const std::size_t rows = config_.locations * config_.lookback;
    Var flat = tape.constant(x.reshaped(Shape{rows, config_.features}));
    Var h = ad::add_bias(ad::matmul(flat, tape.param(params_[embed_w_])), tape.param(params_[embed_b_]));
    return ad::reshape(h, Shape{config_.locations, config_.lookback, config_.hidden});
  }

  /// H^(n) = relu(h^(n)·W_a1^(n))·W_a2^(n) + h^(n) for each location n.
  Var adapt(Var h) {
    Tape& tape = h.tape();
    const Shape s = h.shape();
    if (s.size() != 3 || s[2] != config_.hidden) {
      throw DimensionError("adapter: expected [N×L×" + std::to_string(config_.hidden) + "], got " + shape_string(s));
    }
    Var down = tape.param(params_[adapter_down_]);
    Var up = tape.param(params_[adapter_up_]);
    if (config_.shared_adapter) {
      const Shape flat{s[0] * s[1], s[2]};
      Var hf = ad::reshape(h, flat);
      Var a = ad::matmul(ad::relu(ad::matmul(hf, down)), up);
      return ad::add(ad::reshape(a, s), h);
    }
    if (s[0] != config_.locations) {
      throw DimensionError("adapter: input has " + std::to_string(s[0]) + " locations, adapter bank has " +
                           std::to_string(config_.locations));
    }
    Var a = ad::bmm(ad::relu(ad::bmm(h, down)), up);
    return ad::add(a, h);
  }

  /// ST stack: [N×L×d_h] -> [N×d_o].
  Var st(Var x, const AdjacencyMatrix& adj) {
    Tape& tape = x.tape();
    const std::size_t n = config_.locations, c = config_.hidden;
    if (adj.nodes() != n) {
      throw DimensionError("adjacency has " + std::to_string(adj.nodes()) + " nodes, model expects " +
                           std::to_string(n));
    }
    if (x.shape() != Shape{n, config_.lookback, c}) {
      throw DimensionError("st: expected " + shape_string(Shape{n, config_.lookback, c}) + ", got " +
                           shape_string(x.shape()));
    }
    Var diffusion = tape.constant(adj.normalized());
    // Only the newest receptive_field() steps can reach the last output step.
    std::size_t len = config_.receptive_field();
    x = ad::narrow(x, 1, config_.lookback - len, len);
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const BlockParams& bp = blocks_[b];
      const std::size_t dil = config_.dilation(b);
      Var filter = ad::tanh(ad::add_bias(ad::causal_conv1d(x, tape.param(params_[bp.filter_w]), dil),
                                         tape.param(params_[bp.filter_b])));
      Var gate = ad::sigmoid(ad::add_bias(ad::causal_conv1d(x, tape.param(params_[bp.gate_w]), dil),
                                          tape.param(params_[bp.gate_b])));
      Var u = ad::mul(filter, gate);
      const std::size_t out_len = u.shape()[1];
      const Shape rows{n * out_len, c};
      Var z = ad::matmul(ad::reshape(u, rows), tape.param(params_[bp.diffusion_w[0]]));
      Var hop = u;
      for (std::size_t k = 1; k < bp.diffusion_w.size(); ++k) {
        hop = ad::reshape(ad::matmul(diffusion, ad::reshape(hop, Shape{n, out_len * c})), Shape{n, out_len, c});
        z = ad::add(z, ad::matmul(ad::reshape(hop, rows), tape.param(params_[bp.diffusion_w[k]])));
      }
      z = ad::reshape(ad::add_bias(z, tape.param(params_[bp.diffusion_b])), Shape{n, out_len, c});
      x = ad::add(z, ad::narrow(x, 1, len - out_len, out_len));
      len = out_len;
    }
    Var last = ad::reshape(ad::narrow(x, 1, len - 1, 1), Shape{n, c});
    return ad::relu(ad::add_bias(ad::matmul(last, tape.param(params_[st_out_w_])), tape.param(params_[st_out_b_])));
  }

  /// y^ = h~·W_d + b_d reshaped to [N×H×d].
  Var decode(Var h) {
    Tape& tape = h.tape();
    if (h.shape() != Shape{config_.locations, config_.st_out}) {
      throw DimensionError("decode: expected " + shape_string(Shape{config_.locations, config_.st_out}) + ", got " +
                           shape_string(h.shape()));
    }
    Var y = ad::add_bias(ad::matmul(h, tape.param(params_[decoder_w_])), tape.param(params_[decoder_b_]));
    return ad::reshape(y, Shape{config_.locations, config_.horizon, config_.features});
  }

  Var forward(Tape& tape, const Tensor& x, const AdjacencyMatrix& adj, bool use_adapter) {
    Var h = embed(tape, x);
    if (use_adapter) h = adapt(h);
    return decode(st(h, adj));
  }

  Var forward(Tape& tape, const Tensor& x, const AdjacencyMatrix& adj) {
    return forward(tape, x, adj, config_.use_adapter);
  }

  /// Gradient-free forward pass.
  Tensor predict(const Tensor& x, const AdjacencyMatrix& adj, bool use_adapter) {
    Tape tape(false);
    return forward(tape, x, adj, use_adapter).value();
  }

  Tensor predict(const Tensor& x, const AdjacencyMatrix& adj) { return predict(x, adj, config_.use_adapter); }

  Parameter& parameter(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return p;
    throw ConfigError("no parameter named '" + name + "'");
  }

  // Checkpoint layout: a text manifest
  //   dost-checkpoint 1
  //   config <key=value ...>
  //   param <name> <rank> <dims...> <byte offset>      (one per parameter)
  //   payload <bytes>
  // followed by the payload: every parameter's values as little-endian f64,
  // in manifest order.
  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot write checkpoint " + path.string());
    out << "dost-checkpoint 1\n";
    out << "config";
    const auto kv = config_.to_kv();
    for (const auto& [k, v] : kv.entries()) out << ' ' << k << '=' << v;
    out << '\n';
    std::size_t offset = 0;
    for (const auto& p : params_) {
      out << "param " << p.name << ' ' << p.value.rank();
      for (auto d : p.value.shape()) out << ' ' << d;
      out << ' ' << offset << '\n';
      offset += p.value.size() * sizeof(double);
    }
    out << "payload " << offset << '\n';
    for (const auto& p : params_) io::write_f64(out, p.value.data());
    if (!out) throw ParseError("failed writing checkpoint " + path.string());
  }

  /// Loads a checkpoint; the stored config must match this network's config.
  void load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFileError("cannot open checkpoint " + path.string());
    const ModelConfig stored = read_checkpoint_config(in);
    if (!(stored == config_)) throw ConfigError("checkpoint config does not match network config");
    std::size_t offset = 0;
    for (auto& p : params_) {
      std::istringstream line(io::expect_line(in, "parameter manifest"));
      std::string tag, name;
      std::size_t rank = 0;
      line >> tag >> name >> rank;
      Shape shape(rank);
      for (auto& d : shape) line >> d;
      std::size_t stored_offset = 0;
      line >> stored_offset;
      if (!line || tag != "param") throw ParseError("malformed parameter manifest line for " + p.name);
      if (name != p.name || shape != p.value.shape() || stored_offset != offset) {
        throw ConfigError("checkpoint parameter " + name + " " + shape_string(shape) + " does not match " + p.name +
                          " " + shape_string(p.value.shape()));
      }
      offset += p.value.size() * sizeof(double);
    }
    std::istringstream tail(io::expect_line(in, "payload header"));
    std::string tag;
    std::size_t bytes = 0;
    tail >> tag >> bytes;
    if (tag != "payload" || bytes != offset) throw ParseError("checkpoint payload header mismatch");
    for (auto& p : params_) io::read_f64(in, p.value.data());
  }

  static AdaptiveSTNetwork from_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFileError("cannot open checkpoint " + path.string());
    AdaptiveSTNetwork net(read_checkpoint_config(in), 0);
    in.close();
    net.load(path);
    return net;
  }

 private:
  struct BlockParams {
    std::size_t filter_w, filter_b, gate_w, gate_b;
    std::vector<std::size_t> diffusion_w;
    std::size_t diffusion_b;
  };

  static ModelConfig read_checkpoint_config(std::istream& in) {
    if (io::expect_line(in, "checkpoint header") != "dost-checkpoint 1") {
      throw ParseError("not a dost checkpoint (bad header)");
    }
    std::istringstream line(io::expect_line(in, "checkpoint config"));
    std::string tag;
    line >> tag;
    if (tag != "config") throw ParseError("checkpoint config line missing");
    io::KeyValues kv;
    std::string item;
    while (line >> item) {
      const auto eq = item.find('=');
      if (eq == std::string::npos) throw ParseError("bad config token '" + item + "' in checkpoint");
      kv.set(item.substr(0, eq), item.substr(eq + 1));
    }
    ModelConfig cfg;
    cfg.merge(kv);
    cfg.validate();
    return cfg;
  }

  std::size_t add_param(std::string name, Shape shape, double bound, std::mt19937_64& rng) {
    Tensor t(std::move(shape));
    if (bound > 0.0) {
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (auto& v : t.data()) v = dist(rng);
    }
    params_.emplace_back(std::move(name), std::move(t));
    return params_.size() - 1;
  }

  void build(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const ModelConfig& c = config_;
    auto bound = [](std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); };

    embed_w_ = add_param("embed.weight", {c.features, c.hidden}, bound(c.features), rng);
    embed_b_ = add_param("embed.bias", {c.hidden}, bound(c.features), rng);

    const std::size_t banks = c.shared_adapter ? 1 : c.locations;
    if (c.shared_adapter) {
      adapter_down_ = add_param("adapter.down", {c.hidden, c.bottleneck}, bound(c.hidden), rng);
      adapter_up_ = add_param("adapter.up", {c.bottleneck, c.hidden}, 0.0, rng);
    } else {
      adapter_down_ = add_param("adapter.down", {banks, c.hidden, c.bottleneck}, bound(c.hidden), rng);
      adapter_up_ = add_param("adapter.up", {banks, c.bottleneck, c.hidden}, 0.0, rng);
    }

    for (std::size_t b = 0; b < c.st_blocks; ++b) {
      const std::string pre = "block" + std::to_string(b) + ".";
      const std::size_t conv_fan = c.kernel * c.hidden;
      BlockParams bp{};
      bp.filter_w = add_param(pre + "filter.weight", {c.kernel, c.hidden, c.hidden}, bound(conv_fan), rng);
      bp.filter_b = add_param(pre + "filter.bias", {c.hidden}, bound(conv_fan), rng);
      bp.gate_w = add_param(pre + "gate.weight", {c.kernel, c.hidden, c.hidden}, bound(conv_fan), rng);
      bp.gate_b = add_param(pre + "gate.bias", {c.hidden}, bound(conv_fan), rng);
      const std::size_t gc_fan = (c.diffusion_steps + 1) * c.hidden;
      for (std::size_t k = 0; k <= c.diffusion_steps; ++k) {
        bp.diffusion_w.push_back(
            add_param(pre + "diffusion" + std::to_string(k) + ".weight", {c.hidden, c.hidden}, bound(gc_fan), rng));
      }
      bp.diffusion_b = add_param(pre + "diffusion.bias", {c.hidden}, bound(gc_fan), rng);
      blocks_.push_back(std::move(bp));
    }

    st_out_w_ = add_param("st_out.weight", {c.hidden, c.st_out}, bound(c.hidden), rng);
    st_out_b_ = add_param("st_out.bias", {c.st_out}, bound(c.hidden), rng);
    decoder_w_ = add_param("decoder.weight", {c.st_out, c.horizon * c.features}, bound(c.st_out), rng);
    decoder_b_ = add_param("decoder.bias", {c.horizon * c.features}, bound(c.st_out), rng);
  }

  ModelConfig config_;
  std::vector<Parameter> params_;
  std::size_t embed_w_ = 0, embed_b_ = 0;
  std::size_t adapter_down_ = 0, adapter_up_ = 0;
  std::vector<BlockParams> blocks_;
  std::size_t st_out_w_ = 0, st_out_b_ = 0;
  std::size_t decoder_w_ = 0, decoder_b_ = 0;
};

}  // namespace dost
