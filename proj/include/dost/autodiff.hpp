#pragma once

// Define-by-run reverse-mode differentiation over dost::Tensor.
//
// A Tape records every operation applied to its Vars together with a local
// backward rule. Tape::backward() replays the rules in reverse order and
// accumulates leaf gradients into the trainable Parameters that were bound
// with Tape::param(). A tape is single-use: call reset() before recording the
// next forward pass.

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "dost/errors.hpp"
#include "dost/tensor.hpp"

namespace dost {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Parameter(std::string n, Tensor v, bool train = true)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()), trainable(train) {}

  void zero_grad() { grad.fill(0.0); }
};

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  /// A non-recording tape evaluates values only; backward() is unavailable.
  explicit Tape(bool recording = true) : recording_(recording) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }

  Var constant(Tensor value) { return push(std::move(value), false, nullptr, {}); }

  Var param(Parameter& p) {
    const bool rg = recording_ && p.trainable;
    return push(p.value, rg, rg ? &p : nullptr, {});
  }

  /// Records an op output. `fn` is kept only when gradients can flow.
  Var record(Tensor value, bool requires_grad, BackwardFn fn) {
    const bool rg = recording_ && requires_grad;
    return push(std::move(value), rg, nullptr, rg ? std::move(fn) : BackwardFn{});
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }

  /// Incoming gradient of a node; empty tensor when nothing flowed into it.
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
  const Tensor& grad(Var v) const { return nodes_[v.id()].grad; }

  /// Gradient accumulator for node `id`, zero-allocated on first use.
  Tensor& grad_slot(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor(n.value.shape());
    return n.grad;
  }

  void backward(Var loss) {
    if (!recording_) throw TapeError("backward() on a non-recording tape");
    if (consumed_) throw TapeError("backward() called twice without re-running the forward pass");
    if (!loss.value().is_scalar()) {
      throw TapeError("loss must be scalar, got shape " + shape_string(loss.shape()));
    }
    consumed_ = true;
    if (!nodes_[loss.id()].requires_grad) return;
    grad_slot(loss.id())[0] = 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.param != nullptr) {
        auto dst = n.param->grad.data();
        auto src = n.grad.data();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }
      if (n.backward) n.backward(*this, i);
    }
  }

  void reset() {
    nodes_.clear();
    consumed_ = false;
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;
  };

  Var push(Tensor value, bool rg, Parameter* p, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), Tensor{}, rg, p, std::move(fn)});
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  bool recording_ = true;
  bool consumed_ = false;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

namespace ad {

namespace detail {

inline void same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw TapeError("operands recorded on different tapes");
}

inline void same_shape(const char* op, Var a, Var b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

template <typename F, typename DF>
Var unary(Var x, F f, DF df) {
  Tape& t = x.tape();
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  const std::size_t xi = x.id();
  return t.record(std::move(out), t.requires_grad(xi), [xi, df](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    const Tensor& xv = tp.value(xi);
    const Tensor& yv = tp.value(self);
    Tensor& gx = tp.grad_slot(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xv[i], yv[i]);
  });
}

}  // namespace detail

/// a[m×k] · b[k×n]
inline Var matmul(Var a, Var b) {
  detail::same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_string(av.shape()) + " and " +
                         shape_string(bv.shape()));
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out(Shape{m, n});
  const double* A = av.raw();
  const double* B = bv.raw();
  double* C = out.raw();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      const double* brow = B + p * n;
      double* crow = C + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  Tape& t = a.tape();
  const std::size_t ai = a.id(), bi = b.id();
  const bool rg = t.requires_grad(ai) || t.requires_grad(bi);
  return t.record(std::move(out), rg, [ai, bi, m, k, n](Tape& tp, std::size_t self) {
    const double* G = tp.grad(self).raw();
    const double* A = tp.value(ai).raw();
    const double* B = tp.value(bi).raw();
    if (tp.requires_grad(ai)) {
      double* GA = tp.grad_slot(ai).raw();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double* grow = G + i * n;
          const double* brow = B + p * n;
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
          GA[i * k + p] += s;
        }
      }
    }
    if (tp.requires_grad(bi)) {
      double* GB = tp.grad_slot(bi).raw();
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = G + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A[i * k + p];
          double* gbrow = GB + p * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
        }
      }
    }
  });
}

/// Batched product a[B×m×k] · b[B×k×n], one independent matmul per batch index.
inline Var bmm(Var a, Var b) {
  detail::same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(1)) {
    throw DimensionError("bmm: incompatible shapes " + shape_string(av.shape()) + " and " +
                         shape_string(bv.shape()));
  }
  const std::size_t batch = av.dim(0), m = av.dim(1), k = av.dim(2), n = bv.dim(2);
  Tensor out(Shape{batch, m, n});
  for (std::size_t q = 0; q < batch; ++q) {
    const double* A = av.raw() + q * m * k;
    const double* B = bv.raw() + q * k * n;
    double* C = out.raw() + q * m * n;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = A[i * k + p];
        for (std::size_t j = 0; j < n; ++j) C[i * n + j] += aip * B[p * n + j];
      }
  }
  Tape& t = a.tape();
  const std::size_t ai = a.id(), bi = b.id();
  const bool rg = t.requires_grad(ai) || t.requires_grad(bi);
  return t.record(std::move(out), rg, [ai, bi, batch, m, k, n](Tape& tp, std::size_t self) {
    const bool ga = tp.requires_grad(ai), gb = tp.requires_grad(bi);
    double* GA = ga ? tp.grad_slot(ai).raw() : nullptr;
    double* GB = gb ? tp.grad_slot(bi).raw() : nullptr;
    for (std::size_t q = 0; q < batch; ++q) {
      const double* G = tp.grad(self).raw() + q * m * n;
      const double* A = tp.value(ai).raw() + q * m * k;
      const double* B = tp.value(bi).raw() + q * k * n;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          if (ga) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += G[i * n + j] * B[p * n + j];
            GA[q * m * k + i * k + p] += s;
          }
          if (gb) {
            const double aip = A[i * k + p];
            for (std::size_t j = 0; j < n; ++j) GB[q * k * n + p * n + j] += aip * G[i * n + j];
          }
        }
    }
  });
}

inline Var add(Var a, Var b) {
  detail::same_tape(a, b);
  detail::same_shape("add", a, b);
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  Tape& t = a.tape();
  const std::size_t ai = a.id(), bi = b.id();
  return t.record(std::move(out), t.requires_grad(ai) || t.requires_grad(bi),
                  [ai, bi](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad(self);
                    for (auto id : {ai, bi}) {
                      if (!tp.requires_grad(id)) continue;
                      Tensor& gx = tp.grad_slot(id);
                      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                    }
                  });
}

inline Var sub(Var a, Var b) {
  detail::same_tape(a, b);
  detail::same_shape("sub", a, b);
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  Tape& t = a.tape();
  const std::size_t ai = a.id(), bi = b.id();
  return t.record(std::move(out), t.requires_grad(ai) || t.requires_grad(bi),
                  [ai, bi](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad(self);
                    if (tp.requires_grad(ai)) {
                      Tensor& ga = tp.grad_slot(ai);
                      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                    }
                    if (tp.requires_grad(bi)) {
                      Tensor& gb = tp.grad_slot(bi);
                      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                    }
                  });
}

inline Var mul(Var a, Var b) {
  detail::same_tape(a, b);
  detail::same_shape("mul", a, b);
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  Tape& t = a.tape();
  const std::size_t ai = a.id(), bi = b.id();
  return t.record(std::move(out), t.requires_grad(ai) || t.requires_grad(bi),
                  [ai, bi](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad(self);
                    if (tp.requires_grad(ai)) {
                      Tensor& ga = tp.grad_slot(ai);
                      const Tensor& bv = tp.value(bi);
                      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
                    }
                    if (tp.requires_grad(bi)) {
                      Tensor& gb = tp.grad_slot(bi);
                      const Tensor& av = tp.value(ai);
                      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                    }
                  });
}

/// x[..., n] + bias[n], the bias repeated over every leading index.
inline Var add_bias(Var x, Var bias) {
  detail::same_tape(x, bias);
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  if (bv.rank() != 1 || xv.shape().back() != bv.dim(0)) {
    throw DimensionError("add_bias: bias " + shape_string(bv.shape()) + " does not match trailing axis of " +
                         shape_string(xv.shape()));
  }
  const std::size_t n = bv.dim(0);
  Tensor out = xv;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % n];
  Tape& t = x.tape();
  const std::size_t xi = x.id(), bi = bias.id();
  return t.record(std::move(out), t.requires_grad(xi) || t.requires_grad(bi),
                  [xi, bi, n](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad(self);
                    if (tp.requires_grad(xi)) {
                      Tensor& gx = tp.grad_slot(xi);
                      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                    }
                    if (tp.requires_grad(bi)) {
                      Tensor& gb = tp.grad_slot(bi);
                      for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
                    }
                  });
}

inline Var scale(Var x, double c) {
  Tensor out = x.value();
  for (auto& v : out.data()) v *= c;
  Tape& t = x.tape();
  const std::size_t xi = x.id();
  return t.record(std::move(out), t.requires_grad(xi), [xi, c](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    Tensor& gx = tp.grad_slot(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += c * g[i];
  });
}

/// Subgradient at 0 is 0.
inline Var relu(Var x) {
  return detail::unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Var sigmoid(Var x) {
  return detail::unary(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var tanh(Var x) {
  return detail::unary(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

/// Subgradient at 0 is 0.
inline Var abs(Var x) {
  return detail::unary(
      x, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

inline Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  Tape& t = x.tape();
  const std::size_t xi = x.id();
  return t.record(std::move(out), t.requires_grad(xi), [xi](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    Tensor& gx = tp.grad_slot(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

/// Contiguous slice [start, start+len) along `axis`.
inline Var narrow(Var x, std::size_t axis, std::size_t start, std::size_t len) {
  const Tensor& xv = x.value();
  if (axis >= xv.rank()) throw DimensionError("narrow: axis " + std::to_string(axis) + " out of range");
  if (len == 0 || start + len > xv.dim(axis)) {
    throw DimensionError("narrow: range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                         ") exceeds axis of length " + std::to_string(xv.dim(axis)));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= xv.dim(i);
  for (std::size_t i = axis + 1; i < xv.rank(); ++i) inner *= xv.dim(i);
  const std::size_t full = xv.dim(axis);
  Shape shape = xv.shape();
  shape[axis] = len;
  Tensor out(shape);
  for (std::size_t o = 0; o < outer; ++o) {
    const double* src = xv.raw() + (o * full + start) * inner;
    std::copy(src, src + len * inner, out.raw() + o * len * inner);
  }
  Tape& t = x.tape();
  const std::size_t xi = x.id();
  return t.record(std::move(out), t.requires_grad(xi),
                  [xi, outer, inner, full, start, len](Tape& tp, std::size_t self) {
                    const double* g = tp.grad(self).raw();
                    double* gx = tp.grad_slot(xi).raw();
                    for (std::size_t o = 0; o < outer; ++o) {
                      double* dst = gx + (o * full + start) * inner;
                      const double* src = g + o * len * inner;
                      for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
                    }
                  });
}

enum class Reduce { Sum, Mean };

/// Aggregates along `axis`, removing it from the shape (a rank-1 input
/// reduces to a one-element tensor).
inline Var reduce(Var x, std::size_t axis, Reduce mode) {
  const Tensor& xv = x.value();
  if (axis >= xv.rank()) {
    throw DimensionError("reduce: axis " + std::to_string(axis) + " invalid for shape " +
                         shape_string(xv.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= xv.dim(i);
  for (std::size_t i = axis + 1; i < xv.rank(); ++i) inner *= xv.dim(i);
  const std::size_t len = xv.dim(axis);
  Shape shape;
  for (std::size_t i = 0; i < xv.rank(); ++i)
    if (i != axis) shape.push_back(xv.dim(i));
  if (shape.empty()) shape.push_back(1);
  const double factor = mode == Reduce::Mean ? 1.0 / static_cast<double>(len) : 1.0;
  Tensor out(shape);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t a = 0; a < len; ++a)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += xv[(o * len + a) * inner + i];
  if (mode == Reduce::Mean)
    for (auto& v : out.data()) v *= factor;
  Tape& t = x.tape();
  const std::size_t xi = x.id();
  return t.record(std::move(out), t.requires_grad(xi),
                  [xi, outer, inner, len, factor](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad(self);
                    Tensor& gx = tp.grad_slot(xi);
                    for (std::size_t o = 0; o < outer; ++o)
                      for (std::size_t a = 0; a < len; ++a)
                        for (std::size_t i = 0; i < inner; ++i)
                          gx[(o * len + a) * inner + i] += factor * g[o * inner + i];
                  });
}

/// Sum of all elements as a one-element tensor.
inline Var sum(Var x) { return reduce(reshape(x, Shape{x.value().size()}), 0, Reduce::Sum); }

inline Var mean(Var x) { return reduce(reshape(x, Shape{x.value().size()}), 0, Reduce::Mean); }

/// Valid causal convolution along the time axis.
/// x[N×L×c_in], w[k×c_in×c_out] -> y[N×L'×c_out] with L' = L - (k-1)·dilation and
/// y[n,t,:] = Σ_j x[n, t + j·dilation, :] · w[j]; tap k-1 aligns with the newest input.
inline Var causal_conv1d(Var x, Var w, std::size_t dilation) {
  detail::same_tape(x, w);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (dilation == 0) throw DimensionError("causal_conv1d: dilation must be >= 1");
  if (xv.rank() != 3 || wv.rank() != 3 || xv.dim(2) != wv.dim(1)) {
    throw DimensionError("causal_conv1d: incompatible shapes " + shape_string(xv.shape()) + " and " +
                         shape_string(wv.shape()));
  }
  const std::size_t nodes = xv.dim(0), len = xv.dim(1), cin = xv.dim(2);
  const std::size_t taps = wv.dim(0), cout = wv.dim(2);
  const std::size_t field = (taps - 1) * dilation + 1;
  if (len < field) {
    throw LengthError("causal_conv1d: window length " + std::to_string(len) + " is shorter than receptive field " +
                      std::to_string(field));
  }
  const std::size_t out_len = len - (taps - 1) * dilation;
  Tensor out(Shape{nodes, out_len, cout});
  for (std::size_t n = 0; n < nodes; ++n)
    for (std::size_t tt = 0; tt < out_len; ++tt) {
      double* y = out.raw() + (n * out_len + tt) * cout;
      for (std::size_t j = 0; j < taps; ++j) {
        const double* xr = xv.raw() + (n * len + tt + j * dilation) * cin;
        const double* wj = wv.raw() + j * cin * cout;
        for (std::size_t c = 0; c < cin; ++c) {
          const double xc = xr[c];
          const double* wrow = wj + c * cout;
          for (std::size_t o = 0; o < cout; ++o) y[o] += xc * wrow[o];
        }
      }
    }
  Tape& t = x.tape();
  const std::size_t xi = x.id(), wi = w.id();
  return t.record(
      std::move(out), t.requires_grad(xi) || t.requires_grad(wi),
      [xi, wi, nodes, len, cin, taps, cout, out_len, dilation](Tape& tp, std::size_t self) {
        const double* G = tp.grad(self).raw();
        const double* X = tp.value(xi).raw();
        const double* W = tp.value(wi).raw();
        const bool gx_on = tp.requires_grad(xi), gw_on = tp.requires_grad(wi);
        double* GX = gx_on ? tp.grad_slot(xi).raw() : nullptr;
        double* GW = gw_on ? tp.grad_slot(wi).raw() : nullptr;
        for (std::size_t n = 0; n < nodes; ++n)
          for (std::size_t tt = 0; tt < out_len; ++tt) {
            const double* g = G + (n * out_len + tt) * cout;
            for (std::size_t j = 0; j < taps; ++j) {
              const std::size_t row = (n * len + tt + j * dilation) * cin;
              for (std::size_t c = 0; c < cin; ++c) {
                const double* wrow = W + (j * cin + c) * cout;
                if (gx_on) {
                  double s = 0.0;
                  for (std::size_t o = 0; o < cout; ++o) s += g[o] * wrow[o];
                  GX[row + c] += s;
                }
                if (gw_on) {
                  const double xc = X[row + c];
                  double* gwrow = GW + (j * cin + c) * cout;
                  for (std::size_t o = 0; o < cout; ++o) gwrow[o] += xc * g[o];
                }
              }
            }
          }
      });
}

/// Mean absolute error against a fixed target. |0| has subgradient 0.
inline Var mae_loss(Var pred, const Tensor& target) {
  Var y = pred.tape().constant(target);
  return mean(abs(sub(pred, y)));
}

}  // namespace ad

/// Swaps the two leading axes of a rank-3 tensor: [A×B×C] -> [B×A×C].
inline Tensor swap_leading_axes(const Tensor& x) {
  if (x.rank() != 3) throw DimensionError("swap_leading_axes expects rank 3, got " + shape_string(x.shape()));
  const std::size_t a = x.dim(0), b = x.dim(1), c = x.dim(2);
  Tensor out(Shape{b, a, c});
  for (std::size_t i = 0; i < a; ++i)
    for (std::size_t j = 0; j < b; ++j)
      std::copy(x.raw() + (i * b + j) * c, x.raw() + (i * b + j + 1) * c, out.raw() + (j * a + i) * c);
  return out;
}

}  // namespace dost
