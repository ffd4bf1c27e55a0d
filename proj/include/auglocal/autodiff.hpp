// Copyright 2026 The AugLocal Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "auglocal/tensor.hpp"

namespace auglocal {

/// A trainable tensor with its gradient accumulator.
struct Parameter {
  std::string name;
  std::size_t id = 0;
  Tensor value;
  Tensor grad;
  bool decay = true;  // weight decay applies (conv/dense weights only)

  Parameter() = default;
  Parameter(std::string n, std::size_t i, Tensor v, bool wd)
      : name(std::move(n)), id(i), value(std::move(v)), grad(value.shape()), decay(wd) {}

  void zero_grad() { grad.fill(real(0)); }
};

/// Per-channel running statistics owned by one batch-norm layer.
struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  real momentum = real(0.1);
  real eps = real(1e-5);

  BatchNormState() = default;
  explicit BatchNormState(std::size_t channels)
      : running_mean({channels}, real(0)), running_var({channels}, real(1)) {}
};

class Tape;

/// Handle to a node recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

enum class GradMode { Record, Off };

/// Linear record of operations; backward replays it in reverse recording order.
/// A tape belongs to the thread that constructed it.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;
  };

  explicit Tape(GradMode mode = GradMode::Record) : mode_(mode), owner_(std::this_thread::get_id()) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return mode_ == GradMode::Record; }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool empty() const noexcept { return nodes_.empty(); }
  std::thread::id owner() const noexcept { return owner_; }

  Node& node(std::size_t id) { return nodes_[id]; }
  const Node& node(std::size_t id) const { return nodes_[id]; }

  Var constant(Tensor value) { return push(std::move(value), false, nullptr, {}); }

  /// Leaf bound to a parameter; backward accumulates into `p.grad`.
  Var parameter(Parameter& p) { return push(p.value, recording(), &p, {}); }

  /// Numerically the identity; gradients never flow to `x`.
  Var stop_gradient(Var x) { return push(x.value(), false, nullptr, {}); }

  Var push(Tensor value, bool requires_grad, Parameter* param, BackwardFn fn) {
    check_owner();
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad && recording();
    n.param = param;
    if (n.requires_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Adds `g` into the gradient of node `id` if that node participates in backward.
  void accumulate(std::size_t id, const Tensor& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.empty()) n.grad = Tensor(n.value.shape(), real(0));
    n.grad.add_(g);
  }

  /// Mutable gradient buffer of `id`, allocated on demand; nullptr when the node
  /// is outside the differentiable graph.
  real* grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return nullptr;
    if (n.grad.empty()) n.grad = Tensor(n.value.shape(), real(0));
    return n.grad.ptr();
  }

  void check_owner() const {
    if (std::this_thread::get_id() != owner_) fail(ErrorCode::CrossThreadTape, "tape used outside its owning thread");
  }

  void clear_grads() {
    for (auto& n : nodes_) n.grad = Tensor();
  }

 private:
  GradMode mode_;
  std::thread::id owner_;
  std::deque<Node> nodes_;  // stable references while recording
};

inline const Tensor& Var::value() const { return tape->node(id).value; }

/// Reverse-mode sweep from a scalar loss. Node gradients from earlier sweeps
/// are discarded; parameter gradients accumulate.
inline void backward(Tape& tape, Var loss) {
  if (tape.empty()) fail(ErrorCode::EmptyTape, "backward on empty tape");
  if (loss.value().size() != 1) fail(ErrorCode::NonScalarLoss, "loss has shape " + shape_str(loss.shape()));
  tape.check_owner();
  tape.clear_grads();
  if (!tape.requires_grad(loss)) return;
  tape.accumulate(loss.id, Tensor(loss.shape(), real(1)));
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    auto& n = tape.node(i);
    if (n.grad.empty()) continue;
    if (n.param) n.param->grad.add_(n.grad);
    if (n.backward) n.backward(tape, i);
  }
}

// ---------------------------------------------------------------------------
// Operators
// ---------------------------------------------------------------------------

namespace detail {

inline bool any_grad(std::initializer_list<Var> vs) {
  for (const auto& v : vs)
    if (v.tape->requires_grad(v)) return true;
  return false;
}

inline void same_tape(std::initializer_list<Var> vs) {
  Tape* t = vs.begin()->tape;
  for (const auto& v : vs)
    if (v.tape != t) fail(ErrorCode::ShapeMismatch, "operands recorded on different tapes");
}

struct ConvGeom {
  std::size_t n, cin, h, w, cout, k, stride, pad, ho, wo;
  std::size_t ckk() const { return cin * k * k; }
  std::size_t hw_out() const { return ho * wo; }
};

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride) {
  const std::size_t pad = k / 2;
  return (in + 2 * pad - k) / stride + 1;
}

// Column matrix rows have length `ld`; one sample fills hw_out() columns.
inline void im2col(const ConvGeom& g, const real* x, real* col, std::size_t ld) {
  for (std::size_t c = 0; c < g.cin; ++c) {
    const real* xc = x + c * g.h * g.w;
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        real* row = col + ((c * g.k + ki) * g.k + kj) * ld;
        for (std::size_t oh = 0; oh < g.ho; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
          real* dst = row + oh * g.wo;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill(dst, dst + g.wo, real(0));
            continue;
          }
          const real* src = xc + static_cast<std::size_t>(ih) * g.w;
          for (std::size_t ow = 0; ow < g.wo; ++ow) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
            dst[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.w)) ? real(0) : src[iw];
          }
        }
      }
    }
  }
}

inline void col2im(const ConvGeom& g, const real* col, std::size_t ld, real* dx) {
  for (std::size_t c = 0; c < g.cin; ++c) {
    real* xc = dx + c * g.h * g.w;
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const real* row = col + ((c * g.k + ki) * g.k + kj) * ld;
        for (std::size_t oh = 0; oh < g.ho; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.h)) continue;
          real* dst = xc + static_cast<std::size_t>(ih) * g.w;
          const real* src = row + oh * g.wo;
          for (std::size_t ow = 0; ow < g.wo; ++ow) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
            if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(g.w)) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// y = x W^T + b, x flattened to (N, in). W: (out, in), b: (out).
inline Var dense(Var x, Var weight, Var bias) {
  detail::same_tape({x, weight, bias});
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const Tensor& bv = bias.value();
  if (wv.rank() != 2) fail(ErrorCode::ShapeMismatch, "dense weight must be rank 2, got " + shape_str(wv.shape()));
  const std::size_t n = xv.dim(0);
  const std::size_t in = xv.size() / n;
  const std::size_t out = wv.dim(0);
  if (wv.dim(1) != in || bv.size() != out)
    fail(ErrorCode::ShapeMismatch, "dense " + shape_str(xv.shape()) + " x " + shape_str(wv.shape()) + " + " + shape_str(bv.shape()));
  Tensor y({n, out});
  for (std::size_t i = 0; i < n; ++i) std::copy(bv.ptr(), bv.ptr() + out, y.ptr() + i * out);
  blas::gemm_nt(n, out, in, xv.ptr(), wv.ptr(), y.ptr());
  Tape& t = *x.tape;
  return t.push(std::move(y), detail::any_grad({x, weight, bias}), nullptr,
                [x = x.id, w = weight.id, b = bias.id, n, in, out](Tape& tp, std::size_t self) {
                  const real* dy = tp.node(self).grad.ptr();
                  if (real* dx = tp.grad_buffer(x)) blas::gemm_nn(n, in, out, dy, tp.node(w).value.ptr(), dx);
                  if (real* dw = tp.grad_buffer(w)) blas::gemm_tn(out, in, n, dy, tp.node(x).value.ptr(), dw);
                  if (real* db = tp.grad_buffer(b))
                    for (std::size_t i = 0; i < n; ++i)
                      for (std::size_t j = 0; j < out; ++j) db[j] += dy[i * out + j];
                });
}

/// 2-D convolution without bias. Kernel k in {1,3}, stride in {1,2}, zero
/// padding k/2 (size-preserving at stride 1, floor division at stride 2).
inline Var conv2d(Var x, Var weight, std::size_t stride) {
  detail::same_tape({x, weight});
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  if (xv.rank() != 4 || wv.rank() != 4)
    fail(ErrorCode::ShapeMismatch, "conv2d expects rank-4 input and weight, got " + shape_str(xv.shape()) + ", " + shape_str(wv.shape()));
  const std::size_t k = wv.dim(2);
  if (wv.dim(3) != k || (k != 1 && k != 3)) fail(ErrorCode::UnsupportedOperator, "conv2d kernel " + shape_str(wv.shape()));
  if (stride != 1 && stride != 2) fail(ErrorCode::UnsupportedOperator, "conv2d stride " + std::to_string(stride));
  if (wv.dim(1) != xv.dim(1))
    fail(ErrorCode::ShapeMismatch, "conv2d input channels " + std::to_string(xv.dim(1)) + " vs weight " + shape_str(wv.shape()));
  detail::ConvGeom g{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(0), k, stride, k / 2, 0, 0};
  g.ho = detail::conv_out_extent(g.h, k, stride);
  g.wo = detail::conv_out_extent(g.w, k, stride);
  // The whole batch is lowered to one (C*k*k, N*Ho*Wo) matrix so each
  // direction is a single GEMM.
  const std::size_t hwo = g.hw_out(), cols = g.n * hwo;
  std::vector<real> col(g.ckk() * cols);
  for (std::size_t i = 0; i < g.n; ++i) detail::im2col(g, xv.ptr() + i * g.cin * g.h * g.w, col.data() + i * hwo, cols);
  std::vector<real> out(g.cout * cols, real(0));
  blas::gemm_nn(g.cout, cols, g.ckk(), wv.ptr(), col.data(), out.data());
  Tensor y({g.n, g.cout, g.ho, g.wo});
  for (std::size_t i = 0; i < g.n; ++i)
    for (std::size_t o = 0; o < g.cout; ++o)
      std::copy_n(out.data() + o * cols + i * hwo, hwo, y.ptr() + (i * g.cout + o) * hwo);
  Tape& t = *x.tape;
  return t.push(std::move(y), detail::any_grad({x, weight}), nullptr, [x = x.id, w = weight.id, g](Tape& tp, std::size_t self) {
    const std::size_t hwo = g.hw_out(), cols = g.n * hwo;
    const real* dy = tp.node(self).grad.ptr();
    const real* xv = tp.node(x).value.ptr();
    const real* wv = tp.node(w).value.ptr();
    real* dx = tp.grad_buffer(x);
    real* dw = tp.grad_buffer(w);
    std::vector<real> dout(g.cout * cols);
    for (std::size_t i = 0; i < g.n; ++i)
      for (std::size_t o = 0; o < g.cout; ++o) std::copy_n(dy + (i * g.cout + o) * hwo, hwo, dout.data() + o * cols + i * hwo);
    if (dw) {
      std::vector<real> col(g.ckk() * cols);
      for (std::size_t i = 0; i < g.n; ++i) detail::im2col(g, xv + i * g.cin * g.h * g.w, col.data() + i * hwo, cols);
      blas::gemm_nt(g.cout, g.ckk(), cols, dout.data(), col.data(), dw);
    }
    if (dx) {
      std::vector<real> dcol(g.ckk() * cols, real(0));
      blas::gemm_tn(g.ckk(), cols, g.cout, wv, dout.data(), dcol.data());
      for (std::size_t i = 0; i < g.n; ++i) detail::col2im(g, dcol.data() + i * hwo, cols, dx + i * g.cin * g.h * g.w);
    }
  });
}

/// max(x, 0); the subgradient at 0 is 0.
inline Var relu(Var x) {
  const Tensor& xv = x.value();
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = xv[i] > 0 ? xv[i] : real(0);
  return x.tape->push(std::move(y), detail::any_grad({x}), nullptr, [x = x.id](Tape& tp, std::size_t self) {
    real* dx = tp.grad_buffer(x);
    if (!dx) return;
    const auto& xv = tp.node(x).value;
    const real* dy = tp.node(self).grad.ptr();
    for (std::size_t i = 0; i < xv.size(); ++i)
      if (xv[i] > 0) dx[i] += dy[i];
  });
}

/// Per-channel batch normalization over (N, H, W). Training mode normalizes
/// with batch statistics and updates `state`; eval mode uses the running
/// statistics as constants.
inline Var batchnorm2d(Var x, Var gamma, Var beta, BatchNormState& state, bool training) {
  detail::same_tape({x, gamma, beta});
  const Tensor& xv = x.value();
  if (xv.rank() != 4) fail(ErrorCode::ShapeMismatch, "batchnorm2d expects rank 4, got " + shape_str(xv.shape()));
  const std::size_t n = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  if (gamma.value().size() != c || beta.value().size() != c || state.running_mean.size() != c)
    fail(ErrorCode::ShapeMismatch, "batchnorm2d channel count " + std::to_string(c));
  const real* gv = gamma.value().ptr();
  const real* bv = beta.value().ptr();
  const std::size_t m = n * hw;

  std::vector<real> mean(c), inv_std(c);
  if (training) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      real s = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const real* p = xv.ptr() + (i * c + ch) * hw;
        for (std::size_t j = 0; j < hw; ++j) s += p[j];
      }
      const real mu = s / static_cast<real>(m);
      real v = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const real* p = xv.ptr() + (i * c + ch) * hw;
        for (std::size_t j = 0; j < hw; ++j) v += (p[j] - mu) * (p[j] - mu);
      }
      const real var = v / static_cast<real>(m);
      mean[ch] = mu;
      inv_std[ch] = real(1) / std::sqrt(var + state.eps);
      const real unbiased = m > 1 ? v / static_cast<real>(m - 1) : var;
      state.running_mean[ch] = (1 - state.momentum) * state.running_mean[ch] + state.momentum * mu;
      state.running_var[ch] = (1 - state.momentum) * state.running_var[ch] + state.momentum * unbiased;
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = state.running_mean[ch];
      inv_std[ch] = real(1) / std::sqrt(state.running_var[ch] + state.eps);
    }
  }

  Tensor y(xv.shape());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const real* p = xv.ptr() + (i * c + ch) * hw;
      real* q = y.ptr() + (i * c + ch) * hw;
      for (std::size_t j = 0; j < hw; ++j) q[j] = gv[ch] * (p[j] - mean[ch]) * inv_std[ch] + bv[ch];
    }

  return x.tape->push(
      std::move(y), detail::any_grad({x, gamma, beta}), nullptr,
      [x = x.id, gm = gamma.id, bt = beta.id, mean = std::move(mean), inv_std = std::move(inv_std), n, c, hw, m, training](
          Tape& tp, std::size_t self) {
        const real* dy = tp.node(self).grad.ptr();
        const real* xv = tp.node(x).value.ptr();
        const real* gv = tp.node(gm).value.ptr();
        real* dx = tp.grad_buffer(x);
        real* dg = tp.grad_buffer(gm);
        real* db = tp.grad_buffer(bt);
        for (std::size_t ch = 0; ch < c; ++ch) {
          real sum_dy = 0, sum_dy_xhat = 0;
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t off = (i * c + ch) * hw;
            for (std::size_t j = 0; j < hw; ++j) {
              const real xhat = (xv[off + j] - mean[ch]) * inv_std[ch];
              sum_dy += dy[off + j];
              sum_dy_xhat += dy[off + j] * xhat;
            }
          }
          if (dg) dg[ch] += sum_dy_xhat;
          if (db) db[ch] += sum_dy;
          if (!dx) continue;
          const real scale = gv[ch] * inv_std[ch];
          const real inv_m = real(1) / static_cast<real>(m);
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t off = (i * c + ch) * hw;
            for (std::size_t j = 0; j < hw; ++j) {
              if (training) {
                const real xhat = (xv[off + j] - mean[ch]) * inv_std[ch];
                dx[off + j] += scale * (dy[off + j] - inv_m * sum_dy - xhat * inv_m * sum_dy_xhat);
              } else {
                dx[off + j] += scale * dy[off + j];
              }
            }
          }
        }
      });
}

/// (N, C, H, W) -> (N, C) mean over spatial positions.
inline Var global_avg_pool(Var x) {
  const Tensor& xv = x.value();
  if (xv.rank() != 4) fail(ErrorCode::ShapeMismatch, "global_avg_pool expects rank 4, got " + shape_str(xv.shape()));
  const std::size_t n = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  Tensor y({n, c});
  for (std::size_t i = 0; i < n * c; ++i) {
    real s = 0;
    for (std::size_t j = 0; j < hw; ++j) s += xv[i * hw + j];
    y[i] = s / static_cast<real>(hw);
  }
  return x.tape->push(std::move(y), detail::any_grad({x}), nullptr, [x = x.id, n, c, hw](Tape& tp, std::size_t self) {
    real* dx = tp.grad_buffer(x);
    if (!dx) return;
    const real* dy = tp.node(self).grad.ptr();
    const real inv = real(1) / static_cast<real>(hw);
    for (std::size_t i = 0; i < n * c; ++i)
      for (std::size_t j = 0; j < hw; ++j) dx[i * hw + j] += dy[i] * inv;
  });
}

inline Var add(Var a, Var b) {
  detail::same_tape({a, b});
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() != bv.shape()) fail(ErrorCode::ShapeMismatch, "add " + shape_str(av.shape()) + " + " + shape_str(bv.shape()));
  Tensor y = av;
  y.add_(bv);
  return a.tape->push(std::move(y), detail::any_grad({a, b}), nullptr, [a = a.id, b = b.id](Tape& tp, std::size_t self) {
    const Tensor& dy = tp.node(self).grad;
    tp.accumulate(a, dy);
    tp.accumulate(b, dy);
  });
}

/// Elementwise product.
inline Var mul(Var a, Var b) {
  detail::same_tape({a, b});
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() != bv.shape()) fail(ErrorCode::ShapeMismatch, "mul " + shape_str(av.shape()) + " * " + shape_str(bv.shape()));
  Tensor y(av.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * bv[i];
  return a.tape->push(std::move(y), detail::any_grad({a, b}), nullptr, [a = a.id, b = b.id](Tape& tp, std::size_t self) {
    const real* dy = tp.node(self).grad.ptr();
    const Tensor& av = tp.node(a).value;
    const Tensor& bv = tp.node(b).value;
    if (real* da = tp.grad_buffer(a))
      for (std::size_t i = 0; i < av.size(); ++i) da[i] += dy[i] * bv[i];
    if (real* db = tp.grad_buffer(b))
      for (std::size_t i = 0; i < bv.size(); ++i) db[i] += dy[i] * av[i];
  });
}

inline Var sum(Var x) {
  const Tensor& xv = x.value();
  real s = 0;
  for (real v : xv.data()) s += v;
  return x.tape->push(Tensor::scalar(s), detail::any_grad({x}), nullptr, [x = x.id](Tape& tp, std::size_t self) {
    real* dx = tp.grad_buffer(x);
    if (!dx) return;
    const real g = tp.node(self).grad[0];
    const std::size_t n = tp.node(x).value.size();
    for (std::size_t i = 0; i < n; ++i) dx[i] += g;
  });
}

/// Row-wise log-softmax with max subtraction; returns (N, K).
inline std::vector<real> log_softmax_rows(std::span<const real> logits, std::size_t n, std::size_t k) {
  std::vector<real> out(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    const real* z = logits.data() + i * k;
    const real mx = *std::max_element(z, z + k);
    real s = 0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(z[j] - mx);
    const real lse = mx + std::log(s);
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = z[j] - lse;
  }
  return out;
}

/// Mean over the batch of -log softmax(logits)[label].
inline Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  const Tensor& zv = logits.value();
  if (zv.rank() != 2) fail(ErrorCode::ShapeMismatch, "cross entropy expects (N, K) logits, got " + shape_str(zv.shape()));
  const std::size_t n = zv.dim(0), k = zv.dim(1);
  if (labels.size() != n) fail(ErrorCode::ShapeMismatch, "labels size " + std::to_string(labels.size()) + " vs batch " + std::to_string(n));
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= k) fail(ErrorCode::LabelOutOfRange, "label " + std::to_string(y) + " not in [0," + std::to_string(k) + ")");
  auto logp = log_softmax_rows(zv.data(), n, k);
  real loss = 0;
  for (std::size_t i = 0; i < n; ++i) loss -= logp[i * k + static_cast<std::size_t>(labels[i])];
  loss /= static_cast<real>(n);
  std::vector<int> ys(labels.begin(), labels.end());
  return logits.tape->push(Tensor::scalar(loss), detail::any_grad({logits}), nullptr,
                           [z = logits.id, logp = std::move(logp), ys = std::move(ys), n, k](Tape& tp, std::size_t self) {
                             real* dz = tp.grad_buffer(z);
                             if (!dz) return;
                             const real g = tp.node(self).grad[0] / static_cast<real>(n);
                             for (std::size_t i = 0; i < n; ++i)
                               for (std::size_t j = 0; j < k; ++j) {
                                 const real p = std::exp(logp[i * k + j]);
                                 dz[i * k + j] += g * (p - (static_cast<std::size_t>(ys[i]) == j ? real(1) : real(0)));
                               }
                           });
}

inline Var stop_gradient(Var x) { return x.tape->stop_gradient(x); }

// ---------------------------------------------------------------------------
// Generic dispatch
// ---------------------------------------------------------------------------

enum class OperatorKind { Dense, Conv2d, Relu, BatchNorm2d, GlobalAvgPool, Add, SoftmaxCrossEntropy };

inline constexpr OperatorKind kAllOperators[] = {OperatorKind::Dense,         OperatorKind::Conv2d, OperatorKind::Relu,
                                                 OperatorKind::BatchNorm2d,   OperatorKind::GlobalAvgPool,
                                                 OperatorKind::Add,           OperatorKind::SoftmaxCrossEntropy};

struct OpAttrs {
  std::size_t stride = 1;
  std::span<const int> labels;
  BatchNormState* bn = nullptr;
  bool training = true;
};

inline Var op_forward(OperatorKind kind, std::span<const Var> in, const OpAttrs& attrs = {}) {
  auto need = [&](std::size_t n) {
    if (in.size() != n) fail(ErrorCode::ShapeMismatch, "operator expects " + std::to_string(n) + " inputs, got " + std::to_string(in.size()));
  };
  switch (kind) {
    case OperatorKind::Dense: need(3); return dense(in[0], in[1], in[2]);
    case OperatorKind::Conv2d: need(2); return conv2d(in[0], in[1], attrs.stride);
    case OperatorKind::Relu: need(1); return relu(in[0]);
    case OperatorKind::BatchNorm2d:
      need(3);
      if (!attrs.bn) fail(ErrorCode::UnsupportedOperator, "batchnorm2d requires a state");
      return batchnorm2d(in[0], in[1], in[2], *attrs.bn, attrs.training);
    case OperatorKind::GlobalAvgPool: need(1); return global_avg_pool(in[0]);
    case OperatorKind::Add: need(2); return add(in[0], in[1]);
    case OperatorKind::SoftmaxCrossEntropy: need(1); return softmax_cross_entropy(in[0], attrs.labels);
  }
  fail(ErrorCode::UnsupportedOperator, "operator kind " + std::to_string(static_cast<int>(kind)));
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check
// ---------------------------------------------------------------------------

struct GradCheckResult {
  real max_rel_error = 0;
  std::size_t checked = 0;
  std::string worst;  // "<param>[<index>]"
};

/// Compares tape gradients of `f` against central differences with step `h`.
/// `f` must build its graph on the supplied tape and return a scalar.
inline GradCheckResult finite_diff_check(const std::function<Var(Tape&)>& f, std::span<Parameter* const> params, real h) {
  if (!(h > 0)) fail(ErrorCode::InvalidArgument, "finite-difference step must be positive");
  auto eval = [&] {
    Tape t(GradMode::Off);
    return f(t).value().item();
  };
  const real base_a = eval();
  const real base_b = eval();
  if (std::memcmp(&base_a, &base_b, sizeof(real)) != 0)
    fail(ErrorCode::NonDeterministicFunction, "two evaluations at identical parameters disagree");

  for (auto* p : params) p->zero_grad();
  {
    Tape t;
    Var loss = f(t);
    backward(t, loss);
  }
  GradCheckResult r;
  for (auto* p : params) {
    const Tensor analytic = p->grad;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const real orig = p->value[i];
      p->value[i] = orig + h;
      const real up = eval();
      p->value[i] = orig - h;
      const real down = eval();
      p->value[i] = orig;
      const real fd = (up - down) / (2 * h);
      const real err = std::abs(analytic[i] - fd) / std::max(real(1), std::abs(analytic[i]));
      ++r.checked;
      if (err > r.max_rel_error || r.worst.empty()) {
        if (err >= r.max_rel_error) r.worst = p->name + "[" + std::to_string(i) + "]";
        r.max_rel_error = std::max(r.max_rel_error, err);
      }
    }
  }
  return r;
}

}  // namespace auglocal
