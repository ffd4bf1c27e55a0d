// Copyright 2026 The AugLocal Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "auglocal/trainer.hpp"

namespace auglocal {

// ---------------------------------------------------------------------------
// Linear CKA
// ---------------------------------------------------------------------------

/// Row-major (n, p) feature matrix in double precision.
struct Features {
  std::size_t n = 0, p = 0;
  std::vector<double> x;

  double& at(std::size_t i, std::size_t j) { return x[i * p + j]; }
  double at(std::size_t i, std::size_t j) const { return x[i * p + j]; }
};

/// Flattens an (N, ...) tensor into N rows.
inline Features to_features(const Tensor& t) {
  if (t.rank() < 1 || t.dim(0) == 0) fail(ErrorCode::InvalidArgument, "features need at least one row");
  Features f{t.dim(0), t.size() / t.dim(0), std::vector<double>(t.size())};
  for (std::size_t i = 0; i < t.size(); ++i) f.x[i] = t[i];
  return f;
}

inline Features center_columns(Features f) {
  for (std::size_t j = 0; j < f.p; ++j) {
    double m = 0;
    for (std::size_t i = 0; i < f.n; ++i) m += f.at(i, j);
    m /= static_cast<double>(f.n);
    for (std::size_t i = 0; i < f.n; ++i) f.at(i, j) -= m;
  }
  return f;
}

/// Seeded Gaussian projection to `cols` columns, entries N(0, 1/cols).
inline Features random_project(const Features& f, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(fnv1a64("cka-projection", seed));
  std::normal_distribution<double> nd(0.0, 1.0 / std::sqrt(static_cast<double>(cols)));
  std::vector<double> r(f.p * cols);
  for (auto& v : r) v = nd(rng);
  Features out{f.n, cols, std::vector<double>(f.n * cols, 0.0)};
  for (std::size_t i = 0; i < f.n; ++i)
    for (std::size_t k = 0; k < f.p; ++k) {
      const double a = f.at(i, k);
      if (a == 0) continue;
      const double* rk = r.data() + k * cols;
      double* o = out.x.data() + i * cols;
      for (std::size_t j = 0; j < cols; ++j) o[j] += a * rk[j];
    }
  return out;
}

namespace detail {

inline double frob_sq(const Features& f) {
  double s = 0;
  for (double v : f.x) s += v * v;
  return s;
}

// A^T B for column blocks, (pa, pb).
inline std::vector<double> cross(const Features& a, const Features& b) {
  std::vector<double> c(a.p * b.p, 0.0);
  for (std::size_t i = 0; i < a.n; ++i) {
    const double* ar = a.x.data() + i * a.p;
    const double* br = b.x.data() + i * b.p;
    for (std::size_t j = 0; j < a.p; ++j) {
      const double v = ar[j];
      if (v == 0) continue;
      double* cr = c.data() + j * b.p;
      for (std::size_t k = 0; k < b.p; ++k) cr[k] += v * br[k];
    }
  }
  return c;
}

// A A^T, (n, n).
inline std::vector<double> gram(const Features& a) {
  std::vector<double> k(a.n * a.n, 0.0);
  for (std::size_t i = 0; i < a.n; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      const double* x = a.x.data() + i * a.p;
      const double* y = a.x.data() + j * a.p;
      double s = 0;
      for (std::size_t t = 0; t < a.p; ++t) s += x[t] * y[t];
      k[i * a.n + j] = k[j * a.n + i] = s;
    }
  return k;
}

inline double sum_sq(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x * x;
  return s;
}

}  // namespace detail

/// Linear CKA: ||Y^T X||_F^2 / (||X^T X||_F ||Y^T Y||_F) on column-centered
/// features. Inputs are centered here. Returns 0 when either side has no
/// variance left after centering. Uses the (n, n) Gram form when it is cheaper.
inline double linear_cka(const Features& x_in, const Features& y_in) {
  if (x_in.n != y_in.n)
    fail(ErrorCode::RowCountMismatch, "CKA inputs have " + std::to_string(x_in.n) + " and " + std::to_string(y_in.n) + " rows");
  if (x_in.n == 0) fail(ErrorCode::InvalidArgument, "CKA needs at least one row");
  const double raw_x = detail::frob_sq(x_in), raw_y = detail::frob_sq(y_in);
  const Features x = center_columns(x_in), y = center_columns(y_in);
  const double cx = detail::frob_sq(x), cy = detail::frob_sq(y);
  constexpr double kRel = 1e-20;  // squared-norm ratio below which centering left only rounding noise
  if (cx <= kRel * raw_x || cy <= kRel * raw_y || cx == 0 || cy == 0) return 0.0;

  const double n = static_cast<double>(x.n);
  const double px = static_cast<double>(x.p), py = static_cast<double>(y.p);
  const double feature_cost = n * (px * py + px * px + py * py);
  const double gram_cost = n * n * (px + py);
  double hsic, nx, ny;
  if (feature_cost <= gram_cost) {
    hsic = detail::sum_sq(detail::cross(x, y));
    nx = std::sqrt(detail::sum_sq(detail::cross(x, x)));
    ny = std::sqrt(detail::sum_sq(detail::cross(y, y)));
  } else {
    const auto k = detail::gram(x), l = detail::gram(y);
    hsic = 0;
    for (std::size_t i = 0; i < k.size(); ++i) hsic += k[i] * l[i];
    nx = std::sqrt(detail::sum_sq(k));
    ny = std::sqrt(detail::sum_sq(l));
  }
  if (nx == 0 || ny == 0) return 0.0;
  return hsic / (nx * ny);
}

inline double linear_cka(const Tensor& x, const Tensor& y) { return linear_cka(to_features(x), to_features(y)); }

struct CkaOptions {
  std::size_t max_columns = 4096;  // project wider features when the Gram form is also too large
  std::uint64_t seed = 0;
  std::size_t batch_size = 256;
};

struct LayerwiseCka {
  std::vector<double> per_layer;  // index l - 1
  double average = 0;
};

/// Eval-mode activations h^1..h^upto of `net` on `x`, one feature matrix per layer.
inline std::vector<Features> layer_features(Network& net, const Tensor& x, std::size_t upto, std::size_t batch_size) {
  const std::size_t n = x.dim(0);
  const std::size_t per = x.size() / n;
  std::vector<Features> out(upto);
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t m = std::min(n, start + batch_size) - start;
    Tensor xb({m, x.dim(1), x.dim(2), x.dim(3)});
    std::copy_n(x.ptr() + start * per, m * per, xb.ptr());
    const auto hs = net.hidden(xb, upto);
    for (std::size_t l = 0; l < upto; ++l) {
      const std::size_t p = hs[l].size() / m;
      if (out[l].n == 0) out[l] = Features{0, p, {}};
      out[l].x.insert(out[l].x.end(), hs[l].ptr(), hs[l].ptr() + hs[l].size());
      out[l].n += m;
    }
  }
  return out;
}

/// CKA between corresponding hidden layers of two networks of the same spec.
inline LayerwiseCka layerwise_cka(Network& a, Network& b, const Tensor& probe_x, const CkaOptions& opt = {}) {
  if (a.hash() != b.hash()) fail(ErrorCode::SpecMismatch, "layerwise CKA needs two networks built from the same spec");
  const std::size_t L = a.L();
  const auto fa = layer_features(a, probe_x, L, opt.batch_size);
  const auto fb = layer_features(b, probe_x, L, opt.batch_size);
  LayerwiseCka r;
  for (std::size_t l = 0; l < L; ++l) {
    const bool project = fa[l].p > opt.max_columns && fa[l].n > opt.max_columns;
    const std::uint64_t s = opt.seed * 1000003ull + l;
    r.per_layer.push_back(project ? linear_cka(random_project(fa[l], opt.max_columns, s), random_project(fb[l], opt.max_columns, s))
                                  : linear_cka(fa[l], fb[l]));
  }
  for (double v : r.per_layer) r.average += v;
  r.average /= static_cast<double>(L);
  return r;
}

// ---------------------------------------------------------------------------
// Linear probe
// ---------------------------------------------------------------------------

struct ProbeConfig {
  std::size_t epochs = 30;
  double lr0 = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
};

struct ProbeResult {
  std::size_t layer = 0;
  double train_top1 = 0;
  double test_top1 = 0;
};

namespace detail {

// Global-average-pooled h^layer, one row per example.
inline Tensor pooled_features(Network& net, const Dataset& ds, std::size_t layer) {
  Tensor out;
  std::vector<std::size_t> idx;
  std::size_t c = 0;
  for (std::size_t start = 0; start < ds.size(); start += 256) {
    idx.clear();
    for (std::size_t i = start; i < std::min(ds.size(), start + 256); ++i) idx.push_back(i);
    const Tensor h = net.hidden(ds.gather(idx).x, layer).back();
    Tape t(GradMode::Off);
    const Tensor g = h.rank() == 4 ? global_avg_pool(t.constant(h)).value() : h;
    if (out.empty()) {
      c = g.size() / idx.size();
      out = Tensor({ds.size(), c});
    }
    std::copy_n(g.ptr(), g.size(), out.ptr() + start * c);
  }
  return out;
}

}  // namespace detail

/// Trains a fresh linear classifier on frozen, standardized, pooled features
/// of hidden layer `layer` and reports train and test top-1.
inline ProbeResult linear_probe(Network& net, std::size_t layer, const Dataset& train_set, const Dataset& test_set, const ProbeConfig& cfg = {}) {
  if (layer < 1 || layer > net.L()) fail(ErrorCode::InvalidArgument, "probe layer " + std::to_string(layer) + " out of range");
  if (train_set.size() < cfg.batch_size) fail(ErrorCode::ConfigError, "probe training set smaller than one batch");
  Tensor ftr = detail::pooled_features(net, train_set, layer);
  Tensor fte = detail::pooled_features(net, test_set, layer);
  const std::size_t c = ftr.dim(1), k = train_set.num_classes;
  for (std::size_t j = 0; j < c; ++j) {
    double m = 0, v = 0;
    for (std::size_t i = 0; i < ftr.dim(0); ++i) m += ftr[i * c + j];
    m /= static_cast<double>(ftr.dim(0));
    for (std::size_t i = 0; i < ftr.dim(0); ++i) v += (ftr[i * c + j] - m) * (ftr[i * c + j] - m);
    const double s = std::sqrt(v / static_cast<double>(ftr.dim(0))) + 1e-8;
    for (std::size_t i = 0; i < ftr.dim(0); ++i) ftr[i * c + j] = static_cast<real>((ftr[i * c + j] - m) / s);
    for (std::size_t i = 0; i < fte.dim(0); ++i) fte[i * c + j] = static_cast<real>((fte[i * c + j] - m) / s);
  }

  const std::uint64_t seed = fnv1a64("probe", cfg.seed * 131ull + layer);
  Parameter w("probe.w", 0, detail::kaiming_uniform({k, c}, c, seed, "probe.w"), true);
  Parameter b("probe.b", 1, Tensor({k}, real(0)), false);
  SgdNesterov opt({&w, &b}, cfg.momentum, cfg.weight_decay);
  auto rows = [&](const Tensor& f, std::span<const std::size_t> idx) {
    Tensor x({idx.size(), c});
    for (std::size_t i = 0; i < idx.size(); ++i) std::copy_n(f.ptr() + idx[i] * c, c, x.ptr() + i * c);
    return x;
  };
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const double lr = cosine_lr(cfg.lr0, e, cfg.epochs);
    for (const auto& idx : epoch_batches(train_set.size(), cfg.batch_size, seed, e)) {
      std::vector<int> y;
      for (std::size_t i : idx) y.push_back(train_set.labels[i]);
      Tape t;
      Var loss = softmax_cross_entropy(dense(t.constant(rows(ftr, idx)), t.parameter(w), t.parameter(b)), y);
      opt.zero_grad();
      backward(t, loss);
      opt.step(lr);
    }
  }
  auto accuracy = [&](const Tensor& f, const std::vector<int>& labels) {
    Tape t(GradMode::Off);
    const Tensor z = dense(t.constant(f), t.parameter(w), t.parameter(b)).value();
    return static_cast<double>(detail::count_correct(z, labels)) / static_cast<double>(labels.size());
  };
  return {layer, accuracy(ftr, train_set.labels), accuracy(fte, test_set.labels)};
}

// ---------------------------------------------------------------------------
// Memory model
// ---------------------------------------------------------------------------

/// Saved activations per example of one unit: every op output kept for
/// backward (conv, norm, relu; residual branches, projection, and sum).
inline std::uint64_t unit_activation_elements(const LocalUnitSpec& u, const ActShape& in) {
  const std::uint64_t e = unit_output_shape(u, in, 0).elements();
  switch (u.kind) {
    case UnitKind::Conv3x3:
    case UnitKind::Conv1x1: return e * (u.has_norm ? 3 : 2);
    case UnitKind::ResidualBasicBlock: return e * ((u.has_norm ? 7 : 5) + (u.needs_projection() ? (u.has_norm ? 2 : 1) : 0));
    case UnitKind::Dense: return e * 2;
  }
  return 0;
}

inline std::uint64_t classifier_activation_elements(const ClassifierSpec& c) { return c.in_channels + c.num_classes; }

inline std::uint64_t chain_activation_elements(const ActShape& input, const std::vector<LocalUnitSpec>& units, const ClassifierSpec& head) {
  std::uint64_t n = classifier_activation_elements(head);
  ActShape s = input;
  for (std::size_t i = 0; i < units.size(); ++i) {
    n += unit_activation_elements(units[i], s);
    s = unit_output_shape(units[i], s, i + 1);
  }
  return n;
}

struct MemoryReport {
  std::uint64_t activation_bytes = 0;
  std::uint64_t parameter_bytes = 0;  // values, gradients, momentum buffers
  std::uint64_t total_bytes() const { return activation_bytes + parameter_bytes; }
};

/// Peak training memory. BP keeps every activation of the forward pass
/// until backward. Local learning with immediate updates frees layer l's
/// graph before layer l+1 runs, so the peak is the largest single
/// (input, unit, auxiliary net) working set.
inline MemoryReport peak_memory(const PrimaryNetworkSpec& spec, const AuxPlan* plan, TrainMode mode, std::size_t batch,
                                std::size_t bytes_per_element = 4) {
  if (spec.units.empty()) fail(ErrorCode::InvalidArgument, "network has no units");
  if (mode == TrainMode::Local && spec.units.size() > 1 && !plan) fail(ErrorCode::PlanMismatch, "local memory estimate needs a plan");
  std::vector<ActShape> shapes{spec.input};
  for (std::size_t i = 0; i < spec.units.size(); ++i) shapes.push_back(unit_output_shape(spec.units[i], shapes.back(), i + 1));
  const std::size_t L = spec.units.size();

  std::uint64_t act = 0;
  std::uint64_t params = count_params(spec.units, spec.classifier);
  if (mode == TrainMode::BP) {
    act = spec.input.elements() + chain_activation_elements(spec.input, spec.units, spec.classifier);
  } else {
    for (std::size_t l = 1; l <= L; ++l) {
      std::uint64_t a = shapes[l - 1].elements() + unit_activation_elements(spec.units[l - 1], shapes[l - 1]);
      if (l == L) {
        a += classifier_activation_elements(spec.classifier);
      } else {
        const auto& aux = plan->layer(l).aux;
        a += chain_activation_elements(aux.input, aux.units, aux.classifier);
        params += count_params(aux);
      }
      act = std::max(act, a);
    }
  }
  MemoryReport r;
  r.activation_bytes = act * batch * bytes_per_element;
  r.parameter_bytes = params * 3 * bytes_per_element;
  return r;
}

}  // namespace auglocal
