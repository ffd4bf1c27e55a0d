// Copyright 2026 The AugLocal Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "auglocal/data.hpp"
#include "auglocal/model.hpp"

namespace auglocal {

enum class TrainMode { BP, Local };

inline std::string to_string(TrainMode m) { return m == TrainMode::BP ? "bp" : "local"; }

inline TrainMode parse_mode(const std::string& s) {
  if (s == "bp") return TrainMode::BP;
  if (s == "local") return TrainMode::Local;
  fail(ErrorCode::ConfigError, "unknown mode '" + s + "' (expected bp or local)");
}

struct TrainConfig {
  TrainMode mode = TrainMode::Local;
  StrategyKind strategy = StrategyKind::Uniform;
  std::size_t d = 3;
  std::size_t d_min = 2;
  double tau = 0.5;
  bool repetitive_downsample = false;
  std::optional<std::uint64_t> flops_budget;

  double lr0 = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t epochs = 1;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  bool defer_updates = false;  // update every layer only after the full forward pass

  PlanOptions plan_options() const { return {d, d_min, tau, strategy, repetitive_downsample, flops_budget}; }

  void validate() const {
    if (!(lr0 > 0)) fail(ErrorCode::ConfigError, "lr0 must be positive");
    if (epochs < 1) fail(ErrorCode::ConfigError, "epochs must be >= 1");
    if (batch_size < 1) fail(ErrorCode::ConfigError, "batch_size must be >= 1");
    if (momentum < 0 || momentum >= 1) fail(ErrorCode::ConfigError, "momentum must lie in [0, 1)");
    if (weight_decay < 0) fail(ErrorCode::ConfigError, "weight_decay must be >= 0");
  }
};

/// Builds the model the config asks for: plain primary network in BP mode,
/// primary plus planned auxiliary networks in local mode.
inline Model make_model(const ValidatedNetwork& net, const TrainConfig& cfg) {
  if (cfg.mode == TrainMode::BP) return Model(net, cfg.seed);
  return Model(net, plan_all(net, cfg.plan_options()), cfg.seed);
}

/// lr at epoch e of E: lr0 * (1 + cos(pi e / E)) / 2.
inline double cosine_lr(double lr0, std::size_t epoch, std::size_t epochs) {
  return lr0 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(epochs))) / 2.0;
}

inline real cross_entropy(const Tensor& logits, std::span<const int> labels) {
  Tape t(GradMode::Off);
  return softmax_cross_entropy(t.constant(logits), labels).value().item();
}

/// SGD with Nesterov momentum and decoupled-from-norms weight decay:
///   g' = g + wd * w   (wd only where Parameter::decay)
///   v  = mu * v + g'
///   w  = w - lr * (g' + mu * v)
class SgdNesterov {
 public:
  SgdNesterov() = default;
  SgdNesterov(std::vector<Parameter*> params, double momentum, double weight_decay)
      : params_(std::move(params)), momentum_(static_cast<real>(momentum)), wd_(static_cast<real>(weight_decay)) {
    for (auto* p : params_) velocity_.emplace_back(p->value.shape(), real(0));
  }

  void step(double lr) {
    const real eta = static_cast<real>(lr);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Parameter& p = *params_[k];
      real* w = p.value.ptr();
      const real* g = p.grad.ptr();
      real* v = velocity_[k].ptr();
      const real wd = p.decay ? wd_ : real(0);
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const real gi = g[i] + wd * w[i];
        v[i] = momentum_ * v[i] + gi;
        w[i] -= eta * (gi + momentum_ * v[i]);
      }
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  const std::vector<Parameter*>& params() const { return params_; }
  std::vector<Tensor>& velocity() { return velocity_; }
  const std::vector<Tensor>& velocity() const { return velocity_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Tensor> velocity_;
  real momentum_ = real(0.9);
  real wd_ = real(1e-4);
};

/// One optimizer per local layer (index l - 1). In BP mode the groups still
/// follow local-layer boundaries; the update rule is elementwise, so this is
/// the same as a single optimizer over all primary parameters.
struct Optimizers {
  std::vector<SgdNesterov> layers;

  SgdNesterov& layer(std::size_t l) { return layers.at(l - 1); }

  void zero_grad() {
    for (auto& o : layers) o.zero_grad();
  }
};

inline Optimizers make_optimizers(Model& model, const TrainConfig& cfg) {
  Optimizers o;
  for (std::size_t l = 1; l <= model.primary().L(); ++l) o.layers.emplace_back(model.layer_parameters(l), cfg.momentum, cfg.weight_decay);
  return o;
}

struct StepResult {
  std::vector<real> losses;  // local loss per layer; losses[L-1] is the global loss
  real global_loss = 0;
  std::size_t correct = 0;  // top-1 hits of the primary classifier on the batch
};

namespace detail {

inline std::size_t count_correct(const Tensor& logits, std::span<const int> labels) {
  const std::size_t k = logits.dim(1);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const real* z = logits.ptr() + i * k;
    const auto arg = static_cast<int>(std::max_element(z, z + k) - z);
    hits += arg == labels[i];
  }
  return hits;
}

inline void check_plan(const Model& model, const AuxPlan& plan) {
  if (!model.local()) fail(ErrorCode::PlanMismatch, "model was built without auxiliary networks");
  const auto& own = model.plan();
  if (plan.network_hash != model.primary().hash() || plan.L != model.primary().L() || plan.layers.size() != own.layers.size())
    fail(ErrorCode::PlanMismatch, "plan built for '" + plan.network_name + "' does not match the model");
  for (std::size_t i = 0; i < plan.layers.size(); ++i)
    if (!(plan.layers[i].aux == own.layers[i].aux))
      fail(ErrorCode::PlanMismatch, "plan layer " + std::to_string(i + 1) + " differs from the model's auxiliary network");
}

}  // namespace detail

/// Hook called after each local backward, before the layer's update.
using LocalStepObserver = std::function<void(std::size_t layer, Model&)>;

/// Gradient-isolated local step. For l = 1..L-1:
///   h^l = f^l(stop_gradient(h^{l-1})), loss_l = CE(aux_l(h^l), y),
/// and only unit l and aux l update from loss_l. Unit L and the global
/// classifier update from the global loss. Each layer's gradients are
/// cleared right after its update, so `observer` sees only loss_l's.
inline StepResult local_train_step(Model& model, const Batch& batch, const AuxPlan& plan, Optimizers& opt, double lr,
                                   bool defer_updates = false, const LocalStepObserver& observer = {}) {
  detail::check_plan(model, plan);
  Network& net = model.primary();
  const std::size_t L = net.L();
  StepResult r;
  r.losses.resize(L);
  opt.zero_grad();
  Tape tape;
  Var h = tape.constant(batch.x);
  for (std::size_t l = 1; l <= L; ++l) {
    Var in = l == 1 ? h : stop_gradient(h);
    Var out = net.unit(l).forward(tape, in, true);
    Var logits = l < L ? model.aux(l).forward(tape, out, true) : net.head().forward(tape, out);
    Var loss = softmax_cross_entropy(logits, batch.y);
    backward(tape, loss);
    if (observer) observer(l, model);
    if (!defer_updates) {
      opt.layer(l).step(lr);
      opt.layer(l).zero_grad();
    }
    r.losses[l - 1] = loss.value().item();
    if (l == L) r.correct = detail::count_correct(logits.value(), batch.y);
    h = out;
  }
  if (defer_updates) {
    for (std::size_t l = 1; l <= L; ++l) opt.layer(l).step(lr);
    opt.zero_grad();
  }
  r.global_loss = r.losses.back();
  return r;
}

/// End-to-end step of every primary parameter from the global loss.
inline StepResult bp_train_step(Model& model, const Batch& batch, Optimizers& opt, double lr) {
  Network& net = model.primary();
  Tape tape;
  Var logits = net.forward(tape, tape.constant(batch.x), true);
  Var loss = softmax_cross_entropy(logits, batch.y);
  opt.zero_grad();
  backward(tape, loss);
  for (std::size_t l = 1; l <= net.L(); ++l) opt.layer(l).step(lr);
  StepResult r;
  r.global_loss = loss.value().item();
  r.losses.assign(net.L(), r.global_loss);
  r.correct = detail::count_correct(logits.value(), batch.y);
  return r;
}

struct EvalResult {
  double loss = 0;
  double top1 = 0;
};

/// Eval-mode loss and top-1 accuracy of the primary network.
inline EvalResult evaluate_full(Network& net, const Dataset& ds, std::size_t batch_size = 256) {
  EvalResult r;
  std::vector<std::size_t> idx;
  std::size_t hits = 0;
  double loss_sum = 0;
  for (std::size_t start = 0; start < ds.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(ds.size(), start + batch_size); ++i) idx.push_back(i);
    Batch b = ds.gather(idx);
    Tensor z = net.logits(b.x);
    hits += detail::count_correct(z, b.y);
    loss_sum += cross_entropy(z, b.y) * static_cast<double>(idx.size());
  }
  r.loss = loss_sum / static_cast<double>(ds.size());
  r.top1 = static_cast<double>(hits) / static_cast<double>(ds.size());
  return r;
}

inline double evaluate(Model& model, const Dataset& ds) { return evaluate_full(model.primary(), ds).top1; }

struct MetricsRow {
  std::size_t epoch = 0;
  std::string split;  // "train" or "test"
  double loss = 0;
  double top1 = 0;
  double lr = 0;
  double wall_ms = 0;
};

/// Mini-batch order for an epoch: seeded shuffle, incomplete tail dropped.
inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(fnv1a64("epoch-order", seed * 1000003ull + epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t s = 0; s + batch_size <= n; s += batch_size) batches.emplace_back(order.begin() + s, order.begin() + s + batch_size);
  return batches;
}

/// Epoch loop shared by both modes. Emits one train and one test row per epoch.
inline std::vector<MetricsRow> train(Model& model, const Dataset& train_set, const Dataset* test_set, const TrainConfig& cfg,
                                     const std::function<void(const MetricsRow&)>& on_row = {}, Optimizers* external_opt = nullptr) {
  cfg.validate();
  if (train_set.size() < cfg.batch_size) fail(ErrorCode::ConfigError, "training set smaller than one batch");
  if (cfg.mode == TrainMode::Local && !model.local()) fail(ErrorCode::PlanMismatch, "local mode needs a model with auxiliary networks");
  Optimizers local_opt;
  Optimizers& opt = external_opt ? *external_opt : local_opt;
  if (!external_opt || opt.layers.empty()) opt = make_optimizers(model, cfg);
  std::vector<MetricsRow> rows;
  auto emit = [&](MetricsRow r) {
    if (on_row) on_row(r);
    rows.push_back(std::move(r));
  };
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = cosine_lr(cfg.lr0, e, cfg.epochs);
    double loss_sum = 0;
    std::size_t hits = 0, seen = 0;
    for (const auto& idx : epoch_batches(train_set.size(), cfg.batch_size, cfg.seed, e)) {
      Batch b = train_set.gather(idx);
      StepResult r = cfg.mode == TrainMode::BP ? bp_train_step(model, b, opt, lr)
                                               : local_train_step(model, b, model.plan(), opt, lr, cfg.defer_updates);
      loss_sum += r.global_loss * static_cast<double>(idx.size());
      hits += r.correct;
      seen += idx.size();
    }
    const double train_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    emit({e + 1, "train", loss_sum / static_cast<double>(seen), static_cast<double>(hits) / static_cast<double>(seen), lr, train_ms});
    if (test_set) {
      const auto t1 = std::chrono::steady_clock::now();
      EvalResult ev = evaluate_full(model.primary(), *test_set);
      const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t1).count();
      emit({e + 1, "test", ev.loss, ev.top1, lr, ms});
    }
  }
  return rows;
}

}  // namespace auglocal
