// Copyright 2026 The AugLocal Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "auglocal/autodiff.hpp"
#include "auglocal/auxbuild.hpp"
#include "auglocal/netspec.hpp"

namespace auglocal {

/// Hands out parameter ids; each trainable layer takes a contiguous range.
class IdAllocator {
 public:
  std::size_t next() { return next_++; }
  std::size_t peek() const { return next_; }

 private:
  std::size_t next_ = 0;
};

namespace detail {

// Kaiming-uniform: U(-b, b) with b = sqrt(6 / fan_in). Seeded from the
// parameter name so initialization does not depend on construction order.
inline Tensor kaiming_uniform(Shape shape, std::size_t fan_in, std::uint64_t seed, const std::string& name) {
  std::mt19937_64 rng(fnv1a64(name, seed ^ 0x9e3779b97f4a7c15ull));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<real>(u(rng));
  return t;
}

}  // namespace detail

/// Parameters and norm statistics of one block of layers. Parameter storage
/// is sized once at construction, so `Parameter*` handed to tapes and
/// optimizers stays valid when the module itself is moved.
class Module {
 public:
  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }
  std::vector<BatchNormState>& norms() { return norms_; }
  const std::vector<BatchNormState>& norms() const { return norms_; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  std::pair<std::size_t, std::size_t> id_range() const {
    if (params_.empty()) return {0, 0};
    return {params_.front().id, params_.back().id + 1};
  }

  /// Copies values and norm statistics from a module of identical layout.
  void copy_from(const Module& other) {
    if (other.params_.size() != params_.size() || other.norms_.size() != norms_.size())
      fail(ErrorCode::ShapeMismatch, "module layouts differ");
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (other.params_[i].value.shape() != params_[i].value.shape())
        fail(ErrorCode::ShapeMismatch, "parameter " + params_[i].name + " shape differs");
      params_[i].value = other.params_[i].value;
    }
    for (std::size_t i = 0; i < norms_.size(); ++i) norms_[i] = other.norms_[i];
  }

 protected:
  struct ParamDecl {
    std::string name;
    Shape shape;
    std::size_t fan_in;  // 0: constant fill
    real fill;
    bool decay;
  };

  void materialize(const std::vector<ParamDecl>& decls, IdAllocator& ids, std::uint64_t seed) {
    params_.reserve(decls.size());
    for (const auto& d : decls) {
      Tensor v = d.fan_in ? detail::kaiming_uniform(d.shape, d.fan_in, seed, d.name) : Tensor(d.shape, d.fill);
      params_.emplace_back(d.name, ids.next(), std::move(v), d.decay);
    }
  }

  std::vector<Parameter> params_;
  std::vector<BatchNormState> norms_;
};

/// Trainable instance of a LocalUnitSpec.
class Unit : public Module {
 public:
  Unit(const LocalUnitSpec& spec, const std::string& prefix, IdAllocator& ids, std::uint64_t seed) : spec_(spec) {
    const std::size_t ci = spec.in_channels, co = spec.out_channels;
    std::vector<ParamDecl> d;
    auto conv = [&](const std::string& n, std::size_t in, std::size_t k) {
      d.push_back({prefix + "." + n + ".w", {co, in, k, k}, in * k * k, 0, true});
    };
    auto norm = [&](const std::string& n) {
      d.push_back({prefix + "." + n + ".gamma", {co}, 0, 1, false});
      d.push_back({prefix + "." + n + ".beta", {co}, 0, 0, false});
      norms_.emplace_back(co);
    };
    switch (spec.kind) {
      case UnitKind::Conv3x3:
      case UnitKind::Conv1x1:
        conv("conv", ci, spec.kernel());
        if (spec.has_norm) norm("bn");
        break;
      case UnitKind::ResidualBasicBlock:
        conv("conv1", ci, 3);
        norm("bn1");
        conv("conv2", co, 3);
        norm("bn2");
        if (spec.needs_projection()) {
          conv("proj", ci, 1);
          norm("proj_bn");
        }
        break;
      case UnitKind::Dense:
        d.push_back({prefix + ".fc.w", {co, ci}, ci, 0, true});
        d.push_back({prefix + ".fc.b", {co}, 0, 0, false});
        break;
    }
    materialize(d, ids, seed);
  }

  const LocalUnitSpec& spec() const { return spec_; }

  Var forward(Tape& t, Var x, bool training) {
    auto p = [&](std::size_t i) { return t.parameter(params_[i]); };
    auto bn = [&](Var v, std::size_t pi, std::size_t ni) { return batchnorm2d(v, p(pi), p(pi + 1), norms_[ni], training); };
    switch (spec_.kind) {
      case UnitKind::Conv3x3:
      case UnitKind::Conv1x1: {
        Var y = conv2d(x, p(0), spec_.stride);
        if (spec_.has_norm) y = bn(y, 1, 0);
        return relu(y);
      }
      case UnitKind::ResidualBasicBlock: {
        Var a = relu(bn(conv2d(x, p(0), spec_.stride), 1, 0));
        Var b = bn(conv2d(a, p(3), 1), 4, 1);
        Var sc = spec_.needs_projection() ? bn(conv2d(x, p(6), spec_.stride), 7, 2) : x;
        return relu(add(b, sc));
      }
      case UnitKind::Dense: return relu(dense(x, p(0), p(1)));
    }
    fail(ErrorCode::UnsupportedOperator, "unit kind");
  }

 private:
  LocalUnitSpec spec_;
};

/// Global average pool + dense.
class Classifier : public Module {
 public:
  Classifier(const ClassifierSpec& spec, const std::string& prefix, IdAllocator& ids, std::uint64_t seed) : spec_(spec) {
    materialize({{prefix + ".fc.w", {spec.num_classes, spec.in_channels}, spec.in_channels, 0, true},
                 {prefix + ".fc.b", {spec.num_classes}, 0, 0, false}},
                ids, seed);
  }

  const ClassifierSpec& spec() const { return spec_; }

  Var forward(Tape& t, Var x) {
    Var pooled = x.value().rank() == 4 ? global_avg_pool(x) : x;
    return dense(pooled, t.parameter(params_[0]), t.parameter(params_[1]));
  }

 private:
  ClassifierSpec spec_;
};

/// Instantiated auxiliary network of one hidden layer.
class AuxNet {
 public:
  AuxNet(const AuxNetworkSpec& spec, IdAllocator& ids, std::uint64_t seed)
      : spec_(spec), head_(spec.classifier, "a" + std::to_string(spec.layer) + ".head", ids, seed) {
    const std::string base = "a" + std::to_string(spec.layer);
    for (std::size_t i = 0; i < spec.units.size(); ++i) units_.emplace_back(spec.units[i], base + ".u" + std::to_string(i + 1), ids, seed);
  }

  const AuxNetworkSpec& spec() const { return spec_; }
  std::vector<Unit>& units() { return units_; }
  Classifier& head() { return head_; }
  const std::vector<Unit>& units() const { return units_; }
  const Classifier& head() const { return head_; }

  Var forward(Tape& t, Var h, bool training) {
    for (auto& u : units_) h = u.forward(t, h, training);
    return head_.forward(t, h);
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    for (auto& u : units_)
      for (auto& p : u.params()) out.push_back(&p);
    for (auto& p : head_.params()) out.push_back(&p);
    return out;
  }

 private:
  AuxNetworkSpec spec_;
  Classifier head_;
  std::vector<Unit> units_;
};

/// The primary network: L local units and the global classifier.
class Network {
 public:
  Network(const ValidatedNetwork& net, IdAllocator& ids, std::uint64_t seed)
      : net_(net), hash_(spec_hash(net.spec)) {
    for (std::size_t l = 1; l <= net.L(); ++l) units_.emplace_back(net.unit(l), "u" + std::to_string(l), ids, seed);
    head_.emplace(net.spec.classifier, "head", ids, seed);
  }

  const ValidatedNetwork& validated() const { return net_; }
  const PrimaryNetworkSpec& spec() const { return net_.spec; }
  std::uint64_t hash() const { return hash_; }
  std::size_t L() const { return units_.size(); }

  Unit& unit(std::size_t l) { return units_.at(l - 1); }
  const Unit& unit(std::size_t l) const { return units_.at(l - 1); }
  Classifier& head() { return *head_; }
  const Classifier& head() const { return *head_; }

  Var forward(Tape& t, Var x, bool training) {
    for (auto& u : units_) x = u.forward(t, x, training);
    return head_->forward(t, x);
  }

  /// Eval-mode logits without recording gradients.
  Tensor logits(const Tensor& x) {
    Tape t(GradMode::Off);
    return forward(t, t.constant(x), false).value();
  }

  /// Eval-mode activations h^1..h^L (index 0 holds h^1).
  std::vector<Tensor> hidden(const Tensor& x, std::size_t upto = 0) {
    if (upto == 0) upto = L();
    Tape t(GradMode::Off);
    std::vector<Tensor> out;
    Var h = t.constant(x);
    for (std::size_t l = 1; l <= upto; ++l) {
      h = unit(l).forward(t, h, false);
      out.push_back(h.value());
    }
    return out;
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    for (auto& u : units_)
      for (auto& p : u.params()) out.push_back(&p);
    for (auto& p : head_->params()) out.push_back(&p);
    return out;
  }

  std::size_t param_count() const {
    std::size_t n = head_->param_count();
    for (const auto& u : units_) n += u.param_count();
    return n;
  }

 private:
  ValidatedNetwork net_;
  std::uint64_t hash_;
  std::vector<Unit> units_;
  std::optional<Classifier> head_;
};

/// Primary network plus, in local mode, one auxiliary network per hidden layer.
/// Inference uses only the primary network.
class Model {
 public:
  /// End-to-end (BP) model.
  Model(const ValidatedNetwork& net, std::uint64_t seed) : primary_(net, ids_, seed) {}

  /// Local-learning model; aux parameters get fresh id ranges after the primary's.
  Model(const ValidatedNetwork& net, const AuxPlan& plan, std::uint64_t seed) : primary_(net, ids_, seed), plan_(plan) {
    if (plan.network_hash != primary_.hash() || plan.L != net.L())
      fail(ErrorCode::PlanMismatch, "plan built for '" + plan.network_name + "', model is '" + net.spec.name + "'");
    aux_.reserve(plan.layers.size());
    for (const auto& lp : plan.layers) aux_.emplace_back(lp.aux, ids_, seed);
  }

  Network& primary() { return primary_; }
  const Network& primary() const { return primary_; }
  bool local() const { return plan_.has_value(); }
  const AuxPlan& plan() const {
    if (!plan_) fail(ErrorCode::PlanMismatch, "model has no auxiliary plan");
    return *plan_;
  }
  AuxNet& aux(std::size_t l) { return aux_.at(l - 1); }
  const AuxNet& aux(std::size_t l) const { return aux_.at(l - 1); }
  std::size_t aux_count() const { return aux_.size(); }

  /// Parameters updated by local layer l: unit l and its aux net, or for
  /// l = L the last unit and the global classifier.
  std::vector<Parameter*> layer_parameters(std::size_t l) {
    std::vector<Parameter*> out;
    for (auto& p : primary_.unit(l).params()) out.push_back(&p);
    if (l == primary_.L()) {
      for (auto& p : primary_.head().params()) out.push_back(&p);
    } else if (local()) {
      for (auto* p : aux(l).parameters()) out.push_back(p);
    }
    return out;
  }

  std::vector<Parameter*> all_parameters() {
    std::vector<Parameter*> out = primary_.parameters();
    for (auto& a : aux_)
      for (auto* p : a.parameters()) out.push_back(p);
    return out;
  }

 private:
  IdAllocator ids_;
  Network primary_;
  std::optional<AuxPlan> plan_;
  std::vector<AuxNet> aux_;
};

}  // namespace auglocal
