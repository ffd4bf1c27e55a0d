// Copyright 2026 The AugLocal Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "auglocal/netspec.hpp"
#include "auglocal/textdoc.hpp"

namespace auglocal {

enum class StrategyKind { Uniform, Sequential, Repetitive, HandcraftedC1x1, HandcraftedC3x3 };

inline std::string to_string(StrategyKind s) {
  switch (s) {
    case StrategyKind::Uniform: return "uniform";
    case StrategyKind::Sequential: return "sequential";
    case StrategyKind::Repetitive: return "repetitive";
    case StrategyKind::HandcraftedC1x1: return "c1x1";
    case StrategyKind::HandcraftedC3x3: return "c3x3";
  }
  return "?";
}

inline StrategyKind parse_strategy(const std::string& s) {
  if (s == "uniform") return StrategyKind::Uniform;
  if (s == "sequential") return StrategyKind::Sequential;
  if (s == "repetitive") return StrategyKind::Repetitive;
  if (s == "c1x1" || s == "handcrafted-c1x1") return StrategyKind::HandcraftedC1x1;
  if (s == "c3x3" || s == "handcrafted-c3x3") return StrategyKind::HandcraftedC3x3;
  fail(ErrorCode::UnknownStrategy, "unknown strategy '" + s + "'");
}

inline bool is_handcrafted(StrategyKind s) { return s == StrategyKind::HandcraftedC1x1 || s == StrategyKind::HandcraftedC3x3; }

// ---------------------------------------------------------------------------
// Depth schedule and layer selection
// ---------------------------------------------------------------------------

/// Auxiliary depth (trainable layers including the classifier) for hidden
/// layer `l`: a linear decay from `d` toward `d_min` at rate `tau`, capped
/// by the number of layers left above `l`. Rounds to nearest, ties away
/// from zero.
inline std::size_t pyramidal_depth(std::size_t l, std::size_t L, std::size_t d, std::size_t d_min, double tau) {
  if (d_min < 2 || d < d_min)
    fail(ErrorCode::InvalidDepthBounds, "need d >= d_min >= 2, got d=" + std::to_string(d) + " d_min=" + std::to_string(d_min));
  if (L < 2 || l < 1 || l > L - 1)
    fail(ErrorCode::InvalidArgument, "layer " + std::to_string(l) + " outside [1, " + std::to_string(L - 1) + "]");
  if (!(tau >= 0.0 && tau <= 1.0)) fail(ErrorCode::InvalidArgument, "tau must lie in [0, 1]");
  const double r = (l == 1) ? 0.0 : tau * static_cast<double>(l - 1) / static_cast<double>(L - 2);
  const double v = (1.0 - r) * static_cast<double>(d) + r * static_cast<double>(d_min);
  // The nudge keeps exact .5 ties from slipping below the midpoint in binary.
  const auto rounded = static_cast<std::size_t>(std::round(v + 1e-9));
  return std::min(rounded, L - l + 1);
}

namespace detail {

inline void check_depth(std::size_t l, std::size_t L, std::size_t dl) {
  if (dl < 2) fail(ErrorCode::InvalidDepthBounds, "auxiliary depth must be >= 2");
  if (l < 1 || l >= L) fail(ErrorCode::InvalidArgument, "layer " + std::to_string(l) + " has no auxiliary network");
  if (dl > L - l + 1)
    fail(ErrorCode::DepthExceedsRemaining,
         "depth " + std::to_string(dl) + " at layer " + std::to_string(l) + " exceeds the " + std::to_string(L - l) + " layers above it");
}

// round(num / den) with ties away from zero, for num >= 0, den > 0.
inline std::size_t round_div(std::size_t num, std::size_t den) { return (2 * num + den) / (2 * den); }

}  // namespace detail

/// beta_i = l + round((L - l) * i / (dl - 1)), i = 1..dl-1.
inline std::vector<std::size_t> select_uniform(std::size_t l, std::size_t L, std::size_t dl) {
  detail::check_depth(l, L, dl);
  std::vector<std::size_t> beta;
  for (std::size_t i = 1; i < dl; ++i) beta.push_back(l + detail::round_div((L - l) * i, dl - 1));
  return beta;
}

inline std::vector<std::size_t> select_sequential(std::size_t l, std::size_t L, std::size_t dl) {
  detail::check_depth(l, L, dl);
  std::vector<std::size_t> beta;
  for (std::size_t i = 1; i < dl; ++i) beta.push_back(l + i);
  return beta;
}

inline std::vector<std::size_t> select_repetitive(std::size_t l, std::size_t dl) {
  if (dl < 2) fail(ErrorCode::InvalidDepthBounds, "auxiliary depth must be >= 2");
  return std::vector<std::size_t>(dl - 1, l);
}

// ---------------------------------------------------------------------------
// Auxiliary construction
// ---------------------------------------------------------------------------

struct AuxBuildOptions {
  double width_multiplier = 1.0;       // handcrafted strategies only
  bool repetitive_downsample = false;  // stride 2 on the first repeated unit
};

/// Builds the auxiliary network of hidden layer `l`. Selected primary units
/// contribute structure only: each adapted unit takes its input channels from
/// the preceding unit and downsamples (stride 2) iff its output channels are
/// at least twice its input channels.
inline AuxNetworkSpec build_aux(const ValidatedNetwork& net, std::size_t l, StrategyKind strategy, std::size_t dl,
                                const AuxBuildOptions& opt = {}) {
  const std::size_t L = net.L();
  detail::check_depth(l, L, dl);
  AuxNetworkSpec aux;
  aux.layer = l;
  aux.input = net.out_shape(l);

  switch (strategy) {
    case StrategyKind::Uniform: aux.source_indices = select_uniform(l, L, dl); break;
    case StrategyKind::Sequential: aux.source_indices = select_sequential(l, L, dl); break;
    case StrategyKind::Repetitive: aux.source_indices = select_repetitive(l, dl); break;
    case StrategyKind::HandcraftedC1x1:
    case StrategyKind::HandcraftedC3x3: aux.source_indices.assign(dl - 1, 0); break;
    default: fail(ErrorCode::UnknownStrategy, "strategy " + std::to_string(static_cast<int>(strategy)));
  }

  ActShape cur = aux.input;
  if (is_handcrafted(strategy)) {
    if (!(opt.width_multiplier > 0)) fail(ErrorCode::InvalidArgument, "width multiplier must be positive");
    const auto width = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(static_cast<double>(net.unit(l).out_channels) * opt.width_multiplier)));
    const UnitKind kind = strategy == StrategyKind::HandcraftedC1x1 ? UnitKind::Conv1x1 : UnitKind::Conv3x3;
    for (std::size_t i = 0; i + 1 < dl; ++i) {
      LocalUnitSpec u{kind, cur.c, width, 1, true};
      cur = unit_output_shape(u, cur, i + 1);
      aux.units.push_back(u);
    }
  } else {
    for (std::size_t i = 0; i < aux.source_indices.size(); ++i) {
      LocalUnitSpec u = net.unit(aux.source_indices[i]);
      if (u.kind == UnitKind::Dense) {
        u.in_channels = cur.elements();
        u.stride = 1;
      } else {
        u.in_channels = cur.c;
        u.stride = u.out_channels >= 2 * u.in_channels ? 2 : 1;
        if (strategy == StrategyKind::Repetitive && opt.repetitive_downsample && i == 0) u.stride = 2;
      }
      cur = unit_output_shape(u, cur, i + 1);
      aux.units.push_back(u);
    }
  }
  aux.classifier = {cur.c, net.spec.num_classes()};
  return aux;
}

struct WidthMatch {
  double multiplier = 1.0;
  std::size_t channels = 0;
  std::uint64_t flops = 0;
  std::uint64_t target_flops = 0;
  double rel_gap = 0.0;
};

/// Finds the handcrafted channel width whose auxiliary FLOPs best match the
/// uniform auxiliary network of the same depth, by integer bisection on the
/// (monotone) FLOPs of the handcrafted chain.
inline WidthMatch match_handcrafted_width(const ValidatedNetwork& net, std::size_t l, StrategyKind strategy, std::size_t dl) {
  if (!is_handcrafted(strategy)) fail(ErrorCode::InvalidArgument, "width matching applies to handcrafted strategies");
  const std::uint64_t target = count_flops(build_aux(net, l, StrategyKind::Uniform, dl));
  const std::size_t base = net.unit(l).out_channels;
  auto flops_at = [&](std::size_t c) {
    return count_flops(build_aux(net, l, strategy, dl, {static_cast<double>(c) / static_cast<double>(base), false}));
  };
  std::size_t lo = 1, hi = 1;
  while (flops_at(hi) < target) hi *= 2;
  while (lo < hi) {  // smallest c with flops(c) >= target
    const std::size_t mid = lo + (hi - lo) / 2;
    if (flops_at(mid) >= target)
      hi = mid;
    else
      lo = mid + 1;
  }
  std::size_t best = lo;
  if (lo > 1) {
    const auto above = static_cast<double>(flops_at(lo)) - static_cast<double>(target);
    const auto below = static_cast<double>(target) - static_cast<double>(flops_at(lo - 1));
    if (below < above) best = lo - 1;
  }
  WidthMatch m;
  m.channels = best;
  m.multiplier = static_cast<double>(best) / static_cast<double>(base);
  m.flops = flops_at(best);
  m.target_flops = target;
  m.rel_gap = std::abs(static_cast<double>(m.flops) - static_cast<double>(target)) / static_cast<double>(target);
  return m;
}

// ---------------------------------------------------------------------------
// Whole-network plan
// ---------------------------------------------------------------------------

struct PlanOptions {
  std::size_t d = 2;
  std::size_t d_min = 2;
  double tau = 0.5;
  StrategyKind strategy = StrategyKind::Uniform;
  bool repetitive_downsample = false;
  std::optional<std::uint64_t> flops_budget;  // gamma: cap on total auxiliary FLOPs
};

struct AuxLayerPlan {
  std::size_t layer = 0;
  std::size_t depth = 0;
  AuxNetworkSpec aux;
  std::uint64_t flops = 0;
  double width_multiplier = 1.0;
};

/// Auxiliary networks for every hidden layer 1..L-1. Layer L trains against
/// the primary classifier and has no entry.
struct AuxPlan {
  PlanOptions options;
  std::string network_name;
  std::uint64_t network_hash = 0;
  std::size_t L = 0;
  std::vector<AuxLayerPlan> layers;
  std::uint64_t primary_flops = 0;
  std::uint64_t aux_flops = 0;

  std::uint64_t total_flops() const { return primary_flops + aux_flops; }
  const AuxLayerPlan& layer(std::size_t l) const { return layers.at(l - 1); }
};

inline AuxPlan plan_all(const ValidatedNetwork& net, const PlanOptions& opt) {
  AuxPlan plan;
  plan.options = opt;
  plan.network_name = net.spec.name;
  plan.network_hash = spec_hash(net.spec);
  plan.L = net.L();
  plan.primary_flops = count_flops(net);
  for (std::size_t l = 1; l < plan.L; ++l) {
    AuxLayerPlan lp;
    lp.layer = l;
    lp.depth = pyramidal_depth(l, plan.L, opt.d, opt.d_min, opt.tau);
    AuxBuildOptions bo;
    bo.repetitive_downsample = opt.repetitive_downsample;
    if (is_handcrafted(opt.strategy)) {
      lp.width_multiplier = match_handcrafted_width(net, l, opt.strategy, lp.depth).multiplier;
      bo.width_multiplier = lp.width_multiplier;
    }
    lp.aux = build_aux(net, l, opt.strategy, lp.depth, bo);
    lp.flops = count_flops(lp.aux);
    plan.aux_flops += lp.flops;
    plan.layers.push_back(std::move(lp));
  }
  if (opt.flops_budget && plan.aux_flops > *opt.flops_budget)
    fail(ErrorCode::FlopsBudgetExceeded,
         "auxiliary FLOPs " + std::to_string(plan.aux_flops) + " exceed budget " + std::to_string(*opt.flops_budget));
  return plan;
}

inline TextDoc to_textdoc(const AuxPlan& plan) {
  using textvalue::from_double;
  TextDoc doc;
  doc.root().set("format", "auglocal-plan").set("version", "1");
  doc.section("plan")
      .set("network", plan.network_name)
      .set("network_hash", std::to_string(plan.network_hash))
      .set("L", std::to_string(plan.L))
      .set("strategy", to_string(plan.options.strategy))
      .set("d", std::to_string(plan.options.d))
      .set("d_min", std::to_string(plan.options.d_min))
      .set("tau", from_double(plan.options.tau))
      .set("repetitive_downsample", textvalue::from_bool(plan.options.repetitive_downsample))
      .set("primary_flops", std::to_string(plan.primary_flops))
      .set("aux_flops", std::to_string(plan.aux_flops))
      .set("total_flops", std::to_string(plan.total_flops()));
  for (const auto& lp : plan.layers) {
    std::string idx, ins, outs, strides;
    for (std::size_t i = 0; i < lp.aux.units.size(); ++i) {
      const char* sep = i ? "," : "";
      idx += sep + std::to_string(lp.aux.source_indices[i]);
      ins += sep + std::to_string(lp.aux.units[i].in_channels);
      outs += sep + std::to_string(lp.aux.units[i].out_channels);
      strides += sep + std::to_string(lp.aux.units[i].stride);
    }
    auto& s = doc.section("layer." + std::to_string(lp.layer));
    s.set("depth", std::to_string(lp.depth))
        .set("indices", idx)
        .set("in_channels", ins)
        .set("out_channels", outs)
        .set("strides", strides)
        .set("structure", notation(lp.aux, true))
        .set("flops", std::to_string(lp.flops));
    if (is_handcrafted(plan.options.strategy)) s.set("width_multiplier", from_double(lp.width_multiplier));
  }
  return doc;
}

}  // namespace auglocal
