// Copyright 2026 The AugLocal Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "auglocal/auxbuild.hpp"

using namespace auglocal;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an auglocal::Error";
  return ErrorCode::InvalidArgument;
}

// Depth schedule in exact integer arithmetic for tau = p / q.
std::size_t depth_rational(std::size_t l, std::size_t L, std::size_t d, std::size_t dmin, long p, long q) {
  const long den = q * static_cast<long>(L - 2);
  const long num = static_cast<long>(d) * den - p * static_cast<long>(l - 1) * static_cast<long>(d - dmin);
  const long rounded = (2 * num + den) / (2 * den);
  return std::min<std::size_t>(static_cast<std::size_t>(rounded), L - l + 1);
}

}  // namespace

TEST(PyramidalDepth, SpotValues) {
  EXPECT_EQ(pyramidal_depth(1, 55, 6, 2, 0.5), 6u);
  EXPECT_EQ(pyramidal_depth(54, 55, 6, 2, 0.5), 2u);
  EXPECT_EQ(pyramidal_depth(28, 55, 6, 2, 0.5), 5u);
}

TEST(PyramidalDepth, MatchesExactRationalEvaluation) {
  const std::pair<long, long> taus[] = {{0, 1}, {1, 4}, {1, 2}, {3, 4}, {1, 1}};
  for (std::size_t L : {3, 8, 16, 55})
    for (std::size_t d = 2; d <= 10; ++d)
      for (std::size_t dmin = 2; dmin <= d; ++dmin)
        for (auto [p, q] : taus)
          for (std::size_t l = 1; l < L; ++l)
            ASSERT_EQ(pyramidal_depth(l, L, d, dmin, double(p) / double(q)), depth_rational(l, L, d, dmin, p, q))
                << "l=" << l << " L=" << L << " d=" << d << " dmin=" << dmin << " tau=" << p << "/" << q;
}

TEST(PyramidalDepth, TiesRoundAwayFromZero) {
  // L=6, l=3, d=3, dmin=2, tau=1: 3 - 2/4 = 2.5 -> 3
  EXPECT_EQ(pyramidal_depth(3, 6, 3, 2, 1.0), 3u);
}

TEST(PyramidalDepth, TauZeroIsCappedConstant) {
  for (std::size_t l = 1; l < 16; ++l) EXPECT_EQ(pyramidal_depth(l, 16, 5, 2, 0.0), std::min<std::size_t>(5, 16 - l + 1));
}

TEST(PyramidalDepth, NonIncreasingInLayer) {
  for (double tau : {0.0, 0.3, 0.5, 1.0})
    for (std::size_t d = 2; d <= 9; ++d) {
      std::size_t prev = 1000;
      for (std::size_t l = 1; l < 55; ++l) {
        const auto v = pyramidal_depth(l, 55, d, 2, tau);
        EXPECT_LE(v, prev);
        prev = v;
      }
    }
}

TEST(PyramidalDepth, Errors) {
  EXPECT_EQ(code_of([] { pyramidal_depth(1, 10, 2, 3, 0.5); }), ErrorCode::InvalidDepthBounds);
  EXPECT_EQ(code_of([] { pyramidal_depth(1, 10, 3, 1, 0.5); }), ErrorCode::InvalidDepthBounds);
  EXPECT_EQ(code_of([] { pyramidal_depth(10, 10, 3, 2, 0.5); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([] { pyramidal_depth(1, 10, 3, 2, 1.5); }), ErrorCode::InvalidArgument);
}

TEST(SelectUniform, Examples) {
  EXPECT_EQ(select_uniform(4, 16, 4), (std::vector<std::size_t>{8, 12, 16}));
  EXPECT_EQ(select_uniform(15, 16, 2), (std::vector<std::size_t>{16}));
  EXPECT_EQ(select_uniform(1, 55, 2), (std::vector<std::size_t>{55}));
}

TEST(SelectUniform, Properties) {
  for (std::size_t L : {4, 16, 55})
    for (std::size_t l = 1; l < L; ++l)
      for (std::size_t dl = 2; dl <= L - l + 1; ++dl) {
        auto b = select_uniform(l, L, dl);
        ASSERT_EQ(b.size(), dl - 1);
        EXPECT_EQ(b.back(), L);
        EXPECT_GT(b.front(), l);
        for (std::size_t i = 1; i < b.size(); ++i) EXPECT_LT(b[i - 1], b[i]);
        if (dl - 1 == L - l) {
          EXPECT_EQ(b, select_sequential(l, L, dl));
        }
      }
}

TEST(SelectUniform, Errors) {
  EXPECT_EQ(code_of([] { select_uniform(15, 16, 3); }), ErrorCode::DepthExceedsRemaining);
  EXPECT_EQ(code_of([] { select_sequential(15, 16, 3); }), ErrorCode::DepthExceedsRemaining);
  EXPECT_EQ(code_of([] { select_uniform(3, 16, 1); }), ErrorCode::InvalidDepthBounds);
}

TEST(SelectSequential, Examples) {
  EXPECT_EQ(select_sequential(4, 16, 4), (std::vector<std::size_t>{5, 6, 7}));
  EXPECT_EQ(select_sequential(15, 16, 2), (std::vector<std::size_t>{16}));
}

TEST(SelectRepetitive, Examples) {
  EXPECT_EQ(select_repetitive(7, 4), (std::vector<std::size_t>{7, 7, 7}));
  EXPECT_EQ(select_repetitive(7, 2), (std::vector<std::size_t>{7}));
}

TEST(BuildAux, ResNet110StageOneUniformDepthTwo) {
  auto net = validate(resnet110_cifar());
  for (std::size_t l = 1; l <= 19; ++l) {
    auto a = build_aux(net, l, StrategyKind::Uniform, 2);
    ASSERT_EQ(a.units.size(), 1u);
    const auto& u = a.units[0];
    EXPECT_EQ(u.kind, UnitKind::ResidualBasicBlock);
    EXPECT_EQ(u.in_channels, 16u);
    EXPECT_EQ(u.out_channels, 64u);
    EXPECT_EQ(u.stride, 2u);
    EXPECT_TRUE(u.needs_projection());
    EXPECT_EQ(notation(a), "64R-AP-10FC");
  }
}

TEST(BuildAux, RepetitiveKeepsUnitShape) {
  auto net = validate(resnet110_cifar());
  auto a = build_aux(net, 7, StrategyKind::Repetitive, 3);
  ASSERT_EQ(a.units.size(), 2u);
  for (const auto& u : a.units) {
    EXPECT_EQ(u, net.unit(7));
    EXPECT_FALSE(u.needs_projection());
  }
  auto down = build_aux(net, 7, StrategyKind::Repetitive, 3, {1.0, true});
  EXPECT_EQ(down.units[0].stride, 2u);
  EXPECT_EQ(down.units[1].stride, 1u);
}

TEST(BuildAux, AdaptationInvariants) {
  for (const auto& spec : {resnet32_cifar(), resnet110_cifar(), vgg19_cifar(), tinynet8()}) {
    auto net = validate(spec);
    for (auto strategy : {StrategyKind::Uniform, StrategyKind::Sequential, StrategyKind::Repetitive})
      for (std::size_t l = 1; l < net.L(); ++l)
        for (std::size_t dl = 2; dl <= std::min<std::size_t>(net.L() - l + 1, 6); ++dl) {
          auto a = build_aux(net, l, strategy, dl);
          std::size_t in = net.out_shape(l).c;
          for (std::size_t i = 0; i < a.units.size(); ++i) {
            const auto& u = a.units[i];
            EXPECT_EQ(u.in_channels, in);
            EXPECT_EQ(u.stride == 2, u.out_channels >= 2 * u.in_channels);
            EXPECT_EQ(u.kind, net.unit(a.source_indices[i]).kind);
            EXPECT_EQ(u.out_channels, net.unit(a.source_indices[i]).out_channels);
            in = u.out_channels;
          }
          EXPECT_EQ(a.classifier.in_channels, in);
          EXPECT_EQ(a.classifier.num_classes, net.spec.num_classes());
          EXPECT_EQ(a.depth(), dl);
        }
  }
}

TEST(BuildAux, HandcraftedWidthMatchesUniformFlops) {
  auto net = validate(resnet32_cifar());
  for (auto kind : {StrategyKind::HandcraftedC3x3, StrategyKind::HandcraftedC1x1})
    for (std::size_t l : {1, 6, 12}) {
      auto m = match_handcrafted_width(net, l, kind, 3);
      EXPECT_LE(m.rel_gap, 0.05) << to_string(kind) << " l=" << l;
      auto a = build_aux(net, l, kind, 3, {m.multiplier, false});
      EXPECT_EQ(count_flops(a), m.flops);
      ASSERT_EQ(a.units.size(), 2u);
      for (const auto& u : a.units) {
        EXPECT_EQ(u.out_channels, m.channels);
        EXPECT_EQ(u.kernel(), kind == StrategyKind::HandcraftedC3x3 ? 3u : 1u);
      }
    }
}

TEST(Strategy, ParseRoundTripAndUnknown) {
  for (auto s : {StrategyKind::Uniform, StrategyKind::Sequential, StrategyKind::Repetitive, StrategyKind::HandcraftedC1x1,
                 StrategyKind::HandcraftedC3x3})
    EXPECT_EQ(parse_strategy(to_string(s)), s);
  EXPECT_EQ(code_of([] { parse_strategy("random"); }), ErrorCode::UnknownStrategy);
  auto net = validate(tinynet8());
  EXPECT_EQ(code_of([&] { build_aux(net, 1, static_cast<StrategyKind>(42), 2); }), ErrorCode::UnknownStrategy);
}

TEST(PlanAll, CoversHiddenLayersOnly) {
  auto net = validate(resnet32_cifar());
  auto plan = plan_all(net, {4, 2, 0.5, StrategyKind::Uniform, false, std::nullopt});
  EXPECT_EQ(plan.layers.size(), 15u);
  std::uint64_t sum = 0;
  for (const auto& lp : plan.layers) {
    EXPECT_EQ(lp.depth, pyramidal_depth(lp.layer, 16, 4, 2, 0.5));
    EXPECT_EQ(lp.aux.depth(), lp.depth);
    sum += lp.flops;
  }
  EXPECT_EQ(plan.aux_flops, sum);
  EXPECT_EQ(plan.primary_flops, count_flops(net));
}

TEST(PlanAll, TauOrdersTotalFlops) {
  for (const auto& spec : {resnet32_cifar(), resnet110_cifar(), vgg19_cifar(), tinynet8()}) {
    auto net = validate(spec);
    auto total = [&](double tau) { return plan_all(net, {5, 2, tau, StrategyKind::Uniform, false, std::nullopt}).total_flops(); };
    EXPECT_LT(total(1.0), total(0.5)) << spec.name;
    EXPECT_LT(total(0.5), total(0.0)) << spec.name;
  }
}

TEST(PlanAll, BudgetEnforced) {
  auto net = validate(tinynet8());
  auto plan = plan_all(net, {3, 2, 0.5, StrategyKind::Uniform, false, std::nullopt});
  EXPECT_NO_THROW(plan_all(net, {3, 2, 0.5, StrategyKind::Uniform, false, plan.aux_flops}));
  EXPECT_EQ(code_of([&] { plan_all(net, {3, 2, 0.5, StrategyKind::Uniform, false, plan.aux_flops - 1}); }),
            ErrorCode::FlopsBudgetExceeded);
}

TEST(PlanAll, TextEmission) {
  auto net = validate(tinynet8());
  auto doc = to_textdoc(plan_all(net, {3, 2, 0.5, StrategyKind::Uniform, false, std::nullopt}));
  const auto* l1 = doc.find_section("layer.1");
  ASSERT_NE(l1, nullptr);
  EXPECT_EQ(*l1->find("depth"), "3");
  EXPECT_EQ(*l1->find("indices"), "5,8");
  EXPECT_EQ(*l1->find("strides"), "2,1");
  EXPECT_EQ(doc.find_section("layer.8"), nullptr);
  EXPECT_EQ(TextDoc::parse(doc.emit()).emit(), doc.emit());
}
