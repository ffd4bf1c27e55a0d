// Copyright 2026 The AugLocal Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "auglocal/netspec.hpp"

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

}  // namespace

TEST(Presets, ResNetLocalUnitCounts) {
  EXPECT_EQ(validate(resnet32_cifar()).L(), 16u);
  EXPECT_EQ(validate(resnet110_cifar()).L(), 55u);
  EXPECT_EQ(validate(tinynet8()).L(), 8u);
  EXPECT_EQ(validate(vgg19_cifar()).L(), 16u);
}

TEST(Presets, ResNetShapes) {
  auto v = validate(resnet110_cifar());
  EXPECT_EQ(v.out_shape(1), (ActShape{16, 32, 32}));
  EXPECT_EQ(v.out_shape(19), (ActShape{16, 32, 32}));
  EXPECT_EQ(v.out_shape(20), (ActShape{32, 16, 16}));
  EXPECT_EQ(v.out_shape(55), (ActShape{64, 8, 8}));
  EXPECT_TRUE(v.unit(20).needs_projection());
  EXPECT_FALSE(v.unit(21).needs_projection());
}

TEST(Validate, ChannelChainBreak) {
  PrimaryNetworkSpec s;
  s.input = {4, 1, 1};
  s.units = {{UnitKind::Dense, 4, 3, 1, false}, {UnitKind::Dense, 5, 2, 1, false}};
  s.classifier = {2, 2};
  EXPECT_EQ(code_of([&] { validate(s); }), ErrorCode::ChannelChainBreak);
  s.units[1].in_channels = 3;
  EXPECT_NO_THROW(validate(s));
  s.classifier.in_channels = 3;
  EXPECT_EQ(code_of([&] { validate(s); }), ErrorCode::ChannelChainBreak);
}

TEST(Validate, SpatialCollapse) {
  PrimaryNetworkSpec s;
  s.input = {1, 2, 2};
  s.units = {{UnitKind::Conv3x3, 1, 2, 2, true}, {UnitKind::Conv3x3, 2, 4, 2, true}};
  s.classifier = {4, 2};
  EXPECT_EQ(code_of([&] { validate(s); }), ErrorCode::SpatialCollapse);
}

TEST(Validate, NeedsTwoUnits) {
  auto s = tinynet8();
  s.units.resize(1);
  s.classifier.in_channels = 16;
  EXPECT_EQ(code_of([&] { validate(s); }), ErrorCode::InvalidArgument);
}

TEST(Flops, DenseIsInTimesOut) {
  LocalUnitSpec u{UnitKind::Dense, 12, 5, 1, false};
  EXPECT_EQ(unit_flops(u, {3, 2, 2}), 60u);
  EXPECT_EQ(classifier_flops({7, 3}), 21u);
}

TEST(Flops, ConvCountsOutputTimesKernelTimesInput) {
  LocalUnitSpec u{UnitKind::Conv3x3, 3, 16, 2, true};
  EXPECT_EQ(unit_flops(u, {3, 8, 8}), 4u * 4 * 16 * 9 * 3);
  LocalUnitSpec r{UnitKind::ResidualBasicBlock, 16, 32, 2, true};
  EXPECT_EQ(unit_flops(r, {16, 32, 32}), 256u * 32 * (9 * 16 + 9 * 32 + 16));
}

TEST(Flops, Additivity) {
  auto v = validate(resnet32_cifar());
  std::uint64_t parts = classifier_flops(v.spec.classifier);
  for (std::size_t l = 1; l <= v.L(); ++l) parts += unit_flops(v.unit(l), v.in_shape(l));
  EXPECT_EQ(count_flops(v), parts);
}

TEST(Flops, Monotonicity) {
  auto s = tinynet8();
  const auto before = count_flops(validate(s));
  s.units.push_back({UnitKind::Conv1x1, 32, 32, 1, true});
  EXPECT_GT(count_flops(validate(s)), before);
}

TEST(Flops, DoublingChannelsQuadruplesConvFlops) {
  auto s = tinynet8({2, 8, 8});
  auto d = s;
  for (auto& u : d.units) {
    u.in_channels *= 2;
    u.out_channels *= 2;
  }
  d.input.c *= 2;
  d.classifier.in_channels *= 2;
  auto conv_only = [](const PrimaryNetworkSpec& x) { return count_flops(validate(x)) - classifier_flops(x.classifier); };
  EXPECT_EQ(conv_only(d), 4 * conv_only(s));
}

TEST(Params, Basic) {
  EXPECT_EQ(unit_params({UnitKind::Dense, 6, 4, 1, false}), 28u);
  EXPECT_EQ(unit_params({UnitKind::Conv3x3, 3, 5, 1, false}), 135u);
  EXPECT_EQ(unit_params({UnitKind::Conv3x3, 3, 5, 1, true}), 145u);
}

TEST(Params, ResNet32HandAudit) {
  // stem 9*3*16 + 32 = 464
  // stage 1: 5 x (2*9*16*16 + 64) = 23360
  // stage 2: (9*16*32 + 9*32*32 + 128 + 16*32 + 64) + 4 x (2*9*32*32 + 128) = 14528 + 74240
  // stage 3: (9*32*64 + 9*64*64 + 256 + 32*64 + 128) + 4 x (2*9*64*64 + 256) = 57728 + 295936
  // classifier 64*10 + 10 = 650
  EXPECT_EQ(count_params(validate(resnet32_cifar())), 466906u);
}

TEST(Notation, AuxStyle) {
  AuxNetworkSpec a;
  a.units = {{UnitKind::ResidualBasicBlock, 16, 64, 2, true}};
  a.classifier = {64, 10};
  EXPECT_EQ(notation(a), "64R-AP-10FC");
  EXPECT_EQ(notation(a, true), "64Rs2-AP-10FC");
}

TEST(TextForm, RoundTripIsLossless) {
  for (const auto& s : {resnet32_cifar(), resnet110_cifar(), vgg19_cifar(), tinynet8({3, 16, 16}, 4)}) {
    const std::string text = to_textdoc(s).emit();
    const auto back = from_textdoc(TextDoc::parse(text));
    EXPECT_EQ(back, s);
    EXPECT_EQ(to_textdoc(back).emit(), text);
  }
}

TEST(TextForm, FailsClosed) {
  std::string text = to_textdoc(tinynet8()).emit();
  auto with = [&](const std::string& from, const std::string& to) {
    std::string t = text;
    t.replace(t.find(from), from.size(), to);
    return t;
  };
  EXPECT_EQ(code_of([&] { from_textdoc(TextDoc::parse(with("has_norm = true", "has_norm = true\ncolour = red"))); }),
            ErrorCode::ConfigError);
  EXPECT_EQ(code_of([&] { from_textdoc(TextDoc::parse(with("kind = conv3x3", "kind = conv5x5"))); }), ErrorCode::ConfigError);
  EXPECT_EQ(code_of([&] { from_textdoc(TextDoc::parse(with("version = 1", "version = 2"))); }), ErrorCode::ConfigError);
  EXPECT_EQ(code_of([&] { from_textdoc(TextDoc::parse(text + "\n[unit.9]\nkind = conv3x3\n")); }), ErrorCode::ConfigError);
}

TEST(TextDoc, ParsesCommentsAndRejectsDuplicates) {
  auto d = TextDoc::parse("# c\na = 1\n\n[s.t]\nb = x y\n");
  EXPECT_EQ(*d.root().find("a"), "1");
  EXPECT_EQ(*d.find_section("s.t")->find("b"), "x y");
  EXPECT_EQ(code_of([] { TextDoc::parse("a = 1\na = 2\n"); }), ErrorCode::ConfigError);
  EXPECT_EQ(code_of([] { TextDoc::parse("[s]\n[s]\n"); }), ErrorCode::ConfigError);
  EXPECT_EQ(code_of([] { TextDoc::parse("novalue\n"); }), ErrorCode::ConfigError);
}

TEST(SpecHash, SensitiveToChange) {
  auto a = tinynet8();
  auto b = a;
  b.units[3].stride = 2;
  EXPECT_EQ(spec_hash(a), spec_hash(tinynet8()));
  EXPECT_NE(spec_hash(a), spec_hash(b));
}
