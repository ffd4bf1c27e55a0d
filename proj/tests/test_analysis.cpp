// Copyright 2026 The AugLocal Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "auglocal/analysis.hpp"
#include "test_util.hpp"

using namespace auglocal;
using auglocal::testing::error_code_of;
using auglocal::testing::randn;

namespace {

Features random_features(std::size_t n, std::size_t p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Features f{n, p, std::vector<double>(n * p)};
  for (auto& v : f.x) v = nd(rng);
  return f;
}

// Plain HSIC form on explicit centered n x n Gram matrices.
double oracle_cka(const Features& a, const Features& b) {
  const std::size_t n = a.n;
  auto gram = [n](const Features& f) {
    std::vector<double> k(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t c = 0; c < f.p; ++c) k[i * n + j] += f.x[i * f.p + c] * f.x[j * f.p + c];
    // H K H
    std::vector<double> rm(n, 0.0), cm(n, 0.0);
    double all = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        rm[i] += k[i * n + j] / n;
        cm[j] += k[i * n + j] / n;
        all += k[i * n + j] / (n * n);
      }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) k[i * n + j] += all - rm[i] - cm[j];
    return k;
  };
  const auto ka = gram(a), kb = gram(b);
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < n * n; ++i) {
    ab += ka[i] * kb[i];
    aa += ka[i] * ka[i];
    bb += kb[i] * kb[i];
  }
  return ab / std::sqrt(aa * bb);
}

Features rotate(const Features& f, std::uint64_t seed) {
  // random orthogonal p x p by Gram-Schmidt
  const std::size_t p = f.p;
  Features q = random_features(p, p, seed);
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      double dot = 0;
      for (std::size_t c = 0; c < p; ++c) dot += q.x[i * p + c] * q.x[j * p + c];
      for (std::size_t c = 0; c < p; ++c) q.x[i * p + c] -= dot * q.x[j * p + c];
    }
    double nrm = 0;
    for (std::size_t c = 0; c < p; ++c) nrm += q.x[i * p + c] * q.x[i * p + c];
    for (std::size_t c = 0; c < p; ++c) q.x[i * p + c] /= std::sqrt(nrm);
  }
  Features out{f.n, p, std::vector<double>(f.n * p, 0.0)};
  for (std::size_t r = 0; r < f.n; ++r)
    for (std::size_t j = 0; j < p; ++j)
      for (std::size_t c = 0; c < p; ++c) out.x[r * p + j] += f.x[r * p + c] * q.x[c * p + j];
  return out;
}

}  // namespace

TEST(Cka, SelfSimilarityIsOne) {
  const auto x = random_features(40, 7, 1);
  EXPECT_NEAR(linear_cka(x, x), 1.0, 1e-12);
}

TEST(Cka, InvariantToRotationAndScale) {
  const auto x = random_features(50, 6, 2), y = random_features(50, 9, 3);
  const double base = linear_cka(x, y);
  Features scaled = y;
  for (auto& v : scaled.x) v *= 37.5;
  EXPECT_NEAR(linear_cka(x, scaled), base, 1e-9);
  EXPECT_NEAR(linear_cka(rotate(x, 4), y), base, 1e-9);
  EXPECT_NEAR(linear_cka(rotate(x, 4), x), 1.0, 1e-9);
}

TEST(Cka, IndependentGaussiansAreDissimilar) {
  EXPECT_LT(linear_cka(random_features(2000, 5, 5), random_features(2000, 5, 6)), 0.1);
}

TEST(Cka, MatchesOracleInBothForms) {
  // few rows, many columns: Gram form; many rows, few columns: feature form
  for (auto [n, p, q] : std::vector<std::tuple<std::size_t, std::size_t, std::size_t>>{{6, 120, 80}, {300, 3, 4}, {25, 25, 10}}) {
    const auto x = random_features(n, p, 10 + n), y = random_features(n, q, 20 + n);
    Features mixed = y;  // correlate the two a little
    for (std::size_t r = 0; r < n; ++r) mixed.x[r * q] += 2 * x.x[r * p];
    EXPECT_NEAR(linear_cka(x, mixed), oracle_cka(x, mixed), 1e-10) << n << "x" << p;
  }
}

TEST(Cka, DegenerateAndErrors) {
  Features c{10, 3, std::vector<double>(30, 4.0)};  // constant columns center to zero
  EXPECT_EQ(linear_cka(c, random_features(10, 3, 1)), 0.0);
  EXPECT_EQ(error_code_of([] { linear_cka(random_features(10, 3, 1), random_features(11, 3, 1)); }), ErrorCode::RowCountMismatch);
}

TEST(Cka, TensorOverloadFlattensRows) {
  const Tensor a = randn({20, 2, 3, 3}, 8), b = randn({20, 5}, 9);
  Features fb = to_features(b), fa{20, 18, {}};
  for (std::size_t i = 0; i < a.size(); ++i) fa.x.push_back(a[i]);
  EXPECT_NEAR(linear_cka(a, b), oracle_cka(fa, fb), 1e-10);
}

TEST(Cka, ProjectionKeepsSimilarityClose) {
  const auto x = random_features(30, 600, 11);
  Features y = x;
  for (auto& v : y.x) v = v * 2 + 0.1;
  const auto px = random_project(x, 200, 3), py = random_project(y, 200, 3);
  EXPECT_EQ(px.p, 200u);
  EXPECT_NEAR(linear_cka(px, py), 1.0, 1e-9);
}

TEST(LayerwiseCka, IdenticalNetworksAndMismatch) {
  const auto net = validate(tinynet8());
  Model a(net, 1), b(net, 1), c(net, 2);
  const Tensor x = randn({64, 1, 8, 8}, 3);
  const auto same = layerwise_cka(a.primary(), b.primary(), x);
  ASSERT_EQ(same.per_layer.size(), net.L());
  for (double v : same.per_layer) EXPECT_NEAR(v, 1.0, 1e-9);
  EXPECT_NEAR(same.average, 1.0, 1e-9);
  const auto diff = layerwise_cka(a.primary(), c.primary(), x);
  for (double v : diff.per_layer) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0 + 1e-12);
  }
  Model other(validate(tinynet8({1, 8, 8}, 5)), 1);
  EXPECT_EQ(error_code_of([&] { layerwise_cka(a.primary(), other.primary(), x); }), ErrorCode::SpecMismatch);
}

TEST(LinearProbe, SeparableFeaturesProbeWell) {
  SyntheticSpec s;
  s.separation = 12;
  s.grid = 4;
  s.per_class = 40;
  const Dataset tr = gen_synthetic(s, 0), te = gen_synthetic(s, 1);
  Model m(validate(tinynet8()), 0);
  ProbeConfig pc;
  pc.epochs = 20;
  pc.batch_size = 50;
  const auto r = linear_probe(m.primary(), 1, tr, te, pc);
  EXPECT_EQ(r.layer, 1u);
  // random conv features of well separated block means stay separable
  EXPECT_GT(r.test_top1, 0.8);
  EXPECT_EQ(error_code_of([&] { linear_probe(m.primary(), 99, tr, te, pc); }), ErrorCode::InvalidArgument);
}

TEST(PeakMemory, SingleUnitLocalEqualsBp) {
  PrimaryNetworkSpec s = tinynet8();
  s.units.resize(1);
  s.classifier.in_channels = s.units[0].out_channels;
  const auto bp = peak_memory(s, nullptr, TrainMode::BP, 32);
  const auto local = peak_memory(s, nullptr, TrainMode::Local, 32);
  EXPECT_EQ(bp.activation_bytes, local.activation_bytes);
  EXPECT_EQ(bp.parameter_bytes, local.parameter_bytes);
}

TEST(PeakMemory, HandCountedTinyBp) {
  // conv with norm keeps 3 outputs; head keeps pooled input and logits
  PrimaryNetworkSpec s = tinynet8();
  s.units.resize(1);
  s.classifier.in_channels = s.units[0].out_channels;
  const auto out = unit_output_shape(s.units[0], s.input, 1);
  const std::uint64_t elems = s.input.elements() + 3 * out.elements() + s.classifier.in_channels + s.classifier.num_classes;
  EXPECT_EQ(peak_memory(s, nullptr, TrainMode::BP, 2).activation_bytes, 2 * elems * 4);
}

TEST(PeakMemory, ResNet110LocalSavesMemory) {
  const auto net = validate(resnet110_cifar());
  PlanOptions po;
  po.d = 2;
  const AuxPlan plan = plan_all(net, po);
  const auto bp = peak_memory(net.spec, nullptr, TrainMode::BP, 1024);
  const auto local = peak_memory(net.spec, &plan, TrainMode::Local, 1024);
  const double reduction = 1.0 - static_cast<double>(local.total_bytes()) / static_cast<double>(bp.total_bytes());
  EXPECT_GE(reduction, 0.40) << "bp " << bp.total_bytes() << " local " << local.total_bytes();
  EXPECT_EQ(error_code_of([&] { peak_memory(net.spec, nullptr, TrainMode::Local, 8); }), ErrorCode::PlanMismatch);
}
