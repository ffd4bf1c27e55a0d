// Copyright 2026 The AugLocal Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <chrono>
#include <random>
#include <thread>

#include "auglocal/pipeline.hpp"
#include "test_util.hpp"

using namespace auglocal;
using auglocal::testing::error_code_of;

TEST(PredictTimes, WorkedExample) {
  const auto p = predict_times(55, 2, 1.0, 1.0, 1000);
  EXPECT_DOUBLE_EQ(p.bp_time, 112000.0);
  EXPECT_DOUBLE_EQ(p.auglocal_time, 6055.0);
  EXPECT_NEAR(p.ratio, 6055.0 / 112000.0, 1e-15);
  EXPECT_NEAR(p.ratio, 0.0541, 5e-5);
}

TEST(PredictTimes, Limits) {
  // d = L: ratio tends to 1 as N grows
  EXPECT_NEAR(predict_times(20, 20, 1.0, 2.0, 10000000).ratio, 1.0, 1e-6);
  // one layer, one batch
  const auto p = predict_times(1, 3, 0.5, 0.25, 1);
  EXPECT_DOUBLE_EQ(p.auglocal_time, 0.5 + 4 * 0.75);
  EXPECT_DOUBLE_EQ(p.bp_time, 2 * 0.75);
  EXPECT_EQ(error_code_of([] { predict_times(0, 1, 1, 1, 1); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(error_code_of([] { predict_times(3, 1, 1, 0, 1); }), ErrorCode::InvalidArgument);
}

TEST(PredictTimes, RatioGapAtTenL) {
  // (r - (d+1)/(L+1)) (L+1) = t_f L / ((t_f+t_b) N), worked by hand
  for (std::size_t L : {5, 17, 55, 110})
    for (std::size_t d : {1, 2, 4}) {
      const std::size_t N = 10 * L;
      const double r = predict_times(L, d, 1.0, 1.0, N).ratio;
      const double asym = static_cast<double>(d + 1) / static_cast<double>(L + 1);
      EXPECT_NEAR(r - asym, 1.0 / (20.0 * static_cast<double>(L + 1)), 1e-12);
      EXPECT_NEAR((r - asym) / asym, 1.0 / (20.0 * static_cast<double>(d + 1)), 1e-12);
    }
}

TEST(Simulator, HandTraceTwoLayersOneBatch) {
  PipelineConfig c;
  c.L = 2;
  c.d = 2;
  c.t_f = 1.0;
  c.t_b = 2.0;
  c.N = 1;
  // worker 1 emits at t_f; worker 2 then runs t_f + 3 (t_f + t_b)
  const auto r = simulate_pipeline(c);
  EXPECT_EQ(r.makespan_ticks, to_ticks(2 * 1.0 + 3 * 3.0));
  EXPECT_EQ(r.events, 4u);
}

TEST(Simulator, MatchesClosedFormExactly) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 60; ++trial) {
    PipelineConfig c;
    c.L = 1 + rng() % 60;
    c.d = 1 + rng() % c.L;
    c.t_f = 1e-3 * static_cast<double>(1 + rng() % 50);
    c.t_b = 1e-3 * static_cast<double>(1 + rng() % 50);
    c.N = 1 + rng() % 200;
    EXPECT_EQ(simulate_pipeline(c).makespan_ticks, closed_form_ticks(c)) << c.L << " " << c.d << " " << c.N;
  }
}

TEST(Simulator, WorkedExampleRatio) {
  PipelineConfig c;
  c.L = 55;
  c.t_f = c.t_b = 1.0;
  c.d = 2;
  c.N = 1000;
  const double bp = predict_times(55, 2, 1, 1, 1000).bp_time;
  EXPECT_NEAR(simulate_pipeline(c).makespan / bp, 0.0541, 5e-5);
}

TEST(Simulator, CapacityOneMatchesUnbounded) {
  for (std::size_t L : {3, 12, 40}) {
    PipelineConfig c;
    c.L = L;
    c.d = 3;
    c.t_f = 0.003;
    c.t_b = 0.011;
    c.N = 50;
    const Ticks unbounded = simulate_pipeline(c).makespan_ticks;
    c.queue_capacity = 1;
    EXPECT_EQ(simulate_pipeline(c).makespan_ticks, unbounded);
  }
}

TEST(Simulator, JitterOnlySlowsDown) {
  PipelineConfig c;
  c.L = 8;
  c.d = 2;
  c.t_f = 0.01;
  c.t_b = 0.02;
  c.N = 20;
  c.jitter = 0.2;
  const Ticks mean = closed_form_ticks(c);
  int slower = 0;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    c.seed = s;
    slower += simulate_pipeline(c).makespan_ticks >= mean;
  }
  EXPECT_GE(slower, 950);
}

TEST(Simulator, DeadlockIsReported) {
  PipelineConfig c;
  c.L = 3;
  c.N = 2;
  EXPECT_EQ(error_code_of([&] { detail::simulate_events(c, 0); }), ErrorCode::DeadlockDetected);
}

TEST(Simulator, VariableDepths) {
  PipelineConfig c;
  c.L = 3;
  c.depths = {1, 3, 2};
  c.t_f = 1;
  c.t_b = 1;
  c.N = 10;
  // bottleneck worker 2 with period 4 * 2
  const auto r = simulate_pipeline(c);
  EXPECT_GE(r.makespan_ticks, to_ticks(10 * 8.0));
  EXPECT_LE(r.makespan_ticks, to_ticks(10 * 8.0 + 3 * 1.0 + 8.0));
}

TEST(SpscQueue, OrderCapacityAndClose) {
  SpscQueue<int> q(2);
  std::thread prod([&] {
    for (int i = 0; i < 1000; ++i) ASSERT_TRUE(q.push(i));
    q.close();
  });
  int expect = 0;
  while (auto v = q.pop()) EXPECT_EQ(*v, expect++);
  prod.join();
  EXPECT_EQ(expect, 1000);
  EXPECT_FALSE(q.push(1));
}

TEST(SpscQueue, CloseReleasesBlockedConsumer) {
  SpscQueue<int> q(1);
  std::thread cons([&] { EXPECT_FALSE(q.pop().has_value()); });
  std::this_thread::sleep_for(std::chrono::milliseconds(20));
  q.close();
  cons.join();
}

TEST(Partition, ContiguousBalanced) {
  const auto g = partition_layers(8, 3);
  ASSERT_EQ(g.size(), 3u);
  EXPECT_EQ(g[0], (std::pair<std::size_t, std::size_t>{1, 3}));
  EXPECT_EQ(g[1], (std::pair<std::size_t, std::size_t>{4, 6}));
  EXPECT_EQ(g[2], (std::pair<std::size_t, std::size_t>{7, 8}));
  EXPECT_EQ(partition_layers(4, 9).size(), 4u);
}

namespace {

Dataset small_set(std::uint64_t stream) {
  SyntheticSpec s;
  s.per_class = 16;
  s.grid = 4;
  s.separation = 6;
  return gen_synthetic(s, stream);
}

TrainConfig small_cfg() {
  TrainConfig c;
  c.mode = TrainMode::Local;
  c.d = 2;
  c.epochs = 2;
  c.batch_size = 16;
  c.lr0 = 0.05;
  c.seed = 3;
  return c;
}

void expect_same_rows(const std::vector<MetricsRow>& a, const std::vector<MetricsRow>& b) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].epoch, b[i].epoch);
    EXPECT_EQ(a[i].split, b[i].split);
    EXPECT_EQ(a[i].loss, b[i].loss) << "row " << i;
    EXPECT_EQ(a[i].top1, b[i].top1);
    EXPECT_EQ(a[i].lr, b[i].lr);
  }
}

void expect_same_params(Model& a, Model& b) {
  auto pa = a.all_parameters(), pb = b.all_parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_TRUE(pa[i]->value == pb[i]->value) << pa[i]->name;
}

}  // namespace

TEST(TrainPipelined, BitIdenticalToSequential) {
  const auto net = validate(tinynet8());
  const Dataset tr = small_set(0), te = small_set(1);
  const TrainConfig cfg = small_cfg();
  Model ref = make_model(net, cfg);
  const auto ref_rows = train(ref, tr, &te, cfg);
  for (bool barrier : {false, true})
    for (std::size_t threads : {4, 8}) {
      Model m = make_model(net, cfg);
      PipelineOptions po;
      po.threads = threads;
      po.barrier = barrier;
      const auto rows = train_pipelined(m, tr, &te, cfg, po);
      SCOPED_TRACE(std::string(barrier ? "barrier" : "stream") + " threads=" + std::to_string(threads));
      expect_same_rows(ref_rows, rows);
      expect_same_params(ref, m);
    }
}

TEST(TrainPipelined, WorkerErrorPropagates) {
  const auto net = validate(tinynet8());
  Dataset tr = small_set(0);
  tr.labels[tr.size() / 2] = 42;
  const TrainConfig cfg = small_cfg();
  for (bool barrier : {false, true}) {
    Model m = make_model(net, cfg);
    PipelineOptions po;
    po.threads = 4;
    po.barrier = barrier;
    EXPECT_EQ(error_code_of([&] { train_pipelined(m, tr, nullptr, cfg, po); }), ErrorCode::WorkerPanicPropagated);
  }
}

TEST(TrainPipelined, NeedsLocalModel) {
  const auto net = validate(tinynet8());
  TrainConfig cfg = small_cfg();
  cfg.mode = TrainMode::BP;
  Model m = make_model(net, cfg);
  EXPECT_EQ(error_code_of([&] { train_pipelined(m, small_set(0), nullptr, cfg, {}); }), ErrorCode::PlanMismatch);
}

TEST(TrainPipelined, WallClockSpeedup) {
  const auto net = validate(tinynet8());
  const Dataset tr = small_set(0);
  TrainConfig cfg = small_cfg();
  cfg.epochs = 1;
  auto time_run = [&](std::size_t threads) {
    Model m = make_model(net, cfg);
    PipelineOptions po;
    po.threads = threads;
    const auto t0 = std::chrono::steady_clock::now();
    train_pipelined(m, tr, nullptr, cfg, po);
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };
  const double one = time_run(1), eight = time_run(8);
  RecordProperty("seconds_1_thread", std::to_string(one));
  RecordProperty("seconds_8_threads", std::to_string(eight));
  std::printf("pipelined wall clock: 1 thread %.3fs, 8 threads %.3fs\n", one, eight);
  if (std::thread::hardware_concurrency() < 2) GTEST_SKIP() << "single core: speedup not measurable";
  EXPECT_LT(eight, one);
}
