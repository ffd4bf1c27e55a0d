// Copyright 2026 The AugLocal Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <algorithm>
#include <barrier>
#include <functional>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <queue>
#include <random>
#include <thread>
#include <vector>

#include "auglocal/trainer.hpp"

namespace auglocal {

// ---------------------------------------------------------------------------
// Closed-form time model
// ---------------------------------------------------------------------------

struct PredictedTimes {
  double bp_time = 0;
  double auglocal_time = 0;
  double ratio = 0;
};

/// BP: (L+1)(t_f+t_b)N. Layer-parallel local learning: t_f L + (d+1)(t_f+t_b)N.
inline PredictedTimes predict_times(std::size_t L, std::size_t d, double t_f, double t_b, std::size_t N) {
  if (L == 0 || N == 0 || !(t_f > 0) || !(t_b > 0)) fail(ErrorCode::InvalidArgument, "time model needs L, N, t_f, t_b > 0");
  PredictedTimes p;
  const double step = t_f + t_b;
  p.bp_time = static_cast<double>(L + 1) * step * static_cast<double>(N);
  p.auglocal_time = t_f * static_cast<double>(L) + static_cast<double>(d + 1) * step * static_cast<double>(N);
  p.ratio = p.auglocal_time / p.bp_time;
  return p;
}

// ---------------------------------------------------------------------------
// Discrete-event simulation
// ---------------------------------------------------------------------------

using Ticks = std::int64_t;  // nanoseconds

inline Ticks to_ticks(double seconds) { return static_cast<Ticks>(std::llround(seconds * 1e9)); }

inline constexpr std::size_t kUnboundedQueue = std::numeric_limits<std::size_t>::max();

struct PipelineConfig {
  std::size_t L = 2;
  std::size_t d = 2;
  std::vector<std::size_t> depths;  // per-layer d; empty means d everywhere
  double t_f = 1.0;                 // seconds per layer forward
  double t_b = 1.0;                 // seconds per layer backward
  std::size_t N = 1;
  std::size_t queue_capacity = kUnboundedQueue;
  double jitter = 0.0;  // > 0: each layer time drawn uniformly from mean * [1 - jitter, 1 + jitter]
  std::uint64_t seed = 0;

  void validate() const {
    if (L < 1 || N < 1) fail(ErrorCode::InvalidArgument, "pipeline needs L >= 1 and N >= 1");
    if (!(t_f > 0) || !(t_b > 0)) fail(ErrorCode::InvalidArgument, "t_f and t_b must be positive");
    if (queue_capacity < 1) fail(ErrorCode::InvalidArgument, "queue_capacity must be >= 1");
    if (!depths.empty() && depths.size() != L) fail(ErrorCode::InvalidArgument, "depths must list one value per layer");
    if (jitter < 0 || jitter >= 1) fail(ErrorCode::InvalidArgument, "jitter must lie in [0, 1)");
  }

  std::size_t depth(std::size_t l) const { return depths.empty() ? d : depths[l - 1]; }
};

struct SimulationResult {
  Ticks makespan_ticks = 0;
  double makespan = 0;               // seconds
  std::vector<double> utilization;  // busy fraction per worker
  std::size_t events = 0;
};

namespace detail {

/// Event core. Worker l handles iteration n as follows: it starts once the
/// activation of iteration n from worker l-1 is queued (worker 1 always has
/// input), its previous iteration is finished, and its output queue has a
/// free slot (reserved at start, released when worker l+1 starts on it).
/// It emits its activation one layer-forward after starting; the iteration
/// costs (d_l + 1)(t_f + t_b), with the next forward overlapped into that
/// window, so only the first iteration pays an extra t_f.
inline SimulationResult simulate_events(const PipelineConfig& cfg, std::size_t capacity) {
  const std::size_t L = cfg.L;
  const Ticks tf = to_ticks(cfg.t_f), tb = to_ticks(cfg.t_b);
  std::mt19937_64 rng(fnv1a64("pipeline-sim", cfg.seed));
  std::uniform_real_distribution<double> u(1.0 - cfg.jitter, 1.0 + cfg.jitter);
  auto draw = [&](Ticks mean) { return cfg.jitter > 0 ? static_cast<Ticks>(std::llround(static_cast<double>(mean) * u(rng))) : mean; };

  struct Event {
    Ticks time;
    std::uint64_t seq;
    bool finish;  // false: emit
    std::size_t worker;
    bool operator>(const Event& o) const { return time != o.time ? time > o.time : seq > o.seq; }
  };
  std::priority_queue<Event, std::vector<Event>, std::greater<>> events;
  std::uint64_t seq = 0;

  std::vector<std::size_t> next_iter(L + 1, 1), done(L + 1, 0);
  std::vector<bool> busy(L + 1, false);
  std::vector<std::size_t> ready(L + 2, 0);     // activations queued for worker l
  std::vector<std::size_t> occupied(L + 1, 0);  // slots held in worker l's output queue
  std::vector<Ticks> busy_time(L + 1, 0);

  auto try_start = [&](std::size_t l, Ticks now) {
    if (busy[l] || next_iter[l] > cfg.N) return;
    if (l > 1 && ready[l] == 0) return;
    if (l < L && occupied[l] >= capacity) return;
    if (l > 1) {
      --ready[l];
      --occupied[l - 1];
    }
    if (l < L) ++occupied[l];
    busy[l] = true;
    const std::size_t n = next_iter[l]++;
    const Ticks emit = draw(tf);
    Ticks cost = 0;
    for (std::size_t i = 0; i < cfg.depth(l) + 1; ++i) cost += (i == 0 ? emit : draw(tf)) + draw(tb);
    if (n == 1) cost += emit;
    busy_time[l] += cost;
    events.push({now + emit, seq++, false, l});
    events.push({now + cost, seq++, true, l});
  };

  Ticks now = 0;
  for (std::size_t l = 1; l <= L; ++l) try_start(l, now);
  std::size_t processed = 0;
  while (!events.empty()) {
    Event e = events.top();
    events.pop();
    now = e.time;
    ++processed;
    if (e.finish) {
      busy[e.worker] = false;
      ++done[e.worker];
      try_start(e.worker, now);
      if (e.worker > 1) try_start(e.worker - 1, now);
    } else if (e.worker < L) {
      ++ready[e.worker + 1];
      try_start(e.worker + 1, now);
    }
    // A start on worker l can free a slot upstream.
    for (std::size_t l = 1; l <= L; ++l) try_start(l, now);
  }
  for (std::size_t l = 1; l <= L; ++l)
    if (done[l] != cfg.N)
      fail(ErrorCode::DeadlockDetected, "worker " + std::to_string(l) + " finished " + std::to_string(done[l]) + " of " +
                                            std::to_string(cfg.N) + " iterations when events ran out");

  SimulationResult r;
  r.makespan_ticks = now;
  r.makespan = static_cast<double>(now) * 1e-9;
  r.events = processed;
  for (std::size_t l = 1; l <= L; ++l) r.utilization.push_back(now > 0 ? static_cast<double>(busy_time[l]) / static_cast<double>(now) : 0.0);
  return r;
}

}  // namespace detail

inline SimulationResult simulate_pipeline(const PipelineConfig& cfg) {
  cfg.validate();
  return detail::simulate_events(cfg, cfg.queue_capacity);
}

/// The closed form in ticks, for exact comparison with the simulator.
inline Ticks closed_form_ticks(const PipelineConfig& cfg) {
  const Ticks tf = to_ticks(cfg.t_f), tb = to_ticks(cfg.t_b);
  return tf * static_cast<Ticks>(cfg.L) + static_cast<Ticks>(cfg.d + 1) * (tf + tb) * static_cast<Ticks>(cfg.N);
}

// ---------------------------------------------------------------------------
// Layer-parallel training
// ---------------------------------------------------------------------------

/// Single-producer single-consumer bounded queue. close() releases both
/// sides: push then fails, pop drains what is left and returns nullopt.
template <class T>
class SpscQueue {
 public:
  explicit SpscQueue(std::size_t capacity) : capacity_(capacity) {
    if (capacity < 1) fail(ErrorCode::InvalidArgument, "queue capacity must be >= 1");
  }

  bool push(T item) {
    std::unique_lock<std::mutex> lk(mu_);
    not_full_.wait(lk, [&] { return closed_ || items_.size() < capacity_; });
    if (closed_) return false;
    items_.push_back(std::move(item));
    not_empty_.notify_one();
    return true;
  }

  std::optional<T> pop() {
    std::unique_lock<std::mutex> lk(mu_);
    not_empty_.wait(lk, [&] { return closed_ || !items_.empty(); });
    if (items_.empty()) return std::nullopt;
    std::optional<T> out = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return out;
  }

  void close() {
    {
      std::lock_guard<std::mutex> lk(mu_);
      closed_ = true;
    }
    not_full_.notify_all();
    not_empty_.notify_all();
  }

 private:
  std::size_t capacity_;
  std::deque<T> items_;
  std::mutex mu_;
  std::condition_variable not_full_, not_empty_;
  bool closed_ = false;
};

struct PipelineOptions {
  std::size_t threads = 1;
  std::size_t queue_capacity = 1;
  bool barrier = false;          // lock-step ticks: worker w handles step t - w at tick t
  bool check_isolation = true;   // every tape may only reach its own layer's parameters
};

/// Contiguous layer groups, one per worker: sizes differ by at most one.
inline std::vector<std::pair<std::size_t, std::size_t>> partition_layers(std::size_t L, std::size_t workers) {
  workers = std::max<std::size_t>(1, std::min(workers, L));
  std::vector<std::pair<std::size_t, std::size_t>> groups;
  std::size_t first = 1;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t size = L / workers + (w < L % workers ? 1 : 0);
    groups.emplace_back(first, first + size - 1);
    first += size;
  }
  return groups;
}

namespace detail {

struct Packet {
  std::size_t step = 0;
  Tensor h;
  std::shared_ptr<const std::vector<int>> labels;
};

inline void check_tape_isolation(const Tape& tape, const std::vector<Parameter*>& owned, std::size_t layer) {
  for (std::size_t i = 0; i < tape.size(); ++i) {
    const auto& n = tape.node(i);
    if (!n.param) continue;
    if (std::find(owned.begin(), owned.end(), n.param) == owned.end())
      fail(ErrorCode::InvalidArgument, "tape of layer " + std::to_string(layer) + " reaches parameter " + n.param->name);
  }
  if (tape.empty() || tape.node(0).requires_grad)
    fail(ErrorCode::InvalidArgument, "tape of layer " + std::to_string(layer) + " does not start from a detached input");
}

}  // namespace detail

/// Trains `model` with one worker per contiguous group of local layers.
/// Workers exchange detached activations through bounded queues; every
/// worker exclusively owns its layers' parameters, norm statistics, and
/// optimizer state. Each worker processes batches in order, so the update
/// sequence of every layer matches sequential local training exactly.
inline std::vector<MetricsRow> train_pipelined(Model& model, const Dataset& train_set, const Dataset* test_set, const TrainConfig& cfg,
                                               const PipelineOptions& popt, Optimizers* external_opt = nullptr,
                                               const std::function<void(const MetricsRow&)>& on_row = {}) {
  cfg.validate();
  if (!model.local()) fail(ErrorCode::PlanMismatch, "pipelined training needs a model with auxiliary networks");
  if (popt.threads < 1) fail(ErrorCode::InvalidArgument, "threads must be >= 1");
  if (train_set.size() < cfg.batch_size) fail(ErrorCode::ConfigError, "training set smaller than one batch");
  Network& net = model.primary();
  const std::size_t L = net.L();
  const auto groups = partition_layers(L, popt.threads);
  const std::size_t W = groups.size();
  Optimizers local_opt;
  Optimizers& opt = external_opt ? *external_opt : local_opt;
  if (!external_opt || opt.layers.empty()) opt = make_optimizers(model, cfg);
  opt.zero_grad();
  std::vector<std::vector<Parameter*>> owned(L + 1);
  for (std::size_t l = 1; l <= L; ++l) owned[l] = model.layer_parameters(l);

  std::vector<MetricsRow> rows;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = cosine_lr(cfg.lr0, e, cfg.epochs);
    const auto batches = epoch_batches(train_set.size(), cfg.batch_size, cfg.seed, e);
    const std::size_t steps = batches.size();

    std::vector<std::unique_ptr<SpscQueue<detail::Packet>>> queues;
    for (std::size_t w = 0; w + 1 < W; ++w) queues.push_back(std::make_unique<SpscQueue<detail::Packet>>(popt.queue_capacity));
    std::barrier sync(static_cast<std::ptrdiff_t>(W));
    std::mutex err_mu;
    std::exception_ptr first_error;
    std::string error_text;
    std::atomic<bool> failed{false};
    double loss_sum = 0;
    std::size_t hits = 0;

    auto abort_all = [&](std::exception_ptr ep, const std::string& what) {
      {
        std::lock_guard<std::mutex> lk(err_mu);
        if (!first_error) {
          first_error = ep;
          error_text = what;
        }
      }
      failed.store(true);
      for (auto& q : queues) q->close();
    };

    auto process = [&](std::size_t w, detail::Packet& pk) {
      for (std::size_t l = groups[w].first; l <= groups[w].second; ++l) {
        Tape tape;
        Var in = tape.constant(std::move(pk.h));
        Var out = net.unit(l).forward(tape, in, true);
        Var logits = l < L ? model.aux(l).forward(tape, out, true) : net.head().forward(tape, out);
        Var loss = softmax_cross_entropy(logits, *pk.labels);
        backward(tape, loss);
        if (popt.check_isolation) detail::check_tape_isolation(tape, owned[l], l);
        opt.layer(l).step(lr);
        opt.layer(l).zero_grad();
        if (l == L) {
          loss_sum += loss.value().item() * static_cast<double>(pk.labels->size());
          hits += detail::count_correct(logits.value(), *pk.labels);
        }
        pk.h = out.value();
      }
    };

    auto source = [&](std::size_t step) {
      Batch b = train_set.gather(batches[step]);
      return detail::Packet{step, std::move(b.x), std::make_shared<const std::vector<int>>(std::move(b.y))};
    };

    auto worker = [&](std::size_t w) {
      try {
        if (popt.barrier) {
          for (std::size_t tick = 0; tick < steps + W - 1; ++tick) {
            if (failed.load()) break;
            if (tick >= w && tick - w < steps) {
              std::optional<detail::Packet> pk;
              if (w == 0)
                pk = source(tick);
              else
                pk = queues[w - 1]->pop();
              if (!pk) break;
              process(w, *pk);
              if (w + 1 < W && !queues[w]->push(std::move(*pk))) break;
            }
            sync.arrive_and_wait();
          }
        } else {
          for (std::size_t s = 0; s < steps; ++s) {
            if (failed.load()) break;
            std::optional<detail::Packet> pk;
            if (w == 0)
              pk = source(s);
            else
              pk = queues[w - 1]->pop();
            if (!pk) break;
            process(w, *pk);
            if (w + 1 < W && !queues[w]->push(std::move(*pk))) break;
          }
        }
      } catch (const std::exception& ex) {
        abort_all(std::current_exception(), ex.what());
      } catch (...) {
        abort_all(std::current_exception(), "unknown exception");
      }
      if (popt.barrier && failed.load()) sync.arrive_and_drop();
    };

    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < W; ++w) pool.emplace_back(worker, w);
    worker(0);
    for (auto& t : pool) t.join();
    if (first_error) fail(ErrorCode::WorkerPanicPropagated, "pipeline worker failed: " + error_text);

    const std::size_t seen = steps * cfg.batch_size;
    const double train_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    auto emit = [&](MetricsRow r) {
      if (on_row) on_row(r);
      rows.push_back(std::move(r));
    };
    emit({e + 1, "train", loss_sum / static_cast<double>(seen), static_cast<double>(hits) / static_cast<double>(seen), lr, train_ms});
    if (test_set) {
      const auto t1 = std::chrono::steady_clock::now();
      EvalResult ev = evaluate_full(net, *test_set);
      emit({e + 1, "test", ev.loss, ev.top1, lr,
                      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t1).count()});
    }
  }
  return rows;
}

}  // namespace auglocal
