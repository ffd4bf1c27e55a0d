// Copyright 2026 The AugLocal Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end: plan, flops, train, probe, cka, simulate, predict-time.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "auglocal/auglocal.hpp"

namespace {

using namespace auglocal;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> threads;
  std::string mode, strategy;
  std::optional<std::size_t> d, dmin;
  std::optional<double> tau;
  // network selection without a config
  std::string network = "tinynet8";
  std::string network_file;
};

ConfigOverrides overrides_from(const Common& c) {
  ConfigOverrides o;
  if (c.seed) o.emplace_back("seed", std::to_string(*c.seed));
  if (!c.out.empty()) o.emplace_back("output.dir", c.out);
  if (c.threads) o.emplace_back("train.threads", std::to_string(*c.threads));
  if (!c.mode.empty()) o.emplace_back("train.mode", c.mode);
  if (!c.strategy.empty()) o.emplace_back("train.strategy", c.strategy);
  if (c.d) o.emplace_back("train.d", std::to_string(*c.d));
  if (c.dmin) o.emplace_back("train.d_min", std::to_string(*c.dmin));
  if (c.tau) o.emplace_back("train.tau", textvalue::from_double(*c.tau));
  return o;
}

ExperimentConfig require_config(const Common& c) {
  if (c.config.empty()) fail(ErrorCode::ConfigError, "--config is required");
  return load_experiment_config(c.config, overrides_from(c));
}

// Network and plan options from --config if given, else from flags.
std::pair<ValidatedNetwork, TrainConfig> network_and_train(const Common& c) {
  if (!c.config.empty()) {
    const ExperimentConfig cfg = require_config(c);
    return {validate(experiment_network(cfg)), cfg.train};
  }
  PrimaryNetworkSpec spec;
  if (!c.network_file.empty()) {
    spec = from_textdoc(TextDoc::load(c.network_file));
  } else {
    const bool cifar = c.network != "tinynet8";
    spec = preset(c.network, cifar ? ActShape{3, 32, 32} : ActShape{1, 8, 8}, 10);
  }
  TrainConfig t;
  if (!c.mode.empty()) t.mode = parse_mode(c.mode);
  if (!c.strategy.empty()) t.strategy = parse_strategy(c.strategy);
  if (c.d) t.d = *c.d;
  if (c.dmin) t.d_min = *c.dmin;
  if (c.tau) t.tau = *c.tau;
  if (c.seed) t.seed = *c.seed;
  return {validate(spec), t};
}

void add_common(CLI::App* app, Common& c, bool network_flags) {
  app->add_option("--config", c.config, "Experiment config file");
  app->add_option("--seed", c.seed, "Seed override");
  app->add_option("--out", c.out, "Output directory (train) or file");
  app->add_option("--threads", c.threads, "Worker threads for layer-parallel training")->check(CLI::PositiveNumber);
  app->add_option("--mode", c.mode, "Training mode")->check(CLI::IsMember({"bp", "local"}));
  app->add_option("--strategy", c.strategy, "Auxiliary strategy")
      ->check(CLI::IsMember({"uniform", "sequential", "repetitive", "c1x1", "c3x3"}));
  app->add_option("--d", c.d, "Maximum auxiliary depth");
  app->add_option("--dmin", c.dmin, "Minimum auxiliary depth");
  app->add_option("--tau", c.tau, "Pyramidal decay");
  if (network_flags) {
    app->add_option("--network", c.network, "Preset: tinynet8, resnet32-cifar, resnet110-cifar, vgg19-cifar");
    app->add_option("--network-file", c.network_file, "Network spec text file");
  }
}

std::ostream* output_stream(const std::string& path, std::ofstream& file) {
  if (path.empty()) return &std::cout;
  file.open(path, std::ios::binary | std::ios::trunc);
  if (!file) fail(ErrorCode::IoError, "cannot write " + path);
  return &file;
}

int cmd_plan(const Common& c) {
  auto [net, t] = network_and_train(c);
  const AuxPlan plan = plan_all(net, t.plan_options());
  std::ofstream f;
  *output_stream(c.out, f) << to_textdoc(plan).emit();
  return kExitOk;
}

int cmd_flops(const Common& c) {
  auto [net, t] = network_and_train(c);
  std::ofstream f;
  std::ostream& os = *output_stream(c.out, f);
  os << "layer,primary_flops,aux_flops,aux_structure\n";
  std::uint64_t primary = 0, aux = 0;
  if (t.mode == TrainMode::BP) {
    const ActShape* in = &net.spec.input;
    for (std::size_t l = 1; l <= net.L(); ++l) {
      const std::uint64_t u = unit_flops(net.unit(l), *in);
      os << l << "," << u << ",0,\n";
      primary += u;
      in = &net.shapes[l];
    }
    const std::uint64_t head = classifier_flops(net.spec.classifier);
    os << "head," << head << ",0,\n";
    primary += head;
  } else {
    const AuxPlan plan = plan_all(net, t.plan_options());
    for (std::size_t l = 1; l <= net.L(); ++l) {
      const std::uint64_t u = unit_flops(net.unit(l), net.shapes[l - 1]);
      primary += u;
      if (l < net.L()) {
        const auto& lp = plan.layer(l);
        aux += lp.flops;
        os << l << "," << u << "," << lp.flops << "," << notation(lp.aux, true) << "\n";
      } else {
        os << l << "," << u << ",0,\n";
      }
    }
    const std::uint64_t head = classifier_flops(net.spec.classifier);
    os << "head," << head << ",0,\n";
    primary += head;
  }
  os << "total," << primary << "," << aux << ",\n";
  return kExitOk;
}

int cmd_train(const Common& c) {
  const ExperimentConfig cfg = require_config(c);
  const auto res = run_experiment(cfg, [](const MetricsRow& r) { std::cout << metrics_csv_line(r) << "\n" << std::flush; });
  std::cerr << "wrote " << res.out_dir.string() << " (final test top1 " << res.final_test_top1 << ")\n";
  return kExitOk;
}

// Model of the config's mode restored from a checkpoint.
Model restore(const ExperimentConfig& cfg, const ValidatedNetwork& net, const std::string& checkpoint) {
  if (checkpoint.empty()) fail(ErrorCode::ConfigError, "--checkpoint is required");
  Model m = make_model(net, cfg.train);
  load_checkpoint(checkpoint, m);
  return m;
}

int cmd_probe(const Common& c, const std::string& checkpoint) {
  const ExperimentConfig cfg = require_config(c);
  const ValidatedNetwork net = validate(experiment_network(cfg));
  Model m = restore(cfg, net, checkpoint);
  const DataSplits data = load_data(cfg.data);
  std::cout << "layer,probe_acc\n";
  for (std::size_t l = 1; l <= net.L(); ++l)
    std::cout << l << "," << csv_number(linear_probe(m.primary(), l, data.train, data.test, cfg.analysis.probe_cfg).test_top1) << "\n"
              << std::flush;
  return kExitOk;
}

int cmd_cka(const Common& c, const std::string& checkpoint, const std::string& reference) {
  const ExperimentConfig cfg = require_config(c);
  const ValidatedNetwork net = validate(experiment_network(cfg));
  Model m = restore(cfg, net, checkpoint);
  TrainConfig bp = cfg.train;
  bp.mode = TrainMode::BP;
  if (reference.empty()) fail(ErrorCode::ConfigError, "--reference is required");
  Model ref = make_model(net, bp);
  load_checkpoint(reference, ref);
  const DataSplits data = load_data(cfg.data);
  CkaOptions co;
  co.max_columns = cfg.analysis.cka_max_columns;
  co.seed = cfg.seed;
  const auto r = layerwise_cka(m.primary(), ref.primary(), data.test.slice(0, std::min(cfg.analysis.cka_examples, data.test.size())).images, co);
  std::cout << "layer,score\n";
  for (std::size_t l = 0; l < r.per_layer.size(); ++l) std::cout << l + 1 << "," << csv_number(r.per_layer[l]) << "\n";
  return kExitOk;
}

struct TimeArgs {
  std::vector<std::size_t> L{55}, d{2}, N{100};
  double t_f = 1.0, t_b = 1.0;
  std::size_t capacity = 0;  // 0 = unbounded
  double jitter = 0.0;
  std::uint64_t seed = 0;
};

int cmd_time(const TimeArgs& a, bool simulate) {
  std::cout << "L,d,t_f,t_b,N,bp_time,auglocal_time,simulated,ratio\n";
  for (std::size_t L : a.L)
    for (std::size_t d : a.d)
      for (std::size_t N : a.N) {
        const PredictedTimes p = predict_times(L, d, a.t_f, a.t_b, N);
        std::string sim;
        double ratio = p.ratio;
        if (simulate) {
          PipelineConfig pc;
          pc.L = L;
          pc.d = d;
          pc.t_f = a.t_f;
          pc.t_b = a.t_b;
          pc.N = N;
          pc.queue_capacity = a.capacity ? a.capacity : kUnboundedQueue;
          pc.jitter = a.jitter;
          pc.seed = a.seed;
          const SimulationResult r = simulate_pipeline(pc);
          sim = csv_number(r.makespan);
          ratio = r.makespan / p.bp_time;
        }
        std::cout << L << "," << d << "," << csv_number(a.t_f) << "," << csv_number(a.t_b) << "," << N << "," << csv_number(p.bp_time) << ","
                  << csv_number(p.auglocal_time) << "," << sim << "," << csv_number(ratio) << "\n";
      }
  return kExitOk;
}

int report(const std::string& code, const std::string& message, int exit_code) {
  std::cerr << error_record(code, message, exit_code) << std::endl;
  return exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Local learning with pyramidal auxiliary networks"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(AUGLOCAL_CODE_VERSION));

  Common common;
  std::string checkpoint, reference;
  TimeArgs time_args;

  auto* plan = app.add_subcommand("plan", "Print the auxiliary plan as a text document");
  add_common(plan, common, true);
  auto* flops = app.add_subcommand("flops", "Per-layer primary and auxiliary FLOPs as CSV");
  add_common(flops, common, true);
  auto* trn = app.add_subcommand("train", "Run an experiment config");
  add_common(trn, common, false);
  auto* probe = app.add_subcommand("probe", "Linear probes of a trained checkpoint as CSV");
  add_common(probe, common, false);
  probe->add_option("--checkpoint", checkpoint, "Checkpoint written by train")->required();
  auto* cka = app.add_subcommand("cka", "Layer-wise linear CKA against a BP reference as CSV");
  add_common(cka, common, false);
  cka->add_option("--checkpoint", checkpoint, "Checkpoint written by train")->required();
  cka->add_option("--reference", reference, "Checkpoint of a BP run")->required();
  auto* sim = app.add_subcommand("simulate", "Discrete-event pipeline makespan as CSV");
  auto* pred = app.add_subcommand("predict-time", "Closed-form training time as CSV");
  for (auto* s : {sim, pred}) {
    s->add_option("--L", time_args.L, "Local layers (comma list)")->delimiter(',');
    s->add_option("--d", time_args.d, "Auxiliary depth (comma list)")->delimiter(',');
    s->add_option("--N", time_args.N, "Iterations (comma list)")->delimiter(',');
    s->add_option("--tf", time_args.t_f, "Per-layer forward time");
    s->add_option("--tb", time_args.t_b, "Per-layer backward time");
  }
  sim->add_option("--capacity", time_args.capacity, "Queue capacity (0 = unbounded)");
  sim->add_option("--jitter", time_args.jitter, "Uniform +/- fraction on every layer time");
  sim->add_option("--seed", time_args.seed, "Seed for jittered times");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report("ConfigError", e.what(), kExitConfig);
  }

  try {
    if (plan->parsed()) return cmd_plan(common);
    if (flops->parsed()) return cmd_flops(common);
    if (trn->parsed()) return cmd_train(common);
    if (probe->parsed()) return cmd_probe(common, checkpoint);
    if (cka->parsed()) return cmd_cka(common, checkpoint, reference);
    if (sim->parsed()) return cmd_time(time_args, true);
    if (pred->parsed()) return cmd_time(time_args, false);
  } catch (const Error& e) {
    return report(std::string(to_string(e.code())), e.what(), exit_code_for(e.code()));
  } catch (const std::exception& e) {
    return report("RuntimeError", e.what(), kExitRuntime);
  }
  return kExitRuntime;
}
