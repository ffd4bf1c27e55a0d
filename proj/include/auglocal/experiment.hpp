// Copyright 2026 The AugLocal Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>  // nlohmann

#include "auglocal/analysis.hpp"
#include "auglocal/checkpoint.hpp"
#include "auglocal/config.hpp"
#include "auglocal/pipeline.hpp"

#ifndef AUGLOCAL_CODE_VERSION
#define AUGLOCAL_CODE_VERSION "unknown"
#endif

namespace auglocal {

inline constexpr const char* kMetricsColumns = "epoch,split,loss,top1,lr,wall_ms";
inline constexpr const char* kMetricsSchema = "auglocal-metrics/1";
inline constexpr const char* kManifestSchema = "auglocal-manifest/1";

/// Exit codes of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitData = 3, kExitRuntime = 4 };

inline int exit_code_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::ConfigError:
    case ErrorCode::UnknownStrategy:
    case ErrorCode::InvalidDepthBounds:
    case ErrorCode::DepthExceedsRemaining:
    case ErrorCode::FlopsBudgetExceeded:
    case ErrorCode::ChannelChainBreak:
    case ErrorCode::SpatialCollapse:
    case ErrorCode::PlanMismatch:
    case ErrorCode::InvalidArgument: return kExitConfig;
    case ErrorCode::TruncatedFile:
    case ErrorCode::BadLabelByte:
    case ErrorCode::BadMagic:
    case ErrorCode::DimMismatch:
    case ErrorCode::IoError:
    case ErrorCode::LabelOutOfRange:
    case ErrorCode::CheckpointMismatch: return kExitData;
    default: return kExitRuntime;
  }
}

/// Machine-readable error record.
inline std::string error_record(const std::string& code, const std::string& message, int exit_code) {
  nlohmann::json j{{"error", code}, {"message", message}, {"exit_code", exit_code}};
  return j.dump();
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// Shortest round-tripping text for a double.
inline std::string csv_number(double v) { return textvalue::from_double(v); }

inline std::string metrics_csv_line(const MetricsRow& r) {
  return std::to_string(r.epoch) + "," + r.split + "," + csv_number(r.loss) + "," + csv_number(r.top1) + "," + csv_number(r.lr) + "," +
         csv_number(r.wall_ms);
}

inline std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    for (;;) {
      const auto comma = line.find(',', start);
      cells.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    rows.push_back(std::move(cells));
  }
  return rows;
}

inline std::vector<MetricsRow> parse_metrics_csv(const std::string& text) {
  const auto rows = parse_csv(text);
  if (rows.empty()) fail(ErrorCode::DimMismatch, "metrics csv is empty");
  std::string header;
  for (std::size_t i = 0; i < rows[0].size(); ++i) header += (i ? "," : "") + rows[0][i];
  if (header != kMetricsColumns) fail(ErrorCode::DimMismatch, "unexpected metrics header '" + header + "'");
  std::vector<MetricsRow> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& c = rows[i];
    if (c.size() != 6) fail(ErrorCode::DimMismatch, "metrics row " + std::to_string(i) + " has " + std::to_string(c.size()) + " cells");
    out.push_back({static_cast<std::size_t>(textvalue::to_int(c[0], "epoch")), c[1], textvalue::to_double(c[2], "loss"),
                   textvalue::to_double(c[3], "top1"), textvalue::to_double(c[4], "lr"), textvalue::to_double(c[5], "wall_ms")});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

struct DataSplits {
  Dataset train, test;
};

inline DataSplits load_data(const DataConfig& d) {
  DataSplits s;
  switch (d.kind) {
    case DataKind::Synthetic: {
      s.train = gen_synthetic(d.synthetic, 0);
      SyntheticSpec t = d.synthetic;
      t.per_class = d.test_per_class;
      s.test = gen_synthetic(t, 1);
      break;
    }
    case DataKind::Cifar10:
      s.train = load_cifar10(d.train_files, d.norm);
      s.test = load_cifar10(d.test_files, d.norm);
      break;
    case DataKind::MnistIdx:
      s.train = load_mnist_idx(d.train_images, d.train_labels);
      s.test = load_mnist_idx(d.test_images, d.test_labels);
      break;
  }
  if (d.train_limit && d.train_limit < s.train.size()) s.train = s.train.slice(0, d.train_limit);
  if (d.test_limit && d.test_limit < s.test.size()) s.test = s.test.slice(0, d.test_limit);
  return s;
}

// ---------------------------------------------------------------------------
// Runner
// ---------------------------------------------------------------------------

struct ExperimentResult {
  std::vector<MetricsRow> rows;
  double final_test_top1 = 0;
  std::filesystem::path out_dir;
};

namespace detail {

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot write " + p.string());
  out << text;
  if (!out) fail(ErrorCode::IoError, "short write to " + p.string());
}

inline std::string file_hash(const std::filesystem::path& p) {
  const auto bytes = read_file(p.string());
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()))));
  return buf;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline void check_data_matches(const ValidatedNetwork& net, const DataSplits& d) {
  for (const Dataset* ds : {&d.train, &d.test}) {
    if (ds->size() == 0) fail(ErrorCode::DimMismatch, "dataset split is empty");
    if (!(ds->shape() == net.spec.input))
      fail(ErrorCode::ConfigError, "dataset images do not match the network input shape of '" + net.spec.name + "'");
    if (ds->num_classes != net.spec.classifier.num_classes)
      fail(ErrorCode::ConfigError, "dataset has " + std::to_string(ds->num_classes) + " classes, network predicts " +
                                       std::to_string(net.spec.classifier.num_classes));
  }
}

}  // namespace detail

/// The plan text for a run; BP runs record that no auxiliary networks exist.
inline std::string plan_text(const Model& model, const ValidatedNetwork& net) {
  if (model.local()) return to_textdoc(model.plan()).emit();
  TextDoc doc;
  doc.root().set("format", "auglocal-plan").set("version", "1");
  doc.section("plan").set("network", net.spec.name).set("mode", "bp").set("primary_flops", std::to_string(count_flops(net)));
  return doc.emit();
}

/// Trains per `cfg` and writes metrics.csv, plan.txt, checkpoint.bin (if
/// enabled), probe.csv / cka.csv (if enabled), config.txt, and manifest.json
/// into the output directory.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::function<void(const MetricsRow&)>& on_row = {}) {
  const ValidatedNetwork net = validate(experiment_network(cfg));
  const DataSplits data = load_data(cfg.data);
  detail::check_data_matches(net, data);

  ExperimentResult res;
  res.out_dir = cfg.output.dir;
  std::error_code ec;
  std::filesystem::create_directories(res.out_dir, ec);
  if (ec) fail(ErrorCode::IoError, "cannot create " + res.out_dir.string() + ": " + ec.message());

  Model model = make_model(net, cfg.train);
  detail::write_text(res.out_dir / "plan.txt", plan_text(model, net));
  detail::write_text(res.out_dir / "config.txt", cfg.resolved.emit());

  const auto metrics_path = res.out_dir / "metrics.csv";
  std::ofstream metrics(metrics_path, std::ios::binary | std::ios::trunc);
  if (!metrics) fail(ErrorCode::IoError, "cannot write " + metrics_path.string());
  metrics << kMetricsColumns << "\n";
  auto row = [&](const MetricsRow& r) {
    metrics << metrics_csv_line(r) << "\n" << std::flush;
    if (on_row) on_row(r);
  };

  Optimizers opt = make_optimizers(model, cfg.train);
  if (cfg.train.mode == TrainMode::Local && cfg.threads > 1) {
    PipelineOptions po;
    po.threads = cfg.threads;
    po.queue_capacity = cfg.queue_capacity;
    po.barrier = cfg.barrier;
    res.rows = train_pipelined(model, data.train, &data.test, cfg.train, po, &opt, row);
  } else {
    res.rows = train(model, data.train, &data.test, cfg.train, row, &opt);
  }
  metrics.close();
  for (const auto& r : res.rows)
    if (r.split == "test") res.final_test_top1 = r.top1;

  nlohmann::json files = nlohmann::json::object();
  files["metrics.csv"] = detail::file_hash(metrics_path);
  files["plan.txt"] = detail::file_hash(res.out_dir / "plan.txt");
  if (cfg.output.checkpoint) {
    save_checkpoint((res.out_dir / "checkpoint.bin").string(), model, &opt);
    files["checkpoint.bin"] = detail::file_hash(res.out_dir / "checkpoint.bin");
  }
  nlohmann::json schemas = {{"metrics.csv", {{"schema", kMetricsSchema}, {"columns", kMetricsColumns}}}};

  if (cfg.analysis.probe) {
    std::string csv = "layer,probe_acc\n";
    for (std::size_t l = 1; l <= net.L(); ++l)
      csv += std::to_string(l) + "," + csv_number(linear_probe(model.primary(), l, data.train, data.test, cfg.analysis.probe_cfg).test_top1) + "\n";
    detail::write_text(res.out_dir / "probe.csv", csv);
    files["probe.csv"] = detail::file_hash(res.out_dir / "probe.csv");
    schemas["probe.csv"] = {{"schema", "auglocal-probe/1"}, {"columns", "layer,probe_acc"}};
  }
  if (cfg.analysis.cka) {
    TrainConfig ref_cfg = cfg.train;
    ref_cfg.mode = TrainMode::BP;
    Model reference = make_model(net, ref_cfg);
    load_checkpoint(cfg.analysis.cka_reference, reference);
    const std::size_t n = std::min(cfg.analysis.cka_examples, data.test.size());
    CkaOptions co;
    co.max_columns = cfg.analysis.cka_max_columns;
    co.seed = cfg.seed;
    const auto cka = layerwise_cka(model.primary(), reference.primary(), data.test.slice(0, n).images, co);
    std::string csv = "layer,score\n";
    for (std::size_t l = 0; l < cka.per_layer.size(); ++l) csv += std::to_string(l + 1) + "," + csv_number(cka.per_layer[l]) + "\n";
    detail::write_text(res.out_dir / "cka.csv", csv);
    files["cka.csv"] = detail::file_hash(res.out_dir / "cka.csv");
    schemas["cka.csv"] = {{"schema", "auglocal-cka/1"}, {"columns", "layer,score"}};
  }

  nlohmann::json manifest = {
      {"schema", kManifestSchema},
      {"config_hash", detail::hex64(cfg.hash())},
      {"code_version", AUGLOCAL_CODE_VERSION},
      {"seed", cfg.seed},
      {"mode", to_string(cfg.train.mode)},
      {"network", net.spec.name},
      {"network_hash", detail::hex64(model.primary().hash())},
      {"files", files},
      {"csv", schemas},
      {"final_test_top1", res.final_test_top1},
  };
  detail::write_text(res.out_dir / "manifest.json", manifest.dump(2) + "\n");
  return res;
}

}  // namespace auglocal
