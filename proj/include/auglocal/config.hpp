// Copyright 2026 The AugLocal Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "auglocal/analysis.hpp"
#include "auglocal/data.hpp"
#include "auglocal/textdoc.hpp"
#include "auglocal/trainer.hpp"

namespace auglocal {

// Experiment config, version 1:
//
//     version = 1
//     seed = 0
//     [network]   preset | file
//     [train]     mode strategy d d_min tau ... threads queue_capacity barrier
//     [data]      kind = synthetic-gaussians | cifar10-binary | mnist-idx, plus kind keys
//     [output]    dir checkpoint
//     [analysis]  probe probe_epochs probe_lr cka cka_reference cka_examples cka_max_columns
//
// Unknown sections or keys are errors. Every key can be overridden from the
// environment as AUGLOCAL_<SECTION>_<KEY> (root keys: AUGLOCAL_<KEY>), e.g.
// AUGLOCAL_TRAIN_EPOCHS=5. Relative input paths resolve against the config
// file's directory; the output directory resolves against the working directory.

inline constexpr int kExperimentConfigVersion = 1;
inline constexpr const char* kEnvPrefix = "AUGLOCAL_";

enum class DataKind { Synthetic, Cifar10, MnistIdx };

inline std::string to_string(DataKind k) {
  switch (k) {
    case DataKind::Synthetic: return "synthetic-gaussians";
    case DataKind::Cifar10: return "cifar10-binary";
    case DataKind::MnistIdx: return "mnist-idx";
  }
  return "?";
}

struct DataConfig {
  DataKind kind = DataKind::Synthetic;
  SyntheticSpec synthetic;
  std::size_t test_per_class = 100;
  std::vector<std::string> train_files, test_files;
  Normalization norm;
  std::string train_images, train_labels, test_images, test_labels;
  std::size_t train_limit = 0, test_limit = 0;  // 0 keeps every example
};

struct OutputConfig {
  std::string dir = "runs/default";
  bool checkpoint = true;
};

struct AnalysisConfig {
  bool probe = false;
  ProbeConfig probe_cfg;
  bool cka = false;
  std::string cka_reference;  // checkpoint of a BP run of the same network
  std::size_t cka_examples = 500;
  std::size_t cka_max_columns = 4096;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string network_preset = "tinynet8";
  std::string network_file;
  TrainConfig train;
  std::size_t threads = 1;
  std::size_t queue_capacity = 1;
  bool barrier = false;
  DataConfig data;
  OutputConfig output;
  AnalysisConfig analysis;
  TextDoc resolved;  // config after overrides, used for hashing and the run record

  std::uint64_t hash() const { return fnv1a64(resolved.emit()); }
};

namespace detail {

inline const std::map<std::string, std::vector<std::string>>& config_schema() {
  static const std::map<std::string, std::vector<std::string>> schema = {
      {"", {"version", "seed"}},
      {"network", {"preset", "file"}},
      {"train",
       {"mode", "strategy", "d", "d_min", "tau", "repetitive_downsample", "flops_budget", "lr0", "momentum", "weight_decay", "epochs",
        "batch_size", "defer_updates", "threads", "queue_capacity", "barrier"}},
      {"data",
       {"kind", "classes", "channels", "height", "width", "per_class", "test_per_class", "data_seed", "separation", "grid", "train_files",
        "test_files", "mean", "std", "train_images", "train_labels", "test_images", "test_labels", "train_limit", "test_limit"}},
      {"output", {"dir", "checkpoint"}},
      {"analysis", {"probe", "probe_epochs", "probe_lr", "cka", "cka_reference", "cka_examples", "cka_max_columns"}},
  };
  return schema;
}

inline std::string env_name(const std::string& section, const std::string& key) {
  std::string n = kEnvPrefix;
  if (!section.empty()) n += section + "_";
  n += key;
  for (auto& c : n) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return n;
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const std::size_t comma = s.find(',', start);
    const std::string item(TextDoc::trim(std::string_view(s).substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
    if (!item.empty()) out.push_back(item);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

class SectionReader {
 public:
  SectionReader(const TextDoc::Section* s, std::string name) : s_(s), name_(std::move(name)) {}

  const std::string* raw(const std::string& key) const { return s_ ? s_->find(key) : nullptr; }
  std::string where(const std::string& key) const { return (name_.empty() ? "" : "[" + name_ + "] ") + key; }

  std::string str(const std::string& key, const std::string& def) const {
    const auto* v = raw(key);
    return v ? *v : def;
  }
  std::size_t count(const std::string& key, std::size_t def, std::size_t min = 0) const {
    const auto* v = raw(key);
    if (!v) return def;
    const long long x = textvalue::to_int(*v, where(key));
    if (x < static_cast<long long>(min)) fail(ErrorCode::ConfigError, where(key) + " must be >= " + std::to_string(min));
    return static_cast<std::size_t>(x);
  }
  double num(const std::string& key, double def) const {
    const auto* v = raw(key);
    return v ? textvalue::to_double(*v, where(key)) : def;
  }
  bool flag(const std::string& key, bool def) const {
    const auto* v = raw(key);
    return v ? textvalue::to_bool(*v, where(key)) : def;
  }
  std::vector<double> nums(const std::string& key) const {
    std::vector<double> out;
    if (const auto* v = raw(key))
      for (const auto& item : split_list(*v)) out.push_back(textvalue::to_double(item, where(key)));
    return out;
  }

 private:
  const TextDoc::Section* s_;
  std::string name_;
};

inline std::string resolve_input(const std::string& p, const std::filesystem::path& base) {
  if (p.empty()) return p;
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? p : (base / path).lexically_normal().string();
}

inline void require_file(const std::string& p, const std::string& what) {
  if (p.empty()) fail(ErrorCode::ConfigError, what + " is required");
  if (!std::filesystem::is_regular_file(p)) fail(ErrorCode::ConfigError, what + " '" + p + "' does not exist");
}

}  // namespace detail

/// Applies AUGLOCAL_<SECTION>_<KEY> environment overrides for every schema key.
inline void apply_env_overrides(TextDoc& doc) {
  for (const auto& [section, keys] : detail::config_schema())
    for (const auto& key : keys)
      if (const char* v = std::getenv(detail::env_name(section, key).c_str()))
        (section.empty() ? doc.root() : doc.section(section)).set(key, v);
}

/// Checks the schema, then builds a typed config. `base_dir` anchors
/// relative input paths.
inline ExperimentConfig parse_experiment_config(const TextDoc& doc, const std::filesystem::path& base_dir = {}) {
  const auto& schema = detail::config_schema();
  for (const auto& s : doc.sections()) {
    auto it = schema.find(s.name);
    if (it == schema.end()) fail(ErrorCode::ConfigError, "unknown section [" + s.name + "]");
    for (const auto& [k, v] : s.entries)
      if (std::find(it->second.begin(), it->second.end(), k) == it->second.end())
        fail(ErrorCode::ConfigError, (s.name.empty() ? "" : "[" + s.name + "] ") + "unknown key '" + k + "'");
  }
  using detail::SectionReader;
  const SectionReader root(&doc.root(), "");
  const auto* version = root.raw("version");
  if (!version) fail(ErrorCode::ConfigError, "config needs 'version = " + std::to_string(kExperimentConfigVersion) + "'");
  if (textvalue::to_int(*version, "version") != kExperimentConfigVersion) fail(ErrorCode::ConfigError, "unsupported config version " + *version);
  if (!root.raw("seed")) fail(ErrorCode::ConfigError, "config needs a seed");

  ExperimentConfig c;
  c.seed = root.count("seed", 0);

  const SectionReader net(doc.find_section("network"), "network");
  c.network_preset = net.str("preset", "");
  c.network_file = detail::resolve_input(net.str("file", ""), base_dir);
  if (c.network_preset.empty() == c.network_file.empty()) fail(ErrorCode::ConfigError, "[network] needs exactly one of preset or file");
  if (!c.network_file.empty()) detail::require_file(c.network_file, "[network] file");

  const SectionReader tr(doc.find_section("train"), "train");
  TrainConfig& t = c.train;
  t.mode = parse_mode(tr.str("mode", to_string(t.mode)));
  try {
    t.strategy = parse_strategy(tr.str("strategy", to_string(t.strategy)));
  } catch (const Error& e) {
    fail(ErrorCode::ConfigError, std::string("[train] strategy: ") + e.what());
  }
  t.d = tr.count("d", t.d, 1);
  t.d_min = tr.count("d_min", t.d_min, 1);
  t.tau = tr.num("tau", t.tau);
  t.repetitive_downsample = tr.flag("repetitive_downsample", t.repetitive_downsample);
  if (tr.raw("flops_budget")) t.flops_budget = tr.count("flops_budget", 0, 1);
  t.lr0 = tr.num("lr0", t.lr0);
  t.momentum = tr.num("momentum", t.momentum);
  t.weight_decay = tr.num("weight_decay", t.weight_decay);
  t.epochs = tr.count("epochs", t.epochs, 1);
  t.batch_size = tr.count("batch_size", t.batch_size, 1);
  t.defer_updates = tr.flag("defer_updates", t.defer_updates);
  t.seed = c.seed;
  c.threads = tr.count("threads", c.threads, 1);
  c.queue_capacity = tr.count("queue_capacity", c.queue_capacity, 1);
  c.barrier = tr.flag("barrier", c.barrier);
  t.validate();
  if (t.tau < 0 || t.tau > 1) fail(ErrorCode::ConfigError, "[train] tau must lie in [0, 1]");

  const SectionReader da(doc.find_section("data"), "data");
  DataConfig& d = c.data;
  const std::string kind = da.str("kind", "synthetic-gaussians");
  if (kind == "synthetic-gaussians") {
    d.kind = DataKind::Synthetic;
    auto& s = d.synthetic;
    s.classes = da.count("classes", s.classes, 2);
    s.dims = {da.count("channels", s.dims.c, 1), da.count("height", s.dims.h, 1), da.count("width", s.dims.w, 1)};
    s.per_class = da.count("per_class", s.per_class, 1);
    d.test_per_class = da.count("test_per_class", d.test_per_class, 1);
    s.seed = da.count("data_seed", c.seed);
    s.separation = da.num("separation", s.separation);
    s.grid = da.count("grid", s.grid);
    if (s.separation < 0) fail(ErrorCode::ConfigError, "[data] separation must be >= 0");
  } else if (kind == "cifar10-binary") {
    d.kind = DataKind::Cifar10;
    for (const auto& f : detail::split_list(da.str("train_files", ""))) d.train_files.push_back(detail::resolve_input(f, base_dir));
    for (const auto& f : detail::split_list(da.str("test_files", ""))) d.test_files.push_back(detail::resolve_input(f, base_dir));
    if (d.train_files.empty() || d.test_files.empty()) fail(ErrorCode::ConfigError, "[data] cifar10-binary needs train_files and test_files");
    for (const auto& f : d.train_files) detail::require_file(f, "[data] train file");
    for (const auto& f : d.test_files) detail::require_file(f, "[data] test file");
    d.norm.mean = da.nums("mean");
    d.norm.stddev = da.nums("std");
    if (d.norm.mean.size() != 3 || d.norm.stddev.size() != 3) fail(ErrorCode::ConfigError, "[data] cifar10-binary needs 3-value mean and std");
    for (double s : d.norm.stddev)
      if (!(s > 0)) fail(ErrorCode::ConfigError, "[data] std entries must be positive");
  } else if (kind == "mnist-idx") {
    d.kind = DataKind::MnistIdx;
    d.train_images = detail::resolve_input(da.str("train_images", ""), base_dir);
    d.train_labels = detail::resolve_input(da.str("train_labels", ""), base_dir);
    d.test_images = detail::resolve_input(da.str("test_images", ""), base_dir);
    d.test_labels = detail::resolve_input(da.str("test_labels", ""), base_dir);
    detail::require_file(d.train_images, "[data] train_images");
    detail::require_file(d.train_labels, "[data] train_labels");
    detail::require_file(d.test_images, "[data] test_images");
    detail::require_file(d.test_labels, "[data] test_labels");
  } else {
    fail(ErrorCode::ConfigError, "[data] unknown kind '" + kind + "'");
  }
  d.train_limit = da.count("train_limit", 0);
  d.test_limit = da.count("test_limit", 0);

  const SectionReader out(doc.find_section("output"), "output");
  c.output.dir = out.str("dir", c.output.dir);
  c.output.checkpoint = out.flag("checkpoint", c.output.checkpoint);

  const SectionReader an(doc.find_section("analysis"), "analysis");
  c.analysis.probe = an.flag("probe", false);
  c.analysis.probe_cfg.epochs = an.count("probe_epochs", c.analysis.probe_cfg.epochs, 1);
  c.analysis.probe_cfg.lr0 = an.num("probe_lr", c.analysis.probe_cfg.lr0);
  c.analysis.probe_cfg.seed = c.seed;
  c.analysis.cka = an.flag("cka", false);
  c.analysis.cka_reference = detail::resolve_input(an.str("cka_reference", ""), base_dir);
  c.analysis.cka_examples = an.count("cka_examples", c.analysis.cka_examples, 2);
  c.analysis.cka_max_columns = an.count("cka_max_columns", c.analysis.cka_max_columns, 1);
  if (c.analysis.cka) detail::require_file(c.analysis.cka_reference, "[analysis] cka_reference");

  c.resolved = doc;
  return c;
}

/// "section.key" (or a bare root key) to value; applied after the environment.
using ConfigOverrides = std::vector<std::pair<std::string, std::string>>;

inline void apply_overrides(TextDoc& doc, const ConfigOverrides& overrides) {
  for (const auto& [path, value] : overrides) {
    const auto dot = path.find('.');
    if (dot == std::string::npos)
      doc.root().set(path, value);
    else
      doc.section(path.substr(0, dot)).set(path.substr(dot + 1), value);
  }
}

/// Reads a config file, applies environment then explicit overrides, and parses it.
inline ExperimentConfig load_experiment_config(const std::string& path, const ConfigOverrides& overrides = {}) {
  TextDoc doc = TextDoc::load(path);
  apply_env_overrides(doc);
  apply_overrides(doc, overrides);
  return parse_experiment_config(doc, std::filesystem::path(path).parent_path());
}

/// The network the config names, shaped to its dataset.
inline PrimaryNetworkSpec experiment_network(const ExperimentConfig& c) {
  if (!c.network_file.empty()) return from_textdoc(TextDoc::load(c.network_file));
  ActShape input{3, 32, 32};
  std::size_t classes = 10;
  if (c.data.kind == DataKind::Synthetic) {
    input = c.data.synthetic.dims;
    classes = c.data.synthetic.classes;
  } else if (c.data.kind == DataKind::MnistIdx) {
    input = {1, 28, 28};
  }
  return preset(c.network_preset, input, classes);
}

}  // namespace auglocal
