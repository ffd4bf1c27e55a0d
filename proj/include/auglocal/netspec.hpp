// Copyright 2026 The AugLocal Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "auglocal/common.hpp"
#include "auglocal/textdoc.hpp"

namespace auglocal {

enum class UnitKind { Conv3x3, Conv1x1, ResidualBasicBlock, Dense };

inline std::string to_string(UnitKind k) {
  switch (k) {
    case UnitKind::Conv3x3: return "conv3x3";
    case UnitKind::Conv1x1: return "conv1x1";
    case UnitKind::ResidualBasicBlock: return "residual-basic-block";
    case UnitKind::Dense: return "dense";
  }
  return "?";
}

inline UnitKind parse_unit_kind(const std::string& s) {
  if (s == "conv3x3") return UnitKind::Conv3x3;
  if (s == "conv1x1") return UnitKind::Conv1x1;
  if (s == "residual-basic-block") return UnitKind::ResidualBasicBlock;
  if (s == "dense") return UnitKind::Dense;
  fail(ErrorCode::ConfigError, "unknown unit kind '" + s + "'");
}

/// One independently trainable layer of the primary network.
///
/// A residual-basic-block expands to conv3x3(stride) -> norm -> relu ->
/// conv3x3 -> norm, plus an identity shortcut or a 1x1 projection
/// (conv1x1(stride) -> norm) when channels change or stride is 2, then add
/// and relu. Plain conv units are conv -> [norm] -> relu. Dense units
/// flatten their input and apply dense(+bias) -> relu; they carry no norm.
struct LocalUnitSpec {
  UnitKind kind = UnitKind::Conv3x3;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t stride = 1;
  bool has_norm = true;

  bool needs_projection() const {
    return kind == UnitKind::ResidualBasicBlock && (in_channels != out_channels || stride == 2);
  }

  std::size_t kernel() const { return kind == UnitKind::Conv1x1 ? 1 : 3; }

  friend bool operator==(const LocalUnitSpec&, const LocalUnitSpec&) = default;
};

/// Global average pool followed by a dense layer to `num_classes`.
struct ClassifierSpec {
  std::size_t in_channels = 1;
  std::size_t num_classes = 10;

  friend bool operator==(const ClassifierSpec&, const ClassifierSpec&) = default;
};

struct ActShape {
  std::size_t c = 1, h = 1, w = 1;

  std::size_t elements() const { return c * h * w; }
  friend bool operator==(const ActShape&, const ActShape&) = default;
};

/// Units are indexed 1..L in the text and in plans; `units[0]` is the stem.
struct PrimaryNetworkSpec {
  std::string name = "custom";
  ActShape input;
  std::vector<LocalUnitSpec> units;
  ClassifierSpec classifier;

  std::size_t num_classes() const { return classifier.num_classes; }
  std::size_t L() const { return units.size(); }

  friend bool operator==(const PrimaryNetworkSpec&, const PrimaryNetworkSpec&) = default;
};

/// A spec whose channel chain has been checked, with per-unit shapes.
/// `shapes[0]` is the input; `shapes[l]` is the output of unit l.
struct ValidatedNetwork {
  PrimaryNetworkSpec spec;
  std::vector<ActShape> shapes;

  std::size_t L() const { return spec.units.size(); }
  const LocalUnitSpec& unit(std::size_t l) const { return spec.units.at(l - 1); }
  const ActShape& out_shape(std::size_t l) const { return shapes.at(l); }
  const ActShape& in_shape(std::size_t l) const { return shapes.at(l - 1); }
};

/// Auxiliary head attached to hidden layer `layer`: adapted units + classifier.
struct AuxNetworkSpec {
  std::size_t layer = 0;
  ActShape input;
  std::vector<std::size_t> source_indices;  // primary unit each adapted unit copies
  std::vector<LocalUnitSpec> units;
  ClassifierSpec classifier;

  std::size_t depth() const { return units.size() + 1; }
  friend bool operator==(const AuxNetworkSpec&, const AuxNetworkSpec&) = default;
};

// ---------------------------------------------------------------------------
// Shape propagation
// ---------------------------------------------------------------------------

inline std::size_t conv_extent(std::size_t in, std::size_t k, std::size_t stride) {
  return (in + 2 * (k / 2) - k) / stride + 1;
}

/// Output shape of `u` applied to `in`; throws on chain breaks.
inline ActShape unit_output_shape(const LocalUnitSpec& u, const ActShape& in, std::size_t index) {
  const std::string where = "unit " + std::to_string(index) + " (" + to_string(u.kind) + ")";
  if (u.in_channels == 0 || u.out_channels == 0) fail(ErrorCode::ChannelChainBreak, where + ": zero channels");
  if (u.stride != 1 && u.stride != 2) fail(ErrorCode::InvalidArgument, where + ": stride must be 1 or 2");
  if (u.kind == UnitKind::Dense) {
    if (u.in_channels != in.elements())
      fail(ErrorCode::ChannelChainBreak, where + ": expects " + std::to_string(u.in_channels) + " features, input provides " +
                                             std::to_string(in.elements()));
    if (u.has_norm) fail(ErrorCode::InvalidArgument, where + ": dense units carry no norm");
    if (u.stride != 1) fail(ErrorCode::InvalidArgument, where + ": dense units have stride 1");
    return ActShape{u.out_channels, 1, 1};
  }
  if (u.in_channels != in.c)
    fail(ErrorCode::ChannelChainBreak,
         where + ": expects " + std::to_string(u.in_channels) + " channels, input provides " + std::to_string(in.c));
  if (u.stride == 2 && (in.h < 2 || in.w < 2))
    fail(ErrorCode::SpatialCollapse, where + ": cannot downsample a " + std::to_string(in.h) + "x" + std::to_string(in.w) + " map");
  const std::size_t k = u.kernel();
  return ActShape{u.out_channels, conv_extent(in.h, k, u.stride), conv_extent(in.w, k, u.stride)};
}

inline ValidatedNetwork validate(const PrimaryNetworkSpec& spec) {
  if (spec.units.size() < 2) fail(ErrorCode::InvalidArgument, "network needs L >= 2 local units");
  if (spec.input.c == 0 || spec.input.h == 0 || spec.input.w == 0) fail(ErrorCode::InvalidArgument, "empty input shape");
  if (spec.classifier.num_classes < 2) fail(ErrorCode::InvalidArgument, "classifier needs at least 2 classes");
  ValidatedNetwork v{spec, {spec.input}};
  for (std::size_t i = 0; i < spec.units.size(); ++i) v.shapes.push_back(unit_output_shape(spec.units[i], v.shapes.back(), i + 1));
  if (spec.classifier.in_channels != v.shapes.back().c)
    fail(ErrorCode::ChannelChainBreak, "classifier expects " + std::to_string(spec.classifier.in_channels) +
                                           " channels, last unit provides " + std::to_string(v.shapes.back().c));
  return v;
}

// ---------------------------------------------------------------------------
// FLOPs (one multiply-accumulate = one FLOP) and parameter counts
// ---------------------------------------------------------------------------

inline std::uint64_t unit_flops(const LocalUnitSpec& u, const ActShape& in) {
  const ActShape out = unit_output_shape(u, in, 0);
  const std::uint64_t out_px = out.h * out.w;
  switch (u.kind) {
    case UnitKind::Dense: return std::uint64_t(u.in_channels) * u.out_channels;
    case UnitKind::Conv3x3:
    case UnitKind::Conv1x1: return out_px * u.out_channels * u.kernel() * u.kernel() * u.in_channels;
    case UnitKind::ResidualBasicBlock: {
      std::uint64_t f = out_px * u.out_channels * 9 * u.in_channels + out_px * u.out_channels * 9 * u.out_channels;
      if (u.needs_projection()) f += out_px * u.out_channels * u.in_channels;
      return f;
    }
  }
  return 0;
}

inline std::uint64_t classifier_flops(const ClassifierSpec& c) { return std::uint64_t(c.in_channels) * c.num_classes; }

/// Per-example FLOPs of a unit chain starting at `input`, plus the classifier.
inline std::uint64_t count_flops(const ActShape& input, const std::vector<LocalUnitSpec>& units, const ClassifierSpec& head) {
  std::uint64_t total = classifier_flops(head);
  ActShape s = input;
  for (std::size_t i = 0; i < units.size(); ++i) {
    total += unit_flops(units[i], s);
    s = unit_output_shape(units[i], s, i + 1);
  }
  return total;
}

inline std::uint64_t count_flops(const ValidatedNetwork& net) { return count_flops(net.spec.input, net.spec.units, net.spec.classifier); }
inline std::uint64_t count_flops(const AuxNetworkSpec& aux) { return count_flops(aux.input, aux.units, aux.classifier); }

inline std::uint64_t unit_params(const LocalUnitSpec& u) {
  const std::uint64_t ci = u.in_channels, co = u.out_channels;
  const std::uint64_t norm = u.has_norm ? 2 * co : 0;
  switch (u.kind) {
    case UnitKind::Dense: return ci * co + co;
    case UnitKind::Conv3x3: return 9 * ci * co + norm;
    case UnitKind::Conv1x1: return ci * co + norm;
    case UnitKind::ResidualBasicBlock: {
      std::uint64_t p = 9 * ci * co + 9 * co * co + 2 * norm;
      if (u.needs_projection()) p += ci * co + norm;
      return p;
    }
  }
  return 0;
}

inline std::uint64_t classifier_params(const ClassifierSpec& c) { return std::uint64_t(c.in_channels) * c.num_classes + c.num_classes; }

inline std::uint64_t count_params(const std::vector<LocalUnitSpec>& units, const ClassifierSpec& head) {
  std::uint64_t p = classifier_params(head);
  for (const auto& u : units) p += unit_params(u);
  return p;
}

inline std::uint64_t count_params(const ValidatedNetwork& net) { return count_params(net.spec.units, net.spec.classifier); }
inline std::uint64_t count_params(const AuxNetworkSpec& aux) { return count_params(aux.units, aux.classifier); }

/// Compact notation: "64R", "32Rs2", "16C3", "10FC"; joined with '-'.
inline std::string unit_notation(const LocalUnitSpec& u, bool show_stride) {
  std::string s = std::to_string(u.out_channels);
  switch (u.kind) {
    case UnitKind::ResidualBasicBlock: s += "R"; break;
    case UnitKind::Conv3x3: s += "C3"; break;
    case UnitKind::Conv1x1: s += "C1"; break;
    case UnitKind::Dense: s += "FC"; break;
  }
  if (show_stride && u.stride == 2) s += "s2";
  return s;
}

inline std::string notation(const AuxNetworkSpec& aux, bool show_stride = false) {
  std::string s;
  for (const auto& u : aux.units) s += unit_notation(u, show_stride) + "-";
  return s + "AP-" + std::to_string(aux.classifier.num_classes) + "FC";
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

/// ResNet-(6n+2) for 32x32 inputs: stem + three stages of n basic blocks
/// with 16/32/64 channels. The stem counts as local unit 1, so L = 3n + 1.
inline PrimaryNetworkSpec resnet_cifar(std::size_t blocks_per_stage, std::size_t num_classes = 10) {
  PrimaryNetworkSpec s;
  s.name = "resnet" + std::to_string(6 * blocks_per_stage + 2) + "-cifar";
  s.input = {3, 32, 32};
  s.units.push_back({UnitKind::Conv3x3, 3, 16, 1, true});
  std::size_t ch = 16;
  for (std::size_t stage = 0; stage < 3; ++stage) {
    const std::size_t out = 16u << stage;
    for (std::size_t b = 0; b < blocks_per_stage; ++b) {
      const std::size_t stride = (stage > 0 && b == 0) ? 2 : 1;
      s.units.push_back({UnitKind::ResidualBasicBlock, ch, out, stride, true});
      ch = out;
    }
  }
  s.classifier = {ch, num_classes};
  return s;
}

inline PrimaryNetworkSpec resnet32_cifar() { return resnet_cifar(5); }
inline PrimaryNetworkSpec resnet110_cifar() { return resnet_cifar(18); }

/// VGG19-style plain stack of 16 conv3x3 units; the first conv of each new
/// stage downsamples with stride 2 in place of max pooling.
inline PrimaryNetworkSpec vgg19_cifar(std::size_t num_classes = 10) {
  PrimaryNetworkSpec s;
  s.name = "vgg19-cifar";
  s.input = {3, 32, 32};
  const std::size_t widths[] = {64, 64, 128, 128, 256, 256, 256, 256, 512, 512, 512, 512, 512, 512, 512, 512};
  const bool down[] = {false, false, true, false, true, false, false, false, true, false, false, false, true, false, false, false};
  std::size_t ch = 3;
  for (std::size_t i = 0; i < 16; ++i) {
    s.units.push_back({UnitKind::Conv3x3, ch, widths[i], down[i] ? std::size_t{2} : std::size_t{1}, true});
    ch = widths[i];
  }
  s.classifier = {ch, num_classes};
  return s;
}

/// Eight conv3x3 units (16 then 32 channels) for desk-scale experiments.
inline PrimaryNetworkSpec tinynet8(ActShape input = {1, 8, 8}, std::size_t num_classes = 10) {
  PrimaryNetworkSpec s;
  s.name = "tinynet8";
  s.input = input;
  s.units.push_back({UnitKind::Conv3x3, input.c, 16, 1, true});
  for (int i = 0; i < 3; ++i) s.units.push_back({UnitKind::Conv3x3, 16, 16, 1, true});
  s.units.push_back({UnitKind::Conv3x3, 16, 32, 2, true});
  for (int i = 0; i < 3; ++i) s.units.push_back({UnitKind::Conv3x3, 32, 32, 1, true});
  s.classifier = {32, num_classes};
  return s;
}

inline PrimaryNetworkSpec preset(const std::string& name, ActShape input = {1, 8, 8}, std::size_t num_classes = 10) {
  if (name == "resnet32-cifar") return resnet_cifar(5, num_classes);
  if (name == "resnet110-cifar") return resnet_cifar(18, num_classes);
  if (name == "vgg19-cifar") return vgg19_cifar(num_classes);
  if (name == "tinynet8") return tinynet8(input, num_classes);
  fail(ErrorCode::ConfigError, "unknown network preset '" + name + "'");
}

// ---------------------------------------------------------------------------
// Text form
// ---------------------------------------------------------------------------

inline TextDoc to_textdoc(const PrimaryNetworkSpec& s) {
  using textvalue::from_bool;
  TextDoc doc;
  doc.root().set("format", "auglocal-netspec").set("version", "1");
  doc.section("network")
      .set("name", s.name)
      .set("input_channels", std::to_string(s.input.c))
      .set("input_height", std::to_string(s.input.h))
      .set("input_width", std::to_string(s.input.w))
      .set("units", std::to_string(s.units.size()));
  for (std::size_t i = 0; i < s.units.size(); ++i) {
    const auto& u = s.units[i];
    doc.section("unit." + std::to_string(i + 1))
        .set("kind", to_string(u.kind))
        .set("in_channels", std::to_string(u.in_channels))
        .set("out_channels", std::to_string(u.out_channels))
        .set("stride", std::to_string(u.stride))
        .set("has_norm", from_bool(u.has_norm));
  }
  doc.section("classifier")
      .set("pooling", "global-average-pool")
      .set("in_channels", std::to_string(s.classifier.in_channels))
      .set("num_classes", std::to_string(s.classifier.num_classes));
  return doc;
}

namespace detail {

inline const std::string& require_key(const TextDoc::Section& s, const std::string& key) {
  const std::string* v = s.find(key);
  if (!v) fail(ErrorCode::ConfigError, "[" + s.name + "] missing key '" + key + "'");
  return *v;
}

inline void reject_unknown(const TextDoc::Section& s, std::initializer_list<std::string_view> known) {
  for (const auto& [k, v] : s.entries) {
    bool ok = false;
    for (auto kk : known) ok = ok || kk == k;
    if (!ok) fail(ErrorCode::ConfigError, "[" + s.name + "] unknown key '" + k + "'");
  }
}

inline std::size_t positive(const TextDoc::Section& s, const std::string& key) {
  const long long v = textvalue::to_int(require_key(s, key), "[" + s.name + "] " + key);
  if (v <= 0) fail(ErrorCode::ConfigError, "[" + s.name + "] " + key + " must be positive");
  return static_cast<std::size_t>(v);
}

}  // namespace detail

inline PrimaryNetworkSpec from_textdoc(const TextDoc& doc) {
  using detail::positive;
  using detail::require_key;
  const auto& root = doc.root();
  if (require_key(root, "format") != "auglocal-netspec") fail(ErrorCode::ConfigError, "not a netspec document");
  if (require_key(root, "version") != "1") fail(ErrorCode::ConfigError, "unsupported netspec version");
  detail::reject_unknown(root, {"format", "version"});
  const auto* net = doc.find_section("network");
  if (!net) fail(ErrorCode::ConfigError, "missing [network]");
  detail::reject_unknown(*net, {"name", "input_channels", "input_height", "input_width", "units"});
  PrimaryNetworkSpec s;
  s.name = require_key(*net, "name");
  s.input = {positive(*net, "input_channels"), positive(*net, "input_height"), positive(*net, "input_width")};
  const std::size_t n = positive(*net, "units");
  for (std::size_t i = 1; i <= n; ++i) {
    const auto* u = doc.find_section("unit." + std::to_string(i));
    if (!u) fail(ErrorCode::ConfigError, "missing [unit." + std::to_string(i) + "]");
    detail::reject_unknown(*u, {"kind", "in_channels", "out_channels", "stride", "has_norm"});
    s.units.push_back({parse_unit_kind(require_key(*u, "kind")), positive(*u, "in_channels"), positive(*u, "out_channels"),
                       positive(*u, "stride"), textvalue::to_bool(require_key(*u, "has_norm"), "has_norm")});
  }
  const auto* c = doc.find_section("classifier");
  if (!c) fail(ErrorCode::ConfigError, "missing [classifier]");
  detail::reject_unknown(*c, {"pooling", "in_channels", "num_classes"});
  if (require_key(*c, "pooling") != "global-average-pool") fail(ErrorCode::ConfigError, "classifier pooling must be global-average-pool");
  s.classifier = {positive(*c, "in_channels"), positive(*c, "num_classes")};
  for (const auto& sec : doc.sections()) {
    if (sec.name.empty() || sec.name == "network" || sec.name == "classifier") continue;
    if (sec.name.rfind("unit.", 0) == 0) {
      const long long idx = textvalue::to_int(sec.name.substr(5), "section " + sec.name);
      if (idx >= 1 && static_cast<std::size_t>(idx) <= n) continue;
    }
    fail(ErrorCode::ConfigError, "unexpected section [" + sec.name + "]");
  }
  return s;
}

/// Stable identity of a network spec, used to bind checkpoints and plans.
inline std::uint64_t spec_hash(const PrimaryNetworkSpec& s) { return fnv1a64(to_textdoc(s).emit()); }

}  // namespace auglocal
