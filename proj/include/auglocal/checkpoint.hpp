// Copyright 2026 The AugLocal Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "auglocal/trainer.hpp"

namespace auglocal {

// Layout (little endian):
//   "AUGLCKPT" u32 version u64 spec_hash u64 plan_hash u32 entries
//   entry: u32 name_len, name, u32 rank, u64 dims[rank], f64 data[numel]
// Entry names: parameter names, "<param>@v" for momentum buffers, and
// "<unit>.bn<i>.mean" / ".var" for norm statistics.

inline constexpr char kCheckpointMagic[8] = {'A', 'U', 'G', 'L', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline std::uint64_t plan_hash(const Model& m) { return m.local() ? fnv1a64(to_textdoc(m.plan()).emit()) : 0; }

template <class F>
void for_each_norm(Model& m, F&& f) {
  Network& net = m.primary();
  for (std::size_t l = 1; l <= net.L(); ++l) {
    auto& ns = net.unit(l).norms();
    for (std::size_t i = 0; i < ns.size(); ++i) f("u" + std::to_string(l) + ".bn" + std::to_string(i), ns[i]);
  }
  for (std::size_t l = 1; l <= m.aux_count(); ++l) {
    auto& units = m.aux(l).units();
    for (std::size_t j = 0; j < units.size(); ++j) {
      auto& ns = units[j].norms();
      for (std::size_t i = 0; i < ns.size(); ++i)
        f("a" + std::to_string(l) + ".u" + std::to_string(j + 1) + ".bn" + std::to_string(i), ns[i]);
    }
  }
}

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  template <class T>
  void put(T v) {
    raw(&v, sizeof v);
  }
  void tensor(const std::string& name, const Tensor& t) {
    put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    raw(name.data(), name.size());
    put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(d);
    for (std::size_t i = 0; i < t.size(); ++i) put<double>(static_cast<double>(t[i]));
  }
  const std::vector<unsigned char>& bytes() const { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<unsigned char>& b, std::string path) : buf_(b), path_(std::move(path)) {}
  void raw(void* p, std::size_t n) {
    if (pos_ + n > buf_.size()) fail(ErrorCode::TruncatedFile, path_ + ": checkpoint ends early at byte " + std::to_string(pos_));
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  template <class T>
  T get() {
    T v;
    raw(&v, sizeof v);
    return v;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  const std::vector<unsigned char>& buf_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Writes parameters, norm statistics, and (if given) momentum buffers.
inline void save_checkpoint(const std::string& path, Model& model, const Optimizers* opt = nullptr) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, 8);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint64_t>(model.primary().hash());
  w.put<std::uint64_t>(detail::plan_hash(model));

  std::vector<std::pair<std::string, const Tensor*>> entries;
  for (auto* p : model.all_parameters()) entries.emplace_back(p->name, &p->value);
  if (opt)
    for (const auto& o : opt->layers)
      for (std::size_t k = 0; k < o.params().size(); ++k) entries.emplace_back(o.params()[k]->name + "@v", &o.velocity()[k]);
  detail::for_each_norm(model, [&](const std::string& tag, BatchNormState& s) {
    entries.emplace_back(tag + ".mean", &s.running_mean);
    entries.emplace_back(tag + ".var", &s.running_var);
  });
  w.put<std::uint32_t>(static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) w.tensor(name, *t);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(w.bytes().data()), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) fail(ErrorCode::IoError, "short write to " + path);
}

/// Restores a checkpoint into a model built from the same network and plan.
/// Momentum buffers are restored only when `opt` is given.
inline void load_checkpoint(const std::string& path, Model& model, Optimizers* opt = nullptr) {
  const auto bytes = detail::read_file(path);
  detail::ByteReader r(bytes, path);
  char magic[8];
  r.raw(magic, 8);
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0) fail(ErrorCode::BadMagic, path + ": not a checkpoint");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) fail(ErrorCode::CheckpointMismatch, path + ": unsupported checkpoint version " + std::to_string(version));
  if (r.get<std::uint64_t>() != model.primary().hash())
    fail(ErrorCode::CheckpointMismatch, path + ": checkpoint was written for a different network");
  if (r.get<std::uint64_t>() != detail::plan_hash(model))
    fail(ErrorCode::CheckpointMismatch, path + ": checkpoint was written for a different auxiliary plan");

  std::map<std::string, Tensor> stored;
  const auto n = r.get<std::uint32_t>();
  for (std::uint32_t e = 0; e < n; ++e) {
    std::string name(r.get<std::uint32_t>(), '\0');
    r.raw(name.data(), name.size());
    Shape shape(r.get<std::uint32_t>());
    for (auto& d : shape) d = static_cast<std::size_t>(r.get<std::uint64_t>());
    Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<real>(r.get<double>());
    stored.emplace(std::move(name), std::move(t));
  }
  if (!r.done()) fail(ErrorCode::CheckpointMismatch, path + ": trailing bytes after the last entry");

  auto take = [&](const std::string& name, Tensor& dst) {
    auto it = stored.find(name);
    if (it == stored.end()) fail(ErrorCode::CheckpointMismatch, path + ": missing entry " + name);
    if (it->second.shape() != dst.shape()) fail(ErrorCode::CheckpointMismatch, path + ": shape mismatch for " + name);
    dst = it->second;
  };
  for (auto* p : model.all_parameters()) take(p->name, p->value);
  detail::for_each_norm(model, [&](const std::string& tag, BatchNormState& s) {
    take(tag + ".mean", s.running_mean);
    take(tag + ".var", s.running_var);
  });
  if (opt)
    for (auto& o : opt->layers)
      for (std::size_t k = 0; k < o.params().size(); ++k) take(o.params()[k]->name + "@v", o.velocity()[k]);
}

}  // namespace auglocal
