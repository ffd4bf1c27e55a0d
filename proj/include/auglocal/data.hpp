// Copyright 2026 The AugLocal Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "auglocal/netspec.hpp"
#include "auglocal/tensor.hpp"

namespace auglocal {

struct Batch {
  Tensor x;
  std::vector<int> y;
};

/// Labeled images stored as one (N, C, H, W) tensor.
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  std::size_t num_classes = 0;

  std::size_t size() const { return labels.size(); }
  ActShape shape() const { return {images.dim(1), images.dim(2), images.dim(3)}; }

  Batch gather(std::span<const std::size_t> idx) const {
    const std::size_t per = images.size() / size();
    Batch b{Tensor({idx.size(), images.dim(1), images.dim(2), images.dim(3)}), {}};
    b.y.reserve(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      std::copy_n(images.ptr() + idx[i] * per, per, b.x.ptr() + i * per);
      b.y.push_back(labels[idx[i]]);
    }
    return b;
  }

  /// Rows [begin, end).
  Dataset slice(std::size_t begin, std::size_t end) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = begin; i < end; ++i) idx.push_back(i);
    Batch b = gather(idx);
    return Dataset{std::move(b.x), std::move(b.y), num_classes};
  }
};

/// Per-channel standardization applied after scaling bytes to [0, 1].
struct Normalization {
  std::vector<double> mean;
  std::vector<double> stddev;
};

namespace detail {

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path);
  return std::vector<unsigned char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline double channel_value(const Normalization& n, std::size_t c, std::size_t channels, const char* what, double v) {
  if (n.mean.empty()) return v;
  if (n.mean.size() != channels || n.stddev.size() != channels)
    fail(ErrorCode::ConfigError, std::string(what) + ": normalization needs " + std::to_string(channels) + " channels");
  return (v - n.mean[c]) / n.stddev[c];
}

inline std::uint32_t be32(const unsigned char* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// CIFAR-10 binary batches
// ---------------------------------------------------------------------------

inline constexpr std::size_t kCifarRecord = 1 + 3 * 32 * 32;

/// Reads one or more CIFAR-10 binary batch files: records of one label byte
/// followed by 3072 channel-major pixel bytes.
inline Dataset load_cifar10(const std::vector<std::string>& paths, const Normalization& norm) {
  std::vector<unsigned char> bytes;
  for (const auto& p : paths) {
    auto b = detail::read_file(p);
    if (b.size() % kCifarRecord != 0 || b.empty())
      fail(ErrorCode::TruncatedFile, p + ": " + std::to_string(b.size()) + " bytes is not a whole number of 3073-byte records");
    bytes.insert(bytes.end(), b.begin(), b.end());
  }
  const std::size_t n = bytes.size() / kCifarRecord;
  Dataset ds{Tensor({n, 3, 32, 32}), std::vector<int>(n), 10};
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* rec = bytes.data() + i * kCifarRecord;
    if (rec[0] > 9) fail(ErrorCode::BadLabelByte, "record " + std::to_string(i) + " has label byte " + std::to_string(rec[0]));
    ds.labels[i] = rec[0];
    for (std::size_t j = 0; j < 3072; ++j)
      ds.images[i * 3072 + j] = static_cast<real>(detail::channel_value(norm, j / 1024, 3, "cifar10", rec[1 + j] / 255.0));
  }
  return ds;
}

inline Dataset load_cifar10(const std::string& path, const Normalization& norm) { return load_cifar10(std::vector<std::string>{path}, norm); }

/// Inverse of load_cifar10 for record `i`.
inline std::vector<unsigned char> cifar10_record_bytes(const Dataset& ds, std::size_t i, const Normalization& norm) {
  std::vector<unsigned char> rec(kCifarRecord);
  rec[0] = static_cast<unsigned char>(ds.labels.at(i));
  for (std::size_t j = 0; j < 3072; ++j) {
    double v = ds.images[i * 3072 + j];
    if (!norm.mean.empty()) v = v * norm.stddev[j / 1024] + norm.mean[j / 1024];
    rec[1 + j] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  return rec;
}

// ---------------------------------------------------------------------------
// MNIST IDX
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Reads an IDX image file and its label file into (N, 1, rows, cols) in [0, 1].
inline Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path) {
  const auto img = detail::read_file(images_path);
  const auto lab = detail::read_file(labels_path);
  if (img.size() < 16 || detail::be32(img.data()) != kIdxImagesMagic) fail(ErrorCode::BadMagic, images_path + ": not an IDX image file");
  if (lab.size() < 8 || detail::be32(lab.data()) != kIdxLabelsMagic) fail(ErrorCode::BadMagic, labels_path + ": not an IDX label file");
  const std::size_t n = detail::be32(img.data() + 4), rows = detail::be32(img.data() + 8), cols = detail::be32(img.data() + 12);
  const std::size_t nl = detail::be32(lab.data() + 4);
  if (n == 0 || rows == 0 || cols == 0) fail(ErrorCode::DimMismatch, images_path + ": empty dimensions");
  if (img.size() != 16 + n * rows * cols)
    fail(ErrorCode::DimMismatch, images_path + ": header declares " + std::to_string(n) + "x" + std::to_string(rows) + "x" +
                                     std::to_string(cols) + " but payload has " + std::to_string(img.size() - 16) + " bytes");
  if (lab.size() != 8 + nl) fail(ErrorCode::DimMismatch, labels_path + ": header declares " + std::to_string(nl) + " labels");
  if (nl != n) fail(ErrorCode::DimMismatch, std::to_string(n) + " images but " + std::to_string(nl) + " labels");
  Dataset ds{Tensor({n, 1, rows, cols}), std::vector<int>(n), 10};
  for (std::size_t i = 0; i < n * rows * cols; ++i) ds.images[i] = static_cast<real>(img[16 + i] / 255.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (lab[8 + i] > 9) fail(ErrorCode::BadLabelByte, "label " + std::to_string(i) + " is " + std::to_string(lab[8 + i]));
    ds.labels[i] = lab[8 + i];
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic Gaussian blobs
// ---------------------------------------------------------------------------

struct SyntheticSpec {
  std::size_t classes = 10;
  ActShape dims{1, 8, 8};
  std::size_t per_class = 100;
  std::uint64_t seed = 0;
  double separation = 10.0;  // distance between any two class means, in noise std units
  std::size_t grid = 0;      // means built from grid x grid constant blocks per channel; 0 = per pixel
};

/// Class means of a regular simplex with pairwise distance `separation`.
/// The simplex lives in the span of piecewise-constant block images (or of
/// single pixels when grid = 0), so classes differ in local intensity.
inline std::vector<std::vector<double>> synthetic_means(const SyntheticSpec& s) {
  if (s.classes < 2) fail(ErrorCode::InvalidArgument, "synthetic data needs at least 2 classes");
  const std::size_t D = s.dims.elements();
  const std::size_t g = s.grid == 0 ? 0 : s.grid;
  if (g && (s.dims.h % g != 0 || s.dims.w % g != 0)) fail(ErrorCode::InvalidArgument, "grid must divide the image size");
  const std::size_t basis = g ? s.dims.c * g * g : D;
  if (basis < s.classes) fail(ErrorCode::InvalidArgument, "too few basis patterns for the class count");

  // orthonormal rows q_k in R^basis by Gram-Schmidt on seeded Gaussians
  std::mt19937_64 rng(fnv1a64("synthetic-means", s.seed));
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<std::vector<double>> q;
  while (q.size() < s.classes) {
    std::vector<double> v(basis);
    for (auto& x : v) x = nd(rng);
    for (const auto& u : q) {
      double dot = 0;
      for (std::size_t i = 0; i < basis; ++i) dot += v[i] * u[i];
      for (std::size_t i = 0; i < basis; ++i) v[i] -= dot * u[i];
    }
    double norm = 0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-6) continue;
    for (auto& x : v) x /= norm;
    q.push_back(std::move(v));
  }

  const double scale = s.separation / std::sqrt(2.0);
  std::vector<std::vector<double>> means(s.classes, std::vector<double>(D, 0.0));
  for (std::size_t k = 0; k < s.classes; ++k) {
    if (!g) {
      for (std::size_t i = 0; i < D; ++i) means[k][i] = scale * q[k][i];
      continue;
    }
    const std::size_t bh = s.dims.h / g, bw = s.dims.w / g;
    const double amp = 1.0 / std::sqrt(static_cast<double>(bh * bw));  // unit-norm block pattern
    for (std::size_t c = 0; c < s.dims.c; ++c)
      for (std::size_t y = 0; y < s.dims.h; ++y)
        for (std::size_t x = 0; x < s.dims.w; ++x) {
          const std::size_t j = (c * g + y / bh) * g + x / bw;
          means[k][(c * s.dims.h + y) * s.dims.w + x] = scale * q[k][j] * amp;
        }
  }
  return means;
}

/// Unit-covariance Gaussian blobs around synthetic_means, classes interleaved.
/// `stream` selects an independent sample (e.g. train vs test) of the same
/// distribution.
inline Dataset gen_synthetic(const SyntheticSpec& s, std::uint64_t stream = 0) {
  const auto means = synthetic_means(s);
  const std::size_t D = s.dims.elements();
  const std::size_t n = s.classes * s.per_class;
  Dataset ds{Tensor({n, s.dims.c, s.dims.h, s.dims.w}), std::vector<int>(n), s.classes};
  std::mt19937_64 rng(fnv1a64("synthetic-samples", s.seed * 0x100000001b3ull + stream));
  std::normal_distribution<double> nd(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = i % s.classes;
    ds.labels[i] = static_cast<int>(k);
    for (std::size_t j = 0; j < D; ++j) ds.images[i * D + j] = static_cast<real>(means[k][j] + nd(rng));
  }
  return ds;
}

}  // namespace auglocal
