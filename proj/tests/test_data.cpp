// Copyright 2026 The AugLocal Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include <unistd.h>

#include "auglocal/data.hpp"
#include "test_util.hpp"

using namespace auglocal;
using auglocal::testing::error_code_of;

namespace {

namespace fs = std::filesystem;

fs::path temp_dir() {
  const fs::path p = fs::temp_directory_path() / ("auglocal_test_data_" + std::to_string(::getpid()));
  fs::create_directories(p);
  return p;
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

std::vector<unsigned char> cifar_bytes(std::size_t records, std::uint64_t seed) {
  std::mt19937 rng(static_cast<unsigned>(seed));
  std::vector<unsigned char> b(records * 3073);
  for (std::size_t r = 0; r < records; ++r) {
    b[r * 3073] = static_cast<unsigned char>(rng() % 10);
    for (std::size_t j = 1; j < 3073; ++j) b[r * 3073 + j] = static_cast<unsigned char>(rng() % 256);
  }
  return b;
}

void put_be32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<unsigned char>(v >> s));
}

// IDX pair with n images of rows x cols.
std::pair<std::vector<unsigned char>, std::vector<unsigned char>> idx_bytes(std::uint32_t n, std::uint32_t rows, std::uint32_t cols) {
  std::vector<unsigned char> img, lab;
  put_be32(img, 0x803);
  put_be32(img, n);
  put_be32(img, rows);
  put_be32(img, cols);
  for (std::uint32_t i = 0; i < n * rows * cols; ++i) img.push_back(static_cast<unsigned char>((i * 37 + 11) % 256));
  put_be32(lab, 0x801);
  put_be32(lab, n);
  for (std::uint32_t i = 0; i < n; ++i) lab.push_back(static_cast<unsigned char>(i % 10));
  return {img, lab};
}

// Nearest-class-mean accuracy with means estimated on `train`.
double nearest_mean_accuracy(const Dataset& train, const Dataset& test) {
  const std::size_t D = train.images.size() / train.size(), K = train.num_classes;
  std::vector<double> mu(K * D, 0.0);
  std::vector<std::size_t> count(K, 0);
  for (std::size_t i = 0; i < train.size(); ++i) {
    ++count[train.labels[i]];
    for (std::size_t j = 0; j < D; ++j) mu[train.labels[i] * D + j] += train.images[i * D + j];
  }
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t j = 0; j < D; ++j) mu[k * D + j] /= static_cast<double>(count[k]);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    std::size_t best = 0;
    double best_d = 1e300;
    for (std::size_t k = 0; k < K; ++k) {
      double d = 0;
      for (std::size_t j = 0; j < D; ++j) d += (test.images[i * D + j] - mu[k * D + j]) * (test.images[i * D + j] - mu[k * D + j]);
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    hits += static_cast<int>(best) == test.labels[i];
  }
  return static_cast<double>(hits) / static_cast<double>(test.size());
}

}  // namespace

TEST(Cifar10, RecordArithmetic) {
  const auto dir = temp_dir();
  write_bytes(dir / "b1.bin", cifar_bytes(7, 1));
  write_bytes(dir / "b2.bin", cifar_bytes(5, 2));
  const Dataset one = load_cifar10((dir / "b1.bin").string(), {});
  EXPECT_EQ(one.size(), 7u);
  EXPECT_EQ(one.images.shape(), (Shape{7, 3, 32, 32}));
  const Dataset both = load_cifar10(std::vector<std::string>{(dir / "b1.bin").string(), (dir / "b2.bin").string()}, {});
  EXPECT_EQ(both.size(), 12u);
  fs::remove_all(dir);
}

TEST(Cifar10, AllZeroRecordStandardizes) {
  const auto dir = temp_dir();
  write_bytes(dir / "z.bin", std::vector<unsigned char>(3073, 0));
  const Normalization norm{{0.4914, 0.4822, 0.4465}, {0.2470, 0.2435, 0.2616}};
  const Dataset ds = load_cifar10((dir / "z.bin").string(), norm);
  EXPECT_EQ(ds.labels[0], 0);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t j = 0; j < 1024; ++j) EXPECT_DOUBLE_EQ(ds.images[c * 1024 + j], (0 - norm.mean[c]) / norm.stddev[c]);
  fs::remove_all(dir);
}

TEST(Cifar10, ByteRoundTrip) {
  const auto dir = temp_dir();
  const auto bytes = cifar_bytes(3, 9);
  write_bytes(dir / "r.bin", bytes);
  const Normalization norm{{0.5, 0.4, 0.3}, {0.2, 0.25, 0.3}};
  const Dataset ds = load_cifar10((dir / "r.bin").string(), norm);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto rec = cifar10_record_bytes(ds, i, norm);
    EXPECT_TRUE(std::equal(rec.begin(), rec.end(), bytes.begin() + static_cast<std::ptrdiff_t>(i * 3073))) << "record " << i;
  }
  fs::remove_all(dir);
}

TEST(Cifar10, Errors) {
  const auto dir = temp_dir();
  write_bytes(dir / "short.bin", std::vector<unsigned char>(3072, 1));
  EXPECT_EQ(error_code_of([&] { load_cifar10((dir / "short.bin").string(), {}); }), ErrorCode::TruncatedFile);
  auto bad = cifar_bytes(2, 3);
  bad[3073] = 10;
  write_bytes(dir / "label.bin", bad);
  EXPECT_EQ(error_code_of([&] { load_cifar10((dir / "label.bin").string(), {}); }), ErrorCode::BadLabelByte);
  EXPECT_EQ(error_code_of([&] { load_cifar10((dir / "missing.bin").string(), {}); }), ErrorCode::IoError);
  fs::remove_all(dir);
}

TEST(MnistIdx, LoadsAndMatchesIndependentReader) {
  const auto dir = temp_dir();
  auto [img, lab] = idx_bytes(4, 28, 28);
  write_bytes(dir / "img", img);
  write_bytes(dir / "lab", lab);
  const Dataset ds = load_mnist_idx((dir / "img").string(), (dir / "lab").string());
  EXPECT_EQ(ds.images.shape(), (Shape{4, 1, 28, 28}));
  EXPECT_EQ(ds.labels, (std::vector<int>{0, 1, 2, 3}));

  // independent reader: raw C stdio, skip the 16-byte header, sum the first image
  std::FILE* f = std::fopen((dir / "img").c_str(), "rb");
  ASSERT_NE(f, nullptr);
  std::fseek(f, 16, SEEK_SET);
  unsigned long raw = 0;
  for (int i = 0; i < 784; ++i) raw += static_cast<unsigned long>(std::fgetc(f));
  std::fclose(f);
  double sum = 0;
  for (std::size_t i = 0; i < 784; ++i) sum += ds.images[i];
  EXPECT_NEAR(sum, static_cast<double>(raw) / 255.0, 1e-9);
  EXPECT_EQ(raw, 99720ul);  // computed once outside the build
  fs::remove_all(dir);
}

TEST(MnistIdx, Errors) {
  const auto dir = temp_dir();
  auto [img, lab] = idx_bytes(3, 28, 28);
  auto wrong = img;
  wrong[3] = 0x01;
  write_bytes(dir / "wrong", wrong);
  write_bytes(dir / "lab", lab);
  EXPECT_EQ(error_code_of([&] { load_mnist_idx((dir / "wrong").string(), (dir / "lab").string()); }), ErrorCode::BadMagic);

  auto header_big = img;  // claims 60000 images
  header_big[4] = 0;
  header_big[5] = 0;
  header_big[6] = 0xEA;
  header_big[7] = 0x60;
  write_bytes(dir / "big", header_big);
  EXPECT_EQ(error_code_of([&] { load_mnist_idx((dir / "big").string(), (dir / "lab").string()); }), ErrorCode::DimMismatch);

  auto [img2, lab2] = idx_bytes(2, 28, 28);
  write_bytes(dir / "img2", img2);
  EXPECT_EQ(error_code_of([&] { load_mnist_idx((dir / "img2").string(), (dir / "lab").string()); }), ErrorCode::DimMismatch);
  fs::remove_all(dir);
}

TEST(Synthetic, SameSeedSameBytes) {
  SyntheticSpec s;
  s.per_class = 20;
  s.grid = 4;
  const Dataset a = gen_synthetic(s), b = gen_synthetic(s);
  EXPECT_TRUE(a.images == b.images);
  EXPECT_EQ(a.labels, b.labels);
  s.seed = 1;
  EXPECT_FALSE(gen_synthetic(s).images == a.images);
  EXPECT_FALSE(gen_synthetic(s, 1).images == gen_synthetic(s, 0).images);
}

TEST(Synthetic, MeansFormRegularSimplex) {
  for (std::size_t grid : {0, 2, 4}) {
    SyntheticSpec s;
    s.grid = grid;
    s.dims = {3, 8, 8};
    s.separation = 7;
    const auto m = synthetic_means(s);
    for (std::size_t a = 0; a < m.size(); ++a)
      for (std::size_t b = a + 1; b < m.size(); ++b) {
        double d = 0;
        for (std::size_t j = 0; j < m[a].size(); ++j) d += (m[a][j] - m[b][j]) * (m[a][j] - m[b][j]);
        EXPECT_NEAR(std::sqrt(d), 7.0, 1e-9);
      }
  }
  SyntheticSpec bad;
  bad.grid = 2;  // 4 patterns for 10 classes on one channel
  EXPECT_EQ(error_code_of([&] { synthetic_means(bad); }), ErrorCode::InvalidArgument);
  bad.grid = 3;
  EXPECT_EQ(error_code_of([&] { synthetic_means(bad); }), ErrorCode::InvalidArgument);
  bad.classes = 1;
  EXPECT_EQ(error_code_of([&] { synthetic_means(bad); }), ErrorCode::InvalidArgument);
}

TEST(Synthetic, WideSeparationIsLinearlySeparable) {
  SyntheticSpec s;
  s.separation = 10;
  s.grid = 4;
  const Dataset tr = gen_synthetic(s, 0), te = gen_synthetic(s, 1);
  EXPECT_GT(nearest_mean_accuracy(tr, te), 0.99);
}

TEST(Synthetic, ZeroSeparationIsChance) {
  SyntheticSpec s;
  s.separation = 0;
  const Dataset tr = gen_synthetic(s, 0), te = gen_synthetic(s, 1);
  EXPECT_NEAR(nearest_mean_accuracy(tr, te), 0.1, 0.04);
}

TEST(Dataset, GatherAndSlice) {
  SyntheticSpec s;
  s.per_class = 3;
  s.grid = 4;
  const Dataset ds = gen_synthetic(s);
  const std::vector<std::size_t> idx{5, 0, 29};
  const Batch b = ds.gather(idx);
  EXPECT_EQ(b.y, (std::vector<int>{5, 0, 9}));
  for (std::size_t j = 0; j < 64; ++j) EXPECT_EQ(b.x[2 * 64 + j], ds.images[29 * 64 + j]);
  const Dataset sl = ds.slice(10, 20);
  EXPECT_EQ(sl.size(), 10u);
  EXPECT_EQ(sl.labels[0], ds.labels[10]);
}
