// Copyright 2026 The AugLocal Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "auglocal/common.hpp"

namespace auglocal {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

inline void check_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > 4) fail(ErrorCode::ShapeMismatch, "rank must be 1..4, got " + shape_str(shape));
  for (auto e : shape)
    if (e == 0) fail(ErrorCode::ShapeMismatch, "zero extent in " + shape_str(shape));
}

/// Dense row-major array. Activations use the (N, C, H, W) convention.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, real fill = real(0)) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(numel(shape_), fill);
  }

  Tensor(Shape shape, std::vector<real> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (data_.size() != numel(shape_))
      fail(ErrorCode::ShapeMismatch, "buffer of " + std::to_string(data_.size()) + " elements for shape " + shape_str(shape_));
  }

  static Tensor scalar(real v) { return Tensor({1}, std::vector<real>{v}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<real> data() noexcept { return data_; }
  std::span<const real> data() const noexcept { return data_; }
  real* ptr() noexcept { return data_.data(); }
  const real* ptr() const noexcept { return data_.data(); }
  std::vector<real>& vec() noexcept { return data_; }
  const std::vector<real>& vec() const noexcept { return data_; }

  real& operator[](std::size_t i) { return data_[i]; }
  real operator[](std::size_t i) const { return data_[i]; }

  real item() const {
    if (data_.size() != 1) fail(ErrorCode::NonScalarLoss, "item() on tensor of shape " + shape_str(shape_));
    return data_[0];
  }

  Tensor reshaped(Shape shape) const {
    if (numel(shape) != data_.size())
      fail(ErrorCode::ShapeMismatch, "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    return Tensor(std::move(shape), data_);
  }

  void fill(real v) { std::fill(data_.begin(), data_.end(), v); }

  void add_(const Tensor& other) {
    if (other.size() != size()) fail(ErrorCode::ShapeMismatch, "add_ " + shape_str(shape_) + " += " + shape_str(other.shape_));
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  Shape shape_;
  std::vector<real> data_;
};

/// Plain GEMM kernels over row-major buffers. All accumulate into C.
namespace blas {

namespace detail {

inline constexpr std::size_t kColumnBlock = 256;

// C[M,N] += op(A)[M,K] * B[K,N], with op(A)(i,k) = a(i, k). Columns are
// processed in blocks so the touched slice of B stays cache resident.
template <class AAt>
inline void gemm_blocked(std::size_t M, std::size_t N, std::size_t K, AAt a, const real* B, real* C) {
  for (std::size_t j0 = 0; j0 < N; j0 += kColumnBlock) {
    const std::size_t jn = std::min(N, j0 + kColumnBlock) - j0;
    std::size_t i = 0;
    for (; i + 4 <= M; i += 4) {  // four rows of C share each load of B
      real* c0 = C + i * N + j0;
      real* c1 = c0 + N;
      real* c2 = c1 + N;
      real* c3 = c2 + N;
      for (std::size_t k = 0; k < K; ++k) {
        const real a0 = a(i, k), a1 = a(i + 1, k), a2 = a(i + 2, k), a3 = a(i + 3, k);
        const real* b = B + k * N + j0;
        for (std::size_t j = 0; j < jn; ++j) {
          const real bj = b[j];
          c0[j] += a0 * bj;
          c1[j] += a1 * bj;
          c2[j] += a2 * bj;
          c3[j] += a3 * bj;
        }
      }
    }
    for (; i < M; ++i) {
      real* c = C + i * N + j0;
      for (std::size_t k = 0; k < K; ++k) {
        const real av = a(i, k);
        const real* b = B + k * N + j0;
        for (std::size_t j = 0; j < jn; ++j) c[j] += av * b[j];
      }
    }
  }
}

}  // namespace detail

// C[M,N] += A[M,K] * B[K,N]
inline void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const real* A, const real* B, real* C) {
  detail::gemm_blocked(M, N, K, [A, K](std::size_t i, std::size_t k) { return A[i * K + k]; }, B, C);
}

// C[M,N] += A[M,K] * B[N,K]^T
inline void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const real* A, const real* B, real* C) {
  constexpr std::size_t kLanes = 8;  // independent partial sums; fixed order keeps results reproducible
  const std::size_t kv = K - K % kLanes;
  for (std::size_t i = 0; i < M; ++i) {
    const real* a = A + i * K;
    real* c = C + i * N;
    for (std::size_t j = 0; j < N; ++j) {
      const real* b = B + j * K;
      real acc[kLanes] = {};
      for (std::size_t k = 0; k < kv; k += kLanes)
        for (std::size_t u = 0; u < kLanes; ++u) acc[u] += a[k + u] * b[k + u];
      real s = 0;
      for (std::size_t u = 0; u < kLanes; ++u) s += acc[u];
      for (std::size_t k = kv; k < K; ++k) s += a[k] * b[k];
      c[j] += s;
    }
  }
}

// C[M,N] += A[K,M]^T * B[K,N]
inline void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const real* A, const real* B, real* C) {
  detail::gemm_blocked(M, N, K, [A, M](std::size_t i, std::size_t k) { return A[k * M + i]; }, B, C);
}

}  // namespace blas
}  // namespace auglocal
