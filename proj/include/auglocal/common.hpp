// Copyright 2026 The AugLocal Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace auglocal {

#ifdef AUGLOCAL_FLOAT32
using real = float;
#else
using real = double;
#endif

enum class ErrorCode {
  ShapeMismatch,
  UnsupportedOperator,
  NonScalarLoss,
  EmptyTape,
  NonDeterministicFunction,
  ChannelChainBreak,
  SpatialCollapse,
  InvalidDepthBounds,
  DepthExceedsRemaining,
  UnknownStrategy,
  FlopsBudgetExceeded,
  PlanMismatch,
  LabelOutOfRange,
  DeadlockDetected,
  WorkerPanicPropagated,
  RowCountMismatch,
  SpecMismatch,
  TruncatedFile,
  BadLabelByte,
  BadMagic,
  DimMismatch,
  ConfigError,
  IoError,
  CheckpointMismatch,
  InvalidArgument,
  CrossThreadTape,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::UnsupportedOperator: return "UnsupportedOperator";
    case ErrorCode::NonScalarLoss: return "NonScalarLoss";
    case ErrorCode::EmptyTape: return "EmptyTape";
    case ErrorCode::NonDeterministicFunction: return "NonDeterministicFunction";
    case ErrorCode::ChannelChainBreak: return "ChannelChainBreak";
    case ErrorCode::SpatialCollapse: return "SpatialCollapse";
    case ErrorCode::InvalidDepthBounds: return "InvalidDepthBounds";
    case ErrorCode::DepthExceedsRemaining: return "DepthExceedsRemaining";
    case ErrorCode::UnknownStrategy: return "UnknownStrategy";
    case ErrorCode::FlopsBudgetExceeded: return "FlopsBudgetExceeded";
    case ErrorCode::PlanMismatch: return "PlanMismatch";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::DeadlockDetected: return "DeadlockDetected";
    case ErrorCode::WorkerPanicPropagated: return "WorkerPanicPropagated";
    case ErrorCode::RowCountMismatch: return "RowCountMismatch";
    case ErrorCode::SpecMismatch: return "SpecMismatch";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::BadLabelByte: return "BadLabelByte";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::CheckpointMismatch: return "CheckpointMismatch";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::CrossThreadTape: return "CrossThreadTape";
  }
  return "Unknown";
}

/// All library failures surface as this exception; `code()` is stable and
/// machine-readable, `what()` carries the human context.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 1469598103934665603ull) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace auglocal
