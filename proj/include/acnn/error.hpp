#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace acnn {

enum class ErrorCode {
  LengthMismatch,
  ZeroDim,
  ShapeMismatch,
  EmptyOutput,
  NonFinite,
  BadRate,
  BadLabel,
  UnknownArchitecture,
  BadScale,
  BadClassCount,
  NoStridedLayers,
  IoError,
  BadMagic,
  VersionMismatch,
  ChecksumMismatch,
  NonFiniteGradient,
  DivergedLoss,
  EmptyDataset,
  BadRecordLength,
  DegenerateCovariance,
  BadNeuron,
  SwitchesUnavailable,
  BadConfig,
};

std::string_view to_string(ErrorCode code);

// All library failures are reported as acnn::Error carrying a machine-checkable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace acnn
