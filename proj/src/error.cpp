#include "acnn/error.hpp"

namespace acnn {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::ZeroDim: return "ZeroDim";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::EmptyOutput: return "EmptyOutput";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::BadRate: return "BadRate";
    case ErrorCode::BadLabel: return "BadLabel";
    case ErrorCode::UnknownArchitecture: return "UnknownArchitecture";
    case ErrorCode::BadScale: return "BadScale";
    case ErrorCode::BadClassCount: return "BadClassCount";
    case ErrorCode::NoStridedLayers: return "NoStridedLayers";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::DivergedLoss: return "DivergedLoss";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::BadRecordLength: return "BadRecordLength";
    case ErrorCode::DegenerateCovariance: return "DegenerateCovariance";
    case ErrorCode::BadNeuron: return "BadNeuron";
    case ErrorCode::SwitchesUnavailable: return "SwitchesUnavailable";
    case ErrorCode::BadConfig: return "BadConfig";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

}  // namespace acnn
