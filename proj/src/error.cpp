#include "esbnn/error.hpp"

namespace esbnn {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonBinaryInput: return "NonBinaryInput";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::GroupsIndivisible: return "GroupsIndivisible";
    case ErrorCode::ChannelMismatch: return "ChannelMismatch";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::TargetTooSmall: return "TargetTooSmall";
    case ErrorCode::InvalidArch: return "InvalidArch";
    case ErrorCode::UnknownPreset: return "UnknownPreset";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
    case ErrorCode::ArchFingerprintMismatch: return "ArchFingerprintMismatch";
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::RecordSizeMismatch: return "RecordSizeMismatch";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::EmptyClass: return "EmptyClass";
    case ErrorCode::DataShapeMismatch: return "DataShapeMismatch";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::InvalidLayer: return "InvalidLayer";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

}  // namespace esbnn
