#include "verf/error.hpp"

namespace verf {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::DegenerateBaseline: return "DegenerateBaseline";
    case ErrorCode::DegeneratePoint: return "DegeneratePoint";
    case ErrorCode::AmbiguousCheirality: return "AmbiguousCheirality";
    case ErrorCode::ParallelRays: return "ParallelRays";
    case ErrorCode::PointBehindCamera: return "PointBehindCamera";
    case ErrorCode::InsufficientCorrespondences: return "InsufficientCorrespondences";
    case ErrorCode::NoConsensus: return "NoConsensus";
    case ErrorCode::AllHypothesesDegenerate: return "AllHypothesesDegenerate";
    case ErrorCode::Diverged: return "Diverged";
    case ErrorCode::NoFeatures: return "NoFeatures";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::DimensionOverflow: return "DimensionOverflow";
    case ErrorCode::EmptyView: return "EmptyView";
    case ErrorCode::PoseNotFound: return "PoseNotFound";
    case ErrorCode::BadManifest: return "BadManifest";
    case ErrorCode::ImageDecodeError: return "ImageDecodeError";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace verf
