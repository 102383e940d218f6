#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace verf {

enum class ErrorCode {
  InvalidArgument,
  // geom
  DegenerateBaseline,
  DegeneratePoint,
  AmbiguousCheirality,
  ParallelRays,
  PointBehindCamera,
  // robust
  InsufficientCorrespondences,
  NoConsensus,
  AllHypothesesDegenerate,
  Diverged,
  // flow
  NoFeatures,
  OutOfBounds,
  BadMagic,
  TruncatedFile,
  DimensionOverflow,
  // scene
  EmptyView,
  PoseNotFound,
  BadManifest,
  ImageDecodeError,
  // harness
  ConfigError,
  IoError,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace verf
