#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "verf/geom.hpp"

namespace verf {

enum class MinimalSolver { EightPoint, FivePoint };

struct RansacParams {
  double sampson_threshold_px = 2.0;  // doubles as the PnP reprojection threshold
  int max_iterations = 2000;
  double confidence = 0.999;
  std::uint64_t seed = 0;
  MinimalSolver solver = MinimalSolver::EightPoint;

  void validate() const;
};

struct Correspondence {
  NormalizedPoint p_a;
  NormalizedPoint p_b;
  PixelPoint source_pixel;
};

struct EssentialEstimate {
  EssentialMatrix E;
  RelativeMotion motion;             // unit translation
  std::vector<std::size_t> inliers;  // Sampson < threshold and cheiral
};

struct PnpEstimate {
  Pose camera_pose;  // camera-to-world in the frame of the 3D points
  std::vector<std::size_t> inliers;
  double mean_reprojection_error_px = 0.0;
};

// Independent RNG seed for hypothesis `index` of a run seeded with `seed`.
std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t index);

// Normalized eight-point fit over >= 8 pairs, projected onto the essential
// manifold. Empty for rank-deficient configurations.
std::optional<EssentialMatrix> essential_eight_point(std::span<const PointPair> pairs);

// Five-point solver; returns every real solution (at most 10).
std::vector<EssentialMatrix> essential_five_point(std::span<const PointPair> pairs);

EssentialEstimate estimate_essential_ransac(std::span<const Correspondence> corrs,
                                            const RansacParams& params, const CameraIntrinsics& K);

// Six-point DLT on calibrated image points. Empty for degenerate configurations.
std::optional<Pose> pnp_dlt(std::span<const Vec3> world, std::span<const NormalizedPoint> image);

// Damped Gauss-Newton on pixel reprojection error.
Pose refine_pnp(const Pose& initial, std::span<const Vec3> world, std::span<const PixelPoint> image,
                const CameraIntrinsics& K, int max_iterations = 50);

double reprojection_error_px(const Pose& camera_pose, const Vec3& world, const PixelPoint& image,
                             const CameraIntrinsics& K);

PnpEstimate solve_pnp_ransac(std::span<const Vec3> world, std::span<const PixelPoint> image,
                             const CameraIntrinsics& K, const RansacParams& params);

}  // namespace verf
