#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "verf/flow.hpp"
#include "verf/geom.hpp"
#include "verf/image.hpp"
#include "verf/robust.hpp"
#include "verf/scene.hpp"

namespace verf {

enum class Method { Light, Pnp, Disparity };
enum class Decision { Correct, Incorrect };
enum class FailureReason { EmptyRender, TooFewFeatures, EssentialFailed, TooFewSurvivors, PnpDiverged };

std::string_view to_string(Method m);
std::string_view to_string(Decision d);
std::string_view to_string(FailureReason r);
Method method_from_string(std::string_view name);

struct MonitorConfig {
  double epsilon = 1.0;
  double light_sigma_px = 0.5;
  std::optional<double> pnp_sigma;  // epsilon / 4 when unset
  double disparity_sigma_px = 4.0;
  double confidence_cutoff = 0.5;
  double pnp_baseline_factor = 2.0;
  int min_inliers = 10;
  RansacParams ransac;
  ShiTomasiParams features;

  void validate() const;
  double effective_pnp_sigma() const { return pnp_sigma.value_or(epsilon / 4.0); }
};

// One point that entered the VERF-Light score.
struct ScoredPoint {
  NormalizedPoint est;
  NormalizedPoint gt_on_line;
  NormalizedPoint test_on_line;
  double along_gt_px = 0.0;    // signed displacement along the epipolar line
  double along_test_px = 0.0;
  double score = 0.0;
};

struct VerificationReport {
  Method method = Method::Light;
  double confidence = 0.0;
  Decision decision = Decision::Incorrect;
  std::optional<Vec3> direction_estimate;  // world frame, unit
  std::size_t n = 0;
  std::size_t n_prime = 0;
  std::size_t n_double_prime = 0;
  std::optional<Vec3> estimated_offset;    // world frame, metric (PnP)
  std::optional<Pose> corrected_pose;      // PnP
  std::optional<FailureReason> failure_reason;
  std::string failure_detail;
  std::vector<ScoredPoint> scored_points;  // VERF-Light only
};

// Known relative geometry between the estimate and the true pose; `direction`
// is the unit translation in the estimated camera's frame.
struct TruthEssentialOverride {
  EssentialMatrix E;
  Vec3 direction;

  static TruthEssentialOverride from_poses(const Pose& estimate, const Pose& truth);
};

VerificationReport verf_light(const GrayImage& sensor, const Pose& x_est, const CameraIntrinsics& K,
                              RenderBackend& render, FlowBackend& flow, const MonitorConfig& cfg,
                              const std::optional<TruthEssentialOverride>& override = std::nullopt);

VerificationReport verf_pnp(const GrayImage& sensor, const Pose& x_est, const CameraIntrinsics& K,
                            RenderBackend& render, FlowBackend& flow, const MonitorConfig& cfg);

VerificationReport disparity_check(const GrayImage& sensor, const Pose& x_est,
                                   const CameraIntrinsics& K, RenderBackend& render,
                                   FlowBackend& flow, const MonitorConfig& cfg);

// q = Phi((epsilon - offset) / sigma).
double pnp_confidence(double offset_norm, double epsilon, double sigma);
// q = 2 (1 - Phi(mean_disparity / sigma)).
double disparity_confidence(double mean_disparity_px, double sigma_px);

}  // namespace verf
