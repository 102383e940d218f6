#include "verf/monitor.hpp"

#include <cmath>

#include "verf/error.hpp"
#include "verf/stats.hpp"

namespace verf {

namespace {

struct Failure {
  FailureReason reason;
  std::string detail;
};

VerificationReport& fail(VerificationReport& r, FailureReason reason, std::string detail) {
  r.confidence = 0.0;
  r.decision = Decision::Incorrect;
  r.failure_reason = reason;
  r.failure_detail = std::move(detail);
  return r;
}

void finish(VerificationReport& r, double confidence, const MonitorConfig& cfg) {
  r.confidence = confidence;
  r.decision = confidence >= cfg.confidence_cutoff ? Decision::Correct : Decision::Incorrect;
}

void check_sensor(const GrayImage& sensor, const CameraIntrinsics& K, const MonitorConfig& cfg) {
  cfg.validate();
  if (sensor.width() != K.width || sensor.height() != K.height) {
    throw Error(ErrorCode::InvalidArgument, "sensor image does not match the intrinsics");
  }
}

// Renders or reports EmptyRender through `failure`.
std::optional<GrayImage> try_render(RenderBackend& backend, const Pose& pose, std::optional<Failure>& failure) {
  try {
    return backend.render(pose);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::EmptyView) throw;
    failure = Failure{FailureReason::EmptyRender, e.what()};
    return std::nullopt;
  }
}

std::optional<std::vector<PixelPoint>> try_features(const GrayImage& img, const MonitorConfig& cfg,
                                                    std::optional<Failure>& failure) {
  try {
    return shi_tomasi(img, cfg.features);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NoFeatures) throw;
    failure = Failure{FailureReason::TooFewFeatures, e.what()};
    return std::nullopt;
  }
}

double signed_pixel_length(const NormalizedPoint& from, const NormalizedPoint& to, const Vec2& dir,
                           const CameraIntrinsics& K) {
  const Vec2 d(to.x - from.x, to.y - from.y);
  const double len = std::hypot(K.fx * d.x(), K.fy * d.y());
  return d.dot(dir) >= 0.0 ? len : -len;
}

}  // namespace

std::string_view to_string(Method m) {
  switch (m) {
    case Method::Light: return "light";
    case Method::Pnp: return "pnp";
    case Method::Disparity: return "disparity";
  }
  return "unknown";
}

std::string_view to_string(Decision d) { return d == Decision::Correct ? "correct" : "incorrect"; }

std::string_view to_string(FailureReason r) {
  switch (r) {
    case FailureReason::EmptyRender: return "EmptyRender";
    case FailureReason::TooFewFeatures: return "TooFewFeatures";
    case FailureReason::EssentialFailed: return "EssentialFailed";
    case FailureReason::TooFewSurvivors: return "TooFewSurvivors";
    case FailureReason::PnpDiverged: return "PnpDiverged";
  }
  return "unknown";
}

Method method_from_string(std::string_view name) {
  if (name == "light") return Method::Light;
  if (name == "pnp") return Method::Pnp;
  if (name == "disparity") return Method::Disparity;
  throw Error(ErrorCode::InvalidArgument, "unknown method '" + std::string(name) + "'");
}

void MonitorConfig::validate() const {
  if (!(epsilon > 0.0)) throw Error(ErrorCode::InvalidArgument, "epsilon must be positive");
  if (!(light_sigma_px > 0.0) || !(disparity_sigma_px > 0.0) || !(effective_pnp_sigma() > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "standard deviations must be positive");
  }
  if (!(confidence_cutoff > 0.0 && confidence_cutoff < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "confidence cutoff must lie in (0, 1)");
  }
  if (!(pnp_baseline_factor > 0.0)) throw Error(ErrorCode::InvalidArgument, "baseline factor must be positive");
  if (min_inliers < 1) throw Error(ErrorCode::InvalidArgument, "min_inliers must be >= 1");
  ransac.validate();
}

TruthEssentialOverride TruthEssentialOverride::from_poses(const Pose& estimate, const Pose& truth) {
  const RelativeMotion m = relative_motion(estimate, truth);
  return {EssentialMatrix::from_motion(m.rotation, m.translation), m.translation.normalized()};
}

double pnp_confidence(double offset_norm, double epsilon, double sigma) {
  return normal_cdf((epsilon - offset_norm) / sigma);
}

double disparity_confidence(double mean_disparity_px, double sigma_px) {
  return 1.0 - folded_normal_cdf(mean_disparity_px, sigma_px);
}

VerificationReport verf_light(const GrayImage& sensor, const Pose& x_est, const CameraIntrinsics& K,
                              RenderBackend& render, FlowBackend& flow, const MonitorConfig& cfg,
                              const std::optional<TruthEssentialOverride>& override) {
  check_sensor(sensor, K, cfg);
  VerificationReport report;
  report.method = Method::Light;
  std::optional<Failure> failure;

  const auto img_est = try_render(render, x_est, failure);
  if (!img_est) return fail(report, failure->reason, failure->detail);
  const auto features = try_features(*img_est, cfg, failure);
  if (!features) return fail(report, failure->reason, failure->detail);

  const View est{&*img_est, x_est};
  const View gt{&sensor, std::nullopt};
  const SparseFlow to_gt = flow.sparse_flow(est, gt, *features);

  std::vector<Correspondence> corrs;
  for (std::size_t i = 0; i < to_gt.size(); ++i) {
    if (!to_gt.valid[i]) continue;
    corrs.push_back({calibrate(to_gt.points[i], K), calibrate(to_gt.target(i), K), to_gt.points[i]});
  }
  report.n = corrs.size();
  if (corrs.size() < 8) {
    return fail(report, FailureReason::TooFewFeatures,
                std::to_string(corrs.size()) + " usable correspondences with the sensor image");
  }

  // Relative direction and the inlier set R'.
  EssentialMatrix E = EssentialMatrix::from_motion(Mat3::Identity(), Vec3::UnitX());
  RelativeMotion motion;
  std::vector<std::size_t> r_prime;
  if (override) {
    E = override->E;
    std::vector<std::size_t> close;
    std::vector<PointPair> pairs;
    for (std::size_t i = 0; i < corrs.size(); ++i) {
      if (sampson_distance(E, corrs[i].p_a, corrs[i].p_b, K) < cfg.ransac.sampson_threshold_px) {
        close.push_back(i);
        pairs.push_back({corrs[i].p_a, corrs[i].p_b});
      }
    }
    if (pairs.empty()) return fail(report, FailureReason::EssentialFailed, "no point agrees with the given E");
    try {
      const EssentialDecomposition dec = decompose_essential(E, pairs);
      motion = RelativeMotion{dec.motion.rotation, override->direction.normalized()};
      for (std::size_t k = 0; k < close.size(); ++k) {
        if (dec.cheiral[k]) r_prime.push_back(close[k]);
      }
    } catch (const Error& e) {
      return fail(report, FailureReason::EssentialFailed, e.what());
    }
  } else {
    try {
      EssentialEstimate estimate = estimate_essential_ransac(corrs, cfg.ransac, K);
      E = estimate.E;
      motion = estimate.motion;
      r_prime = std::move(estimate.inliers);
    } catch (const Error& e) {
      return fail(report, FailureReason::EssentialFailed, e.what());
    }
  }
  report.n_prime = r_prime.size();
  const Vec3 direction_cam = motion.translation.normalized();
  report.direction_estimate = x_est.rotation * direction_cam;

  // Test view at distance epsilon along the estimated direction.
  const Pose x_test{x_est.rotation, x_est.position + cfg.epsilon * *report.direction_estimate};
  const auto img_test = try_render(render, x_test, failure);
  if (!img_test) return fail(report, failure->reason, failure->detail);

  std::vector<PixelPoint> r_prime_points;
  r_prime_points.reserve(r_prime.size());
  for (const std::size_t i : r_prime) r_prime_points.push_back(corrs[i].source_pixel);
  const SparseFlow to_test = flow.sparse_flow(est, View{&*img_test, x_test}, r_prime_points);

  const RelativeMotion test_motion{motion.rotation, direction_cam};
  for (std::size_t k = 0; k < r_prime.size(); ++k) {
    if (!to_test.valid[k]) continue;
    const Correspondence& c = corrs[r_prime[k]];
    const NormalizedPoint p_test = calibrate(to_test.target(k), K);
    if (sampson_distance(E, c.p_a, p_test, K) >= cfg.ransac.sampson_threshold_px) continue;
    double da = 0.0;
    double db = 0.0;
    if (!pair_depths(test_motion, c.p_a, p_test, da, db) || da <= 0.0 || db <= 0.0) continue;

    EpipolarLine line;
    try {
      line = epipolar_line_of(E, c.p_a);
    } catch (const Error&) {
      continue;
    }
    ScoredPoint sp;
    sp.est = c.p_a;
    sp.gt_on_line = project_to_line(c.p_b, line);
    sp.test_on_line = project_to_line(p_test, line);
    const NormalizedPoint origin = project_to_line(c.p_a, line);

    // Image motion for a camera moving along t points along t_z x - t_xy.
    Vec2 dir = Vec2(-line.b, line.a).normalized();
    const Vec2 expected(direction_cam.z() * c.p_a.x - direction_cam.x(),
                        direction_cam.z() * c.p_a.y - direction_cam.y());
    if (dir.dot(expected) < 0.0) dir = -dir;
    sp.along_gt_px = signed_pixel_length(origin, sp.gt_on_line, dir, K);
    sp.along_test_px = signed_pixel_length(origin, sp.test_on_line, dir, K);
    sp.score = normal_cdf((sp.along_test_px - sp.along_gt_px) / cfg.light_sigma_px);
    report.scored_points.push_back(sp);
  }
  report.n_double_prime = report.scored_points.size();
  if (static_cast<int>(report.n_double_prime) < cfg.min_inliers) {
    return fail(report, FailureReason::TooFewSurvivors,
                std::to_string(report.n_double_prime) + " points survive filtering");
  }
  double sum = 0.0;
  for (const ScoredPoint& sp : report.scored_points) sum += sp.score;
  finish(report, sum / static_cast<double>(report.n_double_prime), cfg);
  return report;
}

VerificationReport verf_pnp(const GrayImage& sensor, const Pose& x_est, const CameraIntrinsics& K,
                            RenderBackend& render, FlowBackend& flow, const MonitorConfig& cfg) {
  check_sensor(sensor, K, cfg);
  VerificationReport report;
  report.method = Method::Pnp;
  std::optional<Failure> failure;

  const auto img_est = try_render(render, x_est, failure);
  if (!img_est) return fail(report, failure->reason, failure->detail);

  // Stereo partner to the right; fall back to the left if that view is empty.
  const Vec3 right = x_est.rotation.col(0);
  const double baseline = cfg.pnp_baseline_factor * cfg.epsilon;
  Pose x_right{x_est.rotation, x_est.position + baseline * right};
  auto img_right = try_render(render, x_right, failure);
  if (!img_right) {
    failure.reset();
    x_right.position = x_est.position - baseline * right;
    img_right = try_render(render, x_right, failure);
    if (!img_right) return fail(report, failure->reason, failure->detail);
  }

  const auto features = try_features(*img_est, cfg, failure);
  if (!features) return fail(report, failure->reason, failure->detail);

  const View est{&*img_est, x_est};
  const SparseFlow to_right = flow.sparse_flow(est, View{&*img_right, x_right}, *features);
  const SparseFlow to_gt = flow.sparse_flow(est, View{&sensor, std::nullopt}, *features);

  std::vector<Vec3> world;
  std::vector<PixelPoint> image;
  for (std::size_t i = 0; i < to_right.size() && i < to_gt.size(); ++i) {
    if (!to_right.valid[i] || !to_gt.valid[i]) continue;
    ++report.n;
    try {
      world.push_back(triangulate(x_est, x_right, calibrate(to_right.points[i], K),
                                  calibrate(to_right.target(i), K)));
      image.push_back(to_gt.target(i));
    } catch (const Error&) {
    }
  }
  report.n_prime = world.size();
  if (report.n < 6) {
    return fail(report, FailureReason::TooFewFeatures, std::to_string(report.n) + " usable correspondences");
  }

  PnpEstimate pnp;
  try {
    pnp = solve_pnp_ransac(world, image, K, cfg.ransac);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Diverged) return fail(report, FailureReason::PnpDiverged, e.what());
    return fail(report, FailureReason::TooFewSurvivors, e.what());
  }
  report.n_double_prime = pnp.inliers.size();
  if (static_cast<int>(pnp.inliers.size()) < cfg.min_inliers) {
    return fail(report, FailureReason::TooFewSurvivors,
                std::to_string(pnp.inliers.size()) + " PnP inliers");
  }

  const Vec3 offset = pnp.camera_pose.position - x_est.position;
  report.estimated_offset = offset;
  if (offset.norm() > 0.0) report.direction_estimate = offset.normalized();
  report.corrected_pose = pnp.camera_pose;
  finish(report, pnp_confidence(offset.norm(), cfg.epsilon, cfg.effective_pnp_sigma()), cfg);
  return report;
}

VerificationReport disparity_check(const GrayImage& sensor, const Pose& x_est,
                                   const CameraIntrinsics& K, RenderBackend& render,
                                   FlowBackend& flow, const MonitorConfig& cfg) {
  check_sensor(sensor, K, cfg);
  VerificationReport report;
  report.method = Method::Disparity;
  std::optional<Failure> failure;

  const auto img_est = try_render(render, x_est, failure);
  if (!img_est) return fail(report, failure->reason, failure->detail);
  const auto features = try_features(*img_est, cfg, failure);
  if (!features) return fail(report, failure->reason, failure->detail);

  const SparseFlow to_gt = flow.sparse_flow(View{&*img_est, x_est}, View{&sensor, std::nullopt}, *features);
  double sum = 0.0;
  for (std::size_t i = 0; i < to_gt.size(); ++i) {
    if (!to_gt.valid[i]) continue;
    sum += to_gt.vectors[i].norm();
    ++report.n;
  }
  report.n_prime = report.n_double_prime = report.n;
  if (static_cast<int>(report.n) < cfg.min_inliers) {
    return fail(report, FailureReason::TooFewFeatures, std::to_string(report.n) + " usable flow vectors");
  }
  finish(report, disparity_confidence(sum / static_cast<double>(report.n), cfg.disparity_sigma_px), cfg);
  return report;
}

}  // namespace verf
