#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <vector>

#include "oracles.hpp"
#include "support.hpp"
#include "verf/monitor.hpp"
#include "verf/scene.hpp"

using namespace verf;
using testing_support::vga;

namespace {

constexpr double kEps = 0.25;

// A random box seen from three units away with an axis-aligned camera, so that
// offsets along the axes are exact in floating point.
struct Rig {
  std::shared_ptr<const SyntheticScene> scene;
  CameraIntrinsics K = vga();
  Pose truth;

  explicit Rig(SceneKind kind = SceneKind::RandomBox, double scale = 1.0, std::uint64_t seed = 1) {
    scene = std::make_shared<SyntheticScene>(generate_scene(kind, 500, 1.0, seed).scaled(scale));
    truth.position = scale * Vec3(0.0, 0.0, -3.5);
    if (kind != SceneKind::RandomBox) {
      // Look down onto the z = 0 plane from above and to the side.
      truth = Pose::look_at(scale * Vec3(0.8, -1.2, 3.0), Vec3::Zero(), Vec3::UnitZ());
    }
  }

  VerificationReport run(Method m, const Pose& estimate, const MonitorConfig& cfg,
                         const OracleFlowConfig& oracle_cfg = {},
                         const std::optional<TruthEssentialOverride>& override = std::nullopt) const {
    SyntheticRenderBackend render(scene, K);
    OracleFlowBackend flow(scene, K, truth, oracle_cfg);
    const GrayImage sensor = verf::render(*scene, truth, K);
    switch (m) {
      case Method::Light: return verf_light(sensor, estimate, K, render, flow, cfg, override);
      case Method::Pnp: return verf_pnp(sensor, estimate, K, render, flow, cfg);
      case Method::Disparity: return disparity_check(sensor, estimate, K, render, flow, cfg);
    }
    return {};
  }

  Pose offset(const Vec3& delta) const { return {truth.rotation, truth.position + delta}; }
};

MonitorConfig config(double eps = kEps) {
  MonitorConfig cfg;
  cfg.epsilon = eps;
  return cfg;
}

Vec3 direction(double az, double el) {
  return Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
}

void check_consistency(const VerificationReport& r, const MonitorConfig& cfg) {
  CHECK(r.n >= r.n_prime);
  CHECK(r.n_prime >= r.n_double_prime);
  CHECK((r.decision == Decision::Correct) == (r.confidence >= cfg.confidence_cutoff));
  CHECK(r.confidence >= 0.0);
  CHECK(r.confidence <= 1.0);
  if (r.failure_reason) {
    CHECK(r.confidence == 0.0);
    CHECK(r.decision == Decision::Incorrect);
  }
}

}  // namespace

TEST_CASE("closed-form confidences") {
  CHECK(disparity_confidence(0.0, 4.0) == 1.0);
  CHECK(disparity_confidence(4.0, 4.0) == doctest::Approx(2.0 * (1.0 - oracle::phi_series(1.0))).epsilon(1e-9));
  CHECK(disparity_confidence(4.0, 4.0) == doctest::Approx(0.3173).epsilon(1e-4));
  double prev = 1.0;
  for (double d = 0.5; d < 20.0; d += 0.5) {
    const double q = disparity_confidence(d, 4.0);
    CHECK(q < prev);
    prev = q;
  }
  CHECK(pnp_confidence(kEps, kEps, kEps / 4.0) == 0.5);
  CHECK(pnp_confidence(0.0, 1.0, 0.25) == doctest::Approx(oracle::phi_series(4.0)).epsilon(1e-9));
  CHECK(pnp_confidence(2.0, 1.0, 0.25) < 1e-4);
}

TEST_CASE("configuration validation") {
  MonitorConfig cfg;
  cfg.epsilon = 0.0;
  CHECK_THROWS_CODE(cfg.validate(), ErrorCode::InvalidArgument);
  cfg = {};
  cfg.confidence_cutoff = 1.0;
  CHECK_THROWS_CODE(cfg.validate(), ErrorCode::InvalidArgument);
  cfg = {};
  cfg.light_sigma_px = -1.0;
  CHECK_THROWS_CODE(cfg.validate(), ErrorCode::InvalidArgument);
  cfg = {};
  cfg.epsilon = 2.0;
  CHECK(cfg.effective_pnp_sigma() == 0.5);
  CHECK(method_from_string("pnp") == Method::Pnp);
  CHECK(to_string(FailureReason::TooFewSurvivors) == "TooFewSurvivors");

  const Rig rig;
  SyntheticRenderBackend render(rig.scene, rig.K);
  OracleFlowBackend flow(rig.scene, rig.K, rig.truth, {});
  CHECK_THROWS_CODE(verf_light(GrayImage(10, 10), rig.truth, rig.K, render, flow, MonitorConfig{}),
                    ErrorCode::InvalidArgument);
}

TEST_CASE("VERF-Light on a noiseless oracle") {
  const Rig rig;
  const MonitorConfig cfg = config();
  const Vec3 d = direction(0.7, 0.3);

  const auto inside = rig.run(Method::Light, rig.offset(0.4 * kEps * d), cfg);
  CHECK_FALSE(inside.failure_reason.has_value());
  CHECK(inside.confidence > 0.99);
  CHECK(inside.decision == Decision::Correct);
  REQUIRE(inside.direction_estimate.has_value());
  // The estimate points from the estimated position towards the truth.
  CHECK(oracle::angle_between_directions(*inside.direction_estimate, -d) < 1e-6);
  check_consistency(inside, cfg);

  const auto outside = rig.run(Method::Light, rig.offset(2.0 * kEps * d), cfg);
  CHECK(outside.confidence < 0.01);
  CHECK(outside.decision == Decision::Incorrect);
  check_consistency(outside, cfg);
}

TEST_CASE("VERF-Light scores exactly one half at the boundary") {
  const Rig rig;
  const MonitorConfig cfg = config();
  const Pose estimate = rig.offset(Vec3(-kEps, 0.0, 0.0));
  const auto r = rig.run(Method::Light, estimate, cfg, {}, TruthEssentialOverride::from_poses(estimate, rig.truth));
  REQUIRE_FALSE(r.failure_reason.has_value());
  CHECK(r.confidence == 0.5);
  for (const auto& sp : r.scored_points) CHECK(sp.score == 0.5);
}

TEST_CASE("facing away from the scene reports an empty render") {
  const Rig rig;
  const MonitorConfig cfg = config();
  const Pose away = Pose::look_at(rig.truth.position, rig.truth.position - Vec3(0, 0, 1), -Vec3::UnitY());
  for (const Method m : {Method::Light, Method::Pnp, Method::Disparity}) {
    const auto r = rig.run(m, away, cfg);
    REQUIRE(r.failure_reason.has_value());
    CHECK(*r.failure_reason == FailureReason::EmptyRender);
    CHECK(r.decision == Decision::Incorrect);
    CHECK(r.confidence == 0.0);
  }
}

TEST_CASE("noiseless ordering: q above one half exactly when the error is below epsilon") {
  const Rig rig;
  const MonitorConfig cfg = config();
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> az(0.0, 2.0 * std::numbers::pi), el(-1.0, 1.0);
  const std::vector<double> ratios = {0.1, 0.3, 0.5, 0.7, 0.9, 0.98, 1.02, 1.1, 1.5, 2.0, 3.0};
  for (const double ratio : ratios) {
    for (int k = 0; k < 3; ++k) {
      const Pose estimate = rig.offset(ratio * kEps * direction(az(rng), el(rng)));
      const auto r = rig.run(Method::Light, estimate, cfg, {}, TruthEssentialOverride::from_poses(estimate, rig.truth));
      INFO("ratio " << ratio);
      REQUIRE_FALSE(r.failure_reason.has_value());
      CHECK((r.confidence > 0.5) == (ratio < 1.0));
    }
  }
}

TEST_CASE("VERF-Light confidence does not increase with the error") {
  const Rig rig;
  const MonitorConfig cfg = config();
  const Vec3 d = direction(2.0, -0.2);
  double prev = 1.0;
  for (int k = 1; k <= 20; ++k) {
    const double err = 0.1 * k * kEps;
    const auto r = rig.run(Method::Light, rig.offset(err * d), cfg);
    INFO("error / epsilon = " << 0.1 * k);
    CHECK(r.confidence <= prev + 1e-6);
    prev = r.confidence;
  }
}

TEST_CASE("every scored point passed the filters and sits on its epipolar line") {
  const Rig rig;
  const MonitorConfig cfg = config();
  for (const double ratio : {0.5, 1.5}) {
    const Pose estimate = rig.offset(ratio * kEps * direction(1.0, 0.4));
    const auto truth_e = TruthEssentialOverride::from_poses(estimate, rig.truth);
    OracleFlowConfig noisy;
    noisy.noise_sigma_px = 0.5;
    noisy.outlier_fraction = 0.1;
    noisy.seed = 2;
    const auto r = rig.run(Method::Light, estimate, cfg, noisy, truth_e);
    REQUIRE_FALSE(r.failure_reason.has_value());
    check_consistency(r, cfg);
    const RelativeMotion motion = relative_motion(estimate, rig.truth);
    const RelativeMotion unit{motion.rotation, motion.translation.normalized()};
    for (const auto& sp : r.scored_points) {
      const EpipolarLine l = epipolar_line_of(truth_e.E, sp.est);
      CHECK(std::abs(l.evaluate(sp.gt_on_line)) < 1e-10);
      CHECK(std::abs(l.evaluate(sp.test_on_line)) < 1e-10);
      CHECK(sampson_distance(truth_e.E, sp.est, sp.test_on_line, rig.K) < cfg.ransac.sampson_threshold_px);
      double da = 0.0, db = 0.0;
      CHECK(pair_depths(unit, sp.est, sp.test_on_line, da, db));
      CHECK(da > 0.0);
      CHECK(db > 0.0);
      // The series oracle is accurate for |z| <= 5; beyond that only the tail matters.
      const double z = (sp.along_test_px - sp.along_gt_px) / 0.5;
      if (std::abs(z) <= 5.0) {
        CHECK(std::abs(sp.score - oracle::phi_series(z)) < 1e-7);
      } else {
        CHECK((z > 0.0 ? 1.0 - sp.score : sp.score) < 1e-6);
      }
    }
  }
}

TEST_CASE("VERF-PnP recovers the offset and corrects the pose") {
  const Rig rig;
  const MonitorConfig cfg = config();
  const Vec3 d = direction(-0.4, 0.5);
  const auto r = rig.run(Method::Pnp, rig.offset(0.3 * kEps * d), cfg);
  REQUIRE_FALSE(r.failure_reason.has_value());
  REQUIRE(r.estimated_offset.has_value());
  CHECK(std::abs(r.estimated_offset->norm() - 0.3 * kEps) <= 0.02 * 0.3 * kEps);
  CHECK(r.confidence > 0.95);
  check_consistency(r, cfg);

  for (const double ratio : {1.5, 3.0}) {
    const Pose estimate = rig.offset(ratio * kEps * d);
    const auto far = rig.run(Method::Pnp, estimate, cfg);
    REQUIRE(far.corrected_pose.has_value());
    const double before = (estimate.position - rig.truth.position).norm();
    const double after = (far.corrected_pose->position - rig.truth.position).norm();
    CHECK(after < 0.1 * before);
    CHECK(far.decision == Decision::Incorrect);
  }
}

TEST_CASE("disparity confidence depends on scene scale while VERF does not") {
  // Same metric error and epsilon, scene and camera distance ten times larger.
  const MonitorConfig cfg = config();
  const Vec3 delta = 0.375 * kEps * direction(0.3, 0.2);
  const Rig near_rig(SceneKind::RandomBox, 1.0);
  const Rig far_rig(SceneKind::RandomBox, 10.0);
  const auto near_q = near_rig.run(Method::Disparity, near_rig.offset(delta), cfg);
  const auto far_q = far_rig.run(Method::Disparity, far_rig.offset(delta), cfg);
  CHECK(far_q.confidence > near_q.confidence + 0.1);
  CHECK(near_q.n == near_q.n_double_prime);

  const auto zero = near_rig.run(Method::Disparity, near_rig.truth, cfg);
  CHECK(zero.confidence == 1.0);
}

TEST_CASE("the true essential matrix helps on a planar scene") {
  const Rig rig(SceneKind::TexturedPlane);
  const MonitorConfig cfg = config();
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> az(0.0, 2.0 * std::numbers::pi), el(-1.0, 1.0), lo(0.05, 0.75),
      hi(1.25, 3.0);
  OracleFlowConfig noisy;
  noisy.noise_sigma_px = 0.5;
  noisy.outlier_fraction = 0.1;
  int right_est = 0;
  int right_true = 0;
  for (int t = 0; t < 16; ++t) {
    const double ratio = t % 2 ? lo(rng) : hi(rng);
    const Pose estimate = rig.offset(ratio * kEps * direction(az(rng), el(rng)));
    noisy.seed = static_cast<std::uint64_t>(t);
    const bool correct = ratio < 1.0;
    const auto a = rig.run(Method::Light, estimate, cfg, noisy);
    const auto b = rig.run(Method::Light, estimate, cfg, noisy, TruthEssentialOverride::from_poses(estimate, rig.truth));
    check_consistency(a, cfg);
    check_consistency(b, cfg);
    right_est += (a.decision == Decision::Correct) == correct;
    right_true += (b.decision == Decision::Correct) == correct;
  }
  MESSAGE("estimated E " << right_est << "/16, true E " << right_true << "/16");
  CHECK(right_true >= right_est);
  CHECK(right_true >= 15);
}

TEST_CASE("reports stay consistent across noisy random trials") {
  const Rig rig;
  const MonitorConfig cfg = config();
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> az(0.0, 2.0 * std::numbers::pi), el(-1.0, 1.0), mag(0.0, 4.0);
  OracleFlowConfig noisy;
  noisy.noise_sigma_px = 1.0;
  noisy.outlier_fraction = 0.3;
  for (int t = 0; t < 8; ++t) {
    const Pose estimate = rig.offset(mag(rng) * kEps * direction(az(rng), el(rng)));
    noisy.seed = static_cast<std::uint64_t>(t);
    for (const Method m : {Method::Light, Method::Pnp, Method::Disparity}) check_consistency(rig.run(m, estimate, cfg, noisy), cfg);
  }
}
