#pragma once

#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "verf/error.hpp"
#include "verf/geom.hpp"

#define CHECK_THROWS_CODE(expr, expected)                  \
  do {                                                     \
    bool thrown_ = false;                                  \
    try {                                                  \
      (void)(expr);                                        \
    } catch (const verf::Error& e_) {                      \
      thrown_ = true;                                      \
      CHECK_MESSAGE(e_.code() == (expected), e_.what());   \
    }                                                      \
    CHECK_MESSAGE(thrown_, "expected " #expected);         \
  } while (0)

namespace testing_support {

inline verf::CameraIntrinsics vga() { return {500.0, 500.0, 320.0, 240.0, 640, 480}; }

// Camera-to-world pose with a random orientation around `position`.
inline verf::Pose random_pose(std::mt19937_64& rng, double spread, double max_angle) {
  std::uniform_real_distribution<double> u(-spread, spread);
  return {oracle::random_rotation(rng, max_angle), verf::Vec3(u(rng), u(rng), u(rng))};
}

// A world point in front of `pose` at depth in [near, far].
inline verf::Vec3 point_in_front(std::mt19937_64& rng, const verf::Pose& pose, double near, double far) {
  std::uniform_real_distribution<double> d(near, far);
  std::uniform_real_distribution<double> xy(-0.5, 0.5);
  const double z = d(rng);
  const verf::Vec3 cam(xy(rng) * z, xy(rng) * z, z);
  return pose.rotation * cam + pose.position;
}

// Direct pinhole projection into normalized coordinates.
inline verf::NormalizedPoint normalized_view(const verf::Pose& pose, const verf::Vec3& world) {
  const verf::Vec3 c = pose.rotation.transpose() * (world - pose.position);
  return {c.x() / c.z(), c.y() / c.z()};
}

}  // namespace testing_support
