#include "verf/geom.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include <Eigen/Geometry>
#include <Eigen/SVD>

#include "verf/error.hpp"

namespace verf {

namespace {

constexpr double kParallelRayAngle = 1e-6;

// Least-squares ray parameters for o1 + s d1 ~ o2 + u d2.
bool intersect_rays(const Vec3& o1, const Vec3& d1, const Vec3& o2, const Vec3& d2, double& s,
                    double& u) {
  if (d1.cross(d2).norm() < std::sin(kParallelRayAngle) * d1.norm() * d2.norm()) return false;
  const Vec3 b = o2 - o1;
  const double a11 = d1.dot(d1);
  const double a12 = -d1.dot(d2);
  const double a22 = d2.dot(d2);
  const double r1 = d1.dot(b);
  const double r2 = -d2.dot(b);
  const double det = a11 * a22 - a12 * a12;
  if (det == 0.0) return false;
  s = (r1 * a22 - a12 * r2) / det;
  u = (a11 * r2 - a12 * r1) / det;
  return true;
}

}  // namespace

bool Pose::is_valid(double tol) const {
  if (!rotation.allFinite() || !position.allFinite()) return false;
  if ((rotation.transpose() * rotation - Mat3::Identity()).norm() >= tol) return false;
  return rotation.determinant() > 0.0;
}

Pose Pose::look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double roll) {
  const Vec3 z = (target - eye).normalized();
  Vec3 x = z.cross(up);
  if (x.norm() < 1e-12) {
    throw Error(ErrorCode::InvalidArgument, "look_at: up vector parallel to viewing direction");
  }
  x.normalize();
  const Vec3 y = z.cross(x);
  Mat3 r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = z;
  if (roll != 0.0) r = r * Eigen::AngleAxisd(roll, Vec3::UnitZ()).toRotationMatrix();
  return Pose{r, eye};
}

Pose Pose::from_row_major(std::span<const double> values) {
  if (values.size() != 12) {
    throw Error(ErrorCode::InvalidArgument, "pose needs 12 values, got " + std::to_string(values.size()));
  }
  Pose pose;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) pose.rotation(r, c) = values[r * 4 + c];
    pose.position(r) = values[r * 4 + 3];
  }
  return pose;
}

std::vector<double> Pose::to_row_major() const {
  std::vector<double> out;
  out.reserve(12);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) out.push_back(rotation(r, c));
    out.push_back(position(r));
  }
  return out;
}

bool CameraIntrinsics::is_valid() const {
  return fx > 0.0 && fy > 0.0 && width > 0 && height > 0 && cx > 0.0 && cx < width && cy > 0.0 &&
         cy < height;
}

Mat3 CameraIntrinsics::matrix() const {
  Mat3 k;
  k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return k;
}

EssentialMatrix EssentialMatrix::from_motion(const Mat3& rotation, const Vec3& translation) {
  const double n = translation.norm();
  if (!(n > 1e-12)) throw Error(ErrorCode::DegenerateBaseline, "zero relative translation");
  return EssentialMatrix(rotation * skew(translation / n));
}

EssentialMatrix EssentialMatrix::project(const Mat3& m) {
  if (!m.allFinite() || m.norm() == 0.0) {
    throw Error(ErrorCode::InvalidArgument, "cannot project a zero or non-finite matrix");
  }
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sigma(1.0, 1.0, 0.0);
  return EssentialMatrix(svd.matrixU() * sigma.asDiagonal() * svd.matrixV().transpose());
}

NormalizedPoint calibrate(const PixelPoint& p, const CameraIntrinsics& K) {
  return {(p.u - K.cx) / K.fx, (p.v - K.cy) / K.fy};
}

PixelPoint uncalibrate(const NormalizedPoint& p, const CameraIntrinsics& K) {
  return {p.x * K.fx + K.cx, p.y * K.fy + K.cy};
}

PixelPoint project(const Vec3& camera_point, const CameraIntrinsics& K) {
  return {K.fx * camera_point.x() / camera_point.z() + K.cx,
          K.fy * camera_point.y() / camera_point.z() + K.cy};
}

Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return s;
}

RelativeMotion relative_motion(const Pose& a, const Pose& b) {
  return {b.rotation.transpose() * a.rotation, a.rotation.transpose() * (b.position - a.position)};
}

EssentialMatrix essential_from_poses(const Pose& a, const Pose& b) {
  const RelativeMotion m = relative_motion(a, b);
  return EssentialMatrix::from_motion(m.rotation, m.translation);
}

double epipolar_residual(const EssentialMatrix& E, const NormalizedPoint& a,
                         const NormalizedPoint& b) {
  return b.homogeneous().dot(E.matrix() * a.homogeneous());
}

double sampson_distance(const EssentialMatrix& E, const NormalizedPoint& a,
                        const NormalizedPoint& b, const CameraIntrinsics& K) {
  const Vec3 ea = E.matrix() * a.homogeneous();
  const Vec3 etb = E.matrix().transpose() * b.homogeneous();
  const double r = b.homogeneous().dot(ea);
  if (r == 0.0) return 0.0;
  // Gradient of the residual with respect to the four pixel coordinates.
  const double gu_b = ea.x() / K.fx;
  const double gv_b = ea.y() / K.fy;
  const double gu_a = etb.x() / K.fx;
  const double gv_a = etb.y() / K.fy;
  const double den = gu_b * gu_b + gv_b * gv_b + gu_a * gu_a + gv_a * gv_a;
  if (den == 0.0) return std::numeric_limits<double>::infinity();
  return std::abs(r) / std::sqrt(den);
}

EpipolarLine epipolar_line_of(const EssentialMatrix& E, const NormalizedPoint& a) {
  const Vec3 l = E.matrix() * a.homogeneous();
  if (std::hypot(l.x(), l.y()) < 1e-12) {
    throw Error(ErrorCode::DegeneratePoint, "point coincides with the epipole");
  }
  return {l.x(), l.y(), l.z()};
}

NormalizedPoint project_to_line(const NormalizedPoint& p, const EpipolarLine& l) {
  const double n2 = l.a * l.a + l.b * l.b;
  const double k = l.evaluate(p) / n2;
  return {p.x - k * l.a, p.y - k * l.b};
}

bool pair_depths(const RelativeMotion& motion, const NormalizedPoint& a, const NormalizedPoint& b,
                 double& depth_a, double& depth_b) {
  return intersect_rays(Vec3::Zero(), a.homogeneous(), motion.translation,
                        motion.rotation.transpose() * b.homogeneous(), depth_a, depth_b);
}

namespace {

std::array<RelativeMotion, 4> motion_candidates(const EssentialMatrix& E) {
  Eigen::JacobiSVD<Mat3> svd(E.matrix(), Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  Mat3 v = svd.matrixV();
  if (u.determinant() < 0.0) u = -u;
  if (v.determinant() < 0.0) v = -v;
  Mat3 w;
  w << 0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0;

  // E = R [c]x has right null vector c.
  const Vec3 c = v.col(2);
  return {
      RelativeMotion{u * w * v.transpose(), c},
      RelativeMotion{u * w * v.transpose(), -c},
      RelativeMotion{u * w.transpose() * v.transpose(), c},
      RelativeMotion{u * w.transpose() * v.transpose(), -c},
  };
}

std::array<int, 4> cheiral_support(const std::array<RelativeMotion, 4>& candidates,
                                   std::span<const PointPair> pairs) {
  std::array<int, 4> support{};
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    for (const PointPair& p : pairs) {
      double da = 0.0;
      double db = 0.0;
      if (pair_depths(candidates[k], p.a, p.b, da, db) && da > 0.0 && db > 0.0) ++support[k];
    }
  }
  return support;
}

}  // namespace

int cheiral_consensus(const EssentialMatrix& E, std::span<const PointPair> pairs) {
  if (pairs.empty()) return 0;
  const auto support = cheiral_support(motion_candidates(E), pairs);
  return *std::max_element(support.begin(), support.end());
}

EssentialDecomposition decompose_essential(const EssentialMatrix& E,
                                           std::span<const PointPair> pairs) {
  if (pairs.empty()) throw Error(ErrorCode::InvalidArgument, "decomposition needs correspondences");
  const auto candidates = motion_candidates(E);
  const auto support = cheiral_support(candidates, pairs);

  const auto best_it = std::max_element(support.begin(), support.end());
  const int best = *best_it;
  if (std::count(support.begin(), support.end(), best) > 1) {
    throw Error(ErrorCode::AmbiguousCheirality,
                "two motion candidates share the maximum consensus of " + std::to_string(best));
  }

  EssentialDecomposition out;
  out.motion = candidates[static_cast<std::size_t>(best_it - support.begin())];
  out.consensus = best;
  out.cheiral.reserve(pairs.size());
  for (const PointPair& p : pairs) {
    double da = 0.0;
    double db = 0.0;
    out.cheiral.push_back(pair_depths(out.motion, p.a, p.b, da, db) && da > 0.0 && db > 0.0);
  }
  return out;
}

Vec3 triangulate(const Pose& pose_a, const Pose& pose_b, const NormalizedPoint& a,
                 const NormalizedPoint& b) {
  if ((pose_b.position - pose_a.position).norm() <= 1e-12) {
    throw Error(ErrorCode::ParallelRays, "zero baseline");
  }
  const Vec3 da = pose_a.rotation * a.homogeneous();
  const Vec3 db = pose_b.rotation * b.homogeneous();
  double s = 0.0;
  double t = 0.0;
  if (!intersect_rays(pose_a.position, da, pose_b.position, db, s, t)) {
    throw Error(ErrorCode::ParallelRays, "rays are parallel");
  }
  if (s <= 0.0 || t <= 0.0) {
    throw Error(ErrorCode::PointBehindCamera, "triangulated depth is not positive");
  }
  return 0.5 * ((pose_a.position + s * da) + (pose_b.position + t * db));
}

double angle_between(const Vec3& u, const Vec3& v) {
  return std::atan2(u.cross(v).norm(), u.dot(v));
}

double rotation_angle(const Mat3& r) {
  const Vec3 axis(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  return std::atan2(0.5 * axis.norm(), 0.5 * (r.trace() - 1.0));
}

}  // namespace verf
