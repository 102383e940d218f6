#pragma once

// Two-view geometry primitives. Poses are camera-to-world with the camera
// looking down +z, x to the right and y down. A world point X maps into a
// camera as R^T (X - c).

#include <span>
#include <vector>

#include <Eigen/Core>

namespace verf {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 position = Vec3::Zero();

  Vec3 to_camera(const Vec3& world) const { return rotation.transpose() * (world - position); }
  Vec3 to_world(const Vec3& camera) const { return rotation * camera + position; }

  bool is_valid(double tol = 1e-9) const;

  // Camera at `eye` looking at `target`; `up` is a world direction that ends up
  // pointing towards -y in the image. `roll` rotates about the optical axis.
  static Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double roll = 0.0);

  // 12 numbers, row-major 3x4 [R | c].
  static Pose from_row_major(std::span<const double> values);
  std::vector<double> to_row_major() const;
};

struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  bool is_valid() const;
  Mat3 matrix() const;
};

struct PixelPoint {
  double u = 0.0;
  double v = 0.0;
};

struct NormalizedPoint {
  double x = 0.0;
  double y = 0.0;

  Vec3 homogeneous() const { return {x, y, 1.0}; }
};

struct PointPair {
  NormalizedPoint a;
  NormalizedPoint b;
};

// Rank-2 matrix with singular values (1, 1, 0). The constraint is
// b^T E a = 0 for a point a in the first view and b in the second.
class EssentialMatrix {
 public:
  // E = R [t]x for the relative transform X_b = R (X_a - t); t need not be unit.
  static EssentialMatrix from_motion(const Mat3& rotation, const Vec3& translation);
  // Nearest essential matrix in Frobenius norm, rescaled to unit singular values.
  static EssentialMatrix project(const Mat3& m);

  const Mat3& matrix() const { return m_; }
  EssentialMatrix transposed() const { return EssentialMatrix(m_.transpose()); }

 private:
  explicit EssentialMatrix(const Mat3& m) : m_(m) {}
  Mat3 m_;
};

struct EpipolarLine {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;

  double evaluate(const NormalizedPoint& p) const { return a * p.x + b * p.y + c; }
};

// Relative motion from camera a to camera b: X_b = rotation (X_a - translation),
// i.e. translation is the centre of camera b expressed in the frame of camera a.
struct RelativeMotion {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
};

NormalizedPoint calibrate(const PixelPoint& p, const CameraIntrinsics& K);
PixelPoint uncalibrate(const NormalizedPoint& p, const CameraIntrinsics& K);

// Pixel projection of a camera-frame point; no visibility check.
PixelPoint project(const Vec3& camera_point, const CameraIntrinsics& K);

Mat3 skew(const Vec3& v);

RelativeMotion relative_motion(const Pose& a, const Pose& b);
EssentialMatrix essential_from_poses(const Pose& a, const Pose& b);

double epipolar_residual(const EssentialMatrix& E, const NormalizedPoint& a,
                         const NormalizedPoint& b);

// First-order geometric error of the pair in pixels.
double sampson_distance(const EssentialMatrix& E, const NormalizedPoint& a,
                        const NormalizedPoint& b, const CameraIntrinsics& K);

// Line in the second view on which the match of `a` must lie.
EpipolarLine epipolar_line_of(const EssentialMatrix& E, const NormalizedPoint& a);

NormalizedPoint project_to_line(const NormalizedPoint& p, const EpipolarLine& l);

struct EssentialDecomposition {
  RelativeMotion motion;           // translation is unit length
  std::vector<bool> cheiral;       // per pair: positive depth in both views
  int consensus = 0;
};

// Largest number of pairs in front of both cameras over the four motion
// candidates of E.
int cheiral_consensus(const EssentialMatrix& E, std::span<const PointPair> pairs);

EssentialDecomposition decompose_essential(const EssentialMatrix& E,
                                           std::span<const PointPair> pairs);

// Depths of a pair along both rays under a relative motion. Returns false for
// (near-)parallel rays.
bool pair_depths(const RelativeMotion& motion, const NormalizedPoint& a, const NormalizedPoint& b,
                 double& depth_a, double& depth_b);

Vec3 triangulate(const Pose& pose_a, const Pose& pose_b, const NormalizedPoint& a,
                 const NormalizedPoint& b);

double angle_between(const Vec3& u, const Vec3& v);
double rotation_angle(const Mat3& r);

}  // namespace verf
