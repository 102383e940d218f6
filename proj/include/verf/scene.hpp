#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "verf/flow.hpp"
#include "verf/geom.hpp"
#include "verf/image.hpp"

namespace verf {

enum class SceneKind { RandomBox, TexturedPlane, Heightfield };

std::string_view to_string(SceneKind kind);
SceneKind scene_kind_from_string(std::string_view name);

struct ScenePoint {
  Vec3 position;
  float intensity = 1.0f;
  std::array<float, 3> rgb{1.0f, 1.0f, 1.0f};
};

struct SyntheticScene {
  std::vector<ScenePoint> points;
  Vec3 box_min = Vec3::Zero();
  Vec3 box_max = Vec3::Zero();
  SceneKind kind = SceneKind::RandomBox;
  double extent = 1.0;
  std::uint64_t seed = 0;

  Vec3 centroid() const;
  // Uniform scaling about the origin.
  SyntheticScene scaled(double s) const;
};

// random_box fills [-extent, extent]^3; textured_plane puts every point on z = 0
// inside [-extent, extent]^2; heightfield perturbs that plane smoothly.
SyntheticScene generate_scene(SceneKind kind, int n_points, double extent, std::uint64_t seed);

// Front-to-back composited Gaussian splats (sigma 0.85 px, i.e. about 2 px
// FWHM, truncated at 3 px) on a black background. Intensities are quantized to
// 16 bits. Throws EmptyView when no point lands in the frame.
GrayImage render(const SyntheticScene& scene, const Pose& pose, const CameraIntrinsics& K);
RgbImage render_rgb(const SyntheticScene& scene, const Pose& pose, const CameraIntrinsics& K);

class RenderBackend {
 public:
  virtual ~RenderBackend() = default;
  virtual std::string name() const = 0;
  virtual const CameraIntrinsics& intrinsics() const = 0;
  virtual GrayImage render(const Pose& pose) = 0;
};

class SyntheticRenderBackend : public RenderBackend {
 public:
  SyntheticRenderBackend(std::shared_ptr<const SyntheticScene> scene, CameraIntrinsics K)
      : scene_(std::move(scene)), K_(K) {}

  std::string name() const override { return "synthetic-splat"; }
  const CameraIntrinsics& intrinsics() const override { return K_; }
  GrayImage render(const Pose& pose) override { return verf::render(*scene_, pose, K_); }

 private:
  std::shared_ptr<const SyntheticScene> scene_;
  CameraIntrinsics K_;
};

struct ManifestRecord {
  Pose pose;
  std::string file;
};

// JSON array of {"pose": [12 numbers, row-major 3x4 camera-to-world], "file": path}.
std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, std::span<const ManifestRecord> records);

// Serves pre-rendered images whose manifest pose matches a request within
// 1e-6 in position and 1e-6 rad in rotation.
class ImageDirectoryBackend : public RenderBackend {
 public:
  ImageDirectoryBackend(const std::filesystem::path& manifest_path, CameraIntrinsics K);

  std::string name() const override { return "image-directory"; }
  const CameraIntrinsics& intrinsics() const override { return K_; }
  GrayImage render(const Pose& pose) override;

  // File stem of the record matching `pose`; throws PoseNotFound.
  std::string stem_for(const Pose& pose) const;
  const std::vector<ManifestRecord>& records() const { return records_; }

 private:
  std::size_t find(const Pose& pose) const;

  std::filesystem::path root_;
  CameraIntrinsics K_;
  std::vector<ManifestRecord> records_;
  mutable std::mutex mutex_;
  std::map<std::size_t, GrayImage> cache_;
};

struct OracleFlowConfig {
  double noise_sigma_px = 0.0;
  double outlier_fraction = 0.0;
  double outlier_max_px = 50.0;
  // Output grid in pixels, 0 for full precision. A dyadic grid (e.g. 2^-16)
  // makes results bit-identical under similarity transforms of the scene,
  // which float rounding alone does not.
  double resolution_px = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct OracleFlow {
  SparseFlow flow;                  // points snapped to the exact projections in view a
  std::vector<bool> truth_outlier;  // injected outliers
  std::vector<int> scene_index;     // generating scene point, -1 when none
};

// Exact correspondences for features of view a, with injected noise and
// outliers. Features without a visible generating point, or whose point is
// hidden or out of frame in view b, come back with valid = false.
OracleFlow oracle_flow(const SyntheticScene& scene, const Pose& pose_a, const Pose& pose_b,
                       const CameraIntrinsics& K, std::span<const PixelPoint> points_a,
                       const OracleFlowConfig& cfg);

// Scene points visible from `pose` (in front, inside the frame, not occluded).
std::vector<bool> visible_points(const SyntheticScene& scene, const Pose& pose,
                                 const CameraIntrinsics& K);

// Flow backend backed by `oracle_flow`. The sensor view resolves to the true
// pose given at construction. Each query draws a fresh noise stream, so the
// backend is stateful and single-threaded.
class OracleFlowBackend : public FlowBackend {
 public:
  OracleFlowBackend(std::shared_ptr<const SyntheticScene> scene, CameraIntrinsics K, Pose sensor_pose,
                    OracleFlowConfig cfg)
      : scene_(std::move(scene)), K_(K), sensor_pose_(sensor_pose), cfg_(cfg) {}

  FlowBackendInfo info() const override { return {"oracle", false, false}; }
  SparseFlow sparse_flow(const View& from, const View& to,
                         std::span<const PixelPoint> points) override;

  const std::vector<bool>& last_truth_outliers() const { return last_truth_; }

 private:
  std::shared_ptr<const SyntheticScene> scene_;
  CameraIntrinsics K_;
  Pose sensor_pose_;
  OracleFlowConfig cfg_;
  std::uint64_t queries_ = 0;
  std::vector<bool> last_truth_;
};

}  // namespace verf
