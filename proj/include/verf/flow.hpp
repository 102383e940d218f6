#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "verf/geom.hpp"
#include "verf/image.hpp"

namespace verf {

struct DenseFlowField {
  int width = 0;
  int height = 0;
  std::vector<float> du;
  std::vector<float> dv;
  std::vector<std::uint8_t> valid;

  DenseFlowField() = default;
  DenseFlowField(int w, int h);

  std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width + x; }
  void set(int x, int y, float u, float v, bool ok = true);
};

// Displacements r_a + vectors[i] = r_b for points in image a.
struct SparseFlow {
  std::vector<PixelPoint> points;
  std::vector<Vec2> vectors;
  std::vector<bool> valid;   // false when the backend has no correspondence
  std::vector<bool> inlier;

  std::size_t size() const { return points.size(); }
  PixelPoint target(std::size_t i) const {
    return {points[i].u + vectors[i].x(), points[i].v + vectors[i].y()};
  }
  void push_back(const PixelPoint& p, const Vec2& v, bool ok) {
    points.push_back(p);
    vectors.push_back(v);
    valid.push_back(ok);
    inlier.push_back(ok);
  }
};

struct ShiTomasiParams {
  int max_features = 500;
  double quality_level = 0.01;
  double min_distance_px = 8.0;
};

// Corners ranked by the smaller eigenvalue of the 3x3 structure tensor of
// Sobel gradients. Throws NoFeatures when nothing passes the quality level.
std::vector<PixelPoint> shi_tomasi(const GrayImage& img, const ShiTomasiParams& params = {});

// Smaller eigenvalue response map (zero on the two-pixel border).
std::vector<double> min_eigenvalue_map(const GrayImage& img);

SparseFlow sample_sparse(const DenseFlowField& dense, std::span<const PixelPoint> points);

// Middlebury .flo reader.
DenseFlowField read_flo(const std::filesystem::path& path);

// One image participating in a flow query. Rendered views carry the pose they
// were rendered at; the sensor image has none.
struct View {
  const GrayImage* image = nullptr;
  std::optional<Pose> pose;
};

struct FlowBackendInfo {
  std::string name;
  bool dense = false;
  bool concurrent = false;
};

class FlowBackend {
 public:
  virtual ~FlowBackend() = default;
  virtual FlowBackendInfo info() const = 0;
  virtual SparseFlow sparse_flow(const View& from, const View& to,
                                 std::span<const PixelPoint> points) = 0;
};

class DenseFlowBackend : public FlowBackend {
 public:
  virtual DenseFlowField dense_flow(const View& from, const View& to) = 0;

  SparseFlow sparse_flow(const View& from, const View& to,
                         std::span<const PixelPoint> points) override;
};

// Reads `<from>__<to>.flo` from a directory; `namer` gives each view its stem.
class FloDirectoryBackend : public DenseFlowBackend {
 public:
  FloDirectoryBackend(std::filesystem::path dir, std::function<std::string(const View&)> namer);

  FlowBackendInfo info() const override { return {"flo-directory", true, true}; }
  DenseFlowField dense_flow(const View& from, const View& to) override;

 private:
  std::filesystem::path dir_;
  std::function<std::string(const View&)> namer_;
};

// Coarse-to-fine sum-of-squared-differences patch search over a Gaussian
// pyramid, with parabolic sub-pixel refinement at full resolution.
class PatchMatchFlowBackend : public FlowBackend {
 public:
  struct Params {
    int patch_radius = 4;
    int search_radius = 96;  // full-resolution pixels
    int levels = 3;
  };

  PatchMatchFlowBackend() = default;
  explicit PatchMatchFlowBackend(Params p) : params_(p) {}

  FlowBackendInfo info() const override { return {"patch-match", false, true}; }
  SparseFlow sparse_flow(const View& from, const View& to,
                         std::span<const PixelPoint> points) override;

 private:
  Params params_;
};

}  // namespace verf
