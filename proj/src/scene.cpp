#include "verf/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include <json.hpp>

#include "verf/error.hpp"
#include "verf/robust.hpp"

namespace verf {

namespace {

constexpr double kSplatSigmaPx = 0.85;
constexpr double kSplatRadiusPx = 3.0;
constexpr double kOcclusionTolerance = 0.01;
constexpr double kSnapRadiusPx = 1.0;

struct Projection {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;
  bool in_frame = false;
};

std::vector<Projection> project_all(const SyntheticScene& scene, const Pose& pose,
                                    const CameraIntrinsics& K) {
  std::vector<Projection> out(scene.points.size());
  for (std::size_t i = 0; i < scene.points.size(); ++i) {
    const Vec3 c = pose.to_camera(scene.points[i].position);
    Projection& p = out[i];
    p.depth = c.z();
    if (!(c.z() > 0.0)) continue;
    const PixelPoint px = project(c, K);
    p.u = px.u;
    p.v = px.v;
    p.in_frame = px.u >= -0.5 && px.v >= -0.5 && px.u < K.width - 0.5 && px.v < K.height - 0.5;
  }
  return out;
}

// Minimum point depth per pixel; a point is visible when no point in its
// 3x3 pixel neighbourhood is more than 1% nearer.
class DepthBuffer {
 public:
  DepthBuffer(const std::vector<Projection>& proj, const CameraIntrinsics& K)
      : w_(K.width), h_(K.height), depth_(static_cast<std::size_t>(K.width) * K.height,
                                          std::numeric_limits<double>::infinity()) {
    for (const Projection& p : proj) {
      if (!p.in_frame) continue;
      double& d = depth_[cell(p)];
      d = std::min(d, p.depth);
    }
  }

  bool visible(const Projection& p) const {
    if (!p.in_frame) return false;
    const int x = static_cast<int>(std::lround(p.u));
    const int y = static_cast<int>(std::lround(p.v));
    double nearest = std::numeric_limits<double>::infinity();
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const int xx = x + dx;
        const int yy = y + dy;
        if (xx < 0 || yy < 0 || xx >= w_ || yy >= h_) continue;
        nearest = std::min(nearest, depth_[static_cast<std::size_t>(yy) * w_ + xx]);
      }
    }
    return p.depth <= nearest * (1.0 + kOcclusionTolerance);
  }

 private:
  std::size_t cell(const Projection& p) const {
    const int x = std::clamp(static_cast<int>(std::lround(p.u)), 0, w_ - 1);
    const int y = std::clamp(static_cast<int>(std::lround(p.v)), 0, h_ - 1);
    return static_cast<std::size_t>(y) * w_ + x;
  }

  int w_;
  int h_;
  std::vector<double> depth_;
};

template <typename Accumulate>
void splat(const SyntheticScene& scene, const Pose& pose, const CameraIntrinsics& K,
           Accumulate&& accumulate) {
  if (!K.is_valid()) throw Error(ErrorCode::InvalidArgument, "invalid camera intrinsics");
  if (!pose.is_valid(1e-6)) throw Error(ErrorCode::InvalidArgument, "pose rotation is not orthonormal");
  const std::vector<Projection> proj = project_all(scene, pose, K);
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < proj.size(); ++i) {
    if (proj[i].in_frame) order.push_back(i);
  }
  if (order.empty()) throw Error(ErrorCode::EmptyView, "no scene point projects into the frame");
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return proj[a].depth < proj[b].depth; });

  std::vector<double> transmittance(static_cast<std::size_t>(K.width) * K.height, 1.0);
  const int r = static_cast<int>(std::ceil(kSplatRadiusPx));
  const double inv2s2 = 1.0 / (2.0 * kSplatSigmaPx * kSplatSigmaPx);
  for (const std::size_t i : order) {
    const Projection& p = proj[i];
    const int x0 = static_cast<int>(std::lround(p.u));
    const int y0 = static_cast<int>(std::lround(p.v));
    for (int y = std::max(0, y0 - r); y <= std::min(K.height - 1, y0 + r); ++y) {
      for (int x = std::max(0, x0 - r); x <= std::min(K.width - 1, x0 + r); ++x) {
        const double d2 = (x - p.u) * (x - p.u) + (y - p.v) * (y - p.v);
        if (d2 > kSplatRadiusPx * kSplatRadiusPx) continue;
        const double alpha = std::exp(-d2 * inv2s2);
        double& t = transmittance[static_cast<std::size_t>(y) * K.width + x];
        accumulate(x, y, t * alpha, scene.points[i]);
        t *= 1.0 - alpha;
      }
    }
  }
}

float quantize(double v) {
  return static_cast<float>(std::round(std::clamp(v, 0.0, 1.0) * 65535.0) / 65535.0);
}

}  // namespace

std::string_view to_string(SceneKind kind) {
  switch (kind) {
    case SceneKind::RandomBox: return "random_box";
    case SceneKind::TexturedPlane: return "textured_plane";
    case SceneKind::Heightfield: return "heightfield";
  }
  return "unknown";
}

SceneKind scene_kind_from_string(std::string_view name) {
  if (name == "random_box") return SceneKind::RandomBox;
  if (name == "textured_plane") return SceneKind::TexturedPlane;
  if (name == "heightfield") return SceneKind::Heightfield;
  throw Error(ErrorCode::InvalidArgument, "unknown scene kind '" + std::string(name) + "'");
}

Vec3 SyntheticScene::centroid() const {
  Vec3 c = Vec3::Zero();
  for (const ScenePoint& p : points) c += p.position;
  return points.empty() ? c : Vec3(c / static_cast<double>(points.size()));
}

SyntheticScene SyntheticScene::scaled(double s) const {
  SyntheticScene out = *this;
  for (ScenePoint& p : out.points) p.position *= s;
  out.box_min *= s;
  out.box_max *= s;
  out.extent *= s;
  return out;
}

SyntheticScene generate_scene(SceneKind kind, int n_points, double extent, std::uint64_t seed) {
  if (n_points < 10) throw Error(ErrorCode::InvalidArgument, "a scene needs at least 10 points");
  if (!(extent > 0.0)) throw Error(ErrorCode::InvalidArgument, "scene extent must be positive");

  std::mt19937_64 rng(stream_seed(seed, 0));
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<float> colour(0.2f, 1.0f);

  SyntheticScene scene;
  scene.kind = kind;
  scene.extent = extent;
  scene.seed = seed;
  scene.points.reserve(static_cast<std::size_t>(n_points));
  for (int i = 0; i < n_points; ++i) {
    const double x = extent * unit(rng);
    const double y = extent * unit(rng);
    double z = 0.0;
    switch (kind) {
      case SceneKind::RandomBox: z = extent * unit(rng); break;
      case SceneKind::TexturedPlane: break;
      case SceneKind::Heightfield:
        z = 0.15 * extent * std::sin(2.2 * x / extent) * std::cos(1.7 * y / extent);
        break;
    }
    ScenePoint p;
    p.position = Vec3(x, y, z);
    p.rgb = {colour(rng), colour(rng), colour(rng)};
    p.intensity = luma(p.rgb[0], p.rgb[1], p.rgb[2]);
    scene.points.push_back(p);
  }
  scene.box_min = scene.box_max = scene.points.front().position;
  for (const ScenePoint& p : scene.points) {
    scene.box_min = scene.box_min.cwiseMin(p.position);
    scene.box_max = scene.box_max.cwiseMax(p.position);
  }
  return scene;
}

GrayImage render(const SyntheticScene& scene, const Pose& pose, const CameraIntrinsics& K) {
  std::vector<double> acc(static_cast<std::size_t>(K.width) * K.height, 0.0);
  splat(scene, pose, K, [&](int x, int y, double weight, const ScenePoint& p) {
    acc[static_cast<std::size_t>(y) * K.width + x] += weight * p.intensity;
  });
  GrayImage out(K.width, K.height);
  for (int y = 0; y < K.height; ++y) {
    for (int x = 0; x < K.width; ++x) out(x, y) = quantize(acc[static_cast<std::size_t>(y) * K.width + x]);
  }
  return out;
}

RgbImage render_rgb(const SyntheticScene& scene, const Pose& pose, const CameraIntrinsics& K) {
  std::vector<std::array<double, 3>> acc(static_cast<std::size_t>(K.width) * K.height, {0, 0, 0});
  splat(scene, pose, K, [&](int x, int y, double weight, const ScenePoint& p) {
    auto& c = acc[static_cast<std::size_t>(y) * K.width + x];
    for (int k = 0; k < 3; ++k) c[k] += weight * p.rgb[k];
  });
  RgbImage out(K.width, K.height);
  for (int y = 0; y < K.height; ++y) {
    for (int x = 0; x < K.width; ++x) {
      const auto& c = acc[static_cast<std::size_t>(y) * K.width + x];
      out.at(x, y) = {quantize(c[0]), quantize(c[1]), quantize(c[2])};
    }
  }
  return out;
}

std::vector<bool> visible_points(const SyntheticScene& scene, const Pose& pose,
                                 const CameraIntrinsics& K) {
  const std::vector<Projection> proj = project_all(scene, pose, K);
  const DepthBuffer buffer(proj, K);
  std::vector<bool> out(proj.size());
  for (std::size_t i = 0; i < proj.size(); ++i) out[i] = buffer.visible(proj[i]);
  return out;
}

void OracleFlowConfig::validate() const {
  if (!(noise_sigma_px >= 0.0) || !(outlier_max_px >= 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "oracle noise parameters must be non-negative");
  }
  if (!(outlier_fraction >= 0.0 && outlier_fraction <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "outlier_fraction must lie in [0, 1]");
  }
  if (!(resolution_px >= 0.0)) throw Error(ErrorCode::InvalidArgument, "resolution_px must be non-negative");
}

OracleFlow oracle_flow(const SyntheticScene& scene, const Pose& pose_a, const Pose& pose_b,
                       const CameraIntrinsics& K, std::span<const PixelPoint> points_a,
                       const OracleFlowConfig& cfg) {
  cfg.validate();
  const std::vector<Projection> proj_a = project_all(scene, pose_a, K);
  const std::vector<Projection> proj_b = project_all(scene, pose_b, K);
  const DepthBuffer buf_a(proj_a, K);
  const DepthBuffer buf_b(proj_b, K);

  // Visible points of view a bucketed by rounded pixel.
  std::vector<std::vector<int>> buckets(static_cast<std::size_t>(K.width) * K.height);
  for (std::size_t i = 0; i < proj_a.size(); ++i) {
    if (!buf_a.visible(proj_a[i])) continue;
    const int x = std::clamp(static_cast<int>(std::lround(proj_a[i].u)), 0, K.width - 1);
    const int y = std::clamp(static_cast<int>(std::lround(proj_a[i].v)), 0, K.height - 1);
    buckets[static_cast<std::size_t>(y) * K.width + x].push_back(static_cast<int>(i));
  }

  OracleFlow out;
  for (const PixelPoint& p : points_a) {
    int best = -1;
    double best_d2 = kSnapRadiusPx * kSnapRadiusPx;
    const int cx = static_cast<int>(std::lround(p.u));
    const int cy = static_cast<int>(std::lround(p.v));
    for (int y = cy - 1; y <= cy + 1; ++y) {
      for (int x = cx - 1; x <= cx + 1; ++x) {
        if (x < 0 || y < 0 || x >= K.width || y >= K.height) continue;
        for (const int i : buckets[static_cast<std::size_t>(y) * K.width + x]) {
          const double d2 = (proj_a[i].u - p.u) * (proj_a[i].u - p.u) + (proj_a[i].v - p.v) * (proj_a[i].v - p.v);
          if (d2 <= best_d2) {
            if (d2 == best_d2 && best >= 0 && proj_a[best].depth <= proj_a[i].depth) continue;
            best = i;
            best_d2 = d2;
          }
        }
      }
    }
    if (best < 0) {
      out.flow.push_back(p, Vec2::Zero(), false);
      out.scene_index.push_back(-1);
      continue;
    }
    const Projection& a = proj_a[best];
    const Projection& b = proj_b[best];
    const bool ok = buf_b.visible(b);
    out.flow.push_back({a.u, a.v}, ok ? Vec2(b.u - a.u, b.v - a.v) : Vec2::Zero(), ok);
    out.scene_index.push_back(best);
  }
  out.truth_outlier.assign(out.flow.size(), false);

  std::mt19937_64 rng(stream_seed(cfg.seed, 1));
  if (cfg.noise_sigma_px > 0.0) {
    std::normal_distribution<double> noise(0.0, cfg.noise_sigma_px);
    for (std::size_t i = 0; i < out.flow.size(); ++i) {
      if (!out.flow.valid[i]) continue;
      const double nx = noise(rng);
      const double ny = noise(rng);
      out.flow.vectors[i] += Vec2(nx, ny);
    }
  }
  std::vector<std::size_t> valid_idx;
  for (std::size_t i = 0; i < out.flow.size(); ++i) {
    if (out.flow.valid[i]) valid_idx.push_back(i);
  }
  const auto n_out = static_cast<std::size_t>(std::floor(cfg.outlier_fraction * static_cast<double>(valid_idx.size())));
  if (n_out > 0) {
    std::mt19937_64 pick(stream_seed(cfg.seed, 2));
    for (std::size_t k = 0; k < n_out; ++k) {
      std::uniform_int_distribution<std::size_t> d(k, valid_idx.size() - 1);
      std::swap(valid_idx[k], valid_idx[d(pick)]);
    }
    std::uniform_real_distribution<double> offset(-cfg.outlier_max_px, cfg.outlier_max_px);
    for (std::size_t k = 0; k < n_out; ++k) {
      const std::size_t i = valid_idx[k];
      const double ox = offset(pick);
      const double oy = offset(pick);
      out.flow.vectors[i] = Vec2(ox, oy);
      out.truth_outlier[i] = true;
    }
  }
  if (cfg.resolution_px > 0.0) {
    const auto snap = [r = cfg.resolution_px](double x) { return std::round(x / r) * r; };
    for (std::size_t i = 0; i < out.flow.size(); ++i) {
      const PixelPoint target = out.flow.target(i);
      PixelPoint& p = out.flow.points[i];
      p = {snap(p.u), snap(p.v)};
      if (out.flow.valid[i]) out.flow.vectors[i] = Vec2(snap(target.u) - p.u, snap(target.v) - p.v);
    }
  }
  return out;
}

SparseFlow OracleFlowBackend::sparse_flow(const View& from, const View& to,
                                          std::span<const PixelPoint> points) {
  OracleFlowConfig cfg = cfg_;
  cfg.seed = stream_seed(cfg_.seed, queries_++);
  OracleFlow result = oracle_flow(*scene_, from.pose.value_or(sensor_pose_),
                                  to.pose.value_or(sensor_pose_), K_, points, cfg);
  last_truth_ = std::move(result.truth_outlier);
  return std::move(result.flow);
}

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open manifest " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BadManifest, path.string() + ": " + e.what());
  }
  if (!doc.is_array()) throw Error(ErrorCode::BadManifest, path.string() + ": expected a JSON array");
  std::vector<ManifestRecord> out;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& rec = doc[i];
    const std::string where = path.string() + " record " + std::to_string(i);
    if (!rec.is_object() || !rec.contains("pose") || !rec.contains("file")) {
      throw Error(ErrorCode::BadManifest, where + ": needs 'pose' and 'file'");
    }
    if (!rec["file"].is_string()) throw Error(ErrorCode::BadManifest, where + ": 'file' must be a string");
    const auto& pose = rec["pose"];
    if (!pose.is_array() || pose.size() != 12 ||
        !std::all_of(pose.begin(), pose.end(), [](const auto& v) { return v.is_number(); })) {
      throw Error(ErrorCode::BadManifest, where + ": 'pose' must be 12 numbers");
    }
    const std::vector<double> values = pose.get<std::vector<double>>();
    ManifestRecord r{Pose::from_row_major(values), rec["file"].get<std::string>()};
    if (!r.pose.is_valid(1e-6)) throw Error(ErrorCode::BadManifest, where + ": rotation not orthonormal");
    out.push_back(std::move(r));
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, std::span<const ManifestRecord> records) {
  nlohmann::json doc = nlohmann::json::array();
  for (const ManifestRecord& r : records) {
    doc.push_back({{"pose", r.pose.to_row_major()}, {"file", r.file}});
  }
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write manifest " + path.string());
  out << doc.dump(2) << '\n';
}

ImageDirectoryBackend::ImageDirectoryBackend(const std::filesystem::path& manifest_path,
                                             CameraIntrinsics K)
    : root_(manifest_path.parent_path()), K_(K), records_(read_manifest(manifest_path)) {}

std::size_t ImageDirectoryBackend::find(const Pose& pose) const {
  double nearest = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const double dp = (records_[i].pose.position - pose.position).norm();
    const double dr = rotation_angle(records_[i].pose.rotation.transpose() * pose.rotation);
    if (dp <= 1e-6 && dr <= 1e-6) return i;
    nearest = std::min(nearest, dp);
  }
  throw Error(ErrorCode::PoseNotFound,
              "no manifest image at the requested pose (nearest position " + std::to_string(nearest) + " away)");
}

std::string ImageDirectoryBackend::stem_for(const Pose& pose) const {
  return std::filesystem::path(records_[find(pose)].file).stem().string();
}

GrayImage ImageDirectoryBackend::render(const Pose& pose) {
  const std::size_t i = find(pose);
  {
    const std::lock_guard lock(mutex_);
    if (const auto it = cache_.find(i); it != cache_.end()) return it->second;
  }
  GrayImage img = read_png_gray(root_ / records_[i].file);
  if (img.width() != K_.width || img.height() != K_.height) {
    throw Error(ErrorCode::ImageDecodeError, records_[i].file + " does not match the camera size");
  }
  const std::lock_guard lock(mutex_);
  return cache_.emplace(i, std::move(img)).first->second;
}

}  // namespace verf
