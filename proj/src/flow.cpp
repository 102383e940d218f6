#include "verf/flow.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include "verf/error.hpp"

namespace verf {

DenseFlowField::DenseFlowField(int w, int h)
    : width(w),
      height(h),
      du(static_cast<std::size_t>(w) * h, 0.0f),
      dv(static_cast<std::size_t>(w) * h, 0.0f),
      valid(static_cast<std::size_t>(w) * h, 1) {}

void DenseFlowField::set(int x, int y, float u, float v, bool ok) {
  const std::size_t i = index(x, y);
  du[i] = u;
  dv[i] = v;
  valid[i] = ok ? 1 : 0;
}

std::vector<double> min_eigenvalue_map(const GrayImage& img) {
  const int w = img.width();
  const int h = img.height();
  std::vector<double> gx(static_cast<std::size_t>(w) * h, 0.0);
  std::vector<double> gy(gx.size(), 0.0);
  auto at = [w](int x, int y) { return static_cast<std::size_t>(y) * w + x; };
  for (int y = 1; y + 1 < h; ++y) {
    for (int x = 1; x + 1 < w; ++x) {
      const double sx = (img(x + 1, y - 1) + 2.0 * img(x + 1, y) + img(x + 1, y + 1)) -
                        (img(x - 1, y - 1) + 2.0 * img(x - 1, y) + img(x - 1, y + 1));
      const double sy = (img(x - 1, y + 1) + 2.0 * img(x, y + 1) + img(x + 1, y + 1)) -
                        (img(x - 1, y - 1) + 2.0 * img(x, y - 1) + img(x + 1, y - 1));
      gx[at(x, y)] = sx / 8.0;
      gy[at(x, y)] = sy / 8.0;
    }
  }
  std::vector<double> response(gx.size(), 0.0);
  for (int y = 2; y + 2 < h; ++y) {
    for (int x = 2; x + 2 < w; ++x) {
      double a = 0.0;
      double b = 0.0;
      double c = 0.0;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const double ix = gx[at(x + dx, y + dy)];
          const double iy = gy[at(x + dx, y + dy)];
          a += ix * ix;
          b += ix * iy;
          c += iy * iy;
        }
      }
      const double half_trace = 0.5 * (a + c);
      const double r = std::sqrt(0.25 * (a - c) * (a - c) + b * b);
      response[at(x, y)] = std::max(0.0, half_trace - r);
    }
  }
  return response;
}

std::vector<PixelPoint> shi_tomasi(const GrayImage& img, const ShiTomasiParams& params) {
  if (img.width() < 16 || img.height() < 16) {
    throw Error(ErrorCode::InvalidArgument, "feature detection needs at least a 16x16 image");
  }
  if (params.max_features < 1 || !(params.quality_level > 0.0) || params.min_distance_px < 0.0) {
    throw Error(ErrorCode::InvalidArgument, "bad feature detector parameters");
  }
  const int w = img.width();
  const int h = img.height();
  const std::vector<double> response = min_eigenvalue_map(img);
  const double best = *std::max_element(response.begin(), response.end());
  if (!(best > 1e-12)) throw Error(ErrorCode::NoFeatures, "image has no corner structure");
  const double threshold = params.quality_level * best;

  struct Candidate {
    double score;
    int x;
    int y;
  };
  std::vector<Candidate> candidates;
  for (int y = 2; y + 2 < h; ++y) {
    for (int x = 2; x + 2 < w; ++x) {
      const double s = response[static_cast<std::size_t>(y) * w + x];
      if (s < threshold || s <= 0.0) continue;
      bool is_max = true;
      for (int dy = -1; dy <= 1 && is_max; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (response[static_cast<std::size_t>(y + dy) * w + x + dx] > s) {
            is_max = false;
            break;
          }
        }
      }
      if (is_max) candidates.push_back({s, x, y});
    }
  }
  if (candidates.empty()) throw Error(ErrorCode::NoFeatures, "no local maxima above quality level");
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.y != b.y) return a.y < b.y;
    return a.x < b.x;
  });

  const double min_d2 = params.min_distance_px * params.min_distance_px;
  std::vector<PixelPoint> out;
  for (const Candidate& c : candidates) {
    const bool far_enough = std::none_of(out.begin(), out.end(), [&](const PixelPoint& p) {
      const double dx = p.u - c.x;
      const double dy = p.v - c.y;
      return dx * dx + dy * dy < min_d2;
    });
    if (!far_enough) continue;
    out.push_back({static_cast<double>(c.x), static_cast<double>(c.y)});
    if (static_cast<int>(out.size()) == params.max_features) break;
  }
  return out;
}

SparseFlow sample_sparse(const DenseFlowField& dense, std::span<const PixelPoint> points) {
  SparseFlow out;
  for (const PixelPoint& p : points) {
    if (!(p.u >= 0.0 && p.v >= 0.0 && p.u <= dense.width - 1 && p.v <= dense.height - 1)) {
      throw Error(ErrorCode::OutOfBounds, "point (" + std::to_string(p.u) + ", " +
                                              std::to_string(p.v) + ") outside the flow field");
    }
    const int x0 = std::min(static_cast<int>(std::floor(p.u)), std::max(dense.width - 2, 0));
    const int y0 = std::min(static_cast<int>(std::floor(p.v)), std::max(dense.height - 2, 0));
    const int x1 = std::min(x0 + 1, dense.width - 1);
    const int y1 = std::min(y0 + 1, dense.height - 1);
    const double fx = p.u - x0;
    const double fy = p.v - y0;
    const std::array<std::pair<std::size_t, double>, 4> taps = {{
        {dense.index(x0, y0), (1 - fx) * (1 - fy)},
        {dense.index(x1, y0), fx * (1 - fy)},
        {dense.index(x0, y1), (1 - fx) * fy},
        {dense.index(x1, y1), fx * fy},
    }};
    Vec2 v = Vec2::Zero();
    bool ok = true;
    for (const auto& [idx, weight] : taps) {
      if (weight == 0.0) continue;
      ok = ok && dense.valid[idx] != 0;
      v += weight * Vec2(dense.du[idx], dense.dv[idx]);
    }
    out.push_back(p, v, ok);
  }
  return out;
}

namespace {

template <typename T>
T read_le(const char* bytes) {
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    auto* p = reinterpret_cast<unsigned char*>(&value);
    std::reverse(p, p + sizeof(T));
  }
  return value;
}

}  // namespace

DenseFlowField read_flo(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (bytes.size() < 4) throw Error(ErrorCode::TruncatedFile, path.string() + ": missing magic");
  if (std::memcmp(bytes.data(), "PIEH", 4) != 0) {
    throw Error(ErrorCode::BadMagic, path.string() + " is not a .flo file");
  }
  if (bytes.size() < 12) throw Error(ErrorCode::TruncatedFile, path.string() + ": short header");
  const auto w = read_le<std::int32_t>(bytes.data() + 4);
  const auto h = read_le<std::int32_t>(bytes.data() + 8);
  constexpr std::int32_t kMaxDim = 32768;
  if (w <= 0 || h <= 0 || w > kMaxDim || h > kMaxDim) {
    throw Error(ErrorCode::DimensionOverflow,
                path.string() + ": bad dimensions " + std::to_string(w) + "x" + std::to_string(h));
  }
  const std::size_t count = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  if (bytes.size() - 12 < count * 8) {
    throw Error(ErrorCode::TruncatedFile, path.string() + ": payload shorter than " +
                                              std::to_string(count * 8) + " bytes");
  }
  DenseFlowField field(w, h);
  const char* p = bytes.data() + 12;
  for (std::size_t i = 0; i < count; ++i, p += 8) {
    const float u = read_le<float>(p);
    const float v = read_le<float>(p + 4);
    field.du[i] = u;
    field.dv[i] = v;
    const bool ok = std::isfinite(u) && std::isfinite(v) && std::abs(u) <= 1e9f && std::abs(v) <= 1e9f;
    field.valid[i] = ok ? 1 : 0;
  }
  return field;
}

SparseFlow DenseFlowBackend::sparse_flow(const View& from, const View& to,
                                         std::span<const PixelPoint> points) {
  return sample_sparse(dense_flow(from, to), points);
}

FloDirectoryBackend::FloDirectoryBackend(std::filesystem::path dir,
                                         std::function<std::string(const View&)> namer)
    : dir_(std::move(dir)), namer_(std::move(namer)) {}

DenseFlowField FloDirectoryBackend::dense_flow(const View& from, const View& to) {
  const auto path = dir_ / (namer_(from) + "__" + namer_(to) + ".flo");
  DenseFlowField field = read_flo(path);
  if (from.image && (field.width != from.image->width() || field.height != from.image->height())) {
    throw Error(ErrorCode::InvalidArgument, path.string() + " does not match the image size");
  }
  return field;
}

namespace {

// Blur with the separable kernel [1 3 3 1] / 8 and keep every second pixel.
GrayImage half_size(const GrayImage& img) {
  const int w = std::max(1, img.width() / 2);
  const int h = std::max(1, img.height() / 2);
  static constexpr float kW[4] = {0.125f, 0.375f, 0.375f, 0.125f};
  auto at = [&img](int x, int y) {
    return img(std::clamp(x, 0, img.width() - 1), std::clamp(y, 0, img.height() - 1));
  };
  GrayImage out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      float s = 0.0f;
      for (int j = 0; j < 4; ++j) {
        for (int i = 0; i < 4; ++i) s += kW[j] * kW[i] * at(2 * x - 1 + i, 2 * y - 1 + j);
      }
      out(x, y) = s;
    }
  }
  return out;
}

std::vector<GrayImage> pyramid(const GrayImage& img, int levels) {
  std::vector<GrayImage> p{img};
  for (int l = 0; l < levels; ++l) p.push_back(half_size(p.back()));
  return p;
}

// Patch SSD with replicated borders.
double patch_ssd(const GrayImage& a, int ax, int ay, const GrayImage& b, int bx, int by, int r) {
  auto at = [](const GrayImage& img, int x, int y) {
    return img(std::clamp(x, 0, img.width() - 1), std::clamp(y, 0, img.height() - 1));
  };
  const double inv = 1.0 / (0.5 * r * r);
  double s = 0.0;
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      const double d = at(a, ax + dx, ay + dy) - at(b, bx + dx, by + dy);
      s += std::exp(-(dx * dx + dy * dy) * inv) * d * d;
    }
  }
  return s;
}

}  // namespace

SparseFlow PatchMatchFlowBackend::sparse_flow(const View& from, const View& to,
                                              std::span<const PixelPoint> points) {
  if (!from.image || !to.image) throw Error(ErrorCode::InvalidArgument, "patch matching needs images");
  const int pr = params_.patch_radius;
  const int sr = params_.search_radius;
  const int levels = std::max(0, params_.levels);
  const auto pa = pyramid(*from.image, levels);
  const auto pb = pyramid(*to.image, levels);
  const GrayImage& a = pa.front();
  const GrayImage& b = pb.front();

  auto inside = [pr](const GrayImage& img, int x, int y) {
    return x - pr >= 0 && y - pr >= 0 && x + pr < img.width() && y + pr < img.height();
  };

  SparseFlow out;
  for (const PixelPoint& p : points) {
    const int ax = static_cast<int>(std::lround(p.u));
    const int ay = static_cast<int>(std::lround(p.v));
    if (!inside(a, ax, ay)) {
      out.push_back(p, Vec2::Zero(), false);
      continue;
    }
    // Exhaustive search at the coarsest level, then +-2 px per finer level.
    int dx = 0;
    int dy = 0;
    for (int l = levels; l >= 0; --l) {
      const int cx = ax >> l;
      const int cy = ay >> l;
      const int reach = l == levels ? (sr >> l) + 1 : 2;
      if (l != levels) {
        dx *= 2;
        dy *= 2;
      }
      double best = std::numeric_limits<double>::infinity();
      int bx = dx;
      int by = dy;
      for (int oy = dy - reach; oy <= dy + reach; ++oy) {
        for (int ox = dx - reach; ox <= dx + reach; ++ox) {
          const double s = patch_ssd(pa[l], cx, cy, pb[l], cx + ox, cy + oy, pr);
          if (s < best || (s == best && ox * ox + oy * oy < bx * bx + by * by)) {
            best = s;
            bx = ox;
            by = oy;
          }
        }
      }
      dx = bx;
      dy = by;
    }
    const int mx = ax + dx;
    const int my = ay + dy;
    if (std::abs(dx) > sr || std::abs(dy) > sr || !inside(b, mx - 1, my - 1) || !inside(b, mx + 1, my + 1)) {
      out.push_back(p, Vec2::Zero(), false);
      continue;
    }
    auto parabola = [](double l, double c, double r) {
      const double den = l - 2.0 * c + r;
      return den > 0.0 ? 0.5 * (l - r) / den : 0.0;
    };
    const double c = patch_ssd(a, ax, ay, b, mx, my, pr);
    const double ox = parabola(patch_ssd(a, ax, ay, b, mx - 1, my, pr), c, patch_ssd(a, ax, ay, b, mx + 1, my, pr));
    const double oy = parabola(patch_ssd(a, ax, ay, b, mx, my - 1, pr), c, patch_ssd(a, ax, ay, b, mx, my + 1, pr));
    out.push_back(p, Vec2(mx + ox - p.u, my + oy - p.v), true);
  }
  return out;
}

}  // namespace verf
