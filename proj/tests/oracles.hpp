#pragma once

// Independent reference computations for the tests. None of these call into
// the library code they check.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Rodrigues' formula.
inline Mat3 rotation(const Vec3& axis, double angle) {
  const Vec3 k = axis.normalized();
  Mat3 kx;
  kx << 0, -k.z(), k.y(), k.z(), 0, -k.x(), -k.y(), k.x(), 0;
  return Mat3::Identity() + std::sin(angle) * kx + (1.0 - std::cos(angle)) * kx * kx;
}

inline Mat3 random_rotation(std::mt19937_64& rng, double max_angle) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(-max_angle, max_angle);
  return rotation(Vec3(g(rng), g(rng), g(rng)), u(rng));
}

// Chord formula, accurate for tiny angles where acos of the trace is not:
// ||A - B||_F = 2 sqrt(2) sin(theta / 2).
inline double angle_between_rotations(const Mat3& a, const Mat3& b) {
  return 2.0 * std::asin(std::min(1.0, (a - b).norm() / (2.0 * std::sqrt(2.0))));
}

inline double angle_between_directions(const Vec3& u, const Vec3& v) {
  return 2.0 * std::asin(std::min(1.0, (u.normalized() - v.normalized()).norm() / 2.0));
}

// Standard normal CDF as 0.5 + phi(x) * sum x^(2k+1) / (2k+1)!!, 50 terms.
inline double phi_series(double x) {
  const double density = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  double term = x;
  double sum = x;
  for (int k = 1; k < 50; ++k) {
    term *= x * x / (2.0 * k + 1.0);
    sum += term;
  }
  return 0.5 + density * sum;
}

// Pixel-space fundamental matrix K^-T E K^-1.
inline Mat3 fundamental(const Mat3& e, double fx, double fy, double cx, double cy) {
  Mat3 k;
  k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
  const Mat3 ki = k.inverse();
  return ki.transpose() * e * ki;
}

inline double line_distance(const Vec3& line, const Vec2& p) {
  return std::abs(line.x() * p.x() + line.y() * p.y() + line.z()) / std::hypot(line.x(), line.y());
}

inline Vec2 project_onto(const Vec3& line, const Vec2& p) {
  const double n2 = line.x() * line.x() + line.y() * line.y();
  const double s = (line.x() * p.x() + line.y() * p.y() + line.z()) / n2;
  return {p.x() - s * line.x(), p.y() - s * line.y()};
}

// Exact two-view geometric error in pixels: the smallest sqrt(|a - a'|^2 +
// |b - b'|^2) over corrected pairs with b'^T F a' = 0. Searches the pencil of
// epipolar lines through the epipole in image a; for a given line the best a'
// is the foot of a, and the best b' the foot of b on the matching line.
inline double two_view_distance_px(const Mat3& f, const Vec2& a, const Vec2& b) {
  Eigen::JacobiSVD<Mat3> svd(f, Eigen::ComputeFullV);
  const Vec3 epipole = svd.matrixV().col(2);
  const auto cost = [&](double theta) {
    const Vec3 dir(std::cos(theta), std::sin(theta), 0.0);
    const Vec3 la = epipole.cross(dir);
    if (std::hypot(la.x(), la.y()) < 1e-300) return std::numeric_limits<double>::infinity();
    const Vec2 a2 = project_onto(la, a);
    const Vec3 lb = f * Vec3(a2.x(), a2.y(), 1.0);
    const double db = line_distance(lb, b);
    return (a2 - a).squaredNorm() + db * db;
  };
  constexpr int kGrid = 20000;
  double best_theta = 0.0;
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < kGrid; ++i) {
    const double theta = std::numbers::pi * i / kGrid;
    const double c = cost(theta);
    if (c < best) {
      best = c;
      best_theta = theta;
    }
  }
  // Golden-section polish inside the winning cell.
  double lo = best_theta - std::numbers::pi / kGrid;
  double hi = best_theta + std::numbers::pi / kGrid;
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  for (int i = 0; i < 100; ++i) {
    const double m1 = hi - g * (hi - lo);
    const double m2 = lo + g * (hi - lo);
    if (cost(m1) < cost(m2)) {
      hi = m2;
    } else {
      lo = m1;
    }
  }
  return std::sqrt(std::min(best, cost(0.5 * (lo + hi))));
}

// Middlebury .flo bytes: "PIEH", int32 width, int32 height, then interleaved
// float32 (u, v) row by row, all little-endian.
inline std::vector<std::uint8_t> flo_bytes(int width, int height, const std::vector<float>& uv) {
  std::vector<std::uint8_t> out = {'P', 'I', 'E', 'H'};
  const auto put32 = [&out](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xffu));
  };
  put32(static_cast<std::uint32_t>(width));
  put32(static_cast<std::uint32_t>(height));
  for (const float f : uv) {
    std::uint32_t bits = 0;
    std::memcpy(&bits, &f, sizeof bits);
    put32(bits);
  }
  return out;
}

inline void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Tag balance check: every element closes in order, attributes are quoted,
// and exactly one root element follows the optional declaration.
inline bool well_formed_xml(const std::string& text) {
  std::vector<std::string> stack;
  std::size_t i = 0;
  int roots = 0;
  while (i < text.size()) {
    if (text[i] != '<') {
      if (stack.empty() && !std::isspace(static_cast<unsigned char>(text[i]))) return false;
      ++i;
      continue;
    }
    const std::size_t close = text.find('>', i);
    if (close == std::string::npos) return false;
    std::string tag = text.substr(i + 1, close - i - 1);
    i = close + 1;
    if (tag.starts_with("?")) {
      if (!tag.ends_with("?")) return false;
      continue;
    }
    if (tag.starts_with("/")) {
      if (stack.empty() || stack.back() != tag.substr(1)) return false;
      stack.pop_back();
      continue;
    }
    bool self_closing = tag.ends_with("/");
    if (self_closing) tag.pop_back();
    const std::string name = tag.substr(0, tag.find_first_of(" \t\n"));
    if (name.empty()) return false;
    int quotes = 0;
    for (const char c : tag) quotes += c == '"';
    if (quotes % 2) return false;
    if (stack.empty()) ++roots;
    if (!self_closing) stack.push_back(name);
  }
  return stack.empty() && roots == 1;
}

inline int count_of(const std::string& text, const std::string& needle) {
  int n = 0;
  for (std::size_t p = text.find(needle); p != std::string::npos; p = text.find(needle, p + 1)) ++n;
  return n;
}

}  // namespace oracle
