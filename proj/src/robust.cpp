#include "verf/robust.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <Eigen/Dense>

#include "verf/error.hpp"

namespace verf {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Draws `k` distinct indices from [0, n).
void sample_indices(std::mt19937_64& rng, std::size_t n, std::size_t k, std::vector<std::size_t>& out) {
  out.clear();
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  while (out.size() < k) {
    const std::size_t i = pick(rng);
    if (std::find(out.begin(), out.end(), i) == out.end()) out.push_back(i);
  }
}

int adaptive_iterations(std::size_t inliers, std::size_t total, std::size_t sample_size,
                        const RansacParams& params) {
  const double w = static_cast<double>(inliers) / static_cast<double>(total);
  const double p_good = std::pow(w, static_cast<double>(sample_size));
  if (p_good >= 1.0) return 1;
  if (p_good <= 0.0) return params.max_iterations;
  const double n = std::log(1.0 - params.confidence) / std::log(1.0 - p_good);
  if (!std::isfinite(n) || n >= params.max_iterations) return params.max_iterations;
  return std::max(1, static_cast<int>(std::ceil(n)));
}

// Similarity taking the points to zero mean and sqrt(2) mean distance.
Mat3 normalizing_transform(std::span<const Vec2> pts) {
  Vec2 mean = Vec2::Zero();
  for (const Vec2& p : pts) mean += p;
  mean /= static_cast<double>(pts.size());
  double dist = 0.0;
  for (const Vec2& p : pts) dist += (p - mean).norm();
  dist /= static_cast<double>(pts.size());
  const double s = dist > 0.0 ? std::sqrt(2.0) / dist : 1.0;
  Mat3 t;
  t << s, 0.0, -s * mean.x(), 0.0, s, -s * mean.y(), 0.0, 0.0, 1.0;
  return t;
}

struct Score {
  std::size_t count = 0;
  double cost = std::numeric_limits<double>::infinity();  // truncated quadratic

  // Near-equal costs keep the incumbent, so the choice does not hinge on
  // rounding (refits often converge to the same model from different samples).
  bool better_than(const Score& o) const {
    return count > o.count || (count == o.count && cost < o.cost - 1e-9 * (1.0 + std::abs(o.cost)));
  }
};

// Support is the final inlier definition: Sampson inliers that also sit in
// the cheiral maximum consensus. Wide thresholds let wrong motions explain
// most flows up to a sign, and those split the cheiral vote.
Score score_essential(const EssentialMatrix& E, std::span<const PointPair> pairs,
                      const CameraIntrinsics& K, double threshold) {
  Score s{0, 0.0};
  const double t2 = threshold * threshold;
  std::vector<PointPair> close;
  close.reserve(pairs.size());
  for (const PointPair& p : pairs) {
    const double d = sampson_distance(E, p.a, p.b, K);
    if (d < threshold) {
      close.push_back(p);
      s.cost += d * d;
    } else {
      s.cost += t2;
    }
  }
  s.count = static_cast<std::size_t>(cheiral_consensus(E, close));
  return s;
}

std::vector<std::size_t> sampson_inliers(const EssentialMatrix& E, std::span<const PointPair> pairs,
                                         const CameraIntrinsics& K, double threshold) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (sampson_distance(E, pairs[i].a, pairs[i].b, K) < threshold) out.push_back(i);
  }
  return out;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

Mat3 so3_exp(const Vec3& w) {
  const double angle = w.norm();
  if (angle < 1e-15) return Mat3::Identity() + skew(w);
  return Eigen::AngleAxisd(angle, w / angle).toRotationMatrix();
}

// Pixel-scaled signed Sampson residual of one pair.
double sampson_residual(const Mat3& e, const PointPair& p, const CameraIntrinsics& K) {
  const Vec3 a = p.a.homogeneous();
  const Vec3 b = p.b.homogeneous();
  const Vec3 ea = e * a;
  const Vec3 etb = e.transpose() * b;
  const double den = ea.x() * ea.x() / (K.fx * K.fx) + ea.y() * ea.y() / (K.fy * K.fy) +
                     etb.x() * etb.x() / (K.fx * K.fx) + etb.y() * etb.y() / (K.fy * K.fy);
  return den > 0.0 ? b.dot(ea) / std::sqrt(den) : 0.0;
}

// Levenberg-Marquardt on Cauchy-weighted Sampson residuals, with E = R [t]x,
// |t| = 1, over pairs within `reach` pixels of the starting model.
std::optional<EssentialMatrix> refine_essential(const EssentialMatrix& start, std::span<const PointPair> pairs,
                                                const CameraIntrinsics& K, double scale, double reach) {
  Eigen::JacobiSVD<Mat3> svd(start.matrix(), Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  Mat3 v = svd.matrixV();
  if (u.determinant() < 0.0) u = -u;
  if (v.determinant() < 0.0) v = -v;
  Mat3 w;
  w << 0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0;
  Mat3 rot = u * w * v.transpose();
  Vec3 t = v.col(2);

  std::vector<PointPair> used;
  for (const PointPair& p : pairs) {
    if (std::abs(sampson_residual(start.matrix(), p, K)) < reach) used.push_back(p);
  }
  if (used.size() < 8) return std::nullopt;
  const auto n = static_cast<Eigen::Index>(used.size());

  const auto model = [](const Mat3& r, const Vec3& tr) -> Mat3 { return r * skew(tr); };
  const auto residuals = [&](const Mat3& e) {
    Eigen::VectorXd r(n);
    for (Eigen::Index i = 0; i < n; ++i) r(i) = sampson_residual(e, used[static_cast<std::size_t>(i)], K);
    return r;
  };
  const auto robust_cost = [&](const Eigen::VectorXd& r) {
    double c = 0.0;
    for (Eigen::Index i = 0; i < r.size(); ++i) c += std::log1p((r(i) / scale) * (r(i) / scale));
    return c;
  };
  const auto perturb = [&](const Eigen::Matrix<double, 5, 1>& d, Mat3& r_out, Vec3& t_out) {
    // Tangent basis of the unit sphere at t.
    Vec3 b1 = t.unitOrthogonal();
    Vec3 b2 = t.cross(b1);
    r_out = rot * so3_exp(d.head<3>());
    t_out = (t + d(3) * b1 + d(4) * b2).normalized();
  };

  Eigen::VectorXd r = residuals(model(rot, t));
  double cost = robust_cost(r);
  double lambda = 1e-3;
  for (int iter = 0; iter < 50; ++iter) {
    Eigen::MatrixXd jac(n, 5);
    constexpr double h = 1e-6;
    for (int k = 0; k < 5; ++k) {
      Eigen::Matrix<double, 5, 1> d = Eigen::Matrix<double, 5, 1>::Zero();
      Mat3 rp, rm;
      Vec3 tp, tm;
      d(k) = h;
      perturb(d, rp, tp);
      d(k) = -h;
      perturb(d, rm, tm);
      jac.col(k) = (residuals(model(rp, tp)) - residuals(model(rm, tm))) / (2.0 * h);
    }
    Eigen::VectorXd wts(n);
    for (Eigen::Index i = 0; i < n; ++i) wts(i) = 1.0 / (1.0 + (r(i) / scale) * (r(i) / scale));
    const Eigen::Matrix<double, 5, 5> jtj = jac.transpose() * wts.asDiagonal() * jac;
    const Eigen::Matrix<double, 5, 1> jtr = jac.transpose() * wts.asDiagonal() * r;

    bool improved = false;
    for (int attempt = 0; attempt < 8 && !improved; ++attempt) {
      Eigen::Matrix<double, 5, 5> a = jtj;
      a.diagonal() *= 1.0 + lambda;
      const Eigen::Matrix<double, 5, 1> d = a.ldlt().solve(-jtr);
      if (!d.allFinite()) break;
      Mat3 rp;
      Vec3 tp;
      perturb(d, rp, tp);
      const Eigen::VectorXd rn = residuals(model(rp, tp));
      const double cn = robust_cost(rn);
      if (cn < cost) {
        improved = true;
        rot = rp;
        t = tp;
        r = rn;
        cost = cn;
        lambda = std::max(lambda * 0.3, 1e-9);
        if (d.cwiseAbs().maxCoeff() < 1e-13) return EssentialMatrix::from_motion(rot, t);
      } else {
        lambda *= 10.0;
      }
    }
    if (!improved) break;
  }
  return EssentialMatrix::from_motion(rot, t);
}

// Robust noise scale of the model's inliers, capped at `cap`. On clean data
// this collapses so that stray near-line outliers carry no weight.
double noise_scale(const EssentialMatrix& model, std::span<const PointPair> pairs, const CameraIntrinsics& K,
                   double threshold, double cap) {
  std::vector<double> dist;
  for (const std::size_t i : sampson_inliers(model, pairs, K, threshold)) {
    dist.push_back(sampson_distance(model, pairs[i].a, pairs[i].b, K));
  }
  if (dist.empty()) return cap;
  return std::min(cap, std::max(2.0 * 1.4826 * median(std::move(dist)), 1e-9));
}

// Refits on the inliers that sit inside a noise-adaptive band (MAD of their
// Sampson distances), so that near-threshold outliers do not pull the fit.
void local_refit(EssentialMatrix& model, Score& score, std::span<const PointPair> pairs,
                 const CameraIntrinsics& K, double threshold) {
  std::vector<PointPair> subset;
  for (int round = 0; round < 3; ++round) {
    const std::vector<std::size_t> in = sampson_inliers(model, pairs, K, threshold);
    std::vector<double> dist;
    dist.reserve(in.size());
    for (const std::size_t i : in) dist.push_back(sampson_distance(model, pairs[i].a, pairs[i].b, K));
    const double sigma = 1.4826 * median(dist);
    const double band = std::min(threshold, std::max(3.0 * sigma, 1e-6));
    subset.clear();
    for (std::size_t k = 0; k < in.size(); ++k) {
      if (dist[k] < band) subset.push_back(pairs[in[k]]);
    }
    const auto refit = essential_eight_point(subset);
    if (!refit) break;
    const Score s = score_essential(*refit, pairs, K, threshold);
    if (!s.better_than(score)) break;
    model = *refit;
    score = s;
  }
  const double scale = noise_scale(model, pairs, K, threshold, 0.5 * threshold);
  if (const auto polished = refine_essential(model, pairs, K, scale, 3.0 * threshold)) {
    const Score s = score_essential(*polished, pairs, K, threshold);
    if (s.better_than(score)) {
      model = *polished;
      score = s;
    }
  }
}

}  // namespace

void RansacParams::validate() const {
  if (!(sampson_threshold_px > 0.0)) throw Error(ErrorCode::InvalidArgument, "threshold must be > 0");
  if (!(confidence > 0.0 && confidence < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "confidence must lie in (0, 1)");
  }
  if (max_iterations < 1) throw Error(ErrorCode::InvalidArgument, "max_iterations must be >= 1");
}

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(splitmix64(seed) ^ (index * 0xd1b54a32d192ed03ULL + 1));
}

std::optional<EssentialMatrix> essential_eight_point(std::span<const PointPair> pairs) {
  if (pairs.size() < 8) return std::nullopt;
  std::vector<Vec2> pa;
  std::vector<Vec2> pb;
  pa.reserve(pairs.size());
  pb.reserve(pairs.size());
  for (const PointPair& p : pairs) {
    pa.emplace_back(p.a.x, p.a.y);
    pb.emplace_back(p.b.x, p.b.y);
  }
  const Mat3 ta = normalizing_transform(pa);
  const Mat3 tb = normalizing_transform(pb);

  Eigen::Matrix<double, Eigen::Dynamic, 9> a(pairs.size(), 9);
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const Vec3 xa = ta * Vec3(pa[k].x(), pa[k].y(), 1.0);
    const Vec3 xb = tb * Vec3(pb[k].x(), pb[k].y(), 1.0);
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) a(static_cast<Eigen::Index>(k), i * 3 + j) = xb(i) * xa(j);
    }
  }
  Eigen::JacobiSVD<Eigen::Matrix<double, Eigen::Dynamic, 9>> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (!(sv(0) > 0.0) || sv(7) <= 1e-10 * sv(0)) return std::nullopt;

  const Eigen::Matrix<double, 9, 1> e = svd.matrixV().col(8);
  Mat3 en;
  en << e(0), e(1), e(2), e(3), e(4), e(5), e(6), e(7), e(8);
  const Mat3 m = tb.transpose() * en * ta;
  if (!m.allFinite()) return std::nullopt;
  return EssentialMatrix::project(m);
}

EssentialEstimate estimate_essential_ransac(std::span<const Correspondence> corrs,
                                            const RansacParams& params, const CameraIntrinsics& K) {
  params.validate();
  const std::size_t sample_size = params.solver == MinimalSolver::FivePoint ? 5 : 8;
  if (corrs.size() < sample_size) {
    throw Error(ErrorCode::InsufficientCorrespondences,
                std::to_string(corrs.size()) + " correspondences, need " + std::to_string(sample_size));
  }

  std::vector<PointPair> pairs;
  pairs.reserve(corrs.size());
  for (const Correspondence& c : corrs) pairs.push_back({c.p_a, c.p_b});
  const double threshold = params.sampson_threshold_px;

  std::optional<EssentialMatrix> best;
  Score best_score;
  std::vector<std::size_t> sample;
  std::vector<PointPair> subset;
  int needed = params.max_iterations;
  constexpr int kMaxRefits = 40;
  int refits = 0;
  for (int it = 0; it < needed; ++it) {
    std::mt19937_64 rng(stream_seed(params.seed, static_cast<std::uint64_t>(it)));
    sample_indices(rng, pairs.size(), sample_size, sample);
    subset.clear();
    for (const std::size_t i : sample) subset.push_back(pairs[i]);

    std::vector<EssentialMatrix> hypotheses;
    if (params.solver == MinimalSolver::FivePoint) {
      hypotheses = essential_five_point(subset);
    } else if (auto e = essential_eight_point(subset)) {
      hypotheses.push_back(*e);
    }
    for (const EssentialMatrix& e : hypotheses) {
      Score s = score_essential(e, pairs, K, threshold);
      // Minimal-sample models are noisy, so a good sample can score below a
      // wrong incumbent. Hypotheses near the best get refit on their support.
      const bool near_best = best && 10 * s.count >= 7 * best_score.count;
      EssentialMatrix model = e;
      if (!best || s.better_than(best_score) || (near_best && refits < kMaxRefits)) {
        ++refits;
        local_refit(model, s, pairs, K, threshold);
      }
      if (!best || s.better_than(best_score)) {
        best = model;
        best_score = s;
        needed = adaptive_iterations(best_score.count, pairs.size(), sample_size, params);
      }
    }
  }
  if (!best) throw Error(ErrorCode::AllHypothesesDegenerate, "no minimal sample produced a model");
  if (best_score.count < 8) {
    throw Error(ErrorCode::NoConsensus, "best model has " + std::to_string(best_score.count) + " inliers");
  }

  // The consensus count is flat when the threshold is wide relative to the
  // noise, so the returned model is a least-squares re-estimate over the
  // consensus set; it is kept unless it loses support.
  // The scale is re-estimated after each pass, so on clean data it shrinks
  // until only the exact inliers carry weight.
  EssentialMatrix model = *best;
  double scale = threshold;
  for (int pass = 0; pass < 6; ++pass) {
    const double next = noise_scale(model, pairs, K, threshold, threshold);
    if (pass > 0 && next > 0.5 * scale) break;
    scale = next;
    const auto polished = refine_essential(model, pairs, K, scale, threshold);
    if (!polished) break;
    const Score s = score_essential(*polished, pairs, K, threshold);
    if (20 * s.count < 19 * best_score.count) break;
    model = *polished;
  }
  const std::vector<std::size_t> in = sampson_inliers(model, pairs, K, threshold);
  std::vector<PointPair> inlier_pairs;
  inlier_pairs.reserve(in.size());
  for (const std::size_t i : in) inlier_pairs.push_back(pairs[i]);

  EssentialDecomposition dec = [&] {
    try {
      return decompose_essential(model, inlier_pairs);
    } catch (const Error& err) {
      throw Error(ErrorCode::NoConsensus, err.what());
    }
  }();

  EssentialEstimate out{model, dec.motion, {}};
  for (std::size_t k = 0; k < in.size(); ++k) {
    if (dec.cheiral[k]) out.inliers.push_back(in[k]);
  }
  if (out.inliers.size() < 8) {
    throw Error(ErrorCode::NoConsensus,
                "only " + std::to_string(out.inliers.size()) + " inliers survive the cheiral check");
  }
  return out;
}

std::optional<Pose> pnp_dlt(std::span<const Vec3> world, std::span<const NormalizedPoint> image) {
  const std::size_t n = world.size();
  if (n < 6 || image.size() != n) return std::nullopt;

  Vec3 centroid = Vec3::Zero();
  for (const Vec3& p : world) centroid += p;
  centroid /= static_cast<double>(n);
  double spread = 0.0;
  for (const Vec3& p : world) spread += (p - centroid).norm();
  spread /= static_cast<double>(n);
  if (!(spread > 0.0)) return std::nullopt;
  const double s3 = std::sqrt(3.0) / spread;

  std::vector<Vec2> img;
  img.reserve(n);
  for (const NormalizedPoint& p : image) img.emplace_back(p.x, p.y);
  const Mat3 t2 = normalizing_transform(img);

  Eigen::Matrix<double, Eigen::Dynamic, 12> a(2 * n, 12);
  a.setZero();
  for (std::size_t k = 0; k < n; ++k) {
    const Vec3 xn = s3 * (world[k] - centroid);
    const Eigen::Vector4d x(xn.x(), xn.y(), xn.z(), 1.0);
    const Vec3 u = t2 * Vec3(img[k].x(), img[k].y(), 1.0);
    const auto r0 = static_cast<Eigen::Index>(2 * k);
    a.block<1, 4>(r0, 0) = x.transpose();
    a.block<1, 4>(r0, 8) = -u.x() * x.transpose();
    a.block<1, 4>(r0 + 1, 4) = x.transpose();
    a.block<1, 4>(r0 + 1, 8) = -u.y() * x.transpose();
  }
  Eigen::JacobiSVD<Eigen::Matrix<double, Eigen::Dynamic, 12>> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (!(sv(0) > 0.0) || sv(10) <= 1e-9 * sv(0)) return std::nullopt;

  const Eigen::Matrix<double, 12, 1> p = svd.matrixV().col(11);
  Eigen::Matrix<double, 3, 4> pn;
  pn << p(0), p(1), p(2), p(3), p(4), p(5), p(6), p(7), p(8), p(9), p(10), p(11);
  Eigen::Matrix4d t3 = Eigen::Matrix4d::Identity();
  t3.topLeftCorner<3, 3>() *= s3;
  t3.topRightCorner<3, 1>() = -s3 * centroid;
  Eigen::Matrix<double, 3, 4> proj = t2.inverse() * pn * t3;

  Mat3 m = proj.leftCols<3>();
  if (m.determinant() < 0.0) {
    proj = -proj;
    m = -m;
  }
  Eigen::JacobiSVD<Mat3> msvd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 ms = msvd.singularValues();
  if (!(ms(2) > 1e-9 * ms(0))) return std::nullopt;
  const Mat3 r_wc = msvd.matrixU() * msvd.matrixV().transpose();
  const double scale = ms.mean();
  const Vec3 t_wc = proj.col(3) / scale;
  if (!r_wc.allFinite() || !t_wc.allFinite()) return std::nullopt;
  return Pose{r_wc.transpose(), -r_wc.transpose() * t_wc};
}

double reprojection_error_px(const Pose& camera_pose, const Vec3& world, const PixelPoint& image,
                             const CameraIntrinsics& K) {
  const Vec3 c = camera_pose.to_camera(world);
  if (!(c.z() > 0.0)) return std::numeric_limits<double>::infinity();
  const PixelPoint p = project(c, K);
  return std::hypot(p.u - image.u, p.v - image.v);
}

Pose refine_pnp(const Pose& initial, std::span<const Vec3> world, std::span<const PixelPoint> image,
                const CameraIntrinsics& K, int max_iterations) {
  // World-to-camera parameterization x_c = R X + t with left-multiplied updates.
  Mat3 r = initial.rotation.transpose();
  Vec3 t = -r * initial.position;
  const std::size_t n = world.size();

  auto cost_of = [&](const Mat3& rr, const Vec3& tt) {
    double c = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const Vec3 xc = rr * world[k] + tt;
      if (!(xc.z() > 0.0)) return std::numeric_limits<double>::infinity();
      const double du = K.fx * xc.x() / xc.z() + K.cx - image[k].u;
      const double dv = K.fy * xc.y() / xc.z() + K.cy - image[k].v;
      c += du * du + dv * dv;
    }
    return c;
  };

  double cost = cost_of(r, t);
  double lambda = 1e-3;
  for (int it = 0; it < max_iterations && std::isfinite(cost); ++it) {
    Eigen::Matrix<double, 6, 6> h = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> g = Eigen::Matrix<double, 6, 1>::Zero();
    for (std::size_t k = 0; k < n; ++k) {
      const Vec3 xc = r * world[k] + t;
      const double iz = 1.0 / xc.z();
      Eigen::Matrix<double, 2, 3> dproj;
      dproj << K.fx * iz, 0.0, -K.fx * xc.x() * iz * iz, 0.0, K.fy * iz, -K.fy * xc.y() * iz * iz;
      Eigen::Matrix<double, 3, 6> dxc;
      dxc.leftCols<3>() = -skew(xc);  // the update rotates t as well
      dxc.rightCols<3>() = Mat3::Identity();
      const Eigen::Matrix<double, 2, 6> j = dproj * dxc;
      const Vec2 res(K.fx * xc.x() * iz + K.cx - image[k].u, K.fy * xc.y() * iz + K.cy - image[k].v);
      h += j.transpose() * j;
      g += j.transpose() * res;
    }
    bool accepted = false;
    while (lambda < 1e12) {
      Eigen::Matrix<double, 6, 6> damped = h;
      damped.diagonal() *= (1.0 + lambda);
      const Eigen::Matrix<double, 6, 1> step = damped.ldlt().solve(-g);
      const Vec3 w = step.head<3>();
      const Mat3 dr = Eigen::AngleAxisd(w.norm(), w.norm() > 0 ? Vec3(w.normalized()) : Vec3::UnitX())
                          .toRotationMatrix();
      const Mat3 r_new = dr * r;
      const Vec3 t_new = dr * t + step.tail<3>();
      const double c_new = cost_of(r_new, t_new);
      if (c_new < cost) {
        const bool converged = step.norm() < 1e-12 || (cost - c_new) < 1e-14 * (1.0 + cost);
        r = r_new;
        t = t_new;
        cost = c_new;
        lambda = std::max(lambda * 0.1, 1e-12);
        accepted = true;
        if (converged) it = max_iterations;
        break;
      }
      lambda *= 10.0;
    }
    if (!accepted) break;
  }
  // Re-orthonormalize accumulated rotation drift.
  Eigen::JacobiSVD<Mat3> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  r = svd.matrixU() * svd.matrixV().transpose();
  return Pose{r.transpose(), -r.transpose() * t};
}

PnpEstimate solve_pnp_ransac(std::span<const Vec3> world, std::span<const PixelPoint> image,
                             const CameraIntrinsics& K, const RansacParams& params) {
  params.validate();
  if (world.size() != image.size()) {
    throw Error(ErrorCode::InvalidArgument, "world and image point counts differ");
  }
  constexpr std::size_t kSample = 6;
  if (world.size() < kSample) {
    throw Error(ErrorCode::InsufficientCorrespondences,
                std::to_string(world.size()) + " correspondences, need 6");
  }
  const double threshold = params.sampson_threshold_px;
  const std::size_t n = world.size();
  std::vector<NormalizedPoint> calibrated;
  calibrated.reserve(n);
  for (const PixelPoint& p : image) calibrated.push_back(calibrate(p, K));

  auto score = [&](const Pose& pose) {
    Score s{0, 0.0};
    for (std::size_t k = 0; k < n; ++k) {
      const double e = reprojection_error_px(pose, world[k], image[k], K);
      if (e < threshold) {
        ++s.count;
        s.cost += e * e;
      } else {
        s.cost += threshold * threshold;
      }
    }
    return s;
  };
  auto inliers_of = [&](const Pose& pose) {
    std::vector<std::size_t> in;
    for (std::size_t k = 0; k < n; ++k) {
      if (reprojection_error_px(pose, world[k], image[k], K) < threshold) in.push_back(k);
    }
    return in;
  };

  // Gauss-Newton on the current inliers until the inlier set stops changing.
  auto polish = [&](Pose pose, std::vector<std::size_t>& in, int rounds) {
    in = inliers_of(pose);
    for (int round = 0; round < rounds && in.size() >= kSample; ++round) {
      std::vector<Vec3> iw;
      std::vector<PixelPoint> ii;
      for (const std::size_t k : in) {
        iw.push_back(world[k]);
        ii.push_back(image[k]);
      }
      pose = refine_pnp(pose, iw, ii, K);
      std::vector<std::size_t> next = inliers_of(pose);
      if (next == in) break;
      in = std::move(next);
    }
    return pose;
  };

  std::optional<Pose> best;
  Score best_score;
  std::vector<std::size_t> sample;
  std::vector<Vec3> sw;
  std::vector<NormalizedPoint> si;
  std::vector<std::size_t> scratch;
  int needed = params.max_iterations;
  for (int it = 0; it < needed; ++it) {
    std::mt19937_64 rng(stream_seed(params.seed, static_cast<std::uint64_t>(it)));
    sample_indices(rng, n, kSample, sample);
    sw.clear();
    si.clear();
    for (const std::size_t i : sample) {
      sw.push_back(world[i]);
      si.push_back(calibrated[i]);
    }
    auto pose = pnp_dlt(sw, si);
    if (!pose) continue;
    Score s = score(*pose);
    if (!best || s.better_than(best_score)) {
      if (s.count >= kSample) {
        const Pose refined = polish(*pose, scratch, 5);
        const Score rs = score(refined);
        if (rs.better_than(s)) {
          pose = refined;
          s = rs;
        }
      }
      best = pose;
      best_score = s;
      needed = adaptive_iterations(s.count, n, kSample, params);
    }
  }
  if (!best || best_score.count < kSample) {
    throw Error(ErrorCode::NoConsensus, "no pose hypothesis reached a consensus of six points");
  }

  std::vector<std::size_t> in;
  const Pose pose = polish(*best, in, 10);

  double sum = 0.0;
  for (const std::size_t k : in) sum += reprojection_error_px(pose, world[k], image[k], K);
  const double mean = in.empty() ? std::numeric_limits<double>::infinity()
                                 : sum / static_cast<double>(in.size());
  if (in.size() < kSample || !std::isfinite(mean) || mean >= threshold || !pose.position.allFinite()) {
    throw Error(ErrorCode::Diverged, "refinement ended with " + std::to_string(in.size()) +
                                         " inliers, mean error " + std::to_string(mean) + " px");
  }
  return {pose, std::move(in), mean};
}

}  // namespace verf
