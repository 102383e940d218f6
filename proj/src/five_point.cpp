// Five-point relative pose: the essential matrix is spanned by the four-dimensional
// null space of the epipolar constraints, and the cubic trace and determinant
// constraints are reduced to a degree-10 polynomial in one coordinate.

#include <array>
#include <cmath>

#include <Eigen/Dense>

#include "verf/robust.hpp"

namespace verf {

namespace {

constexpr int kMonomials = 20;

// Monomials of degree <= 3 in (x, y, z). The first ten are eliminated, the last
// ten form the basis the z-polynomials are read from.
constexpr std::array<std::array<int, 3>, kMonomials> kExponents = {{
    {3, 0, 0}, {0, 3, 0}, {2, 1, 0}, {1, 2, 0}, {2, 0, 1}, {2, 0, 0}, {0, 2, 1},
    {0, 2, 0}, {1, 1, 1}, {1, 1, 0}, {1, 0, 2}, {1, 0, 1}, {1, 0, 0}, {0, 1, 2},
    {0, 1, 1}, {0, 1, 0}, {0, 0, 3}, {0, 0, 2}, {0, 0, 1}, {0, 0, 0},
}};

int monomial_index(int a, int b, int c) {
  for (int i = 0; i < kMonomials; ++i) {
    if (kExponents[i][0] == a && kExponents[i][1] == b && kExponents[i][2] == c) return i;
  }
  return -1;
}

using Poly = std::array<double, kMonomials>;

Poly multiply(const Poly& p, const Poly& q) {
  Poly out{};
  for (int i = 0; i < kMonomials; ++i) {
    if (p[i] == 0.0) continue;
    for (int j = 0; j < kMonomials; ++j) {
      if (q[j] == 0.0) continue;
      const int idx = monomial_index(kExponents[i][0] + kExponents[j][0],
                                     kExponents[i][1] + kExponents[j][1],
                                     kExponents[i][2] + kExponents[j][2]);
      // Products here never exceed degree three.
      if (idx >= 0) out[idx] += p[i] * q[j];
    }
  }
  return out;
}

Poly add(const Poly& p, const Poly& q, double scale = 1.0) {
  Poly out;
  for (int i = 0; i < kMonomials; ++i) out[i] = p[i] + scale * q[i];
  return out;
}

// Univariate polynomial in z, ascending coefficients.
using ZPoly = std::vector<double>;

ZPoly zmul(const ZPoly& a, const ZPoly& b) {
  ZPoly out(a.size() + b.size() - 1, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) out[i + j] += a[i] * b[j];
  }
  return out;
}

ZPoly zsub(const ZPoly& a, const ZPoly& b) {
  ZPoly out(std::max(a.size(), b.size()), 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] += a[i];
  for (std::size_t i = 0; i < b.size(); ++i) out[i] -= b[i];
  return out;
}

ZPoly zadd(const ZPoly& a, const ZPoly& b) {
  ZPoly out(std::max(a.size(), b.size()), 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] += a[i];
  for (std::size_t i = 0; i < b.size(); ++i) out[i] += b[i];
  return out;
}

ZPoly shift_z(const ZPoly& a) {
  ZPoly out(a.size() + 1, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) out[i + 1] = a[i];
  return out;
}

double zeval(const ZPoly& p, double z) {
  double v = 0.0;
  for (std::size_t i = p.size(); i-- > 0;) v = v * z + p[i];
  return v;
}

struct ZRow {
  ZPoly x, y, one;
};

std::vector<double> real_roots(ZPoly p) {
  while (!p.empty() && std::abs(p.back()) <= 1e-14 * std::abs(p.front()) + 1e-300) p.pop_back();
  const int degree = static_cast<int>(p.size()) - 1;
  if (degree < 1) return {};
  Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(degree, degree);
  for (int i = 0; i < degree; ++i) companion(0, i) = -p[degree - 1 - i] / p[degree];
  for (int i = 1; i < degree; ++i) companion(i, i - 1) = 1.0;
  Eigen::EigenSolver<Eigen::MatrixXd> es(companion, false);
  if (es.info() != Eigen::Success) return {};

  ZPoly dp(p.size() - 1);
  for (std::size_t i = 1; i < p.size(); ++i) dp[i - 1] = static_cast<double>(i) * p[i];

  std::vector<double> roots;
  for (int i = 0; i < degree; ++i) {
    const std::complex<double> r = es.eigenvalues()[i];
    if (std::abs(r.imag()) > 1e-6 * (1.0 + std::abs(r.real()))) continue;
    double z = r.real();
    for (int it = 0; it < 3; ++it) {
      const double d = zeval(dp, z);
      if (d == 0.0) break;
      z -= zeval(p, z) / d;
    }
    roots.push_back(z);
  }
  return roots;
}

}  // namespace

std::vector<EssentialMatrix> essential_five_point(std::span<const PointPair> pairs) {
  if (pairs.size() != 5) return {};

  Eigen::Matrix<double, 5, 9> a;
  for (int k = 0; k < 5; ++k) {
    const Vec3 pa = pairs[k].a.homogeneous();
    const Vec3 pb = pairs[k].b.homogeneous();
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) a(k, i * 3 + j) = pb(i) * pa(j);
    }
  }
  Eigen::JacobiSVD<Eigen::Matrix<double, 5, 9>> svd(a, Eigen::ComputeFullV);
  const Eigen::Matrix<double, 9, 9> v = svd.matrixV();

  // E = x X + y Y + z Z + W with the basis read from the null space.
  std::array<Poly, 9> e{};
  for (int i = 0; i < 9; ++i) {
    e[i] = Poly{};
    e[i][monomial_index(1, 0, 0)] = v(i, 5);
    e[i][monomial_index(0, 1, 0)] = v(i, 6);
    e[i][monomial_index(0, 0, 1)] = v(i, 7);
    e[i][monomial_index(0, 0, 0)] = v(i, 8);
  }
  auto at = [&](int r, int c) -> const Poly& { return e[r * 3 + c]; };

  Eigen::Matrix<double, 10, kMonomials> constraints;
  {
    const Poly m0 = add(multiply(at(1, 1), at(2, 2)), multiply(at(1, 2), at(2, 1)), -1.0);
    const Poly m1 = add(multiply(at(1, 0), at(2, 2)), multiply(at(1, 2), at(2, 0)), -1.0);
    const Poly m2 = add(multiply(at(1, 0), at(2, 1)), multiply(at(1, 1), at(2, 0)), -1.0);
    Poly det = multiply(at(0, 0), m0);
    det = add(det, multiply(at(0, 1), m1), -1.0);
    det = add(det, multiply(at(0, 2), m2));
    for (int i = 0; i < kMonomials; ++i) constraints(0, i) = det[i];
  }
  {
    std::array<Poly, 9> eet{};
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        Poly s{};
        for (int k = 0; k < 3; ++k) s = add(s, multiply(at(i, k), at(j, k)));
        eet[i * 3 + j] = s;
      }
    }
    const Poly trace = add(add(eet[0], eet[4]), eet[8]);
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        Poly s{};
        for (int k = 0; k < 3; ++k) s = add(s, multiply(eet[i * 3 + k], at(k, j)), 2.0);
        s = add(s, multiply(trace, at(i, j)), -1.0);
        for (int m = 0; m < kMonomials; ++m) constraints(1 + i * 3 + j, m) = s[m];
      }
    }
  }

  const Eigen::Matrix<double, 10, 10> lead = constraints.leftCols<10>();
  Eigen::FullPivLU<Eigen::Matrix<double, 10, 10>> lu(lead);
  if (!lu.isInvertible()) return {};
  const Eigen::Matrix<double, 10, 10> b = lu.solve(constraints.rightCols<10>());

  // Basis columns: xz^2, xz, x, yz^2, yz, y, z^3, z^2, z, 1.
  auto row = [&](int r) {
    return ZRow{{b(r, 2), b(r, 1), b(r, 0)}, {b(r, 5), b(r, 4), b(r, 3)},
                {b(r, 9), b(r, 8), b(r, 7), b(r, 6)}};
  };
  // Rows 4..9 lead with x^2 z, x^2, y^2 z, y^2, xyz, xy; pairing them cancels the
  // leading monomial and leaves polynomials in z times (x, y, 1).
  auto reduce = [&](int upper, int lower) {
    const ZRow u = row(upper);
    const ZRow l = row(lower);
    return ZRow{zsub(u.x, shift_z(l.x)), zsub(u.y, shift_z(l.y)), zsub(u.one, shift_z(l.one))};
  };
  const std::array<ZRow, 3> n = {reduce(4, 5), reduce(6, 7), reduce(8, 9)};

  ZPoly det = zmul(n[0].x, zsub(zmul(n[1].y, n[2].one), zmul(n[1].one, n[2].y)));
  det = zsub(det, zmul(n[0].y, zsub(zmul(n[1].x, n[2].one), zmul(n[1].one, n[2].x))));
  det = zadd(det, zmul(n[0].one, zsub(zmul(n[1].x, n[2].y), zmul(n[1].y, n[2].x))));

  std::vector<EssentialMatrix> out;
  for (const double z : real_roots(det)) {
    Mat3 m;
    for (int r = 0; r < 3; ++r) {
      m(r, 0) = zeval(n[r].x, z);
      m(r, 1) = zeval(n[r].y, z);
      m(r, 2) = zeval(n[r].one, z);
    }
    Vec3 best = Vec3::Zero();
    for (int i = 0; i < 3; ++i) {
      const Vec3 c = m.row(i).transpose().cross(m.row((i + 1) % 3).transpose());
      if (c.norm() > best.norm()) best = c;
    }
    if (std::abs(best.z()) < 1e-12 * best.norm() || best.norm() == 0.0) continue;
    const double x = best.x() / best.z();
    const double y = best.y() / best.z();
    Mat3 e_mat;
    for (int i = 0; i < 9; ++i) e_mat(i / 3, i % 3) = x * v(i, 5) + y * v(i, 6) + z * v(i, 7) + v(i, 8);
    if (!e_mat.allFinite()) continue;
    out.push_back(EssentialMatrix::project(e_mat));
  }
  return out;
}

}  // namespace verf
