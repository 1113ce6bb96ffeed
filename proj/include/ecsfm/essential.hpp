// Copyright 2026 The ecsfm authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <vector>

#include "ecsfm/so3.hpp"

namespace ecsfm {

// Minimal and linear solvers for two-view geometry on normalized image
// coordinates. Conventions: the relative pose maps frame-a points into
// frame b, X_b = R X_a + t, and the essential matrix E = [t]x R satisfies
// x_b^T E x_a = 0.

namespace internal {

// Polynomial coefficients over (x, y, z) with monomial orders
//   degree 1: [x, y, z, 1]
//   degree 2: [x^2, xy, y^2, xz, yz, z^2, x, y, z, 1]
//   degree 3: [x^3, x^2y, xy^2, y^3, x^2z, xyz, y^2z, xz^2, yz^2, z^3,
//              x^2, xy, y^2, xz, yz, z^2, x, y, z, 1]
using Poly1 = Eigen::Matrix<double, 4, 1>;
using Poly2 = Eigen::Matrix<double, 10, 1>;
using Poly3 = Eigen::Matrix<double, 20, 1>;

inline Poly2 PolyMul11(const Poly1& a, const Poly1& b) {
  Poly2 r;
  r << a(0) * b(0), a(0) * b(1) + a(1) * b(0), a(1) * b(1),
      a(0) * b(2) + a(2) * b(0), a(1) * b(2) + a(2) * b(1), a(2) * b(2),
      a(0) * b(3) + a(3) * b(0), a(1) * b(3) + a(3) * b(1),
      a(2) * b(3) + a(3) * b(2), a(3) * b(3);
  return r;
}

inline Poly3 PolyMul21(const Poly2& a, const Poly1& b) {
  // Target index of (degree-2 monomial i) * (x, y, z, 1).
  static constexpr int kTable[10][4] = {
      {0, 1, 4, 10},   {1, 2, 5, 11},   {2, 3, 6, 12},   {4, 5, 7, 13},
      {5, 6, 8, 14},   {7, 8, 9, 15},   {10, 11, 13, 16}, {11, 12, 14, 17},
      {13, 14, 15, 18}, {16, 17, 18, 19}};
  Poly3 r = Poly3::Zero();
  for (int i = 0; i < 10; ++i) {
    for (int k = 0; k < 4; ++k) {
      r(kTable[i][k]) += a(i) * b(k);
    }
  }
  return r;
}

}  // namespace internal

// Five-point minimal solver (nullspace + Groebner action matrix). Returns up
// to ten essential matrix candidates for exactly five correspondences given
// as normalized coordinates (x_a in the first camera, x_b in the second).
inline std::vector<Eigen::Matrix3d> SolveEssentialFivePoint(
    const std::vector<Eigen::Vector3d>& x_a,
    const std::vector<Eigen::Vector3d>& x_b) {
  using internal::Poly1;
  using internal::Poly2;
  using internal::Poly3;

  Eigen::Matrix<double, 5, 9> constraints;
  for (int k = 0; k < 5; ++k) {
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        constraints(k, 3 * i + j) = x_b[k](i) * x_a[k](j);
      }
    }
  }

  const Eigen::JacobiSVD<Eigen::Matrix<double, 5, 9>> svd(
      constraints, Eigen::ComputeFullV);
  const Eigen::Matrix<double, 9, 4> null_space =
      svd.matrixV().rightCols<4>();

  // E = x * B0 + y * B1 + z * B2 + B3; each entry is a degree-1 polynomial.
  Poly1 e_poly[3][3];
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      for (int c = 0; c < 4; ++c) {
        e_poly[i][j](c) = null_space(3 * i + j, c);
      }
    }
  }

  Eigen::Matrix<double, 10, 20> system;
  // det(E) = 0.
  {
    const Poly2 m00 = internal::PolyMul11(e_poly[1][1], e_poly[2][2]) -
                      internal::PolyMul11(e_poly[1][2], e_poly[2][1]);
    const Poly2 m01 = internal::PolyMul11(e_poly[1][0], e_poly[2][2]) -
                      internal::PolyMul11(e_poly[1][2], e_poly[2][0]);
    const Poly2 m02 = internal::PolyMul11(e_poly[1][0], e_poly[2][1]) -
                      internal::PolyMul11(e_poly[1][1], e_poly[2][0]);
    system.row(0) = (internal::PolyMul21(m00, e_poly[0][0]) -
                     internal::PolyMul21(m01, e_poly[0][1]) +
                     internal::PolyMul21(m02, e_poly[0][2]))
                        .transpose();
  }
  // E E^T E - 1/2 tr(E E^T) E = 0, nine entries.
  {
    Poly2 eet[3][3];
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        eet[i][j] = internal::PolyMul11(e_poly[i][0], e_poly[j][0]) +
                    internal::PolyMul11(e_poly[i][1], e_poly[j][1]) +
                    internal::PolyMul11(e_poly[i][2], e_poly[j][2]);
      }
    }
    const Poly2 half_trace = 0.5 * (eet[0][0] + eet[1][1] + eet[2][2]);
    for (int i = 0; i < 3; ++i) eet[i][i] -= half_trace;
    int row = 1;
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        system.row(row++) = (internal::PolyMul21(eet[i][0], e_poly[0][j]) +
                             internal::PolyMul21(eet[i][1], e_poly[1][j]) +
                             internal::PolyMul21(eet[i][2], e_poly[2][j]))
                                .transpose();
      }
    }
  }

  // Eliminate the ten degree-3 monomials. Each reduced equation reads
  // leading_monomial_r + sum_k reduced(r, k) * basis_k = 0 over the basis
  // [x^2, xy, y^2, xz, yz, z^2, x, y, z, 1].
  const Eigen::Matrix<double, 10, 10> lhs = system.leftCols<10>();
  const Eigen::FullPivLU<Eigen::Matrix<double, 10, 10>> lu(lhs);
  if (!lu.isInvertible()) return {};
  const Eigen::Matrix<double, 10, 10> reduced =
      lu.solve(system.rightCols<10>());

  // Multiplication-by-x action matrix on the quotient basis. Column i holds
  // x * basis_i expressed in the basis; products that leave the basis are
  // rewritten with the reduced equations.
  Eigen::Matrix<double, 10, 10> action = Eigen::Matrix<double, 10, 10>::Zero();
  static constexpr int kLeadingRowForBasis[6] = {0, 1, 2, 4, 5, 7};
  for (int i = 0; i < 6; ++i) {
    action.col(i) = -reduced.row(kLeadingRowForBasis[i]).transpose();
  }
  action(0, 6) = 1.0;  // x * x   = x^2
  action(1, 7) = 1.0;  // x * y   = xy
  action(3, 8) = 1.0;  // x * z   = xz
  action(6, 9) = 1.0;  // x * 1   = x

  const Eigen::EigenSolver<Eigen::Matrix<double, 10, 10>> eigen(
      action.transpose(), /*computeEigenvectors=*/true);

  std::vector<Eigen::Matrix3d> solutions;
  for (int s = 0; s < 10; ++s) {
    if (std::abs(eigen.eigenvalues()(s).imag()) > 1e-10) continue;
    const Eigen::VectorXcd vec = eigen.eigenvectors().col(s);
    const std::complex<double> w = vec(9);
    if (std::abs(w) < 1e-12) continue;
    const double x = (vec(6) / w).real();
    const double y = (vec(7) / w).real();
    const double z = (vec(8) / w).real();
    const Eigen::Matrix<double, 9, 1> e_vec =
        x * null_space.col(0) + y * null_space.col(1) + z * null_space.col(2) +
        null_space.col(3);
    Eigen::Matrix3d e;
    e << e_vec(0), e_vec(1), e_vec(2), e_vec(3), e_vec(4), e_vec(5), e_vec(6),
        e_vec(7), e_vec(8);
    const double norm = e.norm();
    if (norm < 1e-12) continue;
    solutions.push_back(e / norm);
  }
  return solutions;
}

// Normalized eight-point fundamental matrix with rank-2 enforcement. Points
// are pixel coordinates lifted to homogeneous 3-vectors.
inline bool SolveFundamentalEightPoint(
    const std::vector<Eigen::Vector2d>& p_a,
    const std::vector<Eigen::Vector2d>& p_b, Eigen::Matrix3d* fundamental) {
  const size_t n = p_a.size();
  if (n < 8) return false;

  auto normalize = [](const std::vector<Eigen::Vector2d>& pts,
                      Eigen::Matrix3d* transform) {
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    for (const auto& p : pts) mean += p;
    mean /= static_cast<double>(pts.size());
    double scale = 0.0;
    for (const auto& p : pts) scale += (p - mean).norm();
    scale = pts.size() * std::sqrt(2.0) / std::max(scale, 1e-12);
    *transform = Eigen::Matrix3d::Identity();
    (*transform)(0, 0) = scale;
    (*transform)(1, 1) = scale;
    (*transform)(0, 2) = -scale * mean.x();
    (*transform)(1, 2) = -scale * mean.y();
  };

  Eigen::Matrix3d t_a, t_b;
  normalize(p_a, &t_a);
  normalize(p_b, &t_b);

  Eigen::MatrixXd rows(n, 9);
  for (size_t k = 0; k < n; ++k) {
    const Eigen::Vector3d a = t_a * p_a[k].homogeneous();
    const Eigen::Vector3d b = t_b * p_b[k].homogeneous();
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        rows(k, 3 * i + j) = b(i) * a(j);
      }
    }
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(rows, Eigen::ComputeFullV);
  const Eigen::Matrix<double, 9, 1> f_vec = svd.matrixV().col(8);
  Eigen::Matrix3d f;
  f << f_vec(0), f_vec(1), f_vec(2), f_vec(3), f_vec(4), f_vec(5), f_vec(6),
      f_vec(7), f_vec(8);

  Eigen::JacobiSVD<Eigen::Matrix3d> rank2(
      f, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d singular = rank2.singularValues();
  singular(2) = 0.0;
  f = rank2.matrixU() * singular.asDiagonal() * rank2.matrixV().transpose();

  *fundamental = t_b.transpose() * f * t_a;
  const double norm = fundamental->norm();
  if (norm < 1e-12) return false;
  *fundamental /= norm;
  return true;
}

// Homography from >= 4 pixel correspondences via normalized DLT.
inline bool SolveHomographyDLT(const std::vector<Eigen::Vector2d>& p_a,
                               const std::vector<Eigen::Vector2d>& p_b,
                               Eigen::Matrix3d* homography) {
  const size_t n = p_a.size();
  if (n < 4) return false;
  Eigen::MatrixXd rows(2 * n, 9);
  for (size_t k = 0; k < n; ++k) {
    const double u = p_a[k].x(), v = p_a[k].y();
    const double up = p_b[k].x(), vp = p_b[k].y();
    rows.row(2 * k) << -u, -v, -1, 0, 0, 0, u * up, v * up, up;
    rows.row(2 * k + 1) << 0, 0, 0, -u, -v, -1, u * vp, v * vp, vp;
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(rows, Eigen::ComputeFullV);
  const Eigen::Matrix<double, 9, 1> h_vec = svd.matrixV().col(8);
  Eigen::Matrix3d h;
  h << h_vec(0), h_vec(1), h_vec(2), h_vec(3), h_vec(4), h_vec(5), h_vec(6),
      h_vec(7), h_vec(8);
  if (std::abs(h(2, 2)) < 1e-12 && h.norm() < 1e-12) return false;
  *homography = h;
  return true;
}

// Sampson distance of a pixel correspondence under F (or K^-T E K^-1).
inline double SampsonError(const Eigen::Matrix3d& f, const Eigen::Vector2d& a,
                           const Eigen::Vector2d& b) {
  const Eigen::Vector3d xa = a.homogeneous();
  const Eigen::Vector3d xb = b.homogeneous();
  const Eigen::Vector3d fa = f * xa;
  const Eigen::Vector3d ftb = f.transpose() * xb;
  const double c = xb.dot(fa);
  const double denom =
      fa(0) * fa(0) + fa(1) * fa(1) + ftb(0) * ftb(0) + ftb(1) * ftb(1);
  if (denom < 1e-18) return std::numeric_limits<double>::max();
  return c * c / denom;
}

// Depths of the midpoint triangulation of a normalized correspondence under
// a relative pose X_b = R X_a + t. Returns false when the rays are parallel.
inline bool TriangulateDepths(const Eigen::Matrix3d& rotation,
                              const Eigen::Vector3d& translation,
                              const Eigen::Vector3d& x_a,
                              const Eigen::Vector3d& x_b, double* depth_a,
                              double* depth_b) {
  // Rays in frame a: origin 0 direction da, and origin c direction db.
  const Eigen::Vector3d da = x_a.normalized();
  const Eigen::Vector3d db = rotation.transpose() * x_b.normalized();
  const Eigen::Vector3d c = -rotation.transpose() * translation;
  Eigen::Matrix2d normal;
  normal << da.dot(da), -da.dot(db), da.dot(db), -db.dot(db);
  const Eigen::Vector2d rhs(da.dot(c), db.dot(c));
  const double det = normal.determinant();
  if (std::abs(det) < 1e-14) return false;
  const Eigen::Vector2d depths = normal.inverse() * rhs;
  *depth_a = depths(0);
  *depth_b = depths(1);
  return true;
}

// Picks the (R, t) with maximal positive-depth support among the four
// essential matrix decompositions. Returns the support count.
inline int DecomposeEssential(const Eigen::Matrix3d& essential,
                              const std::vector<Eigen::Vector3d>& x_a,
                              const std::vector<Eigen::Vector3d>& x_b,
                              Eigen::Matrix3d* rotation,
                              Eigen::Vector3d* translation) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(
      essential, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d u = svd.matrixU();
  Eigen::Matrix3d v = svd.matrixV();
  if (u.determinant() < 0.0) u *= -1.0;
  if (v.determinant() < 0.0) v *= -1.0;
  Eigen::Matrix3d w;
  w << 0, -1, 0, 1, 0, 0, 0, 0, 1;

  const Eigen::Matrix3d r1 = u * w * v.transpose();
  const Eigen::Matrix3d r2 = u * w.transpose() * v.transpose();
  const Eigen::Vector3d t = u.col(2);

  int best_support = -1;
  for (const auto& r : {r1, r2}) {
    for (const double sign : {1.0, -1.0}) {
      const Eigen::Vector3d ts = sign * t;
      int support = 0;
      for (size_t k = 0; k < x_a.size(); ++k) {
        double depth_a, depth_b;
        if (!TriangulateDepths(r, ts, x_a[k], x_b[k], &depth_a, &depth_b)) {
          continue;
        }
        if (depth_a > 0.0 && depth_b > 0.0) ++support;
      }
      if (support > best_support) {
        best_support = support;
        *rotation = r;
        *translation = ts;
      }
    }
  }
  return best_support;
}

}  // namespace ecsfm
