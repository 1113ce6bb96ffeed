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
#include <array>
#include <vector>

#include "ecsfm/bundle_adjust.hpp"
#include "ecsfm/config.hpp"
#include "ecsfm/random.hpp"
#include "ecsfm/two_view.hpp"
#include "ecsfm/types.hpp"

namespace ecsfm {

namespace internal {

// Real roots of c0 + c1 x + c2 x^2 + c3 x^3 + c4 x^4 via the companion
// matrix of the normalized polynomial.
inline std::vector<double> SolveQuartic(const std::array<double, 5>& coeffs) {
  std::vector<double> roots;
  int degree = 4;
  while (degree > 0 && std::abs(coeffs[degree]) < 1e-14) --degree;
  if (degree == 0) return roots;
  Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(degree, degree);
  for (int i = 0; i < degree; ++i) {
    companion(0, i) = -coeffs[degree - 1 - i] / coeffs[degree];
    if (i + 1 < degree) companion(i + 1, i) = 1.0;
  }
  const Eigen::EigenSolver<Eigen::MatrixXd> eigen(companion, false);
  for (int i = 0; i < degree; ++i) {
    const auto root = eigen.eigenvalues()(i);
    if (std::abs(root.imag()) < 1e-8 * std::max(1.0, std::abs(root.real()))) {
      roots.push_back(root.real());
    }
  }
  return roots;
}

// Rigid transform (no scale) mapping world points onto camera-frame points:
// Q = R (P - C). Exact for three non-collinear correspondences.
inline bool AbsoluteOrientation(const std::array<Eigen::Vector3d, 3>& world,
                                const std::array<Eigen::Vector3d, 3>& cam,
                                Pose* pose) {
  const Eigen::Vector3d mean_w = (world[0] + world[1] + world[2]) / 3.0;
  const Eigen::Vector3d mean_c = (cam[0] + cam[1] + cam[2]) / 3.0;
  Eigen::Matrix3d covariance = Eigen::Matrix3d::Zero();
  for (int i = 0; i < 3; ++i) {
    covariance += (cam[i] - mean_c) * (world[i] - mean_w).transpose();
  }
  const Eigen::JacobiSVD<Eigen::Matrix3d> svd(
      covariance, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d sign = Eigen::Vector3d::Ones();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) {
    sign(2) = -1.0;
  }
  pose->rotation = svd.matrixU() * sign.asDiagonal() * svd.matrixV().transpose();
  pose->center = mean_w - pose->rotation.transpose() * mean_c;
  return pose->rotation.allFinite();
}

}  // namespace internal

// Grunert's three-point resection: distances from the quartic resultant of
// the two law-of-cosines ratio equations, then absolute orientation. Up to
// four pose candidates; `bearings` are unit vectors in the camera frame.
inline std::vector<Pose> SolveP3P(const std::array<Eigen::Vector3d, 3>& world,
                                  const std::array<Eigen::Vector3d, 3>& bearings) {
  const double a2 = (world[1] - world[2]).squaredNorm();
  const double b2 = (world[0] - world[2]).squaredNorm();
  const double c2 = (world[0] - world[1]).squaredNorm();
  if (a2 < 1e-18 || b2 < 1e-18 || c2 < 1e-18) return {};
  const double cos_alpha = bearings[1].dot(bearings[2]);
  const double cos_beta = bearings[0].dot(bearings[2]);
  const double cos_gamma = bearings[0].dot(bearings[1]);

  const double m = a2 / b2;
  const double q = c2 / b2;

  // With u = s2/s1, v = s3/s1:
  //   u^2 + p1(v) u + q1(v) = 0,  p1 = -2 cos_alpha v,
  //   u^2 + p2    u + q2(v) = 0,  p2 = -2 cos_gamma,
  // eliminating u gives (q2-q1)^2 + p2 (q2-q1)(p1-p2) + q2 (p1-p2)^2 = 0.
  const double q1_2 = 1.0 - m, q1_1 = 2.0 * m * cos_beta, q1_0 = -m;
  const double q2_2 = -q, q2_1 = 2.0 * q * cos_beta, q2_0 = 1.0 - q;

  const double d2 = q2_2 - q1_2, d1 = q2_1 - q1_1, d0 = q2_0 - q1_0;  // q2-q1
  const double p1_1 = -2.0 * cos_alpha;                               // v term
  const double e1 = p1_1, e0 = 2.0 * cos_gamma;                       // p1-p2

  std::array<double, 5> quartic{};
  // (q2-q1)^2
  quartic[0] += d0 * d0;
  quartic[1] += 2.0 * d0 * d1;
  quartic[2] += d1 * d1 + 2.0 * d0 * d2;
  quartic[3] += 2.0 * d1 * d2;
  quartic[4] += d2 * d2;
  // p2 (q2-q1)(p1-p2)
  const double p2 = -2.0 * cos_gamma;
  quartic[0] += p2 * d0 * e0;
  quartic[1] += p2 * (d0 * e1 + d1 * e0);
  quartic[2] += p2 * (d1 * e1 + d2 * e0);
  quartic[3] += p2 * d2 * e1;
  // q2 (p1-p2)^2
  const double f0 = e0 * e0, f1 = 2.0 * e0 * e1, f2 = e1 * e1;
  quartic[0] += q2_0 * f0;
  quartic[1] += q2_0 * f1 + q2_1 * f0;
  quartic[2] += q2_0 * f2 + q2_1 * f1 + q2_2 * f0;
  quartic[3] += q2_1 * f2 + q2_2 * f1;
  quartic[4] += q2_2 * f2;

  std::vector<Pose> poses;
  for (const double v : internal::SolveQuartic(quartic)) {
    if (!(v > 0.0)) continue;
    const double denom_u = p1_1 * v - p2 * 1.0;  // p1(v) - p2
    double u;
    if (std::abs(denom_u) > 1e-12) {
      u = -((q2_2 * v * v + q2_1 * v + q2_0) -
            (q1_2 * v * v + q1_1 * v + q1_0)) /
          denom_u;
    } else {
      continue;
    }
    if (!(u > 0.0)) continue;
    const double s1_arg = 1.0 + v * v - 2.0 * v * cos_beta;
    if (s1_arg <= 1e-14) continue;
    const double s1 = std::sqrt(b2 / s1_arg);
    const double s2 = u * s1;
    const double s3 = v * s1;
    const std::array<Eigen::Vector3d, 3> cam{
        s1 * bearings[0], s2 * bearings[1], s3 * bearings[2]};
    Pose pose;
    if (internal::AbsoluteOrientation(world, cam, &pose)) {
      poses.push_back(pose);
    }
  }
  return poses;
}

struct PnPResult {
  bool success = false;
  Pose pose;
  std::vector<uint8_t> inliers;
  int inlier_count = 0;
};

// P3P inside RANSAC followed by robust pose-only refinement on the inliers.
inline PnPResult EstimatePnP(const std::vector<Eigen::Vector3d>& world,
                             const std::vector<Eigen::Vector2d>& pixels,
                             const CameraIntrinsics& camera,
                             const GeometryConfig& config, int min_inliers,
                             uint64_t seed,
                             const SolverOptions& refine_options = {}) {
  PnPResult result;
  const int n = static_cast<int>(world.size());
  if (n < min_inliers) return result;

  std::vector<Eigen::Vector3d> bearings(n);
  for (int k = 0; k < n; ++k) {
    bearings[k] = camera.Normalize(pixels[k]).normalized();
  }

  auto count_support = [&](const Pose& pose, std::vector<uint8_t>* mask) {
    const double thr2 = config.tau_px * config.tau_px;
    int support = 0;
    for (int k = 0; k < n; ++k) {
      const Eigen::Vector3d cam = pose.WorldToCamera(world[k]);
      bool good = false;
      if (cam.z() > 1e-9) {
        const Eigen::Vector2d projected = camera.Denormalize(cam);
        good = (projected - pixels[k]).squaredNorm() < thr2;
      }
      if (mask != nullptr) (*mask)[k] = good ? 1 : 0;
      support += good ? 1 : 0;
    }
    return support;
  };

  auto rng = MakeRng(seed);
  std::vector<int> sample;
  Pose best_pose;
  int best_support = 0;
  int max_iterations = config.ransac_max_iterations;
  for (int iter = 0; iter < max_iterations; ++iter) {
    internal::SampleDistinct(rng, n, 3, &sample);
    const std::array<Eigen::Vector3d, 3> sample_world{
        world[sample[0]], world[sample[1]], world[sample[2]]};
    const std::array<Eigen::Vector3d, 3> sample_bearings{
        bearings[sample[0]], bearings[sample[1]], bearings[sample[2]]};
    for (const Pose& pose : SolveP3P(sample_world, sample_bearings)) {
      const int support = count_support(pose, nullptr);
      if (support > best_support) {
        best_support = support;
        best_pose = pose;
        max_iterations = std::min(
            max_iterations,
            iter + 1 + internal::RansacIterationsFor(
                           double(support) / n, 3, config.ransac_confidence,
                           config.ransac_max_iterations));
      }
    }
  }

  if (best_support < min_inliers) return result;

  // Pose-only nonlinear refinement against the inlier set.
  std::vector<uint8_t> mask(n, 0);
  count_support(best_pose, &mask);
  BAProblem refine;
  const int pose_index = refine.AddPose(best_pose, camera, false);
  for (int k = 0; k < n; ++k) {
    if (!mask[k]) continue;
    const int point_index = refine.AddPoint(world[k], /*constant=*/true);
    refine.AddObservation(pose_index, point_index, pixels[k]);
  }
  SolverOptions options = refine_options;
  options.loss_scale = 2.0 * config.tau_px;
  BundleAdjust(refine, options);
  const Pose refined = refine.GetPose(pose_index);

  result.inliers.assign(n, 0);
  result.inlier_count = count_support(refined, &result.inliers);
  if (result.inlier_count < min_inliers) return result;
  result.pose = refined;
  result.success = true;
  return result;
}

// Multi-view DLT over normalized observations; rows x_hat x (P X) = 0.
inline std::optional<Eigen::Vector3d> TriangulateMultiView(
    const std::vector<const Pose*>& poses,
    const std::vector<const CameraIntrinsics*>& cameras,
    const std::vector<Eigen::Vector2d>& pixels) {
  const size_t n = poses.size();
  if (n < 2) return std::nullopt;
  Eigen::MatrixXd rows(2 * n, 4);
  for (size_t i = 0; i < n; ++i) {
    Eigen::Matrix<double, 3, 4> p;
    p.leftCols<3>() = poses[i]->rotation;
    p.col(3) = -poses[i]->rotation * poses[i]->center;
    const Eigen::Vector3d x = cameras[i]->Normalize(pixels[i]);
    rows.row(2 * i) = x.x() * p.row(2) - p.row(0);
    rows.row(2 * i + 1) = x.y() * p.row(2) - p.row(1);
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(rows, Eigen::ComputeFullV);
  const Eigen::Vector4d h = svd.matrixV().col(3);
  if (std::abs(h(3)) < 1e-14) return std::nullopt;
  return h.head<3>() / h(3);
}

struct TrackTriangulation {
  bool ok = false;
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
  std::vector<uint8_t> support;  // observations passing all gates
};

struct TrackObservation {
  const Pose* pose;
  const CameraIntrinsics* camera;
  Eigen::Vector2d pixel;
};

// Robust track triangulation: the best two-view hypothesis over all
// observation pairs seeds a DLT refit on its consensus set. The final point
// must be in front of every supporting camera, reproject within tau_px in
// each, and subtend at least `min_angle_rad` between some pair of rays.
inline TrackTriangulation TriangulateTrackRobust(
    const std::vector<TrackObservation>& observations,
    const GeometryConfig& config, double min_angle_rad) {
  TrackTriangulation result;
  const size_t n = observations.size();
  if (n < 2) return result;

  std::vector<Eigen::Vector3d> bearings(n);
  for (size_t i = 0; i < n; ++i) {
    bearings[i] = Bearing(*observations[i].camera, *observations[i].pose,
                          observations[i].pixel);
  }

  const double thr2 = config.tau_px * config.tau_px;
  auto support_of = [&](const Eigen::Vector3d& point,
                        std::vector<uint8_t>* mask) {
    int count = 0;
    for (size_t i = 0; i < n; ++i) {
      bool good = false;
      const Eigen::Vector3d cam = observations[i].pose->WorldToCamera(point);
      if (cam.z() > 1e-9) {
        const Eigen::Vector2d projected =
            observations[i].camera->Denormalize(cam);
        good = (projected - observations[i].pixel).squaredNorm() < thr2;
      }
      (*mask)[i] = good ? 1 : 0;
      count += good ? 1 : 0;
    }
    return count;
  };

  Eigen::Vector3d best_point;
  int best_support = 0;
  std::vector<uint8_t> mask(n, 0);
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = i + 1; j < n; ++j) {
      const auto candidate = TriangulateTwoView(
          *observations[i].pose, *observations[j].pose, bearings[i],
          bearings[j], min_angle_rad);
      if (!candidate) continue;
      const int support = support_of(*candidate, &mask);
      if (support > best_support) {
        best_support = support;
        best_point = *candidate;
      }
    }
  }
  if (best_support < 2) return result;

  // Refit on the consensus set.
  support_of(best_point, &mask);
  std::vector<const Pose*> poses;
  std::vector<const CameraIntrinsics*> cameras;
  std::vector<Eigen::Vector2d> pixels;
  for (size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    poses.push_back(observations[i].pose);
    cameras.push_back(observations[i].camera);
    pixels.push_back(observations[i].pixel);
  }
  const auto refined = TriangulateMultiView(poses, cameras, pixels);
  Eigen::Vector3d point = refined.value_or(best_point);

  std::vector<uint8_t> final_mask(n, 0);
  const int final_support = support_of(point, &final_mask);
  if (final_support < 2) {
    // The DLT refit can regress on near-degenerate sets; keep the seed.
    point = best_point;
    if (support_of(point, &final_mask) < 2) return result;
  }

  // Triangulation angle over the supporting rays.
  double max_angle = 0.0;
  std::vector<size_t> support_idx;
  for (size_t i = 0; i < n; ++i) {
    if (final_mask[i]) support_idx.push_back(i);
  }
  for (size_t a = 0; a < support_idx.size(); ++a) {
    for (size_t b = a + 1; b < support_idx.size(); ++b) {
      max_angle = std::max(
          max_angle,
          AngleBetween(point - observations[support_idx[a]].pose->center,
                       point - observations[support_idx[b]].pose->center));
    }
  }
  if (max_angle < min_angle_rad) return result;

  result.ok = true;
  result.point = point;
  result.support = final_mask;
  return result;
}

}  // namespace ecsfm
