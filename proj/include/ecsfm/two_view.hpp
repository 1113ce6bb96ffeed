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
#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "ecsfm/config.hpp"
#include "ecsfm/essential.hpp"
#include "ecsfm/logging.hpp"
#include "ecsfm/random.hpp"
#include "ecsfm/types.hpp"

namespace ecsfm {

enum class TwoViewStatus {
  kSuccess,
  kDegenerate,      // rotation-only or planar-dominant geometry
  kTooFewMatches,   // fewer than 8 tentative matches
  kRansacFailure,   // no model reached the inlier minimum
};

struct TwoViewResult {
  TwoViewStatus status = TwoViewStatus::kRansacFailure;
  Eigen::Matrix3d relative_rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d relative_translation_dir = Eigen::Vector3d::UnitZ();
  std::vector<uint8_t> inliers;
  int inlier_count = 0;
  double mean_epipolar_residual = 0.0;  // pixels, over inliers

  bool ok() const { return status == TwoViewStatus::kSuccess; }

  // Pose of camera b relative to camera a with unit baseline: the a-frame
  // maps into the b-frame as X_b = R X_a + t.
  Pose RelativePose() const {
    Pose pose;
    pose.rotation = relative_rotation;
    pose.center = -relative_rotation.transpose() * relative_translation_dir;
    return pose;
  }
};

namespace internal {

inline int RansacIterationsFor(double inlier_ratio, int sample_size,
                               double confidence, int max_iterations) {
  const double w = std::clamp(inlier_ratio, 1e-6, 1.0 - 1e-12);
  const double p_good = std::pow(w, sample_size);
  if (p_good >= 1.0 - 1e-12) return 1;
  const double denom = std::log(std::max(1.0 - p_good, 1e-300));
  const double n = std::log(std::max(1.0 - confidence, 1e-300)) / denom;
  if (!std::isfinite(n) || n > max_iterations) return max_iterations;
  return std::max(1, static_cast<int>(std::ceil(n)));
}

template <typename Rng>
void SampleDistinct(Rng& rng, int population, int count, std::vector<int>* out) {
  out->clear();
  std::uniform_int_distribution<int> dist(0, population - 1);
  while (static_cast<int>(out->size()) < count) {
    const int candidate = dist(rng);
    if (std::find(out->begin(), out->end(), candidate) == out->end()) {
      out->push_back(candidate);
    }
  }
}

// Counts homography support among given correspondences (pixel domain) with
// a 4-point DLT RANSAC; used only for the degeneracy test.
inline int CountHomographySupport(const std::vector<Eigen::Vector2d>& a,
                                  const std::vector<Eigen::Vector2d>& b,
                                  double threshold_px, uint64_t seed,
                                  std::vector<uint8_t>* best_mask = nullptr) {
  const int n = static_cast<int>(a.size());
  if (n < 4) return 0;
  auto rng = MakeRng(seed);
  std::vector<int> sample;
  int best_support = 0;
  const double thr2 = threshold_px * threshold_px;
  std::vector<uint8_t> mask(n, 0);
  for (int iter = 0; iter < 200; ++iter) {
    SampleDistinct(rng, n, 4, &sample);
    std::vector<Eigen::Vector2d> sa, sb;
    for (const int idx : sample) {
      sa.push_back(a[idx]);
      sb.push_back(b[idx]);
    }
    Eigen::Matrix3d h;
    if (!SolveHomographyDLT(sa, sb, &h)) continue;
    const Eigen::Matrix3d h_inv = h.inverse();
    int support = 0;
    for (int k = 0; k < n; ++k) {
      mask[k] = 0;
      const Eigen::Vector3d fwd = h * a[k].homogeneous();
      const Eigen::Vector3d bwd = h_inv * b[k].homogeneous();
      if (std::abs(fwd.z()) < 1e-12 || std::abs(bwd.z()) < 1e-12) continue;
      const double e_fwd = (fwd.hnormalized() - b[k]).squaredNorm();
      const double e_bwd = (bwd.hnormalized() - a[k]).squaredNorm();
      if (e_fwd < thr2 && e_bwd < thr2) {
        mask[k] = 1;
        ++support;
      }
    }
    if (support > best_support) {
      best_support = support;
      if (best_mask != nullptr) *best_mask = mask;
    }
  }
  return best_support;
}

}  // namespace internal

// Robust relative pose from tentative matches. Five-point essential RANSAC
// by default; the fundamental-matrix path handles untrusted intrinsics and
// recovers the pose by projecting K_b^T F K_a onto the essential manifold.
inline TwoViewResult EstimateTwoView(const FeatureSet& features_a,
                                     const FeatureSet& features_b,
                                     const std::vector<FeatureMatch>& matches,
                                     const CameraIntrinsics& intrinsics_a,
                                     const CameraIntrinsics& intrinsics_b,
                                     const GeometryConfig& config,
                                     uint64_t seed) {
  TwoViewResult result;
  const int n = static_cast<int>(matches.size());
  if (n < 8) {
    result.status = TwoViewStatus::kTooFewMatches;
    return result;
  }

  std::vector<Eigen::Vector2d> pixels_a(n), pixels_b(n);
  std::vector<Eigen::Vector3d> norm_a(n), norm_b(n);
  for (int k = 0; k < n; ++k) {
    pixels_a[k] = features_a.keypoints[matches[k].first];
    pixels_b[k] = features_b.keypoints[matches[k].second];
    norm_a[k] = intrinsics_a.Normalize(pixels_a[k]);
    norm_b[k] = intrinsics_b.Normalize(pixels_b[k]);
  }

  const Eigen::Matrix3d k_a_inv = intrinsics_a.K().inverse();
  const Eigen::Matrix3d k_b_inv_t = intrinsics_b.K().inverse().transpose();
  const double thr2 = config.tau_px * config.tau_px;

  auto rng = MakeRng(seed);
  std::vector<int> sample;
  Eigen::Matrix3d best_f = Eigen::Matrix3d::Zero();
  std::vector<uint8_t> best_mask(n, 0);
  int best_support = 0;
  const int sample_size = config.use_fundamental ? 8 : 5;
  int max_iterations = config.ransac_max_iterations;

  for (int iter = 0; iter < max_iterations; ++iter) {
    internal::SampleDistinct(rng, n, sample_size, &sample);
    std::vector<Eigen::Matrix3d> models;
    if (config.use_fundamental) {
      std::vector<Eigen::Vector2d> sa, sb;
      for (const int idx : sample) {
        sa.push_back(pixels_a[idx]);
        sb.push_back(pixels_b[idx]);
      }
      Eigen::Matrix3d f;
      if (SolveFundamentalEightPoint(sa, sb, &f)) models.push_back(f);
    } else {
      std::vector<Eigen::Vector3d> sa, sb;
      for (const int idx : sample) {
        sa.push_back(norm_a[idx]);
        sb.push_back(norm_b[idx]);
      }
      for (const Eigen::Matrix3d& e : SolveEssentialFivePoint(sa, sb)) {
        models.push_back(k_b_inv_t * e * k_a_inv);  // pixel-domain F
      }
    }

    for (const Eigen::Matrix3d& f : models) {
      int support = 0;
      for (int k = 0; k < n; ++k) {
        if (SampsonError(f, pixels_a[k], pixels_b[k]) < thr2) ++support;
      }
      if (support > best_support) {
        best_support = support;
        best_f = f;
        for (int k = 0; k < n; ++k) {
          best_mask[k] =
              SampsonError(f, pixels_a[k], pixels_b[k]) < thr2 ? 1 : 0;
        }
        max_iterations = std::min(
            max_iterations,
            iter + 1 + internal::RansacIterationsFor(
                           double(support) / n, sample_size,
                           config.ransac_confidence,
                           config.ransac_max_iterations));
      }
    }
  }

  if (best_support < config.min_inliers) {
    // A pair the essential model cannot explain may still be coherent under a
    // homography: rotation-only motion or a plane-dominated scene.
    std::vector<uint8_t> h_mask;
    const int homography_support = internal::CountHomographySupport(
        pixels_a, pixels_b, config.tau_px, SplitMix64(seed + 0x517c), &h_mask);
    if (homography_support >= config.min_inliers) {
      result.status = TwoViewStatus::kDegenerate;
      result.inliers = h_mask;
      result.inlier_count = homography_support;
    } else {
      result.status = TwoViewStatus::kRansacFailure;
    }
    return result;
  }

  // Recover the pose from the essential matrix restricted to inliers.
  Eigen::Matrix3d essential =
      intrinsics_b.K().transpose() * best_f * intrinsics_a.K();
  {
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(
        essential, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Vector3d singular(1.0, 1.0, 0.0);
    essential =
        svd.matrixU() * singular.asDiagonal() * svd.matrixV().transpose();
  }

  std::vector<Eigen::Vector3d> inlier_a, inlier_b;
  std::vector<Eigen::Vector2d> inlier_pix_a, inlier_pix_b;
  for (int k = 0; k < n; ++k) {
    if (!best_mask[k]) continue;
    inlier_a.push_back(norm_a[k]);
    inlier_b.push_back(norm_b[k]);
    inlier_pix_a.push_back(pixels_a[k]);
    inlier_pix_b.push_back(pixels_b[k]);
  }

  Eigen::Matrix3d rotation;
  Eigen::Vector3d translation;
  const int cheirality_support = DecomposeEssential(
      essential, inlier_a, inlier_b, &rotation, &translation);

  result.relative_rotation = rotation;
  result.relative_translation_dir = translation.normalized();
  result.inliers = best_mask;
  result.inlier_count = best_support;

  double residual_sum = 0.0;
  for (int k = 0; k < n; ++k) {
    if (best_mask[k]) {
      residual_sum += std::sqrt(SampsonError(best_f, pixels_a[k], pixels_b[k]));
    }
  }
  result.mean_epipolar_residual = residual_sum / std::max(best_support, 1);

  // Degeneracy: a homography covering nearly all essential inliers means
  // rotation-only motion or a dominant plane; so does failing cheirality.
  const int homography_support = internal::CountHomographySupport(
      inlier_pix_a, inlier_pix_b, config.tau_px, SplitMix64(seed + 0x9e37));
  const bool planar =
      homography_support >=
      config.homography_degenerate_ratio * static_cast<double>(best_support);
  const bool cheirality_ok =
      cheirality_support >=
      config.cheirality_quorum * static_cast<double>(best_support);
  result.status = (planar || !cheirality_ok) ? TwoViewStatus::kDegenerate
                                             : TwoViewStatus::kSuccess;
  return result;
}

// Intersects two world-frame rays. Returns the midpoint of the common
// perpendicular, or nothing when the parallax is below `min_angle_rad`,
// either depth is negative, or the rays are parallel.
inline std::optional<Eigen::Vector3d> TriangulateTwoView(
    const Pose& pose_a, const Pose& pose_b, const Eigen::Vector3d& bearing_a,
    const Eigen::Vector3d& bearing_b, double min_angle_rad = 0.0) {
  const Eigen::Vector3d baseline = pose_b.center - pose_a.center;
  Eigen::Matrix2d normal;
  normal << 1.0, -bearing_a.dot(bearing_b), bearing_a.dot(bearing_b), -1.0;
  const Eigen::Vector2d rhs(bearing_a.dot(baseline), bearing_b.dot(baseline));
  const double det = normal.determinant();
  if (std::abs(det) < 1e-14) return std::nullopt;
  const Eigen::Vector2d depths = normal.inverse() * rhs;
  if (depths(0) <= 0.0 || depths(1) <= 0.0) return std::nullopt;
  const Eigen::Vector3d on_a = pose_a.center + depths(0) * bearing_a;
  const Eigen::Vector3d on_b = pose_b.center + depths(1) * bearing_b;
  const Eigen::Vector3d point = 0.5 * (on_a + on_b);
  if (min_angle_rad > 0.0) {
    const double angle =
        AngleBetween(point - pose_a.center, point - pose_b.center);
    if (angle < min_angle_rad) return std::nullopt;
  }
  return point;
}

enum class VErrorStatus { kOk, kZeroBaseline, kUndefined };

struct VError {
  VErrorStatus status = VErrorStatus::kOk;
  double value = 0.0;      // signed, in [-1, 1]
  double sin_theta = 0.0;  // |t x r_j| = sin of the angle between t and r_j
};

// Signed distance of the ray r_i from the epipolar plane spanned by the
// baseline and r_j: V = ((t x r_j) / |t x r_j|) . r_i with t the unit
// baseline direction. Zero for consistent geometry.
inline VError ComputeVError(const Pose& pose_i, const Pose& pose_j,
                            const Eigen::Vector3d& bearing_i_world,
                            const Eigen::Vector3d& bearing_j_world,
                            double min_baseline = 1e-9) {
  VError result;
  const Eigen::Vector3d baseline = pose_j.center - pose_i.center;
  const double baseline_norm = baseline.norm();
  if (baseline_norm <= min_baseline) {
    result.status = VErrorStatus::kZeroBaseline;
    return result;
  }
  const Eigen::Vector3d t = baseline / baseline_norm;
  const Eigen::Vector3d normal = t.cross(bearing_j_world);
  const double normal_norm = normal.norm();
  result.sin_theta = normal_norm;
  if (normal_norm < 1e-12) {
    result.status = VErrorStatus::kUndefined;
    return result;
  }
  result.value = (normal / normal_norm).dot(bearing_i_world);
  return result;
}

enum class ConsistencyVerdict { kConsistent, kInconsistent };

struct PairConsistency {
  ConsistencyVerdict verdict = ConsistencyVerdict::kConsistent;
  double bad_fraction = 0.0;
  std::vector<double> per_match_verror;
};

// Inputs for the registration consistency test between two registered frames.
struct ConsistencyInput {
  const CameraIntrinsics* intrinsics_i = nullptr;
  const CameraIntrinsics* intrinsics_j = nullptr;
  const Pose* pose_i = nullptr;
  const Pose* pose_j = nullptr;
  const FeatureSet* features_i = nullptr;
  const FeatureSet* features_j = nullptr;
  image_t image_i = -1;
  image_t image_j = -1;
};

// Per-match V_error thresholded at a / lambda + b with lambda evaluated from
// the measured angle between the baseline and r_j, plus a two-view depth
// sanity test against the depth range and 3D points of the reconstruction.
inline PairConsistency CheckPairConsistency(
    const ConsistencyInput& input, const std::vector<FeatureMatch>& inliers,
    const Reconstruction* reconstruction, const GeometryConfig& config) {
  if (static_cast<int>(inliers.size()) < config.min_inliers) {
    throw std::invalid_argument("CheckPairConsistency: too few inlier matches");
  }

  PairConsistency result;
  result.per_match_verror.reserve(inliers.size());

  // Scene depth scale for the pair: median depth of existing points observed
  // by either frame, falling back to the matches' own triangulated depths.
  std::vector<double> scene_depths;
  if (reconstruction != nullptr) {
    for (const auto& [pid, point] : reconstruction->points) {
      for (const auto& [image, feature] : point.observations) {
        if (image == input.image_i) {
          const double d = input.pose_i->WorldToCamera(point.position).norm();
          if (d > 0.0) scene_depths.push_back(d);
          break;
        }
        if (image == input.image_j) {
          const double d = input.pose_j->WorldToCamera(point.position).norm();
          if (d > 0.0) scene_depths.push_back(d);
          break;
        }
      }
    }
  }

  struct MatchGeometry {
    double verror = 0.0;
    double lambda = 1.0;
    double depth_i = -1.0;  // along the ray from camera i, world units
    point3d_t existing = kInvalidPoint3d;
    feature_t feature_i = -1;
    bool undefined = false;
  };
  std::vector<MatchGeometry> geometries;
  geometries.reserve(inliers.size());

  int zero_baseline = 0;
  std::vector<double> match_depths;
  for (const auto& [fi, fj] : inliers) {
    const Eigen::Vector3d ri =
        Bearing(*input.intrinsics_i, *input.pose_i, input.features_i->keypoints[fi]);
    const Eigen::Vector3d rj =
        Bearing(*input.intrinsics_j, *input.pose_j, input.features_j->keypoints[fj]);
    const VError v =
        ComputeVError(*input.pose_i, *input.pose_j, ri, rj, config.min_baseline);
    if (v.status == VErrorStatus::kZeroBaseline) {
      ++zero_baseline;
      continue;
    }
    MatchGeometry geom;
    geom.feature_i = fi;
    geom.undefined = v.status == VErrorStatus::kUndefined;
    geom.verror = v.value;
    geom.lambda = 1.0 / std::max(v.sin_theta, config.lambda_sin_floor);
    const auto point =
        TriangulateTwoView(*input.pose_i, *input.pose_j, ri, rj);
    if (point.has_value()) {
      geom.depth_i = (*point - input.pose_i->center).norm();
      match_depths.push_back(geom.depth_i);
    }
    if (reconstruction != nullptr) {
      geom.existing = reconstruction->FindPoint(input.image_i, fi);
      if (geom.existing == kInvalidPoint3d) {
        geom.existing = reconstruction->FindPoint(input.image_j, fj);
      }
    }
    geometries.push_back(geom);
    result.per_match_verror.push_back(v.status == VErrorStatus::kOk ? v.value
                                                                    : 1.0);
  }

  if (zero_baseline == static_cast<int>(inliers.size())) {
    LogWarn("pair (%d, %d): zero baseline, consistency check skipped",
            int(input.image_i), int(input.image_j));
    result.verdict = ConsistencyVerdict::kConsistent;
    return result;
  }

  if (scene_depths.size() < 5) {
    scene_depths = match_depths;
  }
  double median_depth = 0.0;
  if (!scene_depths.empty()) {
    std::nth_element(scene_depths.begin(),
                     scene_depths.begin() + scene_depths.size() / 2,
                     scene_depths.end());
    median_depth = scene_depths[scene_depths.size() / 2];
  }

  int bad = 0;
  for (const auto& geom : geometries) {
    bool is_bad = false;
    if (geom.undefined) {
      is_bad = false;  // direction parallel to baseline carries no signal
    } else {
      const double threshold =
          config.verror_a / geom.lambda + config.verror_b;
      is_bad = std::abs(geom.verror) > threshold;
    }
    if (!is_bad && median_depth > 0.0) {
      if (geom.depth_i < 0.0) {
        is_bad = true;  // no positive-depth intersection for this match
      } else if (geom.depth_i < config.depth_min_factor * median_depth ||
                 geom.depth_i > config.depth_max_factor * median_depth) {
        is_bad = true;
      } else if (geom.existing != kInvalidPoint3d &&
                 reconstruction != nullptr) {
        const double point_depth =
            (reconstruction->points.at(geom.existing).position -
             input.pose_i->center)
                .norm();
        if (point_depth > 0.0 &&
            std::abs(geom.depth_i - point_depth) / point_depth >
                config.rho_depth) {
          is_bad = true;
        }
      }
    }
    bad += is_bad ? 1 : 0;
  }

  result.bad_fraction =
      geometries.empty() ? 0.0 : double(bad) / double(geometries.size());
  result.verdict = result.bad_fraction > config.theta_bad
                       ? ConsistencyVerdict::kInconsistent
                       : ConsistencyVerdict::kConsistent;
  return result;
}

}  // namespace ecsfm
