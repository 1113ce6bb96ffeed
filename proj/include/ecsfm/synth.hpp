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
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecsfm/covis_graph.hpp"
#include "ecsfm/random.hpp"
#include "ecsfm/types.hpp"

namespace ecsfm {

// Image pairs sharing at least this many ground-truth feature tracks count
// as covisible for precision/recall purposes.
constexpr int kCovisibleTrackThreshold = 30;

enum class TrajectoryKind { kOrbit, kCorridorLoop, kMixed };

struct SceneSpec {
  TrajectoryKind kind = TrajectoryKind::kOrbit;
  int num_cameras = 50;
  int num_points = 2000;
  double pixel_noise = 0.0;      // sigma, pixels
  double outlier_fraction = 0.0; // corrupted-descriptor fraction in [0, 1)
  int num_distractors = 0;
  uint64_t seed = 1;

  int descriptor_dim = 32;
  int retrieval_length = 50;     // padded list length per image
  int num_sequences = 2;         // kMixed only
  bool disjoint_scenes = false;  // kMixed: sequences live in separate scenes

  void Validate() const {
    if (num_cameras <= 0 || num_points <= 0) {
      throw std::invalid_argument("SceneSpec: counts must be positive");
    }
    if (pixel_noise < 0.0 || outlier_fraction < 0.0 ||
        outlier_fraction >= 1.0) {
      throw std::invalid_argument("SceneSpec: noise/outlier out of range");
    }
  }
};

struct GroundTruth {
  std::map<image_t, Pose> poses;  // real images only
  std::vector<Eigen::Vector3d> points;
  // Geometric truth: which 3D point a keypoint depicts, regardless of
  // descriptor corruption.
  std::map<std::pair<image_t, feature_t>, int> correspondence;
  std::vector<std::vector<std::pair<image_t, feature_t>>> point_observations;
  std::set<std::pair<image_t, image_t>> covisible_pairs;
  std::map<image_t, int> scene_label;  // -1 for distractors
  double scene_diameter = 0.0;
};

struct SyntheticScene {
  std::map<image_t, CameraIntrinsics> intrinsics;
  std::map<image_t, FeatureSet> features;
  std::map<image_t, std::string> names;
  RetrievalIndex retrieval;
  GroundTruth ground_truth;
};

// Exhaustive shared-track counting over the ground-truth correspondence
// table; the >= 30 subset is the covisible oracle set.
inline std::map<std::pair<image_t, image_t>, int> BruteForcePairs(
    const GroundTruth& gt) {
  std::map<std::pair<image_t, image_t>, int> counts;
  for (const auto& observations : gt.point_observations) {
    std::vector<image_t> images;
    for (const auto& [image, feature] : observations) images.push_back(image);
    std::sort(images.begin(), images.end());
    images.erase(std::unique(images.begin(), images.end()), images.end());
    for (size_t i = 0; i < images.size(); ++i) {
      for (size_t j = i + 1; j < images.size(); ++j) {
        ++counts[{images[i], images[j]}];
      }
    }
  }
  return counts;
}

struct SimilarityTransform {
  double scale = 1.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Eigen::Vector3d Apply(const Eigen::Vector3d& p) const {
    return scale * (rotation * p) + translation;
  }

  Pose ApplyToPose(const Pose& pose) const {
    Pose out;
    out.rotation = pose.rotation * rotation.transpose();
    out.center = Apply(pose.center);
    return out;
  }
};

struct AlignmentResult {
  SimilarityTransform transform;
  double rmse = 0.0;
  bool degenerate = false;  // collinear support
};

// Closed-form similarity (Umeyama) minimizing squared position error from
// `source` onto `target`, plus the post-alignment RMSE.
inline AlignmentResult AlignAndRmse(const std::vector<Eigen::Vector3d>& source,
                                    const std::vector<Eigen::Vector3d>& target) {
  if (source.size() != target.size()) {
    throw std::invalid_argument("AlignAndRmse: size mismatch");
  }
  const size_t n = source.size();
  if (n < 3) {
    throw std::invalid_argument("AlignAndRmse: need at least 3 poses");
  }

  Eigen::Vector3d mean_src = Eigen::Vector3d::Zero();
  Eigen::Vector3d mean_dst = Eigen::Vector3d::Zero();
  for (size_t i = 0; i < n; ++i) {
    mean_src += source[i];
    mean_dst += target[i];
  }
  mean_src /= double(n);
  mean_dst /= double(n);

  Eigen::Matrix3d covariance = Eigen::Matrix3d::Zero();
  double variance_src = 0.0;
  for (size_t i = 0; i < n; ++i) {
    covariance += (target[i] - mean_dst) * (source[i] - mean_src).transpose();
    variance_src += (source[i] - mean_src).squaredNorm();
  }
  covariance /= double(n);
  variance_src /= double(n);

  const Eigen::JacobiSVD<Eigen::Matrix3d> svd(
      covariance, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d sign = Eigen::Vector3d::Ones();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) {
    sign(2) = -1.0;
  }

  AlignmentResult result;
  const Eigen::Vector3d singular = svd.singularValues();
  // Rank < 2 leaves the in-line rotation unconstrained.
  result.degenerate = singular(1) < 1e-9 * std::max(singular(0), 1e-300);

  result.transform.rotation =
      svd.matrixU() * sign.asDiagonal() * svd.matrixV().transpose();
  result.transform.scale =
      variance_src > 1e-300 ? singular.dot(sign) / variance_src : 1.0;
  result.transform.translation =
      mean_dst - result.transform.scale * (result.transform.rotation * mean_src);

  double sum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    sum += (result.transform.Apply(source[i]) - target[i]).squaredNorm();
  }
  result.rmse = std::sqrt(sum / double(n));
  return result;
}

namespace internal {

// World->camera rotation for a camera looking along `forward` with image-y
// pointing towards negative world z.
inline Eigen::Matrix3d LookRotation(const Eigen::Vector3d& forward) {
  const Eigen::Vector3d f = forward.normalized();
  Eigen::Vector3d right = f.cross(Eigen::Vector3d::UnitZ());
  if (right.norm() < 1e-6) right = Eigen::Vector3d::UnitX();
  right.normalize();
  const Eigen::Vector3d down = f.cross(right);
  Eigen::Matrix3d rotation;
  rotation.row(0) = right.transpose();
  rotation.row(1) = down.transpose();
  rotation.row(2) = f.transpose();
  return rotation;
}

struct CameraPlan {
  Pose pose;
  int scene = 0;
  bool sequential = false;
};

}  // namespace internal

// Deterministic synthetic scene: true projections plus Gaussian pixel noise,
// descriptors built from per-point codes so true correspondences are mutual
// nearest neighbors with a margin, retrieval ranked by shared-point counts
// and padded with low-score noise entries.
inline SyntheticScene GenerateScene(const SceneSpec& spec) {
  spec.Validate();
  auto rng = MakeRng(DeriveSeed(spec.seed, 0xecf5));
  std::normal_distribution<double> unit_normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  CameraIntrinsics camera;
  camera.fx = camera.fy = 500.0;
  camera.cx = 320.0;
  camera.cy = 240.0;
  camera.width = 640;
  camera.height = 480;

  const double ring_radius = spec.kind == TrajectoryKind::kCorridorLoop ? 30.0
                                                                        : 10.0;
  const double wall_inner = ring_radius * 1.5;
  const double wall_outer = ring_radius * 1.9;
  const double wall_height = spec.kind == TrajectoryKind::kCorridorLoop ? 4.0
                                                                        : 3.0;

  // Scene points on a cylindrical wall around the camera ring, so that each
  // camera observes only its local sector and covisibility stays local.
  auto make_points = [&](const Eigen::Vector3d& origin,
                         std::vector<Eigen::Vector3d>* points) {
    for (int i = 0; i < spec.num_points; ++i) {
      const double angle = 2.0 * M_PI * unit(rng);
      const double radius = wall_inner + (wall_outer - wall_inner) * unit(rng);
      const double height = wall_height * (2.0 * unit(rng) - 1.0);
      points->push_back(origin + Eigen::Vector3d(radius * std::cos(angle),
                                                 radius * std::sin(angle),
                                                 height));
    }
  };

  // Camera placement per trajectory kind.
  std::vector<internal::CameraPlan> plans;
  const Eigen::Vector3d scene_b_origin(10.0 * wall_outer, 0.0, 0.0);
  auto ring_pose = [&](double angle, const Eigen::Vector3d& origin,
                       double tangential_mix) {
    const Eigen::Vector3d radial(std::cos(angle), std::sin(angle), 0.0);
    const Eigen::Vector3d tangent(-std::sin(angle), std::cos(angle), 0.0);
    Pose pose;
    pose.center = origin + ring_radius * radial;
    pose.rotation = internal::LookRotation(
        ((1.0 - tangential_mix) * radial + tangential_mix * tangent)
            .normalized());
    return pose;
  };

  switch (spec.kind) {
    case TrajectoryKind::kOrbit: {
      for (int i = 0; i < spec.num_cameras; ++i) {
        const double angle = 2.0 * M_PI * i / spec.num_cameras;
        plans.push_back({ring_pose(angle, Eigen::Vector3d::Zero(), 0.0), 0,
                         /*sequential=*/false});
      }
      break;
    }
    case TrajectoryKind::kCorridorLoop: {
      for (int i = 0; i < spec.num_cameras; ++i) {
        const double angle = 2.0 * M_PI * i / spec.num_cameras;
        plans.push_back({ring_pose(angle, Eigen::Vector3d::Zero(), 0.5), 0,
                         /*sequential=*/true});
      }
      break;
    }
    case TrajectoryKind::kMixed: {
      const int num_sequences = std::max(1, spec.num_sequences);
      const int per_sequence = spec.num_cameras * 7 / 10 / num_sequences;
      int placed = 0;
      for (int s = 0; s < num_sequences; ++s) {
        const Eigen::Vector3d origin =
            (spec.disjoint_scenes && s % 2 == 1) ? scene_b_origin
                                                 : Eigen::Vector3d::Zero();
        const int scene = (spec.disjoint_scenes && s % 2 == 1) ? 1 : 0;
        // Each sequence walks one arc of the ring.
        const double arc_start = 2.0 * M_PI * s / num_sequences;
        for (int i = 0; i < per_sequence; ++i) {
          const double angle =
              arc_start + 2.0 * M_PI * 0.8 / num_sequences *
                              (double(i) / std::max(per_sequence - 1, 1));
          plans.push_back({ring_pose(angle, origin, 0.4), scene, true});
          ++placed;
        }
      }
      while (placed < spec.num_cameras) {
        const double angle = 2.0 * M_PI * unit(rng);
        plans.push_back(
            {ring_pose(angle, Eigen::Vector3d::Zero(), 0.3 * unit(rng)), 0,
             false});
        ++placed;
      }
      break;
    }
  }

  std::vector<Eigen::Vector3d> points_a, points_b;
  make_points(Eigen::Vector3d::Zero(), &points_a);
  const bool has_scene_b =
      spec.kind == TrajectoryKind::kMixed && spec.disjoint_scenes;
  if (has_scene_b) make_points(scene_b_origin, &points_b);

  SyntheticScene scene;
  GroundTruth& gt = scene.ground_truth;
  gt.points = points_a;
  const int scene_b_offset = static_cast<int>(gt.points.size());
  if (has_scene_b) {
    gt.points.insert(gt.points.end(), points_b.begin(), points_b.end());
  }
  gt.point_observations.resize(gt.points.size());

  // Image id assignment. Sequential plans keep path order; pure unordered
  // scenes get shuffled ids so input order carries no adjacency signal.
  std::vector<int> plan_of_id(plans.size());
  std::iota(plan_of_id.begin(), plan_of_id.end(), 0);
  if (spec.kind == TrajectoryKind::kOrbit) {
    std::shuffle(plan_of_id.begin(), plan_of_id.end(), rng);
  } else if (spec.kind == TrajectoryKind::kMixed && spec.disjoint_scenes) {
    // Interleave the sequences: even ids walk scene A, odd ids scene B.
    std::vector<int> scene_a, scene_rest;
    for (int p = 0; p < static_cast<int>(plans.size()); ++p) {
      (plans[p].scene == 0 ? scene_a : scene_rest).push_back(p);
    }
    plan_of_id.clear();
    size_t ia = 0, ib = 0;
    while (ia < scene_a.size() || ib < scene_rest.size()) {
      if (ia < scene_a.size()) plan_of_id.push_back(scene_a[ia++]);
      if (ib < scene_rest.size()) plan_of_id.push_back(scene_rest[ib++]);
    }
  }

  // Per-point descriptor codes, plus ghost codes for outlier injection.
  std::vector<std::vector<float>> codes(gt.points.size());
  for (auto& code : codes) {
    code.resize(spec.descriptor_dim);
    for (auto& v : code) v = static_cast<float>(unit_normal(rng));
  }
  const int num_ghosts = std::max(50, spec.num_points / 5);
  std::vector<std::vector<float>> ghost_codes(num_ghosts);
  for (auto& code : ghost_codes) {
    code.resize(spec.descriptor_dim);
    for (auto& v : code) v = static_cast<float>(unit_normal(rng));
  }
  std::uniform_int_distribution<int> ghost_pick(0, num_ghosts - 1);

  const double obs_noise_sigma = 0.05;
  for (size_t id = 0; id < plans.size(); ++id) {
    const auto& plan = plans[plan_of_id[id]];
    const image_t image = static_cast<image_t>(id);
    gt.poses[image] = plan.pose;
    gt.scene_label[image] = plan.scene;
    scene.intrinsics[image] = camera;
    char name[64];
    std::snprintf(name, sizeof(name), "image_%05d.png", int(image));
    scene.names[image] = name;

    FeatureSet features;
    features.image_id = image;
    features.descriptor_type = DescriptorType::kFloat32;
    features.descriptor_dim = spec.descriptor_dim;

    // Visible points in a deterministic order, then shuffled feature slots.
    std::vector<std::pair<int, Eigen::Vector2d>> visible;
    const int lo = plan.scene == 1 ? scene_b_offset : 0;
    const int hi = plan.scene == 1 ? static_cast<int>(gt.points.size())
                                   : scene_b_offset == 0
                                       ? static_cast<int>(gt.points.size())
                                       : scene_b_offset;
    for (int p = lo; p < hi; ++p) {
      const auto pixel = Project(camera, plan.pose, gt.points[p]);
      if (!pixel) continue;
      Eigen::Vector2d noisy = *pixel;
      if (spec.pixel_noise > 0.0) {
        noisy.x() += spec.pixel_noise * unit_normal(rng);
        noisy.y() += spec.pixel_noise * unit_normal(rng);
        if (!camera.InBounds(noisy)) continue;
      }
      visible.emplace_back(p, noisy);
    }
    std::shuffle(visible.begin(), visible.end(), rng);

    for (const auto& [point_index, pixel] : visible) {
      const feature_t feature = static_cast<feature_t>(features.keypoints.size());
      features.keypoints.push_back(pixel);
      gt.correspondence[{image, feature}] = point_index;
      gt.point_observations[point_index].emplace_back(image, feature);
      const bool outlier = unit(rng) < spec.outlier_fraction;
      const auto& code =
          outlier ? ghost_codes[ghost_pick(rng)] : codes[point_index];
      for (int d = 0; d < spec.descriptor_dim; ++d) {
        features.float_descriptors.push_back(
            code[d] + static_cast<float>(obs_noise_sigma * unit_normal(rng)));
      }
    }
    scene.features[image] = std::move(features);
  }

  // Distractor images: random features with unique random codes.
  std::uniform_real_distribution<double> px(0.0, camera.width - 1.0);
  std::uniform_real_distribution<double> py(0.0, camera.height - 1.0);
  const int avg_features =
      std::max<int>(30, static_cast<int>(
                            gt.correspondence.size() /
                            std::max<size_t>(plans.size(), 1)));
  for (int d = 0; d < spec.num_distractors; ++d) {
    const image_t image = static_cast<image_t>(plans.size() + d);
    gt.scene_label[image] = -1;
    scene.intrinsics[image] = camera;
    char name[64];
    std::snprintf(name, sizeof(name), "distractor_%05d.png", int(image));
    scene.names[image] = name;
    FeatureSet features;
    features.image_id = image;
    features.descriptor_type = DescriptorType::kFloat32;
    features.descriptor_dim = spec.descriptor_dim;
    for (int i = 0; i < avg_features; ++i) {
      features.keypoints.emplace_back(px(rng), py(rng));
      for (int k = 0; k < spec.descriptor_dim; ++k) {
        features.float_descriptors.push_back(
            static_cast<float>(unit_normal(rng)));
      }
    }
    scene.features[image] = std::move(features);
  }

  // Ground-truth covisibility and the scene diameter.
  for (const auto& [pair, count] : BruteForcePairs(gt)) {
    if (count >= kCovisibleTrackThreshold) gt.covisible_pairs.insert(pair);
  }
  for (const auto& [ia, pa] : gt.poses) {
    for (const auto& [ib, pb] : gt.poses) {
      gt.scene_diameter =
          std::max(gt.scene_diameter, (pa.center - pb.center).norm());
    }
  }

  // Retrieval: shared-point counts as scores, padded with low random scores
  // so every list reaches the configured length.
  std::map<image_t, std::map<image_t, double>> scores;
  for (const auto& [pair, count] : BruteForcePairs(gt)) {
    scores[pair.first][pair.second] = count;
    scores[pair.second][pair.first] = count;
  }
  std::vector<image_t> all_images;
  for (const auto& [image, f] : scene.features) all_images.push_back(image);
  for (const image_t image : all_images) {
    std::vector<std::pair<image_t, double>> list;
    std::set<image_t> present{image};
    for (const auto& [other, score] : scores[image]) {
      list.emplace_back(other, score);
      present.insert(other);
    }
    auto pad_rng = MakeRng(DeriveSeed(spec.seed, 0x9ad, uint64_t(image)));
    std::vector<image_t> rest;
    for (const image_t other : all_images) {
      if (!present.count(other)) rest.push_back(other);
    }
    std::shuffle(rest.begin(), rest.end(), pad_rng);
    std::uniform_real_distribution<double> pad_score(1e-7, 1e-3);
    for (const image_t other : rest) {
      if (static_cast<int>(list.size()) >= spec.retrieval_length) break;
      list.push_back({other, pad_score(pad_rng)});
    }
    scene.retrieval.SetList(image, std::move(list));
  }
  scene.retrieval.SortAll();
  return scene;
}

}  // namespace ecsfm
