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
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ecsfm {

using image_t = int32_t;
using point3d_t = int64_t;
using feature_t = int32_t;

constexpr point3d_t kInvalidPoint3d = -1;

// Pinhole camera. Intrinsics are per-image inputs and are never optimized.
struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  bool IsValid() const {
    return fx > 0.0 && fy > 0.0 && cx >= 0.0 && cx < width && cy >= 0.0 &&
           cy < height;
  }

  // Pixel -> normalized image coordinates (z = 1).
  Eigen::Vector3d Normalize(const Eigen::Vector2d& pixel) const {
    return {(pixel.x() - cx) / fx, (pixel.y() - cy) / fy, 1.0};
  }

  Eigen::Vector2d Denormalize(const Eigen::Vector3d& point) const {
    return {fx * point.x() / point.z() + cx, fy * point.y() / point.z() + cy};
  }

  bool InBounds(const Eigen::Vector2d& pixel) const {
    return pixel.x() >= 0.0 && pixel.x() < width && pixel.y() >= 0.0 &&
           pixel.y() < height;
  }

  Eigen::Matrix3d K() const {
    Eigen::Matrix3d k = Eigen::Matrix3d::Identity();
    k(0, 0) = fx;
    k(1, 1) = fy;
    k(0, 2) = cx;
    k(1, 2) = cy;
    return k;
  }
};

// Camera pose. `rotation` maps world vectors into the camera frame and
// `center` is the camera center O in world units, so a world point X has
// camera coordinates R * (X - O). The bearing of an observation is the unit
// world-frame vector from O towards X.
struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d center = Eigen::Vector3d::Zero();

  static Pose Identity() { return Pose(); }

  bool IsValid(double tol = 1e-9) const {
    const Eigen::Matrix3d rtr = rotation.transpose() * rotation;
    return (rtr - Eigen::Matrix3d::Identity()).norm() < tol &&
           std::abs(rotation.determinant() - 1.0) < tol &&
           center.allFinite();
  }

  Eigen::Vector3d WorldToCamera(const Eigen::Vector3d& world) const {
    return rotation * (world - center);
  }

  Eigen::Vector3d CameraToWorld(const Eigen::Vector3d& cam) const {
    return rotation.transpose() * cam + center;
  }

  // Relative transform taking this camera's frame into `other`'s frame:
  // X_other = R_rel * X_this + t_rel.
  Eigen::Matrix3d RelativeRotationTo(const Pose& other) const {
    return other.rotation * rotation.transpose();
  }

  Eigen::Vector3d RelativeTranslationTo(const Pose& other) const {
    return other.rotation * (center - other.center);
  }
};

// [u, v] pixel or nothing when behind the camera / outside the image.
inline std::optional<Eigen::Vector2d> Project(const CameraIntrinsics& camera,
                                              const Pose& pose,
                                              const Eigen::Vector3d& point) {
  if (!point.allFinite()) {
    throw std::invalid_argument("Project: non-finite point");
  }
  const Eigen::Vector3d cam = pose.WorldToCamera(point);
  if (cam.z() <= 0.0) return std::nullopt;
  const Eigen::Vector2d pixel = camera.Denormalize(cam);
  if (!camera.InBounds(pixel)) return std::nullopt;
  return pixel;
}

// Unit world-frame ray from the camera center through the keypoint.
inline Eigen::Vector3d Bearing(const CameraIntrinsics& camera, const Pose& pose,
                               const Eigen::Vector2d& keypoint) {
  const Eigen::Vector3d ray_cam = camera.Normalize(keypoint).normalized();
  return pose.rotation.transpose() * ray_cam;
}

enum class DescriptorType : uint8_t { kUint8 = 0, kFloat32 = 1 };

// Per-image features. Descriptors are row-major, one row per keypoint, with
// either 8-bit (Hamming) or float (L2) entries. Patch ids index the uniform
// patch_grid x patch_grid cell containing the keypoint.
struct FeatureSet {
  image_t image_id = -1;
  std::vector<Eigen::Vector2d> keypoints;
  DescriptorType descriptor_type = DescriptorType::kFloat32;
  int descriptor_dim = 0;
  std::vector<float> float_descriptors;    // keypoints.size() * descriptor_dim
  std::vector<uint8_t> byte_descriptors;   // keypoints.size() * descriptor_dim
  std::vector<int32_t> patch_ids;
  int patch_grid = 0;

  size_t NumFeatures() const { return keypoints.size(); }

  const float* FloatDescriptor(size_t i) const {
    return float_descriptors.data() + i * descriptor_dim;
  }
  const uint8_t* ByteDescriptor(size_t i) const {
    return byte_descriptors.data() + i * descriptor_dim;
  }

  void AssignPatchIds(const CameraIntrinsics& camera, int grid) {
    patch_grid = grid;
    patch_ids.resize(keypoints.size());
    for (size_t i = 0; i < keypoints.size(); ++i) {
      const int px = std::min(
          grid - 1, static_cast<int>(keypoints[i].x() / camera.width * grid));
      const int py = std::min(
          grid - 1, static_cast<int>(keypoints[i].y() / camera.height * grid));
      patch_ids[i] = py * grid + px;
    }
  }

  void CheckInvariants(const CameraIntrinsics& camera) const {
    const size_t n = keypoints.size();
    if (!patch_ids.empty() && patch_ids.size() != n) {
      throw std::runtime_error("FeatureSet: patch_ids size mismatch");
    }
    const size_t expected =
        n * static_cast<size_t>(std::max(descriptor_dim, 0));
    const size_t actual = descriptor_type == DescriptorType::kFloat32
                              ? float_descriptors.size()
                              : byte_descriptors.size();
    if (actual != expected) {
      throw std::runtime_error("FeatureSet: descriptor size mismatch");
    }
    for (const auto& kp : keypoints) {
      if (!camera.InBounds(kp)) {
        throw std::runtime_error("FeatureSet: keypoint outside image bounds");
      }
    }
    for (const auto pid : patch_ids) {
      if (pid < 0 || pid >= patch_grid * patch_grid) {
        throw std::runtime_error("FeatureSet: patch id out of range");
      }
    }
  }
};

using FeatureMatch = std::pair<feature_t, feature_t>;

inline std::pair<image_t, image_t> CanonicalPair(image_t a, image_t b) {
  return a < b ? std::make_pair(a, b) : std::make_pair(b, a);
}

// Verified matches between a canonical image pair (image_a < image_b).
struct MatchPair {
  image_t image_a = -1;
  image_t image_b = -1;
  std::vector<FeatureMatch> matches;
  std::vector<uint8_t> inlier_mask;
  std::optional<Pose> two_view_pose;  // a-frame -> b-frame, unit baseline

  size_t NumInliers() const {
    size_t count = 0;
    for (const uint8_t m : inlier_mask) count += m != 0;
    return count;
  }

  template <typename Fn>
  void ForEachInlier(Fn&& fn) const {
    for (size_t i = 0; i < matches.size(); ++i) {
      if (inlier_mask[i]) fn(matches[i].first, matches[i].second);
    }
  }
};

struct Frame {
  Pose pose;
  bool registered = false;
};

struct Point3D {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  std::vector<std::pair<image_t, feature_t>> observations;
  Eigen::Matrix<uint8_t, 3, 1> color{128, 128, 128};
};

// Registered poses, 3D points and the bidirectional observation index.
// Mutations go through the member functions so both directions stay in sync.
class Reconstruction {
 public:
  std::map<image_t, Frame> frames;
  std::map<point3d_t, Point3D> points;

  image_t init_image_a = -1;
  image_t init_image_b = -1;

  bool IsRegistered(image_t image) const {
    const auto it = frames.find(image);
    return it != frames.end() && it->second.registered;
  }

  void SetPose(image_t image, const Pose& pose) {
    auto& frame = frames[image];
    frame.pose = pose;
    frame.registered = true;
  }

  void Deregister(image_t image) { frames[image].registered = false; }

  size_t NumRegistered() const {
    size_t count = 0;
    for (const auto& [id, frame] : frames) count += frame.registered;
    return count;
  }

  std::vector<image_t> RegisteredImages() const {
    std::vector<image_t> ids;
    for (const auto& [id, frame] : frames) {
      if (frame.registered) ids.push_back(id);
    }
    return ids;
  }

  point3d_t FindPoint(image_t image, feature_t feature) const {
    const auto it = observation_index_.find({image, feature});
    return it == observation_index_.end() ? kInvalidPoint3d : it->second;
  }

  point3d_t AddPoint(const Eigen::Vector3d& position) {
    const point3d_t id = next_point_id_++;
    points[id].position = position;
    return id;
  }

  void AddObservation(point3d_t point, image_t image, feature_t feature) {
    if (FindPoint(image, feature) != kInvalidPoint3d) {
      throw std::logic_error("AddObservation: feature already owns a point");
    }
    points.at(point).observations.emplace_back(image, feature);
    observation_index_[{image, feature}] = point;
  }

  void RemoveObservation(point3d_t point, image_t image, feature_t feature) {
    auto& obs = points.at(point).observations;
    for (auto it = obs.begin(); it != obs.end(); ++it) {
      if (it->first == image && it->second == feature) {
        obs.erase(it);
        observation_index_.erase({image, feature});
        return;
      }
    }
    throw std::logic_error("RemoveObservation: observation not found");
  }

  void RemovePoint(point3d_t point) {
    for (const auto& [image, feature] : points.at(point).observations) {
      observation_index_.erase({image, feature});
    }
    points.erase(point);
  }

  // Drops every observation of `image` (used by keyframe simulation tests;
  // the pipeline itself only deregisters through correction rollback).
  void RemoveImageObservations(image_t image) {
    std::vector<std::pair<point3d_t, feature_t>> doomed;
    for (const auto& [key, point] : observation_index_) {
      if (key.first == image) doomed.emplace_back(point, key.second);
    }
    for (const auto& [point, feature] : doomed) {
      RemoveObservation(point, image, feature);
    }
  }

  const std::map<std::pair<image_t, feature_t>, point3d_t>& Observations()
      const {
    return observation_index_;
  }

  // Bidirectional-index consistency plus the >=2-registered-observer rule.
  void CheckInvariants() const {
    size_t total_obs = 0;
    for (const auto& [pid, point] : points) {
      size_t registered_obs = 0;
      for (const auto& [image, feature] : point.observations) {
        ++total_obs;
        const auto it = observation_index_.find({image, feature});
        if (it == observation_index_.end() || it->second != pid) {
          throw std::runtime_error("Reconstruction: index out of sync");
        }
        if (IsRegistered(image)) ++registered_obs;
      }
      if (registered_obs < 2) {
        throw std::runtime_error(
            "Reconstruction: point with fewer than two registered observers");
      }
    }
    if (total_obs != observation_index_.size()) {
      throw std::runtime_error("Reconstruction: dangling observation index");
    }
  }

 private:
  std::map<std::pair<image_t, feature_t>, point3d_t> observation_index_;
  point3d_t next_point_id_ = 0;
};

}  // namespace ecsfm
