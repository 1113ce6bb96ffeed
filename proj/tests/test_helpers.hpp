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
#include <random>
#include <vector>

#include "ecsfm/types.hpp"

namespace ecsfm::testing {

inline CameraIntrinsics DefaultCamera() {
  CameraIntrinsics camera;
  camera.fx = 500.0;
  camera.fy = 500.0;
  camera.cx = 320.0;
  camera.cy = 240.0;
  camera.width = 640;
  camera.height = 480;
  return camera;
}

inline Eigen::Matrix3d RandomRotation(std::mt19937_64& rng,
                                      double max_angle = M_PI) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::Vector3d axis(normal(rng), normal(rng), normal(rng));
  axis.normalize();
  std::uniform_real_distribution<double> angle_dist(-max_angle, max_angle);
  return Eigen::AngleAxisd(angle_dist(rng), axis).toRotationMatrix();
}

inline Eigen::Vector3d RandomUnitVector(std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::Vector3d v(normal(rng), normal(rng), normal(rng));
  return v.normalized();
}

// A two-camera setup observing a shared point cloud, with exact pixel
// correspondences. Cameras look roughly down +z towards the cloud.
struct TwoViewScene {
  CameraIntrinsics camera = DefaultCamera();
  Pose pose_a;
  Pose pose_b;
  std::vector<Eigen::Vector3d> points;
  std::vector<Eigen::Vector2d> pixels_a;
  std::vector<Eigen::Vector2d> pixels_b;
};

// Builds a scene with `count` points visible in both views. `baseline`
// separates the camera centers; zero gives a pure-rotation pair.
inline TwoViewScene MakeTwoViewScene(uint64_t seed, int count,
                                     double baseline = 1.0,
                                     double rotation_angle = 0.15) {
  std::mt19937_64 rng(seed);
  TwoViewScene scene;
  scene.pose_a = Pose::Identity();
  scene.pose_b.center = baseline * RandomUnitVector(rng);
  scene.pose_b.rotation =
      RandomRotation(rng, rotation_angle);

  std::uniform_real_distribution<double> span(-3.0, 3.0);
  std::uniform_real_distribution<double> depth(6.0, 14.0);
  while (static_cast<int>(scene.points.size()) < count) {
    const Eigen::Vector3d point(span(rng), span(rng), depth(rng));
    const auto pa = Project(scene.camera, scene.pose_a, point);
    const auto pb = Project(scene.camera, scene.pose_b, point);
    if (!pa || !pb) continue;
    scene.points.push_back(point);
    scene.pixels_a.push_back(*pa);
    scene.pixels_b.push_back(*pb);
  }
  return scene;
}

inline FeatureSet FeaturesFromPixels(image_t id,
                                     const std::vector<Eigen::Vector2d>& pixels) {
  FeatureSet features;
  features.image_id = id;
  features.keypoints = pixels;
  features.descriptor_dim = 0;
  return features;
}

}  // namespace ecsfm::testing
