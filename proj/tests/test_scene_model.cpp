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

#include <catch2/catch_amalgamated.hpp>

#include "ecsfm/types.hpp"
#include "test_helpers.hpp"

using namespace ecsfm;

TEST_CASE("Project maps the principal-axis point to the principal point") {
  CameraIntrinsics camera;
  camera.fx = camera.fy = 100.0;
  camera.cx = camera.cy = 50.0;
  camera.width = camera.height = 100;

  const auto pixel = Project(camera, Pose::Identity(), {0.0, 0.0, 1.0});
  REQUIRE(pixel.has_value());
  CHECK(pixel->x() == Catch::Approx(50.0));
  CHECK(pixel->y() == Catch::Approx(50.0));
}

TEST_CASE("Project rejects negative depth") {
  CameraIntrinsics camera;
  camera.fx = camera.fy = 100.0;
  camera.cx = camera.cy = 50.0;
  camera.width = camera.height = 100;
  CHECK_FALSE(Project(camera, Pose::Identity(), {0.0, 0.0, -1.0}).has_value());
}

TEST_CASE("Project agrees with a direct 3x4 projection-matrix oracle") {
  std::mt19937_64 rng(7);
  const auto camera = testing::DefaultCamera();
  std::uniform_real_distribution<double> span(-2.0, 2.0);
  std::uniform_real_distribution<double> depth(3.0, 20.0);

  int checked = 0;
  for (int trial = 0; trial < 500; ++trial) {
    Pose pose;
    pose.rotation = testing::RandomRotation(rng, 0.3);
    pose.center = Eigen::Vector3d(span(rng), span(rng), -1.0);

    const Eigen::Vector3d point(span(rng), span(rng), depth(rng));

    // Independent oracle: P = K [R | -R C], projected homogeneously.
    Eigen::Matrix<double, 3, 4> p;
    p.leftCols<3>() = pose.rotation;
    p.col(3) = -pose.rotation * pose.center;
    p = camera.K() * p;
    const Eigen::Vector3d h = p * point.homogeneous();
    if (h.z() <= 0.0) continue;
    const Eigen::Vector2d expected = h.hnormalized();
    if (!camera.InBounds(expected)) continue;

    const auto pixel = Project(camera, pose, point);
    REQUIRE(pixel.has_value());
    CHECK((*pixel - expected).norm() < 1e-9);
    ++checked;
  }
  CHECK(checked > 100);
}

TEST_CASE("Bearing at the principal point is the optical axis") {
  const auto camera = testing::DefaultCamera();
  const Eigen::Vector3d bearing =
      Bearing(camera, Pose::Identity(), {camera.cx, camera.cy});
  CHECK((bearing - Eigen::Vector3d::UnitZ()).norm() < 1e-12);
}

TEST_CASE("Bearing under a 90-degree yaw gives a rotated axis") {
  const auto camera = testing::DefaultCamera();
  Pose pose;
  pose.rotation =
      Eigen::AngleAxisd(M_PI / 2.0, Eigen::Vector3d::UnitY()).toRotationMatrix();
  const Eigen::Vector3d bearing = Bearing(camera, pose, {camera.cx, camera.cy});
  CHECK(bearing.norm() == Catch::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(bearing.x()) == Catch::Approx(1.0).margin(1e-12));
  CHECK(std::abs(bearing.y()) < 1e-12);
  CHECK(std::abs(bearing.z()) < 1e-12);
}

TEST_CASE("Bearing matches a step-by-step normalization oracle") {
  std::mt19937_64 rng(21);
  const auto camera = testing::DefaultCamera();
  std::uniform_real_distribution<double> u(0.0, camera.width - 1.0);
  std::uniform_real_distribution<double> v(0.0, camera.height - 1.0);

  for (int trial = 0; trial < 200; ++trial) {
    Pose pose;
    pose.rotation = testing::RandomRotation(rng);
    pose.center = testing::RandomUnitVector(rng) * 5.0;
    const Eigen::Vector2d keypoint(u(rng), v(rng));

    // Oracle composed step by step: lift to the normalized plane, unit-norm,
    // then rotate into the world frame.
    Eigen::Vector3d ray((keypoint.x() - camera.cx) / camera.fx,
                        (keypoint.y() - camera.cy) / camera.fy, 1.0);
    ray /= ray.norm();
    const Eigen::Vector3d expected = pose.rotation.transpose() * ray;

    const Eigen::Vector3d bearing = Bearing(camera, pose, keypoint);
    CHECK(std::abs(bearing.norm() - 1.0) < 1e-12);
    CHECK((bearing - expected).norm() < 1e-12);
  }
}

TEST_CASE("Bearing of a projected point reproduces the ray direction") {
  std::mt19937_64 rng(33);
  const auto camera = testing::DefaultCamera();
  std::uniform_real_distribution<double> span(-2.0, 2.0);
  std::uniform_real_distribution<double> depth(3.0, 15.0);

  for (int trial = 0; trial < 200; ++trial) {
    Pose pose;
    pose.rotation = testing::RandomRotation(rng, 0.4);
    pose.center = Eigen::Vector3d(span(rng), span(rng), -2.0);
    const Eigen::Vector3d point(span(rng), span(rng), depth(rng));
    const auto pixel = Project(camera, pose, point);
    if (!pixel) continue;
    const Eigen::Vector3d bearing = Bearing(camera, pose, *pixel);
    const Eigen::Vector3d expected = (point - pose.center).normalized();
    CHECK((bearing - expected).norm() < 1e-9);
  }
}

TEST_CASE("Reconstruction keeps the observation index bidirectional") {
  Reconstruction recon;
  recon.SetPose(0, Pose::Identity());
  recon.SetPose(1, Pose::Identity());
  recon.SetPose(2, Pose::Identity());

  const point3d_t p0 = recon.AddPoint({0, 0, 5});
  recon.AddObservation(p0, 0, 10);
  recon.AddObservation(p0, 1, 11);
  recon.CheckInvariants();

  recon.AddObservation(p0, 2, 12);
  recon.CheckInvariants();

  CHECK(recon.FindPoint(0, 10) == p0);
  CHECK(recon.FindPoint(1, 11) == p0);
  CHECK(recon.FindPoint(1, 99) == kInvalidPoint3d);

  // A feature may own at most one point.
  const point3d_t p1 = recon.AddPoint({1, 0, 5});
  recon.AddObservation(p1, 0, 20);
  recon.AddObservation(p1, 1, 21);
  CHECK_THROWS_AS(recon.AddObservation(p1, 0, 10), std::logic_error);

  recon.RemoveObservation(p0, 2, 12);
  recon.CheckInvariants();
  CHECK(recon.FindPoint(2, 12) == kInvalidPoint3d);

  recon.RemovePoint(p0);
  CHECK(recon.FindPoint(0, 10) == kInvalidPoint3d);
  recon.CheckInvariants();
}

TEST_CASE("FeatureSet validates patch assignments and bounds") {
  const auto camera = testing::DefaultCamera();
  FeatureSet features;
  features.image_id = 0;
  features.keypoints = {{10.0, 10.0}, {630.0, 470.0}};
  features.AssignPatchIds(camera, 4);
  CHECK(features.patch_ids[0] == 0);
  CHECK(features.patch_ids[1] == 15);
  CHECK_NOTHROW(features.CheckInvariants(camera));

  features.keypoints.push_back({700.0, 10.0});
  features.patch_ids.push_back(0);
  CHECK_THROWS(features.CheckInvariants(camera));
}
