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

#include "ecsfm/matcher.hpp"
#include "ecsfm/two_view.hpp"
#include "test_helpers.hpp"

using namespace ecsfm;

namespace {

std::vector<FeatureMatch> IdentityMatches(int count) {
  std::vector<FeatureMatch> matches;
  for (int i = 0; i < count; ++i) matches.emplace_back(i, i);
  return matches;
}

FeatureSet MakeFloatFeatures(image_t id, int count, int dim, uint64_t seed,
                             double noise = 0.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  FeatureSet features;
  features.image_id = id;
  features.descriptor_type = DescriptorType::kFloat32;
  features.descriptor_dim = dim;
  for (int i = 0; i < count; ++i) {
    features.keypoints.emplace_back(10.0 + i, 10.0);
    for (int d = 0; d < dim; ++d) {
      features.float_descriptors.push_back(
          static_cast<float>(normal(rng) + noise * normal(rng)));
    }
  }
  return features;
}

}  // namespace

TEST_CASE("Five-point solver recovers the essential matrix on exact data") {
  std::mt19937_64 rng(11);
  int solved = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto scene = testing::MakeTwoViewScene(1000 + trial, 5);
    std::vector<Eigen::Vector3d> xa, xb;
    for (int k = 0; k < 5; ++k) {
      xa.push_back(scene.camera.Normalize(scene.pixels_a[k]));
      xb.push_back(scene.camera.Normalize(scene.pixels_b[k]));
    }
    const auto candidates = SolveEssentialFivePoint(xa, xb);
    REQUIRE_FALSE(candidates.empty());

    // Ground-truth essential matrix for X_b = R X_a + t.
    const Eigen::Matrix3d r_rel =
        scene.pose_a.RelativeRotationTo(scene.pose_b);
    const Eigen::Vector3d t_rel =
        scene.pose_a.RelativeTranslationTo(scene.pose_b).normalized();
    Eigen::Matrix3d e_true = Skew(t_rel) * r_rel;
    e_true /= e_true.norm();

    double best = 1e9;
    for (const auto& e : candidates) {
      best = std::min(best, std::min((e - e_true).norm(), (e + e_true).norm()));
      // Internal constraints must hold for every candidate.
      CHECK(std::abs(e.determinant()) < 1e-8);
      const Eigen::Matrix3d trace_constraint =
          2.0 * e * e.transpose() * e - (e * e.transpose()).trace() * e;
      CHECK(trace_constraint.norm() < 1e-6);
    }
    if (best < 1e-7) ++solved;
  }
  CHECK(solved >= 48);  // allow numerically awkward configurations
  (void)rng;
}

TEST_CASE("EstimateTwoView recovers pose on a noise-free pair") {
  const auto scene = testing::MakeTwoViewScene(5, 120);
  const auto fa = testing::FeaturesFromPixels(0, scene.pixels_a);
  const auto fb = testing::FeaturesFromPixels(1, scene.pixels_b);
  GeometryConfig config;

  const auto result = EstimateTwoView(fa, fb, IdentityMatches(120),
                                      scene.camera, scene.camera, config, 99);
  REQUIRE(result.ok());
  CHECK(result.inlier_count >= 115);

  const Eigen::Matrix3d r_true = scene.pose_a.RelativeRotationTo(scene.pose_b);
  const Eigen::Vector3d t_true =
      scene.pose_a.RelativeTranslationTo(scene.pose_b).normalized();
  CHECK(RotationAngle(result.relative_rotation, r_true) < 1e-3);
  CHECK((result.relative_translation_dir - t_true).norm() < 1e-3);
  CHECK(result.mean_epipolar_residual < 0.1);
}

TEST_CASE("EstimateTwoView flags a pure-rotation pair as degenerate") {
  const auto scene = testing::MakeTwoViewScene(6, 100, /*baseline=*/0.0,
                                               /*rotation_angle=*/0.2);
  const auto fa = testing::FeaturesFromPixels(0, scene.pixels_a);
  const auto fb = testing::FeaturesFromPixels(1, scene.pixels_b);
  GeometryConfig config;

  const auto result = EstimateTwoView(fa, fb, IdentityMatches(100),
                                      scene.camera, scene.camera, config, 3);
  CHECK(result.status == TwoViewStatus::kDegenerate);
}

TEST_CASE("EstimateTwoView keeps precision >= 0.95 with 30% outliers") {
  const auto scene = testing::MakeTwoViewScene(7, 200);
  auto fa = testing::FeaturesFromPixels(0, scene.pixels_a);
  auto fb = testing::FeaturesFromPixels(1, scene.pixels_b);

  // Corrupt 30% of the matches by pairing distant features.
  std::mt19937_64 rng(17);
  auto matches = IdentityMatches(200);
  std::vector<bool> is_outlier(200, false);
  std::uniform_int_distribution<int> pick(0, 199);
  for (int k = 0; k < 60; ++k) {
    int other = pick(rng);
    while (std::abs(other - k * 3 % 200) < 3) other = pick(rng);
    matches[k * 3 % 200].second = other;
    is_outlier[k * 3 % 200] = true;
  }

  GeometryConfig config;
  const auto result = EstimateTwoView(fa, fb, matches, scene.camera,
                                      scene.camera, config, 1234);
  REQUIRE(result.ok());

  int true_positive = 0, false_positive = 0;
  for (int k = 0; k < 200; ++k) {
    if (!result.inliers[k]) continue;
    if (is_outlier[k]) {
      ++false_positive;
    } else {
      ++true_positive;
    }
  }
  const double precision =
      double(true_positive) / double(true_positive + false_positive);
  CHECK(precision >= 0.95);
  CHECK(true_positive >= 120);
}

TEST_CASE("EstimateTwoView errors on tiny or junk inputs") {
  const auto scene = testing::MakeTwoViewScene(8, 30);
  const auto fa = testing::FeaturesFromPixels(0, scene.pixels_a);
  const auto fb = testing::FeaturesFromPixels(1, scene.pixels_b);
  GeometryConfig config;

  CHECK(EstimateTwoView(fa, fb, IdentityMatches(7), scene.camera, scene.camera,
                        config, 1)
            .status == TwoViewStatus::kTooFewMatches);

  // Random junk correspondences should not reach 15 coherent inliers.
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> u(0.0, 639.0), v(0.0, 479.0);
  std::vector<Eigen::Vector2d> junk_a, junk_b;
  for (int i = 0; i < 40; ++i) {
    junk_a.emplace_back(u(rng), v(rng));
    junk_b.emplace_back(u(rng), v(rng));
  }
  const auto ja = testing::FeaturesFromPixels(0, junk_a);
  const auto jb = testing::FeaturesFromPixels(1, junk_b);
  const auto result = EstimateTwoView(ja, jb, IdentityMatches(40), scene.camera,
                                      scene.camera, config, 2);
  CHECK_FALSE(result.ok());
}

TEST_CASE("EstimateTwoView is scale-free in the baseline") {
  GeometryConfig config;
  TwoViewResult results[2];
  for (int which = 0; which < 2; ++which) {
    // Same seed => same camera directions and point cloud; only the baseline
    // length differs.
    auto scene = testing::MakeTwoViewScene(321, 100,
                                           which == 0 ? 0.8 : 2.4);
    const auto fa = testing::FeaturesFromPixels(0, scene.pixels_a);
    const auto fb = testing::FeaturesFromPixels(1, scene.pixels_b);
    results[which] = EstimateTwoView(fa, fb, IdentityMatches(100), scene.camera,
                                     scene.camera, config, 555);
    REQUIRE(results[which].ok());
  }
  CHECK(RotationAngle(results[0].relative_rotation,
                      results[1].relative_rotation) < 1e-9);
  CHECK((results[0].relative_translation_dir -
         results[1].relative_translation_dir)
            .norm() < 1e-9);
}

TEST_CASE("TriangulateTwoView intersects exact rays") {
  Pose pose_a, pose_b;
  pose_a.center = Eigen::Vector3d(-1.0, 0.0, 0.0);
  pose_b.center = Eigen::Vector3d(1.0, 0.0, 0.0);
  const Eigen::Vector3d target(0.0, 0.0, 5.0);
  const auto point = TriangulateTwoView(
      pose_a, pose_b, (target - pose_a.center).normalized(),
      (target - pose_b.center).normalized());
  REQUIRE(point.has_value());
  CHECK((*point - target).norm() < 1e-9);
}

TEST_CASE("TriangulateTwoView rejects parallel rays and low angles") {
  Pose pose_a, pose_b;
  pose_b.center = Eigen::Vector3d(1.0, 0.0, 0.0);
  const Eigen::Vector3d dir = Eigen::Vector3d(0.1, 0.0, 1.0).normalized();
  CHECK_FALSE(TriangulateTwoView(pose_a, pose_b, dir, dir).has_value());

  // Unit baseline: ~2.3 degrees of parallax at depth 25, ~0.4 at depth 150.
  const Eigen::Vector3d far_point(0.0, 0.0, 25.0);
  const auto wide = TriangulateTwoView(
      pose_a, pose_b, (far_point - pose_a.center).normalized(),
      (far_point - pose_b.center).normalized(), 1.5 * M_PI / 180.0);
  CHECK(wide.has_value());
  const Eigen::Vector3d very_far(0.0, 0.0, 150.0);
  const auto narrow = TriangulateTwoView(
      pose_a, pose_b, (very_far - pose_a.center).normalized(),
      (very_far - pose_b.center).normalized(), 1.5 * M_PI / 180.0);
  CHECK_FALSE(narrow.has_value());
}

namespace {

// Independent oracle: Gauss-Newton refinement of the point minimizing the
// perpendicular distances to both rays, with numeric Jacobians.
Eigen::Vector3d RefineTwoViewPoint(const Pose& pose_a, const Pose& pose_b,
                                   const Eigen::Vector3d& ra,
                                   const Eigen::Vector3d& rb,
                                   Eigen::Vector3d x) {
  auto residual = [&](const Eigen::Vector3d& p) {
    Eigen::Matrix<double, 6, 1> r;
    r.head<3>() = (p - pose_a.center).normalized().cross(ra);
    r.tail<3>() = (p - pose_b.center).normalized().cross(rb);
    return r;
  };
  for (int iter = 0; iter < 50; ++iter) {
    const auto r0 = residual(x);
    Eigen::Matrix<double, 6, 3> jac;
    const double h = 1e-6;
    for (int d = 0; d < 3; ++d) {
      Eigen::Vector3d xp = x, xm = x;
      xp(d) += h;
      xm(d) -= h;
      jac.col(d) = (residual(xp) - residual(xm)) / (2.0 * h);
    }
    const Eigen::Vector3d step =
        (jac.transpose() * jac + 1e-12 * Eigen::Matrix3d::Identity())
            .ldlt()
            .solve(-jac.transpose() * r0);
    x += step;
    if (step.norm() < 1e-12) break;
  }
  return x;
}

}  // namespace

TEST_CASE("TriangulateTwoView stays near the nonlinear refinement oracle") {
  std::mt19937_64 rng(91);
  std::normal_distribution<double> noise(0.0, 1e-3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto scene = testing::MakeTwoViewScene(2000 + trial, 1, 2.0);
    const Eigen::Vector3d target = scene.points[0];
    Eigen::Vector3d ra = (target - scene.pose_a.center).normalized();
    Eigen::Vector3d rb = (target - scene.pose_b.center).normalized();
    ra = (ra + Eigen::Vector3d(noise(rng), noise(rng), noise(rng))).normalized();
    rb = (rb + Eigen::Vector3d(noise(rng), noise(rng), noise(rng))).normalized();

    const auto point = TriangulateTwoView(scene.pose_a, scene.pose_b, ra, rb);
    if (!point) continue;
    const Eigen::Vector3d refined =
        RefineTwoViewPoint(scene.pose_a, scene.pose_b, ra, rb, *point);
    // The midpoint solution must lie within a small neighborhood of the
    // nonlinear optimum relative to the scene depth.
    CHECK((*point - refined).norm() < 0.05 * (target.norm() + 1.0));
  }
}

TEST_CASE("V_error vanishes for exact geometry") {
  for (int trial = 0; trial < 100; ++trial) {
    const auto scene = testing::MakeTwoViewScene(3000 + trial, 1, 1.5);
    const Eigen::Vector3d x = scene.points[0];
    const auto v = ComputeVError(scene.pose_a, scene.pose_b,
                                 (x - scene.pose_a.center).normalized(),
                                 (x - scene.pose_b.center).normalized());
    REQUIRE(v.status == VErrorStatus::kOk);
    CHECK(std::abs(v.value) <= 1e-12);
  }
}

TEST_CASE("V_error respects the bearing-noise bound |n1|") {
  std::mt19937_64 rng(101);
  std::normal_distribution<double> normal(0.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 2000; ++trial) {
    const auto scene = testing::MakeTwoViewScene(4000 + trial % 200, 1, 1.5);
    const Eigen::Vector3d x = scene.points[0];
    const Eigen::Vector3d r1 = (x - scene.pose_a.center).normalized();
    const Eigen::Vector3d r2 = (x - scene.pose_b.center).normalized();
    Eigen::Vector3d n1(normal(rng), normal(rng), normal(rng));
    n1 = 0.01 * n1.normalized();

    const auto v = ComputeVError(scene.pose_a, scene.pose_b, r1 + n1, r2);
    if (v.status != VErrorStatus::kOk) continue;
    worst = std::max(worst, std::abs(v.value));
    CHECK(std::abs(v.value) <= 0.01 + 1e-12);
  }
  CHECK(worst > 1e-5);  // the bound is non-vacuous
}

TEST_CASE("V_error respects the translation-noise bound |nt|/sin(theta)") {
  std::mt19937_64 rng(103);
  for (int trial = 0; trial < 2000; ++trial) {
    const auto scene = testing::MakeTwoViewScene(5000 + trial % 200, 1, 1.5);
    const Eigen::Vector3d x = scene.points[0];
    const Eigen::Vector3d r1 = (x - scene.pose_a.center).normalized();
    const Eigen::Vector3d r2 = (x - scene.pose_b.center).normalized();

    // Perturb the baseline direction on the unit sphere so that
    // t* = t + n_t stays unit-norm, as in the derivation.
    const Eigen::Vector3d t =
        (scene.pose_b.center - scene.pose_a.center).normalized();
    const Eigen::Vector3d axis = testing::RandomUnitVector(rng);
    const double delta = 0.01;
    const Eigen::Vector3d t_star =
        Eigen::AngleAxisd(delta, axis.cross(t).normalized()).toRotationMatrix() *
        t;
    const Eigen::Vector3d n_t = t_star - t;

    Pose perturbed_b = scene.pose_b;
    perturbed_b.center =
        scene.pose_a.center +
        t_star * (scene.pose_b.center - scene.pose_a.center).norm();

    const auto v = ComputeVError(scene.pose_a, perturbed_b, r1, r2);
    if (v.status != VErrorStatus::kOk) continue;
    const double bound = n_t.norm() / v.sin_theta;
    CHECK(std::abs(v.value) <= bound + 1e-9);
  }
}

TEST_CASE("V_error flags zero baselines and undefined directions") {
  Pose pose_a, pose_b;
  pose_b.center = Eigen::Vector3d(1e-12, 0.0, 0.0);
  const auto zero = ComputeVError(pose_a, pose_b, Eigen::Vector3d::UnitZ(),
                                  Eigen::Vector3d::UnitZ());
  CHECK(zero.status == VErrorStatus::kZeroBaseline);

  pose_b.center = Eigen::Vector3d(1.0, 0.0, 0.0);
  const auto undef = ComputeVError(pose_a, pose_b, Eigen::Vector3d::UnitZ(),
                                   Eigen::Vector3d::UnitX());
  CHECK(undef.status == VErrorStatus::kUndefined);
}

TEST_CASE("V_error zero sets agree under role swap on exact geometry") {
  for (int trial = 0; trial < 100; ++trial) {
    const auto scene = testing::MakeTwoViewScene(6000 + trial, 1, 1.2);
    const Eigen::Vector3d x = scene.points[0];
    const Eigen::Vector3d r1 = (x - scene.pose_a.center).normalized();
    const Eigen::Vector3d r2 = (x - scene.pose_b.center).normalized();
    const auto fwd = ComputeVError(scene.pose_a, scene.pose_b, r1, r2);
    const auto bwd = ComputeVError(scene.pose_b, scene.pose_a, r2, r1);
    if (fwd.status != VErrorStatus::kOk || bwd.status != VErrorStatus::kOk) {
      continue;
    }
    CHECK(std::abs(fwd.value) <= 1e-12);
    CHECK(std::abs(bwd.value) <= 1e-12);
  }
}

TEST_CASE("Pair consistency accepts exact poses and rejects drifted ones") {
  const auto scene = testing::MakeTwoViewScene(71, 100, 2.0);
  auto fa = testing::FeaturesFromPixels(0, scene.pixels_a);
  auto fb = testing::FeaturesFromPixels(1, scene.pixels_b);

  // 1% bearing-scale noise ~ a couple of pixels at f = 500.
  std::mt19937_64 rng(72);
  std::normal_distribution<double> px_noise(0.0, 1.0);
  for (auto& kp : fb.keypoints) {
    kp.x() = std::clamp(kp.x() + px_noise(rng), 0.0, 639.0);
    kp.y() = std::clamp(kp.y() + px_noise(rng), 0.0, 479.0);
  }

  GeometryConfig config;
  ConsistencyInput input;
  input.intrinsics_i = &scene.camera;
  input.intrinsics_j = &scene.camera;
  input.pose_i = &scene.pose_a;
  input.pose_j = &scene.pose_b;
  input.features_i = &fa;
  input.features_j = &fb;
  input.image_i = 0;
  input.image_j = 1;

  const auto consistent =
      CheckPairConsistency(input, IdentityMatches(100), nullptr, config);
  CHECK(consistent.verdict == ConsistencyVerdict::kConsistent);
  CHECK(consistent.bad_fraction < 0.05);

  // Translate frame b by ~10% of the scene diameter.
  Pose drifted = scene.pose_b;
  drifted.center += Eigen::Vector3d(1.5, 0.0, 0.0);
  input.pose_j = &drifted;
  const auto inconsistent =
      CheckPairConsistency(input, IdentityMatches(100), nullptr, config);
  CHECK(inconsistent.verdict == ConsistencyVerdict::kInconsistent);

  CHECK_THROWS_AS(
      CheckPairConsistency(input, IdentityMatches(10), nullptr, config),
      std::invalid_argument);
}

TEST_CASE("MatchDescriptors identity and disjoint cases") {
  const auto features = MakeFloatFeatures(0, 40, 16, 5);
  const auto self_matches = MatchDescriptors(features, features, 0.8);
  REQUIRE(self_matches.size() == 40);
  for (const auto& [i, j] : self_matches) CHECK(i == j);

  const auto other = MakeFloatFeatures(1, 40, 16, 999);
  // Two independent Gaussian clouds in 16-D are far apart relative to their
  // nearest-neighbor margins, so the ratio test wipes out all pairs.
  const auto cross_matches = MatchDescriptors(features, other, 0.8);
  CHECK(cross_matches.size() <= 2);

  FeatureSet bytes;
  bytes.descriptor_type = DescriptorType::kUint8;
  bytes.descriptor_dim = 16;
  CHECK_THROWS_AS(MatchDescriptors(features, bytes, 0.8),
                  std::invalid_argument);
}

TEST_CASE("MatchDescriptors recovers >= 95% of a known correspondence") {
  // Shared per-point codes plus small observation noise; the second image
  // stores the features in a shuffled order.
  const int count = 120, dim = 32;
  std::mt19937_64 rng(8);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<float>> codes(count, std::vector<float>(dim));
  for (auto& code : codes) {
    for (auto& v : code) v = static_cast<float>(normal(rng));
  }

  std::vector<int> permutation(count);
  std::iota(permutation.begin(), permutation.end(), 0);
  std::shuffle(permutation.begin(), permutation.end(), rng);

  FeatureSet a, b;
  a.image_id = 0;
  b.image_id = 1;
  a.descriptor_type = b.descriptor_type = DescriptorType::kFloat32;
  a.descriptor_dim = b.descriptor_dim = dim;
  std::normal_distribution<double> obs_noise(0.0, 0.05);
  for (int i = 0; i < count; ++i) {
    a.keypoints.emplace_back(i, 0.0);
    b.keypoints.emplace_back(i, 1.0);
    for (int d = 0; d < dim; ++d) {
      a.float_descriptors.push_back(codes[i][d] +
                                    static_cast<float>(obs_noise(rng)));
      b.float_descriptors.push_back(codes[permutation[i]][d] +
                                    static_cast<float>(obs_noise(rng)));
    }
  }

  const auto matches = MatchDescriptors(a, b, 0.8);
  int correct = 0;
  for (const auto& [i, j] : matches) {
    if (permutation[j] == i) ++correct;
  }
  CHECK(matches.size() >= 100);
  CHECK(double(correct) >= 0.95 * double(matches.size()));
}

TEST_CASE("Byte descriptors match under Hamming distance") {
  FeatureSet a, b;
  a.image_id = 0;
  b.image_id = 1;
  a.descriptor_type = b.descriptor_type = DescriptorType::kUint8;
  a.descriptor_dim = b.descriptor_dim = 8;
  std::mt19937_64 rng(55);
  std::uniform_int_distribution<int> byte(0, 255);
  for (int i = 0; i < 30; ++i) {
    a.keypoints.emplace_back(i, 0.0);
    b.keypoints.emplace_back(i, 1.0);
    std::vector<uint8_t> code(8);
    for (auto& c : code) c = static_cast<uint8_t>(byte(rng));
    for (int d = 0; d < 8; ++d) a.byte_descriptors.push_back(code[d]);
    std::vector<uint8_t> noisy = code;
    noisy[0] ^= 1;  // flip one bit
    for (int d = 0; d < 8; ++d) b.byte_descriptors.push_back(noisy[d]);
  }
  const auto matches = MatchDescriptors(a, b, 0.8);
  CHECK(matches.size() >= 28);
  for (const auto& [i, j] : matches) CHECK(i == j);
}
