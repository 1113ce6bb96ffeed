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

#include <cstdint>

namespace ecsfm {

// Matching-stage parameters. Defaults follow the reference configuration:
// 5 initial retrieval neighbors, 50 maximum retrieval neighbors, a 20x20
// patch grid with 2 shared tracks per covisible patch pair.
struct MatchingConfig {
  int n_init = 5;             // initial retrieval neighbors per image
  int n_max = 50;             // retrieval budget per image, hard candidate cap
  int patch_grid = 20;        // N_p, patches per image axis
  int min_shared_tracks = 2;  // T, tracks required for a covisible patch pair
  int sigma = 3;              // covisibility distance threshold in patch hops
  int alg1_threshold = 50;    // t, matches into F required to join A_appr
  int vote_min = 10;          // retrieval votes required for the voting step
  int cluster_overlap = 100;  // o_min, inliers to stay in the current cluster
  int max_iterations = 5;
  double ratio = 0.8;         // Lowe ratio for descriptor matching
};

enum class RobustLossKind { kHuber, kCauchy };

// Two-view estimation and the epipolar consistency check.
struct GeometryConfig {
  double tau_px = 4.0;        // Sampson / reprojection threshold in pixels
  int min_inliers = 15;       // below this, estimation counts as failed
  int ransac_max_iterations = 1000;
  double ransac_confidence = 0.9999;
  double cheirality_quorum = 0.7;
  double homography_degenerate_ratio = 0.9;
  bool use_fundamental = false;  // 8-point fallback for untrusted intrinsics

  // V_error consistency test: a match is bad when |V_error| > a / lambda + b,
  // with lambda = 1 / max(sin(theta_nt), lambda_sin_floor).
  double verror_a = 0.02;
  double verror_b = 0.02;
  double theta_bad = 0.5;          // bad-fraction threshold for "inconsistent"
  double lambda_sin_floor = 0.1;
  double min_baseline = 1e-9;

  // Depth sanity bounds relative to the median existing depth of the pair.
  double depth_min_factor = 0.01;
  double depth_max_factor = 100.0;
  double rho_depth = 0.5;          // relative depth disagreement tolerance
};

// Incremental reconstruction.
struct ReconConfig {
  double alpha_min_deg = 1.5;      // minimum triangulation angle
  int min_pnp_inliers = 15;
  int min_next_view_points = 15;
  int local_ba_neighbors = 8;
  double gba_growth_factor = 1.1;  // GBA when registered count grows by this
  bool enable_correction = true;
  bool enable_kgba = true;
  int hierarchy_min_points = 50;   // frame level rule
  int redundancy_min_points = 50;  // keyframe redundancy rule
  bool verror_measured_bearings = true;  // else bearings of triangulated points

  // Test hook: per-registration multiplicative pose perturbation, accumulated
  // along the registration order to emulate odometry drift. Zero by default.
  double inject_drift_rot = 0.0;    // radians per registration
  double inject_drift_trans = 0.0;  // world units per registration
};

// Levenberg-Marquardt options shared by bundle adjustment and pose graph
// optimization.
struct SolverOptions {
  int max_iterations = 50;
  double function_tolerance = 1e-6;   // relative cost change
  double gradient_tolerance = 1e-10;  // max-norm of the gradient
  double initial_lambda = 1e-4;
  double max_lambda = 1e12;
  RobustLossKind loss = RobustLossKind::kHuber;
  double loss_scale = 8.0;  // pixels; 2 * tau_px by default
};

struct Config {
  MatchingConfig matching;
  GeometryConfig geometry;
  ReconConfig recon;
  SolverOptions solver;
  uint64_t seed = 42;
  int threads = 0;  // 0 = hardware concurrency

  SolverOptions BaOptions() const {
    SolverOptions options = solver;
    options.loss_scale = 2.0 * geometry.tau_px;
    return options;
  }
};

}  // namespace ecsfm
