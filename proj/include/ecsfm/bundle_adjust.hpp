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
#include <stdexcept>
#include <vector>

#include "ecsfm/config.hpp"
#include "ecsfm/parallel.hpp"
#include "ecsfm/so3.hpp"
#include "ecsfm/types.hpp"

namespace ecsfm {

// Reprojection problem over 6-dof poses (angle-axis increment on the
// rotation, camera center) and 3-dof points. Poses and points may be held
// constant; every observation ties one pose to one point.
class BAProblem {
 public:
  struct Observation {
    int pose_index;
    int point_index;
    Eigen::Vector2d pixel;
  };

  int AddPose(const Pose& pose, const CameraIntrinsics& intrinsics,
              bool constant = false) {
    poses_.push_back(pose);
    intrinsics_.push_back(intrinsics);
    constant_pose_.push_back(constant);
    return static_cast<int>(poses_.size()) - 1;
  }

  int AddPoint(const Eigen::Vector3d& point, bool constant = false) {
    points_.push_back(point);
    constant_point_.push_back(constant);
    return static_cast<int>(points_.size()) - 1;
  }

  void AddObservation(int pose_index, int point_index,
                      const Eigen::Vector2d& pixel) {
    if (pose_index < 0 || pose_index >= static_cast<int>(poses_.size()) ||
        point_index < 0 || point_index >= static_cast<int>(points_.size())) {
      throw std::invalid_argument("BAProblem: observation index out of range");
    }
    observations_.push_back({pose_index, point_index, pixel});
  }

  void SetPoseConstant(int pose_index, bool constant) {
    constant_pose_[pose_index] = constant;
  }
  void SetPointConstant(int point_index, bool constant) {
    constant_point_[point_index] = constant;
  }

  size_t NumPoses() const { return poses_.size(); }
  size_t NumPoints() const { return points_.size(); }
  size_t NumObservations() const { return observations_.size(); }
  size_t NumVariablePoses() const {
    size_t n = 0;
    for (const bool c : constant_pose_) n += !c;
    return n;
  }
  size_t NumVariablePoints() const {
    size_t n = 0;
    for (const bool c : constant_point_) n += !c;
    return n;
  }

  const Pose& GetPose(int index) const { return poses_[index]; }
  const Eigen::Vector3d& GetPoint(int index) const { return points_[index]; }
  const CameraIntrinsics& GetIntrinsics(int index) const {
    return intrinsics_[index];
  }
  const std::vector<Observation>& Observations() const {
    return observations_;
  }
  bool IsPoseConstant(int index) const { return constant_pose_[index]; }
  bool IsPointConstant(int index) const { return constant_point_[index]; }

  std::vector<Pose>& MutablePoses() { return poses_; }
  std::vector<Eigen::Vector3d>& MutablePoints() { return points_; }

  // Unbounded reprojection residual (observed is subtracted) and analytic
  // Jacobians with respect to the local pose increment [omega, dC] and the
  // point. Exposed for the finite-difference correctness tests.
  void EvaluateObservation(size_t obs_index, const std::vector<Pose>& poses,
                           const std::vector<Eigen::Vector3d>& points,
                           Eigen::Vector2d* residual,
                           Eigen::Matrix<double, 2, 6>* jac_pose,
                           Eigen::Matrix<double, 2, 3>* jac_point) const {
    const Observation& obs = observations_[obs_index];
    const Pose& pose = poses[obs.pose_index];
    const CameraIntrinsics& camera = intrinsics_[obs.pose_index];
    const Eigen::Vector3d cam = pose.WorldToCamera(points[obs.point_index]);
    const double z = cam.z();
    const double inv_z = 1.0 / z;
    (*residual)(0) = camera.fx * cam.x() * inv_z + camera.cx - obs.pixel.x();
    (*residual)(1) = camera.fy * cam.y() * inv_z + camera.cy - obs.pixel.y();

    if (jac_pose == nullptr && jac_point == nullptr) return;
    Eigen::Matrix<double, 2, 3> d_pixel_d_cam;
    d_pixel_d_cam << camera.fx * inv_z, 0.0, -camera.fx * cam.x() * inv_z * inv_z,
        0.0, camera.fy * inv_z, -camera.fy * cam.y() * inv_z * inv_z;
    if (jac_pose != nullptr) {
      // Left-multiplicative rotation increment: R <- Exp(omega) R.
      jac_pose->leftCols<3>() = d_pixel_d_cam * (-Skew(cam));
      jac_pose->rightCols<3>() = d_pixel_d_cam * (-pose.rotation);
    }
    if (jac_point != nullptr) {
      *jac_point = d_pixel_d_cam * pose.rotation;
    }
  }

 private:
  std::vector<Pose> poses_;
  std::vector<CameraIntrinsics> intrinsics_;
  std::vector<bool> constant_pose_;
  std::vector<bool> constant_point_;
  std::vector<Observation> observations_;
};

enum class SolverStatus { kConverged, kMaxIterations, kDiverged };

struct SolverSummary {
  SolverStatus status = SolverStatus::kMaxIterations;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  std::vector<double> cost_history;  // accepted steps, strictly decreasing
  double final_gradient_norm = 0.0;

  bool converged() const { return status == SolverStatus::kConverged; }
};

namespace internal {

// rho'(s) for the robust kernel on squared residual norms.
inline double RobustWeight(RobustLossKind loss, double scale, double s) {
  const double scale2 = scale * scale;
  switch (loss) {
    case RobustLossKind::kHuber:
      return s <= scale2 ? 1.0 : scale / std::sqrt(s);
    case RobustLossKind::kCauchy:
      return 1.0 / (1.0 + s / scale2);
  }
  return 1.0;
}

inline double RobustCost(RobustLossKind loss, double scale, double s) {
  const double scale2 = scale * scale;
  switch (loss) {
    case RobustLossKind::kHuber:
      return s <= scale2 ? s : 2.0 * scale * std::sqrt(s) - scale2;
    case RobustLossKind::kCauchy:
      return scale2 * std::log1p(s / scale2);
  }
  return s;
}

}  // namespace internal

// Sparse Levenberg-Marquardt with Schur elimination of the points; the
// reduced camera system is solved by dense Cholesky. Accepted steps strictly
// decrease the robustified cost. On divergence the problem is left at its
// best accepted state (the initial values if no step was accepted).
inline SolverSummary BundleAdjust(BAProblem& problem,
                                  const SolverOptions& options,
                                  int threads = 1) {
  if (problem.NumVariablePoses() + problem.NumVariablePoints() == 0 ||
      problem.NumObservations() == 0) {
    throw std::invalid_argument("BundleAdjust: nothing to optimize");
  }

  const size_t num_obs = problem.NumObservations();
  std::vector<Pose> poses = problem.MutablePoses();
  std::vector<Eigen::Vector3d> points = problem.MutablePoints();

  // Variable indexing.
  std::vector<int> pose_var(problem.NumPoses(), -1);
  std::vector<int> point_var(problem.NumPoints(), -1);
  int num_pose_vars = 0, num_point_vars = 0;
  for (size_t i = 0; i < problem.NumPoses(); ++i) {
    if (!problem.IsPoseConstant(static_cast<int>(i))) {
      pose_var[i] = num_pose_vars++;
    }
  }
  for (size_t j = 0; j < problem.NumPoints(); ++j) {
    if (!problem.IsPointConstant(static_cast<int>(j))) {
      point_var[j] = num_point_vars++;
    }
  }

  auto evaluate_cost = [&](const std::vector<Pose>& p,
                           const std::vector<Eigen::Vector3d>& x) {
    std::vector<double> partial(num_obs);
    ParallelFor(num_obs, threads, [&](size_t k) {
      Eigen::Vector2d r;
      problem.EvaluateObservation(k, p, x, &r, nullptr, nullptr);
      partial[k] = internal::RobustCost(options.loss, options.loss_scale,
                                        r.squaredNorm());
    });
    double cost = 0.0;
    for (const double c : partial) cost += c;
    return 0.5 * cost;
  };

  SolverSummary summary;
  summary.initial_cost = evaluate_cost(poses, points);
  summary.cost_history.push_back(summary.initial_cost);
  double cost = summary.initial_cost;
  double lambda = options.initial_lambda;

  std::vector<Eigen::Vector2d> residuals(num_obs);
  std::vector<Eigen::Matrix<double, 2, 6>> jac_poses(num_obs);
  std::vector<Eigen::Matrix<double, 2, 3>> jac_points(num_obs);
  std::vector<double> weights(num_obs);

  const int pose_dim = 6 * num_pose_vars;
  Eigen::MatrixXd schur(pose_dim, pose_dim);
  Eigen::VectorXd schur_rhs(pose_dim);

  for (int iteration = 0; iteration < options.max_iterations; ++iteration) {
    summary.iterations = iteration + 1;

    ParallelFor(num_obs, threads, [&](size_t k) {
      problem.EvaluateObservation(k, poses, points, &residuals[k],
                                  &jac_poses[k], &jac_points[k]);
      weights[k] = internal::RobustWeight(options.loss, options.loss_scale,
                                          residuals[k].squaredNorm());
    });

    // Normal-equation blocks.
    std::vector<Eigen::Matrix<double, 6, 6>> b_blocks(
        num_pose_vars, Eigen::Matrix<double, 6, 6>::Zero());
    std::vector<Eigen::Matrix3d> c_blocks(num_point_vars,
                                          Eigen::Matrix3d::Zero());
    std::vector<Eigen::Matrix<double, 6, 1>> g_pose(
        num_pose_vars, Eigen::Matrix<double, 6, 1>::Zero());
    std::vector<Eigen::Vector3d> g_point(num_point_vars,
                                         Eigen::Vector3d::Zero());
    // Off-diagonal pose-point blocks grouped per point.
    std::vector<std::vector<std::pair<int, Eigen::Matrix<double, 6, 3>>>>
        e_blocks(num_point_vars);

    const auto& observations = problem.Observations();
    for (size_t k = 0; k < num_obs; ++k) {
      const double w = weights[k];
      const int pv = pose_var[observations[k].pose_index];
      const int xv = point_var[observations[k].point_index];
      const Eigen::Vector2d wr = w * residuals[k];
      if (pv >= 0) {
        b_blocks[pv] += w * jac_poses[k].transpose() * jac_poses[k];
        g_pose[pv] += jac_poses[k].transpose() * wr;
      }
      if (xv >= 0) {
        c_blocks[xv] += w * jac_points[k].transpose() * jac_points[k];
        g_point[xv] += jac_points[k].transpose() * wr;
      }
      if (pv >= 0 && xv >= 0) {
        auto& list = e_blocks[xv];
        const Eigen::Matrix<double, 6, 3> e =
            w * jac_poses[k].transpose() * jac_points[k];
        bool merged = false;
        for (auto& [idx, block] : list) {
          if (idx == pv) {
            block += e;
            merged = true;
            break;
          }
        }
        if (!merged) list.emplace_back(pv, e);
      }
    }

    double gradient_norm = 0.0;
    for (const auto& g : g_pose) {
      gradient_norm = std::max(gradient_norm, g.template lpNorm<Eigen::Infinity>());
    }
    for (const auto& g : g_point) {
      gradient_norm = std::max(gradient_norm, g.lpNorm<Eigen::Infinity>());
    }
    summary.final_gradient_norm = gradient_norm;
    if (gradient_norm < options.gradient_tolerance) {
      summary.status = SolverStatus::kConverged;
      break;
    }

    bool accepted = false;
    while (lambda <= options.max_lambda) {
      // Damped point blocks and their inverses.
      std::vector<Eigen::Matrix3d> c_inv(num_point_vars);
      bool valid = true;
      for (int j = 0; j < num_point_vars; ++j) {
        Eigen::Matrix3d c = c_blocks[j];
        for (int d = 0; d < 3; ++d) {
          c(d, d) += lambda * std::max(c_blocks[j](d, d), 1e-12);
        }
        const Eigen::Matrix3d inv = c.inverse();
        if (!inv.allFinite()) {
          valid = false;
          break;
        }
        c_inv[j] = inv;
      }
      if (!valid) {
        lambda *= 10.0;
        continue;
      }

      // Reduced camera system S = B - E C^-1 E^T.
      schur.setZero();
      schur_rhs.setZero();
      for (int i = 0; i < num_pose_vars; ++i) {
        Eigen::Matrix<double, 6, 6> b = b_blocks[i];
        for (int d = 0; d < 6; ++d) {
          b(d, d) += lambda * std::max(b_blocks[i](d, d), 1e-12);
        }
        schur.block<6, 6>(6 * i, 6 * i) = b;
        schur_rhs.segment<6>(6 * i) = -g_pose[i];
      }
      for (int j = 0; j < num_point_vars; ++j) {
        const auto& list = e_blocks[j];
        for (const auto& [a, ea] : list) {
          const Eigen::Matrix<double, 6, 3> ea_cinv = ea * c_inv[j];
          schur_rhs.segment<6>(6 * a) += ea_cinv * g_point[j];
          for (const auto& [b, eb] : list) {
            schur.block<6, 6>(6 * a, 6 * b) -= ea_cinv * eb.transpose();
          }
        }
      }

      Eigen::VectorXd delta_pose(pose_dim);
      if (pose_dim > 0) {
        const Eigen::LDLT<Eigen::MatrixXd> ldlt(schur);
        if (ldlt.info() != Eigen::Success) {
          lambda *= 10.0;
          continue;
        }
        delta_pose = ldlt.solve(schur_rhs);
        if (!delta_pose.allFinite()) {
          lambda *= 10.0;
          continue;
        }
      }

      // Back-substitute the points.
      std::vector<Eigen::Vector3d> delta_point(num_point_vars);
      for (int j = 0; j < num_point_vars; ++j) {
        Eigen::Vector3d rhs = -g_point[j];
        for (const auto& [a, ea] : e_blocks[j]) {
          rhs -= ea.transpose() * delta_pose.segment<6>(6 * a);
        }
        delta_point[j] = c_inv[j] * rhs;
      }

      // Candidate state.
      std::vector<Pose> new_poses = poses;
      std::vector<Eigen::Vector3d> new_points = points;
      for (size_t i = 0; i < problem.NumPoses(); ++i) {
        const int pv = pose_var[i];
        if (pv < 0) continue;
        const Eigen::Matrix<double, 6, 1> d = delta_pose.segment<6>(6 * pv);
        new_poses[i].rotation = ExpSO3(d.head<3>()) * poses[i].rotation;
        new_poses[i].center = poses[i].center + d.tail<3>();
      }
      for (size_t j = 0; j < problem.NumPoints(); ++j) {
        const int xv = point_var[j];
        if (xv < 0) continue;
        new_points[j] = points[j] + delta_point[xv];
      }

      const double new_cost = evaluate_cost(new_poses, new_points);
      if (std::isfinite(new_cost) && new_cost < cost) {
        const double relative_decrease = (cost - new_cost) / std::max(cost, 1e-300);
        poses = std::move(new_poses);
        points = std::move(new_points);
        cost = new_cost;
        summary.cost_history.push_back(cost);
        lambda = std::max(lambda / 3.0, 1e-12);
        accepted = true;
        if (relative_decrease < options.function_tolerance) {
          summary.status = SolverStatus::kConverged;
        }
        break;
      }
      lambda *= 10.0;
    }

    if (!accepted) {
      summary.status = cost < summary.initial_cost ? SolverStatus::kConverged
                                                   : SolverStatus::kDiverged;
      break;
    }
    if (summary.status == SolverStatus::kConverged) break;
  }

  summary.final_cost = cost;
  if (summary.status != SolverStatus::kDiverged) {
    problem.MutablePoses() = std::move(poses);
    problem.MutablePoints() = std::move(points);
  }
  return summary;
}

}  // namespace ecsfm
