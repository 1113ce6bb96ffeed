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
#include <deque>
#include <map>
#include <set>
#include <stdexcept>
#include <vector>

#include "ecsfm/bundle_adjust.hpp"
#include "ecsfm/so3.hpp"
#include "ecsfm/types.hpp"

namespace ecsfm {

// Pose graph over relative-pose constraints. Edge (i, j) stores the measured
// transform taking frame-i camera coordinates into frame j:
// X_j = R_ij X_i + t_ij. Rotation residual log(R_meas * R_est^-1), translation
// residual t_meas - t_est, weighted per edge.
class PoseGraphProblem {
 public:
  struct Edge {
    image_t from = -1;
    image_t to = -1;
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();
    double rotation_weight = 1.0;
    double translation_weight = 1.0;
  };

  void AddNode(image_t id, const Pose& pose) {
    if (!nodes_.count(id)) order_.push_back(id);
    nodes_[id] = pose;
  }

  void AddEdge(const Edge& edge) {
    if (!nodes_.count(edge.from) || !nodes_.count(edge.to)) {
      throw std::invalid_argument("PoseGraphProblem: edge references unknown node");
    }
    edges_.push_back(edge);
  }

  void SetGauge(image_t id) {
    if (!nodes_.count(id)) {
      throw std::invalid_argument("PoseGraphProblem: gauge node unknown");
    }
    gauge_ = id;
  }

  static Edge MakeEdge(image_t from, image_t to, const Pose& pose_from,
                       const Pose& pose_to, double rotation_weight = 1.0,
                       double translation_weight = 1.0) {
    Edge edge;
    edge.from = from;
    edge.to = to;
    edge.rotation = pose_from.RelativeRotationTo(pose_to);
    edge.translation = pose_from.RelativeTranslationTo(pose_to);
    edge.rotation_weight = rotation_weight;
    edge.translation_weight = translation_weight;
    return edge;
  }

  image_t gauge() const { return gauge_; }
  const std::map<image_t, Pose>& nodes() const { return nodes_; }
  const std::vector<Edge>& edges() const { return edges_; }
  const std::vector<image_t>& order() const { return order_; }

  const Pose& PoseOf(image_t id) const { return nodes_.at(id); }

  bool IsConnected() const {
    if (nodes_.empty()) return true;
    std::map<image_t, std::vector<image_t>> adjacency;
    for (const auto& edge : edges_) {
      adjacency[edge.from].push_back(edge.to);
      adjacency[edge.to].push_back(edge.from);
    }
    std::set<image_t> visited{nodes_.begin()->first};
    std::deque<image_t> queue{nodes_.begin()->first};
    while (!queue.empty()) {
      const image_t node = queue.front();
      queue.pop_front();
      for (const image_t next : adjacency[node]) {
        if (visited.insert(next).second) queue.push_back(next);
      }
    }
    return visited.size() == nodes_.size();
  }

  std::map<image_t, Pose>& MutableNodes() { return nodes_; }

 private:
  std::map<image_t, Pose> nodes_;
  std::vector<Edge> edges_;
  std::vector<image_t> order_;
  image_t gauge_ = -1;
};

namespace internal {

inline Eigen::Matrix<double, 6, 1> PoseGraphResidual(
    const PoseGraphProblem::Edge& edge, const Pose& pose_from,
    const Pose& pose_to) {
  Eigen::Matrix<double, 6, 1> residual;
  const Eigen::Matrix3d r_est = pose_from.RelativeRotationTo(pose_to);
  residual.head<3>() =
      edge.rotation_weight * LogSO3(edge.rotation * r_est.transpose());
  residual.tail<3>() =
      edge.translation_weight *
      (edge.translation - pose_from.RelativeTranslationTo(pose_to));
  return residual;
}

inline Pose PerturbPose(const Pose& pose, const Eigen::Matrix<double, 6, 1>& d) {
  Pose out;
  out.rotation = ExpSO3(d.head<3>()) * pose.rotation;
  out.center = pose.center + d.tail<3>();
  return out;
}

}  // namespace internal

// Levenberg-Marquardt over the pose graph with the gauge node held constant.
// Jacobians by central differences on the local increments. The summed
// squared residual norm is non-increasing over accepted steps.
inline SolverSummary PoseGraphOptimize(PoseGraphProblem& problem,
                                       const SolverOptions& options = {}) {
  if (problem.gauge() < 0) {
    throw std::invalid_argument("PoseGraphOptimize: no gauge node set");
  }
  if (!problem.IsConnected()) {
    throw std::invalid_argument("PoseGraphOptimize: graph is disconnected");
  }

  std::vector<image_t> variables;
  std::map<image_t, int> var_of;
  for (const auto& [id, pose] : problem.nodes()) {
    if (id == problem.gauge()) continue;
    var_of[id] = static_cast<int>(variables.size());
    variables.push_back(id);
  }
  const int dim = 6 * static_cast<int>(variables.size());

  std::map<image_t, Pose> state = problem.nodes();

  auto total_cost = [&](const std::map<image_t, Pose>& poses) {
    double cost = 0.0;
    for (const auto& edge : problem.edges()) {
      cost += internal::PoseGraphResidual(edge, poses.at(edge.from),
                                          poses.at(edge.to))
                  .squaredNorm();
    }
    return 0.5 * cost;
  };

  SolverSummary summary;
  summary.initial_cost = total_cost(state);
  summary.cost_history.push_back(summary.initial_cost);
  double cost = summary.initial_cost;
  double lambda = options.initial_lambda;

  if (dim == 0) {
    summary.final_cost = cost;
    summary.status = SolverStatus::kConverged;
    return summary;
  }

  Eigen::MatrixXd hessian(dim, dim);
  Eigen::VectorXd gradient(dim);

  for (int iteration = 0; iteration < options.max_iterations; ++iteration) {
    summary.iterations = iteration + 1;
    hessian.setZero();
    gradient.setZero();

    const double step = 1e-7;
    for (const auto& edge : problem.edges()) {
      const Eigen::Matrix<double, 6, 1> r0 =
          internal::PoseGraphResidual(edge, state.at(edge.from),
                                      state.at(edge.to));
      // Local Jacobian w.r.t. both endpoint increments by central differences.
      Eigen::Matrix<double, 6, 12> jac;
      for (int side = 0; side < 2; ++side) {
        const image_t node = side == 0 ? edge.from : edge.to;
        if (var_of.find(node) == var_of.end()) {
          jac.block<6, 6>(0, 6 * side).setZero();
          continue;
        }
        const Pose base = state.at(node);
        for (int d = 0; d < 6; ++d) {
          Eigen::Matrix<double, 6, 1> delta =
              Eigen::Matrix<double, 6, 1>::Zero();
          delta(d) = step;
          const Pose plus = internal::PerturbPose(base, delta);
          delta(d) = -step;
          const Pose minus = internal::PerturbPose(base, delta);
          const Pose& from_p = side == 0 ? plus : state.at(edge.from);
          const Pose& to_p = side == 1 ? plus : state.at(edge.to);
          const Pose& from_m = side == 0 ? minus : state.at(edge.from);
          const Pose& to_m = side == 1 ? minus : state.at(edge.to);
          jac.block<6, 1>(0, 6 * side + d) =
              (internal::PoseGraphResidual(edge, from_p, to_p) -
               internal::PoseGraphResidual(edge, from_m, to_m)) /
              (2.0 * step);
        }
      }

      const int vf = var_of.count(edge.from) ? var_of[edge.from] : -1;
      const int vt = var_of.count(edge.to) ? var_of[edge.to] : -1;
      const auto jf = jac.block<6, 6>(0, 0);
      const auto jt = jac.block<6, 6>(0, 6);
      if (vf >= 0) {
        hessian.block<6, 6>(6 * vf, 6 * vf) += jf.transpose() * jf;
        gradient.segment<6>(6 * vf) += jf.transpose() * r0;
      }
      if (vt >= 0) {
        hessian.block<6, 6>(6 * vt, 6 * vt) += jt.transpose() * jt;
        gradient.segment<6>(6 * vt) += jt.transpose() * r0;
      }
      if (vf >= 0 && vt >= 0) {
        hessian.block<6, 6>(6 * vf, 6 * vt) += jf.transpose() * jt;
        hessian.block<6, 6>(6 * vt, 6 * vf) += jt.transpose() * jf;
      }
    }

    summary.final_gradient_norm = gradient.lpNorm<Eigen::Infinity>();
    if (summary.final_gradient_norm < options.gradient_tolerance) {
      summary.status = SolverStatus::kConverged;
      break;
    }

    bool accepted = false;
    while (lambda <= options.max_lambda) {
      Eigen::MatrixXd damped = hessian;
      for (int d = 0; d < dim; ++d) {
        damped(d, d) += lambda * std::max(hessian(d, d), 1e-12);
      }
      const Eigen::LDLT<Eigen::MatrixXd> ldlt(damped);
      const Eigen::VectorXd delta = ldlt.solve(-gradient);
      if (ldlt.info() != Eigen::Success || !delta.allFinite()) {
        lambda *= 10.0;
        continue;
      }

      std::map<image_t, Pose> candidate = state;
      for (size_t v = 0; v < variables.size(); ++v) {
        candidate[variables[v]] = internal::PerturbPose(
            state.at(variables[v]), delta.segment<6>(6 * v));
      }
      const double new_cost = total_cost(candidate);
      if (std::isfinite(new_cost) && new_cost < cost) {
        const double relative_decrease =
            (cost - new_cost) / std::max(cost, 1e-300);
        state = std::move(candidate);
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
    problem.MutableNodes() = std::move(state);
  }
  return summary;
}

}  // namespace ecsfm
