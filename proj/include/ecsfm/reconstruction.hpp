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

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <unordered_map>
#include <vector>

#include "ecsfm/bundle_adjust.hpp"
#include "ecsfm/config.hpp"
#include "ecsfm/covis_graph.hpp"
#include "ecsfm/hierarchy.hpp"
#include "ecsfm/logging.hpp"
#include "ecsfm/pnp.hpp"
#include "ecsfm/pose_graph.hpp"
#include "ecsfm/tracks.hpp"
#include "ecsfm/two_view.hpp"
#include "ecsfm/types.hpp"

namespace ecsfm {

struct LocalPartition {
  std::vector<image_t> consistent;    // S1
  std::vector<image_t> inconsistent;  // S2
};

struct CorrectionEvent {
  image_t image = -1;
  std::vector<image_t> inconsistent;
  bool applied = false;
  bool rolled_back = false;
};

struct ReconStats {
  size_t registered = 0;
  size_t points = 0;
  size_t observations = 0;
  double mean_reprojection_error = 0.0;
  size_t keyframes = 0;
  size_t redundant = 0;
  size_t global_ba_runs = 0;
  std::vector<CorrectionEvent> corrections;
};

// Incremental reconstruction over a fixed match database: initialization,
// next-view selection, P3P registration, robust multi-view triangulation,
// V_error-driven error detection and correction, and keyframe-scheduled
// global bundle adjustment.
class ReconstructionEngine {
 public:
  ReconstructionEngine(const std::map<image_t, CameraIntrinsics>& intrinsics,
                       const std::map<image_t, FeatureSet>& features,
                       const MatchDatabase& db, const Config& config)
      : intrinsics_(intrinsics),
        features_(features),
        db_(db),
        config_(config),
        tracks_(BuildTracks(db, features)) {
    // Track membership for triangulation, restricted to multi-feature tracks.
    for (const auto& [root, members] : tracks_.Tracks()) {
      auto& list = track_members_[root];
      list.reserve(members.size());
      for (const size_t member : members) {
        list.push_back(tracks_.Indexer().Local(member));
      }
    }
    for (const auto& [key, pair] : db.Pairs()) {
      if (static_cast<int>(pair.NumInliers()) <
          config_.geometry.min_inliers) {
        continue;
      }
      neighbors_[key.first].emplace_back(key.second, &pair);
      neighbors_[key.second].emplace_back(key.first, &pair);
    }
  }

  const Reconstruction& Get() const { return recon_; }
  Reconstruction& Mutable() { return recon_; }
  const ReconStats& Stats() const { return stats_; }
  const std::vector<image_t>& RegistrationOrder() const {
    return registration_order_;
  }

  // Two-view seeding: picks the stored pair maximizing inliers weighted by a
  // parallax score, reconstructs it at unit baseline, and triangulates.
  bool Initialize() {
    struct Candidate {
      MatchDatabase::PairKey key;
      size_t inliers;
    };
    std::vector<Candidate> candidates;
    for (const auto& [key, pair] : db_.Pairs()) {
      if (!pair.two_view_pose.has_value()) continue;
      const size_t inliers = pair.NumInliers();
      if (static_cast<int>(inliers) < 2 * config_.recon.min_pnp_inliers) {
        continue;
      }
      candidates.push_back({key, inliers});
    }
    std::sort(candidates.begin(), candidates.end(),
              [](const Candidate& a, const Candidate& b) {
                if (a.inliers != b.inliers) return a.inliers > b.inliers;
                return a.key < b.key;
              });
    if (candidates.size() > 50) candidates.resize(50);

    std::vector<std::pair<double, MatchDatabase::PairKey>> scored;
    for (const auto& candidate : candidates) {
      const double angle = MedianPairAngleDeg(candidate.key);
      const double score =
          double(candidate.inliers) * std::min(angle, 10.0) / 10.0;
      if (score > 0.0) scored.push_back({score, candidate.key});
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    if (scored.empty()) {
      LogWarn("initialization failed: no non-degenerate pair");
      return false;
    }

    for (const auto& [score, key] : scored) {
      const MatchPair& pair = *db_.Get(key.first, key.second);
      recon_.SetPose(key.first, Pose::Identity());
      recon_.SetPose(key.second, pair.two_view_pose.value());
      recon_.init_image_a = key.first;
      recon_.init_image_b = key.second;
      registration_order_ = {key.first, key.second};

      const int created = TriangulateTracks(key.second);
      if (created >= config_.recon.min_pnp_inliers) {
        LogInfo("initialized with pair (%d, %d): %d points", int(key.first),
                int(key.second), created);
        return true;
      }
      LogDebug("initial pair (%d, %d) rejected: %d points", int(key.first),
               int(key.second), created);
      recon_ = Reconstruction();
      registration_order_.clear();
      track_to_point_.clear();
      point_to_track_.clear();
    }
    LogWarn("initialization failed: no pair produced enough points");
    return false;
  }

  // Unregistered image seeing the most triangulated points; ties prefer more
  // total inlier matches, then the lowest id. Nothing when the best count is
  // below the registration minimum.
  std::optional<image_t> SelectNextView() const {
    image_t best = -1;
    size_t best_points = 0, best_matches = 0;
    for (const auto& [image, set] : features_) {
      if (recon_.IsRegistered(image)) continue;
      if (trial_count_.count(image) && trial_count_.at(image) >= 3) continue;
      const size_t visible = CountVisiblePoints(image);
      if (visible < static_cast<size_t>(config_.recon.min_next_view_points)) {
        continue;
      }
      size_t total_matches = 0;
      const auto it = neighbors_.find(image);
      if (it != neighbors_.end()) {
        for (const auto& [other, pair] : it->second) {
          total_matches += pair->NumInliers();
        }
      }
      const bool better =
          visible > best_points ||
          (visible == best_points && total_matches > best_matches) ||
          (visible == best_points && total_matches == best_matches &&
           (best < 0 || image < best));
      if (better) {
        best = image;
        best_points = visible;
        best_matches = total_matches;
      }
    }
    if (best < 0) return std::nullopt;
    return best;
  }

  // P3P RANSAC over the frame's 2D-3D correspondences plus pose-only
  // refinement. Throws when fewer correspondences than the minimum exist;
  // returns nothing on a RANSAC failure (the frame is deferred).
  std::optional<Pose> RegisterImage(image_t image) {
    std::vector<Eigen::Vector3d> world;
    std::vector<Eigen::Vector2d> pixels;
    std::vector<feature_t> feature_of;
    std::vector<point3d_t> point_of;
    GatherCorrespondences(image, {}, {}, &world, &pixels, &feature_of,
                          &point_of);
    if (static_cast<int>(world.size()) < config_.recon.min_pnp_inliers) {
      throw std::invalid_argument("RegisterImage: too few 2D-3D correspondences");
    }

    const auto result = EstimatePnP(
        world, pixels, intrinsics_.at(image), config_.geometry,
        config_.recon.min_pnp_inliers,
        DeriveSeed(config_.seed, 0xF00D, uint64_t(image)), config_.solver);
    if (!result.success) {
      ++trial_count_[image];
      LogDebug("registration deferred for image %d", int(image));
      return std::nullopt;
    }

    recon_.SetPose(image, result.pose);
    registration_order_.push_back(image);
    InjectDrift(image);

    // Attach the verified correspondences.
    const Pose& pose = recon_.frames.at(image).pose;
    for (size_t k = 0; k < world.size(); ++k) {
      if (!result.inliers[k]) continue;
      AttachObservation(point_of[k], image, feature_of[k], pose);
    }
    return recon_.frames.at(image).pose;
  }

  // Extends the map through the tracks of a freshly registered image:
  // existing points gain gated observations, complete tracks triangulate.
  int TriangulateTracks(image_t image) {
    const FeatureSet& set = features_.at(image);
    const Pose& pose = recon_.frames.at(image).pose;
    int created = 0;
    for (feature_t f = 0; f < static_cast<feature_t>(set.NumFeatures()); ++f) {
      const size_t root = tracks_.Find(image, f);
      const auto members_it = track_members_.find(root);
      if (members_it == track_members_.end()) continue;

      const auto existing = track_to_point_.find(root);
      if (existing != track_to_point_.end()) {
        if (recon_.points.count(existing->second)) {
          AttachObservation(existing->second, image, f, pose);
          continue;
        }
        track_to_point_.erase(existing);
      }

      // Registered observations of the whole track.
      std::vector<TrackObservation> observations;
      std::vector<std::pair<image_t, feature_t>> sources;
      for (const auto& [member_image, member_feature] : members_it->second) {
        if (!recon_.IsRegistered(member_image)) continue;
        observations.push_back(
            {&recon_.frames.at(member_image).pose,
             &intrinsics_.at(member_image),
             features_.at(member_image).keypoints[member_feature]});
        sources.emplace_back(member_image, member_feature);
      }
      if (observations.size() < 2) continue;

      const auto tri = TriangulateTrackRobust(observations, config_.geometry,
                                              AlphaMinRad());
      if (!tri.ok) continue;

      const point3d_t pid = recon_.AddPoint(tri.point);
      std::set<image_t> used_images;
      int attached = 0;
      for (size_t k = 0; k < sources.size(); ++k) {
        if (!tri.support[k]) continue;
        const auto& [obs_image, obs_feature] = sources[k];
        if (used_images.count(obs_image)) continue;
        if (recon_.FindPoint(obs_image, obs_feature) != kInvalidPoint3d) {
          continue;
        }
        recon_.AddObservation(pid, obs_image, obs_feature);
        used_images.insert(obs_image);
        ++attached;
      }
      if (attached < 2) {
        recon_.RemovePoint(pid);
        continue;
      }
      track_to_point_[root] = pid;
      point_to_track_[pid] = root;
      ++created;
    }
    return created;
  }

  // Splits the registered matched neighbors of a newly registered frame into
  // the geometrically consistent part S1 and the inconsistent part S2.
  LocalPartition DetectErrorPartition(image_t image) const {
    LocalPartition partition;
    const auto it = neighbors_.find(image);
    if (it == neighbors_.end()) return partition;
    for (const auto& [other, pair] : it->second) {
      if (!recon_.IsRegistered(other)) continue;
      const auto inliers = OrientedInliers(*pair, image, other);
      if (static_cast<int>(inliers.size()) < config_.geometry.min_inliers) {
        continue;
      }
      const auto consistency = CheckPairConsistency(
          MakeConsistencyInput(image, other), inliers, &recon_,
          config_.geometry);
      if (consistency.verdict == ConsistencyVerdict::kConsistent) {
        partition.consistent.push_back(other);
      } else {
        partition.inconsistent.push_back(other);
      }
    }
    return partition;
  }

  // Loop-closure style correction: dual registration against the S1-only and
  // S2-only partial maps, pose graph optimization seeded with the stored
  // two-view poses plus the dual-registration edges, point refitting, then a
  // local bundle adjustment. Rolled back unless every formerly inconsistent
  // pair passes the consistency check afterwards.
  bool CorrectError(image_t image, const LocalPartition& partition) {
    if (partition.inconsistent.empty()) {
      throw std::invalid_argument("CorrectError: empty inconsistent set");
    }
    CorrectionEvent event;
    event.image = image;
    event.inconsistent = partition.inconsistent;

    const std::set<image_t> side1(partition.consistent.begin(),
                                  partition.consistent.end());
    const std::set<image_t> side2(partition.inconsistent.begin(),
                                  partition.inconsistent.end());

    const auto pnp_side = [&](const std::set<image_t>& side,
                              const std::set<image_t>& other,
                              std::vector<feature_t>* features,
                              std::vector<point3d_t>* points) {
      std::vector<Eigen::Vector3d> world;
      std::vector<Eigen::Vector2d> pixels;
      GatherCorrespondences(image, side, other, &world, &pixels, features,
                            points);
      PnPResult result;
      if (static_cast<int>(world.size()) >= config_.recon.min_pnp_inliers) {
        result = EstimatePnP(world, pixels, intrinsics_.at(image),
                             config_.geometry, config_.recon.min_pnp_inliers,
                             DeriveSeed(config_.seed, 0xD0A1, uint64_t(image)),
                             config_.solver);
      }
      return result;
    };

    std::vector<feature_t> features1, features2;
    std::vector<point3d_t> points1, points2;
    const PnPResult reg1 = pnp_side(side1, side2, &features1, &points1);
    const PnPResult reg2 = pnp_side(side2, side1, &features2, &points2);
    if (!reg1.success || !reg2.success) {
      LogWarn("correction skipped for image %d: side inliers %d / %d",
              int(image), reg1.inlier_count, reg2.inlier_count);
      stats_.corrections.push_back(event);
      return false;
    }

    // Snapshot for rollback.
    const Reconstruction snapshot = recon_;
    const auto track_snapshot = track_to_point_;
    const auto point_snapshot = point_to_track_;

    // Pose graph over the registered frames.
    PoseGraphProblem graph;
    for (const auto& [id, frame] : recon_.frames) {
      if (frame.registered) graph.AddNode(id, frame.pose);
    }
    for (const auto& [key, pair] : db_.Pairs()) {
      if (key.first == image || key.second == image) continue;
      if (!pair.two_view_pose.has_value()) continue;
      if (!recon_.IsRegistered(key.first) || !recon_.IsRegistered(key.second)) {
        continue;
      }
      if (static_cast<int>(pair.NumInliers()) < config_.geometry.min_inliers) {
        continue;
      }
      // Stored relative rotation and direction; scale from the current map.
      const Pose& pose_a = recon_.frames.at(key.first).pose;
      const Pose& pose_b = recon_.frames.at(key.second).pose;
      const double scale = pose_a.RelativeTranslationTo(pose_b).norm();
      PoseGraphProblem::Edge edge;
      edge.from = key.first;
      edge.to = key.second;
      edge.rotation = pair.two_view_pose->rotation;
      edge.translation =
          -(pair.two_view_pose->rotation * pair.two_view_pose->center)
               .normalized() *
          scale;
      graph.AddEdge(edge);
    }
    // Dual-registration edges tie the new frame to both sides.
    const auto add_dual_edges = [&](const PnPResult& reg,
                                    const std::set<image_t>& side) {
      for (const image_t other : side) {
        graph.AddEdge(PoseGraphProblem::MakeEdge(
            other, image, recon_.frames.at(other).pose, reg.pose));
      }
    };
    add_dual_edges(reg1, side1);
    add_dual_edges(reg2, side2);

    image_t gauge = recon_.init_image_a;
    if (!recon_.IsRegistered(gauge)) gauge = registration_order_.front();
    graph.SetGauge(gauge);
    if (!graph.IsConnected()) {
      LogWarn("correction skipped for image %d: pose graph disconnected",
              int(image));
      stats_.corrections.push_back(event);
      return false;
    }
    SolverOptions pgo_options = config_.solver;
    pgo_options.max_iterations = 30;
    PoseGraphOptimize(graph, pgo_options);

    for (const auto& [id, pose] : graph.nodes()) {
      recon_.frames.at(id).pose = pose;
    }
    RefitPoints();

    // Attach the dual-registration inliers that survive the new geometry.
    const Pose& pose = recon_.frames.at(image).pose;
    const auto attach_side = [&](const PnPResult& reg,
                                 const std::vector<feature_t>& feats,
                                 const std::vector<point3d_t>& pts) {
      for (size_t k = 0; k < feats.size(); ++k) {
        if (!reg.inliers[k]) continue;
        if (!recon_.points.count(pts[k])) continue;
        AttachObservation(pts[k], image, feats[k], pose);
      }
    };
    attach_side(reg1, features1, points1);
    attach_side(reg2, features2, points2);

    LocalBundleAdjust(image);

    // Post-condition: every formerly inconsistent pair must now pass.
    bool restored = true;
    for (const image_t other : partition.inconsistent) {
      const MatchPair* pair = db_.Get(image, other);
      const auto inliers = OrientedInliers(*pair, image, other);
      const auto consistency = CheckPairConsistency(
          MakeConsistencyInput(image, other), inliers, &recon_,
          config_.geometry);
      if (consistency.verdict != ConsistencyVerdict::kConsistent) {
        restored = false;
        break;
      }
    }
    if (!restored) {
      recon_ = snapshot;
      track_to_point_ = track_snapshot;
      point_to_track_ = point_snapshot;
      event.rolled_back = true;
      stats_.corrections.push_back(event);
      LogWarn("correction rolled back for image %d", int(image));
      return false;
    }
    event.applied = true;
    stats_.corrections.push_back(event);
    LogInfo("correction applied for image %d (%zu inconsistent neighbors)",
            int(image), partition.inconsistent.size());
    return true;
  }

  // Local bundle adjustment around `image`: the frame, its strongest
  // covisible registered neighbors, and the points they observe; other
  // observing frames participate as constants.
  void LocalBundleAdjust(image_t image) {
    std::map<image_t, int> shared;
    std::set<point3d_t> local_points;
    for (const auto& [key, pid] : recon_.Observations()) {
      if (key.first != image) continue;
      local_points.insert(pid);
      for (const auto& [other_image, feature] : recon_.points.at(pid).observations) {
        if (other_image != image && recon_.IsRegistered(other_image)) {
          ++shared[other_image];
        }
      }
    }
    std::vector<std::pair<int, image_t>> ranked;
    for (const auto& [other, count] : shared) ranked.push_back({count, other});
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    std::set<image_t> variable{image};
    for (const auto& [count, other] : ranked) {
      if (static_cast<int>(variable.size()) >
          config_.recon.local_ba_neighbors) {
        break;
      }
      variable.insert(other);
    }
    for (const image_t fixed : {recon_.init_image_a, recon_.init_image_b}) {
      variable.erase(fixed);
    }
    BundleAdjustSubset(variable, local_points);
  }

  // Global bundle adjustment. With keyframe scheduling the redundant frames
  // are pruned from the keyframe list first, only keyframe poses and their
  // points are adjusted, and the redundant poses are re-refined against the
  // updated structure afterwards.
  void GlobalBundleAdjust() {
    ++stats_.global_ba_runs;
    std::set<image_t> variable;
    std::set<point3d_t> points;
    std::set<image_t> redundant;

    if (config_.recon.enable_kgba && recon_.NumRegistered() > 10) {
      const HierarchyLevels levels =
          ComputeHierarchy(recon_, config_.recon.hierarchy_min_points);
      const KeyframeSet keyframes = SelectKeyframes(
          recon_, levels, config_.recon.redundancy_min_points);
      stats_.keyframes = keyframes.keyframes.size();
      stats_.redundant = keyframes.redundant.size();
      redundant = keyframes.redundant;
      for (const image_t id : keyframes.keyframes) variable.insert(id);
      for (const auto& [pid, point] : recon_.points) {
        int keyframe_obs = 0;
        for (const auto& [obs_image, feature] : point.observations) {
          if (variable.count(obs_image)) ++keyframe_obs;
        }
        if (keyframe_obs >= 2) points.insert(pid);
      }
    } else {
      for (const image_t id : recon_.RegisteredImages()) variable.insert(id);
      for (const auto& [pid, point] : recon_.points) points.insert(pid);
    }

    variable.erase(recon_.init_image_a);
    variable.erase(recon_.init_image_b);
    BundleAdjustSubset(variable, points, /*only_variable_observers=*/
                       config_.recon.enable_kgba);

    // Redundant poses follow the structure via pose-only refinement.
    for (const image_t id : redundant) {
      PoseOnlyRefine(id);
    }
    FilterAllObservations();
  }

  struct RunResult {
    bool initialized = false;
  };

  // Full pipeline: initialize, then iterate selection, registration, error
  // detection/correction, triangulation and local refinement with
  // growth-scheduled global adjustments.
  bool Run() {
    if (!Initialize()) return false;
    size_t last_gba_count = 2;
    while (const auto next = SelectNextView()) {
      const image_t image = *next;
      std::optional<Pose> pose;
      try {
        pose = RegisterImage(image);
      } catch (const std::invalid_argument&) {
        ++trial_count_[image];
        continue;
      }
      if (!pose.has_value()) continue;

      if (config_.recon.enable_correction) {
        const LocalPartition partition = DetectErrorPartition(image);
        if (!partition.inconsistent.empty()) {
          CorrectError(image, partition);
        }
      }
      TriangulateTracks(image);
      LocalBundleAdjust(image);
      FilterImageObservations(image);

      if (recon_.NumRegistered() >=
          config_.recon.gba_growth_factor * double(last_gba_count)) {
        GlobalBundleAdjust();
        last_gba_count = recon_.NumRegistered();
      }
    }
    GlobalBundleAdjust();
    UpdateStats();
    return true;
  }

  double MeanReprojectionError() const {
    double sum = 0.0;
    size_t count = 0;
    for (const auto& [pid, point] : recon_.points) {
      for (const auto& [image, feature] : point.observations) {
        if (!recon_.IsRegistered(image)) continue;
        const auto pixel = Project(intrinsics_.at(image),
                                   recon_.frames.at(image).pose, point.position);
        if (!pixel) continue;
        sum += (*pixel - features_.at(image).keypoints[feature]).norm();
        ++count;
      }
    }
    return count == 0 ? 0.0 : sum / double(count);
  }

  void UpdateStats() {
    stats_.registered = recon_.NumRegistered();
    stats_.points = recon_.points.size();
    stats_.observations = recon_.Observations().size();
    stats_.mean_reprojection_error = MeanReprojectionError();
  }

 private:
  double AlphaMinRad() const {
    return config_.recon.alpha_min_deg * M_PI / 180.0;
  }

  ConsistencyInput MakeConsistencyInput(image_t image_i,
                                        image_t image_j) const {
    ConsistencyInput input;
    input.intrinsics_i = &intrinsics_.at(image_i);
    input.intrinsics_j = &intrinsics_.at(image_j);
    input.pose_i = &recon_.frames.at(image_i).pose;
    input.pose_j = &recon_.frames.at(image_j).pose;
    input.features_i = &features_.at(image_i);
    input.features_j = &features_.at(image_j);
    input.image_i = image_i;
    input.image_j = image_j;
    return input;
  }

  static std::vector<FeatureMatch> OrientedInliers(const MatchPair& pair,
                                                   image_t first,
                                                   image_t second) {
    std::vector<FeatureMatch> inliers;
    const bool flipped = pair.image_a == second;
    pair.ForEachInlier([&](feature_t fa, feature_t fb) {
      if (flipped) {
        inliers.emplace_back(fb, fa);
      } else {
        inliers.emplace_back(fa, fb);
      }
    });
    (void)first;
    return inliers;
  }

  // Median triangulation angle of a pair's inlier matches under its stored
  // two-view pose, in degrees.
  double MedianPairAngleDeg(const MatchDatabase::PairKey& key) const {
    const MatchPair& pair = *db_.Get(key.first, key.second);
    const Pose identity;
    const Pose& relative = pair.two_view_pose.value();
    const CameraIntrinsics& cam_a = intrinsics_.at(key.first);
    const CameraIntrinsics& cam_b = intrinsics_.at(key.second);
    const FeatureSet& feat_a = features_.at(key.first);
    const FeatureSet& feat_b = features_.at(key.second);
    std::vector<double> angles;
    pair.ForEachInlier([&](feature_t fa, feature_t fb) {
      const Eigen::Vector3d ra = Bearing(cam_a, identity, feat_a.keypoints[fa]);
      const Eigen::Vector3d rb = Bearing(cam_b, relative, feat_b.keypoints[fb]);
      const auto point = TriangulateTwoView(identity, relative, ra, rb);
      if (!point) return;
      angles.push_back(AngleBetween(*point - identity.center,
                                    *point - relative.center) *
                       180.0 / M_PI);
    });
    if (angles.empty()) return 0.0;
    std::nth_element(angles.begin(), angles.begin() + angles.size() / 2,
                     angles.end());
    return angles[angles.size() / 2];
  }

  size_t CountVisiblePoints(image_t image) const {
    const FeatureSet& set = features_.at(image);
    std::set<point3d_t> visible;
    for (feature_t f = 0; f < static_cast<feature_t>(set.NumFeatures()); ++f) {
      const auto it = track_to_point_.find(tracks_.Find(image, f));
      if (it != track_to_point_.end() && recon_.points.count(it->second)) {
        visible.insert(it->second);
      }
    }
    return visible.size();
  }

  // 2D-3D correspondences of an image through the track-point table. With a
  // non-empty `include_side`, only points observed by that side and by none
  // of the `exclude_side` frames qualify.
  void GatherCorrespondences(image_t image,
                             const std::set<image_t>& include_side,
                             const std::set<image_t>& exclude_side,
                             std::vector<Eigen::Vector3d>* world,
                             std::vector<Eigen::Vector2d>* pixels,
                             std::vector<feature_t>* feature_of,
                             std::vector<point3d_t>* point_of) const {
    const FeatureSet& set = features_.at(image);
    std::set<point3d_t> used;
    for (feature_t f = 0; f < static_cast<feature_t>(set.NumFeatures()); ++f) {
      const auto it = track_to_point_.find(tracks_.Find(image, f));
      if (it == track_to_point_.end()) continue;
      const auto point_it = recon_.points.find(it->second);
      if (point_it == recon_.points.end()) continue;
      if (used.count(it->second)) continue;
      if (!include_side.empty()) {
        bool in_side = false, excluded = false;
        for (const auto& [obs_image, feature] : point_it->second.observations) {
          if (obs_image == image) continue;
          if (include_side.count(obs_image)) in_side = true;
          if (exclude_side.count(obs_image)) excluded = true;
        }
        if (!in_side || excluded) continue;
      }
      used.insert(it->second);
      world->push_back(point_it->second.position);
      pixels->push_back(set.keypoints[f]);
      feature_of->push_back(f);
      point_of->push_back(it->second);
    }
  }

  // Adds the observation when the reprojection gate passes, the feature is
  // unclaimed and the point has no observation in this image yet.
  void AttachObservation(point3d_t pid, image_t image, feature_t feature,
                         const Pose& pose) {
    if (recon_.FindPoint(image, feature) != kInvalidPoint3d) return;
    const auto& point = recon_.points.at(pid);
    for (const auto& [obs_image, obs_feature] : point.observations) {
      if (obs_image == image) return;
    }
    const auto pixel = Project(intrinsics_.at(image), pose, point.position);
    if (!pixel) return;
    const double error =
        (*pixel - features_.at(image).keypoints[feature]).norm();
    if (error > config_.geometry.tau_px) return;
    recon_.AddObservation(pid, image, feature);
  }

  void InjectDrift(image_t image) {
    const auto& recon_config = config_.recon;
    if (recon_config.inject_drift_rot == 0.0 &&
        recon_config.inject_drift_trans == 0.0) {
      return;
    }
    Pose& pose = recon_.frames.at(image).pose;
    if (recon_config.inject_drift_rot != 0.0) {
      const Eigen::Matrix3d turn =
          Eigen::AngleAxisd(recon_config.inject_drift_rot,
                            Eigen::Vector3d::UnitZ())
              .toRotationMatrix();
      pose.rotation = pose.rotation * turn.transpose();
    }
    pose.center += recon_config.inject_drift_trans * Eigen::Vector3d::UnitZ();
  }

  // Re-solves every point from its registered observations after large pose
  // updates; points that end up behind a camera are dropped.
  void RefitPoints() {
    std::vector<point3d_t> doomed;
    for (auto& [pid, point] : recon_.points) {
      std::vector<const Pose*> poses;
      std::vector<const CameraIntrinsics*> cameras;
      std::vector<Eigen::Vector2d> pixels;
      for (const auto& [image, feature] : point.observations) {
        if (!recon_.IsRegistered(image)) continue;
        poses.push_back(&recon_.frames.at(image).pose);
        cameras.push_back(&intrinsics_.at(image));
        pixels.push_back(features_.at(image).keypoints[feature]);
      }
      if (poses.size() < 2) {
        doomed.push_back(pid);
        continue;
      }
      const auto refit = TriangulateMultiView(poses, cameras, pixels);
      if (!refit) {
        doomed.push_back(pid);
        continue;
      }
      bool in_front = true;
      for (const Pose* pose : poses) {
        if (pose->WorldToCamera(*refit).z() <= 0.0) {
          in_front = false;
          break;
        }
      }
      if (!in_front) {
        doomed.push_back(pid);
        continue;
      }
      point.position = *refit;
    }
    for (const point3d_t pid : doomed) RemovePointAndTrack(pid);
  }

  void RemovePointAndTrack(point3d_t pid) {
    const auto it = point_to_track_.find(pid);
    if (it != point_to_track_.end()) {
      track_to_point_.erase(it->second);
      point_to_track_.erase(it);
    }
    recon_.RemovePoint(pid);
  }

  // Bundle adjustment over a chosen set of variable poses and points. Frames
  // observing the points but outside the variable set join as constants
  // unless `only_variable_observers` keeps their observations out entirely.
  void BundleAdjustSubset(const std::set<image_t>& variable_images,
                          const std::set<point3d_t>& point_ids,
                          bool only_variable_observers = false) {
    if (point_ids.empty()) return;
    BAProblem problem;
    std::map<image_t, int> pose_index;
    std::map<point3d_t, int> point_index;

    auto pose_slot = [&](image_t image, bool constant) {
      const auto it = pose_index.find(image);
      if (it != pose_index.end()) return it->second;
      const int idx = problem.AddPose(recon_.frames.at(image).pose,
                                      intrinsics_.at(image), constant);
      pose_index[image] = idx;
      return idx;
    };

    size_t num_observations = 0;
    for (const point3d_t pid : point_ids) {
      const auto point_it = recon_.points.find(pid);
      if (point_it == recon_.points.end()) continue;
      int usable = 0;
      for (const auto& [image, feature] : point_it->second.observations) {
        if (!recon_.IsRegistered(image)) continue;
        if (only_variable_observers && !variable_images.count(image) &&
            image != recon_.init_image_a && image != recon_.init_image_b) {
          continue;
        }
        ++usable;
      }
      if (usable < 2) continue;
      const int xi = problem.AddPoint(point_it->second.position, false);
      point_index[pid] = xi;
      for (const auto& [image, feature] : point_it->second.observations) {
        if (!recon_.IsRegistered(image)) continue;
        const bool variable = variable_images.count(image) > 0;
        if (only_variable_observers && !variable &&
            image != recon_.init_image_a && image != recon_.init_image_b) {
          continue;
        }
        const int pi = pose_slot(image, !variable);
        problem.AddObservation(pi, point_index[pid],
                               features_.at(image).keypoints[feature]);
        ++num_observations;
      }
    }
    if (problem.NumVariablePoses() + problem.NumVariablePoints() == 0 ||
        num_observations == 0) {
      return;
    }
    // The gauge needs at least one constant pose; anchor the initial pair or,
    // failing that, the lowest-id participating frame.
    bool has_constant = false;
    for (const auto& [image, idx] : pose_index) {
      if (problem.IsPoseConstant(idx)) {
        has_constant = true;
        break;
      }
    }
    if (!has_constant && !pose_index.empty()) {
      problem.SetPoseConstant(pose_index.begin()->second, true);
    }

    SolverOptions options = config_.BaOptions();
    options.max_iterations = 25;
    BundleAdjust(problem, options, config_.threads);

    for (const auto& [image, idx] : pose_index) {
      if (!problem.IsPoseConstant(idx)) {
        recon_.frames.at(image).pose = problem.GetPose(idx);
      }
    }
    for (const auto& [pid, idx] : point_index) {
      recon_.points.at(pid).position = problem.GetPoint(idx);
    }
  }

  void PoseOnlyRefine(image_t image) {
    BAProblem problem;
    const int pose_index =
        problem.AddPose(recon_.frames.at(image).pose, intrinsics_.at(image));
    size_t count = 0;
    for (const auto& [key, pid] : recon_.Observations()) {
      if (key.first != image) continue;
      const int xi =
          problem.AddPoint(recon_.points.at(pid).position, /*constant=*/true);
      problem.AddObservation(pose_index, xi,
                             features_.at(image).keypoints[key.second]);
      ++count;
    }
    if (count < static_cast<size_t>(config_.recon.min_pnp_inliers)) return;
    SolverOptions options = config_.BaOptions();
    options.max_iterations = 10;
    BundleAdjust(problem, options);
    recon_.frames.at(image).pose = problem.GetPose(pose_index);
  }

  // Drops observations beyond the reprojection gate (or behind the camera)
  // and points left with fewer than two registered observers.
  void FilterObservationsOf(const std::vector<point3d_t>& candidates) {
    std::vector<std::pair<point3d_t, std::pair<image_t, feature_t>>> doomed;
    for (const point3d_t pid : candidates) {
      const auto it = recon_.points.find(pid);
      if (it == recon_.points.end()) continue;
      for (const auto& obs : it->second.observations) {
        if (!recon_.IsRegistered(obs.first)) continue;
        const auto pixel = Project(intrinsics_.at(obs.first),
                                   recon_.frames.at(obs.first).pose,
                                   it->second.position);
        const double error =
            pixel ? (*pixel - features_.at(obs.first).keypoints[obs.second])
                        .norm()
                  : std::numeric_limits<double>::max();
        if (error > config_.geometry.tau_px) {
          doomed.push_back({pid, obs});
        }
      }
    }
    std::set<point3d_t> touched;
    for (const auto& [pid, obs] : doomed) {
      recon_.RemoveObservation(pid, obs.first, obs.second);
      touched.insert(pid);
    }
    for (const point3d_t pid : touched) {
      size_t registered_obs = 0;
      for (const auto& [image, feature] : recon_.points.at(pid).observations) {
        if (recon_.IsRegistered(image)) ++registered_obs;
      }
      if (registered_obs < 2) RemovePointAndTrack(pid);
    }
  }

  void FilterImageObservations(image_t image) {
    std::vector<point3d_t> candidates;
    for (const auto& [key, pid] : recon_.Observations()) {
      if (key.first == image) candidates.push_back(pid);
    }
    FilterObservationsOf(candidates);
  }

  void FilterAllObservations() {
    std::vector<point3d_t> candidates;
    for (const auto& [pid, point] : recon_.points) candidates.push_back(pid);
    FilterObservationsOf(candidates);
  }

  const std::map<image_t, CameraIntrinsics>& intrinsics_;
  const std::map<image_t, FeatureSet>& features_;
  const MatchDatabase& db_;
  Config config_;

  TrackStore tracks_;
  std::unordered_map<size_t, std::vector<std::pair<image_t, feature_t>>>
      track_members_;
  std::map<image_t, std::vector<std::pair<image_t, const MatchPair*>>>
      neighbors_;

  Reconstruction recon_;
  std::unordered_map<size_t, point3d_t> track_to_point_;
  std::unordered_map<point3d_t, size_t> point_to_track_;
  std::vector<image_t> registration_order_;
  std::map<image_t, int> trial_count_;
  ReconStats stats_;
};

}  // namespace ecsfm
