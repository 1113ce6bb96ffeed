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

#include <map>
#include <optional>
#include <set>

#include "ecsfm/config.hpp"
#include "ecsfm/covis_graph.hpp"
#include "ecsfm/matcher.hpp"
#include "ecsfm/scheduler.hpp"
#include "ecsfm/two_view.hpp"
#include "ecsfm/types.hpp"

namespace ecsfm {

// Descriptor matching plus robust two-view verification, seeded per pair.
// Degenerate pairs keep their verified matches but carry no relative pose.
inline PairMatcher MakePairMatcher(
    const std::map<image_t, FeatureSet>& features,
    const std::map<image_t, CameraIntrinsics>& intrinsics,
    const Config& config) {
  return [&features, &intrinsics, &config](image_t a, image_t b) {
    MatchPair out;
    out.image_a = std::min(a, b);
    out.image_b = std::max(a, b);
    const FeatureSet& fa = features.at(out.image_a);
    const FeatureSet& fb = features.at(out.image_b);
    const auto matches = MatchDescriptors(fa, fb, config.matching.ratio);
    if (static_cast<int>(matches.size()) < 8) return out;
    const auto result = EstimateTwoView(
        fa, fb, matches, intrinsics.at(out.image_a),
        intrinsics.at(out.image_b), config.geometry,
        DeriveSeed(config.seed, uint64_t(out.image_a), uint64_t(out.image_b)));
    if (result.status == TwoViewStatus::kTooFewMatches ||
        result.status == TwoViewStatus::kRansacFailure) {
      return out;
    }
    out.matches = matches;
    out.inlier_mask = result.inliers;
    if (result.ok()) out.two_view_pose = result.RelativePose();
    return out;
  };
}

inline void AssignPatchIds(const std::map<image_t, CameraIntrinsics>& intrinsics,
                           int patch_grid,
                           std::map<image_t, FeatureSet>* features) {
  for (auto& [image, set] : *features) {
    set.AssignPatchIds(intrinsics.at(image), patch_grid);
  }
}

// Attempted-pair set of the fixed-N retrieval baseline.
inline std::set<std::pair<image_t, image_t>> BaselineAttemptedPairs(
    const RetrievalIndex& retrieval,
    const std::map<image_t, FeatureSet>& features, int n) {
  std::set<std::pair<image_t, image_t>> pairs;
  for (const auto& [image, set] : features) {
    for (const image_t other : retrieval.Neighbors(image, n)) {
      if (other != image) pairs.insert(CanonicalPair(image, other));
    }
  }
  return pairs;
}

struct MatchStageMetrics {
  size_t attempted = 0;
  size_t stored = 0;
  size_t true_positive = 0;  // attempted pairs sharing >= 30 result tracks
  double precision = 0.0;    // true_positive / attempted
  std::optional<double> recall;  // vs an oracle covisible set, when given
};

// Precision from the shared-track counts of the matching result; recall
// against an oracle covisible pair set when one is supplied.
inline MatchStageMetrics ComputeMatchMetrics(
    const MatchDatabase& db, const std::map<image_t, FeatureSet>& features,
    const std::set<std::pair<image_t, image_t>>* oracle_covisible = nullptr) {
  MatchStageMetrics metrics;
  metrics.attempted = db.NumAttempted();
  metrics.stored = db.NumPairs();

  const TrackStore tracks = BuildTracks(db, features);
  std::map<std::pair<image_t, image_t>, int> shared;
  for (const auto& [root, members] : tracks.Tracks()) {
    std::vector<image_t> images;
    for (const size_t member : members) {
      images.push_back(tracks.Indexer().Local(member).first);
    }
    std::sort(images.begin(), images.end());
    images.erase(std::unique(images.begin(), images.end()), images.end());
    for (size_t i = 0; i < images.size(); ++i) {
      for (size_t j = i + 1; j < images.size(); ++j) {
        ++shared[{images[i], images[j]}];
      }
    }
  }
  for (const auto& key : db.Attempted()) {
    const auto it = shared.find(key);
    if (it != shared.end() && it->second >= 30) ++metrics.true_positive;
  }
  metrics.precision = metrics.attempted == 0
                          ? 0.0
                          : double(metrics.true_positive) /
                                double(metrics.attempted);
  if (oracle_covisible != nullptr && !oracle_covisible->empty()) {
    size_t hit = 0;
    for (const auto& key : *oracle_covisible) {
      if (db.IsAttempted(key.first, key.second)) ++hit;
    }
    metrics.recall = double(hit) / double(oracle_covisible->size());
  }
  return metrics;
}

}  // namespace ecsfm
