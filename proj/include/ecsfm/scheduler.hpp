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

#include <deque>
#include <functional>
#include <map>
#include <set>
#include <stdexcept>
#include <vector>

#include "ecsfm/covis_graph.hpp"
#include "ecsfm/logging.hpp"
#include "ecsfm/parallel.hpp"
#include "ecsfm/tracks.hpp"
#include "ecsfm/types.hpp"

namespace ecsfm {

// Matches a canonical image pair and returns the verified result; failures
// come back with zero inliers. Implementations must be pure and seeded by the
// pair key so parallel scheduling cannot change results.
using PairMatcher = std::function<MatchPair(image_t, image_t)>;

// Stored pair with the most inliers; ties break on the lowest canonical key.
inline std::pair<image_t, image_t> SelectSeedPair(const MatchDatabase& db) {
  if (db.Pairs().empty()) {
    throw std::invalid_argument("SelectSeedPair: empty match database");
  }
  std::pair<image_t, image_t> best_key{-1, -1};
  size_t best_inliers = 0;
  for (const auto& [key, pair] : db.Pairs()) {
    const size_t inliers = pair.NumInliers();
    if (inliers > best_inliers) {
      best_inliers = inliers;
      best_key = key;
    }
  }
  return best_key;
}

// Registration approximation: the least fixpoint of "add any image with more
// than `threshold` inlier matches into the growing feature set F", starting
// from the matched features of the seed pair. The result is independent of
// the scan order.
inline std::set<image_t> ApproximateRegistration(
    const MatchDatabase& db, const std::map<image_t, FeatureSet>& features,
    int threshold, std::pair<image_t, image_t> seed_pair) {
  if (db.Get(seed_pair.first, seed_pair.second) == nullptr) {
    throw std::invalid_argument(
        "ApproximateRegistration: seed pair not in database");
  }

  const FeatureIndexer indexer(features);
  // Per-feature incident inlier matches.
  std::vector<std::vector<size_t>> feature_adjacency(indexer.Total());
  for (const auto& [key, pair] : db.Pairs()) {
    const size_t base_a = indexer.GlobalId(key.first, 0);
    const size_t base_b = indexer.GlobalId(key.second, 0);
    pair.ForEachInlier([&](feature_t fa, feature_t fb) {
      feature_adjacency[base_a + fa].push_back(base_b + fb);
      feature_adjacency[base_b + fb].push_back(base_a + fa);
    });
  }

  std::set<image_t> members;
  std::vector<uint8_t> in_feature_set(indexer.Total(), 0);
  std::map<image_t, int> match_count;
  std::deque<image_t> ready;
  std::set<image_t> queued;

  auto add_feature = [&](size_t global) {
    if (in_feature_set[global]) return;
    in_feature_set[global] = 1;
    for (const size_t other : feature_adjacency[global]) {
      const image_t other_image = indexer.Local(other).first;
      if (members.count(other_image)) continue;
      const int count = ++match_count[other_image];
      if (count > threshold && !queued.count(other_image)) {
        queued.insert(other_image);
        ready.push_back(other_image);
      }
    }
  };

  auto absorb_pair = [&](const MatchPair& pair) {
    const size_t base_a = indexer.GlobalId(pair.image_a, 0);
    const size_t base_b = indexer.GlobalId(pair.image_b, 0);
    pair.ForEachInlier([&](feature_t fa, feature_t fb) {
      add_feature(base_a + fa);
      add_feature(base_b + fb);
    });
  };

  members.insert(seed_pair.first);
  members.insert(seed_pair.second);
  absorb_pair(*db.Get(seed_pair.first, seed_pair.second));

  while (!ready.empty()) {
    const image_t image = ready.front();
    ready.pop_front();
    if (members.count(image)) continue;
    members.insert(image);
    // Absorb Tri(image, J) for every member J.
    for (const auto& [other, pair] : db.PairsOf(image)) {
      if (members.count(other)) absorb_pair(*pair);
    }
  }
  return members;
}

struct Clustering {
  std::vector<std::vector<image_t>> clusters;
  std::vector<image_t> representatives;   // first image of each cluster
  std::map<image_t, size_t> cluster_of;
};

// Greedy sequential-overlap agglomeration over the initial match graph:
// walking the images in input order, an image joins the current cluster while
// its inlier overlap with the cluster representative stays at or above
// `min_overlap`, otherwise it begins a new cluster.
inline Clustering ClusterRepresentatives(const MatchDatabase& db,
                                         const std::vector<image_t>& order,
                                         int min_overlap) {
  Clustering result;
  for (const image_t image : order) {
    bool joined = false;
    if (!result.clusters.empty()) {
      const image_t rep = result.representatives.back();
      const MatchPair* pair = db.Get(rep, image);
      if (pair != nullptr &&
          static_cast<int>(pair->NumInliers()) >= min_overlap) {
        joined = true;
      }
    }
    if (joined) {
      result.cluster_of[image] = result.clusters.size() - 1;
      result.clusters.back().push_back(image);
    } else {
      result.cluster_of[image] = result.clusters.size();
      result.clusters.push_back({image});
      result.representatives.push_back(image);
    }
  }
  return result;
}

struct IterativeMatchStats {
  int iterations = 0;
  size_t pairs_attempted = 0;
  size_t pairs_from_voting = 0;
};

namespace internal {

// Matches every candidate pair with the injected matcher and commits the
// results in canonical order. Parallel workers own disjoint output slots.
inline void MatchCandidates(
    const std::vector<std::pair<image_t, image_t>>& candidates,
    const PairMatcher& matcher, int threads, MatchDatabase* db) {
  std::vector<MatchPair> results(candidates.size());
  ParallelFor(candidates.size(), threads, [&](size_t i) {
    results[i] = matcher(candidates[i].first, candidates[i].second);
  });
  for (size_t i = 0; i < candidates.size(); ++i) {
    db->MarkAttempted(candidates[i].first, candidates[i].second);
    if (results[i].NumInliers() > 0) {
      db->Store(std::move(results[i]));
    }
  }
}

}  // namespace internal

// Iterative matching: per iteration recompute the potential registration set,
// rebuild the region covisibility graph, and test every untested covisible
// pair whose first endpoint lies in the registration set and whose second
// comes from its retrieval list. Images whose retrieval lists contain at
// least `vote_min` registration-set members are matched against their full
// retrieval lists. Every candidate therefore stays inside the fixed-N_max
// retrieval baseline.
inline MatchDatabase IterativeMatch(MatchDatabase db,
                                    const RetrievalIndex& retrieval,
                                    const std::map<image_t, FeatureSet>& features,
                                    const MatchingConfig& config,
                                    const PairMatcher& matcher,
                                    int threads = 1,
                                    IterativeMatchStats* stats = nullptr) {
  IterativeMatchStats local_stats;
  for (int iteration = 0; iteration < config.max_iterations; ++iteration) {
    if (db.Pairs().empty()) break;
    const auto seed = SelectSeedPair(db);
    const auto registered =
        ApproximateRegistration(db, features, config.alg1_threshold, seed);
    const TrackStore tracks = BuildTracks(db, features);
    const PatchCovisGraph graph = BuildPatchGraph(
        tracks, features, config.patch_grid, config.min_shared_tracks);

    std::set<std::pair<image_t, image_t>> candidate_set;
    for (const image_t image : registered) {
      const auto distances = graph.ImageDistances(image, config.sigma);
      for (const image_t other :
           retrieval.Neighbors(image, config.n_max)) {
        if (other == image || db.IsAttempted(image, other)) continue;
        const auto it = distances.find(other);
        if (it != distances.end() && it->second <= config.sigma) {
          candidate_set.insert(CanonicalPair(image, other));
        }
      }
    }

    // Retrieval voting for images outside the registration set.
    size_t votes_added = 0;
    for (const auto& [image, set] : features) {
      if (registered.count(image)) continue;
      const auto neighbors = retrieval.Neighbors(image, config.n_max);
      int votes = 0;
      for (const image_t other : neighbors) {
        if (registered.count(other)) ++votes;
      }
      if (votes < config.vote_min) continue;
      for (const image_t other : neighbors) {
        if (other == image || db.IsAttempted(image, other)) continue;
        if (candidate_set.insert(CanonicalPair(image, other)).second) {
          ++votes_added;
        }
      }
    }

    if (candidate_set.empty()) {
      local_stats.iterations = iteration + 1;
      break;
    }
    const std::vector<std::pair<image_t, image_t>> candidates(
        candidate_set.begin(), candidate_set.end());
    internal::MatchCandidates(candidates, matcher, threads, &db);
    local_stats.pairs_attempted += candidates.size();
    local_stats.pairs_from_voting += votes_added;
    local_stats.iterations = iteration + 1;
    LogDebug("iterative match round %d: %zu candidates (%zu from voting)",
             iteration + 1, candidates.size(), votes_added);
  }
  if (stats != nullptr) *stats = local_stats;
  return db;
}

// Full matching stage: initial retrieval matching, sequential clustering,
// iterative matching over cluster representatives, then a covisibility-gated
// pass that attaches the remaining member images.
inline MatchDatabase RunMatchStage(const std::map<image_t, FeatureSet>& features,
                                   const RetrievalIndex& retrieval,
                                   const MatchingConfig& config,
                                   const PairMatcher& matcher,
                                   int threads = 1,
                                   IterativeMatchStats* stats = nullptr) {
  MatchDatabase db;
  std::vector<image_t> order;
  for (const auto& [image, set] : features) order.push_back(image);

  // Initial matching against the n_init nearest retrieval neighbors.
  {
    std::set<std::pair<image_t, image_t>> initial;
    for (const image_t image : order) {
      for (const image_t other : retrieval.Neighbors(image, config.n_init)) {
        initial.insert(CanonicalPair(image, other));
      }
    }
    const std::vector<std::pair<image_t, image_t>> candidates(initial.begin(),
                                                              initial.end());
    internal::MatchCandidates(candidates, matcher, threads, &db);
  }

  const Clustering clustering =
      ClusterRepresentatives(db, order, config.cluster_overlap);
  LogInfo("matching: %zu images, %zu clusters", order.size(),
          clustering.clusters.size());

  const std::set<image_t> reps(clustering.representatives.begin(),
                               clustering.representatives.end());

  // Iterative matching over the representative set only.
  {
    std::map<image_t, FeatureSet> rep_features;
    for (const image_t rep : clustering.representatives) {
      rep_features[rep] = features.at(rep);
    }
    const RetrievalIndex rep_retrieval = retrieval.Restricted(reps);

    MatchDatabase rep_db = db.Restricted(reps);
    // Bootstrap representative connectivity when the initial matches were
    // concentrated inside the clusters.
    {
      std::set<std::pair<image_t, image_t>> boot;
      for (const image_t rep : clustering.representatives) {
        for (const image_t other :
             rep_retrieval.Neighbors(rep, config.n_init)) {
          if (!rep_db.IsAttempted(rep, other) && !db.IsAttempted(rep, other)) {
            boot.insert(CanonicalPair(rep, other));
          }
        }
      }
      const std::vector<std::pair<image_t, image_t>> candidates(boot.begin(),
                                                                boot.end());
      internal::MatchCandidates(candidates, matcher, threads, &rep_db);
    }

    rep_db = IterativeMatch(std::move(rep_db), rep_retrieval, rep_features,
                            config, matcher, threads, stats);
    db.MergeFrom(rep_db);
  }

  // Member pass: remaining images matched through the final covisibility
  // graph, within and across the clusters their retrieval lists reach.
  if (reps.size() < order.size()) {
    const TrackStore tracks = BuildTracks(db, features);
    const PatchCovisGraph graph = BuildPatchGraph(
        tracks, features, config.patch_grid, config.min_shared_tracks);
    std::set<std::pair<image_t, image_t>> member_candidates;
    for (const image_t image : order) {
      if (reps.count(image)) continue;
      const auto distances = graph.ImageDistances(image, config.sigma);
      for (const image_t other : retrieval.Neighbors(image, config.n_max)) {
        if (other == image || db.IsAttempted(image, other)) continue;
        const auto it = distances.find(other);
        if (it != distances.end() && it->second <= config.sigma) {
          member_candidates.insert(CanonicalPair(image, other));
        }
      }
    }
    const std::vector<std::pair<image_t, image_t>> candidates(
        member_candidates.begin(), member_candidates.end());
    internal::MatchCandidates(candidates, matcher, threads, &db);
    if (stats != nullptr) stats->pairs_attempted += candidates.size();
  }

  db.CheckInvariants();
  return db;
}

}  // namespace ecsfm
