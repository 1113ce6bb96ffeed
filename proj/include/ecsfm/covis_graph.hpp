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
#include <limits>
#include <map>
#include <set>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "ecsfm/tracks.hpp"
#include "ecsfm/types.hpp"

namespace ecsfm {

constexpr int kInfiniteDistance = std::numeric_limits<int>::max();

// Verified matches keyed by canonical pair, plus the set of pairs already
// attempted. A pair is matched at most once.
class MatchDatabase {
 public:
  using PairKey = std::pair<image_t, image_t>;

  bool IsAttempted(image_t a, image_t b) const {
    return attempted_.count(CanonicalPair(a, b)) > 0;
  }

  void MarkAttempted(image_t a, image_t b) {
    attempted_.insert(CanonicalPair(a, b));
  }

  // Stores a verified pair; the pair is implicitly marked attempted.
  void Store(MatchPair pair) {
    if (pair.image_a > pair.image_b) {
      throw std::invalid_argument("MatchDatabase: pair key not canonical");
    }
    const PairKey key{pair.image_a, pair.image_b};
    attempted_.insert(key);
    pairs_[key] = std::move(pair);
  }

  const MatchPair* Get(image_t a, image_t b) const {
    const auto it = pairs_.find(CanonicalPair(a, b));
    return it == pairs_.end() ? nullptr : &it->second;
  }

  const std::map<PairKey, MatchPair>& Pairs() const { return pairs_; }
  const std::set<PairKey>& Attempted() const { return attempted_; }

  size_t NumPairs() const { return pairs_.size(); }
  size_t NumAttempted() const { return attempted_.size(); }

  std::vector<std::pair<image_t, const MatchPair*>> PairsOf(image_t image)
      const {
    std::vector<std::pair<image_t, const MatchPair*>> result;
    for (const auto& [key, pair] : pairs_) {
      if (key.first == image) result.emplace_back(key.second, &pair);
      if (key.second == image) result.emplace_back(key.first, &pair);
    }
    return result;
  }

  // Restriction of the database to pairs inside `universe`.
  MatchDatabase Restricted(const std::set<image_t>& universe) const {
    MatchDatabase sub;
    for (const auto& key : attempted_) {
      if (universe.count(key.first) && universe.count(key.second)) {
        sub.attempted_.insert(key);
      }
    }
    for (const auto& [key, pair] : pairs_) {
      if (universe.count(key.first) && universe.count(key.second)) {
        sub.pairs_[key] = pair;
      }
    }
    return sub;
  }

  void MergeFrom(const MatchDatabase& other) {
    for (const auto& key : other.attempted_) attempted_.insert(key);
    for (const auto& [key, pair] : other.pairs_) pairs_[key] = pair;
  }

  void CheckInvariants() const {
    for (const auto& [key, pair] : pairs_) {
      if (attempted_.count(key) == 0) {
        throw std::runtime_error("MatchDatabase: stored pair not attempted");
      }
      if (pair.inlier_mask.size() != pair.matches.size()) {
        throw std::runtime_error("MatchDatabase: mask size mismatch");
      }
    }
  }

 private:
  std::map<PairKey, MatchPair> pairs_;
  std::set<PairKey> attempted_;
};

// Per-image ranked neighbor lists with similarity scores.
class RetrievalIndex {
 public:
  void Add(image_t query, image_t neighbor, double score) {
    if (query == neighbor) return;
    lists_[query].emplace_back(neighbor, score);
    sorted_ = false;
  }

  void SetList(image_t query,
               std::vector<std::pair<image_t, double>> neighbors) {
    lists_[query] = std::move(neighbors);
    sorted_ = false;
  }

  void SortAll() {
    for (auto& [query, list] : lists_) {
      std::stable_sort(list.begin(), list.end(),
                       [](const auto& a, const auto& b) {
                         if (a.second != b.second) return a.second > b.second;
                         return a.first < b.first;
                       });
    }
    sorted_ = true;
  }

  // Top-n neighbor ids for `query` (fewer when the list is shorter).
  std::vector<image_t> Neighbors(image_t query, int n) const {
    std::vector<image_t> result;
    const auto it = lists_.find(query);
    if (it == lists_.end()) return result;
    const auto& list = it->second;
    const size_t count = std::min<size_t>(list.size(), std::max(n, 0));
    result.reserve(count);
    for (size_t i = 0; i < count; ++i) result.push_back(list[i].first);
    return result;
  }

  const std::map<image_t, std::vector<std::pair<image_t, double>>>& Lists()
      const {
    return lists_;
  }

  bool IsSorted() const { return sorted_; }

  // Retrieval filtered to a subset of the image universe.
  RetrievalIndex Restricted(const std::set<image_t>& universe) const {
    RetrievalIndex sub;
    for (const auto& [query, list] : lists_) {
      if (!universe.count(query)) continue;
      std::vector<std::pair<image_t, double>> filtered;
      for (const auto& entry : list) {
        if (universe.count(entry.first)) filtered.push_back(entry);
      }
      sub.lists_[query] = std::move(filtered);
    }
    sub.sorted_ = sorted_;
    return sub;
  }

 private:
  std::map<image_t, std::vector<std::pair<image_t, double>>> lists_;
  bool sorted_ = false;
};

// Region-based covisibility graph: nodes are image patches, edges connect
// cross-image patch pairs sharing at least `min_shared_tracks` feature
// tracks. Image distance is the minimum patch-graph distance over all patch
// pairs of the two images.
class PatchCovisGraph {
 public:
  PatchCovisGraph() = default;

  PatchCovisGraph(const FeatureIndexer& indexer, int patch_grid,
                  int min_shared_tracks)
      : indexer_(indexer),
        patch_grid_(patch_grid),
        min_shared_tracks_(min_shared_tracks),
        patches_per_image_(static_cast<size_t>(patch_grid) * patch_grid) {
    adjacency_.resize(indexer_.NumImages() * patches_per_image_);
  }

  int patch_grid() const { return patch_grid_; }
  int min_shared_tracks() const { return min_shared_tracks_; }

  size_t NodeId(image_t image, int32_t patch) const {
    return indexer_.ImageIndex(image) * patches_per_image_ +
           static_cast<size_t>(patch);
  }

  void AddEdge(size_t node_a, size_t node_b) {
    adjacency_[node_a].push_back(node_b);
    adjacency_[node_b].push_back(node_a);
    ++num_edges_;
  }

  size_t NumEdges() const { return num_edges_; }

  const std::vector<size_t>& NeighborsOf(size_t node) const {
    return adjacency_[node];
  }

  bool HasEdge(size_t node_a, size_t node_b) const {
    const auto& adj = adjacency_[node_a];
    return std::find(adj.begin(), adj.end(), node_b) != adj.end();
  }

  image_t ImageOfNode(size_t node) const {
    return indexer_.Images()[node / patches_per_image_];
  }

  // Breadth-first distances from all patches of `image` out to `max_depth`
  // hops. Returns the minimum patch distance per reachable image; the query
  // image itself maps to 0 by definition.
  std::map<image_t, int> ImageDistances(image_t image, int max_depth) const {
    std::map<image_t, int> result;
    result[image] = 0;
    const size_t base = indexer_.ImageIndex(image) * patches_per_image_;
    std::unordered_map<size_t, int> dist;
    std::deque<size_t> queue;
    for (size_t p = 0; p < patches_per_image_; ++p) {
      const size_t node = base + p;
      if (!adjacency_[node].empty()) {
        dist[node] = 0;
        queue.push_back(node);
      }
    }
    while (!queue.empty()) {
      const size_t node = queue.front();
      queue.pop_front();
      const int d = dist[node];
      if (d >= max_depth) continue;
      for (const size_t next : adjacency_[node]) {
        if (dist.count(next)) continue;
        dist[next] = d + 1;
        queue.push_back(next);
        const image_t other = ImageOfNode(next);
        const auto it = result.find(other);
        if (it == result.end() || it->second > d + 1) result[other] = d + 1;
      }
    }
    return result;
  }

  // Min-over-patches shortest-path distance between two images;
  // kInfiniteDistance when no path connects them.
  int ImageDistance(image_t a, image_t b) const {
    if (a == b) return 0;
    const auto dists =
        ImageDistances(a, static_cast<int>(adjacency_.size()) + 1);
    const auto it = dists.find(b);
    return it == dists.end() ? kInfiniteDistance : it->second;
  }

  bool Covisible(image_t a, image_t b, int sigma) const {
    const int d = ImageDistance(a, b);
    return d != kInfiniteDistance && d <= sigma;
  }

 private:
  FeatureIndexer indexer_;
  int patch_grid_ = 0;
  int min_shared_tracks_ = 0;
  size_t patches_per_image_ = 0;
  size_t num_edges_ = 0;
  std::vector<std::vector<size_t>> adjacency_;
};

// Connected components of inlier matches.
inline TrackStore BuildTracks(const MatchDatabase& db,
                              const std::map<image_t, FeatureSet>& features) {
  TrackStore tracks{FeatureIndexer(features)};
  const auto& indexer = tracks.Indexer();
  for (const auto& [key, pair] : db.Pairs()) {
    const size_t base_a = indexer.GlobalId(key.first, 0);
    const size_t base_b = indexer.GlobalId(key.second, 0);
    pair.ForEachInlier([&](feature_t fa, feature_t fb) {
      tracks.Union(base_a + static_cast<size_t>(fa),
                   base_b + static_cast<size_t>(fb));
    });
  }
  return tracks;
}

// Edges are exactly the cross-image patch pairs with at least
// `min_shared_tracks` shared tracks. Each track contributes at most once to
// a given patch pair.
inline PatchCovisGraph BuildPatchGraph(
    const TrackStore& tracks, const std::map<image_t, FeatureSet>& features,
    int patch_grid, int min_shared_tracks) {
  const auto& indexer = tracks.Indexer();
  PatchCovisGraph graph(indexer, patch_grid, min_shared_tracks);

  std::map<std::pair<size_t, size_t>, int> shared_count;
  for (const auto& [root, members] : tracks.Tracks()) {
    // Distinct patch nodes touched by this track.
    std::vector<size_t> nodes;
    for (const size_t member : members) {
      const auto [image, feature] = indexer.Local(member);
      const auto& set = features.at(image);
      if (set.patch_grid != patch_grid) {
        throw std::invalid_argument(
            "BuildPatchGraph: feature patch grid does not match");
      }
      nodes.push_back(graph.NodeId(image, set.patch_ids[feature]));
    }
    std::sort(nodes.begin(), nodes.end());
    nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
    for (size_t i = 0; i < nodes.size(); ++i) {
      for (size_t j = i + 1; j < nodes.size(); ++j) {
        if (graph.ImageOfNode(nodes[i]) == graph.ImageOfNode(nodes[j])) {
          continue;  // no edges between patches of the same image
        }
        ++shared_count[{nodes[i], nodes[j]}];
      }
    }
  }
  for (const auto& [nodes, count] : shared_count) {
    if (count >= min_shared_tracks) graph.AddEdge(nodes.first, nodes.second);
  }
  return graph;
}

}  // namespace ecsfm
