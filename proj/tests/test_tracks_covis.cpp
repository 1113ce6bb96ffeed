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
#include <deque>

#include "ecsfm/covis_graph.hpp"
#include "ecsfm/tracks.hpp"
#include "test_helpers.hpp"

using namespace ecsfm;

namespace {

// Feature sets with `count` keypoints on a grid, no descriptors.
std::map<image_t, FeatureSet> GridFeatures(int images, int count,
                                           int patch_grid) {
  const auto camera = testing::DefaultCamera();
  std::map<image_t, FeatureSet> features;
  for (image_t id = 0; id < images; ++id) {
    FeatureSet set;
    set.image_id = id;
    for (int i = 0; i < count; ++i) {
      const double x = 5.0 + (i * 37) % (camera.width - 10);
      const double y = 5.0 + (i * 53) % (camera.height - 10);
      set.keypoints.emplace_back(x, y);
    }
    set.AssignPatchIds(camera, patch_grid);
    features[id] = std::move(set);
  }
  return features;
}

MatchPair MakePair(image_t a, image_t b,
                   const std::vector<FeatureMatch>& matches) {
  MatchPair pair;
  pair.image_a = a;
  pair.image_b = b;
  pair.matches = matches;
  pair.inlier_mask.assign(matches.size(), 1);
  return pair;
}

// Independent connected-components oracle over the match graph via BFS.
std::map<size_t, size_t> BfsComponents(
    const MatchDatabase& db, const std::map<image_t, FeatureSet>& features) {
  FeatureIndexer indexer(features);
  std::map<size_t, std::vector<size_t>> adjacency;
  for (const auto& [key, pair] : db.Pairs()) {
    pair.ForEachInlier([&](feature_t fa, feature_t fb) {
      const size_t a = indexer.GlobalId(key.first, fa);
      const size_t b = indexer.GlobalId(key.second, fb);
      adjacency[a].push_back(b);
      adjacency[b].push_back(a);
    });
  }
  std::map<size_t, size_t> component;
  size_t next = 0;
  for (size_t id = 0; id < indexer.Total(); ++id) {
    if (component.count(id)) continue;
    const size_t label = next++;
    std::deque<size_t> queue{id};
    component[id] = label;
    while (!queue.empty()) {
      const size_t node = queue.front();
      queue.pop_front();
      for (const size_t other : adjacency[node]) {
        if (!component.count(other)) {
          component[other] = label;
          queue.push_back(other);
        }
      }
    }
  }
  return component;
}

}  // namespace

TEST_CASE("BuildTracks merges chained matches transitively") {
  auto features = GridFeatures(3, 10, 4);
  MatchDatabase db;
  db.Store(MakePair(0, 1, {{1, 1}}));
  db.Store(MakePair(1, 2, {{1, 1}}));

  const auto tracks = BuildTracks(db, features);
  CHECK(tracks.SameTrack(tracks.Find(0, 1), tracks.Find(2, 1)));
  CHECK(tracks.TrackSize(tracks.Find(1, 1)) == 3);
  CHECK_FALSE(tracks.SameTrack(tracks.Find(0, 0), tracks.Find(1, 0)));
}

TEST_CASE("BuildTracks on an empty database yields singletons") {
  auto features = GridFeatures(2, 5, 4);
  MatchDatabase db;
  const auto tracks = BuildTracks(db, features);
  for (image_t i = 0; i < 2; ++i) {
    for (feature_t f = 0; f < 5; ++f) {
      CHECK(tracks.TrackSize(tracks.Find(i, f)) == 1);
    }
  }
}

TEST_CASE("BuildTracks components match a BFS oracle on random graphs") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 10; ++trial) {
    auto features = GridFeatures(6, 20, 4);
    MatchDatabase db;
    std::uniform_int_distribution<int> feature_pick(0, 19);
    std::uniform_int_distribution<int> count_pick(1, 8);
    for (image_t a = 0; a < 6; ++a) {
      for (image_t b = a + 1; b < 6; ++b) {
        if (rng() % 3 == 0) continue;
        std::set<std::pair<feature_t, feature_t>> unique;
        const int count = count_pick(rng);
        for (int k = 0; k < count; ++k) {
          unique.insert({feature_pick(rng), feature_pick(rng)});
        }
        db.Store(MakePair(
            a, b, std::vector<FeatureMatch>(unique.begin(), unique.end())));
      }
    }

    const auto tracks = BuildTracks(db, features);
    const auto oracle = BfsComponents(db, features);
    const FeatureIndexer indexer(features);
    for (size_t x = 0; x < indexer.Total(); ++x) {
      for (size_t y = x + 1; y < std::min(indexer.Total(), x + 40); ++y) {
        CHECK(tracks.SameTrack(x, y) == (oracle.at(x) == oracle.at(y)));
      }
    }
  }
}

TEST_CASE("BuildPatchGraph thresholds shared tracks per patch pair") {
  // Two images, three coeventracked features all in patch (0,0) of each.
  const auto camera = testing::DefaultCamera();
  std::map<image_t, FeatureSet> features;
  for (image_t id = 0; id < 2; ++id) {
    FeatureSet set;
    set.image_id = id;
    set.keypoints = {{5.0, 5.0}, {10.0, 10.0}, {15.0, 15.0}};
    set.AssignPatchIds(camera, 4);
    features[id] = std::move(set);
  }
  MatchDatabase db;
  db.Store(MakePair(0, 1, {{0, 0}, {1, 1}, {2, 2}}));

  const auto tracks = BuildTracks(db, features);
  const auto graph2 = BuildPatchGraph(tracks, features, 4, 2);
  CHECK(graph2.NumEdges() == 1);
  CHECK(graph2.ImageDistance(0, 1) == 1);

  // With T = 4 the three shared tracks are not enough.
  const auto graph4 = BuildPatchGraph(tracks, features, 4, 4);
  CHECK(graph4.NumEdges() == 0);
  CHECK(graph4.ImageDistance(0, 1) == kInfiniteDistance);
  CHECK_FALSE(graph4.Covisible(0, 1, 3));
}

TEST_CASE("Image distance follows transitive patch chains") {
  // Chain A-B-C: A and C have no direct edge but connect through B.
  const auto camera = testing::DefaultCamera();
  std::map<image_t, FeatureSet> features;
  for (image_t id = 0; id < 3; ++id) {
    FeatureSet set;
    set.image_id = id;
    // Features in two different patches: left half and right half.
    set.keypoints = {{5.0, 5.0},   {12.0, 8.0},  {330.0, 250.0},
                     {340.0, 260.0}};
    set.AssignPatchIds(camera, 2);
    features[id] = std::move(set);
  }
  MatchDatabase db;
  // A(left patch) <-> B(left patch), B(right patch) <-> C(right patch).
  db.Store(MakePair(0, 1, {{0, 0}, {1, 1}}));
  db.Store(MakePair(1, 2, {{2, 2}, {3, 3}}));

  const auto tracks = BuildTracks(db, features);
  const auto graph = BuildPatchGraph(tracks, features, 2, 2);
  CHECK(graph.ImageDistance(0, 1) == 1);
  CHECK(graph.ImageDistance(1, 2) == 1);
  CHECK(graph.ImageDistance(0, 0) == 0);
  // A's left patch and C's right patch connect only through B's two patches,
  // which have no intra-image edge: the chain is broken.
  CHECK(graph.ImageDistance(0, 2) == kInfiniteDistance);

  // Adding a cross match that puts B's two patches in one track with A and C
  // closes the chain at distance 2.
  db.Store(MakePair(0, 2, {}));
  MatchDatabase db2;
  db2.Store(MakePair(0, 1, {{0, 0}, {1, 1}, {2, 1}, {3, 0}}));
  db2.Store(MakePair(1, 2, {{0, 2}, {1, 3}}));
  const auto tracks2 = BuildTracks(db2, features);
  const auto graph2 = BuildPatchGraph(tracks2, features, 2, 2);
  CHECK(graph2.ImageDistance(0, 2) == 2);
  CHECK(graph2.Covisible(0, 2, 3));
  CHECK_FALSE(graph2.Covisible(0, 2, 1));
}

TEST_CASE("Patch graph edges match a brute-force counting oracle") {
  std::mt19937_64 rng(123);
  auto features = GridFeatures(10, 40, 3);
  MatchDatabase db;
  std::uniform_int_distribution<int> pick(0, 39);
  for (image_t a = 0; a < 10; ++a) {
    for (image_t b = a + 1; b < 10; ++b) {
      if (rng() % 2 == 0) continue;
      std::map<feature_t, feature_t> mapping;
      for (int k = 0; k < 25; ++k) mapping[pick(rng)] = pick(rng);
      std::vector<FeatureMatch> matches(mapping.begin(), mapping.end());
      db.Store(MakePair(a, b, matches));
    }
  }
  const auto tracks = BuildTracks(db, features);
  const int grid = 3;
  const auto graph = BuildPatchGraph(tracks, features, grid, 2);

  // Oracle: exhaustive O(patches^2) shared-track counting straight from the
  // union-find roots.
  const FeatureIndexer indexer(features);
  std::map<std::pair<size_t, size_t>, std::set<size_t>> roots_by_patch_pair;
  std::map<size_t, std::set<size_t>> patch_roots;  // node -> roots present
  for (image_t image = 0; image < 10; ++image) {
    const auto& set = features[image];
    for (feature_t f = 0; f < static_cast<feature_t>(set.NumFeatures()); ++f) {
      if (tracks.TrackSize(tracks.Find(image, f)) < 2) continue;
      const size_t node = graph.NodeId(image, set.patch_ids[f]);
      patch_roots[node].insert(tracks.Find(image, f));
    }
  }
  size_t oracle_edges = 0;
  for (const auto& [node_a, roots_a] : patch_roots) {
    for (const auto& [node_b, roots_b] : patch_roots) {
      if (node_a >= node_b) continue;
      if (graph.ImageOfNode(node_a) == graph.ImageOfNode(node_b)) continue;
      int shared = 0;
      for (const size_t root : roots_a) shared += roots_b.count(root);
      if (shared >= 2) {
        ++oracle_edges;
        CHECK(graph.HasEdge(node_a, node_b));
      } else {
        CHECK_FALSE(graph.HasEdge(node_a, node_b));
      }
    }
  }
  CHECK(graph.NumEdges() == oracle_edges);
}

TEST_CASE("Image distances equal an all-pairs BFS oracle") {
  std::mt19937_64 rng(321);
  auto features = GridFeatures(8, 30, 3);
  MatchDatabase db;
  std::uniform_int_distribution<int> pick(0, 29);
  for (image_t a = 0; a < 8; ++a) {
    for (image_t b = a + 1; b < 8; ++b) {
      if (rng() % 3 != 0) continue;
      std::map<feature_t, feature_t> mapping;
      for (int k = 0; k < 20; ++k) mapping[pick(rng)] = pick(rng);
      db.Store(MakePair(a, b,
                        std::vector<FeatureMatch>(mapping.begin(), mapping.end())));
    }
  }
  const auto tracks = BuildTracks(db, features);
  const auto graph = BuildPatchGraph(tracks, features, 3, 2);

  // Oracle: per-node BFS implemented independently.
  const int num_nodes = 8 * 9;
  auto bfs_image_distance = [&](image_t from, image_t to) {
    std::map<size_t, int> dist;
    std::deque<size_t> queue;
    for (int p = 0; p < 9; ++p) {
      const size_t node = graph.NodeId(from, p);
      if (!graph.NeighborsOf(node).empty()) {
        dist[node] = 0;
        queue.push_back(node);
      }
    }
    int best = kInfiniteDistance;
    while (!queue.empty()) {
      const size_t node = queue.front();
      queue.pop_front();
      if (graph.ImageOfNode(node) == to) best = std::min(best, dist[node]);
      for (const size_t next : graph.NeighborsOf(node)) {
        if (!dist.count(next)) {
          dist[next] = dist[node] + 1;
          queue.push_back(next);
        }
      }
    }
    return best;
  };
  (void)num_nodes;
  for (image_t a = 0; a < 8; ++a) {
    for (image_t b = 0; b < 8; ++b) {
      if (a == b) continue;
      CHECK(graph.ImageDistance(a, b) == bfs_image_distance(a, b));
    }
  }
}

TEST_CASE("MatchDatabase tracks attempted pairs and restriction") {
  MatchDatabase db;
  db.MarkAttempted(3, 1);
  CHECK(db.IsAttempted(1, 3));
  CHECK_FALSE(db.IsAttempted(1, 2));
  db.Store(MakePair(1, 2, {{0, 0}}));
  CHECK(db.IsAttempted(2, 1));
  CHECK(db.Get(2, 1) != nullptr);
  db.CheckInvariants();

  const auto sub = db.Restricted({1, 2});
  CHECK(sub.NumPairs() == 1);
  CHECK(sub.NumAttempted() == 1);

  MatchDatabase other;
  other.Store(MakePair(5, 6, {{1, 1}}));
  MatchDatabase merged = db;
  merged.MergeFrom(other);
  CHECK(merged.NumPairs() == 2);

  CHECK_THROWS_AS(db.Store(MakePair(4, 2, {})), std::invalid_argument);
}
