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
#include <cstdint>
#include <map>
#include <numeric>
#include <unordered_map>
#include <vector>

#include "ecsfm/types.hpp"

namespace ecsfm {

// Dense indexing of (image_id, feature_index) pairs across an image set.
class FeatureIndexer {
 public:
  FeatureIndexer() = default;

  explicit FeatureIndexer(const std::map<image_t, FeatureSet>& features) {
    images_.reserve(features.size());
    starts_.reserve(features.size() + 1);
    size_t offset = 0;
    for (const auto& [id, set] : features) {
      index_of_[id] = images_.size();
      images_.push_back(id);
      starts_.push_back(offset);
      offset += set.NumFeatures();
    }
    starts_.push_back(offset);
  }

  size_t Total() const { return starts_.empty() ? 0 : starts_.back(); }
  size_t NumImages() const { return images_.size(); }
  const std::vector<image_t>& Images() const { return images_; }

  size_t ImageIndex(image_t image) const { return index_of_.at(image); }

  size_t GlobalId(image_t image, feature_t feature) const {
    return starts_[index_of_.at(image)] + static_cast<size_t>(feature);
  }

  std::pair<image_t, feature_t> Local(size_t global) const {
    const auto it = std::upper_bound(starts_.begin(), starts_.end(), global);
    const size_t idx = static_cast<size_t>(it - starts_.begin()) - 1;
    return {images_[idx], static_cast<feature_t>(global - starts_[idx])};
  }

 private:
  std::vector<image_t> images_;
  std::vector<size_t> starts_;
  std::unordered_map<image_t, size_t> index_of_;
};

// Union-find over global feature ids. Feature tracks are its disjoint sets.
class TrackStore {
 public:
  TrackStore() = default;

  explicit TrackStore(FeatureIndexer indexer) : indexer_(std::move(indexer)) {
    parent_.resize(indexer_.Total());
    std::iota(parent_.begin(), parent_.end(), size_t{0});
    size_.assign(indexer_.Total(), 1);
  }

  const FeatureIndexer& Indexer() const { return indexer_; }

  size_t Find(size_t id) const {
    while (parent_[id] != id) {
      parent_[id] = parent_[parent_[id]];  // path halving
      id = parent_[id];
    }
    return id;
  }

  size_t Find(image_t image, feature_t feature) const {
    return Find(indexer_.GlobalId(image, feature));
  }

  void Union(size_t a, size_t b) {
    a = Find(a);
    b = Find(b);
    if (a == b) return;
    if (size_[a] < size_[b]) std::swap(a, b);
    parent_[b] = a;
    size_[a] += size_[b];
  }

  bool SameTrack(size_t a, size_t b) const { return Find(a) == Find(b); }

  size_t TrackSize(size_t id) const { return size_[Find(id)]; }

  // Track members grouped by root, in global-id order within each track.
  std::map<size_t, std::vector<size_t>> Tracks(bool include_singletons = false)
      const {
    std::map<size_t, std::vector<size_t>> tracks;
    for (size_t id = 0; id < parent_.size(); ++id) {
      const size_t root = Find(id);
      if (!include_singletons && size_[root] < 2) continue;
      tracks[root].push_back(id);
    }
    return tracks;
  }

 private:
  FeatureIndexer indexer_;
  mutable std::vector<size_t> parent_;
  std::vector<size_t> size_;
};

}  // namespace ecsfm
