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
#include <set>
#include <stdexcept>
#include <vector>

#include "ecsfm/types.hpp"

namespace ecsfm {

constexpr int kUnassignedLevel = -1;

// Registration-dependency levels. The initial two frames sit at level 0; a
// point reaches level n when two frames of level <= n observe it; a frame
// reaches level n + 1 when it observes at least `frame_min_points` points of
// level <= n. Levels are the least fixpoint of these rules; nodes the rules
// never reach stay unassigned.
struct HierarchyLevels {
  std::map<image_t, int> frame_level;
  std::map<point3d_t, int> point_level;
  std::map<image_t, int> m_count;  // points of level <= frame_level - 1 seen

  int FrameLevel(image_t image) const {
    const auto it = frame_level.find(image);
    return it == frame_level.end() ? kUnassignedLevel : it->second;
  }
  int PointLevel(point3d_t point) const {
    const auto it = point_level.find(point);
    return it == point_level.end() ? kUnassignedLevel : it->second;
  }
};

inline HierarchyLevels ComputeHierarchy(const Reconstruction& recon,
                                        int frame_min_points) {
  if (recon.init_image_a < 0 || recon.init_image_b < 0) {
    throw std::invalid_argument("ComputeHierarchy: initial pair not recorded");
  }

  constexpr int kInf = std::numeric_limits<int>::max() / 2;
  std::map<image_t, int> frame;
  std::map<point3d_t, int> point;
  for (const auto& [id, f] : recon.frames) {
    if (f.registered) frame[id] = kInf;
  }
  for (const auto& [pid, p] : recon.points) point[pid] = kInf;
  frame.at(recon.init_image_a) = 0;
  frame.at(recon.init_image_b) = 0;

  // Observed points per frame for the frame rule.
  std::map<image_t, std::vector<point3d_t>> frame_points;
  for (const auto& [pid, p] : recon.points) {
    for (const auto& [image, feature] : p.observations) {
      if (frame.count(image)) frame_points[image].push_back(pid);
    }
  }

  // Chaotic iteration; each pass only lowers levels, so the loop reaches the
  // least fixpoint.
  bool changed = true;
  std::vector<int> scratch;
  while (changed) {
    changed = false;
    for (const auto& [pid, p] : recon.points) {
      scratch.clear();
      for (const auto& [image, feature] : p.observations) {
        const auto it = frame.find(image);
        if (it != frame.end() && it->second < kInf) {
          scratch.push_back(it->second);
        }
      }
      if (scratch.size() < 2) continue;
      std::nth_element(scratch.begin(), scratch.begin() + 1, scratch.end());
      const int level = scratch[1];  // second-smallest observer level
      if (level < point.at(pid)) {
        point.at(pid) = level;
        changed = true;
      }
    }
    for (auto& [image, level] : frame) {
      if (image == recon.init_image_a || image == recon.init_image_b) continue;
      const auto it = frame_points.find(image);
      if (it == frame_points.end()) continue;
      scratch.clear();
      for (const point3d_t pid : it->second) {
        const int pl = point.at(pid);
        if (pl < kInf) scratch.push_back(pl);
      }
      if (static_cast<int>(scratch.size()) < frame_min_points) continue;
      std::nth_element(scratch.begin(), scratch.begin() + frame_min_points - 1,
                       scratch.end());
      const int candidate = scratch[frame_min_points - 1] + 1;
      if (candidate < level) {
        level = candidate;
        changed = true;
      }
    }
  }

  HierarchyLevels result;
  for (const auto& [image, level] : frame) {
    if (level < kInf) result.frame_level[image] = level;
  }
  for (const auto& [pid, level] : point) {
    if (level < kInf) result.point_level[pid] = level;
  }
  for (const auto& [image, level] : result.frame_level) {
    int count = 0;
    const auto it = frame_points.find(image);
    if (it != frame_points.end()) {
      for (const point3d_t pid : it->second) {
        const int pl = result.PointLevel(pid);
        if (pl != kUnassignedLevel && pl <= level - 1) ++count;
      }
    }
    result.m_count[image] = count;
  }
  return result;
}

struct KeyframeSet {
  std::set<image_t> keyframes;
  std::set<image_t> redundant;
};

// Redundant-frame detection: walking the registered frames from the highest
// level down, a frame is deleted when, after recomputing the levels of the
// points it observes, every matched frame of assigned level >= 1 still
// counts at least `redundancy_min_points` points below its own level.
// Accepted deletions update the state, which resolves mutual-redundancy ties
// deterministically. Level-0 and unassigned frames are always keyframes.
inline KeyframeSet SelectKeyframes(const Reconstruction& recon,
                                   const HierarchyLevels& levels,
                                   int redundancy_min_points) {
  KeyframeSet result;

  // Mutable observer state.
  std::map<point3d_t, std::vector<image_t>> observers;
  std::map<image_t, std::vector<point3d_t>> frame_points;
  for (const auto& [pid, p] : recon.points) {
    for (const auto& [image, feature] : p.observations) {
      if (!recon.IsRegistered(image)) continue;
      observers[pid].push_back(image);
      frame_points[image].push_back(pid);
    }
  }

  std::map<point3d_t, int> point_level;
  for (const auto& [pid, p] : recon.points) {
    point_level[pid] = levels.PointLevel(pid);
  }
  std::map<image_t, int> m_count = levels.m_count;

  auto point_level_without = [&](point3d_t pid, image_t removed) {
    std::vector<int> frame_levels;
    for (const image_t obs : observers[pid]) {
      if (obs == removed) continue;
      const int fl = levels.FrameLevel(obs);
      if (fl != kUnassignedLevel) frame_levels.push_back(fl);
    }
    if (frame_levels.size() < 2) return kUnassignedLevel;
    std::nth_element(frame_levels.begin(), frame_levels.begin() + 1,
                     frame_levels.end());
    return frame_levels[1];
  };

  // Highest level first; ties by id for determinism.
  std::vector<image_t> order = recon.RegisteredImages();
  std::stable_sort(order.begin(), order.end(), [&](image_t a, image_t b) {
    return levels.FrameLevel(a) > levels.FrameLevel(b);
  });

  for (const image_t image : order) {
    const int own_level = levels.FrameLevel(image);
    if (own_level == kUnassignedLevel || own_level == 0) {
      result.keyframes.insert(image);
      continue;
    }

    // New levels of the points this frame observes, were it deleted.
    std::map<point3d_t, int> new_levels;
    std::set<image_t> matched;
    for (const point3d_t pid : frame_points[image]) {
      new_levels[pid] = point_level_without(pid, image);
      for (const image_t obs : observers[pid]) {
        if (obs != image) matched.insert(obs);
      }
    }

    // Effect on each matched frame's m count.
    bool redundant = true;
    std::map<image_t, int> m_delta;
    for (const auto& [pid, new_level] : new_levels) {
      const int old_level = point_level[pid];
      for (const image_t obs : observers[pid]) {
        if (obs == image) continue;
        const int threshold = levels.FrameLevel(obs) - 1;
        if (levels.FrameLevel(obs) <= 0) continue;
        const bool counted_before =
            old_level != kUnassignedLevel && old_level <= threshold;
        const bool counted_after =
            new_level != kUnassignedLevel && new_level <= threshold;
        if (counted_before != counted_after) {
          m_delta[obs] += counted_after ? 1 : -1;
        }
      }
    }
    for (const image_t other : matched) {
      const int level = levels.FrameLevel(other);
      if (level == kUnassignedLevel || level == 0) continue;  // exempt
      const int delta = m_delta.count(other) ? m_delta.at(other) : 0;
      if (m_count.at(other) + delta < redundancy_min_points) {
        redundant = false;
        break;
      }
    }

    if (!redundant) {
      result.keyframes.insert(image);
      continue;
    }

    // Commit the deletion.
    result.redundant.insert(image);
    for (const auto& [pid, new_level] : new_levels) {
      point_level[pid] = new_level;
      auto& obs = observers[pid];
      obs.erase(std::remove(obs.begin(), obs.end(), image), obs.end());
    }
    for (const auto& [other, delta] : m_delta) {
      m_count.at(other) += delta;
    }
    frame_points.erase(image);
  }
  return result;
}

}  // namespace ecsfm
