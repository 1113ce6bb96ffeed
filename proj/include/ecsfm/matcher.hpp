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
#include <bit>
#include <limits>
#include <stdexcept>
#include <vector>

#include "ecsfm/types.hpp"

namespace ecsfm {

namespace internal {

struct TwoNearest {
  int best = -1;
  double best_dist = std::numeric_limits<double>::max();
  double second_dist = std::numeric_limits<double>::max();

  void Offer(int index, double dist) {
    if (dist < best_dist) {
      second_dist = best_dist;
      best_dist = dist;
      best = index;
    } else if (dist < second_dist) {
      second_dist = dist;
    }
  }

  bool PassesRatio(double ratio) const {
    // With no distinct second neighbor the test passes vacuously.
    if (second_dist == std::numeric_limits<double>::max()) return best >= 0;
    return best_dist < ratio * second_dist;
  }
};

inline double HammingDistance(const uint8_t* a, const uint8_t* b, int dim) {
  int dist = 0;
  for (int i = 0; i < dim; ++i) {
    dist += std::popcount(static_cast<unsigned>(a[i] ^ b[i]));
  }
  return static_cast<double>(dist);
}

}  // namespace internal

// Mutual-nearest-neighbor descriptor matching with a Lowe ratio test applied
// in both directions. No feature appears in more than one returned match.
inline std::vector<FeatureMatch> MatchDescriptors(const FeatureSet& a,
                                                  const FeatureSet& b,
                                                  double ratio) {
  if (a.descriptor_type != b.descriptor_type ||
      a.descriptor_dim != b.descriptor_dim) {
    throw std::invalid_argument("MatchDescriptors: descriptor type mismatch");
  }
  if (ratio <= 0.0 || ratio > 1.0) {
    throw std::invalid_argument("MatchDescriptors: ratio out of (0, 1]");
  }
  const int na = static_cast<int>(a.NumFeatures());
  const int nb = static_cast<int>(b.NumFeatures());
  if (na == 0 || nb == 0) return {};

  std::vector<internal::TwoNearest> a_to_b(na);
  std::vector<internal::TwoNearest> b_to_a(nb);

  if (a.descriptor_type == DescriptorType::kFloat32) {
    using MatrixXfRM =
        Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const Eigen::Map<const MatrixXfRM> da(a.float_descriptors.data(), na,
                                          a.descriptor_dim);
    const Eigen::Map<const MatrixXfRM> db(b.float_descriptors.data(), nb,
                                          b.descriptor_dim);
    // Squared L2 via the Gram product; clamp for numeric round-off.
    const Eigen::VectorXf sq_a = da.rowwise().squaredNorm();
    const Eigen::VectorXf sq_b = db.rowwise().squaredNorm();
    const Eigen::MatrixXf gram = da * db.transpose();
    for (int i = 0; i < na; ++i) {
      for (int j = 0; j < nb; ++j) {
        const double d2 =
            std::max(0.0, double(sq_a(i)) + double(sq_b(j)) - 2.0 * gram(i, j));
        a_to_b[i].Offer(j, d2);
        b_to_a[j].Offer(i, d2);
      }
    }
  } else {
    for (int i = 0; i < na; ++i) {
      const uint8_t* desc_a = a.ByteDescriptor(i);
      for (int j = 0; j < nb; ++j) {
        const double d = internal::HammingDistance(desc_a, b.ByteDescriptor(j),
                                                   a.descriptor_dim);
        a_to_b[i].Offer(j, d);
        b_to_a[j].Offer(i, d);
      }
    }
  }

  // The ratio on squared L2 distances: d1 < r * d2 on plain distances is
  // d1^2 < r^2 * d2^2 on squared ones.
  const double eff_ratio =
      a.descriptor_type == DescriptorType::kFloat32 ? ratio * ratio : ratio;

  std::vector<FeatureMatch> matches;
  for (int i = 0; i < na; ++i) {
    const auto& fwd = a_to_b[i];
    if (fwd.best < 0 || !fwd.PassesRatio(eff_ratio)) continue;
    const auto& bwd = b_to_a[fwd.best];
    if (bwd.best != i || !bwd.PassesRatio(eff_ratio)) continue;
    matches.emplace_back(static_cast<feature_t>(i),
                         static_cast<feature_t>(fwd.best));
  }
  return matches;
}

}  // namespace ecsfm
