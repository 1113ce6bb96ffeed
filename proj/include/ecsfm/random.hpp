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

#include <cstdint>
#include <random>

namespace ecsfm {

// All randomized components draw from explicitly seeded mt19937_64 streams so
// that results are reproducible regardless of thread scheduling. Per-task
// streams are derived from a base seed and a task key with SplitMix64.
inline uint64_t SplitMix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t DeriveSeed(uint64_t base_seed, uint64_t key) {
  return SplitMix64(base_seed ^ SplitMix64(key));
}

inline uint64_t DeriveSeed(uint64_t base_seed, uint64_t key_a, uint64_t key_b) {
  return SplitMix64(DeriveSeed(base_seed, key_a) ^ SplitMix64(key_b + 1));
}

inline std::mt19937_64 MakeRng(uint64_t seed) { return std::mt19937_64(seed); }

}  // namespace ecsfm
