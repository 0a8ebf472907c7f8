/*
 * Copyright 2026 The resfair Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>

namespace resfair {

// SplitMix64 (Steele, Lea & Flood 2014). State is a 64-bit counter advanced
// by the golden-ratio increment 0x9E3779B97F4A7C15; each output is the
// counter passed through the standard mix:
//
//   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//   z =  z ^ (z >> 31)
//
// Only integer arithmetic is involved, so the u64 stream is identical on
// every platform. Distribution helpers never use <random> distributions,
// whose output is implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();

  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);

  // Uniform integer in [0, n). Unbiased (rejection sampling). n must be > 0.
  std::uint64_t uniform_index(std::uint64_t n);

  // Standard normal via Box-Muller (one draw per call, no caching).
  double normal();

  // Independent generator for sub-stream `stream`; does not advance *this.
  Rng derive(std::uint64_t stream) const;

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_index(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

// The SplitMix64 finalizer on its own; also used to derive seeds.
std::uint64_t mix64(std::uint64_t z);

}  // namespace resfair
