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

// Small fixtures shared by the unit tests.

#pragma once

#include <unistd.h>

#include <filesystem>
#include <string>
#include <vector>

#include "resfair/embedding_store.hpp"
#include "resfair/rng.hpp"

namespace resfair::testing {

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("resfair_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::vector<double> gaussian_vector(Rng& rng, std::size_t d, double scale = 1.0) {
  std::vector<double> v(d);
  for (auto& x : v) x = scale * rng.normal();
  return v;
}

// Random records labeled for every FairFace attribute, split 70/15/15 by
// index.
inline EmbeddingSet random_set(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  EmbeddingSet set;
  set.d = d;
  set.vocabularies = fairface_vocabularies();
  for (std::size_t i = 0; i < n; ++i) {
    EmbeddingRecord r;
    r.id = "r" + std::to_string(i);
    r.vector = gaussian_vector(rng, d);
    for (const auto& v : set.vocabularies) {
      r.labels[index_of(v.attribute)] =
          static_cast<std::uint16_t>(rng.uniform_index(v.cardinality()));
    }
    r.split = i < n * 7 / 10 ? Split::kTrain : (i < n * 85 / 100 ? Split::kVal : Split::kTest);
    set.records.push_back(std::move(r));
  }
  return set;
}

}  // namespace resfair::testing
