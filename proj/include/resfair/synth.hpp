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

// Synthetic embedding sets with planted, linearly separable protected
// attribute structure.
//
// An orthonormal basis of R^d is split into blocks:
//   planted:  one direction per (attribute, label)
//   context:  a shared mean direction, one direction per zero-shot class and
//             a block of free directions
// Each image embedding is
//   context sample + sum_a bias_a * plant_scale * q(a, label_a) + N(0, sigma^2 I)
// and each caption is built in the same space, leaning towards the planted
// direction of its target label. The oracle keeps every planted quantity.

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "resfair/embedding_store.hpp"
#include "resfair/evaluation.hpp"
#include "resfair/numerics.hpp"

namespace resfair {

struct SynthCounts {
  std::size_t train = 4000;
  std::size_t val = 500;
  std::size_t test = 500;

  std::size_t total() const { return train + val + test; }
};

struct SynthCaptionSpec {
  std::size_t per_label = 1;  // captions per (attribute, label, sentiment)
  double plant = 1.1;         // weight on the target label's planted direction
  double spread = 1.0;        // weight on a random free context direction
  // The weight on the shared context direction is solved per caption so that
  // this share of the generated images has cosine >= match_epsilon.
  double match_rate = 0.75;
  double match_epsilon = 0.1;
};

struct SynthSpec {
  std::size_t d = 64;
  SynthCounts counts;
  std::vector<LabelVocabulary> vocabularies = fairface_vocabularies();
  // Label shares per vocabulary (same order); empty means built-in defaults.
  std::vector<std::vector<double>> proportions;
  std::array<double, kNumAttributes> bias_strength = {1.0, 1.0, 1.0};
  // Offset norm per attribute at bias strength 1.
  std::array<double, kNumAttributes> plant_scale = {0.11, 0.26, 0.17};
  // Directions per attribute. 1 places the labels evenly on a centered line,
  // 2 on a regular polygon; 0 (or >= cardinality) gives every label its own
  // direction. Labels stay linearly separable in every case.
  std::array<std::size_t, kNumAttributes> planted_rank = {1, 2, 2};
  // Full-rank mode only: subtract the mean direction so the offsets of an
  // attribute sum to zero.
  bool center_offsets = true;
  // Context block size (mean + class + free directions); 0 uses every
  // direction left after the planted block.
  std::size_t context_dim = 0;
  double context_mean = 2.0;
  double context_spread = 0.15;  // per free direction
  std::size_t zeroshot_classes = 10;
  double class_scale = 0.5;
  double noise_sigma = 0.05;
  SynthCaptionSpec captions;
  std::size_t prompt_templates = 3;
  double prompt_jitter = 0.2;
  std::uint64_t seed = 0;

  std::size_t rank_of(std::size_t vocabulary) const;
  std::size_t planted_dim() const;
  // Throws ValidationError on infeasible dimensions or invalid values.
  void validate() const;
};

// Unknown keys raise UsageError; bad values raise ValidationError. `seed` is
// not read from JSON.
SynthSpec synth_spec_from_json(const nlohmann::json& j, SynthSpec base = {});
nlohmann::json synth_spec_to_json(const SynthSpec& spec);

using CaptionKey = std::tuple<Attribute, std::uint16_t, Sentiment>;

struct SynthOracle {
  std::size_t d = 0;
  std::vector<LabelVocabulary> vocabularies;
  // Per vocabulary: cardinality x d, row l = planted offset of label l.
  std::vector<Matrix> planted_maps;
  // Per vocabulary: rank x d orthonormal rows spanning its planted block.
  std::vector<Matrix> planted_directions;
  Matrix context_basis;  // context_dim x d, orthonormal rows
  std::map<CaptionKey, std::vector<double>> caption_directions;

  std::size_t vocabulary_index(Attribute a) const;
};

struct SynthOutput {
  EmbeddingSet set;  // splits assigned, scene = zero-shot class name
  std::vector<CaptionRecord> captions;
  SynthOracle oracle;
  std::vector<std::string> zeroshot_classes;
  std::vector<std::string> zeroshot_templates;
  std::vector<PromptEmbedding> prompts;
};

SynthOutput generate(const SynthSpec& spec);

// Largest absolute dot product between distinct planted directions and
// between planted and context directions.
double max_cross_dot(const SynthOracle& oracle);

struct OracleAccuracy {
  Attribute attribute = Attribute::kGender;
  double accuracy = 0.0;
  std::size_t evaluated = 0;
};

// Projects each embedding on the attribute's planted directions and picks
// the label with the nearest planted offset (lowest index on ties).
std::vector<OracleAccuracy> oracle_probe(const EmbeddingSet& set, const SynthOracle& oracle);

nlohmann::json oracle_to_json(const SynthOracle& oracle);
SynthOracle oracle_from_json(const nlohmann::json& j);

// ZeroShotTask over `eval` using the generated prompts; labels from scenes.
ZeroShotTask synth_zeroshot_task(const SynthOutput& out, const EmbeddingSet& eval);

// Pairs (x, K* x + c*) with x ~ N(0, I); K* and c* are fixed by `seed`.
struct LinearPairSource {
  Matrix k_star;
  Vector intercept;
  std::size_t count = 0;

  std::vector<ProbePair> sample(Rng& rng) const;
};
LinearPairSource make_linear_pair_source(std::size_t d, std::size_t count, std::uint64_t seed,
                                         bool with_intercept = true);

}  // namespace resfair
