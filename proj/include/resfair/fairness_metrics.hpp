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

// Similarity-skew fairness audit of image embeddings against captions.
//
// For a caption T and an attribute with labels p_i, an image matches when
// cos(E(I), E(T)) >= epsilon. With f_i the share of label i among labeled
// images and f^m_i its share among matched images,
//
//   Skew_i = ln(f^m_i / f_i).
//
// MaxSkew / MinSkew average the per-caption max / min over labels across all
// captions of an (attribute, sentiment) group. The @K variants replace the
// threshold match with the K most similar labeled images. MinSkew is reported
// signed (typically negative).

#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "resfair/common.hpp"
#include "resfair/embedding_store.hpp"

namespace resfair {

struct SmoothingPolicy {
  enum class Kind { kHalfCount, kFixed };
  Kind kind = Kind::kHalfCount;
  // Substitute frequency for kFixed.
  double delta = 0.0;

  static SmoothingPolicy half_count() { return {}; }
  static SmoothingPolicy fixed(double delta) { return {Kind::kFixed, delta}; }
};

struct SkewConfig {
  double epsilon = 0.1;
  std::size_t k = 100;
  SmoothingPolicy smoothing;

  void validate() const;
};

// Throws ValidationError if either vector has norm <= 1e-12.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

struct MatchSet {
  std::string caption_id;
  std::vector<std::string> matched_ids;
  std::size_t labeled_count = 0;
  std::vector<std::size_t> base_counts;
  std::vector<std::size_t> matched_counts;
  std::vector<double> base_frequencies;     // f_i
  std::vector<double> matched_frequencies;  // f^m_i (all zero when empty)

  std::size_t matched_count() const { return matched_ids.size(); }
};

MatchSet match_set(const EmbeddingSet& images, const CaptionRecord& caption,
                   const SkewConfig& cfg, Attribute attribute);

// ln(f_m / f). When f_m == 0 the smoothing policy substitutes a floor; for
// half_count that is 1/(2 |I^m|), and the result is nullopt (caption skipped)
// when |I^m| == 0. Throws ValidationError when f <= 0.
std::optional<double> skew(double f_m, double f, std::size_t matched_count,
                           const SmoothingPolicy& smoothing);

// Per-label skew of one caption; labels absent from the base set (f_i == 0)
// hold nullopt. Empty when the caption is skipped.
struct CaptionSkew {
  std::string caption_id;
  std::size_t matched_count = 0;
  std::vector<std::optional<double>> per_label;
  bool skipped = false;

  double max() const;
  double min() const;
  std::size_t argmax() const;  // lowest label index on ties
  std::size_t argmin() const;
};

CaptionSkew caption_skew(const EmbeddingSet& images, const CaptionRecord& caption,
                         const SkewConfig& cfg, Attribute attribute);

// Ranks labeled images by descending cosine (ties: ascending id), keeps the
// top k and compares label shares against the full labeled base. k larger
// than the labeled count is clamped and reported via `warning`.
CaptionSkew skew_at_k(const EmbeddingSet& images, const CaptionRecord& caption,
                      const SkewConfig& cfg, Attribute attribute,
                      std::string* warning = nullptr);

struct MeanSkew {
  double max_skew = 0.0;
  double min_skew = 0.0;  // signed
  std::size_t captions_used = 0;
  std::vector<std::string> skipped_captions;
};

// Captions are those to evaluate (already filtered by attribute/sentiment).
// Throws ValidationError when every caption is skipped.
MeanSkew mean_max_min_skew(const EmbeddingSet& images,
                           const std::vector<CaptionRecord>& captions,
                           const SkewConfig& cfg, Attribute attribute);

struct CaptionBreakdown {
  std::string caption_id;
  std::string text;
  Attribute attribute = Attribute::kGender;
  Sentiment sentiment = Sentiment::kPositive;
  CaptionSkew threshold;
  CaptionSkew at_k;
};

struct SkewRow {
  Attribute attribute = Attribute::kGender;
  Sentiment sentiment = Sentiment::kPositive;
  double max_skew = 0.0;
  double min_skew = 0.0;
  double max_skew_at_k = 0.0;
  double min_skew_at_k = 0.0;
  std::string favored_label;
  std::string disfavored_label;
  std::string favored_label_at_k;
  std::string disfavored_label_at_k;
  std::size_t caption_count = 0;
  std::size_t skipped_count = 0;
};

struct SkewReport {
  SkewConfig config;
  std::vector<SkewRow> rows;
  std::vector<CaptionBreakdown> captions;
  std::vector<LabelVocabulary> vocabularies;
  std::vector<std::string> warnings;

  const SkewRow& row(Attribute attribute, Sentiment sentiment) const;
};

// One row per (attribute, sentiment) for every requested attribute. Captions
// without vectors are rejected. Rows keep caption input order.
SkewReport audit(const EmbeddingSet& images,
                 const std::vector<CaptionRecord>& captions,
                 const SkewConfig& cfg, const std::vector<Attribute>& attributes);

std::string report_to_json(const SkewReport& report);
std::string report_to_text(const SkewReport& report);
std::string report_breakdown_csv(const SkewReport& report);
// Before/after pair with per-row deltas (after - before).
std::string paired_report_to_json(const SkewReport& before,
                                  const SkewReport& after);
std::string paired_report_to_text(const SkewReport& before,
                                  const SkewReport& after);

}  // namespace resfair
