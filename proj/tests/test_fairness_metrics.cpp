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

#include <cmath>

#include "doctest.h"
#include "json.hpp"
#include "resfair/fairness_metrics.hpp"
#include "support.hpp"

using namespace resfair;

namespace {

EmbeddingRecord image(const std::string& id, std::vector<double> v, std::optional<std::uint16_t> gender) {
  EmbeddingRecord r;
  r.id = id;
  r.vector = std::move(v);
  r.labels[index_of(Attribute::kGender)] = gender;
  return r;
}

CaptionRecord caption(const std::string& id, std::vector<double> v, Sentiment s = Sentiment::kPositive) {
  CaptionRecord c;
  c.id = id;
  c.text = id;
  c.vector = std::move(v);
  c.attribute = Attribute::kGender;
  c.sentiment = s;
  return c;
}

// Four labeled images (two per gender) plus one unlabeled; the caption along
// +x matches three of the labeled ones.
EmbeddingSet four_images() {
  EmbeddingSet set;
  set.d = 2;
  set.vocabularies = {fairface_vocabulary(Attribute::kGender)};
  set.records = {image("a", {1, 0}, 0), image("b", {1, 0.1}, 0), image("c", {1, -0.2}, 1),
                 image("d", {-1, 0}, 1), image("u", {1, 0}, std::nullopt)};
  return set;
}

}  // namespace

TEST_CASE("skew values for hand-computed frequencies") {
  const SmoothingPolicy half = SmoothingPolicy::half_count();
  CHECK(*skew(2.0 / 3.0, 0.5, 3, half) == doctest::Approx(std::log(4.0 / 3.0)).epsilon(1e-15));
  CHECK(*skew(0.0, 1.0, 50, half) == doctest::Approx(-4.605170185988091).epsilon(1e-14));
  CHECK_FALSE(skew(0.0, 0.5, 0, half).has_value());
  CHECK(*skew(0.0, 0.5, 10, SmoothingPolicy::fixed(0.05)) == doctest::Approx(std::log(0.1)));
  CHECK_THROWS_AS(skew(0.5, 0.0, 3, half), ValidationError);
}

TEST_CASE("match set uses labeled images and an inclusive threshold") {
  const EmbeddingSet set = four_images();
  SkewConfig cfg;
  cfg.epsilon = 0.1;
  const MatchSet m = match_set(set, caption("c", {1, 0}), cfg, Attribute::kGender);
  CHECK(m.labeled_count == 4);
  CHECK(m.matched_count() == 3);
  CHECK(m.base_frequencies[0] == 0.5);
  CHECK(m.matched_frequencies[0] == doctest::Approx(2.0 / 3.0));

  // cos = 1 exactly at the threshold still matches.
  cfg.epsilon = 1.0;
  CHECK(match_set(set, caption("c", {1, 0}), cfg, Attribute::kGender).matched_count() == 1);
}

TEST_CASE("caption skew and per-label extremes") {
  const EmbeddingSet set = four_images();
  const CaptionSkew s = caption_skew(set, caption("c", {1, 0}), SkewConfig{}, Attribute::kGender);
  REQUIRE_FALSE(s.skipped);
  CHECK(s.max() == doctest::Approx(std::log(4.0 / 3.0)));
  CHECK(s.min() == doctest::Approx(std::log(2.0 / 3.0)));
  CHECK(s.argmax() == 0);
  CHECK(s.argmin() == 1);
}

TEST_CASE("empty match set skips the caption") {
  const EmbeddingSet set = four_images();
  const CaptionSkew s = caption_skew(set, caption("c", {0, 1}), SkewConfig{0.99, 100, {}},
                                     Attribute::kGender);
  CHECK(s.skipped);
  for (const auto& v : s.per_label) CHECK_FALSE(v.has_value());
}

TEST_CASE("skew at K clamps K and breaks cosine ties by id") {
  EmbeddingSet set = four_images();
  SkewConfig cfg;
  cfg.k = 2;
  // a and u tie at cos 1 but u is unlabeled; a then b.
  CaptionSkew s = skew_at_k(set, caption("c", {1, 0}), cfg, Attribute::kGender);
  REQUIRE(s.per_label.size() == 2);
  CHECK(*s.per_label[0] == doctest::Approx(std::log(2.0)));
  // Male absent from the top 2 -> half-count floor 1/4 against base 1/2.
  CHECK(*s.per_label[1] == doctest::Approx(std::log(0.5)));

  // Duplicate vector under a different id: lower id wins the tie.
  set.records[2].vector = {1, 0};  // "c", label 1, ties with "a"
  cfg.k = 1;
  s = skew_at_k(set, caption("x", {1, 0}), cfg, Attribute::kGender);
  CHECK(*s.per_label[0] == doctest::Approx(std::log(2.0)));

  cfg.k = 50;
  std::string warning;
  s = skew_at_k(set, caption("x", {1, 0}), cfg, Attribute::kGender, &warning);
  CHECK_FALSE(warning.empty());
  CHECK(*s.per_label[0] == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("skew is invariant to positive rescaling of images and captions") {
  EmbeddingSet set = resfair::testing::random_set(60, 6, 8);
  Rng rng(3);
  const CaptionRecord c = caption("c", resfair::testing::gaussian_vector(rng, 6));
  SkewConfig cfg;
  cfg.epsilon = 0.05;
  cfg.k = 10;
  const CaptionSkew before = caption_skew(set, c, cfg, Attribute::kGender);
  const CaptionSkew before_k = skew_at_k(set, c, cfg, Attribute::kGender);
  for (auto& r : set.records) {
    for (auto& x : r.vector) x *= 4.0;
  }
  CaptionRecord scaled = c;
  for (auto& x : *scaled.vector) x *= 0.25;
  const CaptionSkew after = caption_skew(set, scaled, cfg, Attribute::kGender);
  const CaptionSkew after_k = skew_at_k(set, scaled, cfg, Attribute::kGender);
  for (std::size_t i = 0; i < before.per_label.size(); ++i) {
    CHECK(*after.per_label[i] == doctest::Approx(*before.per_label[i]).epsilon(1e-12));
    CHECK(*after_k.per_label[i] == doctest::Approx(*before_k.per_label[i]).epsilon(1e-12));
  }
}

TEST_CASE("audit rows average the per-caption extremes") {
  const EmbeddingSet set = four_images();
  const std::vector<CaptionRecord> caps = {
      caption("p1", {1, 0}), caption("p2", {-1, 0}), caption("n1", {1, 0.05}, Sentiment::kNegative)};
  const SkewReport r = audit(set, caps, SkewConfig{}, {Attribute::kGender});
  REQUIRE(r.rows.size() == 2);
  const SkewRow& pos = r.row(Attribute::kGender, Sentiment::kPositive);
  const CaptionSkew s1 = caption_skew(set, caps[0], SkewConfig{}, Attribute::kGender);
  const CaptionSkew s2 = caption_skew(set, caps[1], SkewConfig{}, Attribute::kGender);
  CHECK(pos.max_skew == doctest::Approx((s1.max() + s2.max()) / 2).epsilon(1e-15));
  CHECK(pos.min_skew == doctest::Approx((s1.min() + s2.min()) / 2).epsilon(1e-15));
  CHECK(pos.caption_count == 2);
  CHECK(r.captions.size() == 3);
  CHECK(report_to_json(r) == report_to_json(audit(set, caps, SkewConfig{}, {Attribute::kGender})));
  CHECK_FALSE(report_to_text(r).empty());
  CHECK(report_breakdown_csv(r).find("p2") != std::string::npos);
}

TEST_CASE("audit rejects sentiment rows with no usable captions") {
  const EmbeddingSet set = four_images();
  CHECK_THROWS_AS(audit(set, {caption("p1", {1, 0})}, SkewConfig{}, {Attribute::kGender}),
                  ValidationError);
  CaptionRecord no_vec = caption("p", {1, 0});
  no_vec.vector.reset();
  CHECK_THROWS_AS(audit(set, {no_vec, caption("n", {1, 0}, Sentiment::kNegative)}, SkewConfig{},
                        {Attribute::kGender}),
                  ValidationError);
}

TEST_CASE("paired report deltas are after minus before") {
  const EmbeddingSet set = four_images();
  const std::vector<CaptionRecord> caps = {caption("p1", {1, 0}),
                                           caption("n1", {1, 0.05}, Sentiment::kNegative)};
  const SkewReport before = audit(set, caps, SkewConfig{}, {Attribute::kGender});
  const std::string paired = paired_report_to_json(before, before);
  CHECK(paired.find("\"delta\"") != std::string::npos);
  const auto j = nlohmann::json::parse(paired);
  for (const auto& d : j["delta"]) CHECK(d["max_skew"].get<double>() == 0.0);
  CHECK(paired_report_to_text(before, before).find("delta") != std::string::npos);
}

TEST_CASE("cosine similarity") {
  const std::vector<double> a = {1, 0}, b = {1, 1}, z = {0, 0};
  CHECK(cosine_similarity(a, b) == doctest::Approx(std::sqrt(0.5)));
  CHECK_THROWS_AS(cosine_similarity(a, z), ValidationError);
}
