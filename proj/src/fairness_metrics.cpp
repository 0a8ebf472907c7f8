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

#include "resfair/fairness_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include "json.hpp"
#include "text_format.hpp"
#include <numeric>

namespace resfair {

using nlohmann::json;

namespace {

using internal::fmt;
using internal::lpad;
using internal::pad;

double norm_of(std::span<const double> v) {
  double s = 0.0;
  for (const double x : v) s += x * x;
  return std::sqrt(s);
}

const std::vector<double>& caption_vector(const CaptionRecord& caption) {
  if (!caption.vector) {
    throw ValidationError("caption '" + caption.id + "' has no vector");
  }
  return *caption.vector;
}

struct LabeledImage {
  std::size_t index;
  std::uint16_t label;
  double cosine;
};

// Labeled images for `attribute` with their cosine against the caption.
std::vector<LabeledImage> score_labeled(const EmbeddingSet& images,
                                        const CaptionRecord& caption,
                                        Attribute attribute) {
  const std::vector<double>& t = caption_vector(caption);
  if (t.size() != images.d) {
    throw ValidationError("caption '" + caption.id + "' dimension " +
                          std::to_string(t.size()) + " != image dimension " +
                          std::to_string(images.d));
  }
  const double t_norm = norm_of(t);
  if (t_norm <= kNormEpsilon) {
    throw ValidationError("caption '" + caption.id + "' has a degenerate vector");
  }
  std::vector<LabeledImage> out;
  out.reserve(images.records.size());
  for (std::size_t i = 0; i < images.records.size(); ++i) {
    const auto& r = images.records[i];
    const auto label = r.label(attribute);
    if (!label) continue;
    out.push_back({i, *label, cosine_similarity(r.vector, t)});
  }
  if (out.empty()) {
    throw ValidationError("no labeled records for attribute '" +
                          std::string(attribute_name(attribute)) + "'");
  }
  return out;
}

CaptionSkew skew_from_counts(const std::string& caption_id,
                             const std::vector<std::size_t>& base_counts,
                             std::size_t labeled_count,
                             const std::vector<std::size_t>& selected_counts,
                             std::size_t selected_total,
                             const SmoothingPolicy& smoothing) {
  CaptionSkew out;
  out.caption_id = caption_id;
  out.matched_count = selected_total;
  out.per_label.assign(base_counts.size(), std::nullopt);
  if (selected_total == 0) {
    out.skipped = true;
    return out;
  }
  for (std::size_t i = 0; i < base_counts.size(); ++i) {
    if (base_counts[i] == 0) continue;
    const double f = static_cast<double>(base_counts[i]) /
                     static_cast<double>(labeled_count);
    const double f_m = static_cast<double>(selected_counts[i]) /
                       static_cast<double>(selected_total);
    out.per_label[i] = skew(f_m, f, selected_total, smoothing);
  }
  return out;
}

json row_json(const SkewRow& r) {
  return {{"attribute", attribute_name(r.attribute)},
          {"sentiment", sentiment_name(r.sentiment)},
          {"max_skew", r.max_skew},
          {"min_skew", r.min_skew},
          {"max_skew_at_k", r.max_skew_at_k},
          {"min_skew_at_k", r.min_skew_at_k},
          {"favored_label", r.favored_label},
          {"disfavored_label", r.disfavored_label},
          {"favored_label_at_k", r.favored_label_at_k},
          {"disfavored_label_at_k", r.disfavored_label_at_k},
          {"caption_count", r.caption_count},
          {"skipped_count", r.skipped_count}};
}

json skew_values_json(const CaptionSkew& s,
                      const std::vector<std::string>& labels) {
  json per_label = json::object();
  for (std::size_t i = 0; i < s.per_label.size(); ++i) {
    per_label[labels[i]] = s.per_label[i] ? json(*s.per_label[i]) : json(nullptr);
  }
  json out = {{"matched_count", s.matched_count},
              {"skipped", s.skipped},
              {"per_label", per_label}};
  if (!s.skipped) {
    out["max"] = s.max();
    out["min"] = s.min();
    out["argmax"] = labels[s.argmax()];
    out["argmin"] = labels[s.argmin()];
  }
  return out;
}

json config_json(const SkewConfig& c) {
  json smoothing =
      c.smoothing.kind == SmoothingPolicy::Kind::kHalfCount
          ? json("half_count")
          : json({{"fixed", c.smoothing.delta}});
  return {{"epsilon", c.epsilon}, {"k", c.k}, {"smoothing", smoothing}};
}

const std::vector<std::string>& labels_for(const SkewReport& report,
                                           Attribute a) {
  for (const auto& v : report.vocabularies) {
    if (v.attribute == a) return v.labels;
  }
  throw ValidationError("report has no vocabulary for '" +
                        std::string(attribute_name(a)) + "'");
}

}  // namespace

void SkewConfig::validate() const {
  if (!(epsilon >= -1.0 && epsilon <= 1.0)) {
    throw ValidationError("skew epsilon must lie in [-1, 1]");
  }
  if (k < 1) throw ValidationError("skew k must be >= 1");
  if (smoothing.kind == SmoothingPolicy::Kind::kFixed && !(smoothing.delta > 0.0)) {
    throw ValidationError("fixed smoothing delta must be positive");
  }
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ValidationError("cosine_similarity: dimension mismatch");
  }
  const double na = norm_of(a);
  const double nb = norm_of(b);
  if (na <= kNormEpsilon || nb <= kNormEpsilon) {
    throw ValidationError("cosine_similarity: degenerate vector");
  }
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  return std::clamp(dot / (na * nb), -1.0, 1.0);
}

MatchSet match_set(const EmbeddingSet& images, const CaptionRecord& caption,
                   const SkewConfig& cfg, Attribute attribute) {
  const LabelVocabulary& vocab = images.require_vocabulary(attribute);
  const auto scored = score_labeled(images, caption, attribute);
  MatchSet out;
  out.caption_id = caption.id;
  out.labeled_count = scored.size();
  out.base_counts.assign(vocab.cardinality(), 0);
  out.matched_counts.assign(vocab.cardinality(), 0);
  for (const auto& s : scored) {
    ++out.base_counts[s.label];
    if (s.cosine >= cfg.epsilon) {
      ++out.matched_counts[s.label];
      out.matched_ids.push_back(images.records[s.index].id);
    }
  }
  out.base_frequencies.resize(vocab.cardinality());
  out.matched_frequencies.assign(vocab.cardinality(), 0.0);
  for (std::size_t i = 0; i < vocab.cardinality(); ++i) {
    out.base_frequencies[i] = static_cast<double>(out.base_counts[i]) /
                              static_cast<double>(out.labeled_count);
    if (!out.matched_ids.empty()) {
      out.matched_frequencies[i] = static_cast<double>(out.matched_counts[i]) /
                                   static_cast<double>(out.matched_ids.size());
    }
  }
  return out;
}

std::optional<double> skew(double f_m, double f, std::size_t matched_count,
                           const SmoothingPolicy& smoothing) {
  if (!(f > 0.0)) {
    throw ValidationError("skew: base frequency must be positive");
  }
  if (f_m > 0.0) return std::log(f_m / f);
  if (matched_count == 0) return std::nullopt;
  const double delta = smoothing.kind == SmoothingPolicy::Kind::kHalfCount
                           ? 1.0 / (2.0 * static_cast<double>(matched_count))
                           : smoothing.delta;
  return std::log(delta / f);
}

double CaptionSkew::max() const { return *per_label[argmax()]; }
double CaptionSkew::min() const { return *per_label[argmin()]; }

std::size_t CaptionSkew::argmax() const {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < per_label.size(); ++i) {
    if (per_label[i] && (!best || *per_label[i] > *per_label[*best])) best = i;
  }
  if (!best) throw ValidationError("caption '" + caption_id + "' has no skew values");
  return *best;
}

std::size_t CaptionSkew::argmin() const {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < per_label.size(); ++i) {
    if (per_label[i] && (!best || *per_label[i] < *per_label[*best])) best = i;
  }
  if (!best) throw ValidationError("caption '" + caption_id + "' has no skew values");
  return *best;
}

CaptionSkew caption_skew(const EmbeddingSet& images, const CaptionRecord& caption,
                         const SkewConfig& cfg, Attribute attribute) {
  const MatchSet m = match_set(images, caption, cfg, attribute);
  return skew_from_counts(caption.id, m.base_counts, m.labeled_count,
                          m.matched_counts, m.matched_count(), cfg.smoothing);
}

CaptionSkew skew_at_k(const EmbeddingSet& images, const CaptionRecord& caption,
                      const SkewConfig& cfg, Attribute attribute,
                      std::string* warning) {
  const LabelVocabulary& vocab = images.require_vocabulary(attribute);
  auto scored = score_labeled(images, caption, attribute);
  std::size_t k = cfg.k;
  if (k > scored.size()) {
    if (warning != nullptr) {
      *warning = "caption '" + caption.id + "': k=" + std::to_string(k) +
                 " exceeds labeled count " + std::to_string(scored.size()) +
                 " for '" + std::string(attribute_name(attribute)) +
                 "'; clamped";
    }
    k = scored.size();
  }
  std::vector<std::size_t> base(vocab.cardinality(), 0);
  for (const auto& s : scored) ++base[s.label];
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k),
                    scored.end(), [&](const LabeledImage& a, const LabeledImage& b) {
                      if (a.cosine != b.cosine) return a.cosine > b.cosine;
                      return images.records[a.index].id < images.records[b.index].id;
                    });
  std::vector<std::size_t> top(vocab.cardinality(), 0);
  for (std::size_t i = 0; i < k; ++i) ++top[scored[i].label];
  return skew_from_counts(caption.id, base, scored.size(), top, k, cfg.smoothing);
}

MeanSkew mean_max_min_skew(const EmbeddingSet& images,
                           const std::vector<CaptionRecord>& captions,
                           const SkewConfig& cfg, Attribute attribute) {
  MeanSkew out;
  double sum_max = 0.0;
  double sum_min = 0.0;
  for (const auto& c : captions) {
    const CaptionSkew s = caption_skew(images, c, cfg, attribute);
    if (s.skipped) {
      out.skipped_captions.push_back(c.id);
      continue;
    }
    sum_max += s.max();
    sum_min += s.min();
    ++out.captions_used;
  }
  if (out.captions_used == 0) {
    throw ValidationError("all captions skipped for attribute '" +
                          std::string(attribute_name(attribute)) +
                          "' (empty match sets)");
  }
  out.max_skew = sum_max / static_cast<double>(out.captions_used);
  out.min_skew = sum_min / static_cast<double>(out.captions_used);
  return out;
}

const SkewRow& SkewReport::row(Attribute attribute, Sentiment sentiment) const {
  for (const auto& r : rows) {
    if (r.attribute == attribute && r.sentiment == sentiment) return r;
  }
  throw ValidationError("report has no row for (" +
                        std::string(attribute_name(attribute)) + ", " +
                        std::string(sentiment_name(sentiment)) + ")");
}

SkewReport audit(const EmbeddingSet& images,
                 const std::vector<CaptionRecord>& captions,
                 const SkewConfig& cfg, const std::vector<Attribute>& attributes) {
  cfg.validate();
  if (images.records.empty()) throw ValidationError("audit: no images");
  if (captions.empty()) throw ValidationError("audit: no captions");
  SkewReport report;
  report.config = cfg;
  for (const Attribute a : attributes) {
    report.vocabularies.push_back(images.require_vocabulary(a));
  }
  for (const Attribute a : attributes) {
    const auto& labels = images.require_vocabulary(a).labels;
    for (const Sentiment s : {Sentiment::kPositive, Sentiment::kNegative}) {
      SkewRow row;
      row.attribute = a;
      row.sentiment = s;
      double sum_max = 0.0, sum_min = 0.0, sum_max_k = 0.0, sum_min_k = 0.0;
      std::size_t used = 0;
      std::optional<double> best_max, worst_min, best_max_k, worst_min_k;
      for (const auto& c : captions) {
        if (c.attribute != a || c.sentiment != s) continue;
        ++row.caption_count;
        CaptionBreakdown b;
        b.caption_id = c.id;
        b.text = c.text;
        b.attribute = a;
        b.sentiment = s;
        b.threshold = caption_skew(images, c, cfg, a);
        std::string warning;
        b.at_k = skew_at_k(images, c, cfg, a, &warning);
        if (!warning.empty()) report.warnings.push_back(warning);
        if (b.threshold.skipped) {
          ++row.skipped_count;
          report.warnings.push_back("caption '" + c.id +
                                    "' skipped for '" +
                                    std::string(attribute_name(a)) +
                                    "': empty match set");
        } else {
          const double mx = b.threshold.max();
          const double mn = b.threshold.min();
          sum_max += mx;
          sum_min += mn;
          ++used;
          if (!best_max || mx > *best_max) {
            best_max = mx;
            row.favored_label = labels[b.threshold.argmax()];
          }
          if (!worst_min || mn < *worst_min) {
            worst_min = mn;
            row.disfavored_label = labels[b.threshold.argmin()];
          }
          // @K uses the same caption set so both columns average alike.
          const double mxk = b.at_k.max();
          const double mnk = b.at_k.min();
          sum_max_k += mxk;
          sum_min_k += mnk;
          if (!best_max_k || mxk > *best_max_k) {
            best_max_k = mxk;
            row.favored_label_at_k = labels[b.at_k.argmax()];
          }
          if (!worst_min_k || mnk < *worst_min_k) {
            worst_min_k = mnk;
            row.disfavored_label_at_k = labels[b.at_k.argmin()];
          }
        }
        report.captions.push_back(std::move(b));
      }
      if (used == 0) {
        throw ValidationError(
            "audit: no usable captions for (" + std::string(attribute_name(a)) +
            ", " + std::string(sentiment_name(s)) + ")");
      }
      const double n = static_cast<double>(used);
      row.max_skew = sum_max / n;
      row.min_skew = sum_min / n;
      row.max_skew_at_k = sum_max_k / n;
      row.min_skew_at_k = sum_min_k / n;
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

std::string report_to_json(const SkewReport& report) {
  json rows = json::array();
  for (const auto& r : report.rows) rows.push_back(row_json(r));
  json captions = json::array();
  for (const auto& c : report.captions) {
    const auto& labels = labels_for(report, c.attribute);
    captions.push_back({{"caption_id", c.caption_id},
                        {"text", c.text},
                        {"attribute", attribute_name(c.attribute)},
                        {"sentiment", sentiment_name(c.sentiment)},
                        {"threshold", skew_values_json(c.threshold, labels)},
                        {"at_k", skew_values_json(c.at_k, labels)}});
  }
  json out = {{"config", config_json(report.config)},
              {"rows", rows},
              {"captions", captions},
              {"warnings", report.warnings}};
  return out.dump(2) + "\n";
}

std::string report_to_text(const SkewReport& report) {
  std::string out;
  out += pad("PA", 8) + pad("+/-", 5) + lpad("MaxSkew", 10) + "  " +
         pad("favored", 18) + lpad("MinSkew", 10) + "  " + pad("disfavored", 18) +
         lpad("MS@k", 10) + lpad("mS@k", 10) + "\n";
  out += std::string(91, '-') + "\n";
  for (const auto& r : report.rows) {
    out += pad(std::string(attribute_name(r.attribute)), 8) +
           pad(r.sentiment == Sentiment::kPositive ? "+" : "-", 5) +
           lpad(fmt(r.max_skew), 10) + "  " + pad(r.favored_label, 18) +
           lpad(fmt(r.min_skew), 10) + "  " + pad(r.disfavored_label, 18) +
           lpad(fmt(r.max_skew_at_k), 10) + lpad(fmt(r.min_skew_at_k), 10) + "\n";
  }
  out += "epsilon=" + fmt(report.config.epsilon, 3) +
         " k=" + std::to_string(report.config.k) + "\n";
  return out;
}

std::string report_breakdown_csv(const SkewReport& report) {
  std::string out =
      "caption_id,attribute,sentiment,mode,matched_count,skipped,label,skew\n";
  auto emit = [&](const CaptionBreakdown& c, const char* mode,
                  const CaptionSkew& s) {
    const auto& labels = labels_for(report, c.attribute);
    for (std::size_t i = 0; i < s.per_label.size(); ++i) {
      out += c.caption_id + "," + std::string(attribute_name(c.attribute)) +
             "," + std::string(sentiment_name(c.sentiment)) + "," + mode + "," +
             std::to_string(s.matched_count) + "," +
             (s.skipped ? "1" : "0") + "," + labels[i] + "," +
             (s.per_label[i] ? fmt(*s.per_label[i], 12) : std::string()) + "\n";
    }
  };
  for (const auto& c : report.captions) {
    emit(c, "threshold", c.threshold);
    emit(c, "at_k", c.at_k);
  }
  return out;
}

std::string paired_report_to_json(const SkewReport& before,
                                  const SkewReport& after) {
  json deltas = json::array();
  for (const auto& b : before.rows) {
    const SkewRow& a = after.row(b.attribute, b.sentiment);
    deltas.push_back({{"attribute", attribute_name(b.attribute)},
                      {"sentiment", sentiment_name(b.sentiment)},
                      {"max_skew", a.max_skew - b.max_skew},
                      {"min_skew", a.min_skew - b.min_skew},
                      {"max_skew_at_k", a.max_skew_at_k - b.max_skew_at_k},
                      {"min_skew_at_k", a.min_skew_at_k - b.min_skew_at_k},
                      {"favored_label_before", b.favored_label},
                      {"favored_label_after", a.favored_label}});
  }
  json out = {{"before", json::parse(report_to_json(before))},
              {"after", json::parse(report_to_json(after))},
              {"delta", deltas}};
  return out.dump(2) + "\n";
}

std::string paired_report_to_text(const SkewReport& before,
                                  const SkewReport& after) {
  std::string out = "== before ==\n" + report_to_text(before) +
                    "\n== after ==\n" + report_to_text(after) + "\n== delta ==\n";
  out += pad("PA", 8) + pad("+/-", 5) + lpad("dMaxSkew", 10) +
         lpad("dMinSkew", 10) + lpad("dMS@k", 10) + lpad("dmS@k", 10) + "\n";
  for (const auto& b : before.rows) {
    const SkewRow& a = after.row(b.attribute, b.sentiment);
    out += pad(std::string(attribute_name(b.attribute)), 8) +
           pad(b.sentiment == Sentiment::kPositive ? "+" : "-", 5) +
           lpad(fmt(a.max_skew - b.max_skew), 10) +
           lpad(fmt(a.min_skew - b.min_skew), 10) +
           lpad(fmt(a.max_skew_at_k - b.max_skew_at_k), 10) +
           lpad(fmt(a.min_skew_at_k - b.min_skew_at_k), 10) + "\n";
  }
  return out;
}

}  // namespace resfair
