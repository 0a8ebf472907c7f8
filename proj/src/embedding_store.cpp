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

#include "resfair/embedding_store.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include "json.hpp"
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_set>

#include "binary_io.hpp"
#include "resfair/rng.hpp"

namespace resfair {

using nlohmann::json;

namespace {

constexpr char kPackedMagic[4] = {'R', 'F', 'E', 'B'};
constexpr std::uint32_t kPackedVersion = 1;

std::string record_context(std::size_t line, const std::string& id) {
  std::string out = "line " + std::to_string(line);
  if (!id.empty()) out += " (record '" + id + "')";
  return out;
}

// Splits text into lines, keeping 1-based line numbers; skips blank lines.
std::vector<std::pair<std::size_t, std::string_view>> jsonl_lines(
    std::string_view text) {
  std::vector<std::pair<std::size_t, std::string_view>> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    ++line_no;
    std::string_view line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") != std::string_view::npos) {
      out.emplace_back(line_no, line);
    }
    if (end == text.size()) break;
    pos = end + 1;
  }
  return out;
}

json parse_line(std::string_view line, std::size_t line_no) {
  try {
    return json::parse(line);
  } catch (const json::parse_error& e) {
    throw ValidationError("line " + std::to_string(line_no) +
                          ": invalid JSON: " + e.what());
  }
}

std::vector<double> parse_vector(const json& j, const std::string& where) {
  if (!j.is_array()) throw ValidationError(where + ": 'vector' must be an array");
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& v : j) {
    if (!v.is_number()) {
      throw ValidationError(where + ": non-numeric vector entry");
    }
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw ValidationError(where + ": non-finite vector entry");
    out.push_back(x);
  }
  return out;
}

const std::string* optional_string(const json& j, const char* key,
                                   const std::string& where) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return nullptr;
  if (!it->is_string()) {
    throw ValidationError(where + ": '" + key + "' must be a string");
  }
  return it->get_ptr<const std::string*>();
}

}  // namespace

std::optional<std::uint16_t> LabelVocabulary::index_of(
    std::string_view label) const {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == label) return static_cast<std::uint16_t>(i);
  }
  return std::nullopt;
}

LabelVocabulary LabelVocabulary::make(Attribute attribute,
                                      std::vector<std::string> labels) {
  if (labels.empty()) {
    throw ValidationError("vocabulary for '" +
                          std::string(attribute_name(attribute)) +
                          "' is empty");
  }
  if (labels.size() >= kUnlabeled) {
    throw ValidationError("vocabulary too large");
  }
  std::set<std::string> seen;
  for (const auto& l : labels) {
    if (l.empty()) throw ValidationError("empty label name");
    if (!seen.insert(l).second) {
      throw ValidationError("duplicate label '" + l + "' in vocabulary for '" +
                            std::string(attribute_name(attribute)) + "'");
    }
  }
  return LabelVocabulary{attribute, std::move(labels)};
}

LabelVocabulary fairface_vocabulary(Attribute attribute) {
  switch (attribute) {
    case Attribute::kGender:
      return LabelVocabulary::make(attribute, {"male", "female"});
    case Attribute::kRace:
      return LabelVocabulary::make(
          attribute, {"white", "black", "indian", "east_asian",
                      "southeast_asian", "middle_eastern", "latino"});
    case Attribute::kAge:
      return LabelVocabulary::make(
          attribute, {"child", "young", "middle_aged", "senior"});
  }
  throw ValidationError("unknown attribute");
}

LabelVocabulary pata_vocabulary(Attribute attribute) {
  switch (attribute) {
    case Attribute::kGender:
      return LabelVocabulary::make(attribute, {"male", "female"});
    case Attribute::kRace:
      return LabelVocabulary::make(
          attribute,
          {"white", "black", "indian", "east_asian", "latino_hispanic"});
    case Attribute::kAge:
      return LabelVocabulary::make(attribute, {"young", "old"});
  }
  throw ValidationError("unknown attribute");
}

std::vector<LabelVocabulary> fairface_vocabularies() {
  return {fairface_vocabulary(Attribute::kGender),
          fairface_vocabulary(Attribute::kRace),
          fairface_vocabulary(Attribute::kAge)};
}

const LabelVocabulary* EmbeddingSet::vocabulary(Attribute a) const {
  for (const auto& v : vocabularies) {
    if (v.attribute == a) return &v;
  }
  return nullptr;
}

const LabelVocabulary& EmbeddingSet::require_vocabulary(Attribute a) const {
  const LabelVocabulary* v = vocabulary(a);
  if (v == nullptr) {
    throw ValidationError("embedding set has no vocabulary for '" +
                          std::string(attribute_name(a)) + "'");
  }
  return *v;
}

EmbeddingSet EmbeddingSet::empty_like() const {
  EmbeddingSet out;
  out.d = d;
  out.vocabularies = vocabularies;
  out.source_tag = source_tag;
  return out;
}

EmbeddingSet EmbeddingSet::subset(Split split) const {
  EmbeddingSet out = empty_like();
  for (const auto& r : records) {
    if (r.split == split) out.records.push_back(r);
  }
  return out;
}

Matrix EmbeddingSet::matrix() const {
  Matrix m(static_cast<Eigen::Index>(records.size()),
           static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < records.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          records[i].vector[j];
    }
  }
  return m;
}

void EmbeddingSet::validate() const {
  std::set<Attribute> vocab_attrs;
  for (const auto& v : vocabularies) {
    if (!vocab_attrs.insert(v.attribute).second) {
      throw ValidationError("duplicate vocabulary for '" +
                            std::string(attribute_name(v.attribute)) + "'");
    }
    LabelVocabulary::make(v.attribute, v.labels);
  }
  std::unordered_set<std::string> ids;
  ids.reserve(records.size());
  for (const auto& r : records) {
    if (r.vector.size() != d) {
      throw ValidationError("dimension mismatch for record '" + r.id +
                            "': expected " + std::to_string(d) + ", got " +
                            std::to_string(r.vector.size()));
    }
    if (!ids.insert(r.id).second) {
      throw ValidationError("duplicate id '" + r.id + "'");
    }
    for (const Attribute a : kAllAttributes) {
      const auto label = r.label(a);
      if (!label) continue;
      const LabelVocabulary* v = vocabulary(a);
      if (v == nullptr || *label >= v->cardinality()) {
        throw ValidationError("record '" + r.id + "' has invalid " +
                              std::string(attribute_name(a)) + " label");
      }
    }
  }
}

EmbeddingFormat format_for_path(const std::filesystem::path& path) {
  const std::string ext = path.extension().string();
  if (ext == ".rfe" || ext == ".bin" || ext == ".packed") {
    return EmbeddingFormat::kPacked;
  }
  return EmbeddingFormat::kJsonl;
}

std::string serialize_packed(const EmbeddingSet& set) {
  internal::ByteWriter w;
  w.bytes(std::string_view(kPackedMagic, 4));
  w.u32(kPackedVersion);
  w.u32(static_cast<std::uint32_t>(set.d));
  w.u64(set.records.size());
  w.u8(static_cast<std::uint8_t>(set.vocabularies.size()));
  for (const auto& v : set.vocabularies) {
    w.u8(static_cast<std::uint8_t>(v.attribute));
    w.u16(static_cast<std::uint16_t>(v.cardinality()));
    for (const auto& l : v.labels) w.str16(l);
  }
  w.str16(set.source_tag);
  for (const auto& r : set.records) {
    w.str32(r.id);
    for (const auto& v : set.vocabularies) {
      w.u16(r.label(v.attribute).value_or(kUnlabeled));
    }
    for (const double x : r.vector) w.f32(static_cast<float>(x));
  }
  return w.take();
}

EmbeddingSet parse_packed(std::string_view bytes) {
  internal::ByteReader r(bytes, "packed embeddings");
  const std::string_view magic = r.bytes(4);
  if (magic != std::string_view(kPackedMagic, 4)) {
    throw ValidationError("packed embeddings: bad magic");
  }
  const std::uint32_t version = r.u32();
  if (version != kPackedVersion) {
    throw ValidationError("packed embeddings: unsupported version " +
                          std::to_string(version));
  }
  EmbeddingSet set;
  set.d = r.u32();
  const std::uint64_t count = r.u64();
  const std::uint8_t num_vocabs = r.u8();
  for (std::uint8_t i = 0; i < num_vocabs; ++i) {
    const std::uint8_t code = r.u8();
    if (code >= kNumAttributes) {
      throw ValidationError("packed embeddings: unknown attribute code " +
                            std::to_string(code));
    }
    const std::uint16_t cardinality = r.u16();
    std::vector<std::string> labels;
    for (std::uint16_t j = 0; j < cardinality; ++j) labels.push_back(r.str16());
    set.vocabularies.push_back(
        LabelVocabulary::make(static_cast<Attribute>(code), std::move(labels)));
  }
  set.source_tag = r.str16();
  const std::size_t per_record_min = 4 + 2 * num_vocabs + 4 * set.d;
  if (count > r.remaining() / std::max<std::size_t>(per_record_min, 1)) {
    throw ValidationError("packed embeddings: truncated payload, header count " +
                          std::to_string(count) + " exceeds data at byte offset " +
                          std::to_string(r.offset()));
  }
  set.records.reserve(count);
  std::unordered_set<std::string> ids;
  for (std::uint64_t i = 0; i < count; ++i) {
    EmbeddingRecord rec;
    rec.id = r.str32();
    for (const auto& v : set.vocabularies) {
      const std::uint16_t label = r.u16();
      if (label == kUnlabeled) continue;
      if (label >= v.cardinality()) {
        throw ValidationError("packed embeddings: record '" + rec.id +
                              "' label index out of range at byte offset " +
                              std::to_string(r.offset() - 2));
      }
      rec.labels[index_of(v.attribute)] = label;
    }
    rec.vector.resize(set.d);
    for (std::size_t j = 0; j < set.d; ++j) {
      const float x = r.f32();
      if (!std::isfinite(x)) {
        throw ValidationError("packed embeddings: non-finite value in record '" +
                              rec.id + "'");
      }
      rec.vector[j] = static_cast<double>(x);
    }
    if (!ids.insert(rec.id).second) {
      throw ValidationError("packed embeddings: duplicate id '" + rec.id + "'");
    }
    set.records.push_back(std::move(rec));
  }
  if (r.remaining() != 0) {
    throw ValidationError("packed embeddings: " + std::to_string(r.remaining()) +
                          " trailing bytes after last record");
  }
  return set;
}

std::string serialize_jsonl(const EmbeddingSet& set) {
  std::string out;
  json vocabs = json::object();
  for (const auto& v : set.vocabularies) {
    vocabs[std::string(attribute_name(v.attribute))] = v.labels;
  }
  json header = {{"header",
                  {{"d", set.d},
                   {"source_tag", set.source_tag},
                   {"vocabularies", vocabs}}}};
  out += header.dump();
  out += '\n';
  for (const auto& r : set.records) {
    json j;
    j["id"] = r.id;
    j["vector"] = r.vector;
    json labels = json::object();
    for (const auto& v : set.vocabularies) {
      if (const auto l = r.label(v.attribute)) {
        labels[std::string(attribute_name(v.attribute))] = v.labels[*l];
      }
    }
    j["labels"] = labels;
    if (r.scene) j["scene"] = *r.scene;
    if (r.split) j["split"] = std::string(split_name(*r.split));
    out += j.dump();
    out += '\n';
  }
  return out;
}

EmbeddingSet parse_jsonl(std::string_view text,
                         const std::vector<LabelVocabulary>& vocabularies) {
  EmbeddingSet set;
  set.vocabularies = vocabularies.empty() ? fairface_vocabularies() : vocabularies;
  bool have_d = false;
  std::unordered_set<std::string> ids;
  bool first = true;
  for (const auto& [line_no, line] : jsonl_lines(text)) {
    json j = parse_line(line, line_no);
    if (!j.is_object()) {
      throw ValidationError("line " + std::to_string(line_no) +
                            ": expected a JSON object");
    }
    if (first && j.contains("header")) {
      first = false;
      const json& h = j["header"];
      try {
        set.d = h.at("d").get<std::size_t>();
        set.source_tag = h.value("source_tag", std::string());
        if (h.contains("vocabularies")) {
          set.vocabularies.clear();
          for (const auto& [name, labels] : h["vocabularies"].items()) {
            set.vocabularies.push_back(LabelVocabulary::make(
                parse_attribute(name), labels.get<std::vector<std::string>>()));
          }
          std::sort(set.vocabularies.begin(), set.vocabularies.end(),
                    [](const LabelVocabulary& a, const LabelVocabulary& b) {
                      return a.attribute < b.attribute;
                    });
        }
      } catch (const json::exception& e) {
        throw ValidationError("line " + std::to_string(line_no) +
                              ": malformed header: " + e.what());
      }
      have_d = true;
      continue;
    }
    first = false;
    EmbeddingRecord rec;
    const auto id_it = j.find("id");
    if (id_it == j.end() || !id_it->is_string()) {
      throw ValidationError(record_context(line_no, "") + ": missing string 'id'");
    }
    rec.id = id_it->get<std::string>();
    const std::string where = record_context(line_no, rec.id);
    if (!j.contains("vector")) throw ValidationError(where + ": missing 'vector'");
    rec.vector = parse_vector(j["vector"], where);
    if (!have_d) {
      set.d = rec.vector.size();
      have_d = true;
    }
    if (rec.vector.size() != set.d) {
      throw ValidationError(where + ": dimension mismatch for record '" + rec.id +
                            "': expected " + std::to_string(set.d) + ", got " +
                            std::to_string(rec.vector.size()));
    }
    if (auto it = j.find("labels"); it != j.end() && !it->is_null()) {
      if (!it->is_object()) throw ValidationError(where + ": 'labels' must be an object");
      for (const auto& [name, value] : it->items()) {
        if (value.is_null()) continue;
        const Attribute a = parse_attribute(name);
        const LabelVocabulary* v = set.vocabulary(a);
        if (v == nullptr) {
          throw ValidationError(where + ": attribute '" + name +
                                "' has no vocabulary");
        }
        if (!value.is_string()) {
          throw ValidationError(where + ": label for '" + name + "' must be a string");
        }
        const auto idx = v->index_of(value.get<std::string>());
        if (!idx) {
          throw ValidationError(where + ": unknown label name '" +
                                value.get<std::string>() + "' for '" + name + "'");
        }
        rec.labels[index_of(a)] = *idx;
      }
    }
    if (const std::string* s = optional_string(j, "scene", where)) rec.scene = *s;
    if (const std::string* s = optional_string(j, "split", where)) {
      rec.split = parse_split(*s);
    }
    if (!ids.insert(rec.id).second) {
      throw ValidationError(where + ": duplicate id '" + rec.id + "'");
    }
    set.records.push_back(std::move(rec));
  }
  return set;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  const auto parent = path.parent_path();
  if (!parent.empty() && !std::filesystem::is_directory(parent)) {
    throw ValidationError("output directory '" + parent.string() +
                          "' does not exist");
  }
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ValidationError("short write to '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

EmbeddingSet load_embeddings(const std::filesystem::path& path,
                             EmbeddingFormat format,
                             const std::vector<LabelVocabulary>& vocabularies) {
  const std::string bytes = read_file(path);
  try {
    EmbeddingSet set = format == EmbeddingFormat::kPacked
                           ? parse_packed(bytes)
                           : parse_jsonl(bytes, vocabularies);
    set.validate();
    return set;
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

EmbeddingSet load_embeddings(const std::filesystem::path& path,
                             const std::vector<LabelVocabulary>& vocabularies) {
  return load_embeddings(path, format_for_path(path), vocabularies);
}

void save_embeddings(const EmbeddingSet& set, const std::filesystem::path& path,
                     EmbeddingFormat format) {
  write_file(path, format == EmbeddingFormat::kPacked ? serialize_packed(set)
                                                      : serialize_jsonl(set));
}

void save_embeddings(const EmbeddingSet& set, const std::filesystem::path& path) {
  save_embeddings(set, path, format_for_path(path));
}

std::vector<CaptionRecord> parse_captions(std::string_view text) {
  std::vector<CaptionRecord> out;
  std::unordered_set<std::string> ids;
  std::optional<std::size_t> d;
  for (const auto& [line_no, line] : jsonl_lines(text)) {
    const json j = parse_line(line, line_no);
    if (!j.is_object()) {
      throw ValidationError("line " + std::to_string(line_no) +
                            ": expected a JSON object");
    }
    CaptionRecord c;
    try {
      c.id = j.at("id").get<std::string>();
      c.text = j.at("text").get<std::string>();
    } catch (const json::exception&) {
      throw ValidationError("line " + std::to_string(line_no) +
                            ": caption needs string 'id' and 'text'");
    }
    const std::string where = record_context(line_no, c.id);
    const std::string* attribute = optional_string(j, "attribute", where);
    const std::string* sentiment = optional_string(j, "sentiment", where);
    if (attribute == nullptr) throw ValidationError(where + ": missing 'attribute'");
    if (sentiment == nullptr) throw ValidationError(where + ": missing 'sentiment'");
    try {
      c.attribute = parse_attribute(*attribute);
      c.sentiment = parse_sentiment(*sentiment);
    } catch (const ValidationError& e) {
      throw ValidationError(where + ": " + e.what());
    }
    if (auto it = j.find("vector"); it != j.end() && !it->is_null()) {
      c.vector = parse_vector(*it, where);
      if (!d) d = c.vector->size();
      if (c.vector->size() != *d) {
        throw ValidationError(where + ": dimension mismatch for caption '" +
                              c.id + "'");
      }
    }
    if (const std::string* s = optional_string(j, "scene", where)) c.scene = *s;
    if (!ids.insert(c.id).second) {
      throw ValidationError(where + ": duplicate caption id '" + c.id + "'");
    }
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<CaptionRecord> load_captions(const std::filesystem::path& path) {
  try {
    return parse_captions(read_file(path));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

std::string serialize_captions(const std::vector<CaptionRecord>& captions) {
  std::string out;
  for (const auto& c : captions) {
    json j;
    j["id"] = c.id;
    j["text"] = c.text;
    if (c.vector) j["vector"] = *c.vector;
    j["attribute"] = std::string(attribute_name(c.attribute));
    j["sentiment"] = std::string(sentiment_name(c.sentiment));
    if (c.scene) j["scene"] = *c.scene;
    out += j.dump();
    out += '\n';
  }
  return out;
}

void save_captions(const std::vector<CaptionRecord>& captions,
                   const std::filesystem::path& path) {
  write_file(path, serialize_captions(captions));
}

std::map<CaptionCountKey, std::size_t> caption_counts(
    const std::vector<CaptionRecord>& captions) {
  std::map<CaptionCountKey, std::size_t> out;
  for (const auto& c : captions) {
    ++out[{c.scene.value_or(""), c.attribute, c.sentiment}];
  }
  return out;
}

EmbeddingSet split_set(const EmbeddingSet& set, std::uint64_t seed,
                       const SplitFractions& fractions) {
  const std::array<double, 3> f = {fractions.train, fractions.val,
                                   fractions.test};
  for (const double x : f) {
    if (!(x >= 0.0) || !std::isfinite(x)) {
      throw ValidationError("split fractions must be non-negative");
    }
  }
  if (std::abs(f[0] + f[1] + f[2] - 1.0) > 1e-9) {
    throw ValidationError("split fractions must sum to 1");
  }
  for (const auto& r : set.records) {
    if (r.split) {
      throw ValidationError("record '" + r.id + "' already has a split");
    }
  }

  // Strata keyed by the joint label tuple (unlabeled = kUnlabeled).
  std::map<std::array<std::uint16_t, kNumAttributes>, std::vector<std::size_t>>
      strata;
  for (std::size_t i = 0; i < set.records.size(); ++i) {
    std::array<std::uint16_t, kNumAttributes> key{};
    for (std::size_t a = 0; a < kNumAttributes; ++a) {
      key[a] = set.records[i].labels[a].value_or(kUnlabeled);
    }
    strata[key].push_back(i);
  }

  EmbeddingSet out = set;
  Rng rng(seed);
  for (auto& [key, members] : strata) {
    std::sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
      return set.records[a].id < set.records[b].id;
    });
    rng.shuffle(std::span<std::size_t>(members));

    const double n = static_cast<double>(members.size());
    std::array<std::size_t, 3> counts{};
    std::array<double, 3> remainders{};
    std::size_t assigned = 0;
    for (std::size_t s = 0; s < 3; ++s) {
      const double exact = f[s] * n;
      counts[s] = static_cast<std::size_t>(std::floor(exact));
      remainders[s] = exact - static_cast<double>(counts[s]);
      assigned += counts[s];
    }
    std::array<std::size_t, 3> order = {0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return remainders[a] > remainders[b];
    });
    for (std::size_t k = 0; assigned < members.size(); ++k) {
      const std::size_t s = order[k % 3];
      if (f[s] > 0.0) {
        ++counts[s];
        ++assigned;
      }
    }
    std::size_t pos = 0;
    for (std::size_t s = 0; s < 3; ++s) {
      for (std::size_t c = 0; c < counts[s]; ++c) {
        out.records[members[pos++]].split = static_cast<Split>(s);
      }
    }
  }
  return out;
}

}  // namespace resfair
