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

// Embedding and caption datasets: label vocabularies, record types, the JSONL
// and packed binary file formats, and stratified splitting.
//
// Packed format (all integers little-endian, version 1):
//
//   char[4]  magic "RFEB"
//   u32      version
//   u32      d
//   u64      record count
//   u8       vocabulary count V
//   V x {u8 attribute code (0 gender, 1 race, 2 age),
//        u16 cardinality, cardinality x {u16 byte length, bytes}}
//   u16      source tag byte length, bytes
//   count x {u32 id byte length, id bytes,
//            V x u16 label index (0xFFFF = unlabeled), in vocabulary order,
//            d x IEEE-754 binary32}
//
// The packed format does not carry scene or split; use JSONL when those
// fields matter.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "resfair/common.hpp"
#include "resfair/numerics.hpp"

namespace resfair {

inline constexpr std::uint16_t kUnlabeled = 0xFFFF;

struct LabelVocabulary {
  Attribute attribute = Attribute::kGender;
  std::vector<std::string> labels;

  std::size_t cardinality() const { return labels.size(); }
  std::optional<std::uint16_t> index_of(std::string_view label) const;

  // Validates uniqueness and non-emptiness.
  static LabelVocabulary make(Attribute attribute,
                              std::vector<std::string> labels);
};

// Gender 2, race 7, age 4 (child <20, young <40, middle_aged <60, senior).
LabelVocabulary fairface_vocabulary(Attribute attribute);
// Gender 2, race 5, age 2.
LabelVocabulary pata_vocabulary(Attribute attribute);
std::vector<LabelVocabulary> fairface_vocabularies();

using LabelSet = std::array<std::optional<std::uint16_t>, kNumAttributes>;

struct EmbeddingRecord {
  std::string id;
  std::vector<double> vector;
  LabelSet labels{};
  std::optional<std::string> scene;
  std::optional<Split> split;

  std::optional<std::uint16_t> label(Attribute a) const {
    return labels[index_of(a)];
  }
};

struct EmbeddingSet {
  std::size_t d = 0;
  std::vector<EmbeddingRecord> records;
  std::vector<LabelVocabulary> vocabularies;
  std::string source_tag;

  const LabelVocabulary* vocabulary(Attribute a) const;
  const LabelVocabulary& require_vocabulary(Attribute a) const;
  bool has_attribute(Attribute a) const { return vocabulary(a) != nullptr; }

  // Records whose split equals `split`, in order.
  EmbeddingSet subset(Split split) const;
  // Copy with the same header and no records.
  EmbeddingSet empty_like() const;
  // Row-major N x d copy of all vectors.
  Matrix matrix() const;

  // Throws ValidationError naming the offending record.
  void validate() const;
};

enum class EmbeddingFormat { kJsonl, kPacked };

// Chooses kPacked for ".rfe"/".bin"/".packed" extensions, else kJsonl.
EmbeddingFormat format_for_path(const std::filesystem::path& path);

// JSONL files may begin with a header line
//   {"header": {"d": N, "source_tag": str, "vocabularies": {attr: [labels]}}}
// which the writer always emits. Without it the dimension is taken from the
// first record and label names resolve against `vocabularies` (FairFace
// defaults when empty). Packed files always carry their own header.
EmbeddingSet load_embeddings(const std::filesystem::path& path,
                             EmbeddingFormat format,
                             const std::vector<LabelVocabulary>& vocabularies = {});
EmbeddingSet load_embeddings(const std::filesystem::path& path,
                             const std::vector<LabelVocabulary>& vocabularies = {});

std::string serialize_packed(const EmbeddingSet& set);
EmbeddingSet parse_packed(std::string_view bytes);
std::string serialize_jsonl(const EmbeddingSet& set);
EmbeddingSet parse_jsonl(std::string_view text,
                         const std::vector<LabelVocabulary>& vocabularies = {});

void save_embeddings(const EmbeddingSet& set, const std::filesystem::path& path,
                     EmbeddingFormat format);
void save_embeddings(const EmbeddingSet& set, const std::filesystem::path& path);

struct CaptionRecord {
  std::string id;
  std::string text;
  std::optional<std::vector<double>> vector;
  Attribute attribute = Attribute::kGender;
  Sentiment sentiment = Sentiment::kPositive;
  std::optional<std::string> scene;
};

std::vector<CaptionRecord> load_captions(const std::filesystem::path& path);
std::vector<CaptionRecord> parse_captions(std::string_view text);
std::string serialize_captions(const std::vector<CaptionRecord>& captions);
void save_captions(const std::vector<CaptionRecord>& captions,
                   const std::filesystem::path& path);

// Key: (scene or "", attribute, sentiment).
using CaptionCountKey = std::tuple<std::string, Attribute, Sentiment>;
std::map<CaptionCountKey, std::size_t> caption_counts(
    const std::vector<CaptionRecord>& captions);

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

// Stratified by the joint label tuple. Within a stratum, records are ordered
// by id and shuffled with a seeded generator; split counts follow largest
// remainder rounding, so each split is within one record of its exact share.
// Throws ValidationError on invalid fractions or preassigned splits.
EmbeddingSet split_set(const EmbeddingSet& set, std::uint64_t seed,
                       const SplitFractions& fractions);

std::string read_file(const std::filesystem::path& path);
// Writes via a temporary file and rename.
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace resfair
