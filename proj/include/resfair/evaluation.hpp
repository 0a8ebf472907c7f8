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

// Checks around the debiasing core: a linear probe between image-side and
// text-side difference vectors, a prompt-ensemble zero-shot classifier, and
// per-class error comparison before and after debiasing.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "resfair/arl.hpp"
#include "resfair/embedding_store.hpp"
#include "resfair/numerics.hpp"
#include "resfair/rng.hpp"

namespace resfair {

struct ProbePair {
  Vector image_diff;
  Vector text_diff;
};

struct ProbeOptions {
  double ridge = 1e-8;
  double holdout_fraction = 0.2;
  // Seeds the train/holdout partition.
  std::uint64_t seed = 0;
};

struct ProbeModel {
  Matrix k;          // text_dim x image_dim
  Vector intercept;  // text_dim
  // sum |pred - target|^2 / sum |target|^2 over held-out pairs (over the
  // training pairs when there are too few to hold any out). Defined as 0 when
  // every target is zero.
  double relative_mse = 0.0;
  double train_relative_mse = 0.0;
  std::size_t train_count = 0;
  std::size_t holdout_count = 0;

  Vector predict(const Vector& image_diff) const;
};

// Ridge least squares with an unpenalized intercept, solved through the
// normal equations. Throws ValidationError when there are no pairs, the
// dimensions disagree or every image-side input is zero.
ProbeModel fit_probe(const std::vector<ProbePair>& pairs, const ProbeOptions& options = {});

// Draws a fresh pair sample from the generator it is handed.
using PairSampler = std::function<std::vector<ProbePair>(Rng&)>;

struct ProbeSummary {
  double max_relative_mse = 0.0;
  double mean_relative_mse = 0.0;
  std::vector<double> per_repetition;
  std::vector<ProbeModel> models;
};

// Repetition i samples with Rng(seed).derive(2 i) and partitions with a seed
// taken from Rng(seed).derive(2 i + 1).
ProbeSummary repeat_probe(const PairSampler& sampler, std::size_t repetitions,
                          std::uint64_t seed, const ProbeOptions& options = {});

std::vector<ProbePair> load_probe_pairs(const std::filesystem::path& path);
std::string probe_summary_to_json(const ProbeSummary& summary);

struct PromptEmbedding {
  std::string class_name;
  std::string template_text;
  std::string text;
  std::vector<double> vector;
};

struct ZeroShotTask {
  std::string name;
  std::vector<std::string> classes;
  std::vector<std::string> templates;
  Matrix prototypes;  // classes x d, unit rows
  EmbeddingSet eval;
  // Class index per eval record; nullopt when unlabeled.
  std::vector<std::optional<std::size_t>> labels;

  std::size_t d() const { return static_cast<std::size_t>(prototypes.cols()); }
  std::optional<std::size_t> class_index(std::string_view name) const;
};

// Per class: normalize each prompt vector, average over templates and
// normalize the mean. Every (class, template) pair must be present.
Matrix build_prototypes(const std::vector<std::string>& classes,
                        const std::vector<std::string>& templates,
                        const std::vector<PromptEmbedding>& prompts);

std::vector<PromptEmbedding> load_prompt_embeddings(const std::filesystem::path& path);

// Task file (JSON):
//   {"name": str, "classes": [str], "templates": [str],
//    "prompt_embeddings": path, "eval_embeddings": path,
//    "eval_labels": path (optional JSONL of {"id", "class"})}
// Relative paths resolve against the task file's directory. Without
// eval_labels the record scene names the class.
ZeroShotTask load_zeroshot_task(const std::filesystem::path& path);

// Attaches labels for `eval` from scene names (or keeps the task's labels when
// ids line up).
std::vector<std::optional<std::size_t>> labels_for(const ZeroShotTask& task,
                                                   const EmbeddingSet& eval);

struct ZeroShotResult {
  std::vector<std::size_t> predictions;
  double top1 = 0.0;
  double topk = 0.0;
  std::size_t k = 1;
  std::size_t evaluated = 0;
};

// Prediction = argmax cosine to the prototypes, lowest class index on ties.
// Accuracy counts labeled records only; throws ValidationError when none is
// labeled.
ZeroShotResult zeroshot_classify(const ZeroShotTask& task, const EmbeddingSet& embeddings,
                                 std::size_t top_k = 5);

struct ClassErrorRow {
  std::string class_name;
  std::size_t count = 0;
  double error_before = 0.0;
  double error_after = 0.0;
  double delta = 0.0;  // after - before
};

struct ClassErrorReport {
  std::vector<ClassErrorRow> rows;  // by delta descending, then class index
  double accuracy_before = 0.0;
  double accuracy_after = 0.0;
};

// Both sets must hold the same record ids in the same order.
ClassErrorReport compare_class_errors(const ZeroShotTask& task, const EmbeddingSet& base,
                                      const EmbeddingSet& debiased);

struct AccuracyDrop {
  std::string task;
  double accuracy_before = 0.0;
  double accuracy_after = 0.0;
  double drop = 0.0;  // before - after
};

struct AccuracyDropReport {
  std::vector<AccuracyDrop> tasks;
  double mean_drop = 0.0;
};

AccuracyDropReport accuracy_drop_report(const std::vector<ZeroShotTask>& tasks,
                                        const ArlChain& chain);

std::string class_errors_to_json(const ClassErrorReport& report);
std::string class_errors_to_text(const ClassErrorReport& report);
std::string accuracy_drop_to_json(const AccuracyDropReport& report);
std::string accuracy_drop_to_text(const AccuracyDropReport& report);

}  // namespace resfair
