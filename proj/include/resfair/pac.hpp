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

// Protected attribute classifier: a shared affine+ReLU trunk followed by one
// head per attribute (affine+ReLU, then affine to logits). Trained with the
// mean over the batch of the summed per-attribute cross-entropies; later
// frozen and used as the adversary for residual training.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "resfair/common.hpp"
#include "resfair/embedding_store.hpp"
#include "resfair/numerics.hpp"

namespace resfair {

// y = W x + b with W of shape (out, in).
struct DenseLayer {
  Matrix weight;
  Vector bias;

  std::size_t inputs() const { return static_cast<std::size_t>(weight.cols()); }
  std::size_t outputs() const { return static_cast<std::size_t>(weight.rows()); }
  static DenseLayer zeros(std::size_t in, std::size_t out);
};

struct PacHead {
  LabelVocabulary vocabulary;
  DenseLayer hidden;
  DenseLayer output;

  Attribute attribute() const { return vocabulary.attribute; }
};

struct PacArchitecture {
  std::size_t trunk_width = 256;
  std::size_t head_width = 128;
};

struct PacModel {
  std::size_t d = 0;
  DenseLayer trunk;
  std::vector<PacHead> heads;
  // Set by freeze(); residual training rejects unfrozen classifiers.
  bool frozen = false;

  // All weights and biases zero.
  static PacModel zeros(std::size_t d, const std::vector<LabelVocabulary>& vocabularies,
                        const PacArchitecture& arch = {});
  // Weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.
  static PacModel initialized(std::size_t d,
                              const std::vector<LabelVocabulary>& vocabularies,
                              const PacArchitecture& arch, std::uint64_t seed);

  void freeze() { frozen = true; }
  const PacHead* head(Attribute a) const;
  PacArchitecture architecture() const;

  // Canonical parameter order: trunk, then per head hidden and output.
  std::vector<DenseLayer*> layers();
  std::vector<const DenseLayer*> layers() const;
  std::size_t parameter_count() const;
};

// Gradients laid out like PacModel::layers().
using PacGradients = std::vector<DenseLayer>;

// Forward activations for a batch (rows are samples).
struct PacActivations {
  Matrix input;
  Matrix trunk_pre;
  Matrix trunk_out;
  std::vector<Matrix> hidden_pre;
  std::vector<Matrix> hidden_out;
  std::vector<Matrix> logits;
};

// Logits per head for one input; throws ValidationError on a dimension
// mismatch. The input is used as given (callers normalize).
std::vector<Vector> pac_forward(const PacModel& model, const Vector& input);
PacActivations pac_forward_batch(const PacModel& model, const Matrix& inputs);

// Backpropagates dL/dlogits (one B x C matrix per head). Parameter gradients
// are written when `grads` is non-null and the input gradient (B x d) is
// returned when `input_grad` is non-null. ReLU subgradient at 0 is 0.
void pac_backward_from_logits(const PacModel& model, const PacActivations& acts,
                              const std::vector<Matrix>& logit_grads,
                              PacGradients* grads, Matrix* input_grad);

// Inputs are used as given; the caller is responsible for l2 normalization.
struct PacBatch {
  Matrix inputs;
  std::vector<LabelSet> labels;

  std::size_t size() const { return labels.size(); }
};

// l2-normalized inputs and labels for the given record indices.
PacBatch make_pac_batch(const EmbeddingSet& set,
                        const std::vector<std::size_t>& indices);
PacBatch make_pac_batch(const EmbeddingSet& set);

// Mean over the batch of the per-record sum of cross-entropies over labeled
// attributes. Throws ValidationError on an empty batch.
double pac_loss(const PacModel& model, const PacBatch& batch);

struct PacLossAndGrad {
  double loss = 0.0;
  PacGradients grads;
};
PacLossAndGrad pac_backward(const PacModel& model, const PacBatch& batch);

std::vector<double> flatten_parameters(const PacModel& model);
void assign_parameters(PacModel& model, const std::vector<double>& flat);
std::vector<double> flatten_gradients(const PacGradients& grads);

struct PacTrainConfig {
  std::size_t batch_size = 512;
  double learning_rate = 5e-3;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  bool shuffle = true;
  PacArchitecture architecture;
  // Heads to build; empty means every vocabulary of the training set.
  std::vector<Attribute> attributes;

  void validate() const;
};

struct PacEpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  // (attribute, accuracy) on the validation split, when one exists.
  std::vector<std::pair<Attribute, double>> val_accuracy;
};

struct PacTrainResult {
  PacModel model;
  std::vector<PacEpochMetrics> epochs;
};

// Trains on records with split == train (or every record when no split is
// assigned). Validation accuracy uses split == val.
PacTrainResult train_pac(const EmbeddingSet& set, const PacTrainConfig& cfg);

// Argmax accuracy per head over records labeled for that attribute; inputs
// are l2-normalized first. `split` restricts the records considered.
std::vector<std::pair<Attribute, double>> pac_accuracy(
    const PacModel& model, const EmbeddingSet& set,
    std::optional<Split> split = std::nullopt);

std::string pac_metrics_jsonl(const std::vector<PacEpochMetrics>& epochs);

std::string serialize_pac(const PacModel& model);
PacModel parse_pac(std::string_view bytes);
void save_pac(const PacModel& model, const std::filesystem::path& path);
PacModel load_pac(const std::filesystem::path& path);

}  // namespace resfair
