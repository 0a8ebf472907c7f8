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

// Additive residual learner.
//
// A single affine map R: R^d -> R^d followed by an activation produces a
// residual that is added to the input embedding:
//
//   phi_bar(e) = e + act(W e + b)
//
// It is trained against a frozen protected attribute classifier (PAC) that
// sees the l2-normalized phi_bar. Per batch of B embeddings:
//
//   L = w_recon * mean_i sqrt(|phi_bar_i - e_i|^2 + eps_s^2)
//     + w_ent   * sum_heads mean_i max_k softmax(z_i)_k
//     - sum_heads w_ce[head] * (1/B) sum_{labeled i} CE(z_i, y_i)
//
// Gradients flow through the classifier and the normalization into W and b
// only; the classifier is never updated.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "resfair/common.hpp"
#include "resfair/embedding_store.hpp"
#include "resfair/numerics.hpp"
#include "resfair/pac.hpp"

namespace resfair {

enum class ActivationKind : std::uint8_t {
  kIdentity = 0,
  kGelu = 1,
  kTanh = 2,
  kCustom = 3,
};

struct ActivationSpec {
  ActivationKind kind = ActivationKind::kIdentity;
  // Registry key when kind == kCustom.
  std::string custom_name;
  // Applied after the activation, in training mode only.
  double dropout_rate = 0.0;

  std::string name() const;
  void validate() const;
  // "identity", "gelu", "tanh", or any registered custom name.
  static ActivationSpec from_name(std::string_view name, double dropout_rate = 0.0);
};

struct ActivationFunction {
  std::function<double(double)> value;
  std::function<double(double)> derivative;
};

// Custom activations; "relu" and "quick_gelu" (x * sigmoid(1.702 x)) are
// registered by default. Not thread-safe against concurrent registration.
void register_activation(const std::string& name, ActivationFunction fn);
bool has_activation(const std::string& name);
double apply_activation(const ActivationSpec& spec, double x);
double activation_derivative(const ActivationSpec& spec, double x);

struct ArlModel {
  std::size_t d = 0;
  Matrix weight;  // d x d
  Vector bias;    // d
  ActivationSpec activation;
  // Attributes this model was trained against (informational).
  std::vector<Attribute> targets;

  static ArlModel zeros(std::size_t d, const ActivationSpec& activation = {});
};

struct DebiasedEmbedding {
  std::string id;
  Vector phi_bar;
  Vector residual;
};

// Evaluation mode (no dropout). phi_bar is computed as original + residual.
DebiasedEmbedding arl_forward(const ArlModel& model, const Vector& e,
                              std::string id = {});

struct ArlLossWeights {
  double recon = 1.0;
  double ent = 1.0;
  // Indexed by Attribute.
  std::array<double, kNumAttributes> ce = {1e-4, 1e-4, 1e-4};

  void validate() const;
};

inline constexpr double kReconSmoothing = 1e-8;

struct ArlBatch {
  Matrix inputs;  // raw embeddings, B x d
  std::vector<LabelSet> labels;
  std::vector<std::string> ids;

  std::size_t size() const { return labels.size(); }
};

ArlBatch make_arl_batch(const EmbeddingSet& set,
                        const std::vector<std::size_t>& indices);
ArlBatch make_arl_batch(const EmbeddingSet& set);

struct HeadTerm {
  Attribute attribute = Attribute::kGender;
  double value = 0.0;
};

struct ArlLossComponents {
  double total = 0.0;
  double recon = 0.0;
  std::vector<HeadTerm> ent;  // mean max-softmax per head
  std::vector<HeadTerm> ce;   // mean cross-entropy per head (unweighted)
};

struct ArlGradients {
  Matrix weight;
  Vector bias;
};

struct ArlLossAndGrad {
  ArlLossComponents loss;
  ArlGradients grads;
};

// Throws ValidationError on an empty batch, a dimension mismatch or an
// unfrozen classifier.
ArlLossComponents arl_loss(const ArlModel& model, const PacModel& frozen_pac,
                           const ArlBatch& batch, const ArlLossWeights& weights);

// `dropout_mask` (B x d, entries 0 or 1/(1-p)) enables training mode; null
// means evaluation mode. Max-softmax uses the subgradient of the lowest-index
// maximal entry.
ArlLossAndGrad arl_backward(const ArlModel& model, const PacModel& frozen_pac,
                            const ArlBatch& batch, const ArlLossWeights& weights,
                            const Matrix* dropout_mask = nullptr);

struct EarlyStopping {
  std::size_t patience = 5;
  double min_delta = 1e-4;
};

struct ArlTrainConfig {
  ArlLossWeights weights;
  std::size_t batch_size = 512;
  double learning_rate = 5e-4;
  double weight_decay = 2e-2;
  std::size_t epochs = 30;
  EarlyStopping early_stop;
  std::uint64_t seed = 0;
  bool shuffle = true;
  ActivationSpec activation;
  // Experimental: when set, the classifier copy is also updated after every
  // residual step (adversarial joint training). Not used by default.
  std::optional<double> adversarial_pac_learning_rate;

  void validate() const;
};

struct ArlEpochMetrics {
  std::size_t epoch = 0;
  ArlLossComponents train;  // sample-weighted mean over batches
  ArlLossComponents val;
  bool improved = false;
};

struct ArlTrainResult {
  ArlModel model;  // best-validation checkpoint
  std::size_t best_epoch = 0;  // 0 = the zero-initialized model
  double best_val_loss = 0.0;
  double initial_val_loss = 0.0;
  bool stopped_early = false;
  std::vector<ArlEpochMetrics> epochs;
  // Final classifier state when adversarial updates are enabled.
  std::optional<PacModel> adversarial_pac;
};

// Trains on split == train with validation on split == val; both must be
// non-empty. Throws NumericalError (naming batch ids) on a non-finite loss.
ArlTrainResult train_arl(const EmbeddingSet& set, const PacModel& frozen_pac,
                         const ArlTrainConfig& cfg);

// Residual models applied one after another.
struct ArlChain {
  std::vector<ArlModel> stages;

  std::size_t d() const;
  Vector apply(const Vector& e) const;
};

struct SequentialTrainResult {
  ArlChain chain;
  std::vector<ArlTrainResult> stages;
};

// One stage per attribute in `order`, each trained against the single-head
// classifier for that attribute and fed the previous stage's output. Stage i
// uses seed cfg.seed + i.
SequentialTrainResult train_arl_sequential(const EmbeddingSet& set,
                                           const std::vector<PacModel>& pacs,
                                           const std::vector<Attribute>& order,
                                           const ArlTrainConfig& cfg);

struct DebiasResult {
  EmbeddingSet debiased;   // phi_bar vectors, labels/scenes/splits copied
  EmbeddingSet residuals;  // phi_bar - original, same ids
};

DebiasResult debias_set(const ArlChain& chain, const EmbeddingSet& set);
DebiasResult debias_set(const ArlModel& model, const EmbeddingSet& set);

std::string arl_metrics_jsonl(const std::vector<ArlEpochMetrics>& epochs);

// Checkpoint: magic "RFAR", version, d, stage count, then per stage the
// activation spec, targets, and 64-bit weights and bias.
std::string serialize_arl(const ArlChain& chain);
ArlChain parse_arl(std::string_view bytes);
void save_arl(const ArlChain& chain, const std::filesystem::path& path);
ArlChain load_arl(const std::filesystem::path& path);

}  // namespace resfair
