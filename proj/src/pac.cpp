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

#include "resfair/pac.hpp"

#include <cmath>
#include "json.hpp"
#include <numeric>

#include "binary_io.hpp"
#include "resfair/rng.hpp"

namespace resfair {

namespace {

constexpr char kPacMagic[4] = {'R', 'F', 'P', 'C'};
constexpr std::uint32_t kPacVersion = 1;

Matrix relu(const Matrix& m) { return m.cwiseMax(0.0); }

Matrix affine_rows(const Matrix& x, const DenseLayer& layer) {
  Matrix out = x * layer.weight.transpose();
  out.rowwise() += layer.bias.transpose();
  return out;
}

void init_uniform(DenseLayer& layer, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(layer.inputs()));
  for (Eigen::Index i = 0; i < layer.weight.size(); ++i) {
    layer.weight.data()[i] = rng.uniform(-bound, bound);
  }
  layer.bias.setZero();
}

// d(sum) / d(pre-activation) for a ReLU layer.
Matrix relu_backward(const Matrix& grad_out, const Matrix& pre) {
  return grad_out.cwiseProduct((pre.array() > 0.0).cast<double>().matrix());
}

std::vector<std::size_t> indices_for(const EmbeddingSet& set,
                                     std::optional<Split> split) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < set.records.size(); ++i) {
    if (!split || set.records[i].split == split) out.push_back(i);
  }
  return out;
}

}  // namespace

DenseLayer DenseLayer::zeros(std::size_t in, std::size_t out) {
  DenseLayer layer;
  layer.weight = Matrix::Zero(static_cast<Eigen::Index>(out),
                              static_cast<Eigen::Index>(in));
  layer.bias = Vector::Zero(static_cast<Eigen::Index>(out));
  return layer;
}

PacModel PacModel::zeros(std::size_t d,
                         const std::vector<LabelVocabulary>& vocabularies,
                         const PacArchitecture& arch) {
  if (d == 0) throw ValidationError("pac: input dimension must be positive");
  if (vocabularies.empty()) throw ValidationError("pac: no attributes to classify");
  PacModel m;
  m.d = d;
  m.trunk = DenseLayer::zeros(d, arch.trunk_width);
  for (const auto& v : vocabularies) {
    if (m.head(v.attribute) != nullptr) {
      throw ValidationError("pac: duplicate head for '" +
                            std::string(attribute_name(v.attribute)) + "'");
    }
    PacHead h;
    h.vocabulary = v;
    h.hidden = DenseLayer::zeros(arch.trunk_width, arch.head_width);
    h.output = DenseLayer::zeros(arch.head_width, v.cardinality());
    m.heads.push_back(std::move(h));
  }
  return m;
}

PacModel PacModel::initialized(std::size_t d,
                               const std::vector<LabelVocabulary>& vocabularies,
                               const PacArchitecture& arch, std::uint64_t seed) {
  PacModel m = zeros(d, vocabularies, arch);
  Rng rng(seed);
  for (DenseLayer* layer : m.layers()) init_uniform(*layer, rng);
  return m;
}

const PacHead* PacModel::head(Attribute a) const {
  for (const auto& h : heads) {
    if (h.attribute() == a) return &h;
  }
  return nullptr;
}

PacArchitecture PacModel::architecture() const {
  PacArchitecture arch;
  arch.trunk_width = trunk.outputs();
  arch.head_width = heads.empty() ? 0 : heads.front().hidden.outputs();
  return arch;
}

std::vector<DenseLayer*> PacModel::layers() {
  std::vector<DenseLayer*> out = {&trunk};
  for (auto& h : heads) {
    out.push_back(&h.hidden);
    out.push_back(&h.output);
  }
  return out;
}

std::vector<const DenseLayer*> PacModel::layers() const {
  std::vector<const DenseLayer*> out = {&trunk};
  for (const auto& h : heads) {
    out.push_back(&h.hidden);
    out.push_back(&h.output);
  }
  return out;
}

std::size_t PacModel::parameter_count() const {
  std::size_t n = 0;
  for (const DenseLayer* l : layers()) {
    n += static_cast<std::size_t>(l->weight.size() + l->bias.size());
  }
  return n;
}

PacActivations pac_forward_batch(const PacModel& model, const Matrix& inputs) {
  if (static_cast<std::size_t>(inputs.cols()) != model.d) {
    throw ValidationError("pac: input dimension " + std::to_string(inputs.cols()) +
                          " != model dimension " + std::to_string(model.d));
  }
  PacActivations a;
  a.input = inputs;
  a.trunk_pre = affine_rows(inputs, model.trunk);
  a.trunk_out = relu(a.trunk_pre);
  for (const auto& h : model.heads) {
    a.hidden_pre.push_back(affine_rows(a.trunk_out, h.hidden));
    a.hidden_out.push_back(relu(a.hidden_pre.back()));
    a.logits.push_back(affine_rows(a.hidden_out.back(), h.output));
  }
  return a;
}

std::vector<Vector> pac_forward(const PacModel& model, const Vector& input) {
  if (static_cast<std::size_t>(input.size()) != model.d) {
    throw ValidationError("pac: input dimension " + std::to_string(input.size()) +
                          " != model dimension " + std::to_string(model.d));
  }
  const PacActivations a = pac_forward_batch(model, input.transpose());
  std::vector<Vector> out;
  for (const auto& l : a.logits) out.push_back(l.row(0).transpose());
  return out;
}

void pac_backward_from_logits(const PacModel& model, const PacActivations& acts,
                              const std::vector<Matrix>& logit_grads,
                              PacGradients* grads, Matrix* input_grad) {
  if (logit_grads.size() != model.heads.size()) {
    throw ValidationError("pac backward: one logit gradient per head required");
  }
  if (grads != nullptr) {
    grads->clear();
    grads->push_back(DenseLayer{});
  }
  Matrix trunk_out_grad = Matrix::Zero(acts.trunk_out.rows(), acts.trunk_out.cols());
  for (std::size_t h = 0; h < model.heads.size(); ++h) {
    const PacHead& head = model.heads[h];
    const Matrix& g_logits = logit_grads[h];
    const Matrix g_hidden_pre =
        relu_backward(g_logits * head.output.weight, acts.hidden_pre[h]);
    trunk_out_grad.noalias() += g_hidden_pre * head.hidden.weight;
    if (grads != nullptr) {
      DenseLayer hidden;
      hidden.weight = g_hidden_pre.transpose() * acts.trunk_out;
      hidden.bias = g_hidden_pre.colwise().sum().transpose();
      DenseLayer output;
      output.weight = g_logits.transpose() * acts.hidden_out[h];
      output.bias = g_logits.colwise().sum().transpose();
      grads->push_back(std::move(hidden));
      grads->push_back(std::move(output));
    }
  }
  const Matrix g_trunk_pre = relu_backward(trunk_out_grad, acts.trunk_pre);
  if (grads != nullptr) {
    (*grads)[0].weight = g_trunk_pre.transpose() * acts.input;
    (*grads)[0].bias = g_trunk_pre.colwise().sum().transpose();
  }
  if (input_grad != nullptr) *input_grad = g_trunk_pre * model.trunk.weight;
}

PacBatch make_pac_batch(const EmbeddingSet& set,
                        const std::vector<std::size_t>& indices) {
  PacBatch batch;
  batch.inputs.resize(static_cast<Eigen::Index>(indices.size()),
                      static_cast<Eigen::Index>(set.d));
  batch.labels.reserve(indices.size());
  for (std::size_t row = 0; row < indices.size(); ++row) {
    const auto& r = set.records.at(indices[row]);
    const Vector v = Eigen::Map<const Vector>(r.vector.data(),
                                              static_cast<Eigen::Index>(r.vector.size()));
    batch.inputs.row(static_cast<Eigen::Index>(row)) =
        l2_normalize(v).value.transpose();
    batch.labels.push_back(r.labels);
  }
  return batch;
}

PacBatch make_pac_batch(const EmbeddingSet& set) {
  std::vector<std::size_t> all(set.records.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return make_pac_batch(set, all);
}

namespace {

// Loss and dL/dlogits for the mean-over-batch summed cross-entropy.
double pac_loss_and_logit_grads(const PacModel& model, const PacActivations& acts,
                                const std::vector<LabelSet>& labels,
                                std::vector<Matrix>* logit_grads) {
  const std::size_t batch = labels.size();
  if (batch == 0) throw ValidationError("pac: empty batch");
  const double inv_b = 1.0 / static_cast<double>(batch);
  double total = 0.0;
  if (logit_grads != nullptr) logit_grads->clear();
  for (std::size_t h = 0; h < model.heads.size(); ++h) {
    const Attribute attr = model.heads[h].attribute();
    const Matrix& logits = acts.logits[h];
    Matrix grad;
    if (logit_grads != nullptr) grad = Matrix::Zero(logits.rows(), logits.cols());
    for (std::size_t i = 0; i < batch; ++i) {
      const auto label = labels[i][index_of(attr)];
      if (!label) continue;
      const Vector z = logits.row(static_cast<Eigen::Index>(i)).transpose();
      total += cross_entropy(z, *label);
      if (logit_grads != nullptr) {
        Vector p = softmax(z);
        p(*label) -= 1.0;
        grad.row(static_cast<Eigen::Index>(i)) = inv_b * p.transpose();
      }
    }
    if (logit_grads != nullptr) logit_grads->push_back(std::move(grad));
  }
  return total * inv_b;
}

}  // namespace

double pac_loss(const PacModel& model, const PacBatch& batch) {
  if (batch.size() == 0) throw ValidationError("pac: empty batch");
  const PacActivations acts = pac_forward_batch(model, batch.inputs);
  return pac_loss_and_logit_grads(model, acts, batch.labels, nullptr);
}

PacLossAndGrad pac_backward(const PacModel& model, const PacBatch& batch) {
  if (batch.size() == 0) throw ValidationError("pac: empty batch");
  const PacActivations acts = pac_forward_batch(model, batch.inputs);
  std::vector<Matrix> logit_grads;
  PacLossAndGrad out;
  out.loss = pac_loss_and_logit_grads(model, acts, batch.labels, &logit_grads);
  pac_backward_from_logits(model, acts, logit_grads, &out.grads, nullptr);
  return out;
}

std::vector<double> flatten_parameters(const PacModel& model) {
  std::vector<double> out;
  out.reserve(model.parameter_count());
  for (const DenseLayer* l : model.layers()) {
    out.insert(out.end(), l->weight.data(), l->weight.data() + l->weight.size());
    out.insert(out.end(), l->bias.data(), l->bias.data() + l->bias.size());
  }
  return out;
}

void assign_parameters(PacModel& model, const std::vector<double>& flat) {
  if (flat.size() != model.parameter_count()) {
    throw ValidationError("pac: parameter vector size mismatch");
  }
  std::size_t pos = 0;
  for (DenseLayer* l : model.layers()) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), l->weight.size(),
                l->weight.data());
    pos += static_cast<std::size_t>(l->weight.size());
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), l->bias.size(),
                l->bias.data());
    pos += static_cast<std::size_t>(l->bias.size());
  }
}

std::vector<double> flatten_gradients(const PacGradients& grads) {
  std::vector<double> out;
  for (const auto& l : grads) {
    out.insert(out.end(), l.weight.data(), l.weight.data() + l.weight.size());
    out.insert(out.end(), l.bias.data(), l.bias.data() + l.bias.size());
  }
  return out;
}

void PacTrainConfig::validate() const {
  if (batch_size == 0) throw ValidationError("pac: batch_size must be positive");
  if (!(learning_rate >= 0.0)) {
    throw ValidationError("pac: learning_rate must be non-negative");
  }
  if (architecture.trunk_width == 0 || architecture.head_width == 0) {
    throw ValidationError("pac: layer widths must be positive");
  }
}

PacTrainResult train_pac(const EmbeddingSet& set, const PacTrainConfig& cfg) {
  cfg.validate();
  std::vector<LabelVocabulary> vocabs;
  if (cfg.attributes.empty()) {
    vocabs = set.vocabularies;
  } else {
    for (const Attribute a : cfg.attributes) vocabs.push_back(set.require_vocabulary(a));
  }

  bool any_split = false;
  for (const auto& r : set.records) any_split = any_split || r.split.has_value();
  std::vector<std::size_t> train_idx =
      indices_for(set, any_split ? std::optional(Split::kTrain) : std::nullopt);
  // Keep only records labeled for at least one trained attribute.
  std::erase_if(train_idx, [&](std::size_t i) {
    for (const auto& v : vocabs) {
      if (set.records[i].label(v.attribute)) return false;
    }
    return true;
  });
  if (train_idx.empty()) throw ValidationError("pac: no labeled training data");

  PacTrainResult result;
  result.model = PacModel::initialized(set.d, vocabs, cfg.architecture, cfg.seed);
  PacModel& model = result.model;
  const PacBatch all = make_pac_batch(set, train_idx);

  AdamOptions opts;
  opts.learning_rate = cfg.learning_rate;
  std::vector<AdamState> weight_states, bias_states;
  for (const DenseLayer* l : std::as_const(model).layers()) {
    weight_states.push_back(make_adam_state(static_cast<std::size_t>(l->weight.size()), opts));
    bias_states.push_back(make_adam_state(static_cast<std::size_t>(l->bias.size()), opts));
  }

  Rng shuffle_rng = Rng(cfg.seed).derive(0x5043);
  std::vector<std::size_t> order(train_idx.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (cfg.shuffle) shuffle_rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      PacBatch batch;
      batch.inputs.resize(static_cast<Eigen::Index>(end - start), all.inputs.cols());
      for (std::size_t i = start; i < end; ++i) {
        batch.inputs.row(static_cast<Eigen::Index>(i - start)) =
            all.inputs.row(static_cast<Eigen::Index>(order[i]));
        batch.labels.push_back(all.labels[order[i]]);
      }
      PacLossAndGrad lg = pac_backward(model, batch);
      if (!std::isfinite(lg.loss)) {
        throw NumericalError("pac: non-finite loss at epoch " +
                             std::to_string(epoch));
      }
      loss_sum += lg.loss * static_cast<double>(end - start);
      auto layers = model.layers();
      for (std::size_t l = 0; l < layers.size(); ++l) {
        adam_step(layers[l]->weight, lg.grads[l].weight, weight_states[l]);
        adam_step(layers[l]->bias, lg.grads[l].bias, bias_states[l]);
      }
    }
    PacEpochMetrics m;
    m.epoch = epoch + 1;
    m.train_loss = loss_sum / static_cast<double>(order.size());
    if (any_split && !indices_for(set, Split::kVal).empty()) {
      m.val_accuracy = pac_accuracy(model, set, Split::kVal);
    }
    result.epochs.push_back(std::move(m));
  }
  return result;
}

std::vector<std::pair<Attribute, double>> pac_accuracy(
    const PacModel& model, const EmbeddingSet& set, std::optional<Split> split) {
  const std::vector<std::size_t> idx = indices_for(set, split);
  std::vector<std::pair<Attribute, double>> out;
  if (idx.empty()) {
    for (const auto& h : model.heads) out.emplace_back(h.attribute(), 0.0);
    return out;
  }
  const PacBatch batch = make_pac_batch(set, idx);
  const PacActivations acts = pac_forward_batch(model, batch.inputs);
  for (std::size_t h = 0; h < model.heads.size(); ++h) {
    const Attribute attr = model.heads[h].attribute();
    std::size_t correct = 0, total = 0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto label = batch.labels[i][index_of(attr)];
      if (!label) continue;
      ++total;
      const Vector z = acts.logits[h].row(static_cast<Eigen::Index>(i)).transpose();
      if (argmax(z) == *label) ++correct;
    }
    out.emplace_back(attr, total == 0 ? 0.0
                                      : static_cast<double>(correct) /
                                            static_cast<double>(total));
  }
  return out;
}

std::string pac_metrics_jsonl(const std::vector<PacEpochMetrics>& epochs) {
  std::string out;
  for (const auto& e : epochs) {
    nlohmann::json j = {{"epoch", e.epoch}, {"train_loss", e.train_loss}};
    nlohmann::json acc = nlohmann::json::object();
    for (const auto& [a, v] : e.val_accuracy) acc[std::string(attribute_name(a))] = v;
    j["val_accuracy"] = acc;
    out += j.dump() + "\n";
  }
  return out;
}

std::string serialize_pac(const PacModel& model) {
  internal::ByteWriter w;
  w.bytes(std::string_view(kPacMagic, 4));
  w.u32(kPacVersion);
  const PacArchitecture arch = model.architecture();
  w.u32(static_cast<std::uint32_t>(model.d));
  w.u32(static_cast<std::uint32_t>(arch.trunk_width));
  w.u32(static_cast<std::uint32_t>(arch.head_width));
  w.u8(static_cast<std::uint8_t>(model.heads.size()));
  for (const auto& h : model.heads) {
    w.u8(static_cast<std::uint8_t>(h.attribute()));
    w.u16(static_cast<std::uint16_t>(h.vocabulary.cardinality()));
    for (const auto& l : h.vocabulary.labels) w.str16(l);
  }
  for (const DenseLayer* l : model.layers()) {
    for (Eigen::Index i = 0; i < l->weight.size(); ++i) w.f64(l->weight.data()[i]);
    for (Eigen::Index i = 0; i < l->bias.size(); ++i) w.f64(l->bias(i));
  }
  return w.take();
}

PacModel parse_pac(std::string_view bytes) {
  internal::ByteReader r(bytes, "pac checkpoint");
  if (r.bytes(4) != std::string_view(kPacMagic, 4)) {
    throw ValidationError("pac checkpoint: bad magic");
  }
  const std::uint32_t version = r.u32();
  if (version != kPacVersion) {
    throw ValidationError("pac checkpoint: unsupported version " +
                          std::to_string(version));
  }
  const std::size_t d = r.u32();
  PacArchitecture arch;
  arch.trunk_width = r.u32();
  arch.head_width = r.u32();
  const std::uint8_t num_heads = r.u8();
  std::vector<LabelVocabulary> vocabs;
  for (std::uint8_t h = 0; h < num_heads; ++h) {
    const std::uint8_t code = r.u8();
    if (code >= kNumAttributes) throw ValidationError("pac checkpoint: bad attribute code");
    const std::uint16_t n = r.u16();
    std::vector<std::string> labels;
    for (std::uint16_t i = 0; i < n; ++i) labels.push_back(r.str16());
    vocabs.push_back(LabelVocabulary::make(static_cast<Attribute>(code), std::move(labels)));
  }
  PacModel model = PacModel::zeros(d, vocabs, arch);
  for (DenseLayer* l : model.layers()) {
    for (Eigen::Index i = 0; i < l->weight.size(); ++i) l->weight.data()[i] = r.f64();
    for (Eigen::Index i = 0; i < l->bias.size(); ++i) l->bias(i) = r.f64();
    if (!l->weight.allFinite() || !l->bias.allFinite()) {
      throw ValidationError("pac checkpoint: non-finite weights");
    }
  }
  if (r.remaining() != 0) throw ValidationError("pac checkpoint: trailing bytes");
  return model;
}

void save_pac(const PacModel& model, const std::filesystem::path& path) {
  write_file(path, serialize_pac(model));
}

PacModel load_pac(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw ValidationError("missing PAC checkpoint '" + path.string() + "'");
  }
  try {
    return parse_pac(read_file(path));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

}  // namespace resfair
