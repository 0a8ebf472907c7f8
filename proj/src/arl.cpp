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

#include "resfair/arl.hpp"

#include <cmath>
#include <limits>
#include <map>
#include "json.hpp"
#include <numeric>
#include <utility>

#include "binary_io.hpp"
#include "resfair/rng.hpp"

namespace resfair {

namespace {

constexpr char kArlMagic[4] = {'R', 'F', 'A', 'R'};
constexpr std::uint32_t kArlVersion = 1;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::map<std::string, ActivationFunction>& registry() {
  static std::map<std::string, ActivationFunction> r = [] {
    std::map<std::string, ActivationFunction> m;
    m["relu"] = {[](double x) { return x > 0.0 ? x : 0.0; },
                 [](double x) { return x > 0.0 ? 1.0 : 0.0; }};
    m["quick_gelu"] = {[](double x) { return x * sigmoid(1.702 * x); },
                       [](double x) {
                         const double s = sigmoid(1.702 * x);
                         return s + 1.702 * x * s * (1.0 - s);
                       }};
    return m;
  }();
  return r;
}

const ActivationFunction& custom(const std::string& name) {
  auto it = registry().find(name);
  if (it == registry().end()) {
    throw ValidationError("unknown activation '" + name + "'");
  }
  return it->second;
}

std::vector<std::size_t> split_indices(const EmbeddingSet& set, Split split) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < set.records.size(); ++i) {
    if (set.records[i].split == split) out.push_back(i);
  }
  return out;
}

void require_usable(const ArlModel& model, const PacModel& pac,
                    const ArlBatch& batch) {
  if (!pac.frozen) {
    throw ValidationError("arl: classifier must be frozen before residual training");
  }
  if (batch.size() == 0) throw ValidationError("arl: empty batch");
  if (model.d != pac.d || static_cast<std::size_t>(batch.inputs.cols()) != model.d) {
    throw ValidationError("arl: dimension mismatch (residual " +
                          std::to_string(model.d) + ", classifier " +
                          std::to_string(pac.d) + ", batch " +
                          std::to_string(batch.inputs.cols()) + ")");
  }
}

// Everything the loss and its gradient need from one forward pass.
struct Forward {
  Matrix pre;       // W e + b
  Matrix residual;  // act(pre), masked
  Matrix phi;       // e + residual
  Vector norms;
  Matrix unit;      // phi / |phi|
  PacActivations pac;
};

Forward forward(const ArlModel& model, const PacModel& pac, const Matrix& inputs,
                const Matrix* mask) {
  Forward f;
  f.pre = inputs * model.weight.transpose();
  f.pre.rowwise() += model.bias.transpose();
  f.residual = f.pre.unaryExpr(
      [&](double x) { return apply_activation(model.activation, x); });
  if (mask != nullptr) f.residual = f.residual.cwiseProduct(*mask);
  f.phi = inputs + f.residual;
  f.norms.resize(f.phi.rows());
  f.unit = f.phi;
  for (Eigen::Index i = 0; i < f.phi.rows(); ++i) {
    const double n = f.phi.row(i).norm();
    f.norms(i) = n;
    if (n > kNormEpsilon) f.unit.row(i) /= n;
  }
  f.pac = pac_forward_batch(pac, f.unit);
  return f;
}

ArlLossComponents loss_terms(const Forward& f, const PacModel& pac,
                             const ArlBatch& batch, const ArlLossWeights& w,
                             std::vector<Matrix>* logit_grads) {
  const auto rows = static_cast<Eigen::Index>(batch.size());
  const double inv_b = 1.0 / static_cast<double>(rows);
  ArlLossComponents out;

  double recon = 0.0;
  for (Eigen::Index i = 0; i < rows; ++i) {
    recon += std::sqrt(f.residual.row(i).squaredNorm() +
                       kReconSmoothing * kReconSmoothing);
  }
  out.recon = recon * inv_b;
  out.total = w.recon * out.recon;

  if (logit_grads != nullptr) logit_grads->clear();
  for (std::size_t h = 0; h < pac.heads.size(); ++h) {
    const Attribute attr = pac.heads[h].attribute();
    const double w_ce = w.ce[index_of(attr)];
    const Matrix& z = f.pac.logits[h];
    Matrix g = Matrix::Zero(z.rows(), z.cols());
    double ent = 0.0, ce = 0.0;
    for (Eigen::Index i = 0; i < rows; ++i) {
      const Vector zi = z.row(i).transpose();
      const Vector p = softmax(zi);
      const std::size_t k = argmax(p);
      ent += p(static_cast<Eigen::Index>(k));
      // d max_k p / dz = p_k (onehot_k - p)
      Vector gi = -p(static_cast<Eigen::Index>(k)) * p;
      gi(static_cast<Eigen::Index>(k)) += p(static_cast<Eigen::Index>(k));
      gi *= w.ent * inv_b;
      const auto label = batch.labels[static_cast<std::size_t>(i)][index_of(attr)];
      if (label) {
        ce += cross_entropy(zi, *label);
        // Loss subtracts CE, so the gradient is -(p - y).
        Vector ce_grad = p;
        ce_grad(static_cast<Eigen::Index>(*label)) -= 1.0;
        gi -= (w_ce * inv_b) * ce_grad;
      }
      g.row(i) = gi.transpose();
    }
    out.ent.push_back({attr, ent * inv_b});
    out.ce.push_back({attr, ce * inv_b});
    out.total += w.ent * ent * inv_b - w_ce * ce * inv_b;
    if (logit_grads != nullptr) logit_grads->push_back(std::move(g));
  }
  return out;
}

std::string batch_ids(const ArlBatch& batch) {
  std::string out;
  const std::size_t shown = std::min<std::size_t>(batch.ids.size(), 8);
  for (std::size_t i = 0; i < shown; ++i) {
    if (i) out += ",";
    out += batch.ids[i];
  }
  if (batch.ids.size() > shown) out += ",...";
  return out;
}

// Component-wise accumulation for sample-weighted epoch means.
void accumulate(ArlLossComponents& acc, const ArlLossComponents& x, double weight) {
  if (acc.ent.empty()) {
    acc.ent = x.ent;
    acc.ce = x.ce;
    for (auto& t : acc.ent) t.value = 0.0;
    for (auto& t : acc.ce) t.value = 0.0;
  }
  acc.total += weight * x.total;
  acc.recon += weight * x.recon;
  for (std::size_t h = 0; h < x.ent.size(); ++h) {
    acc.ent[h].value += weight * x.ent[h].value;
    acc.ce[h].value += weight * x.ce[h].value;
  }
}

void scale(ArlLossComponents& c, double s) {
  c.total *= s;
  c.recon *= s;
  for (auto& t : c.ent) t.value *= s;
  for (auto& t : c.ce) t.value *= s;
}

ArlBatch slice(const ArlBatch& all, const std::vector<std::size_t>& order,
               std::size_t start, std::size_t end) {
  ArlBatch b;
  b.inputs.resize(static_cast<Eigen::Index>(end - start), all.inputs.cols());
  for (std::size_t i = start; i < end; ++i) {
    b.inputs.row(static_cast<Eigen::Index>(i - start)) =
        all.inputs.row(static_cast<Eigen::Index>(order[i]));
    b.labels.push_back(all.labels[order[i]]);
    b.ids.push_back(all.ids[order[i]]);
  }
  return b;
}

nlohmann::json components_json(const ArlLossComponents& c) {
  nlohmann::json ent = nlohmann::json::object(), ce = nlohmann::json::object();
  for (const auto& t : c.ent) ent[std::string(attribute_name(t.attribute))] = t.value;
  for (const auto& t : c.ce) ce[std::string(attribute_name(t.attribute))] = t.value;
  return {{"total", c.total}, {"recon", c.recon}, {"ent", ent}, {"ce", ce}};
}

}  // namespace

std::string ActivationSpec::name() const {
  switch (kind) {
    case ActivationKind::kIdentity: return "identity";
    case ActivationKind::kGelu: return "gelu";
    case ActivationKind::kTanh: return "tanh";
    case ActivationKind::kCustom: return custom_name;
  }
  return "identity";
}

void ActivationSpec::validate() const {
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ValidationError("arl: dropout rate must be in [0, 1)");
  }
  if (kind == ActivationKind::kCustom) custom(custom_name);
}

ActivationSpec ActivationSpec::from_name(std::string_view name, double dropout_rate) {
  ActivationSpec s;
  s.dropout_rate = dropout_rate;
  if (name == "identity" || name == "none") {
    s.kind = ActivationKind::kIdentity;
  } else if (name == "gelu") {
    s.kind = ActivationKind::kGelu;
  } else if (name == "tanh") {
    s.kind = ActivationKind::kTanh;
  } else {
    s.kind = ActivationKind::kCustom;
    s.custom_name = std::string(name);
  }
  s.validate();
  return s;
}

void register_activation(const std::string& name, ActivationFunction fn) {
  if (name == "identity" || name == "gelu" || name == "tanh" || name.empty()) {
    throw ValidationError("activation name '" + name + "' is reserved");
  }
  if (!fn.value || !fn.derivative) {
    throw ValidationError("activation '" + name + "' needs value and derivative");
  }
  registry()[name] = std::move(fn);
}

bool has_activation(const std::string& name) {
  return name == "identity" || name == "gelu" || name == "tanh" ||
         registry().count(name) > 0;
}

double apply_activation(const ActivationSpec& spec, double x) {
  switch (spec.kind) {
    case ActivationKind::kIdentity: return x;
    case ActivationKind::kGelu: return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
    case ActivationKind::kTanh: return std::tanh(x);
    case ActivationKind::kCustom: return custom(spec.custom_name).value(x);
  }
  return x;
}

double activation_derivative(const ActivationSpec& spec, double x) {
  switch (spec.kind) {
    case ActivationKind::kIdentity: return 1.0;
    case ActivationKind::kGelu: {
      const double cdf = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
      const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
      return cdf + x * pdf;
    }
    case ActivationKind::kTanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case ActivationKind::kCustom: return custom(spec.custom_name).derivative(x);
  }
  return 1.0;
}

ArlModel ArlModel::zeros(std::size_t d, const ActivationSpec& activation) {
  if (d == 0) throw ValidationError("arl: dimension must be positive");
  activation.validate();
  ArlModel m;
  m.d = d;
  m.weight = Matrix::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  m.bias = Vector::Zero(static_cast<Eigen::Index>(d));
  m.activation = activation;
  return m;
}

DebiasedEmbedding arl_forward(const ArlModel& model, const Vector& e, std::string id) {
  if (static_cast<std::size_t>(e.size()) != model.d) {
    throw ValidationError("arl: input dimension " + std::to_string(e.size()) +
                          " does not match model dimension " +
                          std::to_string(model.d));
  }
  DebiasedEmbedding out;
  out.id = std::move(id);
  const Vector pre = model.weight * e + model.bias;
  out.residual = pre.unaryExpr(
      [&](double x) { return apply_activation(model.activation, x); });
  out.phi_bar = e + out.residual;
  return out;
}

void ArlLossWeights::validate() const {
  auto bad = [](double v) { return !std::isfinite(v) || v < 0.0; };
  if (bad(recon) || bad(ent)) {
    throw ValidationError("arl: loss weights must be finite and non-negative");
  }
  for (double c : ce) {
    if (bad(c)) throw ValidationError("arl: loss weights must be finite and non-negative");
  }
}

ArlBatch make_arl_batch(const EmbeddingSet& set, const std::vector<std::size_t>& indices) {
  ArlBatch b;
  b.inputs.resize(static_cast<Eigen::Index>(indices.size()),
                  static_cast<Eigen::Index>(set.d));
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& r = set.records.at(indices[i]);
    if (r.vector.size() != set.d) {
      throw ValidationError("record '" + r.id + "': dimension mismatch");
    }
    for (std::size_t j = 0; j < set.d; ++j) {
      b.inputs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = r.vector[j];
    }
    b.labels.push_back(r.labels);
    b.ids.push_back(r.id);
  }
  return b;
}

ArlBatch make_arl_batch(const EmbeddingSet& set) {
  std::vector<std::size_t> idx(set.records.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return make_arl_batch(set, idx);
}

ArlLossComponents arl_loss(const ArlModel& model, const PacModel& frozen_pac,
                           const ArlBatch& batch, const ArlLossWeights& weights) {
  require_usable(model, frozen_pac, batch);
  const Forward f = forward(model, frozen_pac, batch.inputs, nullptr);
  return loss_terms(f, frozen_pac, batch, weights, nullptr);
}

ArlLossAndGrad arl_backward(const ArlModel& model, const PacModel& frozen_pac,
                            const ArlBatch& batch, const ArlLossWeights& weights,
                            const Matrix* dropout_mask) {
  require_usable(model, frozen_pac, batch);
  const Forward f = forward(model, frozen_pac, batch.inputs, dropout_mask);
  std::vector<Matrix> logit_grads;
  ArlLossAndGrad out;
  out.loss = loss_terms(f, frozen_pac, batch, weights, &logit_grads);

  Matrix unit_grad;
  pac_backward_from_logits(frozen_pac, f.pac, logit_grads, nullptr, &unit_grad);

  const auto rows = f.phi.rows();
  const double inv_b = 1.0 / static_cast<double>(rows);
  Matrix residual_grad(rows, f.phi.cols());
  for (Eigen::Index i = 0; i < rows; ++i) {
    const double n = f.norms(i);
    Eigen::RowVectorXd g = unit_grad.row(i);
    if (n > kNormEpsilon) {
      // Jacobian of x / |x| applied to g: (g - u (u . g)) / |x|.
      const Eigen::RowVectorXd u = f.unit.row(i);
      g = (g - u * u.dot(g)) / n;
    }
    const double rn = std::sqrt(f.residual.row(i).squaredNorm() +
                                kReconSmoothing * kReconSmoothing);
    g += (weights.recon * inv_b / rn) * f.residual.row(i);
    residual_grad.row(i) = g;
  }
  Matrix pre_grad = residual_grad.cwiseProduct(f.pre.unaryExpr(
      [&](double x) { return activation_derivative(model.activation, x); }));
  if (dropout_mask != nullptr) pre_grad = pre_grad.cwiseProduct(*dropout_mask);

  out.grads.weight = pre_grad.transpose() * batch.inputs;
  out.grads.bias = pre_grad.colwise().sum().transpose();
  return out;
}

void ArlTrainConfig::validate() const {
  weights.validate();
  activation.validate();
  if (batch_size == 0) throw ValidationError("arl: batch size must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ValidationError("arl: learning rate must be positive");
  }
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
    throw ValidationError("arl: weight decay must be non-negative");
  }
  if (!(early_stop.min_delta >= 0.0)) {
    throw ValidationError("arl: early stopping min_delta must be non-negative");
  }
  if (adversarial_pac_learning_rate && !(*adversarial_pac_learning_rate > 0.0)) {
    throw ValidationError("arl: adversarial learning rate must be positive");
  }
}

ArlTrainResult train_arl(const EmbeddingSet& set, const PacModel& frozen_pac,
                         const ArlTrainConfig& cfg) {
  cfg.validate();
  if (!frozen_pac.frozen) {
    throw ValidationError("arl: classifier must be frozen before residual training");
  }
  if (frozen_pac.d != set.d) {
    throw ValidationError("arl: classifier dimension " + std::to_string(frozen_pac.d) +
                          " does not match embeddings " + std::to_string(set.d));
  }
  const std::vector<std::size_t> train_idx = split_indices(set, Split::kTrain);
  const std::vector<std::size_t> val_idx = split_indices(set, Split::kVal);
  if (train_idx.empty()) throw ValidationError("arl: no training records");
  if (val_idx.empty()) throw ValidationError("arl: no validation records");

  const ArlBatch train = make_arl_batch(set, train_idx);
  const ArlBatch val = make_arl_batch(set, val_idx);

  ArlTrainResult result;
  ArlModel model = ArlModel::zeros(set.d, cfg.activation);
  for (const auto& h : frozen_pac.heads) model.targets.push_back(h.attribute());

  PacModel pac = frozen_pac;
  std::vector<AdamState> pac_w_states, pac_b_states;
  if (cfg.adversarial_pac_learning_rate) {
    AdamOptions po;
    po.learning_rate = *cfg.adversarial_pac_learning_rate;
    for (const DenseLayer* l : std::as_const(pac).layers()) {
      pac_w_states.push_back(make_adam_state(static_cast<std::size_t>(l->weight.size()), po));
      pac_b_states.push_back(make_adam_state(static_cast<std::size_t>(l->bias.size()), po));
    }
  }

  AdamOptions opts;
  opts.learning_rate = cfg.learning_rate;
  opts.weight_decay = cfg.weight_decay;
  AdamState w_state = make_adam_state(static_cast<std::size_t>(model.weight.size()), opts);
  AdamState b_state = make_adam_state(static_cast<std::size_t>(model.bias.size()), opts);

  const double initial = arl_loss(model, pac, val, cfg.weights).total;
  result.initial_val_loss = initial;
  result.best_val_loss = initial;
  result.model = model;
  double reference = initial;  // patience resets only on min_delta improvements
  std::size_t stale = 0;

  Rng root(cfg.seed);
  Rng shuffle_rng = root.derive(0x4152);
  Rng dropout_rng = root.derive(0x4450);
  const double p = cfg.activation.dropout_rate;
  std::vector<std::size_t> order(train_idx.size());

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (cfg.shuffle) shuffle_rng.shuffle(std::span<std::size_t>(order));
    ArlEpochMetrics m;
    m.epoch = epoch;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const ArlBatch batch = slice(train, order, start, end);
      Matrix mask;
      if (p > 0.0) {
        mask.resize(batch.inputs.rows(), batch.inputs.cols());
        for (Eigen::Index i = 0; i < mask.size(); ++i) {
          mask.data()[i] = dropout_rng.uniform() < p ? 0.0 : 1.0 / (1.0 - p);
        }
      }
      ArlLossAndGrad lg =
          arl_backward(model, pac, batch, cfg.weights, p > 0.0 ? &mask : nullptr);
      if (!std::isfinite(lg.loss.total) || !all_finite(lg.grads.weight) ||
          !all_finite(lg.grads.bias)) {
        throw NumericalError("arl: non-finite loss at epoch " + std::to_string(epoch) +
                             " in batch [" + batch_ids(batch) + "]");
      }
      accumulate(m.train, lg.loss, static_cast<double>(end - start));
      adam_step(model.weight, lg.grads.weight, w_state);
      adam_step(model.bias, lg.grads.bias, b_state);

      if (cfg.adversarial_pac_learning_rate) {
        // Experimental: the classifier chases the current residual output.
        PacBatch pb;
        pb.inputs = batch.inputs;
        for (Eigen::Index i = 0; i < pb.inputs.rows(); ++i) {
          const Vector row = pb.inputs.row(i).transpose();
          pb.inputs.row(i) = l2_normalize(arl_forward(model, row).phi_bar).value.transpose();
        }
        pb.labels = batch.labels;
        const PacLossAndGrad pg = pac_backward(pac, pb);
        auto layers = pac.layers();
        for (std::size_t l = 0; l < layers.size(); ++l) {
          adam_step(layers[l]->weight, pg.grads[l].weight, pac_w_states[l]);
          adam_step(layers[l]->bias, pg.grads[l].bias, pac_b_states[l]);
        }
      }
    }
    scale(m.train, 1.0 / static_cast<double>(order.size()));
    m.val = arl_loss(model, pac, val, cfg.weights);
    if (!std::isfinite(m.val.total)) {
      throw NumericalError("arl: non-finite validation loss at epoch " +
                           std::to_string(epoch));
    }
    if (m.val.total < result.best_val_loss) {
      result.best_val_loss = m.val.total;
      result.best_epoch = epoch;
      result.model = model;
      m.improved = true;
    }
    if (m.val.total < reference - cfg.early_stop.min_delta) {
      reference = m.val.total;
      stale = 0;
    } else {
      ++stale;
    }
    result.epochs.push_back(std::move(m));
    if (cfg.early_stop.patience > 0 && stale >= cfg.early_stop.patience) {
      result.stopped_early = epoch < cfg.epochs;
      break;
    }
  }
  if (cfg.adversarial_pac_learning_rate) result.adversarial_pac = std::move(pac);
  return result;
}

std::size_t ArlChain::d() const { return stages.empty() ? 0 : stages.front().d; }

Vector ArlChain::apply(const Vector& e) const {
  Vector x = e;
  for (const auto& s : stages) x = arl_forward(s, x).phi_bar;
  return x;
}

SequentialTrainResult train_arl_sequential(const EmbeddingSet& set,
                                           const std::vector<PacModel>& pacs,
                                           const std::vector<Attribute>& order,
                                           const ArlTrainConfig& cfg) {
  if (order.empty()) throw ValidationError("arl: empty attribute order");
  SequentialTrainResult out;
  EmbeddingSet current = set;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const PacModel* pac = nullptr;
    for (const auto& p : pacs) {
      if (p.heads.size() == 1 && p.heads.front().attribute() == order[k]) pac = &p;
    }
    if (pac == nullptr) {
      throw ValidationError("arl: no single-head classifier for attribute '" +
                            std::string(attribute_name(order[k])) + "'");
    }
    ArlTrainConfig stage_cfg = cfg;
    stage_cfg.seed = cfg.seed + k;
    ArlTrainResult r = train_arl(current, *pac, stage_cfg);
    if (k + 1 < order.size()) current = debias_set(r.model, current).debiased;
    out.chain.stages.push_back(r.model);
    out.stages.push_back(std::move(r));
  }
  return out;
}

DebiasResult debias_set(const ArlChain& chain, const EmbeddingSet& set) {
  if (chain.stages.empty()) throw ValidationError("arl: empty residual chain");
  for (const auto& s : chain.stages) {
    if (s.d != set.d) {
      throw ValidationError("arl: model dimension " + std::to_string(s.d) +
                            " does not match embeddings " + std::to_string(set.d));
    }
  }
  DebiasResult out{set.empty_like(), set.empty_like()};
  out.debiased.records.reserve(set.records.size());
  out.residuals.records.reserve(set.records.size());
  for (const auto& r : set.records) {
    const Vector e = Eigen::Map<const Vector>(r.vector.data(),
                                              static_cast<Eigen::Index>(r.vector.size()));
    Vector phi;
    Vector residual;
    if (chain.stages.size() == 1) {
      DebiasedEmbedding de = arl_forward(chain.stages.front(), e, r.id);
      phi = std::move(de.phi_bar);
      residual = std::move(de.residual);
    } else {
      phi = chain.apply(e);
      residual = phi - e;
    }
    EmbeddingRecord dr = r;
    dr.vector.assign(phi.data(), phi.data() + phi.size());
    EmbeddingRecord rr = r;
    rr.vector.assign(residual.data(), residual.data() + residual.size());
    out.debiased.records.push_back(std::move(dr));
    out.residuals.records.push_back(std::move(rr));
  }
  return out;
}

DebiasResult debias_set(const ArlModel& model, const EmbeddingSet& set) {
  return debias_set(ArlChain{{model}}, set);
}

std::string arl_metrics_jsonl(const std::vector<ArlEpochMetrics>& epochs) {
  std::string out;
  for (const auto& e : epochs) {
    nlohmann::json j = {{"epoch", e.epoch},
                        {"train", components_json(e.train)},
                        {"val", components_json(e.val)},
                        {"improved", e.improved}};
    out += j.dump() + "\n";
  }
  return out;
}

std::string serialize_arl(const ArlChain& chain) {
  internal::ByteWriter w;
  w.bytes(std::string_view(kArlMagic, 4));
  w.u32(kArlVersion);
  w.u32(static_cast<std::uint32_t>(chain.d()));
  w.u8(static_cast<std::uint8_t>(chain.stages.size()));
  for (const auto& s : chain.stages) {
    w.u8(static_cast<std::uint8_t>(s.activation.kind));
    w.str16(s.activation.custom_name);
    w.f64(s.activation.dropout_rate);
    w.u8(static_cast<std::uint8_t>(s.targets.size()));
    for (Attribute a : s.targets) w.u8(static_cast<std::uint8_t>(a));
    for (Eigen::Index i = 0; i < s.weight.size(); ++i) w.f64(s.weight.data()[i]);
    for (Eigen::Index i = 0; i < s.bias.size(); ++i) w.f64(s.bias(i));
  }
  return w.take();
}

ArlChain parse_arl(std::string_view bytes) {
  internal::ByteReader r(bytes, "arl checkpoint");
  if (r.bytes(4) != std::string_view(kArlMagic, 4)) {
    throw ValidationError("arl checkpoint: bad magic");
  }
  const std::uint32_t version = r.u32();
  if (version != kArlVersion) {
    throw ValidationError("arl checkpoint: unsupported version " + std::to_string(version));
  }
  const std::size_t d = r.u32();
  const std::uint8_t n = r.u8();
  if (d == 0 || n == 0) throw ValidationError("arl checkpoint: empty model");
  ArlChain chain;
  for (std::uint8_t k = 0; k < n; ++k) {
    ActivationSpec spec;
    const std::uint8_t kind = r.u8();
    if (kind > static_cast<std::uint8_t>(ActivationKind::kCustom)) {
      throw ValidationError("arl checkpoint: bad activation code");
    }
    spec.kind = static_cast<ActivationKind>(kind);
    spec.custom_name = r.str16();
    spec.dropout_rate = r.f64();
    ArlModel m = ArlModel::zeros(d, spec);
    const std::uint8_t nt = r.u8();
    for (std::uint8_t t = 0; t < nt; ++t) {
      const std::uint8_t code = r.u8();
      if (code >= kNumAttributes) throw ValidationError("arl checkpoint: bad attribute code");
      m.targets.push_back(static_cast<Attribute>(code));
    }
    for (Eigen::Index i = 0; i < m.weight.size(); ++i) m.weight.data()[i] = r.f64();
    for (Eigen::Index i = 0; i < m.bias.size(); ++i) m.bias(i) = r.f64();
    if (!all_finite(m.weight) || !all_finite(m.bias)) {
      throw ValidationError("arl checkpoint: non-finite weights");
    }
    chain.stages.push_back(std::move(m));
  }
  if (r.remaining() != 0) throw ValidationError("arl checkpoint: trailing bytes");
  return chain;
}

void save_arl(const ArlChain& chain, const std::filesystem::path& path) {
  write_file(path, serialize_arl(chain));
}

ArlChain load_arl(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw ValidationError("missing ARL checkpoint '" + path.string() + "'");
  }
  return parse_arl(read_file(path));
}

}  // namespace resfair
