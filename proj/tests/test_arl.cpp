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
#include <limits>

#include "doctest.h"
#include "resfair/arl.hpp"
#include "support.hpp"

using namespace resfair;
using resfair::testing::random_set;

namespace {

const PacArchitecture kSmall{6, 5};

PacModel frozen_random_pac(const EmbeddingSet& set, std::uint64_t seed) {
  PacModel p = PacModel::initialized(set.d, set.vocabularies, kSmall, seed);
  p.freeze();
  return p;
}

ArlModel random_arl(std::size_t d, std::uint64_t seed, const ActivationSpec& act, double scale = 0.3) {
  Rng rng(seed);
  ArlModel m = ArlModel::zeros(d, act);
  for (Eigen::Index i = 0; i < m.weight.size(); ++i) m.weight.data()[i] = scale * rng.normal();
  for (Eigen::Index i = 0; i < m.bias.size(); ++i) m.bias[i] = scale * rng.normal();
  return m;
}

Vector flatten(const ArlModel& m) {
  Vector x(m.weight.size() + m.bias.size());
  x << Eigen::Map<const Vector>(m.weight.data(), m.weight.size()), m.bias;
  return x;
}

void unflatten(ArlModel& m, const Vector& x) {
  Eigen::Map<Vector>(m.weight.data(), m.weight.size()) = x.head(m.weight.size());
  m.bias = x.tail(m.bias.size());
}

}  // namespace

TEST_CASE("zero residual against a zero classifier") {
  const EmbeddingSet set = random_set(10, 8, 1);
  PacModel zero = PacModel::zeros(8, set.vocabularies, kSmall);
  zero.freeze();
  const ArlLossComponents l =
      arl_loss(ArlModel::zeros(8), zero, make_arl_batch(set), ArlLossWeights{});
  // Uniform softmax: max probability 1/C per head, cross-entropy ln C.
  const double ent = 0.5 + 1.0 / 7.0 + 0.25;
  const double ce = std::log(2.0) + std::log(7.0) + std::log(4.0);
  CHECK(ent == doctest::Approx(0.8928571428571429).epsilon(1e-15));
  CHECK(l.recon == doctest::Approx(kReconSmoothing).epsilon(1e-12));
  CHECK(l.total == doctest::Approx(kReconSmoothing + ent - 1e-4 * ce).epsilon(1e-13));
  CHECK(l.total == doctest::Approx(0.89245460).epsilon(1e-7));
}

TEST_CASE("zero model is the identity map") {
  const EmbeddingSet set = random_set(5, 8, 2);
  const DebiasResult r = debias_set(ArlModel::zeros(8), set);
  for (std::size_t i = 0; i < set.records.size(); ++i) {
    CHECK(r.debiased.records[i].vector == set.records[i].vector);
    for (double x : r.residuals.records[i].vector) CHECK(x == 0.0);
  }
}

TEST_CASE("analytic residual gradients match central differences") {
  const std::vector<ActivationSpec> acts = {ActivationSpec::from_name("identity"),
                                            ActivationSpec::from_name("gelu"),
                                            ActivationSpec::from_name("tanh"),
                                            ActivationSpec::from_name("quick_gelu")};
  std::uint64_t seed = 0;
  for (const auto& act : acts) {
    for (int rep = 0; rep < 3; ++rep, ++seed) {
      const EmbeddingSet set = random_set(7, 8, 100 + seed);
      const PacModel pac = frozen_random_pac(set, seed);
      ArlModel model = random_arl(8, seed, act);
      ArlLossWeights w;
      w.ce = {0.3, 0.2, 0.1};  // large enough to matter in the check
      const ArlBatch batch = make_arl_batch(set);
      const ArlLossAndGrad lg = arl_backward(model, pac, batch, w);
      CHECK(lg.loss.total == doctest::Approx(arl_loss(model, pac, batch, w).total).epsilon(1e-14));
      Vector analytic(lg.grads.weight.size() + lg.grads.bias.size());
      analytic << Eigen::Map<const Vector>(lg.grads.weight.data(), lg.grads.weight.size()),
          lg.grads.bias;
      auto f = [&](const Vector& x) {
        ArlModel m = model;
        unflatten(m, x);
        return arl_loss(m, pac, batch, w).total;
      };
      INFO(act.name(), " seed ", seed);
      CHECK(check_gradient(f, flatten(model), analytic, 1e-5).max_relative_error < 1e-4);
    }
  }
}

TEST_CASE("an all-ones dropout mask equals evaluation mode") {
  const EmbeddingSet set = random_set(6, 8, 3);
  const PacModel pac = frozen_random_pac(set, 3);
  const ArlModel model = random_arl(8, 3, ActivationSpec::from_name("gelu", 0.1));
  const ArlBatch batch = make_arl_batch(set);
  const Matrix ones = Matrix::Ones(6, 8);
  const ArlLossAndGrad a = arl_backward(model, pac, batch, ArlLossWeights{}, &ones);
  const ArlLossAndGrad b = arl_backward(model, pac, batch, ArlLossWeights{});
  CHECK(a.loss.total == b.loss.total);
  CHECK(a.grads.weight == b.grads.weight);
}

TEST_CASE("unfrozen classifiers are rejected") {
  const EmbeddingSet set = random_set(6, 8, 4);
  PacModel pac = PacModel::initialized(8, set.vocabularies, kSmall, 1);
  CHECK_THROWS_AS(arl_loss(ArlModel::zeros(8), pac, make_arl_batch(set), ArlLossWeights{}),
                  ValidationError);
  ArlTrainConfig cfg;
  cfg.epochs = 1;
  CHECK_THROWS_AS(train_arl(set, pac, cfg), ValidationError);
}

TEST_CASE("epochs = 0 returns the zero model") {
  const EmbeddingSet set = random_set(40, 8, 5);
  const PacModel pac = frozen_random_pac(set, 5);
  ArlTrainConfig cfg;
  cfg.epochs = 0;
  const ArlTrainResult r = train_arl(set, pac, cfg);
  CHECK(r.best_epoch == 0);
  CHECK(r.model.weight.isZero(0.0));
  CHECK(r.model.bias.isZero(0.0));
  CHECK(r.best_val_loss == r.initial_val_loss);
}

TEST_CASE("training leaves the classifier untouched and is deterministic") {
  const EmbeddingSet set = random_set(120, 8, 6);
  const PacModel pac = frozen_random_pac(set, 6);
  const std::string before = serialize_pac(pac);
  ArlTrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 16;
  cfg.seed = 2;
  cfg.learning_rate = 1e-2;
  const ArlTrainResult a = train_arl(set, pac, cfg);
  const ArlTrainResult b = train_arl(set, pac, cfg);
  CHECK(serialize_pac(pac) == before);
  CHECK(serialize_arl(ArlChain{{a.model}}) == serialize_arl(ArlChain{{b.model}}));
  CHECK(arl_metrics_jsonl(a.epochs) == arl_metrics_jsonl(b.epochs));
  CHECK(a.epochs.size() <= 3);
  CHECK(a.best_val_loss <= a.initial_val_loss);
}

TEST_CASE("best checkpoint has the lowest validation loss seen") {
  const EmbeddingSet set = random_set(150, 8, 7);
  const PacModel pac = frozen_random_pac(set, 7);
  ArlTrainConfig cfg;
  cfg.epochs = 6;
  cfg.batch_size = 32;
  cfg.learning_rate = 5e-2;
  const ArlTrainResult r = train_arl(set, pac, cfg);
  double best = r.initial_val_loss;
  for (const auto& e : r.epochs) best = std::min(best, e.val.total);
  CHECK(r.best_val_loss == best);
  const ArlLossComponents v =
      arl_loss(r.model, pac, make_arl_batch(set.subset(Split::kVal)), cfg.weights);
  CHECK(v.total == doctest::Approx(best).epsilon(1e-12));
}

TEST_CASE("early stopping honors patience") {
  const EmbeddingSet set = random_set(80, 8, 8);
  const PacModel pac = frozen_random_pac(set, 8);
  ArlTrainConfig cfg;
  cfg.epochs = 50;
  cfg.learning_rate = 1e-300;  // nothing can improve
  cfg.early_stop.patience = 2;
  const ArlTrainResult r = train_arl(set, pac, cfg);
  CHECK(r.stopped_early);
  CHECK(r.epochs.size() == 2);
  CHECK(r.best_epoch == 0);
}

TEST_CASE("non-finite loss raises a numerical error naming batch ids") {
  const EmbeddingSet set = random_set(40, 8, 9);
  PacModel pac = frozen_random_pac(set, 9);
  pac.heads[0].output.bias[0] = std::numeric_limits<double>::infinity();
  ArlTrainConfig cfg;
  cfg.epochs = 1;
  try {
    train_arl(set, pac, cfg);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("r") != std::string::npos);
  }
}

TEST_CASE("decomposition: debiased equals original plus residual") {
  const EmbeddingSet set = random_set(20, 8, 10);
  const ArlModel m = random_arl(8, 10, ActivationSpec::from_name("tanh"));
  const DebiasResult one = debias_set(m, set);
  for (std::size_t i = 0; i < set.records.size(); ++i) {
    for (std::size_t j = 0; j < 8; ++j) {
      // Single stage: phi_bar is formed as e + r, so the identity is exact.
      CHECK(one.debiased.records[i].vector[j] ==
            set.records[i].vector[j] + one.residuals.records[i].vector[j]);
    }
  }
  const ArlChain chain{{m, random_arl(8, 11, ActivationSpec::from_name("identity"))}};
  const DebiasResult two = debias_set(chain, set);
  for (std::size_t i = 0; i < set.records.size(); ++i) {
    for (std::size_t j = 0; j < 8; ++j) {
      const double phi = two.debiased.records[i].vector[j];
      CHECK(set.records[i].vector[j] + two.residuals.records[i].vector[j] ==
            doctest::Approx(phi).epsilon(1e-14));
    }
  }
}

TEST_CASE("chains apply stages in order") {
  const ArlModel a = random_arl(4, 1, ActivationSpec::from_name("identity"));
  const ArlModel b = random_arl(4, 2, ActivationSpec::from_name("tanh"));
  Vector e(4);
  e << 0.1, -0.2, 0.3, 0.4;
  const Vector step = arl_forward(b, arl_forward(a, e).phi_bar).phi_bar;
  CHECK((ArlChain{{a, b}}.apply(e) - step).norm() == 0.0);
}

TEST_CASE("sequential training builds one stage per attribute") {
  const EmbeddingSet set = random_set(100, 8, 12);
  std::vector<PacModel> pacs;
  const std::vector<Attribute> order = {Attribute::kRace, Attribute::kGender};
  for (Attribute a : order) {
    PacModel p = PacModel::initialized(8, {set.require_vocabulary(a)}, kSmall, 3);
    p.freeze();
    pacs.push_back(p);
  }
  ArlTrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 32;
  const SequentialTrainResult r = train_arl_sequential(set, pacs, order, cfg);
  REQUIRE(r.chain.stages.size() == 2);
  CHECK(r.chain.stages[0].targets == std::vector<Attribute>{Attribute::kRace});
  CHECK(r.chain.stages[1].targets == std::vector<Attribute>{Attribute::kGender});
  CHECK(r.stages.size() == 2);
}

TEST_CASE("checkpoint round trip") {
  ArlModel a = random_arl(5, 3, ActivationSpec::from_name("gelu", 0.25));
  a.targets = {Attribute::kAge};
  const ArlModel b = random_arl(5, 4, ActivationSpec::from_name("relu"));
  const ArlChain chain{{a, b}};
  const std::string bytes = serialize_arl(chain);
  const ArlChain back = parse_arl(bytes);
  REQUIRE(back.stages.size() == 2);
  CHECK(back.stages[0].activation.name() == "gelu");
  CHECK(back.stages[0].activation.dropout_rate == 0.25);
  CHECK(back.stages[1].activation.name() == "relu");
  CHECK(back.stages[0].targets == a.targets);
  CHECK(back.stages[0].weight == a.weight);
  CHECK(serialize_arl(back) == bytes);
  CHECK_THROWS_AS(parse_arl(bytes.substr(0, 10)), ValidationError);
  CHECK_THROWS_AS(load_arl("/nonexistent/arl.ckpt"), ValidationError);
}

TEST_CASE("activation registry") {
  CHECK(has_activation("relu"));
  CHECK_FALSE(has_activation("softsign_test"));
  register_activation("softsign_test", {[](double x) { return x / (1 + std::abs(x)); },
                                        [](double x) { return 1 / ((1 + std::abs(x)) * (1 + std::abs(x))); }});
  const ActivationSpec s = ActivationSpec::from_name("softsign_test");
  CHECK(s.kind == ActivationKind::kCustom);
  CHECK(apply_activation(s, 1.0) == 0.5);
  CHECK(activation_derivative(s, 1.0) == 0.25);
  CHECK_THROWS(ActivationSpec::from_name("no_such_activation"));
  const ActivationSpec gelu = ActivationSpec::from_name("gelu");
  // Exact GELU at 1: Phi(1).
  CHECK(apply_activation(gelu, 1.0) == doctest::Approx(0.8413447460685429).epsilon(1e-12));
}

TEST_CASE("configuration validation") {
  ArlTrainConfig cfg;
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  ArlLossWeights w;
  w.recon = -1;
  CHECK_THROWS_AS(w.validate(), ValidationError);
  CHECK_THROWS(ActivationSpec::from_name("gelu", 1.0).validate());
}
