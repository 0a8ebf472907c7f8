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

// Acceptance suite: one PASS/FAIL line per criterion, exit status 0 only when
// every criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "resfair/arl.hpp"
#include "resfair/cli.hpp"
#include "resfair/evaluation.hpp"
#include "resfair/fairness_metrics.hpp"
#include "resfair/pac.hpp"
#include "resfair/synth.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace resfair;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// 1. probe fidelity

Outcome probe_fidelity() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst_mse = 0.0, worst_k = 0.0, worst_b = 0.0;
  const std::size_t reps = 100;
  const LinearPairSource src = make_linear_pair_source(64, 2000, 2024, true);
  const PairSampler sampler = [&](Rng& rng) { return src.sample(rng); };
  const ProbeSummary s = repeat_probe(sampler, reps, 11);
  for (const ProbeModel& m : s.models) {
    worst_mse = std::max(worst_mse, m.relative_mse);
    worst_k = std::max(worst_k, (m.k - src.k_star).norm() / src.k_star.norm());
    worst_b = std::max(worst_b, (m.intercept - src.intercept).norm() / src.intercept.norm());
  }
  const double secs = seconds_since(t0);
  const bool pass = s.models.size() == reps && s.max_relative_mse < 1e-10 && worst_mse < 1e-10 &&
                    worst_k < 1e-6 && secs < 30.0;
  return {pass, "max relMSE " + fmt("%.2e", worst_mse) + ", max |K-K*|/|K*| " + fmt("%.2e", worst_k) +
                    ", max intercept err " + fmt("%.2e", worst_b) + ", " + fmt("%.1f", secs) + " s"};
}

// ---------------------------------------------------------------------------
// 2. skew oracle equivalence

struct Micro {
  int d = 0;
  Attribute attribute = Attribute::kGender;
  std::size_t cardinality = 0;
  std::vector<std::vector<int>> images;
  std::vector<std::string> ids;
  std::vector<std::optional<int>> labels;
  std::vector<std::vector<int>> captions;
  std::vector<Attribute> caption_attrs;
  std::vector<Sentiment> caption_sents;
  int eps_num = 0, eps_den = 1;
  std::size_t k = 1;
  bool fixed_smoothing = false;
  double fixed_delta = 0.05;
};

std::vector<int> grid_vector(Rng& rng, int d) {
  for (;;) {
    std::vector<int> v(d);
    for (auto& x : v) x = static_cast<int>(rng.uniform_index(3)) - 1;
    if (std::any_of(v.begin(), v.end(), [](int x) { return x != 0; })) return v;
  }
}

Micro make_micro(Rng& rng) {
  Micro m;
  m.d = 2 + static_cast<int>(rng.uniform_index(3));
  m.attribute = kAllAttributes[rng.uniform_index(3)];
  m.cardinality = fairface_vocabulary(m.attribute).cardinality();
  const std::size_t n = 1 + rng.uniform_index(12);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(std::span<std::size_t>(perm));
  const int layout = static_cast<int>(rng.uniform_index(5));
  const int fixed_label = static_cast<int>(rng.uniform_index(m.cardinality));
  const int second_label = static_cast<int>(rng.uniform_index(m.cardinality));
  for (std::size_t i = 0; i < n; ++i) {
    // Duplicate an earlier vector now and then to force exact ties.
    if (i > 0 && rng.uniform() < 0.25) {
      m.images.push_back(m.images[rng.uniform_index(i)]);
    } else {
      m.images.push_back(grid_vector(rng, m.d));
    }
    char id[16];
    std::snprintf(id, sizeof(id), "img%02zu", perm[i]);
    m.ids.push_back(id);
    std::optional<int> label;
    switch (layout) {
      case 0:  // single label
        label = fixed_label;
        break;
      case 1:  // two labels
        label = rng.uniform() < 0.5 ? fixed_label : second_label;
        break;
      case 2:  // full vocabulary
        label = static_cast<int>(rng.uniform_index(m.cardinality));
        break;
      case 3:  // some unlabeled
        if (rng.uniform() < 0.7) label = static_cast<int>(rng.uniform_index(m.cardinality));
        break;
      default:  // mostly unlabeled
        if (rng.uniform() < 0.3) label = static_cast<int>(rng.uniform_index(m.cardinality));
        break;
    }
    m.labels.push_back(label);
  }
  // One caption per sentiment for the audited attribute, then a few extras
  // that may belong to other attributes.
  const std::size_t caps = 2 + rng.uniform_index(2);
  for (std::size_t c = 0; c < caps; ++c) {
    m.captions.push_back(grid_vector(rng, m.d));
    if (c < 2) {
      m.caption_attrs.push_back(m.attribute);
      m.caption_sents.push_back(c == 0 ? Sentiment::kPositive : Sentiment::kNegative);
    } else {
      m.caption_attrs.push_back(rng.uniform() < 0.7 ? m.attribute : kAllAttributes[rng.uniform_index(3)]);
      m.caption_sents.push_back(rng.uniform() < 0.5 ? Sentiment::kPositive : Sentiment::kNegative);
    }
  }
  static const int kEps[][2] = {{0, 1}, {1, 10}, {3, 10}, {3, 5}, {9, 10}};
  const auto e = rng.uniform_index(5);
  m.eps_num = kEps[e][0];
  m.eps_den = kEps[e][1];
  m.k = 1 + rng.uniform_index(14);
  m.fixed_smoothing = rng.uniform() < 0.3;
  return m;
}

struct BruteCaption {
  bool skipped = true;
  std::vector<std::optional<long double>> threshold;
  std::vector<std::optional<long double>> at_k;
  bool boundary_tie = false;
};

struct BruteRow {
  bool valid = false;  // false when the implementation must reject the input
  long double max = 0, min = 0, max_k = 0, min_k = 0;
};

long long dot(const std::vector<int>& a, const std::vector<int>& b) {
  long long s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<long long>(a[i]) * b[i];
  return s;
}

// sign(cos) * cos^2 * |caption|^2, as an exact fraction num/den.
struct SignedSquare {
  long long num, den;
};
SignedSquare signed_square(long long d, long long n) { return {(d < 0 ? -1 : 1) * d * d, n}; }
int compare(SignedSquare a, SignedSquare b) {
  const long long l = a.num * b.den, r = b.num * a.den;
  return l < r ? -1 : (l > r ? 1 : 0);
}

std::vector<std::optional<long double>> skews(const std::vector<long long>& base, long long labeled,
                                              const std::vector<long long>& sel, long long total,
                                              const Micro& m) {
  std::vector<std::optional<long double>> out(base.size());
  for (std::size_t l = 0; l < base.size(); ++l) {
    if (base[l] == 0) continue;
    const long double f = static_cast<long double>(base[l]) / labeled;
    long double fm = static_cast<long double>(sel[l]) / total;
    if (sel[l] == 0) fm = m.fixed_smoothing ? m.fixed_delta : 1.0L / (2.0L * total);
    out[l] = std::log(fm / f);
  }
  return out;
}

// Returns nullopt when the implementation is expected to reject the caption
// (no labeled images).
std::optional<BruteCaption> brute_caption(const Micro& m, std::size_t c) {
  const auto& t = m.captions[c];
  const long long nt = dot(t, t);
  std::vector<std::size_t> labeled;
  for (std::size_t i = 0; i < m.images.size(); ++i) {
    if (m.labels[i]) labeled.push_back(i);
  }
  if (labeled.empty()) return std::nullopt;
  std::vector<long long> base(m.cardinality, 0), matched(m.cardinality, 0), top(m.cardinality, 0);
  long long matched_total = 0;
  std::vector<SignedSquare> score(m.images.size());
  for (std::size_t i : labeled) {
    const long long d = dot(m.images[i], t);
    const long long ni = dot(m.images[i], m.images[i]);
    score[i] = signed_square(d, ni);
    ++base[*m.labels[i]];
    bool match;
    if (m.eps_num == 0) {
      match = d >= 0;
    } else {
      // cos >= p/q  <=>  d > 0 and d^2 q^2 >= p^2 |x|^2 |t|^2
      match = d > 0 && d * d * m.eps_den * m.eps_den >= static_cast<long long>(m.eps_num) * m.eps_num * ni * nt;
    }
    if (match) {
      ++matched[*m.labels[i]];
      ++matched_total;
    }
  }
  const long long labeled_count = static_cast<long long>(labeled.size());
  const long long kk = std::min<long long>(static_cast<long long>(m.k), labeled_count);
  std::vector<long long> rank(m.images.size(), 0);
  for (std::size_t i : labeled) {
    for (std::size_t j : labeled) {
      if (i == j) continue;
      const int cmp = compare(score[j], score[i]);
      if (cmp > 0 || (cmp == 0 && m.ids[j] < m.ids[i])) ++rank[i];
    }
  }
  BruteCaption out;
  for (std::size_t i : labeled) {
    if (rank[i] < kk) ++top[*m.labels[i]];
  }
  for (std::size_t i : labeled) {
    for (std::size_t j : labeled) {
      if (rank[i] == kk - 1 && rank[j] == kk && compare(score[i], score[j]) == 0) out.boundary_tie = true;
    }
  }
  if (matched_total == 0) return out;
  out.skipped = false;
  out.threshold = skews(base, labeled_count, matched, matched_total, m);
  out.at_k = skews(base, labeled_count, top, kk, m);
  return out;
}

long double extreme(const std::vector<std::optional<long double>>& v, bool want_max) {
  std::optional<long double> best;
  for (const auto& x : v) {
    if (x && (!best || (want_max ? *x > *best : *x < *best))) best = x;
  }
  return *best;
}

Outcome skew_oracle() {
  Rng rng(31337);
  std::size_t checked_rows = 0, rejected = 0, boundary_ties = 0, skipped_captions = 0;
  double worst = 0.0;
  std::vector<std::string> failures;
  for (int inst = 0; inst < 200; ++inst) {
    const Micro m = make_micro(rng);
    EmbeddingSet set;
    set.d = static_cast<std::size_t>(m.d);
    set.vocabularies = fairface_vocabularies();
    for (std::size_t i = 0; i < m.images.size(); ++i) {
      EmbeddingRecord r;
      r.id = m.ids[i];
      r.vector.assign(m.images[i].begin(), m.images[i].end());
      if (m.labels[i]) r.labels[index_of(m.attribute)] = static_cast<std::uint16_t>(*m.labels[i]);
      set.records.push_back(r);
    }
    std::vector<CaptionRecord> caps;
    for (std::size_t c = 0; c < m.captions.size(); ++c) {
      CaptionRecord cr;
      cr.id = "cap" + std::to_string(c);
      cr.text = cr.id;
      cr.vector = std::vector<double>(m.captions[c].begin(), m.captions[c].end());
      cr.attribute = m.caption_attrs[c];
      cr.sentiment = m.caption_sents[c];
      caps.push_back(cr);
    }
    SkewConfig cfg;
    cfg.epsilon = static_cast<double>(m.eps_num) / m.eps_den;
    cfg.k = m.k;
    cfg.smoothing = m.fixed_smoothing ? SmoothingPolicy::fixed(m.fixed_delta) : SmoothingPolicy::half_count();

    // Brute force per (sentiment) row for the instance attribute.
    bool expect_reject = false;
    std::map<Sentiment, BruteRow> rows;
    std::map<std::string, BruteCaption> per_caption;
    for (Sentiment s : {Sentiment::kPositive, Sentiment::kNegative}) {
      long double smax = 0, smin = 0, smax_k = 0, smin_k = 0;
      std::size_t used = 0;
      for (std::size_t c = 0; c < caps.size(); ++c) {
        if (m.caption_attrs[c] != m.attribute || m.caption_sents[c] != s) continue;
        const auto bc = brute_caption(m, c);
        if (!bc) {
          expect_reject = true;
          continue;
        }
        per_caption[caps[c].id] = *bc;
        if (bc->boundary_tie) ++boundary_ties;
        if (bc->skipped) {
          ++skipped_captions;
          continue;
        }
        smax += extreme(bc->threshold, true);
        smin += extreme(bc->threshold, false);
        smax_k += extreme(bc->at_k, true);
        smin_k += extreme(bc->at_k, false);
        ++used;
      }
      if (used == 0) {
        expect_reject = true;
        continue;
      }
      rows[s] = {true, smax / used, smin / used, smax_k / used, smin_k / used};
    }

    std::optional<SkewReport> report;
    try {
      report = audit(set, caps, cfg, {m.attribute});
    } catch (const ValidationError&) {
    }
    const std::string tag = "instance " + std::to_string(inst);
    if (expect_reject) {
      ++rejected;
      if (report) failures.push_back(tag + ": accepted input the oracle rejects");
      continue;
    }
    if (!report) {
      failures.push_back(tag + ": rejected a valid input");
      continue;
    }
    for (Sentiment s : {Sentiment::kPositive, Sentiment::kNegative}) {
      const SkewRow& got = report->row(m.attribute, s);
      const BruteRow& want = rows[s];
      const double diffs[] = {std::abs(got.max_skew - static_cast<double>(want.max)),
                              std::abs(got.min_skew - static_cast<double>(want.min)),
                              std::abs(got.max_skew_at_k - static_cast<double>(want.max_k)),
                              std::abs(got.min_skew_at_k - static_cast<double>(want.min_k))};
      for (double dd : diffs) worst = std::max(worst, dd);
      ++checked_rows;
    }
    for (const auto& b : report->captions) {
      const BruteCaption& want = per_caption.at(b.caption_id);
      if (b.threshold.skipped != want.skipped) {
        failures.push_back(tag + ": skip flag differs for " + b.caption_id);
        continue;
      }
      if (want.skipped) continue;
      for (std::size_t l = 0; l < want.threshold.size(); ++l) {
        if (b.threshold.per_label[l].has_value() != want.threshold[l].has_value() ||
            b.at_k.per_label[l].has_value() != want.at_k[l].has_value()) {
          failures.push_back(tag + ": label presence differs for " + b.caption_id);
          continue;
        }
        if (want.threshold[l]) {
          worst = std::max(worst, std::abs(*b.threshold.per_label[l] - static_cast<double>(*want.threshold[l])));
          worst = std::max(worst, std::abs(*b.at_k.per_label[l] - static_cast<double>(*want.at_k[l])));
        }
      }
    }
  }
  const bool pass = failures.empty() && worst <= 1e-12 && boundary_ties > 0;
  std::string detail = "200 instances, " + std::to_string(checked_rows) + " rows compared, " +
                       std::to_string(rejected) + " rejected by both, " + std::to_string(skipped_captions) +
                       " empty-match captions, " + std::to_string(boundary_ties) +
                       " captions with a tie across the K boundary, max |diff| " + fmt("%.2e", worst);
  if (!failures.empty()) detail += "; first failure: " + failures.front();
  return {pass, detail};
}

// ---------------------------------------------------------------------------
// 3. gradient correctness

// ReLU activity pattern and per-head argmax for a batch of classifier inputs.
std::vector<char> pac_pattern(const PacModel& pac, const Matrix& inputs) {
  const PacActivations acts = pac_forward_batch(pac, inputs);
  std::vector<char> out;
  for (Eigen::Index i = 0; i < acts.trunk_pre.size(); ++i) out.push_back(acts.trunk_pre.data()[i] > 0);
  for (const auto& h : acts.hidden_pre) {
    for (Eigen::Index i = 0; i < h.size(); ++i) out.push_back(h.data()[i] > 0);
  }
  for (const auto& z : acts.logits) {
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
      Eigen::Index arg;
      z.row(r).maxCoeff(&arg);
      out.push_back(static_cast<char>(arg));
    }
  }
  return out;
}

bool argmax_tie(const PacModel& pac, const Matrix& inputs) {
  const PacActivations acts = pac_forward_batch(pac, inputs);
  for (const auto& z : acts.logits) {
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
      Vector row = z.row(r).transpose();
      std::sort(row.data(), row.data() + row.size(), std::greater<>());
      if (row[0] - row[1] < 1e-6) return true;
    }
  }
  return false;
}

Matrix arl_pac_inputs(const ArlModel& m, const ArlBatch& batch) {
  Matrix out(batch.inputs.rows(), batch.inputs.cols());
  for (Eigen::Index i = 0; i < batch.inputs.rows(); ++i) {
    const Vector e = batch.inputs.row(i).transpose();
    out.row(i) = l2_normalize(arl_forward(m, e).phi_bar).value.transpose();
  }
  return out;
}

struct GradientTally {
  double worst = 0.0;
  std::size_t checked = 0;
  std::size_t over = 0;
  double largest_over = 0.0;   // largest |analytic| among coordinates over tolerance
  double worst_coarse = 0.0;   // those coordinates re-checked with h = 1e-3

  void check(const std::function<double(const Vector&)>& f, const Vector& x, const Vector& g,
             const std::vector<std::size_t>& coords) {
    for (std::size_t c : coords) {
      const std::size_t one[] = {c};
      const GradientCheckResult r = check_gradient(f, x, g, 1e-5, one);
      worst = std::max(worst, r.max_relative_error);
      ++checked;
      if (r.max_relative_error >= 1e-4) {
        ++over;
        largest_over = std::max(largest_over, std::abs(r.analytic));
        worst_coarse = std::max(worst_coarse, check_gradient(f, x, g, 1e-3, one).max_relative_error);
      }
    }
  }
  std::string describe(const char* name) const {
    std::string s = std::string(name) + " max rel err " + fmt("%.2e", worst) + " over " +
                    std::to_string(checked) + " coordinates";
    if (over > 0) {
      s += " (" + std::to_string(over) + " over 1e-4, all with |grad| <= " + fmt("%.1e", largest_over) +
           "; at h=1e-3 their max rel err is " + fmt("%.1e", worst_coarse) + ")";
    }
    return s;
  }
};

// Every parameter of a small random classifier and every residual parameter
// are compared against central differences at h = 1e-5. Coordinates whose
// +-h step flips a ReLU or an argmax are excluded; instances with an argmax
// tie are redrawn.
Outcome gradient_correctness() {
  GradientTally pac_tally, arl_tally;
  std::size_t excluded = 0, redrawn = 0;
  const std::vector<std::string> acts = {"identity", "gelu", "tanh"};
  std::uint64_t draw = 0;
  for (std::size_t inst = 0; inst < 50; ++draw) {
    const EmbeddingSet set = resfair::testing::random_set(6, 8, 500 + draw);
    Rng rng(900 + draw);
    const PacArchitecture arch{8 + rng.uniform_index(25), 4 + rng.uniform_index(13)};
    PacModel pac = PacModel::initialized(8, set.vocabularies, arch, draw);
    ArlModel arl = ArlModel::zeros(8, ActivationSpec::from_name(acts[inst % acts.size()]));
    for (Eigen::Index i = 0; i < arl.weight.size(); ++i) arl.weight.data()[i] = 0.3 * rng.normal();
    for (Eigen::Index i = 0; i < arl.bias.size(); ++i) arl.bias[i] = 0.3 * rng.normal();
    const ArlBatch ab = make_arl_batch(set);
    if (argmax_tie(pac, arl_pac_inputs(arl, ab))) {
      ++redrawn;
      continue;
    }
    ++inst;

    const PacBatch pb = make_pac_batch(set);
    const PacLossAndGrad lg = pac_backward(pac, pb);
    const std::vector<double> flat = flatten_parameters(pac);
    const std::vector<double> grad = flatten_gradients(lg.grads);
    const Vector x = Eigen::Map<const Vector>(flat.data(), static_cast<Eigen::Index>(flat.size()));
    const Vector g = Eigen::Map<const Vector>(grad.data(), static_cast<Eigen::Index>(grad.size()));
    const std::vector<char> base_pattern = pac_pattern(pac, pb.inputs);
    std::vector<std::size_t> smooth;
    for (std::size_t c = 0; c < flat.size(); ++c) {
      bool same = true;
      for (double sign : {-1.0, 1.0}) {
        PacModel p = pac;
        std::vector<double> f = flat;
        f[c] += sign * 1e-5;
        assign_parameters(p, f);
        same = same && pac_pattern(p, pb.inputs) == base_pattern;
      }
      if (same) {
        smooth.push_back(c);
      } else {
        ++excluded;
      }
    }
    auto pac_f = [&](const Vector& v) {
      PacModel p = pac;
      assign_parameters(p, {v.data(), v.data() + v.size()});
      return pac_loss(p, pb);
    };
    pac_tally.check(pac_f, x, g, smooth);

    pac.freeze();
    ArlLossWeights w;
    if (inst % 2 == 1) w.ce = {0.5, 0.3, 0.2};
    const ArlLossAndGrad ag = arl_backward(arl, pac, ab, w);
    Vector ax(arl.weight.size() + arl.bias.size());
    ax << Eigen::Map<const Vector>(arl.weight.data(), arl.weight.size()), arl.bias;
    Vector agv(ax.size());
    agv << Eigen::Map<const Vector>(ag.grads.weight.data(), ag.grads.weight.size()), ag.grads.bias;
    auto unflatten = [&](const Vector& v) {
      ArlModel m = arl;
      Eigen::Map<Vector>(m.weight.data(), m.weight.size()) = v.head(m.weight.size());
      m.bias = v.tail(m.bias.size());
      return m;
    };
    const std::vector<char> arl_pattern = pac_pattern(pac, arl_pac_inputs(arl, ab));
    std::vector<std::size_t> arl_coords;
    for (Eigen::Index c = 0; c < ax.size(); ++c) {
      bool same = true;
      for (double sign : {-1.0, 1.0}) {
        Vector v = ax;
        v[c] += sign * 1e-5;
        same = same && pac_pattern(pac, arl_pac_inputs(unflatten(v), ab)) == arl_pattern;
      }
      if (same) {
        arl_coords.push_back(static_cast<std::size_t>(c));
      } else {
        ++excluded;
      }
    }
    auto arl_f = [&](const Vector& v) { return arl_loss(unflatten(v), pac, ab, w).total; };
    arl_tally.check(arl_f, ax, agv, arl_coords);
  }
  const bool pass = pac_tally.worst < 1e-4 && arl_tally.worst < 1e-4;
  return {pass, "50 instances (" + std::to_string(redrawn) + " redrawn at argmax ties); " +
                    pac_tally.describe("PAC") + "; " + arl_tally.describe("ARL") + "; " +
                    std::to_string(excluded) + " coordinates excluded at ReLU kinks"};
}

// ---------------------------------------------------------------------------
// 4 and 5. end-to-end debiasing and zero-shot retention

struct EndToEnd {
  SynthOutput data;
  ArlChain chain;
};

double majority_share(const EmbeddingSet& set, Attribute a) {
  std::map<int, int> counts;
  int n = 0;
  for (const auto& r : set.records) {
    if (const auto l = r.label(a)) {
      ++counts[*l];
      ++n;
    }
  }
  int best = 0;
  for (const auto& [k, v] : counts) best = std::max(best, v);
  return static_cast<double>(best) / n;
}

Outcome end_to_end(EndToEnd& keep) {
  const auto t0 = std::chrono::steady_clock::now();
  SynthSpec spec;  // N = 5000, d = 64, 7/2/4 labels, bias 1, sigma 0.05
  spec.seed = 0;
  keep.data = generate(spec);
  const SynthOutput& out = keep.data;

  PacTrainConfig pc;
  pc.seed = 0;
  PacModel pac = train_pac(out.set, pc).model;
  pac.freeze();
  const auto baseline = pac_accuracy(pac, out.set, Split::kVal);

  ArlTrainConfig ac;  // lr 5e-4, wd 2e-2, w_recon = w_ent = 1, w_ce = 1e-4, batch 512
  ac.seed = 0;
  ac.epochs = 300;
  ac.early_stop.patience = 30;
  const ArlTrainResult r = train_arl(out.set, pac, ac);
  keep.chain = ArlChain{{r.model}};
  const DebiasResult db = debias_set(keep.chain, out.set);
  const auto after = pac_accuracy(pac, db.debiased, Split::kVal);

  double cos_sum = 0.0;
  for (std::size_t i = 0; i < out.set.records.size(); ++i) {
    cos_sum += cosine_similarity(out.set.records[i].vector, db.debiased.records[i].vector);
  }
  const double mean_cos = cos_sum / static_cast<double>(out.set.records.size());

  const std::vector<Attribute> attrs(kAllAttributes.begin(), kAllAttributes.end());
  const SkewReport before_skew = audit(out.set, out.captions, SkewConfig{}, attrs);
  const SkewReport after_skew = audit(db.debiased, out.captions, SkewConfig{}, attrs);
  const double secs = seconds_since(t0);

  bool pass = secs < 120.0 && mean_cos >= 0.95;
  std::ostringstream d;
  const EmbeddingSet val = out.set.subset(Split::kVal);
  for (std::size_t i = 0; i < baseline.size(); ++i) {
    const Attribute a = baseline[i].first;
    const double chance = majority_share(val, a);
    pass = pass && baseline[i].second >= 0.95 && after[i].second <= chance + 0.10;
    d << attribute_name(a) << " acc " << fmt("%.3f", baseline[i].second) << "->"
      << fmt("%.3f", after[i].second) << " (chance " << fmt("%.3f", chance) << "); ";
  }
  d << "skew ratio";
  for (const auto& b : before_skew.rows) {
    const SkewRow& a = after_skew.row(b.attribute, b.sentiment);
    const double ratio = a.max_skew / b.max_skew;
    pass = pass && b.max_skew > 0.0 && a.max_skew <= 0.5 * b.max_skew;
    d << " " << attribute_name(b.attribute) << (b.sentiment == Sentiment::kPositive ? "+" : "-")
      << fmt("%.2f", ratio);
  }
  d << "; mean cos " << fmt("%.4f", mean_cos) << "; best epoch " << r.best_epoch << "; "
    << fmt("%.1f", secs) << " s";
  return {pass, d.str()};
}

Outcome zeroshot_retention(const EndToEnd& e2e) {
  const ZeroShotTask task = synth_zeroshot_task(e2e.data, e2e.data.set.subset(Split::kTest));
  double overlap = 0.0;
  for (const Matrix& dirs : e2e.data.oracle.planted_directions) {
    overlap = std::max(overlap, (task.prototypes * dirs.transpose()).cwiseAbs().maxCoeff());
  }
  const AccuracyDropReport r = accuracy_drop_report({task}, e2e.chain);
  const bool pass = overlap < 1e-10 && r.mean_drop <= 0.03;
  return {pass, "prototype/planted overlap " + fmt("%.1e", overlap) + ", top-1 " +
                    fmt("%.4f", r.tasks[0].accuracy_before) + " -> " + fmt("%.4f", r.tasks[0].accuracy_after) +
                    ", drop " + fmt("%.2f", 100.0 * r.mean_drop) + " points"};
}

// ---------------------------------------------------------------------------
// 6 and 7. CLI pipelines

int cli(const std::vector<std::string>& args) {
  std::vector<std::string> all = {"resfair"};
  all.insert(all.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : all) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (code != 0) std::fprintf(stderr, "%s", err.str().c_str());
  return code;
}

bool run_pipeline(const fs::path& dir, const std::vector<std::string>& extra,
                  const std::vector<std::string>& commands) {
  for (const auto& c : commands) {
    std::vector<std::string> args = {c, "--config", (dir / "config.json").string()};
    args.insert(args.end(), extra.begin(), extra.end());
    if (cli(args) != 0) return false;
  }
  return true;
}

const char* kPipelineConfig = R"({
  "seed": 0,
  "audit": {"compare_debiased": true},
  "probe": {"repetitions": 10}
})";

Outcome joint_vs_sequential() {
  resfair::testing::TempDir dir("acceptance_modes");
  fs::create_directories(dir / "data");
  write_file(dir / "config.json", kPipelineConfig);
  if (!run_pipeline(dir.path(), {}, {"synth"})) return {false, "synth failed"};
  json comparison = json::object();
  std::ostringstream d;
  for (const std::string mode : {"joint", "sequential"}) {
    const std::vector<std::string> extra = {
        "--set", "mode=" + mode, "--set", "paths.checkpoints=ck_" + mode, "--set",
        "paths.reports=rep_" + mode, "--set", "paths.debiased=data/debiased_" + mode + ".jsonl",
        "--set", "paths.residuals=data/residuals_" + mode + ".rfe"};
    if (!run_pipeline(dir.path(), extra, {"train-pac", "train-arl", "debias", "audit", "zeroshot"})) {
      return {false, mode + " pipeline failed"};
    }
    const json paired = json::parse(read_file(dir / ("rep_" + mode) / "audit_paired.json"));
    const json zs = json::parse(read_file(dir / ("rep_" + mode) / "zeroshot.json"));
    json rows = json::array();
    for (const auto& row : paired["after"]["rows"]) {
      rows.push_back({{"attribute", row["attribute"]}, {"sentiment", row["sentiment"]},
                      {"max_skew", row["max_skew"]}, {"min_skew", row["min_skew"]}});
    }
    comparison[mode] = {{"reconstruction", paired["reconstruction"]},
                        {"skew", rows},
                        {"zeroshot_mean_drop", zs["mean_drop"]}};
    d << mode << ": mean |phi_bar - e| "
      << fmt("%.4f", paired["reconstruction"]["mean_l2"].get<double>()) << ", mean MaxSkew ";
    double sum = 0.0;
    for (const auto& row : rows) sum += row["max_skew"].get<double>();
    d << fmt("%.4f", sum / rows.size()) << ", zero-shot drop "
      << fmt("%.2f", 100.0 * zs["mean_drop"].get<double>()) << " pts; ";
  }
  const bool pass = comparison["joint"]["skew"].size() == 6 && comparison["sequential"]["skew"].size() == 6 &&
                    comparison["joint"]["reconstruction"].contains("mean_l2") &&
                    comparison["sequential"]["reconstruction"].contains("mean_l2");
  return {pass, d.str() + "reports comparable"};
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const std::string name = e.path().filename().string();
    if (name.size() > 14 && name.substr(name.size() - 14) == ".manifest.json") continue;
    out[fs::relative(e.path(), root).string()] = read_file(e.path());
  }
  return out;
}

Outcome determinism() {
  const std::vector<std::string> commands = {"synth", "train-pac", "train-arl", "debias",
                                             "audit", "probe", "zeroshot"};
  std::vector<std::map<std::string, std::string>> runs;
  for (int run = 0; run < 2; ++run) {
    resfair::testing::TempDir dir("acceptance_det" + std::to_string(run));
    fs::create_directories(dir / "data");
    write_file(dir / "config.json", kPipelineConfig);
    if (!run_pipeline(dir.path(), {}, commands)) return {false, "pipeline failed"};
    runs.push_back(snapshot(dir.path()));
  }
  std::size_t differing = 0;
  std::string first;
  for (const auto& [name, bytes] : runs[0]) {
    auto it = runs[1].find(name);
    if (it == runs[1].end() || it->second != bytes) {
      ++differing;
      if (first.empty()) first = name;
    }
  }
  const bool pass = differing == 0 && runs[0].size() == runs[1].size() && runs[0].size() > 20;
  std::string d = std::to_string(runs[0].size()) + " files compared (manifests excluded), " +
                  std::to_string(differing) + " differ";
  if (!first.empty()) d += " (first: " + first + ")";
  return {pass, d};
}

// ---------------------------------------------------------------------------
// 8. unbiased data

Outcome unbiased_skew() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SynthSpec spec;
    spec.seed = seed;
    spec.bias_strength = {0.0, 0.0, 0.0};
    const SynthOutput out = generate(spec);
    const SkewReport r =
        audit(out.set, out.captions, SkewConfig{}, {kAllAttributes.begin(), kAllAttributes.end()});
    for (const auto& row : r.rows) {
      worst = std::max({worst, std::abs(row.max_skew), std::abs(row.min_skew)});
    }
  }
  return {worst < 0.05, "10 seeds, N=5000, max |MaxSkew|,|MinSkew| " + fmt("%.4f", worst)};
}

}  // namespace

int main() {
  struct Criterion {
    int number;
    const char* name;
    std::function<Outcome()> run;
  };
  EndToEnd e2e;
  const std::vector<Criterion> criteria = {
      {1, "probe fidelity", probe_fidelity},
      {2, "skew oracle equivalence", skew_oracle},
      {3, "gradient correctness", gradient_correctness},
      {4, "end-to-end debiasing", [&] { return end_to_end(e2e); }},
      {5, "zero-shot retention", [&] { return zeroshot_retention(e2e); }},
      {6, "joint vs sequential", joint_vs_sequential},
      {7, "determinism", determinism},
      {8, "unbiased skew sanity", unbiased_skew},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::printf("criterion %d %-26s %s  %s\n", c.number, c.name, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
