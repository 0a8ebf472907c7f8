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

#include "resfair/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>

#include "resfair/rng.hpp"

namespace resfair {

namespace {

using json = nlohmann::json;

constexpr std::array<const char*, 10> kSceneNames = {
    "office", "kitchen", "street", "beach", "forest",
    "library", "stadium", "classroom", "hospital", "market"};

constexpr std::array<const char*, 5> kTemplates = {
    "a photo of a {}.", "a picture taken in a {}.", "an image of a {}.",
    "a blurry photo of a {}.", "a close-up photo of a {}."};

std::vector<double> default_proportions(const LabelVocabulary& v) {
  const std::size_t c = v.cardinality();
  if (c == 2) return {0.5, 0.5};
  if (c == 7) return {0.2, 0.15, 0.15, 0.15, 0.12, 0.12, 0.11};
  if (c == 4) return {0.2, 0.35, 0.3, 0.15};
  return std::vector<double>(c, 1.0 / static_cast<double>(c));
}

// Exact per-label counts by largest remainder; ties go to the lower index.
std::vector<std::size_t> allocate(const std::vector<double>& shares, std::size_t n) {
  std::vector<std::size_t> counts(shares.size());
  std::vector<std::pair<double, std::size_t>> rema;
  std::size_t used = 0;
  for (std::size_t i = 0; i < shares.size(); ++i) {
    const double exact = shares[i] * static_cast<double>(n);
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    used += counts[i];
    rema.emplace_back(exact - static_cast<double>(counts[i]), i);
  }
  std::stable_sort(rema.begin(), rema.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; used < n; ++k, ++used) ++counts[rema[k % rema.size()].second];
  return counts;
}

// `counts`-many copies of each index, shuffled.
std::vector<std::uint16_t> assignment(const std::vector<std::size_t>& counts, Rng rng) {
  std::vector<std::uint16_t> out;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    out.insert(out.end(), counts[i], static_cast<std::uint16_t>(i));
  }
  rng.shuffle(std::span<std::uint16_t>(out));
  return out;
}

std::string class_name(std::size_t i) {
  if (i < kSceneNames.size()) return kSceneNames[i];
  char buf[32];
  std::snprintf(buf, sizeof buf, "class_%02zu", i);
  return buf;
}

std::string template_text(std::size_t i) {
  if (i < kTemplates.size()) return kTemplates[i];
  return "a photo of a {} (variant " + std::to_string(i) + ").";
}

std::string fill(const std::string& tmpl, const std::string& word) {
  std::string out = tmpl;
  const auto pos = out.find("{}");
  if (pos != std::string::npos) out.replace(pos, 2, word);
  return out;
}

// Random unit combination of the given basis rows.
Vector random_unit_in(const Matrix& rows, Rng& rng) {
  Vector coeff(rows.rows());
  for (Eigen::Index i = 0; i < coeff.size(); ++i) coeff(i) = rng.normal();
  coeff.normalize();
  return rows.transpose() * coeff;
}

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

template <typename T>
void read_if(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError(std::string("synth: bad value for '") + key + "'");
  }
}

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + " must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw UsageError("unknown key '" + k + "' in " + where);
  }
}

// A number applies to every attribute; an object sets them by name.
void read_per_attribute(const json& j, const char* key,
                        std::array<double, kNumAttributes>& out) {
  if (!j.contains(key)) return;
  const json& v = j[key];
  if (v.is_number()) {
    out.fill(v.get<double>());
    return;
  }
  reject_unknown(v, {"gender", "race", "age"}, std::string("synth.") + key);
  for (const Attribute a : kAllAttributes) {
    read_if(v, std::string(attribute_name(a)).c_str(), out[index_of(a)]);
  }
}

// Weight on the shared direction that puts `rate` of the images at cosine
// >= epsilon with plant * q + weight * mean_dir + spread * w. Bisection on
// the matched fraction, which grows with the weight.
double solve_mean_weight(const Matrix& images, const Vector& norms, const Vector& q,
                         const Vector& mean_dir, const Vector& w, const SynthCaptionSpec& c) {
  const Vector pq = images * q, pm = images * mean_dir, pw = images * w;
  const auto n = static_cast<double>(images.rows());
  auto rate = [&](double a) {
    const Vector t = c.plant * q + a * mean_dir + c.spread * w;
    const double tn = t.norm();
    std::size_t hit = 0;
    for (Eigen::Index i = 0; i < images.rows(); ++i) {
      const double cos = (c.plant * pq(i) + a * pm(i) + c.spread * pw(i)) / (norms(i) * tn);
      if (cos >= c.match_epsilon) ++hit;
    }
    return static_cast<double>(hit) / n;
  };
  double lo = 0.0, hi = 1.0;
  for (int i = 0; i < 60 && rate(hi) < c.match_rate; ++i) hi *= 2.0;
  for (int i = 0; i < 100; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (rate(mid) < c.match_rate) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return hi;
}

Matrix matrix_from_json(const json& j) {
  const std::size_t rows = j.size();
  const std::size_t cols = rows == 0 ? 0 : j.at(0).size();
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows; ++r) {
    if (j.at(r).size() != cols) throw ValidationError("oracle: ragged matrix");
    for (std::size_t c = 0; c < cols; ++c) {
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j.at(r).at(c).get<double>();
    }
  }
  return m;
}

json matrix_to_json(const Matrix& m) {
  json out = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace

std::size_t SynthSpec::rank_of(std::size_t vocabulary) const {
  const std::size_t c = vocabularies.at(vocabulary).cardinality();
  const std::size_t k = planted_rank[index_of(vocabularies[vocabulary].attribute)];
  return k == 0 || k >= c ? c : k;
}

std::size_t SynthSpec::planted_dim() const {
  std::size_t p = 0;
  for (std::size_t v = 0; v < vocabularies.size(); ++v) p += rank_of(v);
  return p;
}

void SynthSpec::validate() const {
  if (d == 0) throw ValidationError("synth: d must be positive");
  if (counts.total() == 0) throw ValidationError("synth: at least one record is required");
  std::set<Attribute> seen;
  for (const auto& v : vocabularies) {
    if (!seen.insert(v.attribute).second) throw ValidationError("synth: duplicate vocabulary");
  }
  for (std::size_t v = 0; v < vocabularies.size(); ++v) {
    const std::size_t k = rank_of(v);
    if (k > 2 && k < vocabularies[v].cardinality()) {
      throw ValidationError("synth: planted rank must be 1, 2 or the label count");
    }
  }
  const std::size_t planted = planted_dim();
  const std::size_t min_context = 2 + zeroshot_classes;  // mean, classes, one free
  const std::size_t ctx = context_dim == 0 ? (d > planted ? d - planted : 0) : context_dim;
  if (ctx < min_context || ctx + planted > d) {
    throw ValidationError("synth: infeasible dimensions (d=" + std::to_string(d) +
                          ", planted=" + std::to_string(planted) + ", context=" +
                          std::to_string(ctx) + ", need context >= " +
                          std::to_string(min_context) + ")");
  }
  if (!proportions.empty()) {
    if (proportions.size() != vocabularies.size()) {
      throw ValidationError("synth: one proportion list per vocabulary is required");
    }
    for (std::size_t i = 0; i < proportions.size(); ++i) {
      if (proportions[i].size() != vocabularies[i].cardinality()) {
        throw ValidationError("synth: proportion count does not match vocabulary");
      }
      double sum = 0.0;
      for (double p : proportions[i]) {
        if (!(p >= 0.0)) throw ValidationError("synth: negative proportion");
        sum += p;
      }
      if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("synth: proportions must sum to 1");
    }
  }
  auto non_negative = [](double v) { return std::isfinite(v) && v >= 0.0; };
  for (double b : bias_strength) {
    if (!non_negative(b)) throw ValidationError("synth: bias strength must be non-negative");
  }
  for (double p : plant_scale) {
    if (!non_negative(p)) throw ValidationError("synth: plant scale must be non-negative");
  }
  if (!(captions.match_rate > 0.0 && captions.match_rate < 1.0) ||
      !(std::abs(captions.match_epsilon) < 1.0)) {
    throw ValidationError("synth: caption match rate must be in (0, 1) and epsilon in (-1, 1)");
  }
  if (!non_negative(context_mean) ||
      !non_negative(context_spread) || !non_negative(class_scale) ||
      !non_negative(noise_sigma) || !non_negative(prompt_jitter) ||
      !non_negative(captions.plant) || !non_negative(captions.spread)) {
    throw ValidationError("synth: scales must be finite and non-negative");
  }
  if (zeroshot_classes == 0 || prompt_templates == 0 || captions.per_label == 0) {
    throw ValidationError("synth: class, template and caption counts must be positive");
  }
}

SynthSpec synth_spec_from_json(const json& j, SynthSpec base) {
  reject_unknown(j,
                 {"d", "counts", "proportions", "bias_strength", "plant_scale", "planted_rank", "center_offsets",
                  "context_dim",
                  "context_mean", "context_spread", "zeroshot_classes", "class_scale",
                  "noise_sigma", "captions", "prompt_templates", "prompt_jitter"},
                 "synth");
  SynthSpec s = std::move(base);
  read_if(j, "d", s.d);
  if (j.contains("counts")) {
    const json& c = j["counts"];
    reject_unknown(c, {"train", "val", "test"}, "synth.counts");
    read_if(c, "train", s.counts.train);
    read_if(c, "val", s.counts.val);
    read_if(c, "test", s.counts.test);
  }
  if (j.contains("proportions")) {
    const json& p = j["proportions"];
    if (!p.is_object()) throw ValidationError("synth.proportions must map attribute to shares");
    s.proportions.clear();
    for (const auto& v : s.vocabularies) {
      const std::string name(attribute_name(v.attribute));
      s.proportions.push_back(p.contains(name) ? p[name].get<std::vector<double>>()
                                               : default_proportions(v));
    }
  }
  read_per_attribute(j, "bias_strength", s.bias_strength);
  read_per_attribute(j, "plant_scale", s.plant_scale);
  if (j.contains("planted_rank")) {
    std::array<double, kNumAttributes> ranks{};
    for (std::size_t i = 0; i < kNumAttributes; ++i) ranks[i] = static_cast<double>(s.planted_rank[i]);
    read_per_attribute(j, "planted_rank", ranks);
    for (std::size_t i = 0; i < kNumAttributes; ++i) {
      if (ranks[i] < 0.0 || ranks[i] != std::floor(ranks[i])) {
        throw ValidationError("synth: planted rank must be a non-negative integer");
      }
      s.planted_rank[i] = static_cast<std::size_t>(ranks[i]);
    }
  }
  read_if(j, "center_offsets", s.center_offsets);
  read_if(j, "context_dim", s.context_dim);
  read_if(j, "context_mean", s.context_mean);
  read_if(j, "context_spread", s.context_spread);
  read_if(j, "zeroshot_classes", s.zeroshot_classes);
  read_if(j, "class_scale", s.class_scale);
  read_if(j, "noise_sigma", s.noise_sigma);
  if (j.contains("captions")) {
    const json& c = j["captions"];
    reject_unknown(c, {"per_label", "plant", "spread", "match_rate", "match_epsilon"},
                   "synth.captions");
    read_if(c, "per_label", s.captions.per_label);
    read_if(c, "plant", s.captions.plant);
    read_if(c, "spread", s.captions.spread);
    read_if(c, "match_rate", s.captions.match_rate);
    read_if(c, "match_epsilon", s.captions.match_epsilon);
  }
  read_if(j, "prompt_templates", s.prompt_templates);
  read_if(j, "prompt_jitter", s.prompt_jitter);
  s.validate();
  return s;
}

json synth_spec_to_json(const SynthSpec& s) {
  json bias = json::object(), plant = json::object(), rank = json::object();
  for (const Attribute a : kAllAttributes) {
    bias[std::string(attribute_name(a))] = s.bias_strength[index_of(a)];
    plant[std::string(attribute_name(a))] = s.plant_scale[index_of(a)];
    rank[std::string(attribute_name(a))] = s.planted_rank[index_of(a)];
  }
  json j = {{"d", s.d},
            {"counts", {{"train", s.counts.train}, {"val", s.counts.val}, {"test", s.counts.test}}},
            {"bias_strength", bias},
            {"plant_scale", plant},
            {"planted_rank", rank},
            {"center_offsets", s.center_offsets},
            {"context_dim", s.context_dim},
            {"context_mean", s.context_mean},
            {"context_spread", s.context_spread},
            {"zeroshot_classes", s.zeroshot_classes},
            {"class_scale", s.class_scale},
            {"noise_sigma", s.noise_sigma},
            {"captions",
             {{"per_label", s.captions.per_label},
              {"plant", s.captions.plant},
              {"spread", s.captions.spread},
              {"match_rate", s.captions.match_rate},
              {"match_epsilon", s.captions.match_epsilon}}},
            {"prompt_templates", s.prompt_templates},
            {"prompt_jitter", s.prompt_jitter}};
  if (!s.proportions.empty()) {
    json p = json::object();
    for (std::size_t i = 0; i < s.vocabularies.size(); ++i) {
      p[std::string(attribute_name(s.vocabularies[i].attribute))] = s.proportions[i];
    }
    j["proportions"] = p;
  }
  return j;
}

std::size_t SynthOracle::vocabulary_index(Attribute a) const {
  for (std::size_t i = 0; i < vocabularies.size(); ++i) {
    if (vocabularies[i].attribute == a) return i;
  }
  throw ValidationError("oracle: no planted map for attribute '" +
                        std::string(attribute_name(a)) + "'");
}

SynthOutput generate(const SynthSpec& spec) {
  spec.validate();
  const Rng root(spec.seed);
  const auto d = static_cast<Eigen::Index>(spec.d);
  const std::size_t planted = spec.planted_dim();
  const std::size_t ctx_dim = spec.context_dim == 0 ? spec.d - planted : spec.context_dim;
  const std::size_t classes = spec.zeroshot_classes;
  const std::size_t free_dim = ctx_dim - 1 - classes;

  // Orthonormal basis from QR of a seeded Gaussian matrix; columns are used
  // in block order: planted, mean, classes, free, then unused.
  Eigen::MatrixXd gauss(d, d);
  {
    Rng rng = root.derive(1);
    for (Eigen::Index r = 0; r < d; ++r) {
      for (Eigen::Index c = 0; c < d; ++c) gauss(r, c) = rng.normal();
    }
  }
  const Eigen::MatrixXd q =
      Eigen::HouseholderQR<Eigen::MatrixXd>(gauss).householderQ() * Eigen::MatrixXd::Identity(d, d);
  auto column = [&](std::size_t i) -> Vector { return q.col(static_cast<Eigen::Index>(i)); };

  SynthOutput out;
  SynthOracle& oracle = out.oracle;
  oracle.d = spec.d;
  oracle.vocabularies = spec.vocabularies;
  std::size_t next = 0;
  // Unit-scale offsets per vocabulary; captions lean along their rows.
  std::vector<Matrix> shapes;
  for (std::size_t vi = 0; vi < spec.vocabularies.size(); ++vi) {
    const LabelVocabulary& v = spec.vocabularies[vi];
    const auto c = static_cast<Eigen::Index>(v.cardinality());
    const auto k = static_cast<Eigen::Index>(spec.rank_of(vi));
    Matrix dirs(k, d);
    for (Eigen::Index l = 0; l < k; ++l) dirs.row(l) = column(next++).transpose();
    oracle.planted_directions.push_back(dirs);
    Matrix coeff = Matrix::Zero(c, k);
    if (k == c) {
      coeff.setIdentity();
      if (spec.center_offsets) coeff.rowwise() -= coeff.colwise().mean();
    } else if (k == 1) {
      const double half = 0.5 * static_cast<double>(c - 1);
      for (Eigen::Index l = 0; l < c; ++l) coeff(l, 0) = (static_cast<double>(l) - half) / half;
    } else {
      for (Eigen::Index l = 0; l < c; ++l) {
        const double angle = 2.0 * M_PI * static_cast<double>(l) / static_cast<double>(c);
        coeff(l, 0) = std::cos(angle);
        coeff(l, 1) = std::sin(angle);
      }
    }
    shapes.push_back(coeff * dirs);
    oracle.planted_maps.push_back(shapes.back() * (spec.bias_strength[index_of(v.attribute)] *
                                                   spec.plant_scale[index_of(v.attribute)]));
  }
  oracle.context_basis.resize(static_cast<Eigen::Index>(ctx_dim), d);
  for (std::size_t i = 0; i < ctx_dim; ++i) {
    oracle.context_basis.row(static_cast<Eigen::Index>(i)) = column(planted + i).transpose();
  }
  const Vector mean_dir = column(planted);
  auto class_dir = [&](std::size_t c) { return column(planted + 1 + c); };
  Matrix free_rows(static_cast<Eigen::Index>(free_dim), d);
  for (std::size_t i = 0; i < free_dim; ++i) {
    free_rows.row(static_cast<Eigen::Index>(i)) = column(planted + 1 + classes + i).transpose();
  }

  // Labels: exact shares, independently shuffled per attribute.
  const std::size_t n = spec.counts.total();
  std::vector<std::vector<std::uint16_t>> labels;
  for (std::size_t v = 0; v < spec.vocabularies.size(); ++v) {
    const auto shares = spec.proportions.empty() ? default_proportions(spec.vocabularies[v])
                                                 : spec.proportions[v];
    labels.push_back(assignment(allocate(shares, n), root.derive(16 + v)));
  }
  const std::vector<std::uint16_t> scene =
      assignment(allocate(std::vector<double>(classes, 1.0 / static_cast<double>(classes)), n),
                 root.derive(15));

  EmbeddingSet& set = out.set;
  set.d = spec.d;
  set.vocabularies = spec.vocabularies;
  set.source_tag = "synth";
  set.records.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = root.derive(0x100000 + i);
    Vector e = spec.context_mean * mean_dir + spec.class_scale * class_dir(scene[i]);
    for (std::size_t f = 0; f < free_dim; ++f) {
      e += (spec.context_spread * rng.normal()) * free_rows.row(static_cast<Eigen::Index>(f)).transpose();
    }
    EmbeddingRecord& r = set.records[i];
    for (std::size_t v = 0; v < spec.vocabularies.size(); ++v) {
      const std::uint16_t l = labels[v][i];
      e += oracle.planted_maps[v].row(l).transpose();
      r.labels[index_of(spec.vocabularies[v].attribute)] = l;
    }
    for (Eigen::Index k = 0; k < d; ++k) e(k) += spec.noise_sigma * rng.normal();
    char id[32];
    std::snprintf(id, sizeof id, "img_%06zu", i);
    r.id = id;
    r.vector = to_std(e);
    r.scene = class_name(scene[i]);
    r.split = i < spec.counts.train                    ? Split::kTrain
              : i < spec.counts.train + spec.counts.val ? Split::kVal
                                                        : Split::kTest;
  }

  {
    Rng rng = root.derive(2);
    const Matrix images = set.matrix();
    const Vector norms = images.rowwise().norm();
    for (std::size_t v = 0; v < spec.vocabularies.size(); ++v) {
      const LabelVocabulary& vocab = spec.vocabularies[v];
      const std::string attr(attribute_name(vocab.attribute));
      for (const Sentiment s : {Sentiment::kPositive, Sentiment::kNegative}) {
        const std::string sent(sentiment_name(s));
        for (std::size_t l = 0; l < vocab.cardinality(); ++l) {
          for (std::size_t j = 0; j < spec.captions.per_label; ++j) {
            const Vector q_l = shapes[v].row(static_cast<Eigen::Index>(l)).normalized().transpose();
            const Vector w = random_unit_in(free_rows, rng);
            const double a = solve_mean_weight(images, norms, q_l, mean_dir, w, spec.captions);
            Vector t = spec.captions.plant * q_l + a * mean_dir + spec.captions.spread * w;
            CaptionRecord c;
            c.id = "cap_" + attr + "_" + sent + "_" + vocab.labels[l] + "_" + std::to_string(j);
            c.text = "synthetic " + sent + " caption " + std::to_string(j) + " for " + attr +
                     "=" + vocab.labels[l];
            c.vector = to_std(t);
            c.attribute = vocab.attribute;
            c.sentiment = s;
            out.captions.push_back(std::move(c));
            if (j == 0) {
              oracle.caption_directions[{vocab.attribute, static_cast<std::uint16_t>(l), s}] =
                  to_std(t.normalized());
            }
          }
        }
      }
    }
  }

  {
    Rng rng = root.derive(3);
    for (std::size_t c = 0; c < classes; ++c) out.zeroshot_classes.push_back(class_name(c));
    for (std::size_t t = 0; t < spec.prompt_templates; ++t) {
      out.zeroshot_templates.push_back(template_text(t));
    }
    for (std::size_t c = 0; c < classes; ++c) {
      for (std::size_t t = 0; t < spec.prompt_templates; ++t) {
        const Vector v = spec.class_scale * class_dir(c) + spec.context_mean * 0.1 * mean_dir +
                         spec.prompt_jitter * random_unit_in(free_rows, rng);
        out.prompts.push_back({out.zeroshot_classes[c], out.zeroshot_templates[t],
                               fill(out.zeroshot_templates[t], out.zeroshot_classes[c]),
                               to_std(v)});
      }
    }
  }
  return out;
}

double max_cross_dot(const SynthOracle& oracle) {
  std::vector<Vector> dirs;
  for (const auto& m : oracle.planted_directions) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) dirs.push_back(m.row(r).transpose());
  }
  const std::size_t planted = dirs.size();
  double worst = 0.0;
  for (std::size_t i = 0; i < planted; ++i) {
    for (std::size_t j = i + 1; j < planted; ++j) worst = std::max(worst, std::abs(dirs[i].dot(dirs[j])));
    for (Eigen::Index c = 0; c < oracle.context_basis.rows(); ++c) {
      worst = std::max(worst, std::abs(oracle.context_basis.row(c).dot(dirs[i].transpose())));
    }
  }
  return worst;
}

std::vector<OracleAccuracy> oracle_probe(const EmbeddingSet& set, const SynthOracle& oracle) {
  if (set.d != oracle.d) {
    throw ValidationError("oracle: dimension mismatch (" + std::to_string(set.d) + " vs " +
                          std::to_string(oracle.d) + ")");
  }
  std::vector<OracleAccuracy> out;
  for (std::size_t v = 0; v < oracle.vocabularies.size(); ++v) {
    const Attribute a = oracle.vocabularies[v].attribute;
    const LabelVocabulary* sv = set.vocabulary(a);
    if (sv == nullptr || sv->labels != oracle.vocabularies[v].labels) {
      throw ValidationError("oracle: vocabulary mismatch for '" +
                            std::string(attribute_name(a)) + "'");
    }
    const Matrix& dirs = oracle.planted_directions[v];
    const Matrix target = oracle.planted_maps[v] * dirs.transpose();  // offsets in plane coords
    OracleAccuracy acc;
    acc.attribute = a;
    std::size_t correct = 0;
    for (const auto& r : set.records) {
      const auto label = r.label(a);
      if (!label) continue;
      ++acc.evaluated;
      const Vector e = Eigen::Map<const Vector>(r.vector.data(), static_cast<Eigen::Index>(r.vector.size()));
      const Vector coords = dirs * e;
      std::size_t best = 0;
      double best_dist = 0.0;
      for (Eigen::Index l = 0; l < target.rows(); ++l) {
        const double dist = (coords - target.row(l).transpose()).squaredNorm();
        if (l == 0 || dist < best_dist) {
          best_dist = dist;
          best = static_cast<std::size_t>(l);
        }
      }
      if (best == *label) ++correct;
    }
    acc.accuracy = acc.evaluated == 0 ? 0.0
                                      : static_cast<double>(correct) / static_cast<double>(acc.evaluated);
    out.push_back(acc);
  }
  return out;
}

json oracle_to_json(const SynthOracle& oracle) {
  json maps = json::object(), dirs = json::object(), vocabs = json::object();
  for (std::size_t v = 0; v < oracle.vocabularies.size(); ++v) {
    const std::string name(attribute_name(oracle.vocabularies[v].attribute));
    vocabs[name] = oracle.vocabularies[v].labels;
    maps[name] = matrix_to_json(oracle.planted_maps[v]);
    dirs[name] = matrix_to_json(oracle.planted_directions[v]);
  }
  json captions = json::array();
  for (const auto& [key, vec] : oracle.caption_directions) {
    const auto& [a, l, s] = key;
    captions.push_back({{"attribute", attribute_name(a)},
                        {"label", oracle.vocabularies[oracle.vocabulary_index(a)].labels[l]},
                        {"sentiment", sentiment_name(s)},
                        {"vector", vec}});
  }
  return {{"d", oracle.d},
          {"vocabularies", vocabs},
          {"planted_maps", maps},
          {"planted_directions", dirs},
          {"context_basis", matrix_to_json(oracle.context_basis)},
          {"caption_directions", captions}};
}

SynthOracle oracle_from_json(const json& j) {
  try {
    SynthOracle o;
    o.d = j.at("d").get<std::size_t>();
    for (const Attribute a : kAllAttributes) {
      const std::string name(attribute_name(a));
      if (!j.at("vocabularies").contains(name)) continue;
      o.vocabularies.push_back(
          LabelVocabulary::make(a, j["vocabularies"][name].get<std::vector<std::string>>()));
      o.planted_maps.push_back(matrix_from_json(j.at("planted_maps").at(name)));
      o.planted_directions.push_back(matrix_from_json(j.at("planted_directions").at(name)));
    }
    o.context_basis = matrix_from_json(j.at("context_basis"));
    for (const auto& c : j.at("caption_directions")) {
      const Attribute a = parse_attribute(c.at("attribute").get<std::string>());
      const auto idx = o.vocabularies[o.vocabulary_index(a)].index_of(c.at("label").get<std::string>());
      if (!idx) throw ValidationError("oracle: unknown caption label");
      o.caption_directions[{a, *idx, parse_sentiment(c.at("sentiment").get<std::string>())}] =
          c.at("vector").get<std::vector<double>>();
    }
    return o;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("oracle: ") + e.what());
  }
}

ZeroShotTask synth_zeroshot_task(const SynthOutput& out, const EmbeddingSet& eval) {
  ZeroShotTask task;
  task.name = "synth_scenes";
  task.classes = out.zeroshot_classes;
  task.templates = out.zeroshot_templates;
  task.prototypes = build_prototypes(task.classes, task.templates, out.prompts);
  task.eval = eval;
  task.labels = labels_for(task, eval);
  return task;
}

std::vector<ProbePair> LinearPairSource::sample(Rng& rng) const {
  std::vector<ProbePair> pairs(count);
  for (auto& p : pairs) {
    p.image_diff.resize(k_star.cols());
    for (Eigen::Index i = 0; i < p.image_diff.size(); ++i) p.image_diff(i) = rng.normal();
    p.text_diff = k_star * p.image_diff + intercept;
  }
  return pairs;
}

LinearPairSource make_linear_pair_source(std::size_t d, std::size_t count, std::uint64_t seed,
                                         bool with_intercept) {
  if (d == 0) throw ValidationError("probe source: d must be positive");
  Rng rng = Rng(seed).derive(7);
  LinearPairSource s;
  s.count = count;
  const auto n = static_cast<Eigen::Index>(d);
  s.k_star.resize(n, n);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  for (Eigen::Index i = 0; i < s.k_star.size(); ++i) s.k_star.data()[i] = scale * rng.normal();
  s.intercept = Vector::Zero(n);
  if (with_intercept) {
    for (Eigen::Index i = 0; i < n; ++i) s.intercept(i) = 0.1 * rng.normal();
  }
  return s;
}

}  // namespace resfair
