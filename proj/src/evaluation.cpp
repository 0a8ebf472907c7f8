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

#include "resfair/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "json.hpp"
#include "text_format.hpp"

namespace resfair {

namespace {

using internal::fmt;
using internal::lpad;
using internal::pad;
using json = nlohmann::json;

double relative_mse(const ProbeModel& m, const std::vector<ProbePair>& pairs,
                    const std::vector<std::size_t>& idx) {
  double num = 0.0, den = 0.0;
  for (std::size_t i : idx) {
    num += (m.predict(pairs[i].image_diff) - pairs[i].text_diff).squaredNorm();
    den += pairs[i].text_diff.squaredNorm();
  }
  return den == 0.0 ? 0.0 : num / den;
}

Vector to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<double> parse_vector(const json& j, const std::string& context) {
  if (!j.is_array()) throw ValidationError(context + ": expected a numeric array");
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& x : j) {
    if (!x.is_number()) throw ValidationError(context + ": non-numeric vector entry");
    out.push_back(x.get<double>());
  }
  return out;
}

// Visits each non-empty line as parsed JSON.
template <typename Fn>
void for_each_json_line(const std::filesystem::path& path, Fn&& fn) {
  const std::string text = read_file(path);
  std::size_t line_no = 0, pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    ++line_no;
    const std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      if (end == text.size()) break;
      continue;
    }
    const std::string context = path.string() + ":" + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ValidationError(context + ": " + e.what());
    }
    fn(j, context);
    if (end == text.size()) break;
  }
}

std::string required_string(const json& j, const char* key, const std::string& context) {
  if (!j.contains(key) || !j[key].is_string()) {
    throw ValidationError(context + ": missing string field '" + key + "'");
  }
  return j[key].get<std::string>();
}

std::vector<std::size_t> ranked_classes(const Matrix& prototypes, const Vector& x) {
  const Normalized u = l2_normalize(x);
  if (u.degenerate) throw ValidationError("zero-shot: zero-norm embedding");
  const Vector scores = prototypes * u.value;
  std::vector<std::size_t> order(static_cast<std::size_t>(scores.size()));
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores(static_cast<Eigen::Index>(a)) > scores(static_cast<Eigen::Index>(b));
  });
  return order;
}

}  // namespace

Vector ProbeModel::predict(const Vector& image_diff) const {
  return k * image_diff + intercept;
}

ProbeModel fit_probe(const std::vector<ProbePair>& pairs, const ProbeOptions& options) {
  if (pairs.empty()) throw ValidationError("probe: no pairs");
  if (!(options.ridge >= 0.0)) throw ValidationError("probe: ridge must be non-negative");
  if (!(options.holdout_fraction >= 0.0 && options.holdout_fraction < 1.0)) {
    throw ValidationError("probe: holdout fraction must be in [0, 1)");
  }
  const auto p = pairs.front().image_diff.size();
  const auto q = pairs.front().text_diff.size();
  bool any_nonzero = false;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (pairs[i].image_diff.size() != p || pairs[i].text_diff.size() != q) {
      throw ValidationError("probe: pair " + std::to_string(i) + " has inconsistent dimensions");
    }
    if (!all_finite(pairs[i].image_diff) || !all_finite(pairs[i].text_diff)) {
      throw ValidationError("probe: pair " + std::to_string(i) + " is not finite");
    }
    any_nonzero = any_nonzero || pairs[i].image_diff.squaredNorm() > 0.0;
  }
  if (!any_nonzero) throw ValidationError("probe: degenerate input (all image differences are zero)");

  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t holdout = 0;
  if (pairs.size() >= 5 && options.holdout_fraction > 0.0) {
    holdout = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(options.holdout_fraction *
                                                 static_cast<double>(pairs.size()))));
    Rng rng(options.seed);
    rng.shuffle(std::span<std::size_t>(order));
  }
  const std::vector<std::size_t> train(order.begin(), order.end() - static_cast<long>(holdout));
  const std::vector<std::size_t> test(order.end() - static_cast<long>(holdout), order.end());

  Matrix x(static_cast<Eigen::Index>(train.size()), p + 1);
  Matrix y(static_cast<Eigen::Index>(train.size()), q);
  for (std::size_t r = 0; r < train.size(); ++r) {
    const auto row = static_cast<Eigen::Index>(r);
    x.row(row).head(p) = pairs[train[r]].image_diff.transpose();
    x(row, p) = 1.0;
    y.row(row) = pairs[train[r]].text_diff.transpose();
  }
  Eigen::MatrixXd gram = x.transpose() * x;
  gram.diagonal().head(p).array() += options.ridge;  // intercept unpenalized
  const Eigen::MatrixXd rhs = x.transpose() * y;
  const Eigen::MatrixXd w = gram.ldlt().solve(rhs);
  if (!w.allFinite()) throw NumericalError("probe: normal equations are singular");

  ProbeModel m;
  m.k = w.topRows(p).transpose();
  m.intercept = w.row(p).transpose();
  m.train_count = train.size();
  m.holdout_count = test.size();
  m.train_relative_mse = relative_mse(m, pairs, train);
  m.relative_mse = test.empty() ? m.train_relative_mse : relative_mse(m, pairs, test);
  return m;
}

ProbeSummary repeat_probe(const PairSampler& sampler, std::size_t repetitions,
                          std::uint64_t seed, const ProbeOptions& options) {
  if (repetitions == 0) throw ValidationError("probe: repetitions must be positive");
  ProbeSummary s;
  const Rng root(seed);
  double sum = 0.0;
  for (std::size_t i = 0; i < repetitions; ++i) {
    Rng sample_rng = root.derive(2 * i);
    const std::vector<ProbePair> pairs = sampler(sample_rng);
    ProbeOptions opts = options;
    opts.seed = root.derive(2 * i + 1).next_u64();
    ProbeModel m = fit_probe(pairs, opts);
    s.per_repetition.push_back(m.relative_mse);
    s.max_relative_mse = i == 0 ? m.relative_mse : std::max(s.max_relative_mse, m.relative_mse);
    sum += m.relative_mse;
    s.models.push_back(std::move(m));
  }
  s.mean_relative_mse = sum / static_cast<double>(repetitions);
  return s;
}

std::vector<ProbePair> load_probe_pairs(const std::filesystem::path& path) {
  std::vector<ProbePair> out;
  for_each_json_line(path, [&](const json& j, const std::string& context) {
    if (!j.contains("image_diff") || !j.contains("text_diff")) {
      throw ValidationError(context + ": expected 'image_diff' and 'text_diff'");
    }
    out.push_back({to_vector(parse_vector(j["image_diff"], context)),
                   to_vector(parse_vector(j["text_diff"], context))});
  });
  return out;
}

std::string probe_summary_to_json(const ProbeSummary& summary) {
  json j = {{"repetitions", summary.per_repetition.size()},
            {"max_relative_mse", summary.max_relative_mse},
            {"mean_relative_mse", summary.mean_relative_mse},
            {"per_repetition", summary.per_repetition}};
  if (!summary.models.empty()) {
    j["train_count"] = summary.models.front().train_count;
    j["holdout_count"] = summary.models.front().holdout_count;
  }
  return j.dump(2) + "\n";
}

std::optional<std::size_t> ZeroShotTask::class_index(std::string_view name) const {
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i] == name) return i;
  }
  return std::nullopt;
}

Matrix build_prototypes(const std::vector<std::string>& classes,
                        const std::vector<std::string>& templates,
                        const std::vector<PromptEmbedding>& prompts) {
  if (classes.empty()) throw ValidationError("zero-shot: no classes");
  if (templates.empty()) throw ValidationError("zero-shot: at least one template is required");
  std::map<std::pair<std::string, std::string>, const PromptEmbedding*> index;
  for (const auto& p : prompts) index[{p.class_name, p.template_text}] = &p;
  std::size_t d = 0;
  Matrix out;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    Vector sum;
    for (const auto& t : templates) {
      auto it = index.find({classes[c], t});
      if (it == index.end()) {
        throw ValidationError("zero-shot: missing prompt embedding for class '" + classes[c] +
                              "' and template '" + t + "'");
      }
      const std::vector<double>& v = it->second->vector;
      if (d == 0) {
        d = v.size();
        if (d == 0) throw ValidationError("zero-shot: empty prompt vector");
        out.resize(static_cast<Eigen::Index>(classes.size()), static_cast<Eigen::Index>(d));
      }
      if (v.size() != d) throw ValidationError("zero-shot: prompt dimension mismatch");
      const Normalized u = l2_normalize(to_vector(v));
      if (u.degenerate) throw ValidationError("zero-shot: zero-norm prompt vector");
      if (sum.size() == 0) {
        sum = u.value;
      } else {
        sum += u.value;
      }
    }
    sum /= static_cast<double>(templates.size());
    const Normalized proto = l2_normalize(sum);
    if (proto.degenerate) {
      throw ValidationError("zero-shot: prototype for class '" + classes[c] + "' is zero");
    }
    out.row(static_cast<Eigen::Index>(c)) = proto.value.transpose();
  }
  return out;
}

std::vector<PromptEmbedding> load_prompt_embeddings(const std::filesystem::path& path) {
  std::vector<PromptEmbedding> out;
  for_each_json_line(path, [&](const json& j, const std::string& context) {
    PromptEmbedding p;
    p.class_name = required_string(j, "class", context);
    p.template_text = required_string(j, "template", context);
    p.text = j.contains("text") && j["text"].is_string() ? j["text"].get<std::string>()
                                                         : std::string();
    if (!j.contains("vector")) throw ValidationError(context + ": missing 'vector'");
    p.vector = parse_vector(j["vector"], context);
    out.push_back(std::move(p));
  });
  return out;
}

ZeroShotTask load_zeroshot_task(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  const std::string context = path.string();
  if (!j.is_object()) throw ValidationError(context + ": task file must be a JSON object");
  const std::filesystem::path base = path.parent_path();
  auto resolve = [&](const char* key) {
    const std::filesystem::path p = required_string(j, key, context);
    return p.is_absolute() ? p : base / p;
  };
  ZeroShotTask task;
  task.name = j.contains("name") && j["name"].is_string() ? j["name"].get<std::string>()
                                                          : path.stem().string();
  if (!j.contains("classes") || !j["classes"].is_array() || !j.contains("templates") ||
      !j["templates"].is_array()) {
    throw ValidationError(context + ": 'classes' and 'templates' arrays are required");
  }
  try {
    task.classes = j["classes"].get<std::vector<std::string>>();
    task.templates = j["templates"].get<std::vector<std::string>>();
  } catch (const json::exception&) {
    throw ValidationError(context + ": 'classes' and 'templates' must hold strings");
  }
  if (std::set<std::string>(task.classes.begin(), task.classes.end()).size() !=
      task.classes.size()) {
    throw ValidationError(context + ": duplicate class names");
  }
  task.prototypes = build_prototypes(task.classes, task.templates,
                                     load_prompt_embeddings(resolve("prompt_embeddings")));
  task.eval = load_embeddings(resolve("eval_embeddings"));
  if (task.eval.d != task.d()) {
    throw ValidationError(context + ": prototype dimension " + std::to_string(task.d()) +
                          " does not match evaluation embeddings " +
                          std::to_string(task.eval.d));
  }
  if (j.contains("eval_labels")) {
    std::map<std::string, std::size_t> by_id;
    for_each_json_line(resolve("eval_labels"), [&](const json& l, const std::string& c) {
      const std::string cls = required_string(l, "class", c);
      const auto idx = task.class_index(cls);
      if (!idx) throw ValidationError(c + ": unknown class '" + cls + "'");
      by_id[required_string(l, "id", c)] = *idx;
    });
    for (const auto& r : task.eval.records) {
      auto it = by_id.find(r.id);
      task.labels.push_back(it == by_id.end() ? std::nullopt
                                              : std::optional<std::size_t>(it->second));
    }
  } else {
    task.labels = labels_for(task, task.eval);
  }
  return task;
}

std::vector<std::optional<std::size_t>> labels_for(const ZeroShotTask& task,
                                                   const EmbeddingSet& eval) {
  if (task.labels.size() == eval.records.size() && task.eval.records.size() == eval.records.size()) {
    bool same = true;
    for (std::size_t i = 0; same && i < eval.records.size(); ++i) {
      same = eval.records[i].id == task.eval.records[i].id;
    }
    if (same) return task.labels;
  }
  std::vector<std::optional<std::size_t>> out;
  out.reserve(eval.records.size());
  for (const auto& r : eval.records) {
    out.push_back(r.scene ? task.class_index(*r.scene) : std::nullopt);
  }
  return out;
}

ZeroShotResult zeroshot_classify(const ZeroShotTask& task, const EmbeddingSet& embeddings,
                                 std::size_t top_k) {
  if (embeddings.d != task.d()) {
    throw ValidationError("zero-shot: embedding dimension " + std::to_string(embeddings.d) +
                          " does not match prototypes " + std::to_string(task.d()));
  }
  const auto labels = labels_for(task, embeddings);
  ZeroShotResult out;
  out.k = std::max<std::size_t>(1, std::min(top_k, task.classes.size()));
  std::size_t hit1 = 0, hitk = 0;
  for (std::size_t i = 0; i < embeddings.records.size(); ++i) {
    const std::vector<std::size_t> ranked =
        ranked_classes(task.prototypes, to_vector(embeddings.records[i].vector));
    out.predictions.push_back(ranked.front());
    if (!labels[i]) continue;
    ++out.evaluated;
    if (ranked.front() == *labels[i]) ++hit1;
    if (std::find(ranked.begin(), ranked.begin() + static_cast<long>(out.k), *labels[i]) !=
        ranked.begin() + static_cast<long>(out.k)) {
      ++hitk;
    }
  }
  if (out.evaluated == 0) throw ValidationError("zero-shot: missing class labels");
  out.top1 = static_cast<double>(hit1) / static_cast<double>(out.evaluated);
  out.topk = static_cast<double>(hitk) / static_cast<double>(out.evaluated);
  return out;
}

ClassErrorReport compare_class_errors(const ZeroShotTask& task, const EmbeddingSet& base,
                                      const EmbeddingSet& debiased) {
  if (base.records.size() != debiased.records.size()) {
    throw ValidationError("class errors: record count mismatch (" +
                          std::to_string(base.records.size()) + " vs " +
                          std::to_string(debiased.records.size()) + ")");
  }
  for (std::size_t i = 0; i < base.records.size(); ++i) {
    if (base.records[i].id != debiased.records[i].id) {
      throw ValidationError("class errors: record mismatch at position " + std::to_string(i) +
                            " ('" + base.records[i].id + "' vs '" + debiased.records[i].id +
                            "')");
    }
  }
  const auto labels = labels_for(task, base);
  const ZeroShotResult before = zeroshot_classify(task, base, 1);
  const ZeroShotResult after = zeroshot_classify(task, debiased, 1);
  const std::size_t c = task.classes.size();
  std::vector<std::size_t> count(c, 0), wrong_before(c, 0), wrong_after(c, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!labels[i]) continue;
    ++count[*labels[i]];
    if (before.predictions[i] != *labels[i]) ++wrong_before[*labels[i]];
    if (after.predictions[i] != *labels[i]) ++wrong_after[*labels[i]];
  }
  ClassErrorReport report;
  report.accuracy_before = before.top1;
  report.accuracy_after = after.top1;
  for (std::size_t k = 0; k < c; ++k) {
    ClassErrorRow row;
    row.class_name = task.classes[k];
    row.count = count[k];
    if (count[k] > 0) {
      row.error_before = static_cast<double>(wrong_before[k]) / static_cast<double>(count[k]);
      row.error_after = static_cast<double>(wrong_after[k]) / static_cast<double>(count[k]);
    }
    row.delta = row.error_after - row.error_before;
    report.rows.push_back(std::move(row));
  }
  std::stable_sort(report.rows.begin(), report.rows.end(),
                   [](const ClassErrorRow& a, const ClassErrorRow& b) { return a.delta > b.delta; });
  return report;
}

AccuracyDropReport accuracy_drop_report(const std::vector<ZeroShotTask>& tasks,
                                        const ArlChain& chain) {
  AccuracyDropReport report;
  double sum = 0.0;
  for (const auto& t : tasks) {
    AccuracyDrop d;
    d.task = t.name;
    d.accuracy_before = zeroshot_classify(t, t.eval, 1).top1;
    d.accuracy_after = zeroshot_classify(t, debias_set(chain, t.eval).debiased, 1).top1;
    d.drop = d.accuracy_before - d.accuracy_after;
    sum += d.drop;
    report.tasks.push_back(std::move(d));
  }
  if (!tasks.empty()) report.mean_drop = sum / static_cast<double>(tasks.size());
  return report;
}

std::string class_errors_to_json(const ClassErrorReport& report) {
  json rows = json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"class", r.class_name},
                    {"count", r.count},
                    {"error_before", r.error_before},
                    {"error_after", r.error_after},
                    {"delta", r.delta}});
  }
  return json{{"accuracy_before", report.accuracy_before},
              {"accuracy_after", report.accuracy_after},
              {"classes", rows}}
             .dump(2) +
         "\n";
}

std::string class_errors_to_text(const ClassErrorReport& report) {
  std::string out = pad("class", 20) + lpad("n", 7) + lpad("err_before", 12) +
                    lpad("err_after", 12) + lpad("delta", 10) + "\n";
  out += std::string(61, '-') + "\n";
  for (const auto& r : report.rows) {
    out += pad(r.class_name, 20) + lpad(std::to_string(r.count), 7) +
           lpad(fmt(r.error_before), 12) + lpad(fmt(r.error_after), 12) +
           lpad(fmt(r.delta), 10) + "\n";
  }
  out += "accuracy " + fmt(report.accuracy_before) + " -> " + fmt(report.accuracy_after) + "\n";
  return out;
}

std::string accuracy_drop_to_json(const AccuracyDropReport& report) {
  json tasks = json::array();
  for (const auto& t : report.tasks) {
    tasks.push_back({{"task", t.task},
                     {"accuracy_before", t.accuracy_before},
                     {"accuracy_after", t.accuracy_after},
                     {"drop", t.drop}});
  }
  return json{{"tasks", tasks}, {"mean_drop", report.mean_drop}}.dump(2) + "\n";
}

std::string accuracy_drop_to_text(const AccuracyDropReport& report) {
  std::string out = pad("task", 24) + lpad("before", 10) + lpad("after", 10) +
                    lpad("drop", 10) + "\n";
  out += std::string(54, '-') + "\n";
  for (const auto& t : report.tasks) {
    out += pad(t.task, 24) + lpad(fmt(t.accuracy_before), 10) +
           lpad(fmt(t.accuracy_after), 10) + lpad(fmt(t.drop), 10) + "\n";
  }
  out += pad("mean", 24) + lpad("", 20) + lpad(fmt(report.mean_drop), 10) + "\n";
  return out;
}

}  // namespace resfair
