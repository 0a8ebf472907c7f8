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

#include "resfair/cli.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "text_format.hpp"

namespace resfair {
namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + " must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw UsageError("unknown key '" + k + "' in " + where);
  }
}

template <typename T>
void read_if(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError(where + ": bad value for '" + key + "'");
  }
}

std::vector<Attribute> read_attributes(const json& j, const std::string& where) {
  if (!j.is_array()) throw ValidationError(where + " must be an array of attribute names");
  std::vector<Attribute> out;
  for (const auto& v : j) {
    if (!v.is_string()) throw ValidationError(where + " must hold strings");
    out.push_back(parse_attribute(v.get<std::string>()));
  }
  if (std::set<Attribute>(out.begin(), out.end()).size() != out.size()) {
    throw ValidationError(where + " lists an attribute twice");
  }
  return out;
}

std::vector<fs::path> read_path_list(const json& j, const fs::path& base, const std::string& where) {
  std::vector<fs::path> out;
  auto add = [&](const json& v) {
    if (!v.is_string()) throw ValidationError(where + " must hold path strings");
    const fs::path p = v.get<std::string>();
    out.push_back(p.is_absolute() ? p : base / p);
  };
  if (j.is_array()) {
    for (const auto& v : j) add(v);
  } else {
    add(j);
  }
  return out;
}

fs::path read_path(const json& j, const fs::path& base, const std::string& where) {
  if (!j.is_string()) throw ValidationError(where + " must be a path string");
  const fs::path p = j.get<std::string>();
  return p.is_absolute() ? p : base / p;
}

void read_paths(const json& j, const fs::path& base, RunPaths& p) {
  reject_unknown(j, {"data", "embeddings", "captions", "checkpoints", "reports", "debiased",
                     "residuals", "probe_pairs", "zeroshot_tasks"},
                 "paths");
  if (j.contains("data")) p.data = read_path(j["data"], base, "paths.data");
  p.embeddings = {p.data / "train.jsonl", p.data / "val.jsonl", p.data / "test.jsonl"};
  p.captions = p.data / "captions.jsonl";
  p.debiased = p.data / "debiased.jsonl";
  p.residuals = p.data / "residuals.rfe";
  p.zeroshot_tasks = {p.data / "zeroshot_task.json"};
  if (j.contains("embeddings")) p.embeddings = read_path_list(j["embeddings"], base, "paths.embeddings");
  if (j.contains("captions")) p.captions = read_path(j["captions"], base, "paths.captions");
  if (j.contains("checkpoints")) p.checkpoints = read_path(j["checkpoints"], base, "paths.checkpoints");
  if (j.contains("reports")) p.reports = read_path(j["reports"], base, "paths.reports");
  if (j.contains("debiased")) p.debiased = read_path(j["debiased"], base, "paths.debiased");
  if (j.contains("residuals")) p.residuals = read_path(j["residuals"], base, "paths.residuals");
  if (j.contains("probe_pairs") && !j["probe_pairs"].is_null()) {
    p.probe_pairs = read_path(j["probe_pairs"], base, "paths.probe_pairs");
  }
  if (j.contains("zeroshot_tasks")) {
    p.zeroshot_tasks = read_path_list(j["zeroshot_tasks"], base, "paths.zeroshot_tasks");
  }
}

void read_skew(const json& j, SkewConfig& s) {
  reject_unknown(j, {"epsilon", "k", "smoothing", "delta"}, "skew");
  read_if(j, "epsilon", s.epsilon, "skew");
  read_if(j, "k", s.k, "skew");
  std::string smoothing = "half_count";
  read_if(j, "smoothing", smoothing, "skew");
  if (smoothing == "half_count") {
    s.smoothing = SmoothingPolicy::half_count();
  } else if (smoothing == "fixed") {
    double delta = 0.0;
    read_if(j, "delta", delta, "skew");
    s.smoothing = SmoothingPolicy::fixed(delta);
  } else {
    throw ValidationError("skew.smoothing must be 'half_count' or 'fixed'");
  }
  s.validate();
}

void read_pac(const json& j, PacTrainConfig& c) {
  reject_unknown(j, {"batch_size", "learning_rate", "epochs", "shuffle", "trunk_width",
                     "head_width", "attributes"},
                 "pac");
  read_if(j, "batch_size", c.batch_size, "pac");
  read_if(j, "learning_rate", c.learning_rate, "pac");
  read_if(j, "epochs", c.epochs, "pac");
  read_if(j, "shuffle", c.shuffle, "pac");
  read_if(j, "trunk_width", c.architecture.trunk_width, "pac");
  read_if(j, "head_width", c.architecture.head_width, "pac");
  if (j.contains("attributes")) c.attributes = read_attributes(j["attributes"], "pac.attributes");
  c.validate();
}

void read_arl(const json& j, ArlTrainConfig& c, std::vector<Attribute>& order) {
  reject_unknown(j, {"w_recon", "w_ent", "w_ce", "batch_size", "learning_rate", "weight_decay",
                     "epochs", "early_stop", "shuffle", "activation", "dropout",
                     "sequential_order"},
                 "arl");
  read_if(j, "w_recon", c.weights.recon, "arl");
  read_if(j, "w_ent", c.weights.ent, "arl");
  if (j.contains("w_ce")) {
    const json& ce = j["w_ce"];
    if (ce.is_number()) {
      c.weights.ce.fill(ce.get<double>());
    } else {
      reject_unknown(ce, {"gender", "race", "age"}, "arl.w_ce");
      for (Attribute a : kAllAttributes) {
        read_if(ce, std::string(attribute_name(a)).c_str(), c.weights.ce[index_of(a)], "arl.w_ce");
      }
    }
  }
  read_if(j, "batch_size", c.batch_size, "arl");
  read_if(j, "learning_rate", c.learning_rate, "arl");
  read_if(j, "weight_decay", c.weight_decay, "arl");
  read_if(j, "epochs", c.epochs, "arl");
  read_if(j, "shuffle", c.shuffle, "arl");
  if (j.contains("early_stop")) {
    const json& es = j["early_stop"];
    reject_unknown(es, {"patience", "min_delta"}, "arl.early_stop");
    read_if(es, "patience", c.early_stop.patience, "arl.early_stop");
    read_if(es, "min_delta", c.early_stop.min_delta, "arl.early_stop");
  }
  std::string activation = c.activation.name();
  double dropout = c.activation.dropout_rate;
  read_if(j, "activation", activation, "arl");
  read_if(j, "dropout", dropout, "arl");
  c.activation = ActivationSpec::from_name(activation, dropout);
  if (j.contains("sequential_order")) {
    order = read_attributes(j["sequential_order"], "arl.sequential_order");
  }
  c.validate();
}

void read_probe(const json& j, ProbeRunConfig& p) {
  reject_unknown(j, {"repetitions", "pairs", "ridge", "holdout_fraction"}, "probe");
  read_if(j, "repetitions", p.repetitions, "probe");
  read_if(j, "pairs", p.pairs, "probe");
  read_if(j, "ridge", p.options.ridge, "probe");
  read_if(j, "holdout_fraction", p.options.holdout_fraction, "probe");
  if (p.repetitions == 0) throw ValidationError("probe.repetitions must be positive");
  if (p.options.ridge < 0.0) throw ValidationError("probe.ridge must be non-negative");
  if (!(p.options.holdout_fraction >= 0.0 && p.options.holdout_fraction < 1.0)) {
    throw ValidationError("probe.holdout_fraction must lie in [0, 1)");
  }
}

// ---- file helpers -------------------------------------------------------

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) throw ValidationError("missing " + what + " '" + p.string() + "'");
}

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw ValidationError("cannot create directory '" + p.string() + "': " + ec.message());
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Collects hashes as files are read and written, then emits the manifest.
class Manifest {
 public:
  Manifest(std::string command, const RunConfig& cfg) : command_(std::move(command)), cfg_(cfg) {}

  void input(const fs::path& p) { inputs_[p.string()] = sha256_hex(read_file(p)); }

  void output(const fs::path& p, std::string_view bytes) {
    write_file(p, bytes);
    outputs_[p.string()] = sha256_hex(bytes);
  }

  void finish() const {
    ensure_dir(cfg_.paths.reports);
    json j = {{"command", command_},
              {"config_sha256", sha256_hex(cfg_.resolved.dump())},
              {"config", cfg_.resolved},
              {"inputs", inputs_},
              {"outputs", outputs_},
              {"created_utc", utc_timestamp()}};
    write_file(cfg_.paths.reports / (command_ + ".manifest.json"), j.dump(2) + "\n");
  }

 private:
  std::string command_;
  const RunConfig& cfg_;
  std::map<std::string, std::string> inputs_;
  std::map<std::string, std::string> outputs_;
};

EmbeddingSet load_inputs(const std::vector<fs::path>& paths, Manifest& m, const std::string& what) {
  for (const auto& p : paths) {
    require_file(p, what);
    m.input(p);
  }
  return load_embedding_files(paths);
}

PacModel load_frozen_pac(const fs::path& p, Manifest& m) {
  require_file(p, "PAC checkpoint");
  m.input(p);
  PacModel pac = load_pac(p);
  pac.freeze();
  return pac;
}

fs::path pac_path(const RunConfig& cfg, std::optional<Attribute> attribute) {
  if (!attribute) return cfg.paths.checkpoints / "pac.ckpt";
  return cfg.paths.checkpoints / ("pac_" + std::string(attribute_name(*attribute)) + ".ckpt");
}

fs::path arl_path(const RunConfig& cfg) { return cfg.paths.checkpoints / "arl.ckpt"; }

ArlChain load_chain(const RunConfig& cfg, Manifest& m) {
  require_file(arl_path(cfg), "ARL checkpoint");
  m.input(arl_path(cfg));
  return load_arl(arl_path(cfg));
}

EmbeddingSet filter_split(const EmbeddingSet& set, const std::string& split) {
  if (split == "all") return set;
  return set.subset(parse_split(split));
}

json accuracy_json(const std::vector<std::pair<Attribute, double>>& acc) {
  json j = json::object();
  for (const auto& [a, v] : acc) j[std::string(attribute_name(a))] = v;
  return j;
}

json reconstruction_json(const EmbeddingSet& original, const EmbeddingSet& debiased) {
  std::map<std::string, const EmbeddingRecord*> by_id;
  for (const auto& r : original.records) by_id[r.id] = &r;
  double l2 = 0.0;
  double cos = 0.0;
  std::size_t n = 0;
  for (const auto& r : debiased.records) {
    auto it = by_id.find(r.id);
    if (it == by_id.end()) continue;
    const auto& e = it->second->vector;
    double sq = 0.0;
    for (std::size_t i = 0; i < e.size(); ++i) sq += (r.vector[i] - e[i]) * (r.vector[i] - e[i]);
    l2 += std::sqrt(sq);
    cos += cosine_similarity(e, r.vector);
    ++n;
  }
  if (n == 0) throw ValidationError("debiased embeddings share no ids with the originals");
  return {{"records", n}, {"mean_l2", l2 / n}, {"mean_cosine", cos / n}};
}

std::string prompts_jsonl(const std::vector<PromptEmbedding>& prompts) {
  std::string out;
  for (const auto& p : prompts) {
    json j = {{"class", p.class_name}, {"template", p.template_text}, {"text", p.text},
              {"vector", p.vector}};
    out += j.dump() + "\n";
  }
  return out;
}

std::string mode_name(RunMode m) { return m == RunMode::kJoint ? "joint" : "sequential"; }

}  // namespace

void apply_override(json& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw UsageError("--set expects key=value, got '" + std::string(assignment) + "'");
  }
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  std::string pointer;
  std::stringstream ss(key);
  for (std::string part; std::getline(ss, part, '.');) {
    if (part.empty()) throw UsageError("--set: empty component in key '" + key + "'");
    pointer += "/" + part;
  }
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  if (!config.is_object()) config = json::object();
  try {
    config[json::json_pointer(pointer)] = value;
  } catch (const json::exception& e) {
    throw UsageError("--set " + key + ": " + e.what());
  }
}

RunConfig run_config_from_json(const json& j, const fs::path& base_dir) {
  reject_unknown(j, {"seed", "mode", "paths", "synth", "skew", "pac", "arl", "probe", "zeroshot",
                     "audit"},
                 "config");
  RunConfig cfg;
  cfg.resolved = j;
  read_if(j, "seed", cfg.seed, "config");
  std::string mode = "joint";
  read_if(j, "mode", mode, "config");
  if (mode == "joint") {
    cfg.mode = RunMode::kJoint;
  } else if (mode == "sequential") {
    cfg.mode = RunMode::kSequential;
  } else {
    throw ValidationError("mode must be 'joint' or 'sequential'");
  }
  cfg.paths.data = base_dir / "data";
  cfg.paths.checkpoints = base_dir / "checkpoints";
  cfg.paths.reports = base_dir / "reports";
  read_paths(j.contains("paths") ? j["paths"] : json::object(), base_dir, cfg.paths);
  if (j.contains("synth")) cfg.synth = synth_spec_from_json(j["synth"]);
  cfg.synth.seed = cfg.seed;
  cfg.synth.validate();
  if (j.contains("skew")) read_skew(j["skew"], cfg.skew);
  if (j.contains("pac")) read_pac(j["pac"], cfg.pac);
  cfg.pac.seed = cfg.seed;
  if (j.contains("arl")) read_arl(j["arl"], cfg.arl, cfg.sequential_order);
  cfg.arl.seed = cfg.seed;
  if (j.contains("probe")) read_probe(j["probe"], cfg.probe);
  cfg.probe.options.seed = cfg.seed;
  if (j.contains("zeroshot")) {
    reject_unknown(j["zeroshot"], {"top_k"}, "zeroshot");
    read_if(j["zeroshot"], "top_k", cfg.zeroshot_top_k, "zeroshot");
    if (cfg.zeroshot_top_k == 0) throw ValidationError("zeroshot.top_k must be positive");
  }
  if (j.contains("audit")) {
    const json& a = j["audit"];
    reject_unknown(a, {"compare_debiased", "attributes", "split"}, "audit");
    read_if(a, "compare_debiased", cfg.compare_debiased, "audit");
    read_if(a, "split", cfg.audit_split, "audit");
    if (cfg.audit_split != "all") parse_split(cfg.audit_split);
    if (a.contains("attributes")) cfg.audit_attributes = read_attributes(a["attributes"], "audit.attributes");
  }
  return cfg;
}

RunConfig load_run_config(const std::optional<fs::path>& config_path,
                          const std::vector<std::string>& overrides) {
  json j = json::object();
  fs::path base = fs::current_path();
  if (config_path) {
    if (!fs::is_regular_file(*config_path)) {
      throw UsageError("config file '" + config_path->string() + "' not found");
    }
    try {
      j = json::parse(read_file(*config_path));
    } catch (const json::exception& e) {
      throw ValidationError(config_path->string() + ": " + e.what());
    }
    base = fs::absolute(*config_path).parent_path();
  }
  for (const auto& o : overrides) apply_override(j, o);
  RunConfig cfg = run_config_from_json(j, base);
  if (const char* dir = std::getenv("RESFAIR_REPORT_DIR"); dir && *dir) {
    cfg.paths.reports = dir;
  }
  return cfg;
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256: digest failed");
  }
  static const char* kHex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 15];
  }
  return out;
}

EmbeddingSet load_embedding_files(const std::vector<fs::path>& paths) {
  if (paths.empty()) throw ValidationError("no embedding files given");
  EmbeddingSet out = load_embeddings(paths.front());
  for (std::size_t i = 1; i < paths.size(); ++i) {
    EmbeddingSet next = load_embeddings(paths[i]);
    if (next.d != out.d) {
      throw ValidationError(paths[i].string() + ": dimension " + std::to_string(next.d) +
                            " differs from " + std::to_string(out.d));
    }
    for (const auto& v : next.vocabularies) {
      const LabelVocabulary* mine = out.vocabulary(v.attribute);
      if (mine == nullptr || mine->labels != v.labels) {
        throw ValidationError(paths[i].string() + ": vocabulary for '" +
                              std::string(attribute_name(v.attribute)) + "' differs");
      }
    }
    for (auto& r : next.records) out.records.push_back(std::move(r));
  }
  out.validate();
  return out;
}

void cmd_synth(const RunConfig& cfg) {
  const fs::path dir = cfg.paths.data;
  if (!fs::is_directory(dir)) {
    throw ValidationError("output directory '" + dir.string() + "' does not exist");
  }
  SynthOutput out = generate(cfg.synth);

  // Everything is serialized before the first write.
  std::vector<std::pair<fs::path, std::string>> files;
  for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) {
    files.emplace_back(dir / (std::string(split_name(s)) + ".jsonl"),
                       serialize_jsonl(out.set.subset(s)));
  }
  files.emplace_back(dir / "captions.jsonl", serialize_captions(out.captions));
  files.emplace_back(dir / "oracle.json", oracle_to_json(out.oracle).dump(2) + "\n");
  files.emplace_back(dir / "zeroshot_prompts.jsonl", prompts_jsonl(out.prompts));
  json task = {{"name", "synth_scenes"},
               {"classes", out.zeroshot_classes},
               {"templates", out.zeroshot_templates},
               {"prompt_embeddings", "zeroshot_prompts.jsonl"},
               {"eval_embeddings", "test.jsonl"}};
  files.emplace_back(dir / "zeroshot_task.json", task.dump(2) + "\n");
  json spec = synth_spec_to_json(cfg.synth);
  spec["seed"] = cfg.seed;
  files.emplace_back(dir / "synth_spec.json", spec.dump(2) + "\n");

  Manifest m("synth", cfg);
  for (const auto& [p, bytes] : files) m.output(p, bytes);
  m.finish();
}

void cmd_train_pac(const RunConfig& cfg) {
  Manifest m("train-pac", cfg);
  const EmbeddingSet set = load_inputs(cfg.paths.embeddings, m, "embedding file");
  ensure_dir(cfg.paths.checkpoints);
  ensure_dir(cfg.paths.reports);
  json summary = {{"mode", mode_name(cfg.mode)}};
  auto train_one = [&](std::optional<Attribute> attribute, std::uint64_t seed) {
    PacTrainConfig pc = cfg.pac;
    pc.seed = seed;
    if (attribute) pc.attributes = {*attribute};
    PacTrainResult r = train_pac(set, pc);
    const std::string suffix = attribute ? "_" + std::string(attribute_name(*attribute)) : "";
    m.output(pac_path(cfg, attribute), serialize_pac(r.model));
    m.output(cfg.paths.reports / ("pac_metrics" + suffix + ".jsonl"), pac_metrics_jsonl(r.epochs));
    summary["val_accuracy" + suffix] = accuracy_json(pac_accuracy(r.model, set, Split::kVal));
  };
  if (cfg.mode == RunMode::kJoint) {
    train_one(std::nullopt, cfg.seed);
  } else {
    for (std::size_t i = 0; i < cfg.sequential_order.size(); ++i) {
      train_one(cfg.sequential_order[i], cfg.seed + i);
    }
  }
  m.output(cfg.paths.reports / "pac_summary.json", summary.dump(2) + "\n");
  m.finish();
}

void cmd_train_arl(const RunConfig& cfg) {
  Manifest m("train-arl", cfg);
  const EmbeddingSet set = load_inputs(cfg.paths.embeddings, m, "embedding file");
  ensure_dir(cfg.paths.checkpoints);
  ensure_dir(cfg.paths.reports);
  json summary = {{"mode", mode_name(cfg.mode)}, {"stages", json::array()}};
  auto stage_json = [](const ArlTrainResult& r, const std::string& target) {
    return json{{"target", target},
                {"best_epoch", r.best_epoch},
                {"best_val_loss", r.best_val_loss},
                {"initial_val_loss", r.initial_val_loss},
                {"epochs_run", r.epochs.size()},
                {"stopped_early", r.stopped_early}};
  };
  ArlChain chain;
  if (cfg.mode == RunMode::kJoint) {
    const PacModel pac = load_frozen_pac(pac_path(cfg, std::nullopt), m);
    ArlTrainResult r = train_arl(set, pac, cfg.arl);
    chain.stages.push_back(r.model);
    m.output(cfg.paths.reports / "arl_metrics.jsonl", arl_metrics_jsonl(r.epochs));
    summary["stages"].push_back(stage_json(r, "joint"));
  } else {
    std::vector<PacModel> pacs;
    for (Attribute a : cfg.sequential_order) pacs.push_back(load_frozen_pac(pac_path(cfg, a), m));
    SequentialTrainResult r = train_arl_sequential(set, pacs, cfg.sequential_order, cfg.arl);
    chain = r.chain;
    for (std::size_t i = 0; i < r.stages.size(); ++i) {
      const std::string name(attribute_name(cfg.sequential_order[i]));
      m.output(cfg.paths.reports / ("arl_metrics_" + name + ".jsonl"),
               arl_metrics_jsonl(r.stages[i].epochs));
      summary["stages"].push_back(stage_json(r.stages[i], name));
    }
  }
  m.output(arl_path(cfg), serialize_arl(chain));
  m.output(cfg.paths.reports / "arl_summary.json", summary.dump(2) + "\n");
  m.finish();
}

void cmd_debias(const RunConfig& cfg) {
  Manifest m("debias", cfg);
  const EmbeddingSet set = load_inputs(cfg.paths.embeddings, m, "embedding file");
  const ArlChain chain = load_chain(cfg, m);
  const DebiasResult r = debias_set(chain, set);
  ensure_dir(cfg.paths.debiased.parent_path());
  ensure_dir(cfg.paths.residuals.parent_path());
  const auto fmt_of = [](const fs::path& p) {
    return format_for_path(p) == EmbeddingFormat::kPacked ? serialize_packed : serialize_jsonl;
  };
  m.output(cfg.paths.debiased, fmt_of(cfg.paths.debiased)(r.debiased));
  m.output(cfg.paths.residuals, fmt_of(cfg.paths.residuals)(r.residuals));
  ensure_dir(cfg.paths.reports);
  json summary = {{"mode", mode_name(cfg.mode)},
                  {"stages", chain.stages.size()},
                  {"reconstruction", reconstruction_json(set, r.debiased)}};
  m.output(cfg.paths.reports / "debias_summary.json", summary.dump(2) + "\n");
  m.finish();
}

void cmd_audit(const RunConfig& cfg) {
  Manifest m("audit", cfg);
  const EmbeddingSet images =
      filter_split(load_inputs(cfg.paths.embeddings, m, "embedding file"), cfg.audit_split);
  require_file(cfg.paths.captions, "caption file");
  m.input(cfg.paths.captions);
  const auto captions = load_captions(cfg.paths.captions);
  const SkewReport before = audit(images, captions, cfg.skew, cfg.audit_attributes);
  ensure_dir(cfg.paths.reports);
  const fs::path& dir = cfg.paths.reports;
  m.output(dir / "audit.json", report_to_json(before));
  m.output(dir / "audit.txt", report_to_text(before));
  m.output(dir / "audit_breakdown.csv", report_breakdown_csv(before));
  if (cfg.compare_debiased) {
    const EmbeddingSet debiased =
        filter_split(load_inputs({cfg.paths.debiased}, m, "debiased embedding file"), cfg.audit_split);
    const SkewReport after = audit(debiased, captions, cfg.skew, cfg.audit_attributes);
    json paired = json::parse(paired_report_to_json(before, after));
    paired["mode"] = mode_name(cfg.mode);
    paired["reconstruction"] = reconstruction_json(images, debiased);
    m.output(dir / "audit_paired.json", paired.dump(2) + "\n");
    const json& rec = paired["reconstruction"];
    m.output(dir / "audit_paired.txt",
             paired_report_to_text(before, after) + "\nmode " + mode_name(cfg.mode) +
                 "  mean |phi_bar - e| " + internal::fmt(rec["mean_l2"].get<double>(), 6) +
                 "  mean cosine " + internal::fmt(rec["mean_cosine"].get<double>(), 6) + "\n");
  }
  m.finish();
}

void cmd_probe(const RunConfig& cfg) {
  Manifest m("probe", cfg);
  PairSampler sampler;
  json source;
  if (cfg.paths.probe_pairs) {
    require_file(*cfg.paths.probe_pairs, "probe pair file");
    m.input(*cfg.paths.probe_pairs);
    auto pairs = std::make_shared<std::vector<ProbePair>>(load_probe_pairs(*cfg.paths.probe_pairs));
    sampler = [pairs](Rng&) { return *pairs; };
    source = {{"kind", "file"}, {"pairs", pairs->size()}};
  } else {
    auto src = std::make_shared<LinearPairSource>(
        make_linear_pair_source(cfg.synth.d, cfg.probe.pairs, cfg.seed, true));
    sampler = [src](Rng& rng) { return src->sample(rng); };
    source = {{"kind", "synthetic_linear"}, {"pairs", cfg.probe.pairs}, {"d", cfg.synth.d}};
  }
  const ProbeSummary s = repeat_probe(sampler, cfg.probe.repetitions, cfg.seed, cfg.probe.options);
  json report = json::parse(probe_summary_to_json(s));
  report["source"] = source;
  ensure_dir(cfg.paths.reports);
  m.output(cfg.paths.reports / "probe.json", report.dump(2) + "\n");
  m.finish();
}

void cmd_zeroshot(const RunConfig& cfg) {
  Manifest m("zeroshot", cfg);
  std::vector<ZeroShotTask> tasks;
  for (const auto& p : cfg.paths.zeroshot_tasks) {
    require_file(p, "zero-shot task file");
    m.input(p);
    tasks.push_back(load_zeroshot_task(p));
  }
  const ArlChain chain = load_chain(cfg, m);
  ensure_dir(cfg.paths.reports);
  const AccuracyDropReport drop = accuracy_drop_report(tasks, chain);
  m.output(cfg.paths.reports / "zeroshot.json", accuracy_drop_to_json(drop));
  m.output(cfg.paths.reports / "zeroshot.txt", accuracy_drop_to_text(drop));
  for (const auto& task : tasks) {
    const EmbeddingSet debiased = debias_set(chain, task.eval).debiased;
    const ClassErrorReport errors = compare_class_errors(task, task.eval, debiased);
    m.output(cfg.paths.reports / ("class_errors_" + task.name + ".json"), class_errors_to_json(errors));
    m.output(cfg.paths.reports / ("class_errors_" + task.name + ".txt"), class_errors_to_text(errors));
  }
  m.finish();
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"resfair: embedding fairness audit and residual debiasing"};
  app.require_subcommand(1);
  struct Sub {
    const char* name;
    const char* help;
    void (*fn)(const RunConfig&);
  };
  const std::vector<Sub> subs = {
      {"synth", "generate a synthetic embedding/caption set", cmd_synth},
      {"train-pac", "train the protected attribute classifier", cmd_train_pac},
      {"train-arl", "train the additive residual learner", cmd_train_arl},
      {"debias", "apply the residual learner to embeddings", cmd_debias},
      {"audit", "skew audit of embeddings against captions", cmd_audit},
      {"probe", "linear disentanglement probe", cmd_probe},
      {"zeroshot", "zero-shot accuracy before and after debiasing", cmd_zeroshot},
  };
  std::string config_path;
  std::vector<std::string> overrides;
  std::vector<CLI::App*> handles;
  for (const auto& s : subs) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    sub->add_option("--config", config_path, "JSON config file");
    sub->add_option("--set", overrides, "override a config value (dotted.key=value)");
    handles.push_back(sub);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }
  try {
    for (std::size_t i = 0; i < subs.size(); ++i) {
      if (!handles[i]->parsed()) continue;
      const RunConfig cfg = load_run_config(
          config_path.empty() ? std::nullopt : std::optional<fs::path>(config_path), overrides);
      subs[i].fn(cfg);
      out << subs[i].name << ": done\n";
    }
    return 0;
  } catch (const UsageError& e) {
    err << "resfair: usage error: " << e.what() << "\n";
    return 1;
  } catch (const NumericalError& e) {
    err << "resfair: numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    err << "resfair: error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace resfair
