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

// Config-driven command surface. Every command reads one JSON config
// (optional), applies `--set key=value` overrides and writes its artifacts
// plus a manifest with SHA-256 hashes of the config and of every input and
// output file.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "resfair/arl.hpp"
#include "resfair/evaluation.hpp"
#include "resfair/fairness_metrics.hpp"
#include "resfair/pac.hpp"
#include "resfair/synth.hpp"

namespace resfair {

enum class RunMode { kJoint, kSequential };

struct RunPaths {
  std::filesystem::path data;  // synth output directory
  std::vector<std::filesystem::path> embeddings;
  std::filesystem::path captions;
  std::filesystem::path checkpoints;
  std::filesystem::path reports;
  std::filesystem::path debiased;
  std::filesystem::path residuals;
  std::optional<std::filesystem::path> probe_pairs;
  std::vector<std::filesystem::path> zeroshot_tasks;
};

struct ProbeRunConfig {
  ProbeOptions options;
  std::size_t repetitions = 100;
  std::size_t pairs = 2000;  // synthetic source only
};

struct RunConfig {
  std::uint64_t seed = 0;
  RunMode mode = RunMode::kJoint;
  RunPaths paths;
  SynthSpec synth;
  SkewConfig skew;
  PacTrainConfig pac;
  ArlTrainConfig arl;
  std::vector<Attribute> sequential_order = {kAllAttributes.begin(), kAllAttributes.end()};
  ProbeRunConfig probe;
  std::size_t zeroshot_top_k = 5;
  std::vector<Attribute> audit_attributes = {kAllAttributes.begin(), kAllAttributes.end()};
  // "all", "train", "val" or "test".
  std::string audit_split = "all";
  bool compare_debiased = false;
  // Fully merged JSON (after overrides), hashed into manifests.
  nlohmann::json resolved;
};

// Sets the value at a dotted key ("arl.epochs=300"). The value is parsed as
// JSON when possible and taken as a string otherwise.
void apply_override(nlohmann::json& config, std::string_view assignment);

// Unknown keys raise UsageError, bad values ValidationError. Relative paths
// resolve against `base_dir`. The single seed is copied into every stage.
RunConfig run_config_from_json(const nlohmann::json& config,
                               const std::filesystem::path& base_dir);

RunConfig load_run_config(const std::optional<std::filesystem::path>& config_path,
                          const std::vector<std::string>& overrides);

std::string sha256_hex(std::string_view bytes);

// Concatenates several embedding files; dimensions and vocabularies must agree.
EmbeddingSet load_embedding_files(const std::vector<std::filesystem::path>& paths);

void cmd_synth(const RunConfig& cfg);
void cmd_train_pac(const RunConfig& cfg);
void cmd_train_arl(const RunConfig& cfg);
void cmd_debias(const RunConfig& cfg);
void cmd_audit(const RunConfig& cfg);
void cmd_probe(const RunConfig& cfg);
void cmd_zeroshot(const RunConfig& cfg);

// Entry point used by the executable. The report directory can be redirected
// with RESFAIR_REPORT_DIR. Returns 0, 1 (usage), 2 (data) or 3 (numerical).
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace resfair
