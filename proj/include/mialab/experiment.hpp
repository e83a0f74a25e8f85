// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mialab/attack.hpp"
#include "mialab/data.hpp"
#include "mialab/distill.hpp"
#include "mialab/metrics.hpp"
#include "mialab/model.hpp"

namespace mialab {

struct DatasetSpec {
  std::string kind = "synthetic";  // synthetic | jsonl | idx
  // synthetic blobs
  int classes = 2;
  int dim = 16;
  std::size_t per_class = 1024;
  double spread = 1.0;
  std::uint64_t seed = 7;
  // distribution-shift mode: shadow training reads features from a second
  // blob draw whose centers are offset by shift_offset
  bool shift_shadow = false;
  double shift_offset = 0.0;
  // jsonl
  std::string path;
  // idx
  std::string images;
  std::string labels;

  void validate() const;
};

struct TargetSpec {
  std::vector<int> hidden = {32};
  Activation activation = Activation::kRelu;
  std::uint64_t init_seed = 101;
};

struct ShadowSpec {
  std::size_t count = 16;
  std::vector<int> hidden = {32};
  std::vector<int> alt_hidden = {24, 24};  // mismatched-architecture setting
  Activation activation = Activation::kRelu;
  std::uint64_t init_seed_base = 1000;
  std::uint64_t subset_seed_base = 2000;
  std::size_t subset_size = 0;  // 0 means: same as target_size
  TrainingMode mode = TrainingMode::kPlain;
  std::size_t parallelism = 1;
};

struct AttackSpec {
  std::size_t num_queries = 10;
  double aug_sigma = 0.05;
  std::uint64_t aug_seed = 51;
  double var_floor = kDefaultVarFloor;
  TeacherMode teacher_mode = TeacherMode::kLogits;
  // set for image data so augmentation can use flips and shifts
  int image_rows = 0;
  int image_cols = 0;
};

struct ExperimentConfig {
  DatasetSpec dataset;
  std::size_t target_size = 512;
  std::size_t eval_size = 128;
  std::uint64_t split_seed = 11;
  TargetSpec target;
  TrainConfig train;  // shared by the target and plain-mode shadows
  ShadowSpec shadow;
  DistillConfig distill;
  AttackSpec attack;
  std::vector<double> fpr_grid = {1e-4, 1e-3, 1e-2};
  std::string output_dir = "out";

  void validate() const;
  std::size_t shadow_subset_size() const {
    return shadow.subset_size == 0 ? target_size : shadow.subset_size;
  }
};

// Config file format: INI-style sections of `key = value` lines, `#` or `;`
// comments. Unknown sections or keys are rejected.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);
// Canonical serialization: fixed section and key order, shortest round-trip
// number formatting. parse_config(config_to_string(c)) reproduces c.
std::string config_to_string(const ExperimentConfig& config);
// FNV-1a hash of the canonical serialization, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);
ExperimentConfig default_toy_config();

// Replaces every seed in the config with values derived from master_seed, in
// a fixed documented order, so `--seed` alone switches the whole experiment.
void apply_seed_override(ExperimentConfig& config, std::uint64_t master_seed);
void apply_mode_override(ExperimentConfig& config, const std::string& mode);

// Deterministic data context rebuilt from the config by every stage.
struct DataBundle {
  Dataset data;
  Dataset shadow_data;  // shifted clone when shift_shadow, else same rows
  SplitPlan plan;
};
DataBundle prepare_data(const ExperimentConfig& config);

// Pipeline stages. Each persists its artifacts under config.output_dir and
// records a manifest entry; later stages load what earlier stages wrote.
void run_target(const ExperimentConfig& config);
void run_shadows(const ExperimentConfig& config);
MetricsReport run_attack(const ExperimentConfig& config);

// One full pipeline per value of `parameter` (alpha | tau | shadow_size | N),
// sharing all base seeds; failures are recorded per run and the sweep
// continues. Writes sweep.csv plus one subdirectory per run.
void sweep(const ExperimentConfig& config, const std::string& parameter,
           const std::vector<double>& values);

// Comparative table: plain vs distilled-KL vs distilled-MSE shadows, each in
// the same-architecture and mismatched-architecture settings, against one
// shared target. Writes report.json and report.csv.
void comparative_report(const ExperimentConfig& config);

// Artifact names inside the output directory.
std::string target_path(const ExperimentConfig& config);
std::string shadow_path(const ExperimentConfig& config, std::size_t index);
std::string manifest_path(const ExperimentConfig& config);
std::string scores_path(const ExperimentConfig& config);
std::string metrics_path(const ExperimentConfig& config);

}  // namespace mialab
