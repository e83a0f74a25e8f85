// SPDX-License-Identifier: Apache-2.0
#include "mialab/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "mialab/blackbox.hpp"

namespace mialab {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0;
  std::size_t b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

[[noreturn]] void bad_value(const std::string& where, const std::string& value,
                            const std::string& expected) {
  throw ConfigError("config value " + where + " = \"" + value +
                    "\": expected " + expected);
}

double to_double(const std::string& value, const std::string& where) {
  const std::string v = trim(value);
  std::size_t pos = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    bad_value(where, value, "a number");
  }
  if (pos != v.size()) bad_value(where, value, "a number");
  return out;
}

std::uint64_t to_u64(const std::string& value, const std::string& where) {
  const std::string v = trim(value);
  std::size_t pos = 0;
  std::uint64_t out = 0;
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    out = std::stoull(v, &pos);
  } catch (const std::exception&) {
    bad_value(where, value, "an unsigned integer");
  }
  if (pos != v.size()) bad_value(where, value, "an unsigned integer");
  return out;
}

std::size_t to_size(const std::string& value, const std::string& where) {
  return static_cast<std::size_t>(to_u64(value, where));
}

int to_int(const std::string& value, const std::string& where) {
  const std::string v = trim(value);
  std::size_t pos = 0;
  int out = 0;
  try {
    out = std::stoi(v, &pos);
  } catch (const std::exception&) {
    bad_value(where, value, "an integer");
  }
  if (pos != v.size()) bad_value(where, value, "an integer");
  return out;
}

bool to_bool(const std::string& value, const std::string& where) {
  const std::string v = trim(value);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  bad_value(where, value, "a boolean (true/false)");
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> parts;
  std::string item;
  std::istringstream in(value);
  while (std::getline(in, item, ',')) parts.push_back(trim(item));
  return parts;
}

std::vector<int> to_int_list(const std::string& value,
                             const std::string& where) {
  std::vector<int> out;
  for (const std::string& part : split_list(value)) {
    out.push_back(to_int(part, where));
  }
  if (out.empty()) bad_value(where, value, "a comma-separated integer list");
  return out;
}

std::vector<double> to_double_list(const std::string& value,
                                   const std::string& where) {
  std::vector<double> out;
  for (const std::string& part : split_list(value)) {
    out.push_back(to_double(part, where));
  }
  if (out.empty()) bad_value(where, value, "a comma-separated number list");
  return out;
}

// Parsed INI text with consume-as-you-read key tracking so unknown keys can
// be rejected after the schema walk.
class IniReader {
 public:
  explicit IniReader(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::string section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      std::size_t cut = line.find_first_of("#;");
      if (cut != std::string::npos) line = line.substr(0, cut);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') {
          throw ConfigError("config line " + std::to_string(line_no) +
                            ": unterminated section header");
        }
        section = trim(line.substr(1, line.size() - 2));
        if (section.empty()) {
          throw ConfigError("config line " + std::to_string(line_no) +
                            ": empty section name");
        }
        sections_[section];
        continue;
      }
      std::size_t eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": expected key = value");
      }
      if (section.empty()) {
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": key before any [section]");
      }
      std::string key = trim(line.substr(0, eq));
      std::string value = trim(line.substr(eq + 1));
      if (key.empty()) {
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": empty key");
      }
      auto [it, inserted] = sections_[section].emplace(key, value);
      (void)it;
      if (!inserted) {
        throw ConfigError("config: duplicate key [" + section + "] " + key);
      }
    }
  }

  bool has(const std::string& section, const std::string& key) const {
    auto sec = sections_.find(section);
    return sec != sections_.end() && sec->second.count(key) > 0;
  }

  // Returns the value (or fallback when absent) and marks the key consumed.
  std::string take(const std::string& section, const std::string& key,
                   const std::string& fallback) {
    auto sec = sections_.find(section);
    if (sec == sections_.end()) return fallback;
    auto it = sec->second.find(key);
    if (it == sec->second.end()) return fallback;
    std::string value = it->second;
    sec->second.erase(it);
    return value;
  }

  void finish() const {
    for (const auto& [section, keys] : sections_) {
      if (!keys.empty()) {
        throw ConfigError("config: unknown key [" + section + "] " +
                          keys.begin()->first);
      }
    }
  }

 private:
  std::map<std::string, std::map<std::string, std::string>> sections_;
};

TeacherMode teacher_mode_from_string(const std::string& name) {
  if (name == "logits") return TeacherMode::kLogits;
  if (name == "probabilities") return TeacherMode::kProbabilities;
  throw ConfigError("unknown teacher mode: " + name);
}

std::string to_string(TeacherMode mode) {
  return mode == TeacherMode::kLogits ? "logits" : "probabilities";
}

}  // namespace

void DatasetSpec::validate() const {
  if (kind == "synthetic") {
    if (classes < 2) throw ConfigError("dataset classes must be >= 2");
    if (dim < 1) throw ConfigError("dataset dim must be >= 1");
    if (per_class == 0) throw ConfigError("dataset per_class must be >= 1");
    if (!(spread > 0.0)) throw ConfigError("dataset spread must be positive");
  } else if (kind == "jsonl") {
    if (path.empty()) throw ConfigError("jsonl dataset requires path");
    if (shift_shadow) {
      throw ConfigError("shift_shadow is only supported for synthetic data");
    }
  } else if (kind == "idx") {
    if (images.empty() || labels.empty()) {
      throw ConfigError("idx dataset requires images and labels paths");
    }
    if (shift_shadow) {
      throw ConfigError("shift_shadow is only supported for synthetic data");
    }
  } else {
    throw ConfigError("unknown dataset kind: " + kind);
  }
}

void ExperimentConfig::validate() const {
  dataset.validate();
  if (target_size == 0) throw ConfigError("split target_size must be >= 1");
  if (eval_size == 0) throw ConfigError("split eval_size must be >= 1");
  train.validate();
  distill.validate();
  if (shadow.count == 0) throw ConfigError("shadow count must be >= 1");
  if (shadow.parallelism == 0) {
    throw ConfigError("shadow parallelism must be >= 1");
  }
  if (shadow.hidden.empty() || shadow.alt_hidden.empty()) {
    throw ConfigError("shadow hidden layer lists must be nonempty");
  }
  if (target.hidden.empty()) {
    throw ConfigError("target hidden layer list must be nonempty");
  }
  if (attack.num_queries == 0) {
    throw ConfigError("attack num_queries must be >= 1");
  }
  if (attack.aug_sigma < 0.0) {
    throw ConfigError("attack aug_sigma must be nonnegative");
  }
  if (!(attack.var_floor > 0.0)) {
    throw ConfigError("attack var_floor must be positive");
  }
  if (fpr_grid.empty()) throw ConfigError("report fpr_grid must be nonempty");
  for (double f : fpr_grid) {
    if (!(f >= 0.0 && f <= 1.0)) {
      throw ConfigError("report fpr_grid entries must lie in [0, 1]");
    }
  }
  if (output_dir.empty()) throw ConfigError("output dir must be nonempty");
}

ExperimentConfig parse_config(const std::string& text) {
  IniReader ini(text);
  ExperimentConfig c;

  c.dataset.kind = ini.take("dataset", "kind", c.dataset.kind);
  c.dataset.classes =
      to_int(ini.take("dataset", "classes", std::to_string(c.dataset.classes)),
             "[dataset] classes");
  c.dataset.dim = to_int(
      ini.take("dataset", "dim", std::to_string(c.dataset.dim)), "[dataset] dim");
  c.dataset.per_class = to_size(
      ini.take("dataset", "per_class", std::to_string(c.dataset.per_class)),
      "[dataset] per_class");
  c.dataset.spread =
      to_double(ini.take("dataset", "spread", format_double(c.dataset.spread)),
                "[dataset] spread");
  c.dataset.seed = to_u64(
      ini.take("dataset", "seed", std::to_string(c.dataset.seed)),
      "[dataset] seed");
  c.dataset.shift_shadow = to_bool(
      ini.take("dataset", "shift_shadow", c.dataset.shift_shadow ? "true" : "false"),
      "[dataset] shift_shadow");
  c.dataset.shift_offset = to_double(
      ini.take("dataset", "shift_offset", format_double(c.dataset.shift_offset)),
      "[dataset] shift_offset");
  c.dataset.path = ini.take("dataset", "path", c.dataset.path);
  c.dataset.images = ini.take("dataset", "images", c.dataset.images);
  c.dataset.labels = ini.take("dataset", "labels", c.dataset.labels);

  c.target_size =
      to_size(ini.take("split", "target_size", std::to_string(c.target_size)),
              "[split] target_size");
  c.eval_size = to_size(
      ini.take("split", "eval_size", std::to_string(c.eval_size)),
      "[split] eval_size");
  c.split_seed = to_u64(ini.take("split", "seed", std::to_string(c.split_seed)),
                        "[split] seed");

  if (ini.has("target", "hidden")) {
    c.target.hidden =
        to_int_list(ini.take("target", "hidden", ""), "[target] hidden");
  }
  c.target.activation = activation_from_string(
      ini.take("target", "activation", to_string(c.target.activation)));
  c.target.init_seed = to_u64(
      ini.take("target", "init_seed", std::to_string(c.target.init_seed)),
      "[target] init_seed");

  c.train.steps = to_size(
      ini.take("train", "steps", std::to_string(c.train.steps)), "[train] steps");
  c.train.batch_size =
      to_size(ini.take("train", "batch_size", std::to_string(c.train.batch_size)),
              "[train] batch_size");
  c.train.learning_rate = to_double(
      ini.take("train", "learning_rate", format_double(c.train.learning_rate)),
      "[train] learning_rate");
  c.train.momentum =
      to_double(ini.take("train", "momentum", format_double(c.train.momentum)),
                "[train] momentum");
  c.train.weight_decay = to_double(
      ini.take("train", "weight_decay", format_double(c.train.weight_decay)),
      "[train] weight_decay");
  c.train.shuffle_seed = to_u64(
      ini.take("train", "shuffle_seed", std::to_string(c.train.shuffle_seed)),
      "[train] shuffle_seed");

  c.shadow.count = to_size(
      ini.take("shadow", "count", std::to_string(c.shadow.count)),
      "[shadow] count");
  if (ini.has("shadow", "hidden")) {
    c.shadow.hidden =
        to_int_list(ini.take("shadow", "hidden", ""), "[shadow] hidden");
  }
  if (ini.has("shadow", "alt_hidden")) {
    c.shadow.alt_hidden =
        to_int_list(ini.take("shadow", "alt_hidden", ""), "[shadow] alt_hidden");
  }
  c.shadow.activation = activation_from_string(
      ini.take("shadow", "activation", to_string(c.shadow.activation)));
  c.shadow.init_seed_base = to_u64(
      ini.take("shadow", "init_seed_base", std::to_string(c.shadow.init_seed_base)),
      "[shadow] init_seed_base");
  c.shadow.subset_seed_base = to_u64(
      ini.take("shadow", "subset_seed_base",
               std::to_string(c.shadow.subset_seed_base)),
      "[shadow] subset_seed_base");
  c.shadow.subset_size = to_size(
      ini.take("shadow", "subset_size", std::to_string(c.shadow.subset_size)),
      "[shadow] subset_size");
  c.shadow.mode =
      training_mode_from_string(ini.take("shadow", "mode", to_string(c.shadow.mode)));
  c.shadow.parallelism = to_size(
      ini.take("shadow", "parallelism", std::to_string(c.shadow.parallelism)),
      "[shadow] parallelism");

  c.distill.alpha =
      to_double(ini.take("distill", "alpha", format_double(c.distill.alpha)),
                "[distill] alpha");
  c.distill.temperature = to_double(
      ini.take("distill", "tau", format_double(c.distill.temperature)),
      "[distill] tau");
  c.distill.steps = to_size(
      ini.take("distill", "steps", std::to_string(c.distill.steps)),
      "[distill] steps");
  c.distill.batch_size = to_size(
      ini.take("distill", "batch_size", std::to_string(c.distill.batch_size)),
      "[distill] batch_size");
  c.distill.learning_rate = to_double(
      ini.take("distill", "learning_rate", format_double(c.distill.learning_rate)),
      "[distill] learning_rate");
  c.distill.seed = to_u64(
      ini.take("distill", "seed", std::to_string(c.distill.seed)),
      "[distill] seed");
  c.distill.allow_reconstruction = to_bool(
      ini.take("distill", "allow_reconstruction",
               c.distill.allow_reconstruction ? "true" : "false"),
      "[distill] allow_reconstruction");

  c.attack.num_queries = to_size(
      ini.take("attack", "num_queries", std::to_string(c.attack.num_queries)),
      "[attack] num_queries");
  c.attack.aug_sigma = to_double(
      ini.take("attack", "aug_sigma", format_double(c.attack.aug_sigma)),
      "[attack] aug_sigma");
  c.attack.aug_seed = to_u64(
      ini.take("attack", "aug_seed", std::to_string(c.attack.aug_seed)),
      "[attack] aug_seed");
  c.attack.var_floor = to_double(
      ini.take("attack", "var_floor", format_double(c.attack.var_floor)),
      "[attack] var_floor");
  c.attack.teacher_mode = teacher_mode_from_string(
      ini.take("attack", "teacher_mode", to_string(c.attack.teacher_mode)));
  c.attack.image_rows = to_int(
      ini.take("attack", "image_rows", std::to_string(c.attack.image_rows)),
      "[attack] image_rows");
  c.attack.image_cols = to_int(
      ini.take("attack", "image_cols", std::to_string(c.attack.image_cols)),
      "[attack] image_cols");

  if (ini.has("report", "fpr_grid")) {
    c.fpr_grid =
        to_double_list(ini.take("report", "fpr_grid", ""), "[report] fpr_grid");
  }
  c.output_dir = ini.take("output", "dir", c.output_dir);

  ini.finish();
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

namespace {

std::string join_ints(const std::vector<int>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) out += ',';
    out += std::to_string(values[i]);
  }
  return out;
}

std::string join_doubles(const std::vector<double>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) out += ',';
    out += format_double(values[i]);
  }
  return out;
}

}  // namespace

std::string config_to_string(const ExperimentConfig& c) {
  std::ostringstream out;
  out << "[dataset]\n";
  out << "kind = " << c.dataset.kind << "\n";
  out << "classes = " << c.dataset.classes << "\n";
  out << "dim = " << c.dataset.dim << "\n";
  out << "per_class = " << c.dataset.per_class << "\n";
  out << "spread = " << format_double(c.dataset.spread) << "\n";
  out << "seed = " << c.dataset.seed << "\n";
  out << "shift_shadow = " << (c.dataset.shift_shadow ? "true" : "false") << "\n";
  out << "shift_offset = " << format_double(c.dataset.shift_offset) << "\n";
  out << "path = " << c.dataset.path << "\n";
  out << "images = " << c.dataset.images << "\n";
  out << "labels = " << c.dataset.labels << "\n";
  out << "\n[split]\n";
  out << "target_size = " << c.target_size << "\n";
  out << "eval_size = " << c.eval_size << "\n";
  out << "seed = " << c.split_seed << "\n";
  out << "\n[target]\n";
  out << "hidden = " << join_ints(c.target.hidden) << "\n";
  out << "activation = " << to_string(c.target.activation) << "\n";
  out << "init_seed = " << c.target.init_seed << "\n";
  out << "\n[train]\n";
  out << "steps = " << c.train.steps << "\n";
  out << "batch_size = " << c.train.batch_size << "\n";
  out << "learning_rate = " << format_double(c.train.learning_rate) << "\n";
  out << "momentum = " << format_double(c.train.momentum) << "\n";
  out << "weight_decay = " << format_double(c.train.weight_decay) << "\n";
  out << "shuffle_seed = " << c.train.shuffle_seed << "\n";
  out << "\n[shadow]\n";
  out << "count = " << c.shadow.count << "\n";
  out << "hidden = " << join_ints(c.shadow.hidden) << "\n";
  out << "alt_hidden = " << join_ints(c.shadow.alt_hidden) << "\n";
  out << "activation = " << to_string(c.shadow.activation) << "\n";
  out << "init_seed_base = " << c.shadow.init_seed_base << "\n";
  out << "subset_seed_base = " << c.shadow.subset_seed_base << "\n";
  out << "subset_size = " << c.shadow.subset_size << "\n";
  out << "mode = " << to_string(c.shadow.mode) << "\n";
  out << "parallelism = " << c.shadow.parallelism << "\n";
  out << "\n[distill]\n";
  out << "alpha = " << format_double(c.distill.alpha) << "\n";
  out << "tau = " << format_double(c.distill.temperature) << "\n";
  out << "steps = " << c.distill.steps << "\n";
  out << "batch_size = " << c.distill.batch_size << "\n";
  out << "learning_rate = " << format_double(c.distill.learning_rate) << "\n";
  out << "seed = " << c.distill.seed << "\n";
  out << "allow_reconstruction = "
      << (c.distill.allow_reconstruction ? "true" : "false") << "\n";
  out << "\n[attack]\n";
  out << "num_queries = " << c.attack.num_queries << "\n";
  out << "aug_sigma = " << format_double(c.attack.aug_sigma) << "\n";
  out << "aug_seed = " << c.attack.aug_seed << "\n";
  out << "var_floor = " << format_double(c.attack.var_floor) << "\n";
  out << "teacher_mode = " << to_string(c.attack.teacher_mode) << "\n";
  out << "image_rows = " << c.attack.image_rows << "\n";
  out << "image_cols = " << c.attack.image_cols << "\n";
  out << "\n[report]\n";
  out << "fpr_grid = " << join_doubles(c.fpr_grid) << "\n";
  out << "\n[output]\n";
  out << "dir = " << c.output_dir << "\n";
  return out.str();
}

std::string config_hash(const ExperimentConfig& config) {
  const std::uint64_t h = fnv1a64(config_to_string(config));
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return std::string(buf);
}

ExperimentConfig default_toy_config() {
  ExperimentConfig c;
  c.dataset.kind = "synthetic";
  c.dataset.classes = 2;
  c.dataset.dim = 16;
  c.dataset.per_class = 1024;
  c.dataset.spread = 1.0;
  c.dataset.seed = 7;
  c.target_size = 512;
  c.eval_size = 128;
  c.split_seed = 11;
  c.target.hidden = {32};
  c.target.init_seed = 101;
  c.train.steps = 3000;
  c.train.batch_size = 32;
  c.train.learning_rate = 0.1;
  c.train.momentum = 0.9;
  c.train.weight_decay = 5e-4;
  c.train.shuffle_seed = 31;
  c.shadow.count = 16;
  c.shadow.hidden = {32};
  c.shadow.alt_hidden = {24, 24};
  c.shadow.init_seed_base = 1000;
  c.shadow.subset_seed_base = 2000;
  c.shadow.subset_size = 0;
  c.shadow.mode = TrainingMode::kPlain;
  c.shadow.parallelism = 1;
  c.distill.alpha = 1.0;
  c.distill.temperature = 1.0;
  c.distill.steps = 3000;
  c.distill.batch_size = 32;
  // Stable for both distillation variants against an overfit teacher; the
  // logit-matching objective diverges well before the cross-entropy rate.
  c.distill.learning_rate = 0.01;
  c.distill.seed = 41;
  c.attack.num_queries = 10;
  c.attack.aug_sigma = 0.05;
  c.attack.aug_seed = 51;
  c.attack.var_floor = kDefaultVarFloor;
  c.attack.teacher_mode = TeacherMode::kLogits;
  c.fpr_grid = {1e-4, 1e-3, 1e-2};
  c.output_dir = "out";
  return c;
}

void apply_seed_override(ExperimentConfig& config, std::uint64_t master_seed) {
  // Fixed derivation order; changing it would silently change every run.
  std::mt19937_64 rng = make_rng({master_seed, 0x4f56});
  config.dataset.seed = rng();
  config.split_seed = rng();
  config.target.init_seed = rng();
  config.train.shuffle_seed = rng();
  config.shadow.init_seed_base = rng();
  config.shadow.subset_seed_base = rng();
  config.distill.seed = rng();
  config.attack.aug_seed = rng();
}

void apply_mode_override(ExperimentConfig& config, const std::string& mode) {
  config.shadow.mode = training_mode_from_string(mode);
}

// ---------------------------------------------------------------------------
// Data and stages
// ---------------------------------------------------------------------------

DataBundle prepare_data(const ExperimentConfig& config) {
  config.validate();
  DataBundle bundle;
  if (config.dataset.kind == "synthetic") {
    bundle.data = make_synthetic(config.dataset.classes, config.dataset.dim,
                                 config.dataset.per_class, config.dataset.spread,
                                 config.dataset.seed);
    if (config.dataset.shift_shadow) {
      // Same seed, same labels and noise draws, shifted class centers: row i
      // of the shifted set is the displaced counterpart of row i.
      bundle.shadow_data = make_synthetic(
          config.dataset.classes, config.dataset.dim, config.dataset.per_class,
          config.dataset.spread, config.dataset.seed, config.dataset.shift_offset);
    } else {
      bundle.shadow_data = bundle.data;
    }
  } else if (config.dataset.kind == "jsonl") {
    bundle.data = load_jsonl(config.dataset.path);
    bundle.shadow_data = bundle.data;
  } else {
    bundle.data = load_idx_dataset(config.dataset.images, config.dataset.labels);
    bundle.shadow_data = bundle.data;
  }
  bundle.data.validate();
  bundle.plan = split_experiment(
      bundle.data, {config.target_size, config.eval_size}, config.split_seed);
  return bundle;
}

std::string target_path(const ExperimentConfig& config) {
  return config.output_dir + "/target.json";
}

std::string shadow_path(const ExperimentConfig& config, std::size_t index) {
  char name[32];
  std::snprintf(name, sizeof(name), "shadow_%03zu.json", index);
  return config.output_dir + "/" + name;
}

std::string manifest_path(const ExperimentConfig& config) {
  return config.output_dir + "/manifest.json";
}

std::string scores_path(const ExperimentConfig& config) {
  return config.output_dir + "/scores.csv";
}

std::string metrics_path(const ExperimentConfig& config) {
  return config.output_dir + "/metrics.json";
}

namespace {

class StageTimer {
 public:
  StageTimer() : start_(std::chrono::steady_clock::now()) {}
  std::int64_t elapsed_ms() const {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::steady_clock::now() - start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

json load_manifest_or_empty(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return json::object();
  json m = json::parse(in, nullptr, false);
  if (m.is_discarded() || !m.is_object()) {
    throw ConfigError("manifest is not valid JSON: " + path);
  }
  return m;
}

void save_manifest(const json& manifest, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write manifest: " + path);
  out << manifest.dump(2) << '\n';
}

// Opens the manifest for a stage after the first, requiring a hash match so
// stages never silently mix artifacts from different configs.
json require_manifest(const ExperimentConfig& config) {
  const std::string path = manifest_path(config);
  std::ifstream probe(path, std::ios::binary);
  if (!probe) {
    throw MissingArtifact("manifest not found (run run-target first): " + path);
  }
  probe.close();
  json m = load_manifest_or_empty(path);
  const std::string expected = config_hash(config);
  if (!m.contains("config_hash") || m["config_hash"] != expected) {
    throw ConfigError("manifest at " + path +
                      " was produced by a different config");
  }
  return m;
}

ArchitectureSpec make_arch(int feature_dim, int num_classes,
                           const std::vector<int>& hidden,
                           Activation activation, std::uint64_t init_seed) {
  ArchitectureSpec spec;
  spec.layer_widths.push_back(feature_dim);
  for (int h : hidden) spec.layer_widths.push_back(h);
  spec.layer_widths.push_back(num_classes);
  spec.activation = activation;
  spec.init_scheme = "fanin-uniform";
  spec.init_seed = init_seed;
  return spec;
}

AugmentConfig make_aug_config(const ExperimentConfig& config) {
  AugmentConfig aug;
  aug.sigma = config.attack.aug_sigma;
  aug.image_rows = config.attack.image_rows;
  aug.image_cols = config.attack.image_cols;
  return aug;
}

Classifier train_target_model(const ExperimentConfig& config,
                              const DataBundle& bundle, double* train_acc,
                              double* eval_acc) {
  Dataset train_set =
      subset(bundle.data, bundle.plan.target_train_ids, "target_train");
  ArchitectureSpec arch =
      make_arch(bundle.data.feature_dim, bundle.data.num_classes,
                config.target.hidden, config.target.activation,
                config.target.init_seed);
  Classifier model = train(init_classifier(arch), train_set, config.train);
  if (train_acc != nullptr) *train_acc = accuracy(model, train_set);
  if (eval_acc != nullptr) {
    std::vector<std::size_t> eval_ids = bundle.plan.member_eval_ids;
    eval_ids.insert(eval_ids.end(), bundle.plan.nonmember_eval_ids.begin(),
                    bundle.plan.nonmember_eval_ids.end());
    *eval_acc = accuracy(model, subset(bundle.data, eval_ids, "eval"));
  }
  return model;
}

DistillVariant variant_for(TrainingMode mode) {
  if (mode == TrainingMode::kDistilledKl) return DistillVariant::kKl;
  if (mode == TrainingMode::kDistilledMse) return DistillVariant::kMse;
  throw ConfigError("plain mode has no distillation variant");
}

// Trains one shadow. Pure function of (config, bundle, teacher, index), which
// is what makes parallel and serial ensemble training interchangeable.
ShadowModel train_one_shadow(const ExperimentConfig& config,
                             const DataBundle& bundle,
                             const TeacherOracle* teacher, bool use_alt_arch,
                             std::size_t index) {
  ShadowModel shadow;
  shadow.shadow_seed = config.shadow.subset_seed_base + index;
  shadow.subset_ids = sample_shadow_indices(
      bundle.plan, config.shadow_subset_size(), shadow.shadow_seed);
  Dataset shadow_set =
      subset(bundle.shadow_data, shadow.subset_ids, "shadow_subset");

  const std::vector<int>& hidden =
      use_alt_arch ? config.shadow.alt_hidden : config.shadow.hidden;
  ArchitectureSpec arch = make_arch(
      bundle.data.feature_dim, bundle.data.num_classes, hidden,
      config.shadow.activation, config.shadow.init_seed_base + index);

  if (config.shadow.mode == TrainingMode::kPlain) {
    TrainConfig tc = config.train;
    tc.shuffle_seed = config.train.shuffle_seed + index;
    shadow.model = train(init_classifier(arch), shadow_set, tc);
  } else {
    DistillConfig dc = config.distill;
    dc.variant = variant_for(config.shadow.mode);
    dc.seed = config.distill.seed + index;
    shadow.model = distill(*teacher, shadow_set, arch, dc);
  }
  return shadow;
}

ShadowEnsemble train_shadow_ensemble(const ExperimentConfig& config,
                                     const DataBundle& bundle,
                                     const TeacherOracle* teacher,
                                     bool use_alt_arch) {
  if (config.shadow.mode != TrainingMode::kPlain && teacher == nullptr) {
    throw MissingArtifact("distilled shadow modes require a trained target");
  }
  ShadowEnsemble ensemble;
  ensemble.mode = config.shadow.mode;
  ensemble.shadows.resize(config.shadow.count);

  const std::size_t workers =
      std::min(config.shadow.parallelism, config.shadow.count);
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;

  auto work = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= config.shadow.count) return;
      try {
        ensemble.shadows[i] =
            train_one_shadow(config, bundle, teacher, use_alt_arch, i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };

  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (std::thread& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);
  return ensemble;
}

struct AttackOutcome {
  std::vector<AttackScore> scores;
  std::vector<bool> is_member;
  MetricsReport report;
};

AttackOutcome score_eval_set(const ExperimentConfig& config,
                             const DataBundle& bundle, const Classifier& target,
                             const ShadowEnsemble& ensemble) {
  ClassifierTeacher oracle(target, config.attack.teacher_mode);
  AugmentConfig aug = make_aug_config(config);
  AttackOutcome outcome;

  auto score_one = [&](std::size_t row, bool member) {
    const Example& ex = bundle.data.examples[row];
    AttackScore s = glira_score(oracle, ex, ensemble, config.attack.num_queries,
                                config.attack.aug_seed + row,
                                config.attack.var_floor, aug, row);
    outcome.scores.push_back(s);
    outcome.is_member.push_back(member);
  };
  for (std::size_t row : bundle.plan.member_eval_ids) score_one(row, true);
  for (std::size_t row : bundle.plan.nonmember_eval_ids) score_one(row, false);

  std::vector<double> values;
  values.reserve(outcome.scores.size());
  for (const AttackScore& s : outcome.scores) values.push_back(s.score);
  outcome.report = evaluate(values, outcome.is_member, config.fpr_grid);
  return outcome;
}

void write_scores_csv(const AttackOutcome& outcome, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open scores csv for writing: " + path);
  out << "example_id,true_membership,score,conf_obs,mu_out,var_out\n";
  for (std::size_t i = 0; i < outcome.scores.size(); ++i) {
    const AttackScore& s = outcome.scores[i];
    out << s.example_id << ',' << (outcome.is_member[i] ? 1 : 0) << ','
        << format_double(s.score) << ',' << format_double(s.conf_obs) << ','
        << format_double(s.mu_out) << ',' << format_double(s.var_out) << '\n';
  }
}

json metrics_to_json_value(const MetricsReport& report) {
  json j;
  j["auc"] = report.auc;
  j["num_members"] = report.num_members;
  j["num_nonmembers"] = report.num_nonmembers;
  json cells = json::array();
  for (const TprCell& cell : report.tpr_at) {
    cells.push_back({{"fpr_target", cell.fpr_target},
                     {"tpr", cell.tpr},
                     {"insufficient_n", cell.insufficient_n}});
  }
  j["tpr_at_fpr"] = cells;
  return j;
}

}  // namespace

void run_target(const ExperimentConfig& config) {
  StageTimer timer;
  DataBundle bundle = prepare_data(config);
  fs::create_directories(config.output_dir);

  double train_acc = 0.0;
  double eval_acc = 0.0;
  Classifier model = train_target_model(config, bundle, &train_acc, &eval_acc);
  save_classifier(model, target_path(config));

  // run-target starts a fresh manifest; later stages append to it.
  json manifest;
  manifest["config_hash"] = config_hash(config);
  manifest["config"] = config_to_string(config);
  json stage;
  stage["path"] = target_path(config);
  stage["train_accuracy"] = train_acc;
  stage["eval_accuracy"] = eval_acc;
  stage["seeds"] = {{"dataset", config.dataset.seed},
                    {"split", config.split_seed},
                    {"init", config.target.init_seed},
                    {"shuffle", config.train.shuffle_seed}};
  stage["wall_ms"] = timer.elapsed_ms();
  manifest["stages"]["target"] = stage;
  save_manifest(manifest, manifest_path(config));
}

void run_shadows(const ExperimentConfig& config) {
  StageTimer timer;
  DataBundle bundle = prepare_data(config);
  json manifest = require_manifest(config);

  Classifier target;
  std::unique_ptr<ClassifierTeacher> teacher;
  if (config.shadow.mode != TrainingMode::kPlain) {
    target = load_classifier(target_path(config));
    teacher = std::make_unique<ClassifierTeacher>(target,
                                                  config.attack.teacher_mode);
  }

  ShadowEnsemble ensemble =
      train_shadow_ensemble(config, bundle, teacher.get(), false);

  json paths = json::array();
  json subset_ids = json::array();
  for (std::size_t i = 0; i < ensemble.shadows.size(); ++i) {
    const std::string path = shadow_path(config, i);
    save_classifier(ensemble.shadows[i].model, path);
    paths.push_back(path);
    subset_ids.push_back(ensemble.shadows[i].subset_ids);
  }

  const bool reconstruction_enabled =
      config.shadow.mode == TrainingMode::kDistilledMse &&
      config.attack.teacher_mode == TeacherMode::kProbabilities &&
      config.distill.allow_reconstruction;

  json stage;
  stage["mode"] = to_string(config.shadow.mode);
  stage["count"] = ensemble.shadows.size();
  stage["paths"] = paths;
  stage["subset_ids"] = subset_ids;
  stage["seeds"] = {{"init_base", config.shadow.init_seed_base},
                    {"subset_base", config.shadow.subset_seed_base},
                    {"distill", config.distill.seed}};
  stage["reconstruction_enabled"] = reconstruction_enabled;
  if (config.shadow.mode != TrainingMode::kPlain &&
      config.attack.teacher_mode == TeacherMode::kProbabilities) {
    // How faithful reconstructed teacher logits are on this shadow pool.
    std::vector<std::size_t> sample_ids(
        bundle.plan.shadow_pool_ids.begin(),
        bundle.plan.shadow_pool_ids.begin() +
            std::min<std::size_t>(bundle.plan.shadow_pool_ids.size(), 128));
    ReconstructionReport rec = reconstruction_report(
        target, subset(bundle.shadow_data, sample_ids, "reconstruction_sample"));
    stage["reconstruction_report"] = {
        {"mean_abs_error", rec.mean_abs_error},
        {"max_abs_error", rec.max_abs_error},
        {"logit_sum_estimate", rec.logit_sum_estimate}};
  }
  stage["wall_ms"] = timer.elapsed_ms();
  manifest["stages"]["shadows"] = stage;
  save_manifest(manifest, manifest_path(config));
}

MetricsReport run_attack(const ExperimentConfig& config) {
  StageTimer timer;
  DataBundle bundle = prepare_data(config);
  json manifest = require_manifest(config);

  Classifier target = load_classifier(target_path(config));
  if (!manifest["stages"].contains("shadows")) {
    throw MissingArtifact("shadow stage has not run (run run-shadows first)");
  }
  ShadowEnsemble ensemble;
  ensemble.mode = config.shadow.mode;
  const std::size_t count = manifest["stages"]["shadows"]["count"];
  for (std::size_t i = 0; i < count; ++i) {
    ShadowModel shadow;
    shadow.model = load_classifier(shadow_path(config, i));
    shadow.shadow_seed = config.shadow.subset_seed_base + i;
    ensemble.shadows.push_back(std::move(shadow));
  }

  AttackOutcome outcome = score_eval_set(config, bundle, target, ensemble);
  write_scores_csv(outcome, scores_path(config));

  std::vector<double> values;
  for (const AttackScore& s : outcome.scores) values.push_back(s.score);
  RocCurve curve = roc(values, outcome.is_member);
  save_roc_csv(curve, config.output_dir + "/roc.csv");
  save_roc_json(curve, config.output_dir + "/roc.json");
  save_metrics_json(outcome.report, metrics_path(config));

  json stage;
  stage["scores"] = scores_path(config);
  stage["metrics"] = metrics_path(config);
  stage["roc"] = config.output_dir + "/roc.csv";
  stage["num_scores"] = outcome.scores.size();
  stage["seeds"] = {{"aug", config.attack.aug_seed}};
  stage["metrics_summary"] = metrics_to_json_value(outcome.report);
  stage["wall_ms"] = timer.elapsed_ms();
  manifest["stages"]["attack"] = stage;
  save_manifest(manifest, manifest_path(config));
  return outcome.report;
}

// ---------------------------------------------------------------------------
// Sweeps and the comparative report
// ---------------------------------------------------------------------------

namespace {

void apply_sweep_value(ExperimentConfig& config, const std::string& parameter,
                       double value) {
  if (parameter == "alpha") {
    config.distill.alpha = value;
  } else if (parameter == "tau") {
    config.distill.temperature = value;
  } else if (parameter == "shadow_size") {
    config.shadow.subset_size = static_cast<std::size_t>(value);
  } else if (parameter == "N") {
    config.shadow.count = static_cast<std::size_t>(value);
  } else {
    throw ConfigError("unknown sweep parameter: " + parameter +
                      " (expected alpha, tau, shadow_size, or N)");
  }
}

// Full in-memory pipeline for one configuration; used by sweep and report so
// they can share a target without staging through the manifest.
MetricsReport run_pipeline_in_memory(const ExperimentConfig& config,
                                     const DataBundle& bundle,
                                     const Classifier& target,
                                     bool use_alt_arch) {
  std::unique_ptr<ClassifierTeacher> teacher;
  const TeacherOracle* oracle = nullptr;
  if (config.shadow.mode != TrainingMode::kPlain) {
    teacher = std::make_unique<ClassifierTeacher>(target,
                                                  config.attack.teacher_mode);
    oracle = teacher.get();
  }
  ShadowEnsemble ensemble =
      train_shadow_ensemble(config, bundle, oracle, use_alt_arch);
  return score_eval_set(config, bundle, target, ensemble).report;
}

std::string tpr_columns_header(const std::vector<double>& grid) {
  std::string header;
  for (double f : grid) {
    header += ",tpr_at_";
    header += format_double(f);
  }
  return header;
}

std::string tpr_columns_row(const MetricsReport& report) {
  std::string row;
  for (const TprCell& cell : report.tpr_at) {
    row += ',';
    row += format_double(cell.tpr);
    if (cell.insufficient_n) row += " (insufficient n)";
  }
  return row;
}

}  // namespace

void sweep(const ExperimentConfig& config, const std::string& parameter,
           const std::vector<double>& values) {
  if (values.empty()) throw ConfigError("sweep requires at least one value");
  {
    ExperimentConfig probe = config;
    apply_sweep_value(probe, parameter, values.front());
  }
  fs::create_directories(config.output_dir);

  std::ofstream out(config.output_dir + "/sweep.csv", std::ios::binary);
  if (!out) {
    throw ConfigError("cannot open sweep csv for writing: " +
                      config.output_dir + "/sweep.csv");
  }
  out << "parameter,value,status,auc" << tpr_columns_header(config.fpr_grid)
      << "\n";

  for (std::size_t i = 0; i < values.size(); ++i) {
    ExperimentConfig run_config = config;
    apply_sweep_value(run_config, parameter, values[i]);
    char sub[32];
    std::snprintf(sub, sizeof(sub), "/sweep_%03zu", i);
    run_config.output_dir = config.output_dir + sub;
    try {
      run_config.validate();
      fs::create_directories(run_config.output_dir);
      run_target(run_config);
      run_shadows(run_config);
      MetricsReport report = run_attack(run_config);
      out << parameter << ',' << format_double(values[i]) << ",ok,"
          << format_double(report.auc) << tpr_columns_row(report) << "\n";
    } catch (const std::exception& e) {
      std::string message = e.what();
      for (char& ch : message) {
        if (ch == ',' || ch == '\n') ch = ' ';
      }
      out << parameter << ',' << format_double(values[i]) << ",error: " << message
          << ",," << "\n";
    }
  }
}

void comparative_report(const ExperimentConfig& config) {
  DataBundle bundle = prepare_data(config);
  fs::create_directories(config.output_dir);

  double train_acc = 0.0;
  double eval_acc = 0.0;
  Classifier target = train_target_model(config, bundle, &train_acc, &eval_acc);

  const TrainingMode modes[] = {TrainingMode::kPlain, TrainingMode::kDistilledKl,
                                TrainingMode::kDistilledMse};
  json rows = json::array();
  std::ofstream csv(config.output_dir + "/report.csv", std::ios::binary);
  if (!csv) {
    throw ConfigError("cannot open report csv for writing: " +
                      config.output_dir + "/report.csv");
  }
  csv << "mode,architecture,auc" << tpr_columns_header(config.fpr_grid) << "\n";

  for (TrainingMode mode : modes) {
    for (bool alt : {false, true}) {
      ExperimentConfig run_config = config;
      run_config.shadow.mode = mode;
      MetricsReport report =
          run_pipeline_in_memory(run_config, bundle, target, alt);
      const std::string arch_label = alt ? "different" : "same";
      json row = metrics_to_json_value(report);
      row["mode"] = to_string(mode);
      row["architecture"] = arch_label;
      rows.push_back(row);
      csv << to_string(mode) << ',' << arch_label << ','
          << format_double(report.auc) << tpr_columns_row(report) << "\n";
    }
  }

  json report_json;
  report_json["config_hash"] = config_hash(config);
  report_json["shifted"] = config.dataset.shift_shadow;
  report_json["target"] = {{"train_accuracy", train_acc},
                           {"eval_accuracy", eval_acc}};
  report_json["rows"] = rows;
  std::ofstream out(config.output_dir + "/report.json", std::ios::binary);
  if (!out) {
    throw ConfigError("cannot open report json for writing: " +
                      config.output_dir + "/report.json");
  }
  out << report_json.dump(2) << '\n';
}

}  // namespace mialab
