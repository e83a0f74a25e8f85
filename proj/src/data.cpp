// SPDX-License-Identifier: Apache-2.0
#include "mialab/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace mialab {

void Dataset::validate(bool require_all_classes) const {
  if (num_classes < 1) throw ConfigError("dataset: num_classes must be >= 1");
  if (feature_dim < 1) throw ConfigError("dataset: feature_dim must be >= 1");
  std::vector<char> seen(static_cast<std::size_t>(num_classes), 0);
  for (const Example& ex : examples) {
    if (static_cast<int>(ex.features.size()) != feature_dim)
      throw ShapeError("dataset: example feature length != feature_dim");
    if (ex.label < 0 || ex.label >= num_classes)
      throw ConfigError("dataset: label out of range");
    for (double v : ex.features)
      if (!std::isfinite(v))
        throw ConfigError("dataset: non-finite feature value");
    seen[static_cast<std::size_t>(ex.label)] = 1;
  }
  if (require_all_classes)
    for (int k = 0; k < num_classes; ++k)
      if (!seen[static_cast<std::size_t>(k)])
        throw ConfigError("dataset: class " + std::to_string(k) +
                          " has no examples");
}

Dataset make_synthetic(int num_classes, int feature_dim, std::size_t per_class,
                       double spread, std::uint64_t seed,
                       double center_offset) {
  if (num_classes < 2) throw ConfigError("make_synthetic: need >= 2 classes");
  if (feature_dim < 1) throw ConfigError("make_synthetic: need dim >= 1");
  if (per_class < 1) throw ConfigError("make_synthetic: need per_class >= 1");
  if (!(spread > 0.0)) throw ConfigError("make_synthetic: spread must be > 0");

  auto rng = make_rng({seed});
  std::normal_distribution<double> unit(0.0, 1.0);

  // Draw raw centers, then rescale so min pairwise distance is exactly 2.
  std::vector<std::vector<double>> centers(
      static_cast<std::size_t>(num_classes));
  double min_dist = 0.0;
  do {
    for (auto& c : centers) {
      c.resize(static_cast<std::size_t>(feature_dim));
      for (double& v : c) v = unit(rng);
    }
    min_dist = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < centers.size(); ++a)
      for (std::size_t b = a + 1; b < centers.size(); ++b) {
        double d2 = 0.0;
        for (int j = 0; j < feature_dim; ++j) {
          double diff = centers[a][static_cast<std::size_t>(j)] -
                        centers[b][static_cast<std::size_t>(j)];
          d2 += diff * diff;
        }
        min_dist = std::min(min_dist, std::sqrt(d2));
      }
  } while (!(min_dist > 1e-9));  // coincident draws are astronomically rare

  double scale = 2.0 / min_dist;
  for (auto& c : centers)
    for (double& v : c) v = v * scale + center_offset;

  Dataset ds;
  ds.num_classes = num_classes;
  ds.feature_dim = feature_dim;
  ds.provenance = "synthetic-blobs";
  ds.examples.reserve(static_cast<std::size_t>(num_classes) * per_class);
  for (int k = 0; k < num_classes; ++k) {
    const auto& c = centers[static_cast<std::size_t>(k)];
    for (std::size_t i = 0; i < per_class; ++i) {
      Example ex;
      ex.label = k;
      ex.features.resize(static_cast<std::size_t>(feature_dim));
      for (int j = 0; j < feature_dim; ++j)
        ex.features[static_cast<std::size_t>(j)] =
            c[static_cast<std::size_t>(j)] + spread * unit(rng);
      ds.examples.push_back(std::move(ex));
    }
  }
  return ds;
}

namespace {

// First k entries of a seeded Fisher-Yates pass, sorted.
std::vector<std::size_t> sample_without_replacement(
    std::vector<std::size_t> pool, std::size_t k, std::mt19937_64& rng) {
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(k);
  std::sort(pool.begin(), pool.end());
  return pool;
}

}  // namespace

SplitPlan split_experiment(const Dataset& dataset, SplitSizes sizes,
                           std::uint64_t seed) {
  const std::size_t n = dataset.size();
  if (sizes.target < 1) throw ConfigError("split: target size must be >= 1");
  if (sizes.eval < 1) throw ConfigError("split: eval size must be >= 1");
  if (sizes.eval > sizes.target)
    throw ConfigError("split: eval size exceeds target size");
  if (sizes.target + sizes.eval > n)
    throw ConfigError(
        "split: target + eval sizes exceed the dataset; no shadow pool "
        "remains");

  auto rng = make_rng({seed, 0x5350u});  // "SP"
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  std::shuffle(all.begin(), all.end(), rng);

  SplitPlan plan;
  plan.seed = seed;
  plan.target_train_ids.assign(all.begin(),
                               all.begin() + static_cast<long>(sizes.target));
  plan.shadow_pool_ids.assign(all.begin() + static_cast<long>(sizes.target),
                              all.end());
  std::sort(plan.target_train_ids.begin(), plan.target_train_ids.end());
  std::sort(plan.shadow_pool_ids.begin(), plan.shadow_pool_ids.end());

  plan.member_eval_ids =
      sample_without_replacement(plan.target_train_ids, sizes.eval, rng);
  plan.nonmember_eval_ids =
      sample_without_replacement(plan.shadow_pool_ids, sizes.eval, rng);
  return plan;
}

std::vector<std::size_t> sample_shadow_indices(const SplitPlan& plan,
                                               std::size_t size,
                                               std::uint64_t shadow_seed) {
  if (size > plan.shadow_pool_ids.size())
    throw ConfigError("shadow subset size exceeds the shadow pool");
  auto rng = make_rng({plan.seed, shadow_seed, 0x5348u});  // "SH"
  return sample_without_replacement(plan.shadow_pool_ids, size, rng);
}

Dataset subset(const Dataset& dataset, const std::vector<std::size_t>& ids,
               std::string provenance) {
  Dataset out;
  out.num_classes = dataset.num_classes;
  out.feature_dim = dataset.feature_dim;
  out.provenance = std::move(provenance);
  out.examples.reserve(ids.size());
  for (std::size_t id : ids) {
    if (id >= dataset.size())
      throw ConfigError("subset: index out of range");
    out.examples.push_back(dataset.examples[id]);
  }
  return out;
}

Dataset sample_shadow_subset(const SplitPlan& plan, const Dataset& dataset,
                             std::size_t size, std::uint64_t shadow_seed) {
  return subset(dataset, sample_shadow_indices(plan, size, shadow_seed),
                "shadow-subset");
}

std::vector<Example> augment(const Example& example, std::size_t num_queries,
                             std::uint64_t seed, const AugmentConfig& config) {
  if (num_queries < 1) throw ConfigError("augment: num_queries must be >= 1");
  const int d = static_cast<int>(example.features.size());
  const bool image_shaped =
      config.image_rows > 0 && config.image_cols > 0 &&
      config.image_rows * config.image_cols == d;
  if ((config.image_rows > 0 || config.image_cols > 0) && !image_shaped)
    throw ConfigError("augment: image shape does not match feature_dim");

  std::vector<Example> out;
  out.reserve(num_queries);
  out.push_back(example);  // identity first, so 1 query == no augmentation

  auto rng = make_rng({seed, 0x4155u});  // "AU"
  std::normal_distribution<double> unit(0.0, 1.0);
  for (std::size_t q = 1; q < num_queries; ++q) {
    Example v = example;
    if (image_shaped) {
      const int rows = config.image_rows, cols = config.image_cols;
      std::uniform_int_distribution<int> flip(0, 1);
      std::uniform_int_distribution<int> shift(-config.max_shift,
                                               config.max_shift);
      bool do_flip = flip(rng) == 1;
      int dx = shift(rng), dy = shift(rng);
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
          int sc = do_flip ? cols - 1 - c : c;
          int src_r = r - dy, src_c = sc - dx;
          double px = 0.0;
          if (src_r >= 0 && src_r < rows && src_c >= 0 && src_c < cols)
            px = example.features[static_cast<std::size_t>(src_r * cols +
                                                           src_c)];
          v.features[static_cast<std::size_t>(r * cols + c)] = px;
        }
    } else {
      for (double& f : v.features) f += config.sigma * unit(rng);
      if (config.sign_flip) {
        std::uniform_int_distribution<int> coin(0, 1);
        std::uniform_int_distribution<int> which(0, d - 1);
        if (coin(rng) == 1) {
          std::size_t j = static_cast<std::size_t>(which(rng));
          v.features[j] = -v.features[j];
        }
      }
    }
    out.push_back(std::move(v));
  }
  return out;
}

namespace {

std::uint32_t read_be32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw ConfigError("idx: truncated header in " + path);
  return (static_cast<std::uint32_t>(b[0]) << 24) |
         (static_cast<std::uint32_t>(b[1]) << 16) |
         (static_cast<std::uint32_t>(b[2]) << 8) |
         static_cast<std::uint32_t>(b[3]);
}

}  // namespace

IdxImages load_idx_images(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("idx: cannot open " + path);
  if (read_be32(in, path) != 0x00000803u)
    throw ConfigError("idx: bad image magic in " + path);
  std::uint32_t count = read_be32(in, path);
  std::uint32_t rows = read_be32(in, path);
  std::uint32_t cols = read_be32(in, path);
  IdxImages out;
  out.rows = static_cast<int>(rows);
  out.cols = static_cast<int>(cols);
  const std::size_t px = static_cast<std::size_t>(rows) * cols;
  out.images.reserve(count);
  std::vector<unsigned char> buf(px);
  for (std::uint32_t i = 0; i < count; ++i) {
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<long>(px));
    if (!in) throw ConfigError("idx: truncated image payload in " + path);
    std::vector<double> img(px);
    for (std::size_t j = 0; j < px; ++j) img[j] = buf[j] / 255.0;
    out.images.push_back(std::move(img));
  }
  return out;
}

std::vector<int> load_idx_labels(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("idx: cannot open " + path);
  if (read_be32(in, path) != 0x00000801u)
    throw ConfigError("idx: bad label magic in " + path);
  std::uint32_t count = read_be32(in, path);
  std::vector<int> labels(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    unsigned char b = 0;
    in.read(reinterpret_cast<char*>(&b), 1);
    if (!in) throw ConfigError("idx: truncated label payload in " + path);
    labels[i] = static_cast<int>(b);
  }
  return labels;
}

Dataset load_idx_dataset(const std::string& images_path,
                         const std::string& labels_path, int num_classes) {
  IdxImages imgs = load_idx_images(images_path);
  std::vector<int> labels = load_idx_labels(labels_path);
  if (imgs.images.size() != labels.size())
    throw ConfigError("idx: image/label counts differ");
  Dataset ds;
  ds.feature_dim = imgs.rows * imgs.cols;
  ds.provenance = "idx:" + images_path;
  int max_label = 0;
  for (int l : labels) max_label = std::max(max_label, l);
  ds.num_classes = num_classes > 0 ? num_classes : max_label + 1;
  ds.examples.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i)
    ds.examples.push_back({std::move(imgs.images[i]), labels[i]});
  ds.validate();
  return ds;
}

void save_jsonl(const Dataset& dataset, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("jsonl: cannot open " + path + " for writing");
  for (const Example& ex : dataset.examples) {
    nlohmann::json row;
    row["label"] = ex.label;
    row["features"] = ex.features;
    out << row.dump() << "\n";
  }
}

Dataset load_jsonl(const std::string& path, int num_classes) {
  std::ifstream in(path);
  if (!in) throw ConfigError("jsonl: cannot open " + path);
  Dataset ds;
  ds.provenance = "jsonl:" + path;
  std::string line;
  int max_label = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json row = nlohmann::json::parse(line, nullptr, false);
    if (row.is_discarded() || !row.contains("label") ||
        !row.contains("features"))
      throw ConfigError("jsonl: malformed line in " + path);
    Example ex;
    ex.label = row["label"].get<int>();
    ex.features = row["features"].get<std::vector<double>>();
    max_label = std::max(max_label, ex.label);
    if (ds.examples.empty())
      ds.feature_dim = static_cast<int>(ex.features.size());
    ds.examples.push_back(std::move(ex));
  }
  if (ds.examples.empty()) throw ConfigError("jsonl: no examples in " + path);
  ds.num_classes = num_classes > 0 ? num_classes : max_label + 1;
  ds.validate();
  return ds;
}

}  // namespace mialab
