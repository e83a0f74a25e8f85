// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mialab/common.hpp"

namespace mialab {

// One labeled sample: a real feature vector and a class index in [0, K).
struct Example {
  std::vector<double> features;
  int label = 0;
};

struct Dataset {
  std::vector<Example> examples;
  int num_classes = 0;
  int feature_dim = 0;
  std::string provenance;

  std::size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }

  // Checks shared feature_dim, label range and finiteness; optionally that
  // every class is represented (training datasets).
  void validate(bool require_all_classes = false) const;
};

// Disjoint experiment partition over dataset indices.
//   target_train_ids  - the challenger's secret member set
//   shadow_pool_ids   - complement of the target set; all shadow training
//                       subsets and the evaluation non-members come from here
//   member_eval_ids   - balanced member sample, subset of target_train_ids
//   nonmember_eval_ids- balanced non-member sample, subset of shadow_pool_ids
struct SplitPlan {
  std::vector<std::size_t> target_train_ids;
  std::vector<std::size_t> shadow_pool_ids;
  std::vector<std::size_t> nonmember_eval_ids;
  std::vector<std::size_t> member_eval_ids;
  std::uint64_t seed = 0;
};

struct SplitSizes {
  std::size_t target = 0;
  std::size_t eval = 0;
};

// K Gaussian blobs with distinct means. Class means are drawn from the seed
// and rescaled so the minimum pairwise center distance is exactly 2, making
// `spread` the single knob for class overlap. `center_offset` translates all
// means by a constant (used to model a shifted shadow distribution).
Dataset make_synthetic(int num_classes, int feature_dim, std::size_t per_class,
                       double spread, std::uint64_t seed,
                       double center_offset = 0.0);

SplitPlan split_experiment(const Dataset& dataset, SplitSizes sizes,
                           std::uint64_t seed);

// Uniform sample without replacement from the shadow pool, deterministic per
// (plan.seed, shadow_seed). Returned ids are sorted.
std::vector<std::size_t> sample_shadow_indices(const SplitPlan& plan,
                                               std::size_t size,
                                               std::uint64_t shadow_seed);

Dataset sample_shadow_subset(const SplitPlan& plan, const Dataset& dataset,
                             std::size_t size, std::uint64_t shadow_seed);

Dataset subset(const Dataset& dataset, const std::vector<std::size_t>& ids,
               std::string provenance);

// Query augmentation family. Vector data gets additive Gaussian jitter with
// optional single-coordinate sign flips; data declared image-shaped
// (image_rows * image_cols == feature_dim) gets horizontal flips and small
// pixel shifts instead.
struct AugmentConfig {
  double sigma = 0.05;
  bool sign_flip = false;
  int image_rows = 0;
  int image_cols = 0;
  int max_shift = 2;
};

// num_queries variants of an example; the first is always the example itself,
// labels are never touched.
std::vector<Example> augment(const Example& example, std::size_t num_queries,
                             std::uint64_t seed,
                             const AugmentConfig& config = {});

// IDX binary format: big-endian magic (0x00000803 images, 0x00000801 labels),
// big-endian dimension sizes, unsigned byte payload.
struct IdxImages {
  int rows = 0;
  int cols = 0;
  std::vector<std::vector<double>> images;  // pixels scaled to [0, 1]
};

IdxImages load_idx_images(const std::string& path);
std::vector<int> load_idx_labels(const std::string& path);

// Pairs an images file with a labels file. num_classes == 0 infers K as
// max(label) + 1.
Dataset load_idx_dataset(const std::string& images_path,
                         const std::string& labels_path, int num_classes = 0);

// JSON-lines interchange: one {"label": <int>, "features": [...]} per line.
void save_jsonl(const Dataset& dataset, const std::string& path);
Dataset load_jsonl(const std::string& path, int num_classes = 0);

}  // namespace mialab
