// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

#include "mialab/data.hpp"
#include "mialab/model.hpp"

using namespace mialab;

namespace {

bool datasets_equal(const Dataset& a, const Dataset& b) {
  if (a.size() != b.size() || a.num_classes != b.num_classes ||
      a.feature_dim != b.feature_dim) {
    return false;
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.examples[i].label != b.examples[i].label) return false;
    if (a.examples[i].features != b.examples[i].features) return false;
  }
  return true;
}

std::set<std::size_t> as_set(const std::vector<std::size_t>& v) {
  return std::set<std::size_t>(v.begin(), v.end());
}

}  // namespace

TEST_CASE("make_synthetic counts and determinism") {
  Dataset d = make_synthetic(2, 2, 1, 0.1, 7);
  REQUIRE(d.size() == 2);
  CHECK(d.examples[0].label != d.examples[1].label);

  Dataset again = make_synthetic(2, 2, 1, 0.1, 7);
  CHECK(datasets_equal(d, again));

  Dataset other_seed = make_synthetic(2, 2, 1, 0.1, 8);
  CHECK_FALSE(datasets_equal(d, other_seed));
}

TEST_CASE("make_synthetic validates arguments") {
  CHECK_THROWS_AS(make_synthetic(1, 2, 5, 0.1, 7), ConfigError);
  CHECK_THROWS_AS(make_synthetic(2, 0, 5, 0.1, 7), ConfigError);
  CHECK_THROWS_AS(make_synthetic(2, 2, 0, 0.1, 7), ConfigError);
  CHECK_THROWS_AS(make_synthetic(2, 2, 5, 0.0, 7), ConfigError);
}

TEST_CASE("well separated blobs are linearly classifiable") {
  Dataset d = make_synthetic(3, 4, 100, 0.5, 21);
  d.validate(true);

  ArchitectureSpec spec;
  spec.layer_widths = {4, 3};
  spec.init_seed = 5;
  TrainConfig tc;
  tc.steps = 400;
  tc.batch_size = 32;
  tc.learning_rate = 0.5;
  tc.shuffle_seed = 3;
  Classifier model = train(init_classifier(spec), d, tc);
  CHECK(accuracy(model, d) > 0.9);
}

TEST_CASE("split_experiment sizes and disjointness") {
  Dataset d = make_synthetic(2, 2, 5, 0.5, 3);  // 10 examples
  SplitPlan plan = split_experiment(d, {4, 2}, 17);

  CHECK(plan.target_train_ids.size() == 4);
  CHECK(plan.shadow_pool_ids.size() == 6);
  CHECK(plan.member_eval_ids.size() == 2);
  CHECK(plan.nonmember_eval_ids.size() == 2);

  // brute-force intersection checks
  std::set<std::size_t> target = as_set(plan.target_train_ids);
  std::set<std::size_t> pool = as_set(plan.shadow_pool_ids);
  for (std::size_t id : target) CHECK(pool.count(id) == 0);
  for (std::size_t id : plan.nonmember_eval_ids) {
    CHECK(target.count(id) == 0);
    CHECK(pool.count(id) == 1);
  }
  for (std::size_t id : plan.member_eval_ids) CHECK(target.count(id) == 1);
}

TEST_CASE("split_experiment covers every index exactly once") {
  Dataset d = make_synthetic(2, 2, 16, 0.5, 3);
  SplitPlan plan = split_experiment(d, {10, 4}, 23);
  std::set<std::size_t> all = as_set(plan.target_train_ids);
  for (std::size_t id : plan.shadow_pool_ids) all.insert(id);
  CHECK(all.size() == d.size());
  CHECK(*all.rbegin() == d.size() - 1);
}

TEST_CASE("split_experiment rejects impossible sizes") {
  Dataset d = make_synthetic(2, 2, 5, 0.5, 3);
  CHECK_THROWS_AS(split_experiment(d, {10, 1}, 1), ConfigError);
  CHECK_THROWS_AS(split_experiment(d, {12, 1}, 1), ConfigError);
  CHECK_THROWS_AS(split_experiment(d, {4, 5}, 1), ConfigError);
  CHECK_THROWS_AS(split_experiment(d, {0, 1}, 1), ConfigError);
}

TEST_CASE("split_experiment is deterministic") {
  Dataset d = make_synthetic(2, 3, 50, 0.5, 9);
  SplitPlan a = split_experiment(d, {40, 10}, 5);
  SplitPlan b = split_experiment(d, {40, 10}, 5);
  CHECK(a.target_train_ids == b.target_train_ids);
  CHECK(a.shadow_pool_ids == b.shadow_pool_ids);
  CHECK(a.member_eval_ids == b.member_eval_ids);
  CHECK(a.nonmember_eval_ids == b.nonmember_eval_ids);

  SplitPlan c = split_experiment(d, {40, 10}, 6);
  CHECK(a.target_train_ids != c.target_train_ids);
}

TEST_CASE("sample_shadow_indices stays inside the pool") {
  Dataset d = make_synthetic(2, 2, 30, 0.5, 13);
  SplitPlan plan = split_experiment(d, {20, 5}, 29);
  std::set<std::size_t> pool = as_set(plan.shadow_pool_ids);
  std::set<std::size_t> target = as_set(plan.target_train_ids);

  // full-pool draw returns exactly the pool
  std::vector<std::size_t> all = sample_shadow_indices(plan, pool.size(), 0);
  CHECK(as_set(all) == pool);

  // quantified audit over many seeds
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::vector<std::size_t> ids =
        sample_shadow_indices(plan, pool.size() / 2, seed);
    CHECK(ids.size() == pool.size() / 2);
    for (std::size_t id : ids) {
      CHECK(pool.count(id) == 1);
      CHECK(target.count(id) == 0);
    }
  }

  std::vector<std::size_t> s1 = sample_shadow_indices(plan, pool.size() / 2, 1);
  std::vector<std::size_t> s2 = sample_shadow_indices(plan, pool.size() / 2, 2);
  CHECK(s1 != s2);
  CHECK(s1 == sample_shadow_indices(plan, pool.size() / 2, 1));

  CHECK_THROWS_AS(sample_shadow_indices(plan, pool.size() + 1, 0), ConfigError);
}

TEST_CASE("sample_shadow_subset materializes the sampled rows") {
  Dataset d = make_synthetic(2, 2, 10, 0.5, 13);
  SplitPlan plan = split_experiment(d, {8, 2}, 29);
  Dataset s = sample_shadow_subset(plan, d, 6, 4);
  CHECK(s.size() == 6);
  CHECK(s.num_classes == d.num_classes);
  CHECK(s.feature_dim == d.feature_dim);
}

TEST_CASE("subset validates ids") {
  Dataset d = make_synthetic(2, 2, 3, 0.5, 1);
  CHECK_THROWS_AS(subset(d, {0, 99}, "x"), ConfigError);
  Dataset s = subset(d, {5, 0}, "x");
  CHECK(s.size() == 2);
  CHECK(s.examples[0].features == d.examples[5].features);
}

TEST_CASE("augment identity-first and determinism") {
  Example ex;
  ex.features = {1.0, -2.0, 3.0};
  ex.label = 1;

  std::vector<Example> one = augment(ex, 1, 42);
  REQUIRE(one.size() == 1);
  CHECK(one[0].features == ex.features);
  CHECK(one[0].label == ex.label);

  std::vector<Example> ten = augment(ex, 10, 42);
  REQUIRE(ten.size() == 10);
  CHECK(ten[0].features == ex.features);
  for (const Example& v : ten) {
    CHECK(v.label == ex.label);
    CHECK(v.features.size() == ex.features.size());
  }
  bool any_changed = false;
  for (std::size_t i = 1; i < ten.size(); ++i) {
    if (ten[i].features != ex.features) any_changed = true;
  }
  CHECK(any_changed);

  std::vector<Example> again = augment(ex, 10, 42);
  for (std::size_t i = 0; i < ten.size(); ++i) {
    CHECK(ten[i].features == again[i].features);
  }

  CHECK_THROWS_AS(augment(ex, 0, 42), ConfigError);
}

TEST_CASE("augment image mode keeps dimensions") {
  Example ex;
  ex.features.assign(36, 0.0);
  for (std::size_t i = 0; i < 36; ++i) ex.features[i] = double(i) / 36.0;
  ex.label = 0;
  AugmentConfig cfg;
  cfg.image_rows = 6;
  cfg.image_cols = 6;
  std::vector<Example> out = augment(ex, 8, 5, cfg);
  REQUIRE(out.size() == 8);
  CHECK(out[0].features == ex.features);
  for (const Example& v : out) CHECK(v.features.size() == 36);

  AugmentConfig bad;
  bad.image_rows = 5;
  bad.image_cols = 5;
  CHECK_THROWS_AS(augment(ex, 2, 5, bad), ConfigError);
}

TEST_CASE("idx round trip on handcrafted binary files") {
  const std::string img_path = "idx_test_images.bin";
  const std::string lbl_path = "idx_test_labels.bin";
  {
    // two 2x3 images
    std::ofstream out(img_path, std::ios::binary);
    const unsigned char header[] = {0, 0, 8, 3, 0, 0, 0, 2,
                                    0, 0, 0, 2, 0, 0, 0, 3};
    out.write(reinterpret_cast<const char*>(header), sizeof(header));
    const unsigned char pixels[] = {0, 51, 102, 153, 204, 255,
                                    255, 204, 153, 102, 51, 0};
    out.write(reinterpret_cast<const char*>(pixels), sizeof(pixels));
  }
  {
    std::ofstream out(lbl_path, std::ios::binary);
    const unsigned char header[] = {0, 0, 8, 1, 0, 0, 0, 2};
    out.write(reinterpret_cast<const char*>(header), sizeof(header));
    const unsigned char labels[] = {1, 0};
    out.write(reinterpret_cast<const char*>(labels), sizeof(labels));
  }

  IdxImages imgs = load_idx_images(img_path);
  CHECK(imgs.rows == 2);
  CHECK(imgs.cols == 3);
  REQUIRE(imgs.images.size() == 2);
  CHECK(imgs.images[0][0] == doctest::Approx(0.0));
  CHECK(imgs.images[0][5] == doctest::Approx(1.0));
  CHECK(imgs.images[0][1] == doctest::Approx(51.0 / 255.0));

  std::vector<int> labels = load_idx_labels(lbl_path);
  CHECK(labels == std::vector<int>{1, 0});

  Dataset d = load_idx_dataset(img_path, lbl_path);
  CHECK(d.size() == 2);
  CHECK(d.num_classes == 2);
  CHECK(d.feature_dim == 6);
  CHECK(d.examples[0].label == 1);

  std::remove(img_path.c_str());
  std::remove(lbl_path.c_str());
}

TEST_CASE("idx loader rejects malformed files") {
  const std::string path = "idx_bad.bin";
  {
    std::ofstream out(path, std::ios::binary);
    const unsigned char header[] = {0, 0, 9, 9, 0, 0, 0, 1};
    out.write(reinterpret_cast<const char*>(header), sizeof(header));
  }
  CHECK_THROWS_AS(load_idx_images(path), ConfigError);
  CHECK_THROWS_AS(load_idx_labels(path), ConfigError);
  CHECK_THROWS_AS(load_idx_images("no_such_file.bin"), ConfigError);
  std::remove(path.c_str());
}

TEST_CASE("jsonl round trip") {
  Dataset d = make_synthetic(3, 5, 4, 0.7, 77);
  const std::string path = "jsonl_test.jsonl";
  save_jsonl(d, path);
  Dataset back = load_jsonl(path, d.num_classes);
  CHECK(datasets_equal(d, back));

  Dataset inferred = load_jsonl(path);
  CHECK(inferred.num_classes == d.num_classes);
  std::remove(path.c_str());
}

TEST_CASE("dataset validation catches bad shapes and labels") {
  Dataset d = make_synthetic(2, 3, 4, 0.5, 1);
  d.examples[2].features.pop_back();
  CHECK_THROWS_AS(d.validate(), ShapeError);

  Dataset e = make_synthetic(2, 3, 4, 0.5, 1);
  e.examples[0].label = 7;
  CHECK_THROWS_AS(e.validate(), ConfigError);

  Dataset f = make_synthetic(2, 3, 4, 0.5, 1);
  for (Example& ex : f.examples) ex.label = 0;
  CHECK_NOTHROW(f.validate(false));
  CHECK_THROWS_AS(f.validate(true), ConfigError);
}

TEST_CASE("shifted clone keeps labels and pairing") {
  Dataset base = make_synthetic(2, 4, 20, 0.5, 11);
  Dataset shifted = make_synthetic(2, 4, 20, 0.5, 11, 3.0);
  REQUIRE(base.size() == shifted.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    CHECK(base.examples[i].label == shifted.examples[i].label);
    CHECK(base.examples[i].features != shifted.examples[i].features);
  }
}
