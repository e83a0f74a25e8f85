// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include "mialab/blackbox.hpp"
#include "mialab/data.hpp"
#include "mialab/distill.hpp"
#include "mialab/model.hpp"

using namespace mialab;

namespace {

Classifier make_model(const std::vector<int>& widths, std::uint64_t seed,
                      Activation act = Activation::kRelu) {
  ArchitectureSpec spec;
  spec.layer_widths = widths;
  spec.activation = act;
  spec.init_seed = seed;
  return init_classifier(spec);
}

// Direct-summation reference for the softened KL term.
double kl_oracle(const std::vector<double>& ps, const std::vector<double>& pt,
                 double tau) {
  double acc = 0.0;
  for (std::size_t j = 0; j < pt.size(); ++j) {
    acc += pt[j] * std::log(pt[j] / ps[j]);
  }
  return tau * tau * acc;
}

std::vector<double> random_probs(std::mt19937_64& rng, std::size_t k) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::vector<double> p(k);
  double sum = 0.0;
  for (double& v : p) {
    v = u(rng);
    sum += v;
  }
  for (double& v : p) v /= sum;
  return p;
}

double rel_error(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-30);
}

struct CountingTeacher final : TeacherOracle {
  const TeacherOracle& inner;
  mutable std::atomic<std::size_t> queries{0};
  explicit CountingTeacher(const TeacherOracle& t) : inner(t) {}
  TeacherMode mode() const override { return inner.mode(); }
  int num_classes() const override { return inner.num_classes(); }
  std::vector<double> query(const std::vector<double>& f) const override {
    queries.fetch_add(1);
    return inner.query(f);
  }
};

}  // namespace

TEST_CASE("kl_distill_loss values") {
  std::vector<double> p = {0.4, 0.6};
  CHECK(kl_distill_loss(p, p, 1.0) == doctest::Approx(0.0).epsilon(1e-12));

  // direct summation: 0.75 ln 1.5 + 0.25 ln 0.5
  const double expected = 0.75 * std::log(1.5) + 0.25 * std::log(0.5);
  CHECK(kl_distill_loss({0.5, 0.5}, {0.75, 0.25}, 1.0) ==
        doctest::Approx(expected).epsilon(1e-12));
  CHECK(expected == doctest::Approx(0.130812).epsilon(1e-5));

  const double at1 = kl_distill_loss({0.5, 0.5}, {0.75, 0.25}, 1.0);
  const double at2 = kl_distill_loss({0.5, 0.5}, {0.75, 0.25}, 2.0);
  CHECK(at2 == doctest::Approx(4.0 * at1).epsilon(1e-12));

  CHECK_THROWS_AS(kl_distill_loss({0.5, 0.5}, {1.0, 0.0, 0.0}, 1.0),
                  ShapeError);
}

TEST_CASE("kl_distill_loss nonnegative, zero iff equal") {
  std::mt19937_64 rng = make_rng({404});
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> pt = random_probs(rng, 4);
    std::vector<double> ps = random_probs(rng, 4);
    const double kl = kl_distill_loss(ps, pt, 1.5);
    CHECK(kl >= 0.0);
    CHECK(kl == doctest::Approx(kl_oracle(ps, pt, 1.5)).epsilon(1e-12));
    CHECK(kl_distill_loss(pt, pt, 1.5) < 1e-10);
    if (rel_error(ps, pt) > 1e-3) CHECK(kl > 0.0);
  }
}

TEST_CASE("mse_logit_loss values") {
  CHECK(mse_logit_loss({1.0, 2.0}, {1.0, 2.0}) == 0.0);
  CHECK(mse_logit_loss({1.0, 2.0}, {0.0, 0.0}) == doctest::Approx(5.0));
  std::mt19937_64 rng = make_rng({405});
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> a = {u(rng), u(rng), u(rng)};
    std::vector<double> b = {u(rng), u(rng), u(rng)};
    CHECK(mse_logit_loss(a, b) == doctest::Approx(mse_logit_loss(b, a)));
    CHECK(mse_logit_loss(a, b) >= 0.0);
  }
  CHECK_THROWS_AS(mse_logit_loss({1.0}, {1.0, 2.0}), ShapeError);
}

TEST_CASE("kd_loss endpoints and affinity in alpha") {
  std::mt19937_64 rng = make_rng({406});
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> zs = {u(rng), u(rng), u(rng)};
    std::vector<double> zt = {u(rng), u(rng), u(rng)};
    TeacherOutput teacher{TeacherMode::kLogits, zt};
    const int label = trial % 3;

    DistillConfig cfg;
    cfg.variant = trial % 2 == 0 ? DistillVariant::kKl : DistillVariant::kMse;
    cfg.temperature = 2.0;

    cfg.alpha = 0.0;
    const double at0 = kd_loss(label, zs, teacher, cfg);
    CHECK(at0 ==
          doctest::Approx(cross_entropy(softmax(zs), label)).epsilon(1e-12));

    cfg.alpha = 1.0;
    const double at1 = kd_loss(label, zs, teacher, cfg);
    if (cfg.variant == DistillVariant::kMse) {
      CHECK(at1 == doctest::Approx(mse_logit_loss(zs, zt)).epsilon(1e-12));
    } else {
      CHECK(at1 == doctest::Approx(kl_distill_loss(softmax(zs, 2.0),
                                                   softmax(zt, 2.0), 2.0))
                       .epsilon(1e-12));
    }

    cfg.alpha = 0.5;
    CHECK(kd_loss(label, zs, teacher, cfg) ==
          doctest::Approx(0.5 * (at0 + at1)).epsilon(1e-12));

    cfg.alpha = 0.37;
    const double mix = kd_loss(label, zs, teacher, cfg);
    CHECK(std::fabs(mix - (0.37 * at1 + 0.63 * at0)) < 1e-12);
  }
}

TEST_CASE("kd_loss config validation") {
  TeacherOutput teacher{TeacherMode::kLogits, {0.0, 0.0}};
  DistillConfig cfg;
  cfg.alpha = 1.5;
  CHECK_THROWS_AS(kd_loss(0, {0.0, 0.0}, teacher, cfg), ConfigError);
  cfg.alpha = 0.5;
  cfg.temperature = 0.0;
  CHECK_THROWS_AS(kd_loss(0, {0.0, 0.0}, teacher, cfg), ConfigError);
}

TEST_CASE("mse from a probabilities teacher requires reconstruction") {
  TeacherOutput probs{TeacherMode::kProbabilities, {0.3, 0.7}};
  DistillConfig cfg;
  cfg.variant = DistillVariant::kMse;
  cfg.allow_reconstruction = false;
  CHECK_THROWS_AS(kd_loss(0, {0.1, -0.1}, probs, cfg), ConfigError);

  cfg.allow_reconstruction = true;
  const double loss = kd_loss(0, {0.1, -0.1}, probs, cfg);
  // reconstruction should agree with centering the true logits
  std::vector<double> zt = reconstruct_logits({0.3, 0.7});
  CHECK(loss ==
        doctest::Approx(mse_logit_loss({0.1, -0.1}, zt)).epsilon(1e-12));
}

TEST_CASE("kd gradients match central finite differences") {
  std::mt19937_64 rng = make_rng({407});
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  const double h = 1e-5;
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t k = 3;
    std::vector<double> zs(k), zt(k);
    for (double& v : zs) v = u(rng);
    for (double& v : zt) v = u(rng);
    TeacherOutput teacher{TeacherMode::kLogits, zt};
    DistillConfig cfg;
    cfg.variant = trial % 2 == 0 ? DistillVariant::kKl : DistillVariant::kMse;
    cfg.temperature = trial % 3 == 0 ? 1.0 : 3.0;
    cfg.alpha = (trial % 5) / 4.0;
    const int label = trial % static_cast<int>(k);

    std::vector<double> analytic;
    kd_terms(label, zs, teacher, cfg, &analytic);

    std::vector<double> fd(k);
    for (std::size_t j = 0; j < k; ++j) {
      std::vector<double> up = zs, down = zs;
      up[j] += h;
      down[j] -= h;
      fd[j] = (kd_loss(label, up, teacher, cfg) -
               kd_loss(label, down, teacher, cfg)) /
              (2.0 * h);
    }
    CHECK(rel_error(analytic, fd) < 1e-4);
  }
}

TEST_CASE("kl gradient approaches the scaled mse gradient as tau grows") {
  std::mt19937_64 rng = make_rng({408});
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t k = 4;
    std::vector<double> zs(k), zt(k);
    double ms = 0.0, mt = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      zs[j] = u(rng);
      zt[j] = u(rng);
      ms += zs[j];
      mt += zt[j];
    }
    // center both so the comparison is exactly in the stated regime
    for (std::size_t j = 0; j < k; ++j) {
      zs[j] -= ms / static_cast<double>(k);
      zt[j] -= mt / static_cast<double>(k);
    }

    // gradient of (1/2K) * mse is (zs - zt)/K
    std::vector<double> mse_grad(k);
    for (std::size_t j = 0; j < k; ++j) {
      mse_grad[j] = (zs[j] - zt[j]) / static_cast<double>(k);
    }

    TeacherOutput teacher{TeacherMode::kLogits, zt};
    DistillConfig cfg;
    cfg.variant = DistillVariant::kKl;
    cfg.alpha = 1.0;

    double prev = 1e300;
    for (double tau : {10.0, 100.0, 1000.0}) {
      cfg.temperature = tau;
      std::vector<double> kl_grad;
      kd_terms(0, zs, teacher, cfg, &kl_grad);
      const double err = rel_error(kl_grad, mse_grad);
      CHECK(err < prev);
      prev = err;
    }
    CHECK(prev < 1e-2);
  }
}

TEST_CASE("distill with zero steps returns the initialization") {
  Dataset d = make_synthetic(2, 3, 10, 0.5, 3);
  Classifier teacher_model = make_model({3, 4, 2}, 1);
  ClassifierTeacher teacher(teacher_model, TeacherMode::kLogits);
  ArchitectureSpec spec = teacher_model.spec;
  spec.init_seed = 77;
  DistillConfig cfg;
  cfg.steps = 0;
  Classifier student = distill(teacher, d, spec, cfg);
  CHECK(student.params == init_classifier(spec).params);
}

TEST_CASE("one full-batch distill step follows the batch gradient") {
  Dataset tiny;
  tiny.num_classes = 2;
  tiny.feature_dim = 3;
  tiny.examples = {{{0.2, -0.1, 0.4}, 0},
                   {{-0.3, 0.5, 0.1}, 1},
                   {{0.6, 0.2, -0.2}, 0}};

  Classifier teacher_model = make_model({3, 4, 2}, 9);
  for (double& p : teacher_model.params) p *= 3.0;
  ClassifierTeacher teacher(teacher_model, TeacherMode::kLogits);

  ArchitectureSpec student_spec = teacher_model.spec;
  student_spec.init_seed = 10;
  Classifier student0 = init_classifier(student_spec);

  for (DistillVariant variant : {DistillVariant::kMse, DistillVariant::kKl}) {
    DistillConfig cfg;
    cfg.variant = variant;
    cfg.alpha = 0.4;
    cfg.temperature = 2.0;
    cfg.steps = 1;
    cfg.batch_size = tiny.examples.size();
    cfg.learning_rate = 0.25;
    cfg.seed = 3;
    Classifier student1 = distill(teacher, tiny, student_spec, cfg);

    auto batch_loss = [&](const Classifier& m) {
      double total = 0.0;
      for (const Example& ex : tiny.examples) {
        TeacherOutput out{TeacherMode::kLogits,
                          forward_logits(teacher_model, ex.features)};
        total += kd_loss(ex.label, forward_logits(m, ex.features), out, cfg);
      }
      return total / static_cast<double>(tiny.examples.size());
    };

    const double h = 1e-6;
    for (std::size_t k = 0; k < student0.params.size(); ++k) {
      Classifier plus = student0;
      Classifier minus = student0;
      plus.params[k] += h;
      minus.params[k] -= h;
      const double fd = (batch_loss(plus) - batch_loss(minus)) / (2.0 * h);
      const double expected = student0.params[k] - cfg.learning_rate * fd;
      CHECK(std::fabs(student1.params[k] - expected) < 1e-6);
    }
  }
}

TEST_CASE("distilled student mimics the teacher") {
  Dataset train_set = make_synthetic(2, 4, 150, 0.6, 91);
  Dataset held_out = make_synthetic(2, 4, 150, 0.6, 92);

  TrainConfig tc;
  tc.steps = 500;
  tc.batch_size = 30;
  tc.learning_rate = 0.1;
  tc.momentum = 0.9;
  tc.shuffle_seed = 5;
  Classifier teacher_model = train(make_model({4, 8, 2}, 10), train_set, tc);

  ClassifierTeacher teacher(teacher_model, TeacherMode::kLogits);
  ArchitectureSpec student_spec = teacher_model.spec;
  student_spec.init_seed = 123;

  DistillConfig cfg;
  cfg.variant = DistillVariant::kMse;
  cfg.alpha = 1.0;
  cfg.steps = 800;
  cfg.batch_size = 30;
  cfg.learning_rate = 0.02;
  cfg.seed = 6;
  Classifier student = distill(teacher, train_set, student_spec, cfg);

  std::size_t agree = 0;
  for (const Example& ex : held_out.examples) {
    std::vector<double> zs = forward_logits(student, ex.features);
    std::vector<double> zt = forward_logits(teacher_model, ex.features);
    const int as = zs[0] > zs[1] ? 0 : 1;
    const int at = zt[0] > zt[1] ? 0 : 1;
    if (as == at) ++agree;
  }
  const double agreement =
      static_cast<double>(agree) / static_cast<double>(held_out.size());
  CHECK(agreement >= 0.9);
}

TEST_CASE("distill is deterministic and seed-sensitive") {
  Dataset d = make_synthetic(2, 3, 40, 0.5, 17);
  Classifier teacher_model = make_model({3, 5, 2}, 4);
  ClassifierTeacher teacher(teacher_model, TeacherMode::kLogits);
  ArchitectureSpec spec = teacher_model.spec;
  spec.init_seed = 9;

  DistillConfig cfg;
  cfg.variant = DistillVariant::kKl;
  cfg.steps = 50;
  cfg.batch_size = 8;
  cfg.learning_rate = 0.1;
  cfg.seed = 33;

  Classifier a = distill(teacher, d, spec, cfg);
  Classifier b = distill(teacher, d, spec, cfg);
  CHECK(a.params == b.params);

  cfg.seed = 34;
  Classifier c = distill(teacher, d, spec, cfg);
  CHECK(a.params != c.params);
}

TEST_CASE("distill queries the teacher once per batch element") {
  Dataset d = make_synthetic(2, 3, 20, 0.5, 21);
  Classifier teacher_model = make_model({3, 4, 2}, 8);
  ClassifierTeacher inner(teacher_model, TeacherMode::kLogits);
  CountingTeacher teacher(inner);

  ArchitectureSpec spec = teacher_model.spec;
  spec.init_seed = 3;
  DistillConfig cfg;
  cfg.steps = 10;
  cfg.batch_size = 8;
  cfg.learning_rate = 0.05;
  cfg.seed = 1;
  distill(teacher, d, spec, cfg);
  CHECK(teacher.queries.load() == 10 * 8);
}

TEST_CASE("distill log records the loss terms") {
  Dataset d = make_synthetic(2, 3, 16, 0.5, 5);
  Classifier teacher_model = make_model({3, 4, 2}, 2);
  ClassifierTeacher teacher(teacher_model, TeacherMode::kLogits);
  ArchitectureSpec spec = teacher_model.spec;
  spec.init_seed = 4;

  DistillConfig cfg;
  cfg.variant = DistillVariant::kKl;
  cfg.alpha = 0.5;
  cfg.steps = 12;
  cfg.batch_size = 4;
  cfg.learning_rate = 0.05;
  cfg.seed = 2;

  DistillLog log;
  distill(teacher, d, spec, cfg, &log);
  REQUIRE(log.rows.size() == 12);
  for (const auto& row : log.rows) {
    CHECK(std::isfinite(row.kd_loss));
    CHECK(row.kd_loss ==
          doctest::Approx(0.5 * row.distill_term + 0.5 * row.ce_term)
              .epsilon(1e-12));
  }

  const std::string path = "distill_log_test.csv";
  log.write_csv(path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "step,kd_loss,ce_term,distill_term");
  std::size_t lines = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) ++lines;
  }
  CHECK(lines == 12);
  in.close();
  std::remove(path.c_str());
}

TEST_CASE("distill rejects mismatched shapes") {
  Dataset d = make_synthetic(2, 3, 10, 0.5, 3);
  Classifier teacher_model = make_model({3, 4, 2}, 1);
  ClassifierTeacher teacher(teacher_model, TeacherMode::kLogits);

  ArchitectureSpec wrong_dim;
  wrong_dim.layer_widths = {4, 4, 2};
  wrong_dim.init_seed = 1;
  DistillConfig cfg;
  cfg.steps = 1;
  CHECK_THROWS_AS(distill(teacher, d, wrong_dim, cfg), ShapeError);

  ArchitectureSpec wrong_k;
  wrong_k.layer_widths = {3, 4, 5};
  wrong_k.init_seed = 1;
  CHECK_THROWS_AS(distill(teacher, d, wrong_k, cfg), ShapeError);
}
