// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mialab/data.hpp"
#include "mialab/model.hpp"

namespace mialab {

enum class TeacherMode { kProbabilities, kLogits };
enum class DistillVariant { kKl, kMse };

// Black-box query access to a target model. Implementations must be safe for
// concurrent read-only queries.
class TeacherOracle {
 public:
  virtual ~TeacherOracle() = default;
  virtual TeacherMode mode() const = 0;
  // One output vector per query: probabilities or logits, per mode().
  virtual std::vector<double> query(
      const std::vector<double>& features) const = 0;
  virtual int num_classes() const = 0;
};

// Wraps a trained classifier as a query-only teacher.
class ClassifierTeacher final : public TeacherOracle {
 public:
  ClassifierTeacher(Classifier model, TeacherMode mode)
      : model_(std::move(model)), mode_(mode) {}
  TeacherMode mode() const override { return mode_; }
  std::vector<double> query(
      const std::vector<double>& features) const override;
  int num_classes() const override { return model_.num_classes(); }
  const Classifier& model() const { return model_; }

 private:
  Classifier model_;
  TeacherMode mode_;
};

struct DistillConfig {
  double alpha = 1.0;        // weight of the distillation term
  double temperature = 1.0;  // softening temperature; the MSE variant ignores it
  DistillVariant variant = DistillVariant::kKl;
  std::size_t steps = 0;
  double learning_rate = 0.1;
  std::size_t batch_size = 1;
  std::uint64_t seed = 0;  // batch shuffle seed
  // Whether a probabilities-only teacher may be adapted to the MSE variant
  // by logit reconstruction. When false, that combination is an error.
  bool allow_reconstruction = true;

  void validate() const;
};

// Softened-distribution KL distillation loss:
//   tau^2 * sum_j p_t_j * log(p_t_j / p_s_j)
// Both inputs must already be softened at the same temperature. Probabilities
// are clamped to kProbEpsilon inside the logs.
double kl_distill_loss(const std::vector<double>& student_probs_tau,
                       const std::vector<double>& teacher_probs_tau,
                       double temperature);

// Squared Euclidean distance between logit vectors.
double mse_logit_loss(const std::vector<double>& student_logits,
                      const std::vector<double>& teacher_logits);

struct TeacherOutput {
  TeacherMode mode = TeacherMode::kLogits;
  std::vector<double> values;
};

struct KdTerms {
  double total = 0.0;
  double distill_term = 0.0;
  double ce_term = 0.0;
};

// Combined student objective:
//   alpha * distill_term + (1 - alpha) * cross_entropy(softmax(z_s, 1), label)
// KL variant softens both sides at config.temperature; MSE variant compares
// raw logits (reconstructing them from a probabilities-mode teacher when
// allowed). When dlogits is non-null it receives d total / d student_logits.
KdTerms kd_terms(int label, const std::vector<double>& student_logits,
                 const TeacherOutput& teacher_output,
                 const DistillConfig& config,
                 std::vector<double>* dlogits = nullptr);

double kd_loss(int label, const std::vector<double>& student_logits,
               const TeacherOutput& teacher_output,
               const DistillConfig& config);

struct DistillLog {
  struct Row {
    std::size_t step;
    double kd_loss;
    double ce_term;
    double distill_term;
  };
  std::vector<Row> rows;
  void write_csv(const std::string& path) const;
};

// Trains a student on the KD objective with plain SGD: init from
// student_spec.init_seed, then config.steps minibatch steps at
// config.learning_rate. The teacher is queried fresh for every batch element.
Classifier distill(const TeacherOracle& teacher, const Dataset& shadow_data,
                   const ArchitectureSpec& student_spec,
                   const DistillConfig& config, DistillLog* log = nullptr);

}  // namespace mialab
