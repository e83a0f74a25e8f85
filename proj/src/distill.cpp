// SPDX-License-Identifier: Apache-2.0
#include "mialab/distill.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "mialab/blackbox.hpp"
#include "mialab/common.hpp"

namespace mialab {

std::vector<double> ClassifierTeacher::query(
    const std::vector<double>& features) const {
  std::vector<double> z = forward_logits(model_, features);
  if (mode_ == TeacherMode::kLogits) return z;
  return softmax(z, 1.0);
}

void DistillConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ConfigError("distill alpha must lie in [0, 1]");
  }
  if (!(temperature > 0.0)) {
    throw ConfigError("distill temperature must be positive");
  }
  if (batch_size == 0) throw ConfigError("distill batch_size must be positive");
  if (!(learning_rate > 0.0)) {
    throw ConfigError("distill learning_rate must be positive");
  }
}

double kl_distill_loss(const std::vector<double>& student_probs_tau,
                       const std::vector<double>& teacher_probs_tau,
                       double temperature) {
  if (student_probs_tau.size() != teacher_probs_tau.size()) {
    throw ShapeError("kl_distill_loss: distribution sizes differ");
  }
  double kl = 0.0;
  for (std::size_t j = 0; j < teacher_probs_tau.size(); ++j) {
    double pt = clamp_prob(teacher_probs_tau[j]);
    double ps = clamp_prob(student_probs_tau[j]);
    kl += pt * (std::log(pt) - std::log(ps));
  }
  return temperature * temperature * kl;
}

double mse_logit_loss(const std::vector<double>& student_logits,
                      const std::vector<double>& teacher_logits) {
  if (student_logits.size() != teacher_logits.size()) {
    throw ShapeError("mse_logit_loss: logit sizes differ");
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < student_logits.size(); ++j) {
    double d = student_logits[j] - teacher_logits[j];
    sum += d * d;
  }
  return sum;
}

namespace {

// Teacher logits for the MSE variant, reconstructing from probabilities when
// the oracle does not expose logits directly.
std::vector<double> teacher_logits_for_mse(const TeacherOutput& teacher_output,
                                           const DistillConfig& config) {
  if (teacher_output.mode == TeacherMode::kLogits) return teacher_output.values;
  if (!config.allow_reconstruction) {
    throw ConfigError(
        "MSE distillation from a probabilities-only teacher requires logit "
        "reconstruction, which is disabled");
  }
  return reconstruct_logits(teacher_output.values);
}

// Teacher distribution softened at tau. A probabilities-mode teacher reports
// softmax(z, 1); re-softening at tau goes through reconstructed logits, which
// is exact up to the lost per-example constant (softmax is shift invariant).
std::vector<double> teacher_probs_tau(const TeacherOutput& teacher_output,
                                      double tau) {
  if (teacher_output.mode == TeacherMode::kLogits) {
    return softmax(teacher_output.values, tau);
  }
  return softmax(reconstruct_logits(teacher_output.values), tau);
}

}  // namespace

KdTerms kd_terms(int label, const std::vector<double>& student_logits,
                 const TeacherOutput& teacher_output,
                 const DistillConfig& config, std::vector<double>* dlogits) {
  config.validate();
  const std::size_t k = student_logits.size();
  if (label < 0 || static_cast<std::size_t>(label) >= k) {
    throw ShapeError("kd_terms: label out of range");
  }

  KdTerms terms;
  std::vector<double> grad(k, 0.0);

  // Hard-label cross-entropy at temperature 1.
  std::vector<double> p1 = softmax(student_logits, 1.0);
  terms.ce_term = -std::log(clamp_prob(p1[static_cast<std::size_t>(label)]));
  if (dlogits != nullptr) {
    for (std::size_t j = 0; j < k; ++j) {
      grad[j] = (1.0 - config.alpha) * p1[j];
    }
    grad[static_cast<std::size_t>(label)] -= (1.0 - config.alpha);
  }

  if (config.variant == DistillVariant::kKl) {
    const double tau = config.temperature;
    std::vector<double> ps = softmax(student_logits, tau);
    std::vector<double> pt = teacher_probs_tau(teacher_output, tau);
    if (pt.size() != k) throw ShapeError("kd_terms: teacher output size differs");
    terms.distill_term = kl_distill_loss(ps, pt, tau);
    if (dlogits != nullptr) {
      // d(tau^2 KL)/dz_s = tau * (p_s(tau) - p_t(tau))
      for (std::size_t j = 0; j < k; ++j) {
        grad[j] += config.alpha * tau * (ps[j] - pt[j]);
      }
    }
  } else {
    std::vector<double> zt = teacher_logits_for_mse(teacher_output, config);
    if (zt.size() != k) throw ShapeError("kd_terms: teacher output size differs");
    terms.distill_term = mse_logit_loss(student_logits, zt);
    if (dlogits != nullptr) {
      for (std::size_t j = 0; j < k; ++j) {
        grad[j] += config.alpha * 2.0 * (student_logits[j] - zt[j]);
      }
    }
  }

  terms.total =
      config.alpha * terms.distill_term + (1.0 - config.alpha) * terms.ce_term;
  if (dlogits != nullptr) *dlogits = std::move(grad);
  return terms;
}

double kd_loss(int label, const std::vector<double>& student_logits,
               const TeacherOutput& teacher_output,
               const DistillConfig& config) {
  return kd_terms(label, student_logits, teacher_output, config).total;
}

void DistillLog::write_csv(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open distill log for writing: " + path);
  out << "step,kd_loss,ce_term,distill_term\n";
  for (const Row& row : rows) {
    out << row.step << ',' << format_double(row.kd_loss) << ','
        << format_double(row.ce_term) << ','
        << format_double(row.distill_term) << '\n';
  }
}

Classifier distill(const TeacherOracle& teacher, const Dataset& shadow_data,
                   const ArchitectureSpec& student_spec,
                   const DistillConfig& config, DistillLog* log) {
  config.validate();
  shadow_data.validate();
  student_spec.validate();
  if (student_spec.feature_dim() != shadow_data.feature_dim) {
    throw ShapeError("distill: student feature_dim differs from data");
  }
  if (student_spec.num_classes() != shadow_data.num_classes) {
    throw ShapeError("distill: student num_classes differs from data");
  }
  if (teacher.num_classes() != shadow_data.num_classes) {
    throw ShapeError("distill: teacher num_classes differs from data");
  }

  Classifier student = init_classifier(student_spec);
  const std::size_t n = shadow_data.examples.size();
  BatchSchedule schedule(n, config.batch_size, config.seed);

  std::vector<double> batch_grad(student.params.size());
  std::vector<double> dlogits;

  for (std::size_t step = 0; step < config.steps; ++step) {
    std::vector<std::size_t> batch = schedule.next_batch();
    std::fill(batch_grad.begin(), batch_grad.end(), 0.0);
    double kd_sum = 0.0;
    double ce_sum = 0.0;
    double distill_sum = 0.0;

    for (std::size_t idx : batch) {
      const Example& ex = shadow_data.examples[idx];
      TeacherOutput teacher_output;
      teacher_output.mode = teacher.mode();
      teacher_output.values = teacher.query(ex.features);

      ForwardTrace trace = forward_trace(student, ex.features);
      KdTerms terms =
          kd_terms(ex.label, trace.act.back(), teacher_output, config, &dlogits);
      kd_sum += terms.total;
      ce_sum += terms.ce_term;
      distill_sum += terms.distill_term;
      backprop_logit_grad(student, trace, dlogits, batch_grad);
    }

    const double inv_b = 1.0 / static_cast<double>(batch.size());
    const double mean_kd = kd_sum * inv_b;
    if (!std::isfinite(mean_kd)) {
      throw TrainingDiverged("distillation loss became non-finite", step);
    }
    // Plain SGD: no momentum, no weight decay.
    for (std::size_t i = 0; i < student.params.size(); ++i) {
      student.params[i] -= config.learning_rate * batch_grad[i] * inv_b;
    }
    if (log != nullptr) {
      log->rows.push_back(
          {step, mean_kd, ce_sum * inv_b, distill_sum * inv_b});
    }
  }
  return student;
}

}  // namespace mialab
