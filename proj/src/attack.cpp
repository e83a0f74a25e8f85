// SPDX-License-Identifier: Apache-2.0
#include "mialab/attack.hpp"

#include <cmath>
#include <numbers>

namespace mialab {

namespace {
constexpr double kLogRatioClamp = 700.0;  // exp stays finite below this
}

std::string to_string(TrainingMode mode) {
  switch (mode) {
    case TrainingMode::kPlain:
      return "plain";
    case TrainingMode::kDistilledKl:
      return "kl";
    case TrainingMode::kDistilledMse:
      return "mse";
  }
  throw ConfigError("unknown training mode");
}

TrainingMode training_mode_from_string(const std::string& name) {
  if (name == "plain") return TrainingMode::kPlain;
  if (name == "kl") return TrainingMode::kDistilledKl;
  if (name == "mse") return TrainingMode::kDistilledMse;
  throw ConfigError("unknown training mode: " + name);
}

void ShadowEnsemble::validate() const {
  if (shadows.empty()) throw ConfigError("shadow ensemble is empty");
  const int k = shadows.front().model.num_classes();
  for (const ShadowModel& s : shadows) {
    s.model.spec.validate();
    if (s.model.num_classes() != k) {
      throw ConfigError("shadow ensemble mixes output widths");
    }
  }
}

double logit(double p) {
  p = clamp_prob_open(p);
  return std::log(p) - std::log(1.0 - p);
}

double confidence(const Classifier& model, const Example& example) {
  std::vector<double> probs = softmax(forward_logits(model, example.features));
  return logit(probs[static_cast<std::size_t>(example.label)]);
}

ConfidenceStats fit_gaussian(const std::vector<double>& confidences,
                             double var_floor) {
  if (confidences.empty()) {
    throw ConfigError("fit_gaussian: no confidences supplied");
  }
  const double n = static_cast<double>(confidences.size());
  double mean = 0.0;
  for (double c : confidences) mean += c;
  mean /= n;
  double var = 0.0;
  for (double c : confidences) {
    double d = c - mean;
    var += d * d;
  }
  var /= n;
  if (var < var_floor) var = var_floor;
  return {mean, var};
}

double gaussian_logpdf(double x, double mu, double var) {
  const double d = x - mu;
  return -0.5 * (std::log(2.0 * std::numbers::pi * var) + d * d / var);
}

double gaussian_cdf(double x, double mu, double var) {
  const double z = (x - mu) / std::sqrt(var);
  return 0.5 * std::erfc(-z / std::sqrt(2.0));
}

double online_score(double conf_obs, const ConfidenceStats& in_stats,
                    const ConfidenceStats& out_stats) {
  double log_ratio = gaussian_logpdf(conf_obs, in_stats.mu_out, in_stats.var_out) -
                     gaussian_logpdf(conf_obs, out_stats.mu_out, out_stats.var_out);
  if (log_ratio > kLogRatioClamp) log_ratio = kLogRatioClamp;
  if (log_ratio < -kLogRatioClamp) log_ratio = -kLogRatioClamp;
  return std::exp(log_ratio);
}

double offline_score(double conf_obs, const ConfidenceStats& out_stats) {
  return gaussian_cdf(conf_obs, out_stats.mu_out, out_stats.var_out);
}

namespace {

// Mean phi-confidence of one model over a fixed query set. The teacher path
// goes through the black-box interface; logits are reconstructed when the
// oracle reports probabilities (phi only needs the true-class probability,
// which survives the softmax round trip unchanged).
double mean_confidence_model(const Classifier& model,
                             const std::vector<Example>& queries) {
  double sum = 0.0;
  for (const Example& q : queries) sum += confidence(model, q);
  return sum / static_cast<double>(queries.size());
}

double mean_confidence_oracle(const TeacherOracle& oracle,
                              const std::vector<Example>& queries) {
  double sum = 0.0;
  for (const Example& q : queries) {
    std::vector<double> out = oracle.query(q.features);
    std::vector<double> probs = (oracle.mode() == TeacherMode::kLogits)
                                    ? softmax(out)
                                    : std::move(out);
    sum += logit(clamp_prob(probs[static_cast<std::size_t>(q.label)]));
  }
  return sum / static_cast<double>(queries.size());
}

}  // namespace

AttackScore glira_score(const TeacherOracle& target, const Example& example,
                        const ShadowEnsemble& ensemble,
                        std::size_t num_queries, std::uint64_t aug_seed,
                        double var_floor, const AugmentConfig& aug,
                        std::size_t example_id) {
  ensemble.validate();
  if (num_queries == 0) throw ConfigError("glira_score: num_queries must be >= 1");

  std::vector<Example> queries = augment(example, num_queries, aug_seed, aug);

  std::vector<double> shadow_confs;
  shadow_confs.reserve(ensemble.shadows.size());
  for (const ShadowModel& s : ensemble.shadows) {
    shadow_confs.push_back(mean_confidence_model(s.model, queries));
  }
  ConfidenceStats out_stats = fit_gaussian(shadow_confs, var_floor);
  const double conf_obs = mean_confidence_oracle(target, queries);

  AttackScore result;
  result.example_id = example_id;
  result.score = offline_score(conf_obs, out_stats);
  result.variant = ScoreVariant::kOffline;
  result.conf_obs = conf_obs;
  result.mu_out = out_stats.mu_out;
  result.var_out = out_stats.var_out;
  return result;
}

bool decide(double score, double threshold) { return score >= threshold; }

}  // namespace mialab
