// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mialab/common.hpp"
#include "mialab/data.hpp"
#include "mialab/distill.hpp"
#include "mialab/model.hpp"

namespace mialab {

enum class TrainingMode { kPlain, kDistilledKl, kDistilledMse };

std::string to_string(TrainingMode mode);
TrainingMode training_mode_from_string(const std::string& name);

struct ShadowModel {
  Classifier model;
  std::uint64_t shadow_seed = 0;
  std::vector<std::size_t> subset_ids;  // dataset row ids the shadow saw
};

struct ShadowEnsemble {
  std::vector<ShadowModel> shadows;
  TrainingMode mode = TrainingMode::kPlain;

  void validate() const;  // nonempty, consistent output width
};

// Confidence transform phi(p) = log(p / (1 - p)) on the true-class
// probability. p is clamped away from {0, 1} so the result stays finite.
double logit(double p);

// phi-confidence of a model on one example: logit of the softmax probability
// assigned to the example's label.
double confidence(const Classifier& model, const Example& example);

struct ConfidenceStats {
  double mu_out = 0.0;
  double var_out = 0.0;
};

// Mean and population variance (divide by N) of shadow confidences, with the
// variance floored at var_floor. Empty input is an error.
ConfidenceStats fit_gaussian(const std::vector<double>& confidences,
                             double var_floor = kDefaultVarFloor);

double gaussian_logpdf(double x, double mu, double var);
double gaussian_cdf(double x, double mu, double var);

// Online likelihood-ratio score p(conf | in) / p(conf | out), computed in log
// space and clamped before exponentiation so the result is always finite.
double online_score(double conf_obs, const ConfidenceStats& in_stats,
                    const ConfidenceStats& out_stats);

// Offline score: the probability mass of the out-distribution below the
// observed confidence, Phi((conf_obs - mu_out) / sigma_out). Larger values
// mean the observation looks atypically confident for a non-member.
double offline_score(double conf_obs, const ConfidenceStats& out_stats);

enum class ScoreVariant { kOnlineRatio, kOffline };

struct AttackScore {
  std::size_t example_id = 0;
  double score = 0.0;
  ScoreVariant variant = ScoreVariant::kOffline;
  double conf_obs = 0.0;
  double mu_out = 0.0;
  double var_out = 0.0;
};

// Offline LiRA score for one example against a black-box target. Queries are
// the augmented variants of the example (identity first); each model's
// confidence is its mean phi over the query set. The Gaussian is fit over the
// per-shadow means and evaluated at the target's mean.
AttackScore glira_score(const TeacherOracle& target, const Example& example,
                        const ShadowEnsemble& ensemble,
                        std::size_t num_queries, std::uint64_t aug_seed,
                        double var_floor = kDefaultVarFloor,
                        const AugmentConfig& aug = {},
                        std::size_t example_id = 0);

// Membership decision at a threshold (score >= threshold => member).
bool decide(double score, double threshold);

}  // namespace mialab
