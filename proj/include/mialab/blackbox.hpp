// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "mialab/data.hpp"
#include "mialab/model.hpp"

namespace mialab {

// Recovers logits from output probabilities under the empirical zero-sum
// assumption: z_k = ln p_k - mean_j ln p_j. Exact whenever the true logits
// sum to zero; otherwise off by the (unrecoverable) per-vector constant
// sum(z)/K in every coordinate. Probabilities are clamped to kProbEpsilon
// before the logs.
std::vector<double> reconstruct_logits(const std::vector<double>& probs);

// How well reconstruction does against a model whose true logits we can see.
struct ReconstructionReport {
  double mean_abs_error = 0.0;   // mean |reconstructed - true| per coordinate
  double max_abs_error = 0.0;
  double logit_sum_estimate = 0.0;  // mean |sum_j z_j| over the dataset
};

ReconstructionReport reconstruction_report(const Classifier& model,
                                           const Dataset& dataset);

}  // namespace mialab
