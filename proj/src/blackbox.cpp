// SPDX-License-Identifier: Apache-2.0
#include "mialab/blackbox.hpp"

#include <algorithm>
#include <cmath>

namespace mialab {

std::vector<double> reconstruct_logits(const std::vector<double>& probs) {
  if (probs.empty()) throw ShapeError("reconstruct_logits: empty input");
  std::vector<double> z(probs.size());
  double mean_log = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    z[k] = std::log(clamp_prob(probs[k]));
    mean_log += z[k];
  }
  mean_log /= static_cast<double>(probs.size());
  for (double& v : z) v -= mean_log;
  return z;
}

ReconstructionReport reconstruction_report(const Classifier& model,
                                           const Dataset& dataset) {
  if (dataset.empty())
    throw ConfigError("reconstruction_report: empty dataset");
  ReconstructionReport report;
  std::size_t coord_count = 0;
  for (const Example& ex : dataset.examples) {
    std::vector<double> z = forward_logits(model, ex.features);
    std::vector<double> rec = reconstruct_logits(softmax(z, 1.0));
    double zsum = 0.0;
    for (double v : z) zsum += v;
    report.logit_sum_estimate += std::abs(zsum);
    for (std::size_t k = 0; k < z.size(); ++k) {
      double err = std::abs(rec[k] - z[k]);
      report.mean_abs_error += err;
      report.max_abs_error = std::max(report.max_abs_error, err);
      ++coord_count;
    }
  }
  report.mean_abs_error /= static_cast<double>(coord_count);
  report.logit_sum_estimate /= static_cast<double>(dataset.size());
  return report;
}

}  // namespace mialab
