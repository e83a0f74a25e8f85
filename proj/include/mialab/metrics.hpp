// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace mialab {

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocCurve {
  std::vector<RocPoint> points;      // starts at (0,0), ends at (1,1)
  std::vector<double> thresholds;    // threshold producing points[i+1]
};

// ROC for score-ascending membership scores (higher score => more likely
// member). Sweeps the distinct thresholds in descending order, grouping ties,
// so every achievable (fpr, tpr) operating point appears exactly once.
// Requires at least one member and one non-member.
RocCurve roc(const std::vector<double>& scores,
             const std::vector<bool>& is_member);

// Area under the ROC curve by trapezoidal integration. Equals the
// Mann-Whitney pairwise statistic with ties counted one half.
double auc(const RocCurve& curve);

// Largest TPR achievable at FPR <= fpr_target (conservative step
// interpolation along the empirical curve).
double tpr_at_fpr(const RocCurve& curve, double fpr_target);

struct TprCell {
  double fpr_target = 0.0;
  double tpr = 0.0;
  // True when the non-member sample cannot resolve the requested FPR
  // (fpr_target < 1 / num_nonmembers); the reported TPR is then the
  // at-zero-FPR value and should be read with care.
  bool insufficient_n = false;
};

struct MetricsReport {
  double auc = 0.0;
  std::vector<TprCell> tpr_at;  // same order as the requested grid
  std::size_t num_members = 0;
  std::size_t num_nonmembers = 0;
};

MetricsReport evaluate(const std::vector<double>& scores,
                       const std::vector<bool>& is_member,
                       const std::vector<double>& fpr_grid);

std::string metrics_to_json(const MetricsReport& report);
std::string roc_to_json(const RocCurve& curve);
void save_roc_csv(const RocCurve& curve, const std::string& path);
void save_roc_json(const RocCurve& curve, const std::string& path);
void save_metrics_json(const MetricsReport& report, const std::string& path);

}  // namespace mialab
