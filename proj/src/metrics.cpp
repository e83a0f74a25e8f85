// SPDX-License-Identifier: Apache-2.0
#include "mialab/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "mialab/common.hpp"

namespace mialab {

RocCurve roc(const std::vector<double>& scores,
             const std::vector<bool>& is_member) {
  if (scores.size() != is_member.size()) {
    throw ShapeError("roc: scores and labels differ in length");
  }
  std::size_t num_pos = 0;
  std::size_t num_neg = 0;
  for (bool m : is_member) (m ? num_pos : num_neg) += 1;
  if (num_pos == 0 || num_neg == 0) {
    throw ConfigError("roc: need at least one member and one non-member");
  }

  // Sort by score descending; group equal scores into one threshold step.
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });

  RocCurve curve;
  curve.points.push_back({0.0, 0.0});
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double threshold = scores[order[i]];
    while (i < order.size() && scores[order[i]] == threshold) {
      if (is_member[order[i]]) {
        ++tp;
      } else {
        ++fp;
      }
      ++i;
    }
    curve.points.push_back({static_cast<double>(fp) / static_cast<double>(num_neg),
                            static_cast<double>(tp) / static_cast<double>(num_pos)});
    curve.thresholds.push_back(threshold);
  }
  // The final group releases every example, so the curve ends at (1,1) exactly.
  curve.points.back() = {1.0, 1.0};
  return curve;
}

double auc(const RocCurve& curve) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    const RocPoint& a = curve.points[i - 1];
    const RocPoint& b = curve.points[i];
    area += (b.fpr - a.fpr) * 0.5 * (a.tpr + b.tpr);
  }
  return area;
}

double tpr_at_fpr(const RocCurve& curve, double fpr_target) {
  double best = 0.0;
  for (const RocPoint& p : curve.points) {
    if (p.fpr <= fpr_target && p.tpr > best) best = p.tpr;
  }
  return best;
}

MetricsReport evaluate(const std::vector<double>& scores,
                       const std::vector<bool>& is_member,
                       const std::vector<double>& fpr_grid) {
  RocCurve curve = roc(scores, is_member);
  MetricsReport report;
  report.auc = auc(curve);
  for (bool m : is_member) {
    if (m) {
      ++report.num_members;
    } else {
      ++report.num_nonmembers;
    }
  }
  for (double target : fpr_grid) {
    TprCell cell;
    cell.fpr_target = target;
    cell.tpr = tpr_at_fpr(curve, target);
    cell.insufficient_n =
        target > 0.0 &&
        target < 1.0 / static_cast<double>(report.num_nonmembers);
    report.tpr_at.push_back(cell);
  }
  return report;
}

std::string metrics_to_json(const MetricsReport& report) {
  std::ostringstream out;
  out << "{\n  \"auc\": " << format_double(report.auc) << ",\n";
  out << "  \"num_members\": " << report.num_members << ",\n";
  out << "  \"num_nonmembers\": " << report.num_nonmembers << ",\n";
  out << "  \"tpr_at_fpr\": [";
  for (std::size_t i = 0; i < report.tpr_at.size(); ++i) {
    const TprCell& cell = report.tpr_at[i];
    if (i > 0) out << ',';
    out << "\n    {\"fpr_target\": " << format_double(cell.fpr_target)
        << ", \"tpr\": " << format_double(cell.tpr) << ", \"insufficient_n\": "
        << (cell.insufficient_n ? "true" : "false") << "}";
  }
  out << "\n  ]\n}\n";
  return out.str();
}

std::string roc_to_json(const RocCurve& curve) {
  std::ostringstream out;
  out << "{\n  \"points\": [";
  for (std::size_t i = 0; i < curve.points.size(); ++i) {
    if (i > 0) out << ',';
    out << "\n    {\"fpr\": " << format_double(curve.points[i].fpr)
        << ", \"tpr\": " << format_double(curve.points[i].tpr) << "}";
  }
  out << "\n  ],\n  \"thresholds\": [";
  for (std::size_t i = 0; i < curve.thresholds.size(); ++i) {
    if (i > 0) out << ", ";
    out << format_double(curve.thresholds[i]);
  }
  out << "]\n}\n";
  return out.str();
}

void save_roc_json(const RocCurve& curve, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open roc json for writing: " + path);
  out << roc_to_json(curve);
}

void save_roc_csv(const RocCurve& curve, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open roc csv for writing: " + path);
  out << "fpr,tpr\n";
  for (const RocPoint& p : curve.points) {
    out << format_double(p.fpr) << ',' << format_double(p.tpr) << '\n';
  }
}

void save_metrics_json(const MetricsReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open metrics json for writing: " + path);
  out << metrics_to_json(report);
}

}  // namespace mialab
