#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mrnet/tensor.hpp"

namespace mrnet {

// n x n counts; rows are true classes, columns predicted classes.
struct ConfusionMatrix {
  std::int64_t n = 0;
  std::vector<std::int64_t> counts;

  explicit ConfusionMatrix(std::int64_t classes) : n(classes), counts(static_cast<std::size_t>(classes * classes), 0) {}
  std::int64_t& at(std::int64_t truth, std::int64_t pred) { return counts[static_cast<std::size_t>(truth * n + pred)]; }
  std::int64_t at(std::int64_t truth, std::int64_t pred) const {
    return counts[static_cast<std::size_t>(truth * n + pred)];
  }
  std::int64_t total() const;
  std::int64_t trace() const;
};

ConfusionMatrix confusion(const std::vector<std::int64_t>& predictions, const std::vector<std::int64_t>& labels,
                          std::int64_t n);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f_score = 0.0;
  std::int64_t support = 0;
  bool degenerate = false;  // some 0/0 ratio was resolved to 0
};

struct ClassificationReport {
  double accuracy = 0.0;
  std::vector<ClassMetrics> per_class;
  double weighted_precision = 0.0;
  double weighted_recall = 0.0;
  double weighted_f_score = 0.0;
  bool has_degenerate = false;
};

// Per-class precision/recall/F (harmonic mean) plus support-weighted
// averages; 0/0 ratios resolve to 0 and are flagged.
ClassificationReport report(const ConfusionMatrix& cm);

struct RocCurve {
  std::string tag;
  std::vector<std::pair<double, double>> points;  // (fpr, tpr), (0,0) .. (1,1)
  double auc = 0.0;
};

// Threshold sweep over distinct scores descending; AUC by trapezoidal rule
// (ties contribute 1/2). Requires at least one positive and one negative.
RocCurve roc_points(const std::vector<double>& scores, const std::vector<int>& labels, std::string tag = "");

struct MulticlassAuc {
  std::vector<std::optional<double>> per_class;  // nullopt when a class is absent
  std::optional<double> macro;                   // mean of defined per-class AUCs
  double micro = 0.0;
  bool missing_class = false;
  std::vector<RocCurve> curves;  // per-class curves, then micro, then macro
};

MulticlassAuc multiclass_auc(const Tensor& probs, const std::vector<std::int64_t>& labels);

struct ComparisonRow {
  std::string name;
  std::int64_t param_count = 0;
  double sec_per_epoch = 0.0;
  ClassificationReport metrics;
};

// Fixed-column text table (metrics rounded to 2 decimals, half-up) and the
// same rows as unrounded CSV.
std::string render_comparison_text(const std::vector<ComparisonRow>& rows);
std::string render_comparison_csv(const std::vector<ComparisonRow>& rows);

// One polyline per curve on unit-square axes with a diagonal reference line
// and a legend carrying each AUC to 2 decimals. SVG 1.1.
std::string render_roc_svg(const std::vector<RocCurve>& curves);

// Decimal rounding, half away from zero (0.585 -> 0.59 at 2 places).
std::string format_rounded(double value, int places);

}  // namespace mrnet
