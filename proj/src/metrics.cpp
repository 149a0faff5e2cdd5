#include "mrnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace mrnet {

namespace {

[[noreturn]] void metrics_error(const std::string& msg) { throw std::invalid_argument(msg); }

std::string csv_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::int64_t ConfusionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::int64_t{0});
}

std::int64_t ConfusionMatrix::trace() const {
  std::int64_t t = 0;
  for (std::int64_t i = 0; i < n; ++i) t += at(i, i);
  return t;
}

ConfusionMatrix confusion(const std::vector<std::int64_t>& predictions, const std::vector<std::int64_t>& labels,
                          std::int64_t n) {
  if (predictions.size() != labels.size())
    metrics_error("confusion: " + std::to_string(predictions.size()) + " predictions vs " +
                  std::to_string(labels.size()) + " labels");
  if (n < 1) metrics_error("confusion: class count must be positive");
  ConfusionMatrix cm(n);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::int64_t t = labels[i], p = predictions[i];
    if (t < 0 || t >= n) metrics_error("confusion: label " + std::to_string(t) + " out of range");
    if (p < 0 || p >= n) metrics_error("confusion: prediction " + std::to_string(p) + " out of range");
    ++cm.at(t, p);
  }
  return cm;
}

ClassificationReport report(const ConfusionMatrix& cm) {
  ClassificationReport rep;
  const std::int64_t total = cm.total();
  rep.accuracy = total > 0 ? static_cast<double>(cm.trace()) / static_cast<double>(total) : 0.0;

  double wp = 0.0, wr = 0.0, wf = 0.0;
  std::int64_t support_sum = 0;
  for (std::int64_t c = 0; c < cm.n; ++c) {
    const std::int64_t tp = cm.at(c, c);
    std::int64_t row = 0, col = 0;
    for (std::int64_t j = 0; j < cm.n; ++j) {
      row += cm.at(c, j);
      col += cm.at(j, c);
    }
    ClassMetrics m;
    m.support = row;
    const std::int64_t fp = col - tp, fn = row - tp;
    if (tp + fp > 0)
      m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    else
      m.degenerate = true;
    if (tp + fn > 0)
      m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    else
      m.degenerate = true;
    if (m.precision + m.recall > 0.0)
      m.f_score = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    else
      m.degenerate = true;
    rep.has_degenerate = rep.has_degenerate || m.degenerate;
    wp += static_cast<double>(m.support) * m.precision;
    wr += static_cast<double>(m.support) * m.recall;
    wf += static_cast<double>(m.support) * m.f_score;
    support_sum += m.support;
    rep.per_class.push_back(m);
  }
  if (support_sum > 0) {
    rep.weighted_precision = wp / static_cast<double>(support_sum);
    rep.weighted_recall = wr / static_cast<double>(support_sum);
    rep.weighted_f_score = wf / static_cast<double>(support_sum);
  }
  return rep;
}

RocCurve roc_points(const std::vector<double>& scores, const std::vector<int>& labels, std::string tag) {
  if (scores.size() != labels.size()) metrics_error("roc_points: score/label length mismatch");
  std::int64_t P = 0, N = 0;
  for (int l : labels) (l ? P : N) += 1;
  if (P == 0 || N == 0)
    metrics_error("roc_points: need at least one positive and one negative label (got " + std::to_string(P) +
                  " positives, " + std::to_string(N) + " negatives); AUC is undefined");

  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocCurve curve;
  curve.tag = std::move(tag);
  curve.points.emplace_back(0.0, 0.0);
  std::int64_t tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < idx.size()) {
    // One threshold per distinct score: everything at or above it is
    // predicted positive, so tied scores advance as a block.
    const double s = scores[idx[i]];
    while (i < idx.size() && scores[idx[i]] == s) {
      (labels[idx[i]] ? tp : fp) += 1;
      ++i;
    }
    curve.points.emplace_back(static_cast<double>(fp) / static_cast<double>(N),
                              static_cast<double>(tp) / static_cast<double>(P));
  }

  double auc = 0.0;
  for (std::size_t k = 1; k < curve.points.size(); ++k) {
    const auto& [x0, y0] = curve.points[k - 1];
    const auto& [x1, y1] = curve.points[k];
    auc += (x1 - x0) * (y0 + y1) * 0.5;
  }
  curve.auc = auc;
  return curve;
}

namespace {

// Linear interpolation of a curve's tpr at a given fpr.
double tpr_at(const RocCurve& curve, double fpr) {
  const auto& pts = curve.points;
  if (fpr <= pts.front().first) return pts.front().second;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    if (fpr <= pts[i].first) {
      const double x0 = pts[i - 1].first, y0 = pts[i - 1].second;
      const double x1 = pts[i].first, y1 = pts[i].second;
      if (x1 == x0) return std::max(y0, y1);
      const double t = (fpr - x0) / (x1 - x0);
      return y0 + t * (y1 - y0);
    }
  }
  return pts.back().second;
}

}  // namespace

MulticlassAuc multiclass_auc(const Tensor& probs, const std::vector<std::int64_t>& labels) {
  if (probs.rank() != 2) metrics_error("multiclass_auc: probs must be (N,n), got " + shape_str(probs.shape()));
  const std::int64_t N = probs.dim(0), n = probs.dim(1);
  if (n < 2) metrics_error("multiclass_auc: need at least 2 classes");
  if (static_cast<std::int64_t>(labels.size()) != N) metrics_error("multiclass_auc: label count mismatch");
  for (std::int64_t l : labels)
    if (l < 0 || l >= n) metrics_error("multiclass_auc: label " + std::to_string(l) + " out of range");
  if (N == 0) metrics_error("multiclass_auc: empty input");

  MulticlassAuc out;
  out.per_class.resize(static_cast<std::size_t>(n));
  std::vector<const RocCurve*> class_curves;
  double auc_sum = 0.0;
  std::int64_t auc_count = 0;

  for (std::int64_t c = 0; c < n; ++c) {
    std::vector<double> scores(static_cast<std::size_t>(N));
    std::vector<int> binary(static_cast<std::size_t>(N));
    std::int64_t pos = 0;
    for (std::int64_t i = 0; i < N; ++i) {
      scores[static_cast<std::size_t>(i)] = probs[i * n + c];
      binary[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(i)] == c ? 1 : 0;
      pos += binary[static_cast<std::size_t>(i)];
    }
    if (pos == 0 || pos == N) {
      out.missing_class = true;
      continue;
    }
    RocCurve curve = roc_points(scores, binary, "class " + std::to_string(c));
    out.per_class[static_cast<std::size_t>(c)] = curve.auc;
    auc_sum += curve.auc;
    ++auc_count;
    out.curves.push_back(std::move(curve));
  }
  for (const auto& c : out.curves) class_curves.push_back(&c);

  // Micro: one-vs-rest indicators over all N*n (score, membership) pairs.
  std::vector<double> flat_scores;
  std::vector<int> flat_labels;
  flat_scores.reserve(static_cast<std::size_t>(N * n));
  flat_labels.reserve(static_cast<std::size_t>(N * n));
  for (std::int64_t i = 0; i < N; ++i)
    for (std::int64_t c = 0; c < n; ++c) {
      flat_scores.push_back(probs[i * n + c]);
      flat_labels.push_back(labels[static_cast<std::size_t>(i)] == c ? 1 : 0);
    }
  RocCurve micro = roc_points(flat_scores, flat_labels, "micro-average");
  out.micro = micro.auc;

  if (auc_count > 0) {
    out.macro = auc_sum / static_cast<double>(auc_count);
    // Macro curve: pointwise mean of per-class curves on the merged fpr
    // grid. Its legend value is the mean of per-class AUCs.
    std::set<double> grid{0.0, 1.0};
    for (const RocCurve* c : class_curves)
      for (const auto& p : c->points) grid.insert(p.first);
    RocCurve macro_curve;
    macro_curve.tag = "macro-average";
    for (double fpr : grid) {
      double acc = 0.0;
      for (const RocCurve* c : class_curves) acc += tpr_at(*c, fpr);
      macro_curve.points.emplace_back(fpr, acc / static_cast<double>(class_curves.size()));
    }
    macro_curve.auc = *out.macro;
    out.curves.push_back(std::move(micro));
    out.curves.push_back(std::move(macro_curve));
  } else {
    out.curves.push_back(std::move(micro));
  }
  return out;
}

std::string format_rounded(double value, int places) {
  double scale = 1.0;
  for (int i = 0; i < places; ++i) scale *= 10.0;
  const double sign = value < 0.0 ? -1.0 : 1.0;
  // Nudge before flooring so decimal halves like 0.585 round up despite
  // their binary representation sitting just below the half.
  const auto scaled = static_cast<long long>(std::floor(std::abs(value) * scale + 0.5 + 1e-9));
  long long ip = scaled;
  char buf[64];
  if (places == 0) {
    std::snprintf(buf, sizeof(buf), "%lld", static_cast<long long>(sign) * ip);
    return buf;
  }
  long long div = 1;
  for (int i = 0; i < places; ++i) div *= 10;
  const long long frac = ip % div;
  ip /= div;
  std::snprintf(buf, sizeof(buf), "%s%lld.%0*lld", sign < 0 ? "-" : "", ip, places, frac);
  return buf;
}

namespace {

std::vector<std::string> row_cells(const ComparisonRow& r) {
  return {r.name,
          std::to_string(r.param_count),
          format_rounded(r.sec_per_epoch, 0) + "s",
          format_rounded(r.metrics.accuracy, 2),
          format_rounded(r.metrics.weighted_precision, 2),
          format_rounded(r.metrics.weighted_recall, 2),
          format_rounded(r.metrics.weighted_f_score, 2)};
}

}  // namespace

std::string render_comparison_text(const std::vector<ComparisonRow>& rows) {
  if (rows.empty()) metrics_error("render_comparison: no rows");
  const std::vector<std::string> header = {"name",     "Total parameters", "Time per epoch", "Accuracy",
                                           "Precision", "Recall",           "Fscore"};
  std::vector<std::vector<std::string>> cells{header};
  for (const auto& r : rows) cells.push_back(row_cells(r));

  std::vector<std::size_t> widths(header.size(), 0);
  for (const auto& row : cells)
    for (std::size_t i = 0; i < row.size(); ++i) widths[i] = std::max(widths[i], row[i].size());

  std::ostringstream os;
  for (const auto& row : cells) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      os << row[i];
      if (i + 1 < row.size()) os << std::string(widths[i] - row[i].size() + 2, ' ');
    }
    os << '\n';
  }
  return os.str();
}

std::string render_comparison_csv(const std::vector<ComparisonRow>& rows) {
  if (rows.empty()) metrics_error("render_comparison: no rows");
  std::ostringstream os;
  os << "name,total_parameters,sec_per_epoch,accuracy,precision,recall,fscore\n";
  for (const auto& r : rows) {
    os << r.name << ',' << r.param_count << ',' << csv_double(r.sec_per_epoch) << ','
       << csv_double(r.metrics.accuracy) << ',' << csv_double(r.metrics.weighted_precision) << ','
       << csv_double(r.metrics.weighted_recall) << ',' << csv_double(r.metrics.weighted_f_score) << '\n';
  }
  return os.str();
}

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

}  // namespace

std::string render_roc_svg(const std::vector<RocCurve>& curves) {
  if (curves.empty()) metrics_error("render_roc_svg: no curves");
  const double size = 560.0, lo = 60.0, hi = 520.0;
  auto px = [&](double fpr) { return lo + fpr * (hi - lo); };
  auto py = [&](double tpr) { return hi - tpr * (hi - lo); };

  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << size << "\" height=\"" << size
     << "\" viewBox=\"0 0 " << size << " " << size << "\">\n"
     << "<rect x=\"0\" y=\"0\" width=\"" << size << "\" height=\"" << size << "\" fill=\"white\"/>\n"
     << "<rect x=\"" << lo << "\" y=\"" << lo << "\" width=\"" << hi - lo << "\" height=\"" << hi - lo
     << "\" fill=\"none\" stroke=\"black\"/>\n"
     << "<line x1=\"" << px(0) << "\" y1=\"" << py(0) << "\" x2=\"" << px(1) << "\" y2=\"" << py(1)
     << "\" stroke=\"grey\" stroke-dasharray=\"6,4\"/>\n"
     << "<text x=\"" << (lo + hi) / 2 << "\" y=\"" << hi + 34 << "\" text-anchor=\"middle\">false positive rate</text>\n"
     << "<text x=\"18\" y=\"" << (lo + hi) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
     << (lo + hi) / 2 << ")\">true positive rate</text>\n";

  for (std::size_t i = 0; i < curves.size(); ++i) {
    const char* color = kPalette[i % (sizeof(kPalette) / sizeof(kPalette[0]))];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& [fpr, tpr] : curves[i].points) os << px(fpr) << ',' << py(tpr) << ' ';
    os << "\"/>\n";
  }
  for (std::size_t i = 0; i < curves.size(); ++i) {
    const char* color = kPalette[i % (sizeof(kPalette) / sizeof(kPalette[0]))];
    const double y = lo + 16 + 18 * static_cast<double>(i);
    os << "<rect x=\"" << lo + 12 << "\" y=\"" << y - 9 << "\" width=\"14\" height=\"4\" fill=\"" << color << "\"/>\n"
       << "<text x=\"" << lo + 32 << "\" y=\"" << y << "\" font-size=\"13\">" << xml_escape(curves[i].tag)
       << " (AUC = " << format_rounded(curves[i].auc, 2) << ")</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace mrnet
