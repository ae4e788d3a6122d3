#pragma once

// Accuracy and positive-class precision/recall/F1 as percentages, with
// macro-averaged variants over both classes.

#include <string>
#include <vector>

#include "vyang/tensor.hpp"

namespace vyang {

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::size_t total() const { return tp + fp + tn + fn; }
  bool operator==(const Confusion&) const = default;
};

struct MetricsReport {
  double accuracy = 0, precision = 0, recall = 0, f1 = 0;
  double macro_precision = 0, macro_recall = 0, macro_f1 = 0;
  Confusion counts;
};

namespace metrics_detail {

inline double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : 100.0 * static_cast<double>(num) / static_cast<double>(den);
}
inline double harmonic(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

}  // namespace metrics_detail

inline MetricsReport metrics_from_confusion(const Confusion& c) {
  using metrics_detail::harmonic;
  using metrics_detail::ratio;
  MetricsReport r;
  r.counts = c;
  r.accuracy = ratio(c.tp + c.tn, c.total());
  r.precision = ratio(c.tp, c.tp + c.fp);
  r.recall = ratio(c.tp, c.tp + c.fn);
  r.f1 = harmonic(r.precision, r.recall);
  // the negative class mirrors tp <-> tn and fp <-> fn
  double np = ratio(c.tn, c.tn + c.fn), nr = ratio(c.tn, c.tn + c.fp);
  r.macro_precision = 0.5 * (r.precision + np);
  r.macro_recall = 0.5 * (r.recall + nr);
  r.macro_f1 = 0.5 * (r.f1 + harmonic(np, nr));
  return r;
}

inline MetricsReport compute_metrics(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.size() != labels.size()) {
    throw DimensionError("compute_metrics: " + std::to_string(predictions.size()) + " predictions for " +
                         std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw Error("compute_metrics: no predictions");
  Confusion c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    bool p = predictions[i] == 1, y = labels[i] == 1;
    if (p && y) ++c.tp;
    else if (p) ++c.fp;
    else if (y) ++c.fn;
    else ++c.tn;
  }
  return metrics_from_confusion(c);
}

// Unweighted mean of each metric; counts are summed.
inline MetricsReport aggregate_folds(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw Error("aggregate_folds: no reports");
  MetricsReport m;
  for (const auto& r : reports) {
    m.accuracy += r.accuracy;
    m.precision += r.precision;
    m.recall += r.recall;
    m.f1 += r.f1;
    m.macro_precision += r.macro_precision;
    m.macro_recall += r.macro_recall;
    m.macro_f1 += r.macro_f1;
    m.counts.tp += r.counts.tp;
    m.counts.fp += r.counts.fp;
    m.counts.tn += r.counts.tn;
    m.counts.fn += r.counts.fn;
  }
  double k = static_cast<double>(reports.size());
  for (double* v : {&m.accuracy, &m.precision, &m.recall, &m.f1, &m.macro_precision, &m.macro_recall, &m.macro_f1})
    *v /= k;
  return m;
}

}  // namespace vyang
