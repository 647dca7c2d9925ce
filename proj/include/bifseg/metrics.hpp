#pragma once

// Pixelwise confusion counts and the five segmentation metrics, with
// per-fold mean and population standard deviation.

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bifseg/tensor.hpp"

namespace bifseg {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  friend ConfusionCounts operator+(ConfusionCounts a, const ConfusionCounts& b) { return a += b; }
  bool operator==(const ConfusionCounts&) const = default;
};

struct MetricReport {
  double sensitivity = 0.0;
  double specificity = 0.0;
  double iou = 0.0;
  double dice = 0.0;
  double ppv = 0.0;

  bool operator==(const MetricReport&) const = default;
};

// Reporting order and machine-readable key of each metric.
inline constexpr std::array<std::pair<std::string_view, double MetricReport::*>, 5> kMetricFields{{
    {"iou", &MetricReport::iou},
    {"dice", &MetricReport::dice},
    {"ppv", &MetricReport::ppv},
    {"sensitivity", &MetricReport::sensitivity},
    {"specificity", &MetricReport::specificity},
}};

template <typename T>
ConfusionCounts confusion_counts(const Tensor<T>& pred_mask, const Tensor<T>& gt_mask) {
  if (pred_mask.shape() != gt_mask.shape()) {
    throw ShapeError("confusion_counts prediction " + pred_mask.shape().str() + " vs ground truth " +
                     gt_mask.shape().str());
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred_mask.size(); ++i) {
    const bool p = pred_mask[i] != T(0);
    const bool g = gt_mask[i] != T(0);
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

// Zero denominators follow the empty-set conventions: with no positives in
// either mask dice, iou, sensitivity and ppv are 1; with no negatives in
// the ground truth specificity is 1.
inline MetricReport metrics_from_counts(const ConfusionCounts& c) {
  const auto tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp), fn = static_cast<double>(c.fn),
             tn = static_cast<double>(c.tn);
  auto ratio = [](double num, double den) { return den == 0.0 ? 1.0 : num / den; };
  MetricReport r;
  if (c.tp + c.fp + c.fn == 0) {
    r.sensitivity = r.ppv = r.iou = r.dice = 1.0;
  } else {
    // A zero here means the other term is positive, so the ratio is 0.
    r.sensitivity = c.tp + c.fn == 0 ? 0.0 : tp / (tp + fn);
    r.ppv = c.tp + c.fp == 0 ? 0.0 : tp / (tp + fp);
    r.iou = tp / (tp + fp + fn);
    r.dice = 2.0 * tp / (2.0 * tp + fp + fn);
  }
  r.specificity = ratio(tn, tn + fp);
  return r;
}

struct FoldSummary {
  MetricReport mean;
  MetricReport std;  // population (divide by n)
};

inline FoldSummary aggregate_folds(const std::vector<MetricReport>& reports) {
  if (reports.empty()) throw ContractError("aggregate_folds needs at least one report");
  const double n = static_cast<double>(reports.size());
  FoldSummary s;
  for (const auto& [name, field] : kMetricFields) {
    double mean = 0.0;
    for (const auto& r : reports) mean += r.*field;
    mean /= n;
    double var = 0.0;
    for (const auto& r : reports) var += (r.*field - mean) * (r.*field - mean);
    s.mean.*field = mean;
    s.std.*field = std::sqrt(var / n);
  }
  return s;
}

}  // namespace bifseg
