#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dct/dataset.hpp"

namespace dct::metrics {

struct ConfusionCounts {
  int64_t n_classes = 0;
  std::vector<int64_t> tp, fp, fn, tn;

  explicit ConfusionCounts(int64_t classes = 0) { reset(classes); }

  void reset(int64_t classes) {
    n_classes = classes;
    tp.assign(static_cast<size_t>(classes), 0);
    fp.assign(static_cast<size_t>(classes), 0);
    fn.assign(static_cast<size_t>(classes), 0);
    tn.assign(static_cast<size_t>(classes), 0);
  }

  // associative/commutative, so per-sample counts can merge in any order
  void merge(const ConfusionCounts& other);
  int64_t total_pixels() const;
};

void accumulate(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt,
                ConfusionCounts& counts);

// TP/(TP+FP+FN); a class absent from both pred and gt scores 1.0
double iou(const ConfusionCounts& counts, int64_t cls);
double miou(const ConfusionCounts& counts, const std::vector<int64_t>& foreground_classes);

// Pixel-ranking AP with thresholds at each distinct score (step
// interpolation). Empty ground truth returns 1.0 by convention.
double average_precision(const std::vector<double>& scores, const std::vector<uint8_t>& gt_mask);

// AP bounds under the two extreme tie orders (positives-first = upper,
// negatives-first = lower) using a per-pixel prefix sweep; the group-threshold
// AP always lies inside.
std::pair<double, double> ap_tie_bounds(const std::vector<double>& scores,
                                        const std::vector<uint8_t>& gt_mask);

struct MetricsReport {
  std::vector<std::string> class_names;  // foreground classes, report order
  std::vector<double> class_iou;
  std::vector<double> class_ap;
  double miou = 0;
  double map = 0;
  int64_t n_samples = 0;
  double ap_tie_delta = 0;   // max over classes of (upper - lower) tie bound
  bool ap_ties_noted = false;  // true when ap_tie_delta > 1e-6

  std::string to_json() const;
  std::string to_table() const;  // fixed layout, percentages with 2 decimals
};

// pred classes + per-foreground-class scores for one sample, both H*W
struct PredictionView {
  std::vector<uint8_t> classes;
  std::vector<std::vector<double>> fg_scores;  // indexed like MetricsReport::class_names
};

using Predictor =
    std::function<PredictionView(const data::DatasetManifest&, const data::DatasetEntry&)>;

// Runs `predict` over every entry of `split`, compares with supervision
// rendered from the stored scenes, and aggregates IoU counts and pixel
// rankings over the whole split.
MetricsReport evaluate(const data::DatasetManifest& manifest, const std::string& split,
                       data::Mode mode, data::TargetClass target, const Predictor& predict);

}  // namespace dct::metrics
