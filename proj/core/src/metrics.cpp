#include "dct/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace dct::metrics {

void ConfusionCounts::merge(const ConfusionCounts& other) {
  if (other.n_classes != n_classes) throw std::invalid_argument("ConfusionCounts::merge: class count mismatch");
  for (size_t c = 0; c < tp.size(); ++c) {
    tp[c] += other.tp[c];
    fp[c] += other.fp[c];
    fn[c] += other.fn[c];
    tn[c] += other.tn[c];
  }
}

int64_t ConfusionCounts::total_pixels() const {
  if (n_classes == 0) return 0;
  return tp[0] + fp[0] + fn[0] + tn[0];
}

void accumulate(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt,
                ConfusionCounts& counts) {
  if (pred.size() != gt.size()) throw std::invalid_argument("accumulate: pred/gt size mismatch");
  if (counts.n_classes <= 0) throw std::invalid_argument("accumulate: counts not initialized");
  for (size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] >= counts.n_classes || gt[i] >= counts.n_classes)
      throw std::invalid_argument("accumulate: class id out of range");
    for (int64_t c = 0; c < counts.n_classes; ++c) {
      bool in_pred = pred[i] == c, in_gt = gt[i] == c;
      if (in_pred && in_gt)
        ++counts.tp[static_cast<size_t>(c)];
      else if (in_pred)
        ++counts.fp[static_cast<size_t>(c)];
      else if (in_gt)
        ++counts.fn[static_cast<size_t>(c)];
      else
        ++counts.tn[static_cast<size_t>(c)];
    }
  }
}

double iou(const ConfusionCounts& counts, int64_t cls) {
  if (cls < 0 || cls >= counts.n_classes) throw std::invalid_argument("iou: class out of range");
  auto c = static_cast<size_t>(cls);
  int64_t denom = counts.tp[c] + counts.fp[c] + counts.fn[c];
  if (denom == 0) return 1.0;  // absent everywhere: vacuously perfect
  return static_cast<double>(counts.tp[c]) / static_cast<double>(denom);
}

double miou(const ConfusionCounts& counts, const std::vector<int64_t>& foreground_classes) {
  if (foreground_classes.empty()) throw std::invalid_argument("miou: empty foreground class set");
  double acc = 0;
  for (int64_t c : foreground_classes) acc += iou(counts, c);
  return acc / static_cast<double>(foreground_classes.size());
}

namespace {

void check_ap_inputs(const std::vector<double>& scores, const std::vector<uint8_t>& gt_mask) {
  if (scores.size() != gt_mask.size()) throw std::invalid_argument("average_precision: size mismatch");
  for (double s : scores)
    if (std::isnan(s)) throw std::invalid_argument("average_precision: NaN score");
  for (uint8_t g : gt_mask)
    if (g > 1) throw std::invalid_argument("average_precision: gt mask must be binary");
}

}  // namespace

double average_precision(const std::vector<double>& scores, const std::vector<uint8_t>& gt_mask) {
  check_ap_inputs(scores, gt_mask);
  int64_t n_pos = std::accumulate(gt_mask.begin(), gt_mask.end(), int64_t{0});
  if (n_pos == 0) return 1.0;

  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return scores[a] > scores[b]; });

  double ap = 0, prev_recall = 0;
  int64_t tp = 0, fp = 0;
  size_t i = 0;
  while (i < order.size()) {
    // take the whole tie group at this threshold
    size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      if (gt_mask[order[j]])
        ++tp;
      else
        ++fp;
      ++j;
    }
    double recall = static_cast<double>(tp) / static_cast<double>(n_pos);
    double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

std::pair<double, double> ap_tie_bounds(const std::vector<double>& scores,
                                        const std::vector<uint8_t>& gt_mask) {
  check_ap_inputs(scores, gt_mask);
  int64_t n_pos = std::accumulate(gt_mask.begin(), gt_mask.end(), int64_t{0});
  if (n_pos == 0) return {1.0, 1.0};

  auto prefix_ap = [&](bool positives_first) {
    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      if (scores[a] != scores[b]) return scores[a] > scores[b];
      if (gt_mask[a] != gt_mask[b]) return positives_first ? gt_mask[a] > gt_mask[b] : gt_mask[a] < gt_mask[b];
      return false;
    });
    double ap = 0, prev_recall = 0;
    int64_t tp = 0, fp = 0;
    for (size_t idx : order) {
      if (gt_mask[idx])
        ++tp;
      else
        ++fp;
      double recall = static_cast<double>(tp) / static_cast<double>(n_pos);
      double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
      ap += (recall - prev_recall) * precision;
      prev_recall = recall;
    }
    return ap;
  };
  double hi = prefix_ap(true), lo = prefix_ap(false);
  return {lo, hi};
}

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["n_samples"] = n_samples;
  j["classes"] = nlohmann::ordered_json::array();
  for (size_t i = 0; i < class_names.size(); ++i)
    j["classes"].push_back(
        {{"name", class_names[i]}, {"iou", class_iou[i]}, {"ap", class_ap[i]}});
  j["miou"] = miou;
  j["map"] = map;
  j["ap_tie_delta"] = ap_tie_delta;
  j["ap_ties_noted"] = ap_ties_noted;
  return j.dump(2);
}

std::string MetricsReport::to_table() const {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(2);
  ss << std::left << std::setw(12) << "class" << std::right << std::setw(10) << "IoU(%)"
     << std::setw(10) << "AP(%)" << "\n";
  for (size_t i = 0; i < class_names.size(); ++i)
    ss << std::left << std::setw(12) << class_names[i] << std::right << std::setw(10)
       << class_iou[i] * 100.0 << std::setw(10) << class_ap[i] * 100.0 << "\n";
  ss << std::left << std::setw(12) << "mean" << std::right << std::setw(10) << miou * 100.0
     << std::setw(10) << map * 100.0 << "\n";
  if (ap_ties_noted)
    ss << "note: score ties move AP by " << std::scientific << std::setprecision(2) << ap_tie_delta
       << " across tie orders\n";
  return ss.str();
}

MetricsReport evaluate(const data::DatasetManifest& manifest, const std::string& split,
                       data::Mode mode, data::TargetClass target, const Predictor& predict) {
  auto entries = manifest.split_entries(split);
  if (entries.empty()) throw std::runtime_error("evaluate: no samples in split '" + split + "'");

  std::vector<std::string> fg_names;
  std::vector<int64_t> fg_ids;
  int64_t n_classes;
  if (mode == data::Mode::single_class) {
    fg_names = {data::target_class_name(target)};
    fg_ids = {1};
    n_classes = 2;
  } else {
    fg_names = {"road", "vehicle"};
    fg_ids = {1, 2};
    n_classes = 3;
  }

  ConfusionCounts counts(n_classes);
  std::vector<std::vector<double>> all_scores(fg_names.size());
  std::vector<std::vector<uint8_t>> all_gt(fg_names.size());

  for (const data::DatasetEntry* e : entries) {
    data::SupervisionTensor sup = data::load_supervision(manifest, *e, mode, target);
    std::vector<uint8_t> gt = data::supervision_to_classes(sup);
    PredictionView pred = predict(manifest, *e);
    if (pred.classes.size() != gt.size())
      throw std::runtime_error("evaluate: prediction resolution differs from supervision");
    if (pred.fg_scores.size() != fg_names.size())
      throw std::runtime_error("evaluate: prediction carries wrong number of class score maps");
    accumulate(pred.classes, gt, counts);
    for (size_t c = 0; c < fg_names.size(); ++c) {
      if (pred.fg_scores[c].size() != gt.size())
        throw std::runtime_error("evaluate: score map size mismatch");
      all_scores[c].insert(all_scores[c].end(), pred.fg_scores[c].begin(), pred.fg_scores[c].end());
      for (uint8_t g : gt) all_gt[c].push_back(g == fg_ids[c] ? 1 : 0);
    }
  }

  MetricsReport report;
  report.class_names = fg_names;
  report.n_samples = static_cast<int64_t>(entries.size());
  for (size_t c = 0; c < fg_names.size(); ++c) {
    report.class_iou.push_back(iou(counts, fg_ids[c]));
    report.class_ap.push_back(average_precision(all_scores[c], all_gt[c]));
    auto [lo, hi] = ap_tie_bounds(all_scores[c], all_gt[c]);
    report.ap_tie_delta = std::max(report.ap_tie_delta, hi - lo);
  }
  report.ap_ties_noted = report.ap_tie_delta > 1e-6;
  report.miou = miou(counts, fg_ids);
  report.map = std::accumulate(report.class_ap.begin(), report.class_ap.end(), 0.0) /
               static_cast<double>(report.class_ap.size());
  return report;
}

}  // namespace dct::metrics
