#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "dct/metrics.hpp"
#include "dct/rng.hpp"

using namespace dct::metrics;
using dct::Rng;

namespace {

// Independent IoU via explicit set arithmetic on pixel index sets.
double iou_sets(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt, uint8_t cls) {
  std::set<size_t> p, g;
  for (size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == cls) p.insert(i);
    if (gt[i] == cls) g.insert(i);
  }
  std::vector<size_t> inter, uni;
  std::set_intersection(p.begin(), p.end(), g.begin(), g.end(), std::back_inserter(inter));
  std::set_union(p.begin(), p.end(), g.begin(), g.end(), std::back_inserter(uni));
  if (uni.empty()) return 1.0;
  return static_cast<double>(inter.size()) / static_cast<double>(uni.size());
}

// Independent AP: enumerate the distinct score thresholds from above,
// compute precision/recall with plain loops, and step-integrate.
double ap_reference(const std::vector<double>& scores, const std::vector<uint8_t>& gt) {
  size_t n_pos = 0;
  for (uint8_t g : gt) n_pos += g;
  if (n_pos == 0) return 1.0;
  std::vector<double> thresholds(scores.begin(), scores.end());
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  double ap = 0, prev_recall = 0;
  for (double th : thresholds) {
    size_t tp = 0, fp = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] >= th) {
        if (gt[i]) ++tp;
        else ++fp;
      }
    }
    double precision = tp + fp == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    double recall = static_cast<double>(tp) / static_cast<double>(n_pos);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

}  // namespace

TEST_CASE("iou agrees with set arithmetic on every 3x3 prediction mask") {
  Rng rng(1);
  std::vector<std::vector<uint8_t>> gts;
  for (int g = 0; g < 20; ++g) {
    std::vector<uint8_t> gt(9);
    for (auto& v : gt) v = static_cast<uint8_t>(rng.uniform_int(uint64_t{2}));
    gts.push_back(gt);
  }
  for (int mask = 0; mask < 512; ++mask) {
    std::vector<uint8_t> pred(9);
    for (int b = 0; b < 9; ++b) pred[static_cast<size_t>(b)] = (mask >> b) & 1;
    for (const auto& gt : gts) {
      ConfusionCounts counts(2);
      accumulate(pred, gt, counts);
      REQUIRE(iou(counts, 1) == iou_sets(pred, gt, 1));
      REQUIRE(iou(counts, 0) == iou_sets(pred, gt, 0));
    }
  }
}

TEST_CASE("iou conventions: empty class scores one, perfect match scores one") {
  ConfusionCounts c(2);
  std::vector<uint8_t> zeros(4, 0);
  accumulate(zeros, zeros, c);
  CHECK(iou(c, 1) == 1.0);  // class 1 absent everywhere
  CHECK(iou(c, 0) == 1.0);
  CHECK_THROWS(iou(c, 5));
}

TEST_CASE("miou averages foreground classes only") {
  ConfusionCounts c(3);
  std::vector<uint8_t> pred = {0, 1, 2, 2};
  std::vector<uint8_t> gt = {0, 1, 2, 1};
  accumulate(pred, gt, c);
  // class1: tp=1 fp=0 fn=1 -> 0.5 ; class2: tp=1 fp=1 fn=0 -> 0.5
  CHECK(miou(c, {1, 2}) == doctest::Approx(0.5));
  CHECK_THROWS(miou(c, {}));
}

TEST_CASE("confusion merge is associative and accumulate validates input") {
  Rng rng(2);
  std::vector<uint8_t> p1 = {0, 1, 1}, g1 = {1, 1, 0};
  std::vector<uint8_t> p2 = {1, 0}, g2 = {1, 1};
  ConfusionCounts a(2), b(2), ab(2);
  accumulate(p1, g1, a);
  accumulate(p2, g2, b);
  accumulate(p1, g1, ab);
  accumulate(p2, g2, ab);
  ConfusionCounts merged(2);
  merged.merge(a);
  merged.merge(b);
  CHECK(merged.tp == ab.tp);
  CHECK(merged.fp == ab.fp);
  CHECK(merged.fn == ab.fn);
  CHECK(merged.tn == ab.tn);
  CHECK(merged.total_pixels() == 5);

  ConfusionCounts c(2);
  std::vector<uint8_t> mismatched = {0};
  CHECK_THROWS(accumulate(p1, mismatched, c));
  std::vector<uint8_t> out_of_range = {7, 0, 0};
  CHECK_THROWS(accumulate(out_of_range, g1, c));
}

// scores [0.9, 0.8, 0.1], gt [1, 0, 1]:
// th=0.9: P=1, R=1/2 ; th=0.8: P=1/2, R=1/2 ; th=0.1: P=2/3, R=1
// AP = 0.5*1 + 0*0.5 + 0.5*(2/3) = 5/6
TEST_CASE("average precision: hand-swept three-pixel case") {
  double ap = average_precision({0.9, 0.8, 0.1}, {1, 0, 1});
  CHECK(std::abs(ap - 5.0 / 6.0) <= 1e-12);
}

TEST_CASE("average precision: conventions at the edges") {
  CHECK(average_precision({0.4, 0.6}, {0, 0}) == 1.0);  // nothing to find
  CHECK(average_precision({0.9, 0.1}, {1, 0}) == doctest::Approx(1.0));  // perfect ranking
  CHECK(average_precision({0.1, 0.9}, {1, 0}) == doctest::Approx(0.5));  // inverted ranking
  CHECK_THROWS(average_precision({0.5}, {2}));                           // non-binary gt
  CHECK_THROWS(average_precision({std::nan("")}, {1}));                  // NaN score
  CHECK_THROWS(average_precision({0.5, 0.5}, {1}));                      // length mismatch
}

TEST_CASE("average precision matches brute-force threshold enumeration") {
  Rng rng(3);
  const double score_pool[] = {0.1, 0.25, 0.25, 0.5, 0.7, 0.7, 0.7, 0.93};  // forces ties
  for (int inst = 0; inst < 400; ++inst) {
    size_t n = 1 + rng.uniform_int(uint64_t{8});
    std::vector<double> scores(n);
    std::vector<uint8_t> gt(n);
    for (size_t i = 0; i < n; ++i) {
      scores[i] = inst % 2 == 0 ? score_pool[rng.uniform_int(uint64_t{8})] : rng.uniform();
      gt[i] = static_cast<uint8_t>(rng.uniform_int(uint64_t{2}));
    }
    double got = average_precision(scores, gt);
    double want = ap_reference(scores, gt);
    REQUIRE(std::abs(got - want) <= 1e-9);
  }
}

TEST_CASE("tie bounds bracket the grouped AP and collapse without ties") {
  std::vector<double> scores = {0.9, 0.5, 0.5, 0.5, 0.2};
  std::vector<uint8_t> gt = {1, 1, 0, 1, 0};
  auto [lo, hi] = ap_tie_bounds(scores, gt);
  double mid = average_precision(scores, gt);
  CHECK(lo <= mid + 1e-12);
  CHECK(mid <= hi + 1e-12);
  CHECK(hi - lo > 1e-6);  // this case genuinely depends on tie order

  std::vector<double> distinct = {0.9, 0.7, 0.5, 0.3, 0.2};
  auto [lo2, hi2] = ap_tie_bounds(distinct, gt);
  CHECK(lo2 == doctest::Approx(hi2).epsilon(1e-12));
  CHECK(lo2 == doctest::Approx(average_precision(distinct, gt)).epsilon(1e-12));
}

TEST_CASE("report renders a table and json with matching numbers") {
  MetricsReport r;
  r.class_names = {"road", "vehicle"};
  r.class_iou = {0.75, 0.5};
  r.class_ap = {0.8, 0.6};
  r.miou = 0.625;
  r.map = 0.7;
  r.n_samples = 3;
  std::string table = r.to_table();
  CHECK(table.find("road") != std::string::npos);
  CHECK(table.find("75.00") != std::string::npos);
  CHECK(table.find("mean") != std::string::npos);
  auto j = nlohmann::json::parse(r.to_json());
  CHECK(j.at("miou") == 0.625);
  CHECK(j.at("map") == 0.7);
  CHECK(j.at("classes").size() == 2);
}
