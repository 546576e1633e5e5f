#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "dct/checkpoint.hpp"
#include "dct/dataset.hpp"
#include "dct/training.hpp"

using namespace dct::train;
using dct::Shape;
using dct::Tensor;
namespace fs = std::filesystem;

namespace {

// one tiny on-disk dataset shared by the training tests
const std::string& fixture_dataset() {
  static std::string dir = [] {
    fs::path p = fs::temp_directory_path() / "dct_train_fixture";
    fs::remove_all(p);
    dct::data::BuildConfig cfg;
    cfg.n_scenes = 6;
    cfg.seed = 31;
    cfg.difficulty = dct::geo::Difficulty::easy;
    cfg.image_hw = 32;
    cfg.grid_size = 16;
    cfg.noise_std = 0.01;
    cfg.out_dir = p.string();
    dct::data::build_dataset(cfg);
    return p.string();
  }();
  return dir;
}

TrainConfig tiny_train_config(const std::string& ckpt_dir) {
  TrainConfig c;
  c.batch_size = 2;
  c.lr = 1e-3;
  c.epochs = 4;
  c.decay_epoch = 2;
  c.decay_factor = 0.1;
  c.seed = 3;
  c.mode = dct::data::Mode::single_class;
  c.target_class = dct::data::TargetClass::vehicle;
  c.model.input_hw = 32;
  c.model.base_channels = 4;
  c.model.encoder_stages = 2;
  c.model.embed_dim = 8;
  c.model.mlp_hidden = 16;
  c.model.n_classes = 2;
  c.model.attention_heads = 2;
  c.focal.n_classes = 2;
  c.dataset_dir = fixture_dataset();
  c.checkpoint_dir = ckpt_dir;
  return c;
}

std::string fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::vector<double> read_totals(const std::string& jsonl_path) {
  std::ifstream f(jsonl_path);
  REQUIRE(f.good());
  std::vector<double> totals;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    totals.push_back(nlohmann::json::parse(line).at("total").get<double>());
  }
  return totals;
}

}  // namespace

TEST_CASE("lr schedule: flat, then a single decay") {
  TrainConfig c = tiny_train_config("unused");
  c.lr = 1e-4;
  c.epochs = 120;
  c.decay_epoch = 50;
  c.decay_factor = 0.1;
  CHECK(lr_at(0, c) == doctest::Approx(1e-4).epsilon(1e-15));
  CHECK(lr_at(49, c) == doctest::Approx(1e-4).epsilon(1e-15));
  CHECK(lr_at(50, c) == doctest::Approx(1e-5).epsilon(1e-15));
  CHECK(lr_at(119, c) == doctest::Approx(1e-5).epsilon(1e-15));
  CHECK_THROWS_AS(lr_at(-1, c), std::out_of_range);
  CHECK_THROWS_AS(lr_at(120, c), std::out_of_range);
}

TEST_CASE("train config JSON round-trip and validation") {
  TrainConfig c = tiny_train_config("somewhere");
  std::string text = c.to_json();
  TrainConfig r = TrainConfig::from_json(text);
  CHECK(r.batch_size == c.batch_size);
  CHECK(r.lr == c.lr);
  CHECK(r.mode == c.mode);
  CHECK(r.model == c.model);
  CHECK(r.weights.lambda1 == c.weights.lambda1);
  CHECK(r.focal.gamma == c.focal.gamma);
  CHECK(r.to_json() == text);

  TrainConfig bad = c;
  bad.decay_epoch = bad.epochs;  // never reached
  CHECK_THROWS(bad.validate());
  bad = c;
  bad.mode = dct::data::Mode::multi_class;  // model still has 2 classes
  CHECK_THROWS(bad.validate());
  bad = c;
  bad.dataset_dir.clear();
  CHECK_THROWS(bad.validate());
}

TEST_CASE("adam drives a quadratic toward its minimum") {
  dct::model::ParamStore<float> ps;
  auto x = ps.add("x", Tensor<float>::full(Shape{1}, 5.0f));
  Adam adam;
  adam.init(ps);
  for (int i = 0; i < 400; ++i) {
    x->grad_ref() = Tensor<float>::full(Shape{1}, 2.0f * x->value[0]);
    x->grad_set = true;
    adam.step(ps, 0.05, 0.0, 0.0);
  }
  CHECK(std::abs(x->value[0]) < 0.05);
}

TEST_CASE("gradient clipping caps the applied update") {
  dct::model::ParamStore<float> ps;
  auto x = ps.add("x", Tensor<float>::zeros(Shape{2}));
  Adam adam;
  adam.init(ps);
  Tensor<float> g(Shape{2});
  g[0] = 3000.0f;
  g[1] = 4000.0f;  // norm 5000
  x->grad_ref() = g;
  x->grad_set = true;
  adam.step(ps, 0.1, 0.0, 1.0);  // clip to unit norm: g -> (0.6, 0.8)
  // the first moment exposes the clipped gradient directly: m = (1-beta1) * g
  CHECK(adam.m_const()[0][0] == doctest::Approx(0.1 * 0.6).epsilon(1e-5));
  CHECK(adam.m_const()[0][1] == doctest::Approx(0.1 * 0.8).epsilon(1e-5));
  CHECK(x->value.all_finite());
  CHECK(x->value[0] < 0);
  CHECK(x->value[1] < 0);
}

TEST_CASE("training runs, logs every step, and loss trends down") {
  std::string dir = fresh_dir("dct_train_run");
  TrainConfig cfg = tiny_train_config(dir);
  cfg.epochs = 34;
  cfg.decay_epoch = 32;
  Trainer trainer(cfg);
  int callback_hits = 0;
  TrainResult res = trainer.run([&](const StepInfo& info) {
    ++callback_hits;
    CHECK(std::isfinite(info.breakdown.total));
    return true;
  });
  // 5 train entries, batch 2 -> 3 steps per epoch
  CHECK(res.steps_run == 34 * 3);
  CHECK(res.epochs_run == 34);
  CHECK(callback_hits == res.steps_run);
  CHECK(fs::exists(fs::path(dir) / "last.ckpt"));
  CHECK(fs::exists(fs::path(dir) / "loss_log.jsonl"));

  std::vector<double> totals = read_totals((fs::path(dir) / "loss_log.jsonl").string());
  REQUIRE(static_cast<int64_t>(totals.size()) == res.steps_run);
  // median of the last quarter must come in below the median of the first
  auto median_of = [&](size_t lo, size_t hi) {
    std::vector<double> slice(totals.begin() + static_cast<long>(lo),
                              totals.begin() + static_cast<long>(hi));
    std::sort(slice.begin(), slice.end());
    return slice[slice.size() / 2];
  };
  size_t q = totals.size() / 4;
  CHECK(median_of(totals.size() - q, totals.size()) < median_of(0, q));
}

TEST_CASE("callback returning false stops the run") {
  std::string dir = fresh_dir("dct_train_stop");
  TrainConfig cfg = tiny_train_config(dir);
  Trainer trainer(cfg);
  TrainResult res = trainer.run([](const StepInfo& info) { return info.step < 3; });
  CHECK(res.steps_run == 4);  // steps 0..3
}

TEST_CASE("max_steps bounds the run") {
  std::string dir = fresh_dir("dct_train_max");
  TrainConfig cfg = tiny_train_config(dir);
  cfg.max_steps = 5;
  Trainer trainer(cfg);
  TrainResult res = trainer.run();
  CHECK(res.steps_run == 5);
}

TEST_CASE("checkpoint file round-trips the snapshot exactly") {
  std::string dir = fresh_dir("dct_train_ckpt");
  TrainConfig cfg = tiny_train_config(dir);
  cfg.epochs = 1;
  cfg.decay_epoch = 0;
  Trainer trainer(cfg);
  trainer.run();

  dct::ckpt::Checkpoint c = dct::ckpt::load_checkpoint((fs::path(dir) / "last.ckpt").string());
  CHECK(c.config == cfg.model);
  CHECK(c.mode == "single_class");
  CHECK(c.target_class == "vehicle");
  CHECK(c.epoch == 1);
  CHECK(c.global_step == 3);
  CHECK(c.class_set == std::vector<std::string>{"background", "foreground"});

  // every model parameter plus both optimizer moments, bit-identical
  const auto& items = trainer.model().params().items();
  size_t expect = items.size() * 3;
  CHECK(c.tensors.size() == expect);
  for (const auto& [name, var] : items) {
    const Tensor<float>* t = c.find(name);
    REQUIRE(t != nullptr);
    REQUIRE(t->shape() == var->value.shape());
    for (int64_t i = 0; i < t->numel(); ++i) REQUIRE((*t)[i] == var->value[i]);
    CHECK(c.find("adam.m." + name) != nullptr);
    CHECK(c.find("adam.v." + name) != nullptr);
  }
}

TEST_CASE("corrupt checkpoints are rejected") {
  std::string dir = fresh_dir("dct_train_corrupt");
  std::string path = dir + "/fake.ckpt";
  std::ofstream(path, std::ios::binary) << "NOTMAGIC garbage";
  CHECK_THROWS(dct::ckpt::load_checkpoint(path));
  CHECK_THROWS(dct::ckpt::load_checkpoint(dir + "/missing.ckpt"));
}

TEST_CASE("resume reproduces the uninterrupted loss trace") {
  // reference: 4 epochs in one run
  std::string dir_a = fresh_dir("dct_train_trace_a");
  TrainConfig cfg_a = tiny_train_config(dir_a);
  cfg_a.epochs = 4;
  cfg_a.decay_epoch = 1;  // exercise the decay inside the trace
  Trainer(cfg_a).run();
  std::vector<double> full = read_totals(dir_a + "/loss_log.jsonl");
  REQUIRE(full.size() == 12);

  // split run: 2 epochs, then resume for the remaining 2
  std::string dir_b = fresh_dir("dct_train_trace_b");
  TrainConfig cfg_b1 = tiny_train_config(dir_b);
  cfg_b1.epochs = 2;
  cfg_b1.decay_epoch = 1;
  Trainer(cfg_b1).run();

  TrainConfig cfg_b2 = tiny_train_config(dir_b);
  cfg_b2.epochs = 4;
  cfg_b2.decay_epoch = 1;
  dct::ckpt::Checkpoint mid = dct::ckpt::load_checkpoint(dir_b + "/last.ckpt");
  CHECK(mid.epoch == 2);
  Trainer resumed(cfg_b2, mid);
  CHECK(resumed.start_epoch() == 2);
  resumed.run();

  std::vector<double> stitched = read_totals(dir_b + "/loss_log.jsonl");
  REQUIRE(stitched.size() == full.size());
  for (size_t i = 0; i < full.size(); ++i) {
    double rel = std::abs(stitched[i] - full[i]) / std::max(std::abs(full[i]), 1e-12);
    REQUIRE(rel <= 1e-6);
  }
}

TEST_CASE("resume rejects mismatched configs") {
  std::string dir = fresh_dir("dct_train_resume_bad");
  TrainConfig cfg = tiny_train_config(dir);
  cfg.epochs = 1;
  cfg.decay_epoch = 0;
  Trainer(cfg).run();
  dct::ckpt::Checkpoint c = dct::ckpt::load_checkpoint(dir + "/last.ckpt");

  TrainConfig other = cfg;
  other.model.embed_dim = 16;
  other.model.attention_heads = 2;
  CHECK_THROWS(Trainer(other, c));

  TrainConfig other_mode = cfg;
  other_mode.mode = dct::data::Mode::multi_class;
  other_mode.model.n_classes = 3;
  other_mode.focal.n_classes = 3;
  CHECK_THROWS(Trainer(other_mode, c));
}

TEST_CASE("absurd learning rate aborts with a diagnostic, not NaN weights") {
  std::string dir = fresh_dir("dct_train_nan");
  TrainConfig cfg = tiny_train_config(dir);
  cfg.lr = 1e18;
  cfg.epochs = 30;
  cfg.decay_epoch = 29;
  Trainer trainer(cfg);
  CHECK_THROWS_AS(trainer.run(), NanLossError);
}

TEST_CASE("zero cycle weight trains without the bundle term") {
  std::string dir = fresh_dir("dct_train_nocycle");
  TrainConfig cfg = tiny_train_config(dir);
  cfg.weights.lambda2 = 0.0;
  cfg.max_steps = 3;
  Trainer trainer(cfg);
  TrainResult res = trainer.run();
  CHECK(res.steps_run == 3);
  for (const auto& bd : res.log) CHECK(bd.total == doctest::Approx(10.0 * (bd.focal_main + bd.focal_aux)));
}

TEST_CASE("evaluate_split rejects an empty split") {
  std::string dir = fresh_dir("dct_train_eval");
  TrainConfig cfg = tiny_train_config(dir);
  Trainer trainer(cfg);
  dct::data::DatasetManifest m = trainer.manifest();
  for (auto& e : m.entries) e.split = "train";  // leave nothing in val
  CHECK_THROWS(evaluate_split(trainer.model(), m, "val", cfg.mode, cfg.target_class));
}

TEST_CASE("evaluating the trained model on train yields sane report shape") {
  std::string dir = fresh_dir("dct_train_eval2");
  TrainConfig cfg = tiny_train_config(dir);
  cfg.max_steps = 2;
  Trainer trainer(cfg);
  trainer.run();
  auto report = evaluate_split(trainer.model(), trainer.manifest(), "train", cfg.mode, cfg.target_class);
  REQUIRE(report.class_names == std::vector<std::string>{"vehicle"});
  CHECK(report.n_samples == 5);
  CHECK(report.miou >= 0.0);
  CHECK(report.miou <= 1.0);
  CHECK(report.map >= 0.0);
  CHECK(report.map <= 1.0);
}
