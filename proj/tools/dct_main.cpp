// Command-line front end: dataset synthesis, training, evaluation, prediction
// export, and numerical self-checks.

#include <CLI11.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "dct/checkpoint.hpp"
#include "dct/dataset.hpp"
#include "dct/geometry.hpp"
#include "dct/losses.hpp"
#include "dct/metrics.hpp"
#include "dct/model.hpp"
#include "dct/supervision.hpp"
#include "dct/training.hpp"
#include "dct/viz.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

std::string out_root_default(const std::string& subdir) {
  const char* root = std::getenv("DCT_OUT_ROOT");
  if (!root || !*root) return "";
  return (fs::path(root) / subdir).string();
}

struct SynthArgs {
  int64_t n = 0;
  uint64_t seed = 0;
  std::string out;
  std::string difficulty = "easy";
  int64_t image_hw = 256;
  int64_t grid = 64;
  double noise = 0.02;
};

int cmd_synth(const SynthArgs& a) {
  dct::data::BuildConfig cfg;
  cfg.n_scenes = a.n;
  cfg.seed = a.seed;
  cfg.difficulty = a.difficulty == "easy" ? dct::geo::Difficulty::easy : dct::geo::Difficulty::standard;
  cfg.image_hw = a.image_hw;
  cfg.grid_size = a.grid;
  cfg.noise_std = a.noise;
  cfg.out_dir = a.out;
  dct::data::DatasetManifest m = dct::data::build_dataset(cfg);
  size_t n_train = m.split_entries("train").size(), n_val = m.split_entries("val").size();
  std::cout << "wrote " << m.entries.size() << " scenes (" << n_train << " train / " << n_val
            << " val) under " << cfg.out_dir << "\n";
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& resume_path) {
  dct::train::TrainConfig cfg;
  try {
    cfg = dct::train::TrainConfig::from_file(config_path);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  }

  std::unique_ptr<dct::train::Trainer> trainer;
  if (!resume_path.empty()) {
    dct::ckpt::Checkpoint c = dct::ckpt::load_checkpoint(resume_path);
    trainer = std::make_unique<dct::train::Trainer>(cfg, c);
    std::cout << "resumed from " << resume_path << " at epoch " << trainer->start_epoch() << "\n";
  } else {
    trainer = std::make_unique<dct::train::Trainer>(cfg);
  }

  dct::train::TrainResult result = trainer->run([](const dct::train::StepInfo& info) {
    if (info.step % 25 == 0)
      std::cout << "step " << info.step << " epoch " << info.epoch << " lr " << info.lr << " total "
                << info.breakdown.total << "\n";
    return true;
  });

  if (!result.log.empty()) {
    std::vector<double> totals;
    for (const auto& bd : result.log) totals.push_back(bd.total);
    dct::viz::plot_curve(totals, "total", (fs::path(cfg.checkpoint_dir) / "loss_curve.png").string());
  }
  std::cout << "finished " << result.steps_run << " steps / " << result.epochs_run << " epochs";
  if (!result.last_checkpoint.empty()) std::cout << "; last checkpoint " << result.last_checkpoint;
  if (!result.best_checkpoint.empty())
    std::cout << "; best val mIoU " << result.best_val_miou << " at " << result.best_checkpoint;
  std::cout << "\n";
  return kExitOk;
}

dct::model::DctModel<float> model_from_checkpoint(const dct::ckpt::Checkpoint& c) {
  dct::model::DctModel<float> m(c.config);
  std::vector<std::pair<std::string, dct::Tensor<float>>> sd;
  for (const auto& [name, t] : c.tensors)
    if (name.rfind("adam.", 0) != 0) sd.emplace_back(name, t);
  m.load_state_dict(sd);
  return m;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir, const std::string& split,
             const std::string& report_path, bool gt_as_prediction) {
  dct::ckpt::Checkpoint c = dct::ckpt::load_checkpoint(ckpt_path);
  dct::data::DatasetManifest manifest = dct::data::load_manifest(data_dir);
  if (manifest.class_set != dct::geo::layout_class_set())
    throw std::runtime_error("eval: dataset class_set does not match the layout class convention");
  dct::data::Mode mode = dct::data::mode_from_name(c.mode);
  dct::data::TargetClass target = dct::data::target_class_from_name(c.target_class);
  std::vector<std::string> expect_classes =
      mode == dct::data::Mode::single_class ? std::vector<std::string>{"background", "foreground"}
                                            : dct::geo::layout_class_set();
  if (c.class_set != expect_classes)
    throw std::runtime_error("eval: checkpoint class_set incompatible with its recorded mode");
  if (manifest.image_hw != c.config.input_hw)
    throw std::runtime_error("eval: dataset resolution differs from model input size");

  dct::metrics::MetricsReport report;
  if (gt_as_prediction) {
    // oracle predictor: replays the supervision as the prediction
    auto oracle = [mode, target](const dct::data::DatasetManifest& mf, const dct::data::DatasetEntry& e) {
      dct::data::SupervisionTensor sup = dct::data::load_supervision(mf, e, mode, target);
      dct::metrics::PredictionView view;
      view.classes = dct::data::supervision_to_classes(sup);
      size_t n_fg = mode == dct::data::Mode::single_class ? 1 : 2;
      view.fg_scores.assign(n_fg, std::vector<double>(view.classes.size(), 0.0));
      for (size_t f = 0; f < n_fg; ++f) {
        uint8_t cls = static_cast<uint8_t>(f + 1);
        for (size_t i = 0; i < view.classes.size(); ++i)
          view.fg_scores[f][i] = view.classes[i] == cls ? 1.0 : 0.0;
      }
      return view;
    };
    report = dct::metrics::evaluate(manifest, split, mode, target, oracle);
  } else {
    dct::model::DctModel<float> m = model_from_checkpoint(c);
    report = dct::train::evaluate_split(m, manifest, split, mode, target);
  }

  std::cout << report.to_table();
  std::string out = report_path;
  if (out.empty()) out = (fs::path(data_dir) / ("eval_" + split + ".json")).string();
  std::ofstream f(out);
  f << report.to_json() << "\n";
  std::cout << "report written to " << out << "\n";
  return kExitOk;
}

int cmd_predict(const std::string& ckpt_path, const std::string& image_path, const std::string& out_dir) {
  dct::ckpt::Checkpoint c = dct::ckpt::load_checkpoint(ckpt_path);
  dct::model::DctModel<float> m = model_from_checkpoint(c);
  dct::data::Mode mode = dct::data::mode_from_name(c.mode);

  std::vector<fs::path> inputs;
  if (fs::is_directory(image_path)) {
    for (const auto& entry : fs::directory_iterator(image_path))
      if (entry.path().extension() == ".png") inputs.push_back(entry.path());
    std::sort(inputs.begin(), inputs.end());
    if (inputs.empty()) throw std::runtime_error("predict: no .png files in " + image_path);
  } else {
    inputs.push_back(image_path);
  }
  fs::create_directories(out_dir);

  for (const fs::path& in : inputs) {
    dct::geo::FrontViewImage img = dct::data::read_image_png(in.string());
    if (img.height != c.config.input_hw || img.width != c.config.input_hw)
      throw std::runtime_error("predict: image " + in.string() + " is " + std::to_string(img.width) +
                               "x" + std::to_string(img.height) + ", model expects " +
                               std::to_string(c.config.input_hw));
    dct::Tensor<float> batch(dct::Shape{1, 3, img.height, img.width});
    std::copy(img.pixels.begin(), img.pixels.end(), batch.data());
    dct::model::ModelOutput<float> out = m.forward_infer(batch);
    const dct::Tensor<float>& logits = out.main_logits->value;
    int64_t n = logits.dim(1), hw_side = logits.dim(2);
    int64_t hw = hw_side * hw_side;

    std::vector<uint8_t> classes(static_cast<size_t>(hw));
    std::vector<std::vector<double>> probs(static_cast<size_t>(n),
                                           std::vector<double>(static_cast<size_t>(hw)));
    for (int64_t p = 0; p < hw; ++p) {
      float mx = logits[p];
      int best = 0;
      for (int64_t cc = 1; cc < n; ++cc)
        if (logits[cc * hw + p] > mx) {
          mx = logits[cc * hw + p];
          best = static_cast<int>(cc);
        }
      double denom = 0;
      for (int64_t cc = 0; cc < n; ++cc) denom += std::exp(static_cast<double>(logits[cc * hw + p] - mx));
      for (int64_t cc = 0; cc < n; ++cc)
        probs[static_cast<size_t>(cc)][static_cast<size_t>(p)] =
            std::exp(static_cast<double>(logits[cc * hw + p] - mx)) / denom;
      classes[static_cast<size_t>(p)] = static_cast<uint8_t>(best);
    }

    // single-class foreground id 1 maps to the trained target's display color
    std::vector<uint8_t> display = classes;
    if (mode == dct::data::Mode::single_class && c.target_class == "vehicle")
      for (auto& cls : display)
        if (cls == 1) cls = 2;

    std::string stem = in.stem().string();
    dct::io::ImageU8 class_map = dct::io::make_image(hw_side, hw_side, 1);
    for (int64_t i = 0; i < hw; ++i) class_map.pixels[static_cast<size_t>(i)] = classes[static_cast<size_t>(i)];
    dct::io::write_png((fs::path(out_dir) / (stem + "_classes.png")).string(), class_map);
    for (int64_t cc = 0; cc < n; ++cc)
      dct::io::write_png((fs::path(out_dir) / (stem + "_prob" + std::to_string(cc) + ".png")).string(),
                         dct::viz::probability_map(probs[static_cast<size_t>(cc)], hw_side));
    dct::io::write_png((fs::path(out_dir) / (stem + "_composite.png")).string(),
                       dct::viz::compose_prediction(img, display, {}, hw_side));
    std::cout << "predicted " << in.string() << " -> " << out_dir << "/" << stem << "_*.png\n";
  }
  return kExitOk;
}

// finite-difference and identity checks over the numerical kernels
int cmd_gradcheck(bool inject_focal_sign_bug) {
  using dct::Shape;
  using dct::Tensor;
  bool all_ok = true;
  auto report = [&](const std::string& name, double err, double tol) {
    bool ok = err <= tol;
    all_ok = all_ok && ok;
    std::cout << (ok ? "ok   " : "FAIL ") << name << "  max_err=" << err << "  tol=" << tol << "\n";
  };

  {  // focal loss analytic vs central differences, 64-bit
    dct::Rng rng(42);
    dct::loss::FocalConfig fc;
    fc.gamma = 2.0;
    fc.n_classes = 3;
    Tensor<double> logits(Shape{3, 4, 4});
    for (int64_t i = 0; i < logits.numel(); ++i) logits[i] = rng.uniform(-2.0, 2.0);
    Tensor<double> target = Tensor<double>::zeros(Shape{3, 4, 4});
    for (int64_t p = 0; p < 16; ++p) target[static_cast<int64_t>(rng.uniform_int(3)) * 16 + p] = 1.0;

    auto x = dct::ag::parameter(logits);
    auto l = dct::loss::focal_loss(x, target, fc, inject_focal_sign_bug);
    dct::ag::backward(l);

    double max_rel = 0;
    const double h = 1e-6;
    for (int64_t i = 0; i < logits.numel(); ++i) {
      auto eval_at = [&](double delta) {
        Tensor<double> pert = logits;
        pert[i] += delta;
        auto xp = dct::ag::parameter(pert);
        auto ll = dct::loss::focal_loss(xp, target, fc);
        return static_cast<double>(ll->value[0]);
      };
      double fd = (eval_at(h) - eval_at(-h)) / (2 * h);
      double an = x->grad[i];
      double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8});
      max_rel = std::max(max_rel, rel);
    }
    report("focal_gradient_fd", max_rel, 1e-4);
  }

  {  // cycle loss identity and hand case
    auto mk = [](std::initializer_list<double> v) {
      Tensor<double> t(Shape{static_cast<int64_t>(v.size())});
      int64_t i = 0;
      for (double x : v) t[i++] = x;
      return dct::ag::constant(t);
    };
    dct::model::EmbeddingBundle<double> ident;
    ident.x = mk({1.0, -2.0});
    ident.x_dprime = mk({1.0, -2.0});
    ident.x_bar = mk({3.0, 1.0});
    ident.x_bar_dprime = mk({3.0, 1.0});
    ident.has_top = true;
    auto terms = dct::loss::dual_cycle_loss(ident);
    report("cycle_identity_zero", std::abs(terms.l_dual->value[0]), 0.0);

    dct::model::EmbeddingBundle<double> toy;
    toy.x = mk({1.0, -2.0});
    toy.x_dprime = mk({0.8, -1.6});
    toy.x_bar = mk({3.0, 1.0});
    toy.x_bar_dprime = mk({2.4, 0.8});
    toy.has_top = true;
    auto t2 = dct::loss::dual_cycle_loss(toy);
    double err = std::max({std::abs(t2.l_fw->value[0] - 0.6), std::abs(t2.l_bw->value[0] - 0.8),
                           std::abs(t2.l_dual->value[0] - 1.4)});
    report("cycle_toy_values", err, 1e-9);
  }

  {  // attention rows are probability distributions
    dct::model::ModelConfig mc;
    mc.input_hw = 16;
    mc.base_channels = 4;
    mc.encoder_stages = 2;
    mc.embed_dim = 8;
    mc.mlp_hidden = 16;
    mc.n_classes = 2;
    mc.attention_heads = 2;
    dct::model::DctModel<double> m(mc, 7);
    dct::Rng rng(3);
    Tensor<double> img(Shape{2, 3, 16, 16});
    for (int64_t i = 0; i < img.numel(); ++i) img[i] = rng.uniform(0.0, 1.0);
    auto out = m.forward_infer(img);
    const Tensor<double>& a = out.attention;
    int64_t rows = a.dim(0) * a.dim(1), n = a.dim(2);
    double max_err = 0, min_entry = 1;
    for (int64_t r = 0; r < rows; ++r) {
      double s = 0;
      for (int64_t j = 0; j < n; ++j) {
        s += a[r * n + j];
        min_entry = std::min(min_entry, static_cast<double>(a[r * n + j]));
      }
      max_err = std::max(max_err, std::abs(s - 1.0));
    }
    report("attention_rows_sum_to_one", max_err, 1e-5);
    report("attention_entries_nonnegative", min_entry < 0 ? -min_entry : 0.0, 0.0);
  }

  std::cout << (all_ok ? "all checks passed\n" : "some checks FAILED\n");
  return all_ok ? kExitOk : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale cross-view BEV layout estimation"};
  app.require_subcommand(1);

  SynthArgs synth;
  CLI::App* s = app.add_subcommand("synth", "generate a synthetic dataset");
  s->add_option("--n", synth.n, "number of scenes")->required()->check(CLI::PositiveNumber);
  s->add_option("--seed", synth.seed, "generation seed");
  s->add_option("--out", synth.out, "output directory (default $DCT_OUT_ROOT/synth)");
  s->add_option("--difficulty", synth.difficulty, "easy|standard")
      ->check(CLI::IsMember({"easy", "standard"}));
  s->add_option("--image-hw", synth.image_hw, "rendered image side, px");
  s->add_option("--grid", synth.grid, "BEV raster side, cells");
  s->add_option("--noise", synth.noise, "render noise std");

  std::string train_config, train_resume;
  CLI::App* t = app.add_subcommand("train", "train from a JSON config");
  t->add_option("--config", train_config, "training config JSON")->required();
  t->add_option("--resume", train_resume, "checkpoint to continue from");

  std::string eval_ckpt, eval_data, eval_split = "val", eval_report;
  bool eval_gt_as_pred = false;
  CLI::App* e = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  e->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  e->add_option("--data", eval_data, "dataset directory")->required();
  e->add_option("--split", eval_split, "train|val");
  e->add_option("--out", eval_report, "metrics JSON path");
  e->add_flag("--gt-as-prediction", eval_gt_as_pred,
              "score the ground truth against itself (pipeline self-check)");

  std::string pred_ckpt, pred_image, pred_out;
  CLI::App* p = app.add_subcommand("predict", "run inference and export layout maps");
  p->add_option("--checkpoint", pred_ckpt, "checkpoint file")->required();
  p->add_option("--image", pred_image, "input PNG or directory of PNGs")->required();
  p->add_option("--out", pred_out, "output directory (default $DCT_OUT_ROOT/predictions)");

  bool inject_sign_bug = false;
  CLI::App* g = app.add_subcommand("gradcheck", "numerical self-checks of losses and attention");
  g->add_flag("--inject-focal-sign-bug", inject_sign_bug, "")->group("");  // harness hook, hidden

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& help) {
    return app.exit(help);
  } catch (const CLI::ParseError& pe) {
    app.exit(pe);
    return kExitUsage;
  }

  try {
    if (s->parsed()) {
      if (synth.out.empty()) synth.out = out_root_default("synth");
      if (synth.out.empty()) {
        std::cerr << "synth: --out required (or set DCT_OUT_ROOT)\n";
        return kExitUsage;
      }
      return cmd_synth(synth);
    }
    if (t->parsed()) return cmd_train(train_config, train_resume);
    if (e->parsed()) return cmd_eval(eval_ckpt, eval_data, eval_split, eval_report, eval_gt_as_pred);
    if (p->parsed()) {
      if (pred_out.empty()) pred_out = out_root_default("predictions");
      if (pred_out.empty()) {
        std::cerr << "predict: --out required (or set DCT_OUT_ROOT)\n";
        return kExitUsage;
      }
      return cmd_predict(pred_ckpt, pred_image, pred_out);
    }
    if (g->parsed()) return cmd_gradcheck(inject_sign_bug);
  } catch (const dct::train::NanLossError& ne) {
    std::cerr << "error: " << ne.what() << "\n"
              << "  step=" << ne.step << " lr=" << ne.lr << "\n"
              << "  components: " << ne.breakdown.to_json_line(ne.step) << "\n";
    return kExitRuntime;
  } catch (const std::invalid_argument& ia) {
    std::cerr << "error: " << ia.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
