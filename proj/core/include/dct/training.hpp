#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dct/checkpoint.hpp"
#include "dct/dataset.hpp"
#include "dct/losses.hpp"
#include "dct/metrics.hpp"
#include "dct/model.hpp"

namespace dct::train {

struct TrainConfig {
  int64_t batch_size = 4;
  double lr = 1e-4;
  int64_t epochs = 30;
  int64_t decay_epoch = 15;
  double decay_factor = 0.1;
  uint64_t seed = 0;
  data::Mode mode = data::Mode::single_class;
  data::TargetClass target_class = data::TargetClass::vehicle;
  loss::ObjectiveWeights weights;
  loss::FocalConfig focal;
  model::ModelConfig model;
  std::string dataset_dir;
  std::string checkpoint_dir;
  int64_t val_every = 1;     // epochs between validation passes
  int64_t max_steps = 0;     // 0 = run all epochs
  double weight_decay = 0.0;  // L2 added to gradients; off by default
  double grad_clip = 0.0;     // global-norm clip; off by default

  int64_t n_classes() const { return mode == data::Mode::single_class ? 2 : 3; }
  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
  static TrainConfig from_file(const std::string& path);
};

// Piecewise-constant schedule with a single decay at decay_epoch.
double lr_at(int64_t epoch, const TrainConfig& cfg);

struct NanLossError : std::runtime_error {
  NanLossError(int64_t step_, double lr_, const loss::LossBreakdown& bd_, const std::string& msg)
      : std::runtime_error(msg), step(step_), lr(lr_), breakdown(bd_) {}
  int64_t step;
  double lr;
  loss::LossBreakdown breakdown;
};

struct StepInfo {
  int64_t step = 0;
  int64_t epoch = 0;
  double lr = 0;
  loss::LossBreakdown breakdown;
};

// Return false to stop after the current step (used by callers that watch a
// metric; the trainer itself has no stopping policy beyond epochs/max_steps).
using StepCallback = std::function<bool(const StepInfo&)>;

struct TrainResult {
  int64_t steps_run = 0;
  int64_t epochs_run = 0;
  double best_val_miou = 0;
  std::string last_checkpoint;
  std::string best_checkpoint;
  std::vector<loss::LossBreakdown> log;
};

// Adam with bias correction; moment tensors align with parameter order.
class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void init(const model::ParamStore<float>& params);
  // Applies one update and clears every parameter gradient (step consumes
  // grads; callers never zero them separately).
  void step(model::ParamStore<float>& params, double lr, double weight_decay, double grad_clip);

  int64_t t() const { return t_; }
  void set_t(int64_t t) { t_ = t; }
  std::vector<Tensor<float>>& m() { return m_; }
  std::vector<Tensor<float>>& v() { return v_; }
  const std::vector<Tensor<float>>& m_const() const { return m_; }
  const std::vector<Tensor<float>>& v_const() const { return v_; }

 private:
  double beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<Tensor<float>> m_, v_;
};

class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg);                                  // fresh start
  Trainer(const TrainConfig& cfg, const ckpt::Checkpoint& resume_from);      // continue a run

  TrainResult run(const StepCallback& callback = nullptr);

  model::DctModel<float>& model() { return model_; }
  const data::DatasetManifest& manifest() const { return manifest_; }
  int64_t start_epoch() const { return start_epoch_; }

  ckpt::Checkpoint snapshot(const std::string& reason) const;

 private:
  void save(const std::string& name) const;
  metrics::MetricsReport validate_now();

  TrainConfig cfg_;
  data::DatasetManifest manifest_;
  model::DctModel<float> model_;
  Adam adam_;
  int64_t start_epoch_ = 0;
  int64_t global_step_ = 0;
  double best_val_miou_ = 0;
};

// Argmax prediction + per-foreground-class softmax scores from main_logits.
metrics::PredictionView predict_entry(model::DctModel<float>& m, const data::DatasetManifest& manifest,
                                      const data::DatasetEntry& entry, data::Mode mode);

metrics::MetricsReport evaluate_split(model::DctModel<float>& m, const data::DatasetManifest& manifest,
                                      const std::string& split, data::Mode mode,
                                      data::TargetClass target);

}  // namespace dct::train
