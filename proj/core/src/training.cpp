#include "dct/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dct/rng.hpp"

namespace dct::train {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (decay_epoch >= epochs)
    throw std::invalid_argument("TrainConfig: decay_epoch must be < epochs");
  if (decay_epoch < 0) throw std::invalid_argument("TrainConfig: decay_epoch must be >= 0");
  if (lr <= 0) throw std::invalid_argument("TrainConfig: lr must be positive");
  if (decay_factor < 0) throw std::invalid_argument("TrainConfig: decay_factor must be >= 0");
  if (val_every < 1) throw std::invalid_argument("TrainConfig: val_every must be >= 1");
  if (weight_decay < 0 || grad_clip < 0)
    throw std::invalid_argument("TrainConfig: weight_decay/grad_clip must be >= 0");
  weights.validate();
  focal.validate();
  model.validate();
  if (model.n_classes != n_classes())
    throw std::invalid_argument("TrainConfig: mode '" + data::mode_name(mode) + "' needs model.n_classes=" +
                                std::to_string(n_classes()) + ", got " + std::to_string(model.n_classes));
  if (focal.n_classes != n_classes())
    throw std::invalid_argument("TrainConfig: focal.n_classes inconsistent with mode");
  if (dataset_dir.empty()) throw std::invalid_argument("TrainConfig: dataset_dir required");
  if (checkpoint_dir.empty()) throw std::invalid_argument("TrainConfig: checkpoint_dir required");
}

std::string TrainConfig::to_json() const {
  ordered_json j;
  j["batch_size"] = batch_size;
  j["lr"] = lr;
  j["epochs"] = epochs;
  j["decay_epoch"] = decay_epoch;
  j["decay_factor"] = decay_factor;
  j["seed"] = seed;
  j["mode"] = data::mode_name(mode);
  j["target_class"] = data::target_class_name(target_class);
  j["weights"] = {{"lambda1", weights.lambda1}, {"lambda2", weights.lambda2}};
  j["focal"] = {{"gamma", focal.gamma},
                {"reduction", focal.reduction == loss::Reduction::mean ? "mean" : "sum"}};
  j["model"] = model.to_json();
  j["dataset_dir"] = dataset_dir;
  j["checkpoint_dir"] = checkpoint_dir;
  j["val_every"] = val_every;
  j["max_steps"] = max_steps;
  j["weight_decay"] = weight_decay;
  j["grad_clip"] = grad_clip;
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  TrainConfig c;
  c.batch_size = j.at("batch_size").get<int64_t>();
  c.lr = j.at("lr").get<double>();
  c.epochs = j.at("epochs").get<int64_t>();
  c.decay_epoch = j.at("decay_epoch").get<int64_t>();
  c.decay_factor = j.at("decay_factor").get<double>();
  c.seed = j.at("seed").get<uint64_t>();
  c.mode = data::mode_from_name(j.at("mode").get<std::string>());
  c.target_class = data::target_class_from_name(j.value("target_class", "vehicle"));
  if (j.contains("weights")) {
    c.weights.lambda1 = j["weights"].at("lambda1").get<double>();
    c.weights.lambda2 = j["weights"].at("lambda2").get<double>();
  }
  if (j.contains("focal")) {
    c.focal.gamma = j["focal"].value("gamma", 2.0);
    std::string red = j["focal"].value("reduction", "mean");
    if (red != "mean" && red != "sum")
      throw std::invalid_argument("TrainConfig: focal.reduction must be 'mean' or 'sum'");
    c.focal.reduction = red == "mean" ? loss::Reduction::mean : loss::Reduction::sum;
  }
  c.model = model::ModelConfig::from_json(j.at("model"));
  c.dataset_dir = j.at("dataset_dir").get<std::string>();
  c.checkpoint_dir = j.at("checkpoint_dir").get<std::string>();
  c.val_every = j.value("val_every", int64_t{1});
  c.max_steps = j.value("max_steps", int64_t{0});
  c.weight_decay = j.value("weight_decay", 0.0);
  c.grad_clip = j.value("grad_clip", 0.0);
  c.focal.n_classes = c.n_classes();
  c.validate();
  return c;
}

TrainConfig TrainConfig::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return from_json(ss.str());
}

double lr_at(int64_t epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.epochs)
    throw std::out_of_range("lr_at: epoch " + std::to_string(epoch) + " outside [0, " +
                            std::to_string(cfg.epochs) + ")");
  return epoch >= cfg.decay_epoch ? cfg.lr * cfg.decay_factor : cfg.lr;
}

// --- Adam --------------------------------------------------------------------

void Adam::init(const model::ParamStore<float>& params) {
  m_.clear();
  v_.clear();
  t_ = 0;
  for (const auto& [name, var] : params.items()) {
    m_.push_back(Tensor<float>::zeros(var->value.shape()));
    v_.push_back(Tensor<float>::zeros(var->value.shape()));
  }
}

void Adam::step(model::ParamStore<float>& params, double lr, double weight_decay, double grad_clip) {
  const auto& items = params.items();
  if (m_.size() != items.size()) throw std::logic_error("Adam::step before init");

  if (grad_clip > 0) {
    double norm_sq = 0;
    for (const auto& [name, var] : items) {
      if (!var->grad_set) continue;
      for (int64_t i = 0; i < var->grad.numel(); ++i)
        norm_sq += static_cast<double>(var->grad[i]) * static_cast<double>(var->grad[i]);
    }
    double norm = std::sqrt(norm_sq);
    if (norm > grad_clip) {
      float scale = static_cast<float>(grad_clip / norm);
      for (const auto& [name, var] : items)
        if (var->grad_set)
          for (int64_t i = 0; i < var->grad.numel(); ++i) var->grad[i] *= scale;
    }
  }

  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t k = 0; k < items.size(); ++k) {
    auto& var = items[k].second;
    Tensor<float>& p = var->value;
    Tensor<float>& m = m_[k];
    Tensor<float>& v = v_[k];
    for (int64_t i = 0; i < p.numel(); ++i) {
      double g = var->grad_set ? static_cast<double>(var->grad[i]) : 0.0;
      if (weight_decay > 0) g += weight_decay * static_cast<double>(p[i]);
      double mi = beta1_ * static_cast<double>(m[i]) + (1.0 - beta1_) * g;
      double vi = beta2_ * static_cast<double>(v[i]) + (1.0 - beta2_) * g * g;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      double mhat = mi / bc1, vhat = vi / bc2;
      p[i] = static_cast<float>(static_cast<double>(p[i]) - lr * mhat / (std::sqrt(vhat) + eps_));
    }
  }

  // Gradients are consumed by the update. Parameter nodes outlive the step,
  // so clear them here or the next backward pass would add onto stale values.
  for (const auto& [name, var] : items) var->grad_set = false;
}

// --- sample assembly ---------------------------------------------------------

namespace {

struct Sample {
  Tensor<float> image;     // [3,H,W]
  Tensor<float> layout;    // [3,H,W] top-view encoder input
  Tensor<float> target;    // [n_classes,H,W] one-hot
};

Sample load_sample(const data::DatasetManifest& m, const data::DatasetEntry& e, data::Mode mode,
                   data::TargetClass target) {
  Sample s;
  s.image = data::load_image_tensor(m, e);
  data::SupervisionTensor sup = data::load_supervision(m, e, mode, target);
  s.layout = sup.data;
  s.target = data::target_onehot(sup);
  return s;
}

Tensor<float> stack(const std::vector<const Tensor<float>*>& parts) {
  Shape s = parts[0]->shape();
  Shape out_shape;
  out_shape.push_back(static_cast<int64_t>(parts.size()));
  out_shape.insert(out_shape.end(), s.begin(), s.end());
  Tensor<float> out(out_shape);
  int64_t per = parts[0]->numel();
  for (size_t i = 0; i < parts.size(); ++i)
    std::copy(parts[i]->data(), parts[i]->data() + per, out.data() + static_cast<int64_t>(i) * per);
  return out;
}

constexpr uint64_t kTagShuffle = 0x53485546ull;  // "SHUF"
constexpr size_t kPreloadLimit = 64;             // cache whole dataset when small

}  // namespace

metrics::PredictionView predict_entry(model::DctModel<float>& m, const data::DatasetManifest& manifest,
                                      const data::DatasetEntry& entry, data::Mode mode) {
  Tensor<float> img = data::load_image_tensor(manifest, entry);
  Shape s = img.shape();
  Tensor<float> batch = img.reshaped(Shape{1, s[0], s[1], s[2]});
  model::ModelOutput<float> out = m.forward_infer(batch);
  const Tensor<float>& logits = out.main_logits->value;  // [1,N,H,W]
  int64_t n = logits.dim(1), hw = logits.dim(2) * logits.dim(3);

  metrics::PredictionView view;
  view.classes.resize(static_cast<size_t>(hw));
  size_t n_fg = mode == data::Mode::single_class ? 1 : 2;
  view.fg_scores.assign(n_fg, std::vector<double>(static_cast<size_t>(hw)));
  for (int64_t p = 0; p < hw; ++p) {
    float mx = logits[p];
    int best = 0;
    for (int64_t c = 1; c < n; ++c) {
      float v = logits[c * hw + p];
      if (v > mx) {
        mx = v;
        best = static_cast<int>(c);
      }
    }
    double denom = 0;
    for (int64_t c = 0; c < n; ++c) denom += std::exp(static_cast<double>(logits[c * hw + p] - mx));
    view.classes[static_cast<size_t>(p)] = static_cast<uint8_t>(best);
    for (size_t f = 0; f < n_fg; ++f) {
      int64_t cls = static_cast<int64_t>(f) + 1;  // foreground ids start at 1
      view.fg_scores[f][static_cast<size_t>(p)] =
          std::exp(static_cast<double>(logits[cls * hw + p] - mx)) / denom;
    }
  }
  return view;
}

metrics::MetricsReport evaluate_split(model::DctModel<float>& m, const data::DatasetManifest& manifest,
                                      const std::string& split, data::Mode mode,
                                      data::TargetClass target) {
  return metrics::evaluate(manifest, split, mode, target,
                           [&m, mode](const data::DatasetManifest& mf, const data::DatasetEntry& e) {
                             return predict_entry(m, mf, e, mode);
                           });
}

// --- Trainer ------------------------------------------------------------------

Trainer::Trainer(const TrainConfig& cfg)
    : cfg_(cfg), manifest_(data::load_manifest(cfg.dataset_dir)), model_(cfg.model, cfg.seed) {
  cfg_.validate();
  if (manifest_.image_hw != cfg_.model.input_hw)
    throw std::invalid_argument("Trainer: dataset image size " + std::to_string(manifest_.image_hw) +
                                " != model input " + std::to_string(cfg_.model.input_hw));
  adam_.init(model_.params());
  fs::create_directories(cfg_.checkpoint_dir);
}

Trainer::Trainer(const TrainConfig& cfg, const ckpt::Checkpoint& resume_from) : Trainer(cfg) {
  if (resume_from.config != cfg_.model)
    throw std::invalid_argument("Trainer: checkpoint model config differs from training config");
  if (resume_from.mode != data::mode_name(cfg_.mode))
    throw std::invalid_argument("Trainer: checkpoint mode '" + resume_from.mode +
                                "' differs from config mode '" + data::mode_name(cfg_.mode) + "'");

  std::vector<std::pair<std::string, Tensor<float>>> sd;
  auto& items = model_.params().items();
  for (size_t k = 0; k < items.size(); ++k) {
    const auto& name = items[k].first;
    const Tensor<float>* t = resume_from.find(name);
    if (!t) throw std::invalid_argument("Trainer: checkpoint missing tensor " + name);
    sd.emplace_back(name, *t);
    const Tensor<float>* tm = resume_from.find("adam.m." + name);
    const Tensor<float>* tv = resume_from.find("adam.v." + name);
    if (!tm || !tv) throw std::invalid_argument("Trainer: checkpoint missing optimizer moments for " + name);
    if (tm->shape() != items[k].second->value.shape() || tv->shape() != items[k].second->value.shape())
      throw std::invalid_argument("Trainer: optimizer moment shape mismatch for " + name);
    adam_.m()[k] = *tm;
    adam_.v()[k] = *tv;
  }
  model_.load_state_dict(sd);
  adam_.set_t(resume_from.global_step);
  global_step_ = resume_from.global_step;
  start_epoch_ = resume_from.epoch;
  best_val_miou_ = resume_from.best_val_miou;
}

ckpt::Checkpoint Trainer::snapshot(const std::string&) const {
  ckpt::Checkpoint c;
  c.config = cfg_.model;
  c.class_set = cfg_.mode == data::Mode::single_class
                    ? std::vector<std::string>{"background", "foreground"}
                    : geo::layout_class_set();
  c.mode = data::mode_name(cfg_.mode);
  c.target_class = data::target_class_name(cfg_.target_class);
  c.epoch = start_epoch_;
  c.global_step = global_step_;
  c.current_lr = lr_at(std::min(start_epoch_, cfg_.epochs - 1), cfg_);
  c.best_val_miou = best_val_miou_;
  c.seed = cfg_.seed;
  c.rng_state = "";  // sample order is re-derived from (seed, epoch); no stream state needed
  c.tensors = model_.state_dict();
  const auto& items = model_.params().items();
  for (size_t k = 0; k < items.size(); ++k) {
    c.tensors.emplace_back("adam.m." + items[k].first, adam_.m_const()[k]);
    c.tensors.emplace_back("adam.v." + items[k].first, adam_.v_const()[k]);
  }
  return c;
}

void Trainer::save(const std::string& name) const {
  ckpt::save_checkpoint((fs::path(cfg_.checkpoint_dir) / (name + ".ckpt")).string(), snapshot(name));
}

metrics::MetricsReport Trainer::validate_now() {
  return evaluate_split(model_, manifest_, "val", cfg_.mode, cfg_.target_class);
}

TrainResult Trainer::run(const StepCallback& callback) {
  TrainResult result;
  result.best_val_miou = best_val_miou_;
  auto train_entries = manifest_.split_entries("train");
  if (train_entries.empty()) throw std::runtime_error("Trainer: train split is empty");

  std::ofstream log_file(fs::path(cfg_.checkpoint_dir) / "loss_log.jsonl",
                         start_epoch_ > 0 ? std::ios::app : std::ios::trunc);

  // preload small datasets; larger ones stream from disk each batch
  std::vector<Sample> cache;
  bool preloaded = train_entries.size() <= kPreloadLimit;
  if (preloaded)
    for (const auto* e : train_entries)
      cache.push_back(load_sample(manifest_, *e, cfg_.mode, cfg_.target_class));

  bool stop = false;
  int64_t epoch = start_epoch_;
  for (; epoch < cfg_.epochs && !stop; ++epoch) {
    double lr = lr_at(epoch, cfg_);

    std::vector<size_t> order(train_entries.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(hash_combine(hash_combine(splitmix64(cfg_.seed), kTagShuffle),
                                 static_cast<uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    for (size_t pos = 0; pos < order.size() && !stop; pos += static_cast<size_t>(cfg_.batch_size)) {
      size_t take = std::min(static_cast<size_t>(cfg_.batch_size), order.size() - pos);
      std::vector<Sample> loaded;
      std::vector<const Tensor<float>*> images, layouts, targets;
      for (size_t i = 0; i < take; ++i) {
        size_t idx = order[pos + i];
        const Sample* s;
        if (preloaded) {
          s = &cache[idx];
        } else {
          loaded.push_back(load_sample(manifest_, *train_entries[idx], cfg_.mode, cfg_.target_class));
          s = &loaded.back();
        }
        images.push_back(&s->image);
        layouts.push_back(&s->layout);
        targets.push_back(&s->target);
      }

      model::ModelOutput<float> out = model_.forward_train(stack(images), stack(layouts));
      if (!out.main_logits->value.all_finite() || !out.aux_logits->value.all_finite())
        throw NanLossError(global_step_, lr, loss::LossBreakdown{},
                           "training aborted: non-finite logits at step " + std::to_string(global_step_) +
                               " (lr=" + std::to_string(lr) + "); the run has diverged");
      Tensor<float> target = stack(targets);
      auto focal_main = loss::focal_loss(out.main_logits, target, cfg_.focal);
      auto focal_aux = loss::focal_loss(out.aux_logits, target, cfg_.focal);
      auto cycle = loss::dual_cycle_loss(out.bundle);
      loss::ObjectiveResult<float> obj = loss::objective(focal_main, focal_aux, cycle, cfg_.weights);

      if (!std::isfinite(obj.breakdown.total))
        throw NanLossError(global_step_, lr, obj.breakdown,
                           "training aborted: non-finite loss at step " + std::to_string(global_step_) +
                               " (lr=" + std::to_string(lr) + "): " + obj.breakdown.to_json_line(global_step_));

      ag::backward(obj.total);
      adam_.step(model_.params(), lr, cfg_.weight_decay, cfg_.grad_clip);

      for (const auto& [name, var] : model_.params().items())
        if (!var->value.all_finite())
          throw NanLossError(global_step_, lr, obj.breakdown,
                             "training aborted: non-finite parameter '" + name + "' after step " +
                                 std::to_string(global_step_));

      if (log_file) log_file << obj.breakdown.to_json_line(global_step_) << "\n";
      result.log.push_back(obj.breakdown);

      StepInfo info{global_step_, epoch, lr, obj.breakdown};
      ++global_step_;
      ++result.steps_run;
      if (callback && !callback(info)) stop = true;
      if (cfg_.max_steps > 0 && global_step_ >= cfg_.max_steps) stop = true;
    }

    start_epoch_ = epoch + 1;  // snapshot() records the next epoch to run
    save("last");
    result.last_checkpoint = (fs::path(cfg_.checkpoint_dir) / "last.ckpt").string();

    bool has_val = !manifest_.split_entries("val").empty();
    if (has_val && ((epoch + 1) % cfg_.val_every == 0 || epoch + 1 == cfg_.epochs || stop)) {
      metrics::MetricsReport rep = validate_now();
      if (rep.miou > best_val_miou_) {
        best_val_miou_ = rep.miou;
        save("best");
        result.best_checkpoint = (fs::path(cfg_.checkpoint_dir) / "best.ckpt").string();
      }
    }
  }
  result.epochs_run = epoch;
  result.best_val_miou = best_val_miou_;
  if (result.best_checkpoint.empty() && fs::exists(fs::path(cfg_.checkpoint_dir) / "best.ckpt"))
    result.best_checkpoint = (fs::path(cfg_.checkpoint_dir) / "best.ckpt").string();
  return result;
}

}  // namespace dct::train
