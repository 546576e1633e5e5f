#pragma once

#include <cmath>
#include <string>

#include <nlohmann/json.hpp>

#include "dct/model.hpp"
#include "dct/nn_ops.hpp"

namespace dct::loss {

enum class Reduction { mean, sum };

struct FocalConfig {
  double gamma = 2.0;
  int64_t n_classes = 2;
  Reduction reduction = Reduction::mean;

  void validate() const {
    if (gamma < 0) throw std::invalid_argument("FocalConfig: gamma must be >= 0");
    if (n_classes != 2 && n_classes != 3)
      throw std::invalid_argument("FocalConfig: n_classes must be 2 or 3");
  }
};

struct ObjectiveWeights {
  double lambda1 = 10.0;
  double lambda2 = 1e-3;

  void validate() const {
    if (lambda1 < 0 || lambda2 < 0)
      throw std::invalid_argument("ObjectiveWeights: weights must be >= 0");
  }
};

struct LossBreakdown {
  double focal_main = 0, focal_aux = 0, l_fw = 0, l_bw = 0, l_dual = 0, total = 0;

  std::string to_json_line(int64_t step) const {
    nlohmann::ordered_json j{{"step", step},     {"focal_main", focal_main}, {"focal_aux", focal_aux},
                             {"l_fw", l_fw},     {"l_bw", l_bw},             {"l_dual", l_dual},
                             {"total", total}};
    return j.dump();
  }
};

// Softmax focal loss: per pixel -(1-p_t)^gamma * log(p_t) with t the target
// class; gamma=0 reduces to cross-entropy. Accepts [N,H,W] or [B,N,H,W]
// logits with a matching one-hot target. `debug_negate_grad` flips the
// analytic gradient only (a knowingly wrong value used to prove the numeric
// gradient check can catch it).
template <typename T>
ag::Var<T> focal_loss(const ag::Var<T>& logits, const Tensor<T>& target, const FocalConfig& cfg,
                      bool debug_negate_grad = false) {
  cfg.validate();
  const Tensor<T>& x = logits->value;
  if (!(x.ndim() == 3 || x.ndim() == 4))
    throw std::invalid_argument("focal_loss: logits must be [N,H,W] or [B,N,H,W]");
  if (!x.same_shape(target)) throw std::invalid_argument("focal_loss: logits/target shape mismatch");
  int64_t n = x.ndim() == 4 ? x.dim(1) : x.dim(0);
  if (n != cfg.n_classes)
    throw std::invalid_argument("focal_loss: class axis " + std::to_string(n) +
                                " != configured n_classes " + std::to_string(cfg.n_classes));
  int64_t b = x.ndim() == 4 ? x.dim(0) : 1;
  int64_t hw = x.numel() / (b * n);
  if (!x.all_finite()) throw std::invalid_argument("focal_loss: non-finite logits");

  // validate one-hot and record target class per pixel
  std::vector<int32_t> tcls(static_cast<size_t>(b * hw));
  for (int64_t i = 0; i < b; ++i)
    for (int64_t p = 0; p < hw; ++p) {
      int hits = 0;
      int32_t t_idx = -1;
      for (int64_t c = 0; c < n; ++c) {
        T v = target[(i * n + c) * hw + p];
        if (v == T{1}) {
          ++hits;
          t_idx = static_cast<int32_t>(c);
        } else if (v != T{0}) {
          throw std::invalid_argument("focal_loss: target is not one-hot (value not in {0,1})");
        }
      }
      if (hits != 1) throw std::invalid_argument("focal_loss: target is not one-hot (channel sum != 1)");
      tcls[static_cast<size_t>(i * hw + p)] = t_idx;
    }

  double gamma = cfg.gamma;
  bool mean_reduce = cfg.reduction == Reduction::mean;
  double denom = mean_reduce ? static_cast<double>(b * hw) : 1.0;

  double acc = 0;
  for (int64_t i = 0; i < b; ++i)
    for (int64_t p = 0; p < hw; ++p) {
      // stable log-softmax at the pixel
      T mx = x[(i * n) * hw + p];
      for (int64_t c = 1; c < n; ++c) mx = std::max(mx, x[(i * n + c) * hw + p]);
      double sum = 0;
      for (int64_t c = 0; c < n; ++c) sum += std::exp(static_cast<double>(x[(i * n + c) * hw + p] - mx));
      double lse = static_cast<double>(mx) + std::log(sum);
      int64_t t = tcls[static_cast<size_t>(i * hw + p)];
      double logpt = static_cast<double>(x[(i * n + t) * hw + p]) - lse;
      double pt = std::exp(logpt);
      double one_minus = 1.0 - pt;
      double lpx = one_minus <= 0.0 ? 0.0 : -std::pow(one_minus, gamma) * logpt;
      acc += lpx;
    }
  acc /= denom;

  Tensor<T> target_copy = target;
  return ag::make_node<T>(
      Tensor<T>::scalar(static_cast<T>(acc)), {logits},
      [target_copy = std::move(target_copy), tcls = std::move(tcls), b, n, hw, gamma, denom,
       debug_negate_grad](ag::Node<T>& self) {
        const Tensor<T>& x = self.parents[0]->value;
        double g_out = static_cast<double>(self.grad[0]) / denom;
        if (debug_negate_grad) g_out = -g_out;
        Tensor<T>& dx = self.parents[0]->grad_ref();
        std::vector<double> prob(static_cast<size_t>(n));
        for (int64_t i = 0; i < b; ++i)
          for (int64_t p = 0; p < hw; ++p) {
            T mx = x[(i * n) * hw + p];
            for (int64_t c = 1; c < n; ++c) mx = std::max(mx, x[(i * n + c) * hw + p]);
            double sum = 0;
            for (int64_t c = 0; c < n; ++c) {
              prob[static_cast<size_t>(c)] = std::exp(static_cast<double>(x[(i * n + c) * hw + p] - mx));
              sum += prob[static_cast<size_t>(c)];
            }
            for (int64_t c = 0; c < n; ++c) prob[static_cast<size_t>(c)] /= sum;
            int64_t t = tcls[static_cast<size_t>(i * hw + p)];
            double pt = prob[static_cast<size_t>(t)];
            double one_minus = 1.0 - pt;
            // d/dx_j of -(1-pt)^g*log(pt) = (delta_tj - p_j)*(g*pt*(1-pt)^(g-1)*log(pt) - (1-pt)^g)
            double bracket;
            if (one_minus <= 0.0) {
              bracket = gamma > 0 ? 0.0 : -1.0;
            } else {
              double pow_g = std::pow(one_minus, gamma);
              double pow_gm1 = gamma == 0.0 ? 0.0 : std::pow(one_minus, gamma - 1.0);
              bracket = gamma * pt * pow_gm1 * std::log(pt) - pow_g;
            }
            for (int64_t c = 0; c < n; ++c) {
              double delta = c == t ? 1.0 : 0.0;
              dx[(i * n + c) * hw + p] +=
                  static_cast<T>(g_out * bracket * (delta - prob[static_cast<size_t>(c)]));
            }
          }
      });
}

// l_fw = sum|F(G(X)) - X|, l_bw = sum|G(F(Xbar)) - Xbar|, l_dual = l_fw + l_bw
template <typename T>
struct CycleTerms {
  ag::Var<T> l_fw, l_bw, l_dual;
};

template <typename T>
CycleTerms<T> dual_cycle_loss(const model::EmbeddingBundle<T>& bundle) {
  if (!bundle.has_top || !bundle.x_bar || !bundle.x_bar_dprime)
    throw std::invalid_argument("dual_cycle_loss: cycle loss requires a training-mode bundle (top view present)");
  if (!bundle.x || !bundle.x_dprime)
    throw std::invalid_argument("dual_cycle_loss: bundle missing front-view reconstructions");
  CycleTerms<T> t;
  t.l_fw = ag::l1_sum(bundle.x_dprime, bundle.x);
  t.l_bw = ag::l1_sum(bundle.x_bar_dprime, bundle.x_bar);
  t.l_dual = ag::add(t.l_fw, t.l_bw);
  return t;
}

// total = lambda1*(focal_main + focal_aux) + lambda2*(l_fw + l_bw)
template <typename T>
struct ObjectiveResult {
  ag::Var<T> total;
  LossBreakdown breakdown;
};

template <typename T>
ObjectiveResult<T> objective(const ag::Var<T>& focal_main, const ag::Var<T>& focal_aux,
                             const CycleTerms<T>& cycle, const ObjectiveWeights& w) {
  w.validate();
  auto check_finite = [](const ag::Var<T>& v, const char* name) {
    if (!v->value.all_finite())
      throw std::invalid_argument(std::string("objective: non-finite ") + name);
  };
  check_finite(focal_main, "focal_main");
  check_finite(focal_aux, "focal_aux");
  check_finite(cycle.l_fw, "l_fw");
  check_finite(cycle.l_bw, "l_bw");
  ObjectiveResult<T> r;
  auto focal_term = ag::add(focal_main, focal_aux);
  r.total = ag::add(ag::scale(focal_term, static_cast<T>(w.lambda1)),
                    ag::scale(cycle.l_dual, static_cast<T>(w.lambda2)));
  r.breakdown.focal_main = static_cast<double>(focal_main->value[0]);
  r.breakdown.focal_aux = static_cast<double>(focal_aux->value[0]);
  r.breakdown.l_fw = static_cast<double>(cycle.l_fw->value[0]);
  r.breakdown.l_bw = static_cast<double>(cycle.l_bw->value[0]);
  r.breakdown.l_dual = static_cast<double>(cycle.l_dual->value[0]);
  r.breakdown.total = static_cast<double>(r.total->value[0]);
  return r;
}

}  // namespace dct::loss
