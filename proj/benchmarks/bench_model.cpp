// End-to-end timings: full forward passes, a complete training step, and the
// synthetic data path. These are the numbers that decide whether an overfit
// experiment fits in a coffee break.

#include <benchmark/benchmark.h>

#include "dct/geometry.hpp"
#include "dct/losses.hpp"
#include "dct/model.hpp"
#include "dct/rng.hpp"
#include "dct/supervision.hpp"

using dct::Rng;
using dct::Shape;
using dct::Tensor;
namespace ag = dct::ag;

namespace {

dct::model::ModelConfig desk_config(int64_t input_hw) {
  dct::model::ModelConfig c;
  c.input_hw = input_hw;
  c.base_channels = 4;
  c.encoder_stages = 4;
  c.embed_dim = 64;
  c.mlp_hidden = 128;
  c.n_classes = 3;
  c.attention_heads = 4;
  return c;
}

Tensor<float> random_batch(Rng& rng, int64_t b, int64_t hw) {
  Tensor<float> t(Shape{b, 3, hw, hw});
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(rng.uniform());
  return t;
}

void bench_forward_infer(benchmark::State& state) {
  int64_t hw = state.range(0);
  dct::model::DctModel<float> m(desk_config(hw), 11);
  Rng rng(12);
  Tensor<float> img = random_batch(rng, 1, hw);
  for (auto _ : state) {
    auto out = m.forward_infer(img);
    benchmark::DoNotOptimize(out.main_logits->value.data());
  }
}

void bench_train_step(benchmark::State& state) {
  int64_t hw = state.range(0);
  dct::model::DctModel<float> m(desk_config(hw), 13);
  Rng rng(14);
  Tensor<float> img = random_batch(rng, 2, hw);
  Tensor<float> layout = random_batch(rng, 2, hw);
  Tensor<float> target = Tensor<float>::zeros(Shape{2, 3, hw, hw});
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t i = 0; i < hw; ++i)
      for (int64_t j = 0; j < hw; ++j)
        target[((n * 3 + 0) * hw + i) * hw + j] = 1.0f;
  dct::loss::FocalConfig fc;
  fc.n_classes = 3;
  for (auto _ : state) {
    auto out = m.forward_train(img, layout);
    auto obj = dct::loss::objective(dct::loss::focal_loss(out.main_logits, target, fc),
                                    dct::loss::focal_loss(out.aux_logits, target, fc),
                                    dct::loss::dual_cycle_loss(out.bundle), {});
    ag::backward(obj.total);
    benchmark::DoNotOptimize(obj.breakdown.total);
  }
}

void bench_scene_render(benchmark::State& state) {
  int64_t hw = state.range(0);
  uint64_t seed = 0;
  for (auto _ : state) {
    dct::geo::SceneSpec s = dct::geo::generate_scene(seed++, dct::geo::Difficulty::standard);
    dct::geo::FrontViewImage img = dct::geo::render_front_view(s, hw, hw, 0.02);
    benchmark::DoNotOptimize(img.pixels.data());
  }
}

void bench_rasterize(benchmark::State& state) {
  dct::geo::SceneSpec s = dct::geo::generate_scene(42, dct::geo::Difficulty::standard);
  for (auto _ : state) {
    dct::geo::LayoutRaster r = dct::geo::rasterize_bev(s, state.range(0));
    benchmark::DoNotOptimize(r.classes.data());
  }
}

}  // namespace

BENCHMARK(bench_forward_infer)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(bench_train_step)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(bench_scene_render)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(bench_rasterize)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
