// Micro-benchmarks for the tensor ops that dominate a training step.

#include <benchmark/benchmark.h>

#include "dct/nn_ops.hpp"
#include "dct/rng.hpp"
#include "dct/tensor.hpp"

using dct::Rng;
using dct::Shape;
using dct::Tensor;
namespace ag = dct::ag;

namespace {

Tensor<float> random_tensor(Rng& rng, const Shape& s) {
  Tensor<float> t(s);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(rng.normal(0.0, 0.5));
  return t;
}

void bench_conv2d_forward(benchmark::State& state) {
  int64_t hw = state.range(0);
  Rng rng(1);
  auto x = ag::constant(random_tensor(rng, Shape{2, 16, hw, hw}));
  auto w = ag::constant(random_tensor(rng, Shape{16, 16, 3, 3}));
  auto b = ag::constant(random_tensor(rng, Shape{16}));
  for (auto _ : state) {
    auto y = ag::conv2d(x, w, b, 1, 1);
    benchmark::DoNotOptimize(y->value.data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * 16 * hw * hw);
}

void bench_conv2d_train(benchmark::State& state) {
  int64_t hw = state.range(0);
  Rng rng(2);
  Tensor<float> xv = random_tensor(rng, Shape{2, 16, hw, hw});
  Tensor<float> wv = random_tensor(rng, Shape{16, 16, 3, 3});
  Tensor<float> bv = random_tensor(rng, Shape{16});
  for (auto _ : state) {
    auto w = ag::parameter(wv);
    auto b = ag::parameter(bv);
    auto y = ag::conv2d(ag::constant(xv), w, b, 1, 1);
    auto l = ag::sum(y);
    ag::backward(l);
    benchmark::DoNotOptimize(w->grad.data());
  }
}

void bench_matmul(benchmark::State& state) {
  int64_t n = state.range(0);
  Rng rng(3);
  auto a = ag::constant(random_tensor(rng, Shape{n, n}));
  auto b = ag::constant(random_tensor(rng, Shape{n, n}));
  for (auto _ : state) {
    auto c = ag::matmul(a, b);
    benchmark::DoNotOptimize(c->value.data());
  }
  state.SetItemsProcessed(state.iterations() * n * n * n * 2);
}

void bench_group_norm(benchmark::State& state) {
  int64_t hw = state.range(0);
  Rng rng(4);
  auto x = ag::constant(random_tensor(rng, Shape{2, 32, hw, hw}));
  auto g = ag::constant(Tensor<float>::full(Shape{32}, 1.0f));
  auto beta = ag::constant(Tensor<float>::zeros(Shape{32}));
  for (auto _ : state) {
    auto y = ag::group_norm(x, g, beta, 8);
    benchmark::DoNotOptimize(y->value.data());
  }
}

void bench_softmax_attention(benchmark::State& state) {
  int64_t tokens = state.range(0);
  Rng rng(5);
  auto q = ag::constant(random_tensor(rng, Shape{8, tokens, 16}));
  auto k = ag::constant(random_tensor(rng, Shape{8, tokens, 16}));
  auto v = ag::constant(random_tensor(rng, Shape{8, tokens, 16}));
  for (auto _ : state) {
    auto scores = ag::bmm(q, k, true);
    auto att = ag::softmax_last(ag::scale(scores, 0.25f));
    auto out = ag::bmm(att, v, false);
    benchmark::DoNotOptimize(out->value.data());
  }
}

}  // namespace

BENCHMARK(bench_conv2d_forward)->Arg(32)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);
BENCHMARK(bench_conv2d_train)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(bench_matmul)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);
BENCHMARK(bench_group_norm)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);
BENCHMARK(bench_softmax_attention)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);
