// Reference (serial) vs parallel kernels at training-sized shapes.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "qclass/kernels.hpp"

namespace k = qclass::kernels;

namespace {

std::vector<float> random_vector(std::size_t n, unsigned seed, float lo = -1.0f, float hi = 1.0f) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> dist(lo, hi);
  std::vector<float> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

// batch 64, 300-d inputs, 256 outputs
template <bool Parallel>
void BM_Matmul(benchmark::State& state) {
  const k::MatmulDims d{static_cast<std::size_t>(state.range(0)), 300, 256};
  const auto x = random_vector(d.rows * d.inner, 1), w = random_vector(d.inner * d.cols, 2),
             b = random_vector(d.cols, 3);
  std::vector<float> out(d.rows * d.cols);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::parallel::matmul<float>(x, w, b, out, d);
    } else {
      k::reference::matmul<float>(x, w, b, out, d);
    }
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(d.rows));
}

// batch 64, 300-d vectors, 100 filters of width 3
template <bool Parallel>
void BM_ConvTime(benchmark::State& state) {
  const auto d = k::valid_conv_dims(64, static_cast<std::size_t>(state.range(0)), 300, 100, 3);
  const auto x = random_vector(d.batch * d.time * d.depth, 4), w = random_vector(d.filters * d.width * d.depth, 5),
             b = random_vector(d.filters, 6);
  std::vector<float> out(d.batch * d.out_len * d.filters);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::parallel::conv_time<float>(x, w, b, out, d);
    } else {
      k::reference::conv_time<float>(x, w, b, out, d);
    }
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(d.batch * d.time));
}

// fo-pooling, batch 64, 256 hidden units
template <bool Parallel>
void BM_QrnnPool(benchmark::State& state) {
  const k::PoolDims d{64, static_cast<std::size_t>(state.range(0)), 256};
  const std::size_t n = d.batch * d.time * d.hidden;
  const auto z = random_vector(n, 7), f = random_vector(n, 8, 0.0f, 1.0f), o = random_vector(n, 9, 0.0f, 1.0f);
  std::vector<float> c(n), h(n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::parallel::qrnn_pool<float>(z, f, o, c, h, d);
    } else {
      k::reference::qrnn_pool<float>(z, f, o, c, h, d);
    }
    benchmark::DoNotOptimize(h.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(d.batch * d.time));
}

}  // namespace

BENCHMARK(BM_Matmul<false>)->Name("matmul/reference")->Arg(64)->Arg(640);
BENCHMARK(BM_Matmul<true>)->Name("matmul/parallel")->Arg(64)->Arg(640);
BENCHMARK(BM_ConvTime<false>)->Name("conv_time/reference")->Arg(10)->Arg(30);
BENCHMARK(BM_ConvTime<true>)->Name("conv_time/parallel")->Arg(10)->Arg(30);
BENCHMARK(BM_QrnnPool<false>)->Name("qrnn_pool/reference")->Arg(10)->Arg(30);
BENCHMARK(BM_QrnnPool<true>)->Name("qrnn_pool/parallel")->Arg(10)->Arg(30);

BENCHMARK_MAIN();
