#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "cmunet/kernels.hpp"
#include "cmunet/reference.hpp"
#include "cmunet/ssm.hpp"

using namespace cmunet;

namespace {

std::vector<float> noise(std::size_t n, std::uint64_t seed, float lo = -1.f, float hi = 1.f) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(lo, hi);
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

struct ConvCase {
  ConvGeometry g;
  std::vector<float> x, w, bias, y;

  explicit ConvCase(std::int64_t channels, std::int64_t side)
      : g(make_conv_geometry(1, channels, side, side, channels, 3, 3, 1, 1, 1)),
        x(noise(static_cast<std::size_t>(channels * side * side), 1)),
        w(noise(static_cast<std::size_t>(channels * g.patch_size()), 2)),
        bias(static_cast<std::size_t>(channels), 0.f),
        y(static_cast<std::size_t>(channels * g.out_h * g.out_w)) {}
};

void BM_ConvReference(benchmark::State& state) {
  ConvCase c(state.range(0), state.range(1));
  for (auto _ : state) {
    reference::conv2d_forward(c.g, c.x.data(), c.w.data(), c.bias.data(), c.y.data());
    benchmark::DoNotOptimize(c.y.data());
  }
}

void BM_ConvKernel(benchmark::State& state) {
  ConvCase c(state.range(0), state.range(1));
  for (auto _ : state) {
    kernels::conv2d_forward(c.g, c.x.data(), c.w.data(), c.bias.data(), c.y.data());
    benchmark::DoNotOptimize(c.y.data());
  }
}

struct ScanCase {
  ssm::ScanDims dims;
  std::vector<float> x, delta, a, b, c, d, y;

  explicit ScanCase(std::int64_t length) {
    dims.batch = 1;
    dims.length = length;
    dims.inner = 16;
    dims.state = 8;
    const auto bl = static_cast<std::size_t>(length);
    x = noise(bl * 16, 3);
    delta = noise(bl * 16, 4, 1e-3f, 0.5f);
    a = noise(16 * 8, 5, -9.f, -0.05f);
    b = noise(bl * 8, 6);
    c = noise(bl * 8, 7);
    d = noise(16, 8);
    y.resize(bl * 16);
  }
  ssm::ScanBuffers<float> buffers() const {
    return {x.data(), delta.data(), a.data(), b.data(), c.data(), d.data()};
  }
};

void BM_ScanSeq(benchmark::State& state) {
  ScanCase s(state.range(0));
  for (auto _ : state) {
    ssm::scan_forward_seq(s.dims, s.buffers(), s.y.data());
    benchmark::DoNotOptimize(s.y.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_ScanParallel(benchmark::State& state) {
  ScanCase s(state.range(0));
  for (auto _ : state) {
    ssm::scan_forward_parallel(s.dims, s.buffers(), s.y.data());
    benchmark::DoNotOptimize(s.y.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(BM_ConvReference)->Args({16, 32})->Args({32, 64})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvKernel)->Args({16, 32})->Args({32, 64})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ScanSeq)->RangeMultiplier(4)->Range(1024, 16384)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ScanParallel)->RangeMultiplier(4)->Range(1024, 16384)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
