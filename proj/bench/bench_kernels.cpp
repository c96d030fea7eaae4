// Parallel kernels against their serial references.

#include <benchmark/benchmark.h>

#include <random>

#include "esbnn/bin_kernels.hpp"

using namespace esbnn;

namespace {

RealTensor random_signs(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  RealTensor t(s);
  for (float& v : t.data()) v = rng() & 1 ? 1.0f : -1.0f;
  return t;
}

// (batch, channels, side) of a ResNet-20 stage-1 ES layer with tau = 4.
const ConvGeometry kGeom{64, 4, 3, 1, 1, 1};

void BM_BinaryConv(benchmark::State& state) {
  const BitTensor a = pack_signs(random_signs({16, 64, 32, 32}, 1));
  const BitTensor w = pack_signs(random_signs(kGeom.weight_shape(), 2));
  for (auto _ : state) benchmark::DoNotOptimize(binary_conv2d(a, w, kGeom));
  state.SetItemsProcessed(state.iterations() * 16 * 4 * 32 * 32 * 64 * 9);
}

void BM_BinaryConvSerial(benchmark::State& state) {
  const BitTensor a = pack_signs(random_signs({16, 64, 32, 32}, 1));
  const BitTensor w = pack_signs(random_signs(kGeom.weight_shape(), 2));
  for (auto _ : state) benchmark::DoNotOptimize(binary_conv2d_serial(a, w, kGeom));
  state.SetItemsProcessed(state.iterations() * 16 * 4 * 32 * 32 * 64 * 9);
}

void BM_FloatConvGemm(benchmark::State& state) {
  const RealTensor a = random_signs({16, 64, 32, 32}, 1);
  const RealTensor w = random_signs(kGeom.weight_shape(), 2);
  for (auto _ : state) benchmark::DoNotOptimize(float_conv2d(a, w, kGeom));
}

void BM_FloatConvOracle(benchmark::State& state) {
  const RealTensor a = random_signs({16, 64, 32, 32}, 1);
  const RealTensor w = random_signs(kGeom.weight_shape(), 2);
  for (auto _ : state) benchmark::DoNotOptimize(float_conv_oracle(a, w, kGeom));
}

}  // namespace

BENCHMARK(BM_BinaryConv)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BinaryConvSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_FloatConvGemm)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_FloatConvOracle)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
