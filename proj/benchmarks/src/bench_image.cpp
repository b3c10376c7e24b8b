// SPDX-License-Identifier: Apache-2.0

#include "elasreg/image.hpp"

#include <benchmark/benchmark.h>

#include <filesystem>

namespace elasreg {
namespace {

void BM_LoadPng(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const auto path = std::filesystem::temp_directory_path() / ("elasreg_bench_" + std::to_string(n) + ".png");
    save_png(brain_phantom(n), path);
    for (auto _ : state) {
        benchmark::DoNotOptimize(load_raster(path));
    }
    std::filesystem::remove(path);
}
BENCHMARK(BM_LoadPng)->Arg(128)->Arg(512)->Unit(benchmark::kMicrosecond);

void BM_BuildField(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const RasterImage img = brain_phantom(n);
    const Rect dom = image_domain(n, n);
    const double sigma = static_cast<double>(state.range(1));
    for (auto _ : state) {
        benchmark::DoNotOptimize(build_field(img, dom, sigma));
    }
}
BENCHMARK(BM_BuildField)->Args({128, 1})->Args({512, 1})->Args({512, 10})->Unit(benchmark::kMillisecond);

void BM_SampleGradient(benchmark::State& state) {
    const int n = 128;
    const Rect dom = image_domain(n, n);
    const ImageField f = build_field(brain_phantom(n), dom, 1.0);
    double x = 0.0;
    for (auto _ : state) {
        x += 0.6180339887;
        x -= static_cast<int>(x);
        benchmark::DoNotOptimize(f.gradient({x, 1.0 - x}));
    }
}
BENCHMARK(BM_SampleGradient);

} // namespace
} // namespace elasreg
