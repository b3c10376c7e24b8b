// SPDX-License-Identifier: Apache-2.0

#include "elasreg/fespace.hpp"
#include "elasreg/image.hpp"
#include "elasreg/mesh.hpp"

#include <benchmark/benchmark.h>

namespace elasreg {
namespace {

std::shared_ptr<const FeSpace> uniform_space(int refinements, int degree) {
    const auto forest = std::make_shared<const QuadForest>(QuadForest(Rect{}).uniform_refine(refinements));
    return FeSpace::build(forest, degree, MaterialParams{}, true);
}

void BM_ShapeValues(benchmark::State& state) {
    const int degree = static_cast<int>(state.range(0));
    const Vec2 ref{0.3, 0.7};
    const Vec2 jac{0.125, 0.125};
    for (auto _ : state) {
        benchmark::DoNotOptimize(shape_values(degree, ref, jac));
    }
}
BENCHMARK(BM_ShapeValues)->Arg(1)->Arg(2);

void BM_BuildSpace(benchmark::State& state) {
    const auto forest = std::make_shared<const QuadForest>(QuadForest(Rect{}).uniform_refine(static_cast<int>(state.range(0))));
    for (auto _ : state) {
        benchmark::DoNotOptimize(FeSpace::build(forest, 1, MaterialParams{}, true));
    }
}
BENCHMARK(BM_BuildSpace)->Arg(4)->Arg(6)->Unit(benchmark::kMillisecond);

void BM_AssembleOperator(benchmark::State& state) {
    const auto space = uniform_space(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
    for (auto _ : state) {
        AssembledSystem sys = assemble_operator(space, ProximalKind::Identity);
        benchmark::DoNotOptimize(sys.matrix().nonZeros());
    }
    state.counters["dofs"] = static_cast<double>(space->n_dofs());
}
BENCHMARK(BM_AssembleOperator)->Args({5, 1})->Args({6, 1})->Args({5, 2})->Unit(benchmark::kMillisecond);

void BM_AssembleLoad(benchmark::State& state) {
    const auto space = uniform_space(static_cast<int>(state.range(0)), 1);
    AssembledSystem sys = assemble_operator(space, ProximalKind::Identity);
    const AnalyticField T = AnalyticField::squared_distance({0.8, 0.8});
    const AnalyticField R = AnalyticField::squared_distance({0.2, 0.2});
    const FeFunction u(space);
    for (auto _ : state) {
        benchmark::DoNotOptimize(assemble_load(sys, u, T, R, 6));
    }
}
BENCHMARK(BM_AssembleLoad)->Arg(5)->Arg(6)->Unit(benchmark::kMillisecond);

} // namespace
} // namespace elasreg
