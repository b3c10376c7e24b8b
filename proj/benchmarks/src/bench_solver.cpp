// SPDX-License-Identifier: Apache-2.0

#include "elasreg/estimator.hpp"
#include "elasreg/image.hpp"
#include "elasreg/regsolver.hpp"

#include <benchmark/benchmark.h>

#include <random>

namespace elasreg {
namespace {

const AnalyticField kT = AnalyticField::squared_distance({0.8, 0.8});
const AnalyticField kR = AnalyticField::squared_distance({0.2, 0.2});

std::shared_ptr<const FeSpace> uniform_space(int refinements) {
    const auto forest = std::make_shared<const QuadForest>(QuadForest(Rect{}).uniform_refine(refinements));
    MaterialParams p;
    p.alpha = 1.0;
    p.dt = 1.0;
    return FeSpace::build(forest, 1, p, true);
}

void BM_ImexStep(benchmark::State& state) {
    const auto space = uniform_space(static_cast<int>(state.range(0)));
    AssembledSystem sys = assemble_operator(space, ProximalKind::Identity);
    // The first step pays for the factorisation.
    FeFunction u = imex_step(sys, FeFunction(space), kT, kR, 6);
    for (auto _ : state) {
        u = imex_step(sys, u, kT, kR, 6);
    }
    state.counters["dofs"] = static_cast<double>(space->n_dofs());
}
BENCHMARK(BM_ImexStep)->Arg(5)->Arg(7)->Unit(benchmark::kMillisecond);

void BM_AndersonUpdate(benchmark::State& state) {
    const auto n = static_cast<Eigen::Index>(state.range(0));
    const int depth = static_cast<int>(state.range(1));
    std::mt19937 rng(1);
    std::normal_distribution<double> d(0.0, 1.0);
    std::vector<Vector> xs, gs;
    for (int i = 0; i < depth + 8; ++i) {
        Vector x(n), g(n);
        for (Eigen::Index j = 0; j < n; ++j) {
            x[j] = d(rng);
            g[j] = d(rng);
        }
        xs.push_back(x);
        gs.push_back(g);
    }
    for (auto _ : state) {
        AndersonWindow aa(depth);
        for (std::size_t i = 0; i < xs.size(); ++i) {
            benchmark::DoNotOptimize(aa.update(xs[i], gs[i]));
        }
    }
}
BENCHMARK(BM_AndersonUpdate)->Args({10000, 5})->Args({10000, 10})->Args({100000, 10})->Unit(benchmark::kMillisecond);

void BM_SolveStationary(benchmark::State& state) {
    const auto space = uniform_space(5);
    SolverConfig cfg;
    cfg.tol = 1e-8;
    cfg.aa_depth = static_cast<int>(state.range(0));
    for (auto _ : state) {
        AssembledSystem sys = assemble_operator(space, ProximalKind::Identity);
        benchmark::DoNotOptimize(solve_stationary(sys, FeFunction(space), kT, kR, cfg).iterations);
    }
}
BENCHMARK(BM_SolveStationary)->Arg(0)->Arg(10)->Unit(benchmark::kMillisecond);

void BM_Indicators(benchmark::State& state) {
    const auto space = uniform_space(static_cast<int>(state.range(0)));
    const FeFunction u = FeFunction::interpolate(space, [](const Vec2& x) { return Vec2{0.1 * x[0] * x[1], -0.05 * x[0]}; });
    for (auto _ : state) {
        benchmark::DoNotOptimize(compute_indicators(u, kT, kR).theta());
    }
}
BENCHMARK(BM_Indicators)->Arg(5)->Arg(6)->Unit(benchmark::kMillisecond);

} // namespace
} // namespace elasreg
