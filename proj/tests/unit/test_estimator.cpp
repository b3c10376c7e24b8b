// SPDX-License-Identifier: Apache-2.0

#include "elasreg/amr.hpp"
#include "elasreg/errors.hpp"
#include "elasreg/estimator.hpp"
#include "elasreg/image.hpp"
#include "elasreg/verify.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace elasreg {
namespace {

const AnalyticField kFlat([](const Vec2&) { return 0.4; }, [](const Vec2&) { return Vec2{0.0, 0.0}; });

TEST(Indicators, RigidModeWithFlatImagesIsZero) {
    const auto space = test::make_space(test::corner_refined_forest(), 2, 0.0);
    const FeFunction u = FeFunction::interpolate(space, [](const Vec2& x) { return Vec2{0.1 - 0.3 * x[1], -0.2 + 0.3 * x[0]}; });
    const CellIndicators ind = compute_indicators(u, kFlat, kFlat);
    EXPECT_NEAR(ind.theta(), 0.0, 1e-13);
}

TEST(Indicators, LinearFieldHasNoInteriorJumps) {
    const auto space = test::make_space(test::uniform_forest(3), 1, 0.5);
    const FeFunction u = FeFunction::interpolate(space, [](const Vec2& x) { return Vec2{0.5 * x[0] + 0.2 * x[1], -x[0]}; });
    const CellIndicators ind = compute_indicators(u, kFlat, kFlat);
    for (double j : ind.jump) {
        EXPECT_NEAR(j, 0.0, 1e-26);
    }
    EXPECT_NEAR(facet_jump_sum(u), 0.0, 1e-26);
    // The Robin residual does not vanish for a nonzero field.
    EXPECT_GT(std::accumulate(ind.boundary.begin(), ind.boundary.end(), 0.0), 0.0);
}

TEST(Indicators, JumpSplitSumsToFacetSum) {
    std::mt19937 rng(3);
    QuadForest f = QuadForest(Rect{}).uniform_refine(2);
    for (int round = 0; round < 3; ++round) {
        std::vector<MortonKey> refine;
        for (const auto& k : f.leaves()) {
            if (rng() % 3 == 0) {
                refine.push_back(k);
            }
        }
        f = f.adapt(refine, {}).forest;
    }
    const auto space = test::make_space(std::make_shared<const QuadForest>(f), 2, 0.5);
    const FeFunction u = FeFunction::interpolate(space, [](const Vec2& x) {
        return Vec2{std::sin(3 * x[0]) * x[1], std::cos(2 * x[1]) * x[0] * x[0]};
    });
    const CellIndicators ind = compute_indicators(u, kFlat, kFlat);
    const double split = std::accumulate(ind.jump.begin(), ind.jump.end(), 0.0);
    const double whole = facet_jump_sum(u);
    EXPECT_GT(whole, 0.0);
    EXPECT_NEAR(split, whole, 1e-13 * whole);
}

TEST(Indicators, ThetaIndependentOfLeafStorageOrder) {
    const QuadForest base = *test::corner_refined_forest();
    std::vector<MortonKey> shuffled(base.leaves().begin(), base.leaves().end());
    std::mt19937 rng(8);
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const auto a = std::make_shared<const QuadForest>(base);
    const auto b = std::make_shared<const QuadForest>(QuadForest(base.domain(), shuffled));
    const auto field = [](const Vec2& x) { return Vec2{x[0] * x[1], std::sin(x[0] + 2 * x[1])}; };
    const AnalyticField T = AnalyticField::squared_distance({0.7, 0.6});
    const AnalyticField R = AnalyticField::squared_distance({0.3, 0.4});
    const double ta = compute_indicators(FeFunction::interpolate(test::make_space(a, 2), field), T, R).theta();
    const double tb = compute_indicators(FeFunction::interpolate(test::make_space(b, 2), field), T, R).theta();
    EXPECT_GT(ta, 0.0);
    EXPECT_NEAR(ta, tb, 1e-14 * ta);
}

TEST(Indicators, TotalsAndTheta) {
    CellIndicators ind;
    ind.volume = {1.0, 0.0};
    ind.jump = {0.5, 2.0};
    ind.boundary = {0.0, 0.5};
    EXPECT_EQ(ind.cell_totals(), (std::vector<double>{1.5, 2.5}));
    EXPECT_DOUBLE_EQ(ind.theta(), 2.0);
}

TEST(Marking, ZeroFractionsMarkNothing) {
    const std::vector<double> eta{3.0, 1.0, 2.0};
    const MarkSets m = mark_fraction(eta, 0.0, 0.0);
    EXPECT_TRUE(m.refine.empty());
    EXPECT_TRUE(m.coarsen.empty());
}

TEST(Marking, TiesGoToLowerIndexForRefinement) {
    const std::vector<double> eta(10, 1.0);
    const MarkSets m = mark_fraction(eta, 0.4, 0.2);
    EXPECT_EQ(m.refine, (std::vector<std::size_t>{0, 1, 2, 3}));
    EXPECT_EQ(m.coarsen, (std::vector<std::size_t>{8, 9}));
}

TEST(Marking, MatchesFullSortOracle) {
    std::mt19937 rng(12);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t n : {7U, 40U, 333U, 1000U}) {
        std::vector<double> eta(n);
        for (auto& e : eta) {
            e = u(rng);
        }
        const MarkSets m = mark_fraction(eta, 0.15, 0.2);
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return eta[a] > eta[b]; });
        const auto n_ref = static_cast<std::size_t>(std::floor(0.15 * static_cast<double>(n) + 1e-9));
        const auto n_coa = static_cast<std::size_t>(std::floor(0.2 * static_cast<double>(n) + 1e-9));
        std::vector<std::size_t> top(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_ref));
        std::vector<std::size_t> bottom(order.end() - static_cast<std::ptrdiff_t>(n_coa), order.end());
        std::sort(top.begin(), top.end());
        std::sort(bottom.begin(), bottom.end());
        EXPECT_EQ(m.refine, top);
        EXPECT_EQ(m.coarsen, bottom);
    }
}

TEST(Marking, RejectsBadFractions) {
    const std::vector<double> eta{1.0, 2.0};
    EXPECT_THROW(mark_fraction(eta, -0.1, 0.0), ConfigError);
    EXPECT_THROW(mark_fraction(eta, 0.5, 1.5), ConfigError);
    EXPECT_THROW(mark_fraction(eta, 0.6, 0.5), ConfigError);
}

TEST(Indicators, SingularCaseConcentratesAtOrigin) {
    const ManufacturedCase mc = ManufacturedCase::singular();
    const ExactFields ex = exact_fields(mc);
    const ExtraForcing extra = manufactured_forcing(mc, ex);
    AmrConfig cfg;
    cfg.n0_ref = 2;
    cfg.n_ref = 4;
    cfg.theta_refine = 0.15;
    cfg.theta_coarsen = 0.0;
    cfg.params = mc.params;
    cfg.rm_mode = true;
    cfg.solver.tol = 1e-10;
    cfg.solver.aa_depth = 10;
    cfg.estimator_order = 8;
    int levels = 0;
    cfg.on_level = [&](const LevelView& view) {
        const std::vector<double> eta = view.indicators.cell_totals();
        const std::size_t origin = view.u.space().forest().locate({0.0, 0.0});
        const MarkSets m = mark_fraction(eta, cfg.theta_refine, 0.0);
        EXPECT_TRUE(std::binary_search(m.refine.begin(), m.refine.end(), origin)) << "level " << view.level;
        ++levels;
    };
    const AnalyticField T = mc.target();
    const AnalyticField R = mc.reference();
    (void)run_amr(cfg, T, R, &extra);
    EXPECT_EQ(levels, 5);
}

} // namespace
} // namespace elasreg
