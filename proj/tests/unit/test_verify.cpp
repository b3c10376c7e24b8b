// SPDX-License-Identifier: Apache-2.0

#include "elasreg/errors.hpp"
#include "elasreg/quadrature.hpp"
#include "elasreg/verify.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>

namespace elasreg {
namespace {

std::vector<Vec2> interior_points(unsigned seed, int n, double margin) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> u(margin, 1.0 - margin);
    std::vector<Vec2> pts;
    for (int i = 0; i < n; ++i) {
        pts.push_back({u(rng), u(rng)});
    }
    return pts;
}

class ExactFieldsTest : public ::testing::TestWithParam<CaseKind> {
protected:
    ManufacturedCase mc() const {
        return GetParam() == CaseKind::Smooth ? ManufacturedCase::smooth() : ManufacturedCase::singular();
    }
};

TEST_P(ExactFieldsTest, GradientMatchesCentralDifferences) {
    const ExactFields ex = exact_fields(mc());
    const double h = 1e-6;
    for (const Vec2& x : interior_points(1, 100, 0.05)) {
        const Mat2 g = ex.grad(x);
        for (int j = 0; j < 2; ++j) {
            Vec2 xp = x, xm = x;
            xp[j] += h;
            xm[j] -= h;
            const Vec2 d = (1.0 / (2 * h)) * (ex.u(xp) - ex.u(xm));
            for (int i = 0; i < 2; ++i) {
                EXPECT_NEAR(g[i][j], d[i], 1e-6 * std::max(1.0, std::abs(g[i][j])));
            }
        }
    }
}

TEST_P(ExactFieldsTest, ForceBalancesStressDivergence) {
    const ExactFields ex = exact_fields(mc());
    const double h = 1e-5;
    for (const Vec2& x : interior_points(2, 50, 0.1)) {
        Vec2 div{0.0, 0.0};
        for (int j = 0; j < 2; ++j) {
            Vec2 xp = x, xm = x;
            xp[j] += h;
            xm[j] -= h;
            const Mat2 sp = ex.stress(xp);
            const Mat2 sm = ex.stress(xm);
            for (int i = 0; i < 2; ++i) {
                div[i] += (sp[i][j] - sm[i][j]) / (2 * h);
            }
        }
        const Vec2 f = ex.f(x);
        for (int i = 0; i < 2; ++i) {
            EXPECT_NEAR(f[i] + div[i], 0.0, 1e-6 * std::max(1.0, std::abs(f[i])));
        }
    }
}

TEST_P(ExactFieldsTest, StressIsHookeOfGradient) {
    const ManufacturedCase c = mc();
    const ExactFields ex = exact_fields(c);
    for (const Vec2& x : interior_points(3, 20, 0.05)) {
        const Mat2 a = ex.stress(x);
        const Mat2 b = stress(c.params, ex.grad(x));
        for (int i = 0; i < 2; ++i) {
            for (int j = 0; j < 2; ++j) {
                EXPECT_NEAR(a[i][j], b[i][j], 1e-14 * std::max(1.0, std::abs(b[i][j])));
            }
        }
    }
}

TEST_P(ExactFieldsTest, ImageTermIsForcingAtExactSolution) {
    const ManufacturedCase c = mc();
    const ExactFields ex = exact_fields(c);
    const AnalyticField T = c.target();
    const AnalyticField R = c.reference();
    for (const Vec2& x : interior_points(4, 20, 0.05)) {
        const Vec2 g = ex.g(x);
        const Vec2 expect = c.params.alpha * forcing(T, R, x, ex.u(x));
        EXPECT_NEAR(g[0], expect[0], 1e-14);
        EXPECT_NEAR(g[1], expect[1], 1e-14);
    }
}

INSTANTIATE_TEST_SUITE_P(Cases, ExactFieldsTest, ::testing::Values(CaseKind::Smooth, CaseKind::Singular),
                         [](const auto& info) { return to_string(info.param); });

TEST(Manufactured, CaseParameters) {
    const ManufacturedCase s = ManufacturedCase::smooth();
    EXPECT_EQ(s.params.kappa, 0.5);
    EXPECT_EQ(s.params.E, 1.0);
    EXPECT_EQ(s.params.nu, 0.25);
    EXPECT_NEAR(s.params.lambda(), 0.4, 1e-15);
    EXPECT_NEAR(s.params.mu(), 0.4, 1e-15);
    const ManufacturedCase g = ManufacturedCase::singular();
    EXPECT_EQ(g.params.kappa, 0.0);
    EXPECT_NEAR(g.beta, 2.0 / 3.0, 1e-15);
    EXPECT_EQ(g.reference().value({0.2, 0.2}), 0.0);
    EXPECT_EQ(g.target().value({0.8, 0.8}), 0.0);
}

TEST(Manufactured, SingularFieldVanishesAtOriginLikeRadiusPower) {
    const ExactFields ex = exact_fields(ManufacturedCase::singular());
    const double r1 = norm(ex.u({1e-4, 1e-4}));
    const double r2 = norm(ex.u({1e-2, 1e-2}));
    // |u| ~ r^beta along a ray.
    EXPECT_NEAR(std::log(r2 / r1) / std::log(100.0), 2.0 / 3.0, 1e-10);
}

TEST(Manufactured, AmplitudeScalesField) {
    ManufacturedCase a = ManufacturedCase::smooth();
    ManufacturedCase b = a;
    b.amplitude = 2.0 * a.amplitude;
    const Vec2 x{0.3, 0.7};
    const Vec2 ua = exact_fields(a).u(x);
    const Vec2 ub = exact_fields(b).u(x);
    EXPECT_NEAR(ub[0], 2.0 * ua[0], 1e-15);
    EXPECT_NEAR(ub[1], 2.0 * ua[1], 1e-15);
}

TEST(Manufactured, MultiplierTargetsAreRigidMoments) {
    const ManufacturedCase mc = ManufacturedCase::smooth();
    const ExactFields ex = exact_fields(mc);
    const ExtraForcing extra = manufactured_forcing(mc, ex);
    const GaussRule& rule = gauss_legendre(10);
    std::array<double, 3> c{0.0, 0.0, 0.0};
    const int n = 16;
    for (int bj = 0; bj < n; ++bj) {
        for (int bi = 0; bi < n; ++bi) {
            for (std::size_t a = 0; a < rule.size(); ++a) {
                for (std::size_t b = 0; b < rule.size(); ++b) {
                    const Vec2 x{(bi + rule.points[a]) / n, (bj + rule.points[b]) / n};
                    const double w = rule.weights[a] * rule.weights[b] / (n * n);
                    const Vec2 u = ex.u(x);
                    c[0] += w * u[0];
                    c[1] += w * u[1];
                    c[2] += w * (-x[1] * u[0] + x[0] * u[1]);
                }
            }
        }
    }
    for (int i = 0; i < 3; ++i) {
        EXPECT_NEAR(extra.multiplier_rhs[static_cast<std::size_t>(i)], c[static_cast<std::size_t>(i)], 1e-12);
    }
}

TEST(Names, RoundTrip) {
    EXPECT_EQ(parse_case("smooth"), CaseKind::Smooth);
    EXPECT_EQ(parse_case("singular"), CaseKind::Singular);
    EXPECT_EQ(parse_mode("uniform"), RefinementMode::Uniform);
    EXPECT_EQ(parse_mode("adaptive"), RefinementMode::Adaptive);
    EXPECT_EQ(to_string(CaseKind::Singular), "singular");
    EXPECT_EQ(to_string(RefinementMode::Adaptive), "adaptive");
    EXPECT_THROW(parse_case("wavy"), ConfigError);
    EXPECT_THROW(parse_mode("random"), ConfigError);
}

TEST(Convergence, ConfigValidation) {
    ConvergenceConfig c;
    EXPECT_NO_THROW(c.validate());
    c.levels = 1;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.degree = 3;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Convergence, SmoothUniformFirstLevels) {
    ConvergenceConfig c;
    c.levels = 4;
    c.solver.tol = 1e-10;
    c.solver.aa_depth = 10;
    const auto rows = run_convergence(c);
    ASSERT_EQ(rows.size(), 4U);
    EXPECT_EQ(rows[0].dofs, 21U);
    EXPECT_EQ(rows[1].dofs, 53U);
    EXPECT_EQ(rows[2].dofs, 165U);
    EXPECT_EQ(rows[3].dofs, 581U);
    EXPECT_NEAR(rows[0].h, std::sqrt(0.5), 1e-15);
    EXPECT_FALSE(rows[0].rate.has_value());
    EXPECT_NEAR(*rows[3].rate, 1.0, 0.05);
    double lo = rows[0].eff, hi = rows[0].eff;
    for (const auto& r : rows) {
        lo = std::min(lo, r.eff);
        hi = std::max(hi, r.eff);
        EXPECT_NEAR(r.eff, r.error / r.theta, 1e-15);
    }
    EXPECT_LE(hi / lo, 2.0);
}

TEST(Convergence, SmoothQuadraticRate) {
    ConvergenceConfig c;
    c.degree = 2;
    c.levels = 4;
    c.solver.tol = 1e-11;
    c.solver.aa_depth = 10;
    const auto rows = run_convergence(c);
    EXPECT_EQ(rows[0].dofs, 53U);
    EXPECT_NEAR(*rows.back().rate, 2.0, 0.05);
}

double interpolate_loglog(const std::vector<ConvergenceRow>& rows, double dofs) {
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const double d0 = static_cast<double>(rows[i - 1].dofs);
        const double d1 = static_cast<double>(rows[i].dofs);
        if (dofs >= d0 && dofs <= d1) {
            const double t = std::log(dofs / d0) / std::log(d1 / d0);
            return std::exp((1 - t) * std::log(rows[i - 1].error) + t * std::log(rows[i].error));
        }
    }
    throw std::out_of_range("dofs outside the uniform range");
}

TEST(Convergence, SingularAdaptiveBeatsUniformAtEqualDofs) {
    ConvergenceConfig uni;
    uni.mc = ManufacturedCase::singular();
    uni.levels = 5;
    uni.solver.tol = 1e-10;
    uni.solver.aa_depth = 10;
    const auto u_rows = run_convergence(uni);
    EXPECT_NEAR(*u_rows.back().rate, 2.0 / 3.0, 0.08);

    ConvergenceConfig ada = uni;
    ada.mode = RefinementMode::Adaptive;
    ada.levels = 8;
    const auto a_rows = run_convergence(ada);
    ASSERT_EQ(a_rows.size(), 8U);
    const ConvergenceRow& last = a_rows.back();
    EXPECT_LT(last.error, interpolate_loglog(u_rows, static_cast<double>(last.dofs)));
    double mean_rate = 0.0;
    for (std::size_t i = 1; i < a_rows.size(); ++i) {
        mean_rate += *a_rows[i].rate;
    }
    mean_rate /= static_cast<double>(a_rows.size() - 1);
    EXPECT_GE(mean_rate, 2.0 / 3.0);
}

TEST(ConvergenceCsv, HeaderAndEmptyFirstRate) {
    const auto dir = test::scratch_dir("conv_csv");
    std::vector<ConvergenceRow> rows(2);
    rows[0] = {21, 0.7, 0.06, std::nullopt, 0.1, 0.6, 3};
    rows[1] = {53, 0.35, 0.03, 1.0, 0.1, 0.3, 3};
    write_convergence_csv(rows, dir / "c.csv");
    write_error_dofs(rows, dir / "c.dat");
    std::ifstream in(dir / "c.csv");
    std::string header, first;
    std::getline(in, header);
    std::getline(in, first);
    EXPECT_EQ(header, "dofs,h,error,rate,eff");
    EXPECT_NE(first.find(",,"), std::string::npos);
    EXPECT_TRUE(std::filesystem::exists(dir / "c.dat"));
}

} // namespace
} // namespace elasreg
