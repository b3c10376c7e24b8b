// SPDX-License-Identifier: Apache-2.0

#include "dense_oracle.hpp"
#include "elasreg/errors.hpp"
#include "elasreg/fespace.hpp"
#include "elasreg/image.hpp"
#include "elasreg/quadrature.hpp"
#include "elasreg/regsolver.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <fstream>
#include <random>

namespace elasreg {
namespace {

using oracle::DenseOracle;

double max_abs_diff(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    return (a - b).cwiseAbs().maxCoeff();
}

FeFunction random_function(std::shared_ptr<const FeSpace> space, unsigned seed, double scale = 1.0) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> u(-scale, scale);
    FeFunction f(std::move(space));
    for (Eigen::Index i = 0; i < f.coefficients().size(); ++i) {
        f.coefficients()[i] = u(rng);
    }
    return f;
}

struct OracleCase {
    const char* name;
    std::shared_ptr<const QuadForest> forest;
    int degree;
    double kappa;
    bool rm;
};

std::vector<OracleCase> oracle_cases() {
    const auto rect = std::make_shared<const QuadForest>(
        QuadForest(Rect{{0.0, 0.0}, {1.0, 2.0 / 3.0}}).uniform_refine(1));
    return {
        {"uniform_k1", test::uniform_forest(1), 1, 0.0, true},
        {"uniform_k2", test::uniform_forest(1), 2, 0.5, true},
        {"hanging_k1", test::corner_refined_forest(), 1, 0.5, true},
        {"hanging_k2", test::corner_refined_forest(), 2, 0.0, true},
        {"rectangle_k2", rect, 2, 0.7, false},
        {"uniform4x4_k1", test::uniform_forest(2), 1, 1.0, false},
    };
}

TEST(FeSpaceTest, DofCounts) {
    EXPECT_EQ(test::make_space(test::uniform_forest(1), 1)->n_dofs(), 21U);
    EXPECT_EQ(test::make_space(test::uniform_forest(1), 2)->n_dofs(), 53U);
    EXPECT_EQ(test::make_space(test::uniform_forest(2), 1)->n_dofs(), 53U);
    EXPECT_EQ(test::make_space(test::uniform_forest(1), 1, 1.0, false)->n_dofs(), 18U);
    // Two hanging vertices on the corner-refined mesh.
    const auto hanging = test::make_space(test::corner_refined_forest(), 1);
    EXPECT_EQ(hanging->n_nodes(), 14U);
    EXPECT_EQ(hanging->n_free_nodes(), 12U);
    EXPECT_EQ(hanging->constraints().size(), 2U);
}

TEST(FeSpaceTest, BuildRejectsBadArguments) {
    EXPECT_THROW(test::make_space(test::uniform_forest(1), 3), ConfigError);
    EXPECT_THROW(test::make_space(test::uniform_forest(1), 1, 0.0, false), ConfigError);
    MaterialParams bad;
    bad.nu = 0.5;
    EXPECT_THROW(FeSpace::build(test::uniform_forest(1), 1, bad, true), ConfigError);
}

TEST(FeSpaceTest, HangingWeightsAreHalves) {
    const auto space = test::make_space(test::corner_refined_forest(), 1);
    for (const auto& [node, masters] : space->constraints().all()) {
        ASSERT_EQ(masters.size(), 2U);
        EXPECT_DOUBLE_EQ(masters[0].weight, 0.5);
        EXPECT_DOUBLE_EQ(masters[1].weight, 0.5);
        const Vec2 mid = 0.5 * (space->node_position(masters[0].node) + space->node_position(masters[1].node));
        EXPECT_EQ(mid, space->node_position(node));
    }
}

TEST(ShapeFunctions, LagrangeNodalAndPartitionOfUnity) {
    for (int k = 1; k <= 2; ++k) {
        for (int a = 0; a <= k; ++a) {
            const std::vector<double> l = lagrange_1d(k, static_cast<double>(a) / k);
            for (int b = 0; b <= k; ++b) {
                EXPECT_NEAR(l[static_cast<std::size_t>(b)], a == b ? 1.0 : 0.0, 1e-15);
            }
        }
        std::mt19937 rng(3);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (int n = 0; n < 20; ++n) {
            const ShapeValues s = shape_values(k, {u(rng), u(rng)}, {0.5, 0.25}, true);
            double sum = 0.0, sx = 0.0, sy = 0.0, sxy = 0.0;
            for (std::size_t i = 0; i < s.size; ++i) {
                sum += s.N[i];
                sx += s.dx[i];
                sy += s.dy[i];
                sxy += s.dxy[i];
            }
            EXPECT_NEAR(sum, 1.0, 1e-14);
            EXPECT_NEAR(sx, 0.0, 1e-12);
            EXPECT_NEAR(sy, 0.0, 1e-12);
            EXPECT_NEAR(sxy, 0.0, 1e-11);
        }
    }
}

TEST(OracleEquivalence, UnitCellElementStiffness) {
    // lambda = mu = 1.
    MaterialParams p;
    p.E = 2.5;
    p.nu = 0.25;
    p.kappa = 1.0;
    ASSERT_NEAR(p.lambda(), 1.0, 1e-15);
    ASSERT_NEAR(p.mu(), 1.0, 1e-15);
    const auto forest = test::uniform_forest(0);
    const auto space = FeSpace::build(forest, 1, p, false);
    const DenseOracle ref(*forest, 1, p, false);
    const auto perm = oracle::match_free_nodes(*space, ref);
    const Eigen::MatrixXd A(assemble_elasticity(*space));
    ASSERT_EQ(A.rows(), 8);
    EXPECT_LE(max_abs_diff(A, oracle::to_library_order(ref.elasticity(), perm)), 1e-12);
    // Hand value: K_00 = (lambda + 2 mu)/3 + mu/3 = 4/3 for the unit square.
    EXPECT_NEAR(A(0, 0), 4.0 / 3.0, 1e-14);
}

TEST(OracleEquivalence, MatricesMatchDenseAssembly) {
    for (const auto& c : oracle_cases()) {
        SCOPED_TRACE(c.name);
        MaterialParams p = test::unit_params(c.kappa);
        p.dt = 0.3;
        const auto space = FeSpace::build(c.forest, c.degree, p, c.rm);
        const DenseOracle ref(*c.forest, c.degree, p, c.rm);
        const auto perm = oracle::match_free_nodes(*space, ref);
        const auto nd = static_cast<Eigen::Index>(space->n_displacement_dofs());

        const Eigen::MatrixXd M(assemble_mass(*space));
        const Eigen::MatrixXd L(assemble_vector_laplacian(*space));
        const Eigen::MatrixXd A(assemble_elasticity(*space));
        const Eigen::MatrixXd Mb(assemble_boundary_mass(*space));
        EXPECT_LE(max_abs_diff(M.topLeftCorner(nd, nd), oracle::to_library_order(ref.mass(), perm)), 1e-12);
        EXPECT_LE(max_abs_diff(L.topLeftCorner(nd, nd), oracle::to_library_order(ref.laplacian(), perm)), 1e-12);
        EXPECT_LE(max_abs_diff(A.topLeftCorner(nd, nd), oracle::to_library_order(ref.elasticity(), perm)), 1e-12);
        EXPECT_LE(max_abs_diff(Mb.topLeftCorner(nd, nd), oracle::to_library_order(ref.boundary_mass(), perm)),
                  1e-12);
        EXPECT_LE(max_abs_diff(rigid_body_block(*space), oracle::to_library_order(ref.rigid_block(), perm)), 1e-12);

        AssembledSystem sys = assemble_operator(space, ProximalKind::Identity);
        EXPECT_LE(max_abs_diff(Eigen::MatrixXd(sys.matrix()), oracle::to_library_order(ref.system_matrix(), perm)),
                  1e-12);
        EXPECT_LE(max_abs_diff(Eigen::MatrixXd(sys.stationary_operator()),
                               oracle::to_library_order(ref.stationary(), perm)),
                  1e-12);
    }
}

TEST(OracleEquivalence, StationarityResidualMatchesDenseAssembly) {
    const AnalyticField T = AnalyticField::squared_distance({0.8, 0.8});
    const AnalyticField R = AnalyticField::squared_distance({0.2, 0.2});
    for (const auto& c : oracle_cases()) {
        SCOPED_TRACE(c.name);
        MaterialParams p = test::unit_params(c.kappa);
        p.alpha = 3.0;
        const auto space = FeSpace::build(c.forest, c.degree, p, c.rm);
        const DenseOracle ref(*c.forest, c.degree, p, c.rm);
        const auto perm = oracle::match_free_nodes(*space, ref);
        AssembledSystem sys = assemble_operator(space, ProximalKind::Identity);
        for (unsigned seed : {1U, 2U, 3U}) {
            const FeFunction u = random_function(space, seed, 0.05);
            const Vector r = stationarity_residual(sys, u, T, R, 6);
            const Eigen::VectorXd r_ref = ref.residual(oracle::to_oracle_order(u.coefficients(), perm), T, R, 6);
            EXPECT_LE((r - oracle::to_library_order(r_ref, perm)).cwiseAbs().maxCoeff(), 1e-12);
        }
    }
}

TEST(Assembly, MatricesAreSymmetric) {
    const auto space = test::make_space(test::corner_refined_forest(), 2, 0.5);
    AssembledSystem sys = assemble_operator(space, ProximalKind::H1);
    const Eigen::MatrixXd A(sys.matrix());
    EXPECT_LE((A - A.transpose()).cwiseAbs().maxCoeff(), 1e-12 * A.cwiseAbs().maxCoeff());
}

TEST(Assembly, RobinSystemIsPositiveDefinite) {
    QuadForest f = QuadForest(Rect{}).uniform_refine(2);
    const MortonKey k = f.leaf(6);
    const auto forest = std::make_shared<const QuadForest>(f.adapt(std::span(&k, 1), {}).forest);
    const auto space = test::make_space(forest, 1, 0.5, false);
    ASSERT_LE(space->n_dofs(), 200U);
    const Eigen::MatrixXd A(assemble_operator(space, ProximalKind::Identity).stationary_operator());
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(A);
    EXPECT_GT(eig.eigenvalues().minCoeff(), 0.0);
}

TEST(Assembly, ElasticityAnnihilatesRigidModes) {
    const auto space = test::make_space(test::corner_refined_forest(), 2);
    const SparseMatrix A = assemble_elasticity(*space);
    const double a_norm = Eigen::MatrixXd(A).norm();
    const std::array<std::function<Vec2(const Vec2&)>, 3> modes{
        [](const Vec2&) { return Vec2{1.0, 0.0}; },
        [](const Vec2&) { return Vec2{0.0, 1.0}; },
        [](const Vec2& x) { return Vec2{-x[1], x[0]}; },
    };
    for (const auto& mode : modes) {
        const FeFunction r = FeFunction::interpolate(space, mode);
        EXPECT_LE((A * r.coefficients()).norm(), 1e-10 * a_norm * r.coefficients().norm());
    }
}

TEST(RigidBlock, MomentsOfSimpleFields) {
    const auto space = test::make_space(test::corner_refined_forest(), 1);
    const Eigen::MatrixXd B = rigid_body_block(*space);
    const FeFunction e1 = FeFunction::interpolate(space, [](const Vec2&) { return Vec2{1.0, 0.0}; });
    const Eigen::Vector3d c = B.transpose() * e1.displacement();
    EXPECT_NEAR(c(0), 1.0, 1e-14);
    EXPECT_NEAR(c(1), 0.0, 1e-14);
    EXPECT_NEAR(c(2), -0.5, 1e-14);
    const FeFunction r3 = FeFunction::interpolate(space, [](const Vec2& x) { return Vec2{-x[1], x[0]}; });
    EXPECT_NEAR(B.col(2).dot(r3.displacement()), 2.0 / 3.0, 1e-14);
}

TEST(RigidBlock, PureTractionSolutionIsOrthogonal) {
    const auto space = test::make_space(test::corner_refined_forest(), 2, 0.0);
    AssembledSystem sys = assemble_operator(space, ProximalKind::Identity);
    std::mt19937 rng(9);
    std::normal_distribution<double> n(0.0, 1.0);
    Vector rhs = Vector::Zero(static_cast<Eigen::Index>(space->n_dofs()));
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(space->n_displacement_dofs()); ++i) {
        rhs(i) = n(rng);
    }
    const Vector u = sys.solve(rhs);
    const Eigen::MatrixXd B = rigid_body_block(*space);
    const auto nd = static_cast<Eigen::Index>(space->n_displacement_dofs());
    const Eigen::Vector3d c = B.transpose() * u.head(nd);
    EXPECT_LE(c.cwiseAbs().maxCoeff(), 1e-10 * u.head(nd).norm());
    // Galerkin residual of the linear solve.
    const Vector res = sys.matrix() * u - rhs;
    EXPECT_LE(res.cwiseAbs().maxCoeff(), 1e-10 * rhs.norm());
}

TEST(Factorization, ComputedOncePerSystem) {
    const auto space = test::make_space(test::uniform_forest(2), 1, 0.5);
    AssembledSystem sys = assemble_operator(space, ProximalKind::Identity);
    EXPECT_FALSE(sys.factorized());
    Vector rhs = Vector::Ones(static_cast<Eigen::Index>(space->n_dofs()));
    for (int i = 0; i < 5; ++i) {
        (void)sys.solve(rhs);
    }
    EXPECT_EQ(sys.factorization_count(), 1);
}

TEST(Load, IdenticalImagesAndHugeTimestepGiveZero) {
    MaterialParams p = test::unit_params(0.5);
    p.dt = 1e300;
    const auto space = FeSpace::build(test::uniform_forest(2), 1, p, true);
    AssembledSystem sys = assemble_operator(space, ProximalKind::Identity);
    const AnalyticField T = AnalyticField::squared_distance({0.3, 0.6});
    const Vector b = assemble_load(sys, FeFunction(space), T, T, 6);
    EXPECT_EQ(b.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Load, ZeroPreviousIterateLeavesImageTermOnly) {
    const auto space = test::make_space(test::uniform_forest(2), 2, 0.5);
    AssembledSystem sys = assemble_operator(space, ProximalKind::H1);
    const AnalyticField T = AnalyticField::squared_distance({0.8, 0.8});
    const AnalyticField R = AnalyticField::squared_distance({0.2, 0.2});
    const FeFunction zero(space);
    const Vector b = assemble_load(sys, zero, T, R, 6);
    const Vector img = assemble_image_load(zero, T, R, 6);
    EXPECT_LE((b - img).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_GT(img.norm(), 0.0);
}

TEST(Load, ForeignPreviousIterateThrows) {
    const auto a = test::make_space(test::uniform_forest(1), 1);
    const auto b = test::make_space(test::uniform_forest(2), 1);
    AssembledSystem sys = assemble_operator(a, ProximalKind::Identity);
    const AnalyticField T = AnalyticField::squared_distance({0.8, 0.8});
    EXPECT_THROW(assemble_load(sys, FeFunction(b), T, T, 6), SolverError);
}

TEST(NormsTest, ZeroRotationAndStretch) {
    const auto space = test::make_space(test::corner_refined_forest(), 1);
    const Norms z = norms(FeFunction(space));
    EXPECT_EQ(z.l2, 0.0);
    EXPECT_EQ(z.h1, 0.0);
    EXPECT_EQ(z.energy, 0.0);
    const Norms rot = norms(FeFunction::interpolate(space, [](const Vec2& x) { return Vec2{-x[1], x[0]}; }));
    EXPECT_NEAR(rot.energy, 0.0, 1e-14);
    EXPECT_GT(rot.h1, 0.0);
    const Norms stretch = norms(FeFunction::interpolate(space, [](const Vec2& x) { return Vec2{x[0], 0.0}; }));
    EXPECT_NEAR(stretch.energy, 1.0, 1e-14);
}

TEST(Continuity, TwoSidedValuesAgreeOnNonconformingFacets) {
    std::mt19937 rng(17);
    QuadForest f = QuadForest(Rect{{0.0, 0.0}, {1.0, 0.8}}).uniform_refine(2);
    for (int round = 0; round < 3; ++round) {
        std::vector<MortonKey> refine;
        for (const auto& k : f.leaves()) {
            if (rng() % 4 == 0) {
                refine.push_back(k);
            }
        }
        f = f.adapt(refine, {}).forest;
    }
    const auto forest = std::make_shared<const QuadForest>(f);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (int degree = 1; degree <= 2; ++degree) {
        const auto space = test::make_space(forest, degree);
        const FeFunction u = random_function(space, 23 + static_cast<unsigned>(degree));
        std::vector<Facet> nc;
        for (auto& e : forest->facets()) {
            if (e.kind == FacetKind::Nonconforming) {
                nc.push_back(e);
            }
        }
        ASSERT_FALSE(nc.empty());
        for (int n = 0; n < 1000; ++n) {
            const Facet& e = nc[rng() % nc.size()];
            const SubFacet& s = e.subfacets[rng() % e.subfacets.size()];
            const double t = s.t0 + (s.t1 - s.t0) * u01(rng);
            const CellGeometry gc = forest->cell_geometry(e.owner);
            const CellGeometry gf = forest->cell_geometry(s.cell);
            Vec2 x{};
            const bool vertical = e.owner_side == Side::Left || e.owner_side == Side::Right;
            if (vertical) {
                x = {e.owner_side == Side::Right ? gc.hi[0] : gc.lo[0], gc.lo[1] + t * (gc.hi[1] - gc.lo[1])};
            } else {
                x = {gc.lo[0] + t * (gc.hi[0] - gc.lo[0]), e.owner_side == Side::Top ? gc.hi[1] : gc.lo[1]};
            }
            const Vec2 rc{(x[0] - gc.lo[0]) / gc.jacobian[0], (x[1] - gc.lo[1]) / gc.jacobian[1]};
            const Vec2 rf{(x[0] - gf.lo[0]) / gf.jacobian[0], (x[1] - gf.lo[1]) / gf.jacobian[1]};
            const Vec2 a = u.value_in_cell(e.owner, rc);
            const Vec2 b = u.value_in_cell(s.cell, rf);
            ASSERT_NEAR(a[0], b[0], 1e-12);
            ASSERT_NEAR(a[1], b[1], 1e-12);
        }
    }
}

double l2_distance(const FeFunction& a, const FeFunction& b) {
    // Integrates over the finer of the two meshes with a 6-point rule per axis.
    const FeFunction& fine = a.space().forest().size() >= b.space().forest().size() ? a : b;
    const FeFunction& other = &fine == &a ? b : a;
    const GaussRule& rule = gauss_legendre(6);
    double sum = 0.0;
    for (std::size_t c = 0; c < fine.space().forest().size(); ++c) {
        const CellGeometry g = fine.space().forest().cell_geometry(c);
        for (std::size_t i = 0; i < rule.size(); ++i) {
            for (std::size_t j = 0; j < rule.size(); ++j) {
                const Vec2 ref{rule.points[i], rule.points[j]};
                const Vec2 x = g.map(ref);
                const Vec2 d = fine.value_in_cell(c, ref) - other.value(x);
                sum += rule.weights[i] * rule.weights[j] * g.area() * dot(d, d);
            }
        }
    }
    return std::sqrt(sum);
}

TEST(Transfer, RefinementIsExact) {
    const auto coarse = test::corner_refined_forest();
    const auto space = test::make_space(coarse, 2);
    const FeFunction u = random_function(space, 31);
    std::vector<MortonKey> all(coarse->leaves().begin(), coarse->leaves().end());
    const auto fine = std::make_shared<const QuadForest>(coarse->adapt({all.data(), 3}, {}).forest);
    const FeFunction v = transfer(u, test::make_space(fine, 2));
    EXPECT_LE(l2_distance(u, v), 1e-12);
    EXPECT_EQ(v.coefficients().tail(3), u.coefficients().tail(3));
}

TEST(Transfer, CoarseningReproducesLinears) {
    const auto fine = test::uniform_forest(3);
    std::vector<MortonKey> first_group(fine->leaves().begin(), fine->leaves().begin() + 4);
    const auto coarse = std::make_shared<const QuadForest>(fine->adapt({}, first_group).forest);
    ASSERT_EQ(coarse->size(), fine->size() - 3);
    const auto lin = [](const Vec2& x) { return Vec2{0.3 + 2.0 * x[0] - x[1], -0.5 * x[0] + 0.25 * x[1]}; };
    const FeFunction u = FeFunction::interpolate(test::make_space(fine, 1), lin);
    const FeFunction v = transfer(u, test::make_space(coarse, 1));
    EXPECT_LE(l2_distance(u, v), 1e-13);
}

TEST(Transfer, CoarseningQuadraticMatchesInterpolationError) {
    const auto fine = test::uniform_forest(2);
    std::vector<MortonKey> group(fine->leaves().begin(), fine->leaves().begin() + 4);
    const auto coarse = std::make_shared<const QuadForest>(fine->adapt({}, group).forest);
    const auto q = [](const Vec2& x) { return Vec2{x[0] * x[0], x[0] * x[1]}; };
    const FeFunction u_fine = FeFunction::interpolate(test::make_space(fine, 1), q);
    const auto coarse_space = test::make_space(coarse, 1);
    const FeFunction v = transfer(u_fine, coarse_space);
    const FeFunction direct = FeFunction::interpolate(coarse_space, q);
    const double expect = l2_distance(direct, u_fine);
    EXPECT_GT(expect, 0.0);
    EXPECT_NEAR(l2_distance(v, u_fine), expect, 1e-14);
}

TEST(MatrixMarket, WritesHeaderAndEntries) {
    const auto dir = test::scratch_dir("mm");
    const auto space = test::make_space(test::uniform_forest(0), 1, 1.0, false);
    const SparseMatrix M = assemble_mass(*space);
    write_matrix_market(M, dir / "m.mtx");
    std::ifstream in(dir / "m.mtx");
    std::string banner, object, format, field;
    in >> banner >> object >> format >> field;
    EXPECT_EQ(banner, "%%MatrixMarket");
    EXPECT_EQ(format, "coordinate");
    EXPECT_EQ(field, "real");
    std::string rest;
    std::getline(in, rest);
    std::size_t rows = 0, cols = 0, nnz = 0;
    in >> rows >> cols >> nnz;
    EXPECT_EQ(rows, 8U);
    EXPECT_EQ(nnz, static_cast<std::size_t>(M.nonZeros()));
}

} // namespace
} // namespace elasreg
