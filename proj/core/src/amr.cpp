// SPDX-License-Identifier: Apache-2.0

#include "elasreg/amr.hpp"

#include "elasreg/errors.hpp"
#include "elasreg/quadrature.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <string>

namespace elasreg {

void AmrConfig::validate() const {
    if (n0_ref < 0 || n_ref < 0) {
        throw ConfigError("refinement counts must be non-negative");
    }
    if (!(theta_refine >= 0.0 && theta_refine <= 1.0 && theta_coarsen >= 0.0 && theta_coarsen <= 1.0) ||
        theta_refine + theta_coarsen > 1.0) {
        throw ConfigError("invalid marking fractions");
    }
    if (theta_coarsen > 0.0 && n0_ref < 1) {
        throw ConfigError("coarsening needs at least one initial refinement");
    }
    if (degree != 1 && degree != 2) {
        throw ConfigError("degree must be 1 or 2");
    }
    if (estimator_order < 0) {
        throw ConfigError("estimator_order must be non-negative");
    }
    params.validate();
    solver.validate();
    if (adaptive_solver) {
        adaptive_solver->validate();
    }
}

const SolverConfig& AmrConfig::solver_for(int level) const {
    return (level > 0 && adaptive_solver) ? *adaptive_solver : solver;
}

MeshCheck check_mesh(const FeFunction& u) {
    const QuadForest& forest = u.space().forest();
    MeshCheck out;
    out.balanced = forest.is_balanced();
    out.tiled = forest.tiles_domain();
    if (!out.balanced) {
        return out;
    }
    const GaussRule& rule = gauss_for_order(2 * u.space().degree() + 1);
    auto side_point = [](Side s, double t) -> Vec2 {
        switch (s) {
        case Side::Left: return {0.0, t};
        case Side::Right: return {1.0, t};
        case Side::Bottom: return {t, 0.0};
        case Side::Top: return {t, 1.0};
        }
        return {t, t};
    };
    for (const Facet& f : forest.facets()) {
        if (f.kind != FacetKind::Nonconforming) {
            continue;
        }
        const Side other = opposite(f.owner_side);
        for (const SubFacet& sf : f.subfacets) {
            for (double t : rule.points) {
                const double tc = sf.t0 + (sf.t1 - sf.t0) * t;
                const Vec2 d = u.value_in_cell(f.owner, side_point(f.owner_side, tc)) -
                               u.value_in_cell(sf.cell, side_point(other, t));
                out.continuity = std::max(out.continuity, norm(d));
            }
        }
    }
    return out;
}

namespace {

void write_level_vtk(const std::filesystem::path& dir, int level, const FeFunction& u, const CellIndicators& ind) {
    const QuadForest& forest = u.space().forest();
    std::vector<double> theta(forest.size());
    std::vector<double> ux(forest.size());
    std::vector<double> uy(forest.size());
    for (std::size_t c = 0; c < forest.size(); ++c) {
        theta[c] = std::sqrt(ind.cell(c));
        const Vec2 v = u.value_in_cell(c, {0.5, 0.5});
        ux[c] = v[0];
        uy[c] = v[1];
    }
    const std::pair<std::string, std::span<const double>> fields[] = {
        {"theta", theta}, {"ux", ux}, {"uy", uy}};
    std::filesystem::create_directories(dir);
    forest.write_vtk(dir / ("level_" + std::to_string(level) + ".vtk"), fields);
}

} // namespace

AmrResult run_amr(const AmrConfig& config, const ScalarField& T, const ScalarField& R, const ExtraForcing* extra) {
    config.validate();
    using Clock = std::chrono::steady_clock;
    const bool rm = config.rm_mode || config.params.kappa == 0.0;

    auto forest = std::make_shared<const QuadForest>(QuadForest(config.domain).uniform_refine(config.n0_ref));
    std::vector<LevelStats> levels;
    std::vector<IterationLog> logs;
    std::vector<MeshCheck> checks;
    std::optional<FeFunction> u;

    for (int level = 0; level <= config.n_ref; ++level) {
        const auto start = Clock::now();
        const SolverConfig& sc = config.solver_for(level);
        auto space = FeSpace::build(forest, config.degree, config.params, rm);
        FeFunction u0 = u ? transfer(*u, space) : FeFunction(space);
        if (config.check_invariants) {
            const MeshCheck mc = check_mesh(u0);
            checks.push_back(mc);
            if (!mc.ok()) {
                throw MeshError("level " + std::to_string(level) + ": mesh invariant violated (balanced=" +
                                std::to_string(mc.balanced) + ", tiled=" + std::to_string(mc.tiled) +
                                ", continuity=" + std::to_string(mc.continuity) + ")");
            }
        }
        AssembledSystem system = assemble_operator(space, sc.proximal);
        SolveResult sr = [&] {
            try {
                return solve_stationary(system, u0, T, R, sc, extra);
            } catch (const DivergenceError& e) {
                throw DivergenceError("level " + std::to_string(level) + ": " + e.what(), e.log());
            } catch (const SolverError& e) {
                throw SolverError("level " + std::to_string(level) + ": " + e.what());
            }
        }();

        EstimatorOptions eo;
        eo.volume_order = config.estimator_order > 0 ? config.estimator_order : sc.q_img;
        eo.facet_order = 2 * config.degree + 2;
        eo.manufactured = extra;
        const CellIndicators ind = compute_indicators(sr.u, T, R, eo);

        LevelStats st;
        st.level = level;
        st.dofs = space->n_dofs();
        st.cells = forest->size();
        st.iterations = sr.iterations;
        st.converged = sr.converged;
        st.theta = ind.theta();
        st.similarity = similarity(T, R, sr.u, sc.q_img);

        if (!config.vtk_dir.empty()) {
            write_level_vtk(config.vtk_dir, level, sr.u, ind);
        }
        if (config.on_level) {
            config.on_level(LevelView{level, sr.u, ind, sr});
        }

        if (level < config.n_ref) {
            const std::vector<double> totals = ind.cell_totals();
            const MarkSets marks = mark_fraction(totals, config.theta_refine, config.theta_coarsen);
            st.refined = marks.refine.size();
            st.coarsened = marks.coarsen.size();
            std::vector<MortonKey> rk;
            std::vector<MortonKey> ck;
            for (std::size_t c : marks.refine) {
                rk.push_back(forest->leaf(c));
            }
            for (std::size_t c : marks.coarsen) {
                ck.push_back(forest->leaf(c));
            }
            forest = std::make_shared<const QuadForest>(forest->adapt(rk, ck).forest);
        }
        st.seconds = std::chrono::duration<double>(Clock::now() - start).count();
        levels.push_back(st);
        logs.push_back(std::move(sr.log));
        u.emplace(std::move(sr.u));
    }
    return AmrResult{std::move(*u), std::move(levels), std::move(logs), std::move(checks)};
}

void write_level_csv(const std::vector<LevelStats>& levels, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out.precision(10);
    out << "level,dofs,iterations,theta,similarity,seconds\n";
    for (const LevelStats& s : levels) {
        out << s.level << ',' << s.dofs << ',' << s.iterations << ',' << s.theta << ',' << s.similarity << ','
            << s.seconds << '\n';
    }
}

void write_marking_csv(const std::vector<LevelStats>& levels, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out.precision(10);
    out << "level,n_cells,theta,refined,coarsened\n";
    for (const LevelStats& s : levels) {
        out << s.level << ',' << s.cells << ',' << s.theta << ',' << s.refined << ',' << s.coarsened << '\n';
    }
}

RasterImage warp_image(const ScalarField& T, const FeFunction& u, int width, int height, const Rect& domain) {
    RasterImage out(width, height, 0.0);
    const double dx = domain.width() / width;
    const double dy = domain.height() / height;
    for (int j = 0; j < height; ++j) {
        for (int i = 0; i < width; ++i) {
            const Vec2 x{domain.lo[0] + (i + 0.5) * dx, domain.lo[1] + (j + 0.5) * dy};
            out(i, j) = std::clamp(T.value(x + u.value(x)), 0.0, 1.0);
        }
    }
    return out;
}

} // namespace elasreg
