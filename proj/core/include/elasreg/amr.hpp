// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "elasreg/estimator.hpp"
#include "elasreg/fespace.hpp"
#include "elasreg/image.hpp"
#include "elasreg/mesh.hpp"
#include "elasreg/regsolver.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

namespace elasreg {

struct LevelStats {
    int level = 0;
    std::size_t dofs = 0;
    std::size_t cells = 0;
    int iterations = 0;
    bool converged = false;
    double theta = 0.0;
    double similarity = 0.0;
    double seconds = 0.0;
    std::size_t refined = 0;   ///< cells marked for refinement after this level
    std::size_t coarsened = 0; ///< cells marked for coarsening after this level
};

struct MeshCheck {
    bool balanced = false;
    bool tiled = false;
    double continuity = 0.0; ///< largest two-sided jump of u across nonconforming facets
    bool ok(double tol = 1e-10) const { return balanced && tiled && continuity <= tol; }
};

/// Per-level hook: the converged solution, its indicators and the solve record.
struct LevelView {
    int level;
    const FeFunction& u;
    const CellIndicators& indicators;
    const SolveResult& solve;
};

struct AmrConfig {
    int n0_ref = 4;
    int n_ref = 5;
    double theta_refine = 0.4;
    double theta_coarsen = 0.2;
    SolverConfig solver;
    /// Settings for the levels after the first; defaults to `solver`.
    std::optional<SolverConfig> adaptive_solver;
    MaterialParams params;
    int degree = 1;
    /// Rigid-mode multiplier; forced on when kappa == 0.
    bool rm_mode = false;
    Rect domain{{0.0, 0.0}, {1.0, 1.0}};
    /// Volume quadrature of the estimator; 0 uses the solver's q_img.
    int estimator_order = 0;
    bool check_invariants = true;
    /// Per-level VTK output when non-empty.
    std::filesystem::path vtk_dir;
    std::function<void(const LevelView&)> on_level;

    /// Throws ConfigError.
    void validate() const;
    const SolverConfig& solver_for(int level) const;
};

struct AmrResult {
    FeFunction u;
    std::vector<LevelStats> levels;
    std::vector<IterationLog> logs;
    std::vector<MeshCheck> checks; ///< one per mesh, taken after transfer
};

/// Checks 2:1 balance, tiling and continuity of `u` on its mesh.
MeshCheck check_mesh(const FeFunction& u);

/// Uniform start, then per level: transfer, solve, estimate, mark, adapt.
/// The Anderson window starts empty on every mesh. Solver exceptions are
/// rethrown with the level index; a failed mesh check throws MeshError.
AmrResult run_amr(const AmrConfig& config, const ScalarField& T, const ScalarField& R,
                  const ExtraForcing* extra = nullptr);

/// CSV `level,dofs,iterations,theta,similarity,seconds`.
void write_level_csv(const std::vector<LevelStats>& levels, const std::filesystem::path& path);
/// CSV `level,n_cells,theta,refined,coarsened`.
void write_marking_csv(const std::vector<LevelStats>& levels, const std::filesystem::path& path);

/// T(x + u(x)) at every pixel center of a width x height raster over `domain`,
/// clamped to [0, 1].
RasterImage warp_image(const ScalarField& T, const FeFunction& u, int width, int height, const Rect& domain);

} // namespace elasreg
