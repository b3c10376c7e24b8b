// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "elasreg/errors.hpp"
#include "elasreg/fespace.hpp"

#include <deque>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace elasreg {

class ScalarField;

enum class StopMode {
    StationaryResidual, ///< ||r(u_k)|| / ||r(0)|| < tol
    Velocity,           ///< ||u_k - u_{k-1}|| / (dt ||u_{k-1}|| + eps) < tol
};

/// Pseudo-time iteration settings. The timestep itself lives in MaterialParams.
struct SolverConfig {
    double tol = 1e-8;
    int max_iter = 1000;
    StopMode stop_mode = StopMode::StationaryResidual;
    int aa_depth = 0;
    ProximalKind proximal = ProximalKind::Identity;
    int q_img = 6;
    double cond_limit = 1e10;
    /// Relative residual above which the iteration is declared divergent.
    double divergence_limit = 1e8;
    bool track_similarity = true;

    /// Throws ConfigError.
    void validate() const;
};

/// Windowed Anderson acceleration of a fixed-point map g.
///
/// Holds the last m + 1 evaluations g(x_l) and residuals f_l = g(x_l) - x_l.
/// The sum-to-one least-squares problem is solved in difference form with a
/// column-pivoted QR; when the estimated condition number of the difference
/// matrix exceeds the limit, the plain update g(x_k) is returned and the
/// oldest column dropped.
class AndersonWindow {
public:
    explicit AndersonWindow(int depth, double cond_limit = 1e10);

    /// Pushes (x_k, g(x_k)) and returns x_{k+1}.
    Vector update(const Vector& x, const Vector& gx);
    void clear();

    int depth() const { return depth_; }
    std::size_t size() const { return g_.size(); }
    bool last_accelerated() const { return last_accelerated_; }
    /// Mixing weights of the last update, oldest first.
    const std::vector<double>& last_weights() const { return weights_; }

private:
    int depth_;
    double cond_limit_;
    std::deque<Vector> g_;
    std::deque<Vector> f_;
    bool last_accelerated_ = false;
    std::vector<double> weights_;
};

struct IterationRecord {
    int iter;
    double residual;   ///< relative stationary residual
    double velocity;   ///< ||u_k - u_{k-1}|| / (dt ||u_{k-1}|| + eps)
    double similarity; ///< NaN when not tracked
    bool aa_used;
    double seconds;    ///< cumulative wall time
};

struct IterationLog {
    std::vector<IterationRecord> records;

    /// CSV with header `iter,residual,velocity,similarity,aa_used,seconds`.
    void write_csv(const std::filesystem::path& path) const;
};

/// g(u_k): one IMEX step with the cached factorisation of `system`.
/// Throws SolverError when u_k is not on the system's space.
FeFunction imex_step(AssembledSystem& system, const FeFunction& u_k, const ScalarField& T, const ScalarField& R,
                     int q_img, const ExtraForcing* extra = nullptr);

/// r = alpha F_u(phi) + extras - a(u, phi) on every unknown, including the
/// rigid-mode rows when present.
Vector stationarity_residual(const AssembledSystem& system, const FeFunction& u, const ScalarField& T,
                             const ScalarField& R, int q_img, const ExtraForcing* extra = nullptr);

/// Non-finite or runaway iterate; carries the log up to the failure.
class DivergenceError : public SolverError {
public:
    DivergenceError(const std::string& what, IterationLog log) : SolverError(what), log_(std::move(log)) {}
    const IterationLog& log() const { return log_; }

private:
    IterationLog log_;
};

struct SolveResult {
    FeFunction u;
    IterationLog log;
    bool converged = false;
    int iterations = 0;
};

/// Iterates u_{k+1} = AA_m(g(u_k)) from `u0` until the stopping rule holds or
/// max_iter is reached (not an error; see `converged`). At least one step is
/// always taken. Throws DivergenceError with the iteration index on
/// non-finite iterates or when the relative residual exceeds divergence_limit.
SolveResult solve_stationary(AssembledSystem& system, const FeFunction& u0, const ScalarField& T,
                             const ScalarField& R, const SolverConfig& config, const ExtraForcing* extra = nullptr);

} // namespace elasreg
