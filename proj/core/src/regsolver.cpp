// SPDX-License-Identifier: Apache-2.0

#include "elasreg/regsolver.hpp"

#include "elasreg/errors.hpp"
#include "elasreg/image.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

namespace elasreg {

void SolverConfig::validate() const {
    if (!(tol > 0.0)) {
        throw ConfigError("solver tolerance must be positive");
    }
    if (max_iter < 1) {
        throw ConfigError("max_iter must be at least 1");
    }
    if (aa_depth < 0) {
        throw ConfigError("Anderson depth must be non-negative");
    }
    if (q_img < 1) {
        throw ConfigError("image quadrature order must be at least 1");
    }
    if (!(cond_limit > 1.0)) {
        throw ConfigError("cond_limit must exceed 1");
    }
    if (!(divergence_limit > 1.0)) {
        throw ConfigError("divergence_limit must exceed 1");
    }
}

AndersonWindow::AndersonWindow(int depth, double cond_limit) : depth_(depth), cond_limit_(cond_limit) {
    if (depth < 0) {
        throw ConfigError("Anderson depth must be non-negative");
    }
}

void AndersonWindow::clear() {
    g_.clear();
    f_.clear();
    weights_.clear();
    last_accelerated_ = false;
}

Vector AndersonWindow::update(const Vector& x, const Vector& gx) {
    if (!g_.empty() && g_.back().size() != gx.size()) {
        clear();
    }
    last_accelerated_ = false;
    weights_.assign(1, 1.0);
    if (depth_ == 0) {
        return gx;
    }
    g_.push_back(gx);
    f_.push_back(gx - x);
    while (g_.size() > static_cast<std::size_t>(depth_) + 1) {
        g_.pop_front();
        f_.pop_front();
    }
    const auto cols = static_cast<Eigen::Index>(g_.size()) - 1;
    if (cols == 0) {
        return gx;
    }
    const Eigen::Index n = gx.size();
    Eigen::MatrixXd dF(n, cols);
    Eigen::MatrixXd dG(n, cols);
    for (Eigen::Index i = 0; i < cols; ++i) {
        dF.col(i) = f_[i + 1] - f_[i];
        dG.col(i) = g_[i + 1] - g_[i];
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(dF);
    const auto& R = qr.matrixR();
    const double rmax = std::abs(R(0, 0));
    const double rmin = std::abs(R(cols - 1, cols - 1));
    if (rmax == 0.0 || !(rmax <= cond_limit_ * rmin)) {
        g_.pop_front();
        f_.pop_front();
        return gx;
    }
    const Eigen::VectorXd gamma = qr.solve(f_.back());
    // alpha_0 = gamma_0, alpha_i = gamma_i - gamma_{i-1}, alpha_last = 1 - gamma_last
    weights_.assign(static_cast<std::size_t>(cols) + 1, 0.0);
    weights_[0] = gamma(0);
    for (Eigen::Index i = 1; i < cols; ++i) {
        weights_[i] = gamma(i) - gamma(i - 1);
    }
    weights_[cols] = 1.0 - gamma(cols - 1);
    last_accelerated_ = true;
    return gx - dG * gamma;
}

void IterationLog::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out.precision(10);
    out << "iter,residual,velocity,similarity,aa_used,seconds\n";
    for (const auto& r : records) {
        out << r.iter << ',' << r.residual << ',' << r.velocity << ',' << r.similarity << ',' << (r.aa_used ? 1 : 0)
            << ',' << r.seconds << '\n';
    }
}

FeFunction imex_step(AssembledSystem& system, const FeFunction& u_k, const ScalarField& T, const ScalarField& R,
                     int q_img, const ExtraForcing* extra) {
    if (u_k.space().id() != system.space().id()) {
        throw SolverError("imex_step: factorisation is stale for this iterate's space");
    }
    const Vector rhs = assemble_load(system, u_k, T, R, q_img, extra);
    return FeFunction(system.space_ptr(), system.solve(rhs));
}

Vector stationarity_residual(const AssembledSystem& system, const FeFunction& u, const ScalarField& T,
                             const ScalarField& R, int q_img, const ExtraForcing* extra) {
    if (u.space().id() != system.space().id()) {
        throw SolverError("stationarity_residual: iterate and system live on different spaces");
    }
    Vector r = assemble_image_load(u, T, R, q_img);
    if (extra) {
        r += system.extra_load(*extra);
    }
    r -= system.stationary_operator() * u.coefficients();
    return r;
}

SolveResult solve_stationary(AssembledSystem& system, const FeFunction& u0, const ScalarField& T,
                             const ScalarField& R, const SolverConfig& config, const ExtraForcing* extra) {
    config.validate();
    if (u0.space().id() != system.space().id()) {
        throw SolverError("solve_stationary: initial iterate is not on the system's space");
    }
    const auto start = std::chrono::steady_clock::now();
    const double dt = system.space().params().dt;
    const double eps = std::numeric_limits<double>::epsilon();

    const FeFunction zero(system.space_ptr());
    const double r_ref = stationarity_residual(system, zero, T, R, config.q_img, extra).norm();

    AndersonWindow window(config.aa_depth, config.cond_limit);
    SolveResult result{u0, {}, false, 0};
    FeFunction& u = result.u;
    for (int k = 1; k <= config.max_iter; ++k) {
        const FeFunction gu = imex_step(system, u, T, R, config.q_img, extra);
        Vector next = window.update(u.coefficients(), gu.coefficients());
        if (!next.allFinite()) {
            throw DivergenceError("non-finite iterate at iteration " + std::to_string(k), std::move(result.log));
        }
        const double du = (next - u.coefficients()).head(system.space().n_displacement_dofs()).norm();
        const double velocity = du / (dt * u.displacement().norm() + eps);
        u.coefficients() = std::move(next);

        const double rnorm = stationarity_residual(system, u, T, R, config.q_img, extra).norm();
        const double residual = r_ref > 0.0 ? rnorm / r_ref : rnorm;
        const double sim = config.track_similarity ? similarity(T, R, u, config.q_img)
                                                   : std::numeric_limits<double>::quiet_NaN();
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        result.log.records.push_back({k, residual, velocity, sim, window.last_accelerated(), secs});
        result.iterations = k;
        if (!std::isfinite(residual) || residual > config.divergence_limit) {
            throw DivergenceError("residual " + std::to_string(residual) + " at iteration " + std::to_string(k),
                                  std::move(result.log));
        }
        const double measure = config.stop_mode == StopMode::StationaryResidual ? residual : velocity;
        if (measure < config.tol || (config.stop_mode == StopMode::StationaryResidual && rnorm == 0.0)) {
            result.converged = true;
            break;
        }
    }
    return result;
}

} // namespace elasreg
