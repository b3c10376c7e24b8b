// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "elasreg/amr.hpp"
#include "elasreg/fespace.hpp"
#include "elasreg/image.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace elasreg {

enum class CaseKind { Smooth, Singular };
enum class RefinementMode { Uniform, Adaptive };

std::string to_string(CaseKind kind);
std::string to_string(RefinementMode mode);
/// Throws ConfigError on unknown names.
CaseKind parse_case(const std::string& name);
RefinementMode parse_mode(const std::string& name);

/// Manufactured problem on the unit square with analytic images
/// R = |x - (0.2, 0.2)|^2 and T = |x - (0.8, 0.8)|^2.
struct ManufacturedCase {
    CaseKind kind = CaseKind::Smooth;
    double beta = 2.0 / 3.0;
    /// Multiplies u_ex.
    double amplitude = 1.0;
    MaterialParams params;

    /// kappa = 0.5, E = 1, nu = 1/4, alpha = dt = 1, amplitude 1/5 (the
    /// published error table corresponds to a 1/50 prefactor).
    static ManufacturedCase smooth();
    /// kappa = 0 (pure traction).
    static ManufacturedCase singular(double beta = 2.0 / 3.0);

    AnalyticField reference() const;
    AnalyticField target() const;
};

struct ExactFields {
    std::function<Vec2(const Vec2&)> u;
    std::function<Mat2(const Vec2&)> grad;
    std::function<Mat2(const Vec2&)> stress;
    std::function<Vec2(const Vec2&)> f;     ///< -div stress
    std::function<Vec2(const Vec2&)> g;     ///< alpha (T(x+u) - R) grad T(x+u)
};

ExactFields exact_fields(const ManufacturedCase& mc);

/// Data that makes u_ex the exact solution of the discrete stationary problem:
/// volume f_ex + g_ex, Robin datum stress n + kappa u_ex, and the rigid-mode
/// moments of u_ex.
ExtraForcing manufactured_forcing(const ManufacturedCase& mc, const ExactFields& ex);

struct ConvergenceRow {
    std::size_t dofs = 0;
    double h = 0.0;       ///< largest cell diameter
    double error = 0.0;   ///< |u - u_h|_1 = ||e(u - u_h)||_0
    std::optional<double> rate;
    double eff = 0.0;     ///< error / Theta
    double theta = 0.0;
    int iterations = 0;
};

struct ConvergenceConfig {
    ManufacturedCase mc = ManufacturedCase::smooth();
    RefinementMode mode = RefinementMode::Uniform;
    int degree = 1;
    int levels = 6;
    double theta_refine = 0.15;
    /// Uniform refinements of the first mesh; 0 picks 1 (uniform) or 2 (adaptive).
    int start_level = 0;
    SolverConfig solver;
    /// Throws ConfigError.
    void validate() const;
};

/// Solves the manufactured problem on a sequence of meshes. Throws SolverError
/// when a level does not converge.
std::vector<ConvergenceRow> run_convergence(const ConvergenceConfig& config);

/// CSV `dofs,h,error,rate,eff` (rate empty on the first row).
void write_convergence_csv(const std::vector<ConvergenceRow>& rows, const std::filesystem::path& path);
/// Whitespace separated `dofs error theta` for plotting.
void write_error_dofs(const std::vector<ConvergenceRow>& rows, const std::filesystem::path& path);

} // namespace elasreg
