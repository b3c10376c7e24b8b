// SPDX-License-Identifier: Apache-2.0

#include "elasreg/verify.hpp"

#include "elasreg/errors.hpp"
#include "elasreg/quadrature.hpp"

#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>

namespace elasreg {

std::string to_string(CaseKind kind) { return kind == CaseKind::Smooth ? "smooth" : "singular"; }
std::string to_string(RefinementMode mode) { return mode == RefinementMode::Uniform ? "uniform" : "adaptive"; }

CaseKind parse_case(const std::string& name) {
    if (name == "smooth") {
        return CaseKind::Smooth;
    }
    if (name == "singular") {
        return CaseKind::Singular;
    }
    throw ConfigError("unknown case '" + name + "' (smooth|singular)");
}

RefinementMode parse_mode(const std::string& name) {
    if (name == "uniform") {
        return RefinementMode::Uniform;
    }
    if (name == "adaptive") {
        return RefinementMode::Adaptive;
    }
    throw ConfigError("unknown mode '" + name + "' (uniform|adaptive)");
}

ManufacturedCase ManufacturedCase::smooth() {
    ManufacturedCase mc;
    mc.kind = CaseKind::Smooth;
    mc.amplitude = 0.2;
    mc.params.kappa = 0.5;
    return mc;
}

ManufacturedCase ManufacturedCase::singular(double beta) {
    if (!(beta > 0.0 && beta < 1.0)) {
        throw ConfigError("beta must lie in (0, 1)");
    }
    ManufacturedCase mc;
    mc.kind = CaseKind::Singular;
    mc.beta = beta;
    mc.params.kappa = 0.0;
    return mc;
}

AnalyticField ManufacturedCase::reference() const { return AnalyticField::squared_distance({0.2, 0.2}); }
AnalyticField ManufacturedCase::target() const { return AnalyticField::squared_distance({0.8, 0.8}); }

namespace {

// Value, gradient and the three second derivatives (xx, xy, yy) per component.
struct Jet {
    Vec2 u;
    Mat2 grad;
    Vec2 uxx, uxy, uyy;
};

Jet smooth_jet(const Vec2& x, double lambda) {
    constexpr double p = std::numbers::pi;
    const double a = 1.0 / lambda;
    const double sx = std::sin(p * x[0]);
    const double cx = std::cos(p * x[0]);
    const double sy = std::sin(p * x[1]);
    const double cy = std::cos(p * x[1]);
    Jet j;
    j.u = {0.1 * ((-sx + a * cx) * sy + 4.0 / (p * p)), 0.1 * (-cx + a * sx) * cy};
    j.grad = {{{0.1 * p * (-cx - a * sx) * sy, 0.1 * p * (-sx + a * cx) * cy},
               {0.1 * p * (sx + a * cx) * cy, -0.1 * p * (-cx + a * sx) * sy}}};
    const double q = 0.1 * p * p;
    j.uxx = {q * (sx - a * cx) * sy, q * (cx - a * sx) * cy};
    j.uxy = {q * (-cx - a * sx) * cy, -q * (sx + a * cx) * sy};
    j.uyy = {-q * (-sx + a * cx) * sy, -q * (-cx + a * sx) * cy};
    return j;
}

// u1 + i u2 = z^beta / 10 is holomorphic, so every derivative follows from f' and f''.
Jet singular_jet(const Vec2& x, double beta) {
    const std::complex<double> z(x[0], x[1]);
    const std::complex<double> f = std::pow(z, beta) / 10.0;
    const std::complex<double> f1 = beta * std::pow(z, beta - 1.0) / 10.0;
    const std::complex<double> f2 = beta * (beta - 1.0) * std::pow(z, beta - 2.0) / 10.0;
    Jet j;
    j.u = {f.real(), f.imag()};
    j.grad = {{{f1.real(), -f1.imag()}, {f1.imag(), f1.real()}}};
    j.uxx = {f2.real(), f2.imag()};
    j.uxy = {-f2.imag(), f2.real()};
    j.uyy = {-f2.real(), -f2.imag()};
    return j;
}

Jet scaled(Jet j, double s) {
    j.u = s * j.u;
    j.uxx = s * j.uxx;
    j.uxy = s * j.uxy;
    j.uyy = s * j.uyy;
    for (auto& row : j.grad) {
        for (double& v : row) {
            v *= s;
        }
    }
    return j;
}

} // namespace

ExactFields exact_fields(const ManufacturedCase& mc) {
    const MaterialParams p = mc.params;
    const double beta = mc.beta;
    const double s = mc.amplitude;
    std::function<Jet(const Vec2&)> jet;
    if (mc.kind == CaseKind::Smooth) {
        const double lambda = p.lambda();
        jet = [lambda, s](const Vec2& x) { return scaled(smooth_jet(x, lambda), s); };
    } else {
        jet = [beta, s](const Vec2& x) { return scaled(singular_jet(x, beta), s); };
    }
    ExactFields ex;
    ex.u = [jet](const Vec2& x) { return jet(x).u; };
    ex.grad = [jet](const Vec2& x) { return jet(x).grad; };
    ex.stress = [jet, p](const Vec2& x) { return stress(p, jet(x).grad); };
    ex.f = [jet, p](const Vec2& x) {
        const Jet j = jet(x);
        const double lm = p.lambda() + p.mu();
        const Vec2 grad_div{j.uxx[0] + j.uxy[1], j.uxy[0] + j.uyy[1]};
        return Vec2{-(lm * grad_div[0] + p.mu() * (j.uxx[0] + j.uyy[0])),
                    -(lm * grad_div[1] + p.mu() * (j.uxx[1] + j.uyy[1]))};
    };
    const AnalyticField T = mc.target();
    const AnalyticField R = mc.reference();
    ex.g = [jet, p, T, R](const Vec2& x) { return p.alpha * forcing(T, R, x, jet(x).u); };
    return ex;
}

ExtraForcing manufactured_forcing(const ManufacturedCase& mc, const ExactFields& ex) {
    ExtraForcing out;
    const double kappa = mc.params.kappa;
    out.volume = [ex](const Vec2& x) { return ex.f(x) + ex.g(x); };
    out.boundary = [ex, kappa](const Vec2& x, const Vec2& n) {
        return matvec(ex.stress(x), n) + kappa * ex.u(x);
    };
    // Rigid-mode moments of u_ex by a composite Gauss rule on the unit square.
    constexpr int cells = 32;
    const GaussRule& rule = gauss_legendre(8);
    const double h = 1.0 / cells;
    std::array<double, 3> m{0.0, 0.0, 0.0};
    for (int cj = 0; cj < cells; ++cj) {
        for (int ci = 0; ci < cells; ++ci) {
            for (std::size_t qy = 0; qy < rule.size(); ++qy) {
                for (std::size_t qx = 0; qx < rule.size(); ++qx) {
                    const Vec2 x{(ci + rule.points[qx]) * h, (cj + rule.points[qy]) * h};
                    const double w = rule.weights[qx] * rule.weights[qy] * h * h;
                    const Vec2 u = ex.u(x);
                    m[0] += w * u[0];
                    m[1] += w * u[1];
                    m[2] += w * (-x[1] * u[0] + x[0] * u[1]);
                }
            }
        }
    }
    out.multiplier_rhs = m;
    out.order = 8;
    return out;
}

void ConvergenceConfig::validate() const {
    if (degree != 1 && degree != 2) {
        throw ConfigError("degree must be 1 or 2");
    }
    if (levels < 2) {
        throw ConfigError("at least two levels are needed for rates");
    }
    if (!(theta_refine > 0.0 && theta_refine <= 1.0)) {
        throw ConfigError("theta_refine must lie in (0, 1]");
    }
    if (start_level < 0) {
        throw ConfigError("start_level must be non-negative");
    }
    mc.params.validate();
    solver.validate();
}

std::vector<ConvergenceRow> run_convergence(const ConvergenceConfig& config) {
    config.validate();
    const ExactFields ex = exact_fields(config.mc);
    const ExtraForcing extra = manufactured_forcing(config.mc, ex);
    const AnalyticField T = config.mc.target();
    const AnalyticField R = config.mc.reference();
    const bool adaptive = config.mode == RefinementMode::Adaptive;
    const int k = config.degree;
    const bool singular = config.mc.kind == CaseKind::Singular;

    AmrConfig ac;
    ac.n0_ref = config.start_level > 0 ? config.start_level : (adaptive ? 2 : 1);
    ac.n_ref = config.levels - 1;
    ac.theta_refine = adaptive ? config.theta_refine : 1.0;
    ac.theta_coarsen = 0.0;
    ac.solver = config.solver;
    ac.params = config.mc.params;
    ac.degree = k;
    ac.rm_mode = true;
    ac.estimator_order = std::max(config.solver.q_img, 2 * k + 3);

    std::vector<ConvergenceRow> rows;
    ac.on_level = [&](const LevelView& view) {
        if (!view.solve.converged) {
            throw SolverError("manufactured solve did not converge on level " + std::to_string(view.level));
        }
        const auto order = [&](const CellGeometry& g) {
            const bool origin = singular && g.lo[0] == 0.0 && g.lo[1] == 0.0;
            return origin ? 2 * k + 9 : 2 * k + 3;
        };
        const Norms e = error_norms(view.u, ex.u, ex.grad, order);
        ConvergenceRow row;
        row.dofs = view.u.space().n_dofs();
        const QuadForest& forest = view.u.space().forest();
        for (std::size_t c = 0; c < forest.size(); ++c) {
            row.h = std::max(row.h, forest.cell_geometry(c).diameter);
        }
        row.error = e.energy;
        row.theta = view.indicators.theta();
        row.eff = row.error / row.theta;
        row.iterations = view.solve.iterations;
        if (!rows.empty()) {
            const ConvergenceRow& prev = rows.back();
            if (adaptive) {
                row.rate = -2.0 * std::log(row.error / prev.error) /
                           std::log(static_cast<double>(row.dofs) / static_cast<double>(prev.dofs));
            } else {
                row.rate = std::log(row.error / prev.error) / std::log(row.h / prev.h);
            }
        }
        rows.push_back(row);
    };
    run_amr(ac, T, R, &extra);
    return rows;
}

void write_convergence_csv(const std::vector<ConvergenceRow>& rows, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out.precision(6);
    out << "dofs,h,error,rate,eff\n";
    for (const ConvergenceRow& r : rows) {
        out << r.dofs << ',' << r.h << ',' << r.error << ',';
        if (r.rate) {
            out << *r.rate;
        }
        out << ',' << r.eff << '\n';
    }
}

void write_error_dofs(const std::vector<ConvergenceRow>& rows, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out.precision(8);
    out << "# dofs error theta\n";
    for (const ConvergenceRow& r : rows) {
        out << r.dofs << ' ' << r.error << ' ' << r.theta << '\n';
    }
}

} // namespace elasreg
