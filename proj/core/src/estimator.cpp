// SPDX-License-Identifier: Apache-2.0

#include "elasreg/estimator.hpp"

#include "elasreg/errors.hpp"
#include "elasreg/image.hpp"
#include "elasreg/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace elasreg {

std::vector<double> CellIndicators::cell_totals() const {
    std::vector<double> out(size());
    for (std::size_t c = 0; c < size(); ++c) {
        out[c] = cell(c);
    }
    return out;
}

double CellIndicators::theta() const {
    double total = 0.0;
    for (std::size_t c = 0; c < size(); ++c) {
        total += cell(c);
    }
    return std::sqrt(total);
}

namespace {

Vec2 side_point(Side s, double t) {
    switch (s) {
    case Side::Left: return {0.0, t};
    case Side::Right: return {1.0, t};
    case Side::Bottom: return {t, 0.0};
    case Side::Top: return {t, 1.0};
    }
    return {t, t};
}

Vec2 traction(const FeFunction& u, std::size_t cell, const Vec2& ref, const Vec2& n) {
    return matvec(stress(u.space().params(), u.gradient_in_cell(cell, ref)), n);
}

// Visits each facet quadrature point with (owner-side traction jump, weight, owner, neighbour).
template <class Visit>
void for_each_jump(const FeFunction& u, int facet_order, Visit visit) {
    const QuadForest& forest = u.space().forest();
    const GaussRule& rule = gauss_for_order(facet_order);
    for (const Facet& f : forest.facets()) {
        if (f.kind == FacetKind::Conforming) {
            const Side other = opposite(f.owner_side);
            for (std::size_t q = 0; q < rule.size(); ++q) {
                const double t = rule.points[q];
                const Vec2 jump = traction(u, f.owner, side_point(f.owner_side, t), f.normal) -
                                  traction(u, *f.neighbor, side_point(other, t), f.normal);
                visit(f.owner, *f.neighbor, f.h_e, rule.weights[q] * f.h_e, jump);
            }
        } else if (f.kind == FacetKind::Nonconforming) {
            const Side other = opposite(f.owner_side);
            for (const SubFacet& sf : f.subfacets) {
                for (std::size_t q = 0; q < rule.size(); ++q) {
                    const double t = rule.points[q];
                    const double tc = sf.t0 + (sf.t1 - sf.t0) * t;
                    const Vec2 jump = traction(u, f.owner, side_point(f.owner_side, tc), f.normal) -
                                      traction(u, sf.cell, side_point(other, t), f.normal);
                    visit(f.owner, sf.cell, sf.length, rule.weights[q] * sf.length, jump);
                }
            }
        }
    }
}

} // namespace

CellIndicators compute_indicators(const FeFunction& u, const ScalarField& T, const ScalarField& R,
                                  const EstimatorOptions& options) {
    const FeSpace& space = u.space();
    const QuadForest& forest = space.forest();
    const MaterialParams& p = space.params();
    const std::size_t n = forest.size();
    const std::size_t nloc = space.local_size();
    const ExtraForcing* ex = options.manufactured;
    if (options.previous && options.previous->space().id() != space.id()) {
        throw SolverError("compute_indicators: previous iterate lives on another space");
    }

    CellIndicators ind{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};

    const GaussRule& vrule = gauss_for_order(options.volume_order);
    const double lam = p.lambda();
    const double mu = p.mu();
    for (std::size_t c = 0; c < n; ++c) {
        const CellGeometry g = forest.cell_geometry(c);
        const std::vector<Vec2> lv = u.local_values(c);
        const std::vector<Vec2> pv = options.previous ? options.previous->local_values(c) : std::vector<Vec2>{};
        double integral = 0.0;
        for (std::size_t qy = 0; qy < vrule.size(); ++qy) {
            for (std::size_t qx = 0; qx < vrule.size(); ++qx) {
                const Vec2 ref{vrule.points[qx], vrule.points[qy]};
                const Vec2 x = g.map(ref);
                const ShapeValues s = shape_values(space.degree(), ref, g.jacobian, true);
                Vec2 uq{0.0, 0.0};
                Vec2 du{0.0, 0.0};
                double uxx[2] = {0, 0}, uxy[2] = {0, 0}, uyy[2] = {0, 0};
                for (std::size_t a = 0; a < nloc; ++a) {
                    for (int i = 0; i < 2; ++i) {
                        uq[i] += s.N[a] * lv[a][i];
                        uxx[i] += s.dxx[a] * lv[a][i];
                        uxy[i] += s.dxy[a] * lv[a][i];
                        uyy[i] += s.dyy[a] * lv[a][i];
                        if (!pv.empty()) {
                            du[i] += s.N[a] * (lv[a][i] - pv[a][i]);
                        }
                    }
                }
                // div C e(u) = (lambda + mu) grad div u + mu Laplacian u
                const Vec2 grad_div{uxx[0] + uxy[1], uxy[0] + uyy[1]};
                const Vec2 div_sigma{(lam + mu) * grad_div[0] + mu * (uxx[0] + uyy[0]),
                                     (lam + mu) * grad_div[1] + mu * (uxx[1] + uyy[1])};
                Vec2 res = div_sigma - p.alpha * forcing(T, R, x, uq);
                if (ex && ex->volume) {
                    res = res + ex->volume(x);
                }
                if (options.previous) {
                    res = res - (1.0 / p.dt) * du;
                }
                integral += vrule.weights[qx] * vrule.weights[qy] * g.area() * dot(res, res);
            }
        }
        ind.volume[c] = g.diameter * g.diameter * integral;
    }

    for_each_jump(u, options.facet_order, [&](std::size_t a, std::size_t b, double h_e, double w, const Vec2& jump) {
        const double v = 0.5 * h_e * w * dot(jump, jump);
        ind.jump[a] += v;
        ind.jump[b] += v;
    });

    const GaussRule& frule = gauss_for_order(options.facet_order);
    for (const Facet& f : forest.facets()) {
        if (f.kind != FacetKind::Boundary) {
            continue;
        }
        const CellGeometry g = forest.cell_geometry(f.owner);
        double integral = 0.0;
        for (std::size_t q = 0; q < frule.size(); ++q) {
            const Vec2 ref = side_point(f.owner_side, frule.points[q]);
            const Vec2 x = g.map(ref);
            Vec2 r = traction(u, f.owner, ref, f.normal) + p.kappa * u.value_in_cell(f.owner, ref);
            if (ex && ex->boundary) {
                r = r - ex->boundary(x, f.normal);
            }
            integral += frule.weights[q] * f.h_e * dot(r, r);
        }
        ind.boundary[f.owner] += f.h_e * integral;
    }
    return ind;
}

double facet_jump_sum(const FeFunction& u, int facet_order) {
    double total = 0.0;
    for_each_jump(u, facet_order, [&](std::size_t, std::size_t, double h_e, double w, const Vec2& jump) {
        total += h_e * w * dot(jump, jump);
    });
    return total;
}

MarkSets mark_fraction(std::span<const double> indicators, double theta_refine, double theta_coarsen) {
    if (!(theta_refine >= 0.0 && theta_refine <= 1.0 && theta_coarsen >= 0.0 && theta_coarsen <= 1.0)) {
        throw ConfigError("marking fractions must lie in [0, 1]");
    }
    if (theta_refine + theta_coarsen > 1.0 + 1e-12) {
        throw ConfigError("refine and coarsen fractions overlap (sum exceeds 1)");
    }
    const std::size_t n = indicators.size();
    const auto n_refine = static_cast<std::size_t>(std::floor(theta_refine * static_cast<double>(n) + 1e-9));
    const auto n_coarsen = static_cast<std::size_t>(std::floor(theta_coarsen * static_cast<double>(n) + 1e-9));

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    // descending value; equal values keep the lower Z-order leaf first
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return indicators[a] > indicators[b]; });
    MarkSets out;
    out.refine.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_refine));

    std::vector<std::size_t> asc(n);
    std::iota(asc.begin(), asc.end(), std::size_t{0});
    // ascending value; equal values put the higher Z-order leaf first
    std::sort(asc.begin(), asc.end(), [&](std::size_t a, std::size_t b) {
        if (indicators[a] != indicators[b]) {
            return indicators[a] < indicators[b];
        }
        return a > b;
    });
    out.coarsen.assign(asc.begin(), asc.begin() + static_cast<std::ptrdiff_t>(n_coarsen));
    std::sort(out.refine.begin(), out.refine.end());
    std::sort(out.coarsen.begin(), out.coarsen.end());
    return out;
}

} // namespace elasreg
