// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "elasreg/fespace.hpp"

#include <vector>

namespace elasreg {

class ScalarField;

/// Per-leaf squared indicator contributions. Interior jump terms are split
/// half-and-half between the two cells sharing a facet.
struct CellIndicators {
    std::vector<double> volume;   ///< h_K^2 ||R_K||^2
    std::vector<double> jump;     ///< sum of 1/2 h_e ||[C e(u_h) n]||^2
    std::vector<double> boundary; ///< h_e ||C e(u_h) n + kappa u_h - g||^2

    std::size_t size() const { return volume.size(); }
    double cell(std::size_t c) const { return volume[c] + jump[c] + boundary[c]; }
    std::vector<double> cell_totals() const;
    /// Global estimator (sum of all contributions)^(1/2).
    double theta() const;
};

struct EstimatorOptions {
    /// Quadrature order for the volume residual (image terms included).
    int volume_order = 6;
    /// Quadrature order along facets.
    int facet_order = 6;
    /// Manufactured data: its volume term enters the residual and its
    /// boundary datum is subtracted from the boundary flux.
    const ExtraForcing* manufactured = nullptr;
    /// When set, adds the pseudo-time term -(1/dt)(u_h - previous) to the volume residual.
    const FeFunction* previous = nullptr;
};

/// Residual indicators of the registration problem a(u, v) = alpha F_u(v) (+ extras):
/// volume residual -alpha f_{u_h} + div C e(u_h) (+ manufactured volume term),
/// interior flux jumps, and the Robin boundary residual.
CellIndicators compute_indicators(const FeFunction& u, const ScalarField& T, const ScalarField& R,
                                  const EstimatorOptions& options = {});

/// Sum over facets of h_e ||[C e(u_h) n]||^2 without splitting (used to audit the split).
double facet_jump_sum(const FeFunction& u, int facet_order = 6);

struct MarkSets {
    std::vector<std::size_t> refine;  ///< leaf indices
    std::vector<std::size_t> coarsen; ///< leaf indices
};

/// Marks the floor(theta_refine N) largest and floor(theta_coarsen N) smallest
/// indicators. Ties go to the lower Z-order leaf for refinement and to the
/// higher one for coarsening. Throws ConfigError for fractions outside [0, 1]
/// or summing above 1.
MarkSets mark_fraction(std::span<const double> indicators, double theta_refine, double theta_coarsen);

} // namespace elasreg
