// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

namespace elasreg {

/// Gauss-Legendre rule on [0, 1].
struct GaussRule {
    std::vector<double> points;
    std::vector<double> weights;

    std::size_t size() const { return points.size(); }
};

/// `n`-point rule on [0, 1]; exact for polynomials of degree 2n - 1.
/// Rules are cached, so the returned reference stays valid for the program lifetime.
const GaussRule& gauss_legendre(int n);

/// Number of points per axis needed to integrate degree `order` exactly.
inline int points_for_order(int order) { return order <= 1 ? 1 : (order + 2) / 2; }

/// Rule of the given polynomial exactness order.
inline const GaussRule& gauss_for_order(int order) { return gauss_legendre(points_for_order(order)); }

} // namespace elasreg
