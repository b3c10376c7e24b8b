// SPDX-License-Identifier: Apache-2.0

#include "elasreg/fespace.hpp"
#include "elasreg/image.hpp"
#include "elasreg/quadrature.hpp"

namespace elasreg {

double similarity(const ScalarField& T, const ScalarField& R, const FeFunction& u, int q_img) {
    const FeSpace& space = u.space();
    const GaussRule& rule = gauss_for_order(q_img);
    const std::size_t nloc = space.local_size();
    double total = 0.0;
    for (std::size_t c = 0; c < space.forest().size(); ++c) {
        const CellGeometry g = space.forest().cell_geometry(c);
        const std::vector<Vec2> lv = u.local_values(c);
        for (std::size_t qy = 0; qy < rule.size(); ++qy) {
            for (std::size_t qx = 0; qx < rule.size(); ++qx) {
                const Vec2 ref{rule.points[qx], rule.points[qy]};
                const Vec2 x = g.map(ref);
                const ShapeValues s = shape_values(space.degree(), ref, g.jacobian);
                Vec2 uq{0.0, 0.0};
                for (std::size_t a = 0; a < nloc; ++a) {
                    uq[0] += s.N[a] * lv[a][0];
                    uq[1] += s.N[a] * lv[a][1];
                }
                const double r = T.value(x + uq) - R.value(x);
                total += rule.weights[qx] * rule.weights[qy] * g.area() * r * r;
            }
        }
    }
    return total;
}

} // namespace elasreg
