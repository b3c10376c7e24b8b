// SPDX-License-Identifier: Apache-2.0

#include "elasreg/fespace.hpp"

#include "elasreg/errors.hpp"
#include "elasreg/image.hpp"
#include "elasreg/quadrature.hpp"

#include <unsupported/Eigen/SparseExtra>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_map>

namespace elasreg {

void MaterialParams::validate() const {
    if (!(E > 0.0)) {
        throw ConfigError("Young modulus E must be positive");
    }
    if (!(nu > -1.0 && nu < 0.5)) {
        throw ConfigError("Poisson ratio nu must lie in (-1, 1/2)");
    }
    if (!(kappa >= 0.0)) {
        throw ConfigError("boundary stiffness kappa must be non-negative");
    }
    if (!(alpha > 0.0)) {
        throw ConfigError("similarity weight alpha must be positive");
    }
    if (!(dt > 0.0)) {
        throw ConfigError("pseudo-timestep dt must be positive");
    }
}

std::vector<double> lagrange_1d(int k, double t) {
    if (k == 1) {
        return {1.0 - t, t};
    }
    return {2.0 * (t - 0.5) * (t - 1.0), -4.0 * t * (t - 1.0), 2.0 * t * (t - 0.5)};
}

namespace {

struct Basis1D {
    std::array<double, 3> v{}, d{}, dd{};
};

Basis1D basis_1d(int k, double t) {
    Basis1D b;
    if (k == 1) {
        b.v = {1.0 - t, t, 0.0};
        b.d = {-1.0, 1.0, 0.0};
    } else {
        b.v = {2.0 * t * t - 3.0 * t + 1.0, -4.0 * t * t + 4.0 * t, 2.0 * t * t - t};
        b.d = {4.0 * t - 3.0, -8.0 * t + 4.0, 4.0 * t - 1.0};
        b.dd = {4.0, -8.0, 4.0};
    }
    return b;
}

std::atomic<std::uint64_t> next_space_id{1};

using Triplets = std::vector<Eigen::Triplet<double>>;

// Adds a dense local matrix (local dof 2a + i) through the constraint expansions.
void scatter_matrix(const FeSpace& space, std::size_t cell, const Eigen::MatrixXd& local, Triplets& out) {
    const std::size_t nloc = space.local_size();
    for (std::size_t p = 0; p < 2 * nloc; ++p) {
        const auto& tp = space.local_expansion(cell, p / 2);
        const std::size_t ip = p % 2;
        for (std::size_t q = 0; q < 2 * nloc; ++q) {
            const double v = local(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(q));
            if (v == 0.0) {
                continue;
            }
            const auto& tq = space.local_expansion(cell, q / 2);
            const std::size_t iq = q % 2;
            for (const auto& a : tp) {
                for (const auto& b : tq) {
                    out.emplace_back(static_cast<int>(2 * a.node + ip), static_cast<int>(2 * b.node + iq),
                                     a.weight * b.weight * v);
                }
            }
        }
    }
}

void scatter_vector(const FeSpace& space, std::size_t cell, const Eigen::VectorXd& local, Vector& out) {
    const std::size_t nloc = space.local_size();
    for (std::size_t p = 0; p < 2 * nloc; ++p) {
        const double v = local(static_cast<Eigen::Index>(p));
        if (v == 0.0) {
            continue;
        }
        for (const auto& a : space.local_expansion(cell, p / 2)) {
            out(static_cast<Eigen::Index>(2 * a.node + p % 2)) += a.weight * v;
        }
    }
}

SparseMatrix to_matrix(const FeSpace& space, const Triplets& triplets) {
    const auto n = static_cast<Eigen::Index>(space.n_dofs());
    SparseMatrix m(n, n);
    m.setFromTriplets(triplets.begin(), triplets.end());
    return m;
}

// Loops over tensor quadrature points of every cell.
template <class Kernel>
SparseMatrix assemble_cellwise(const FeSpace& space, int order, Kernel kernel) {
    const GaussRule& rule = gauss_for_order(order);
    const std::size_t nloc = space.local_size();
    Triplets triplets;
    triplets.reserve(space.forest().size() * 4 * nloc * nloc);
    Eigen::MatrixXd local(2 * nloc, 2 * nloc);
    for (std::size_t c = 0; c < space.forest().size(); ++c) {
        const CellGeometry g = space.forest().cell_geometry(c);
        local.setZero();
        for (std::size_t qy = 0; qy < rule.size(); ++qy) {
            for (std::size_t qx = 0; qx < rule.size(); ++qx) {
                const Vec2 ref{rule.points[qx], rule.points[qy]};
                const double w = rule.weights[qx] * rule.weights[qy] * g.area();
                kernel(shape_values(space.degree(), ref, g.jacobian), w, local);
            }
        }
        scatter_matrix(space, c, local, triplets);
    }
    return to_matrix(space, triplets);
}

// Reference coordinates of the 1D rule placed on a cell side.
Vec2 side_point(Side s, double t) {
    switch (s) {
    case Side::Left: return {0.0, t};
    case Side::Right: return {1.0, t};
    case Side::Bottom: return {t, 0.0};
    case Side::Top: return {t, 1.0};
    }
    return {t, t};
}

} // namespace

ShapeValues shape_values(int degree, const Vec2& ref, const Vec2& jacobian, bool second_derivatives) {
    const Basis1D bx = basis_1d(degree, ref[0]);
    const Basis1D by = basis_1d(degree, ref[1]);
    const int n1 = degree + 1;
    const std::size_t n = static_cast<std::size_t>(n1 * n1);
    ShapeValues s;
    s.size = n;
    const double hx = jacobian[0];
    const double hy = jacobian[1];
    for (int b = 0; b < n1; ++b) {
        for (int a = 0; a < n1; ++a) {
            const std::size_t l = static_cast<std::size_t>(a + n1 * b);
            s.N[l] = bx.v[a] * by.v[b];
            s.dx[l] = bx.d[a] * by.v[b] / hx;
            s.dy[l] = bx.v[a] * by.d[b] / hy;
            if (second_derivatives) {
                s.dxx[l] = bx.dd[a] * by.v[b] / (hx * hx);
                s.dxy[l] = bx.d[a] * by.d[b] / (hx * hy);
                s.dyy[l] = bx.v[a] * by.dd[b] / (hy * hy);
            }
        }
    }
    return s;
}

std::shared_ptr<const FeSpace> FeSpace::build(std::shared_ptr<const QuadForest> forest, int degree,
                                              const MaterialParams& params, bool rm_mode) {
    params.validate();
    if (degree != 1 && degree != 2) {
        throw ConfigError("FeSpace: degree must be 1 or 2");
    }
    if (params.kappa == 0.0 && !rm_mode) {
        throw ConfigError("FeSpace: kappa = 0 requires the rigid-body multiplier block");
    }
    const std::vector<Facet> facets = forest->facets();

    auto space = std::shared_ptr<FeSpace>(new FeSpace());
    space->forest_ = forest;
    space->degree_ = degree;
    space->params_ = params;
    space->rm_mode_ = rm_mode;
    space->id_ = next_space_id.fetch_add(1);

    // Nodes live on an integer lattice fine enough for Q2 midpoints at kMaxLevel.
    constexpr int kBits = kMaxLevel + 1;
    constexpr std::uint64_t kStride = (std::uint64_t{1} << kBits) + 1;
    const double scale = std::ldexp(1.0, kBits);
    const Rect& dom = forest->domain();
    std::unordered_map<std::uint64_t, std::size_t> node_of;
    auto node_at = [&](std::uint64_t X, std::uint64_t Y) -> std::size_t {
        const std::uint64_t key = X * kStride + Y;
        auto [it, inserted] = node_of.emplace(key, space->positions_.size());
        if (inserted) {
            space->positions_.push_back(
                {dom.lo[0] + X / scale * dom.width(), dom.lo[1] + Y / scale * dom.height()});
        }
        return it->second;
    };
    auto existing = [&](std::uint64_t X, std::uint64_t Y) { return node_of.at(X * kStride + Y); };

    const std::size_t nloc = space->local_size();
    space->cell_nodes_.resize(forest->size() * nloc);
    for (std::size_t c = 0; c < forest->size(); ++c) {
        const MortonKey& key = forest->leaf(c);
        const auto [i, j] = key.decode();
        const std::uint64_t W = std::uint64_t{1} << (kBits - key.level);
        const std::uint64_t step = W / static_cast<std::uint64_t>(degree);
        for (int b = 0; b <= degree; ++b) {
            for (int a = 0; a <= degree; ++a) {
                space->cell_nodes_[c * nloc + a + (degree + 1) * b] = node_at(i * W + a * step, j * W + b * step);
            }
        }
    }

    // Raw hanging constraints from nonconforming facets (masters may themselves hang).
    std::map<std::size_t, std::vector<ConstraintSet::Term>> raw;
    for (const Facet& f : facets) {
        if (f.kind != FacetKind::Nonconforming) {
            continue;
        }
        const MortonKey& key = forest->leaf(f.owner);
        const auto [i, j] = key.decode();
        const std::uint64_t W = std::uint64_t{1} << (kBits - key.level);
        std::uint64_t X0 = i * W;
        std::uint64_t Y0 = j * W;
        bool along_x = true;
        switch (f.owner_side) {
        case Side::Left: along_x = false; break;
        case Side::Right: X0 += W; along_x = false; break;
        case Side::Bottom: break;
        case Side::Top: Y0 += W; break;
        }
        auto at = [&](std::uint64_t offset) {
            return along_x ? existing(X0 + offset, Y0) : existing(X0, Y0 + offset);
        };
        std::vector<std::size_t> masters;
        for (int m = 0; m <= degree; ++m) {
            masters.push_back(at(m * (W / degree)));
        }
        const std::uint64_t fine_step = W / (2 * static_cast<std::uint64_t>(degree));
        for (int m = 1; m < 2 * degree; m += 2) {
            const std::size_t node = at(m * fine_step);
            const std::vector<double> w = lagrange_1d(degree, static_cast<double>(m) / (2.0 * degree));
            std::vector<ConstraintSet::Term> terms;
            for (int q = 0; q <= degree; ++q) {
                if (w[q] != 0.0) {
                    terms.push_back({masters[q], w[q]});
                }
            }
            raw[node] = std::move(terms);
        }
    }

    // Resolve chains so every master is unconstrained.
    std::map<std::size_t, std::vector<ConstraintSet::Term>> resolved;
    std::function<const std::vector<ConstraintSet::Term>&(std::size_t, int)> resolve =
        [&](std::size_t node, int depth) -> const std::vector<ConstraintSet::Term>& {
        if (auto it = resolved.find(node); it != resolved.end()) {
            return it->second;
        }
        if (depth > 2 * kMaxLevel) {
            throw MeshError("FeSpace: cyclic hanging-node constraints");
        }
        std::map<std::size_t, double> acc;
        for (const auto& t : raw.at(node)) {
            if (raw.contains(t.node)) {
                for (const auto& s : resolve(t.node, depth + 1)) {
                    acc[s.node] += t.weight * s.weight;
                }
            } else {
                acc[t.node] += t.weight;
            }
        }
        std::vector<ConstraintSet::Term> terms;
        for (const auto& [n, w] : acc) {
            terms.push_back({n, w});
        }
        return resolved.emplace(node, std::move(terms)).first->second;
    };
    for (const auto& [node, terms] : raw) {
        resolve(node, 0);
    }
    space->constraints_.terms_ = resolved;

    space->free_index_.assign(space->positions_.size(), -1);
    for (std::size_t n = 0; n < space->positions_.size(); ++n) {
        if (!resolved.contains(n)) {
            space->free_index_[n] = static_cast<std::ptrdiff_t>(space->free_nodes_.size());
            space->free_nodes_.push_back(n);
        }
    }
    space->n_free_ = space->free_nodes_.size();

    space->cell_terms_.resize(space->cell_nodes_.size());
    for (std::size_t l = 0; l < space->cell_nodes_.size(); ++l) {
        const std::size_t node = space->cell_nodes_[l];
        if (auto it = resolved.find(node); it != resolved.end()) {
            for (const auto& t : it->second) {
                space->cell_terms_[l].push_back({static_cast<std::size_t>(space->free_index_[t.node]), t.weight});
            }
        } else {
            space->cell_terms_[l].push_back({static_cast<std::size_t>(space->free_index_[node]), 1.0});
        }
    }
    return space;
}

std::optional<std::size_t> FeSpace::free_index(std::size_t node) const {
    const std::ptrdiff_t f = free_index_.at(node);
    if (f < 0) {
        return std::nullopt;
    }
    return static_cast<std::size_t>(f);
}

std::span<const std::size_t> FeSpace::cell_nodes(std::size_t cell) const {
    return std::span<const std::size_t>(cell_nodes_).subspan(cell * local_size(), local_size());
}

FeFunction::FeFunction(std::shared_ptr<const FeSpace> space)
    : space_(std::move(space)), coeffs_(Vector::Zero(static_cast<Eigen::Index>(space_->n_dofs()))) {}

FeFunction::FeFunction(std::shared_ptr<const FeSpace> space, Vector coefficients)
    : space_(std::move(space)), coeffs_(std::move(coefficients)) {
    if (coeffs_.size() != static_cast<Eigen::Index>(space_->n_dofs())) {
        throw SolverError("FeFunction: coefficient vector does not match the space");
    }
}

FeFunction FeFunction::interpolate(std::shared_ptr<const FeSpace> space, const std::function<Vec2(const Vec2&)>& f) {
    FeFunction u(space);
    for (std::size_t k = 0; k < space->n_free_nodes(); ++k) {
        const Vec2 v = f(space->node_position(space->free_node(k)));
        u.coeffs_(static_cast<Eigen::Index>(2 * k)) = v[0];
        u.coeffs_(static_cast<Eigen::Index>(2 * k + 1)) = v[1];
    }
    return u;
}

std::vector<Vec2> FeFunction::local_values(std::size_t cell) const {
    std::vector<Vec2> out(space_->local_size(), Vec2{0.0, 0.0});
    for (std::size_t a = 0; a < out.size(); ++a) {
        for (const auto& t : space_->local_expansion(cell, a)) {
            out[a][0] += t.weight * coeffs_(static_cast<Eigen::Index>(2 * t.node));
            out[a][1] += t.weight * coeffs_(static_cast<Eigen::Index>(2 * t.node + 1));
        }
    }
    return out;
}

Vec2 FeFunction::value_in_cell(std::size_t cell, const Vec2& ref) const {
    const CellGeometry g = space_->forest().cell_geometry(cell);
    const ShapeValues s = shape_values(space_->degree(), ref, g.jacobian);
    const std::vector<Vec2> lv = local_values(cell);
    Vec2 v{0.0, 0.0};
    for (std::size_t a = 0; a < lv.size(); ++a) {
        v[0] += s.N[a] * lv[a][0];
        v[1] += s.N[a] * lv[a][1];
    }
    return v;
}

Mat2 FeFunction::gradient_in_cell(std::size_t cell, const Vec2& ref) const {
    const CellGeometry g = space_->forest().cell_geometry(cell);
    const ShapeValues s = shape_values(space_->degree(), ref, g.jacobian);
    const std::vector<Vec2> lv = local_values(cell);
    Mat2 G{};
    for (std::size_t a = 0; a < lv.size(); ++a) {
        for (int i = 0; i < 2; ++i) {
            G[i][0] += s.dx[a] * lv[a][i];
            G[i][1] += s.dy[a] * lv[a][i];
        }
    }
    return G;
}

namespace {

Vec2 reference_point(const CellGeometry& g, const Vec2& x) {
    return {std::clamp((x[0] - g.lo[0]) / g.jacobian[0], 0.0, 1.0),
            std::clamp((x[1] - g.lo[1]) / g.jacobian[1], 0.0, 1.0)};
}

} // namespace

Vec2 FeFunction::value(const Vec2& x) const {
    const std::size_t c = space_->forest().locate(x);
    return value_in_cell(c, reference_point(space_->forest().cell_geometry(c), x));
}

Mat2 FeFunction::gradient(const Vec2& x) const {
    const std::size_t c = space_->forest().locate(x);
    return gradient_in_cell(c, reference_point(space_->forest().cell_geometry(c), x));
}

SparseMatrix assemble_mass(const FeSpace& space) {
    return assemble_cellwise(space, 2 * space.degree(), [](const ShapeValues& s, double w, Eigen::MatrixXd& K) {
        const std::size_t n = s.size;
        for (std::size_t a = 0; a < n; ++a) {
            for (std::size_t b = 0; b < n; ++b) {
                const double v = w * s.N[a] * s.N[b];
                K(2 * a, 2 * b) += v;
                K(2 * a + 1, 2 * b + 1) += v;
            }
        }
    });
}

SparseMatrix assemble_vector_laplacian(const FeSpace& space) {
    return assemble_cellwise(space, 2 * space.degree(), [](const ShapeValues& s, double w, Eigen::MatrixXd& K) {
        const std::size_t n = s.size;
        for (std::size_t a = 0; a < n; ++a) {
            for (std::size_t b = 0; b < n; ++b) {
                const double v = w * (s.dx[a] * s.dx[b] + s.dy[a] * s.dy[b]);
                K(2 * a, 2 * b) += v;
                K(2 * a + 1, 2 * b + 1) += v;
            }
        }
    });
}

SparseMatrix assemble_elasticity(const FeSpace& space) {
    const double lam = space.params().lambda();
    const double mu = space.params().mu();
    return assemble_cellwise(space, 2 * space.degree(), [lam, mu](const ShapeValues& s, double w, Eigen::MatrixXd& K) {
        const std::size_t n = s.size;
        for (std::size_t a = 0; a < n; ++a) {
            const double ga[2] = {s.dx[a], s.dy[a]};
            for (std::size_t b = 0; b < n; ++b) {
                const double gb[2] = {s.dx[b], s.dy[b]};
                const double gg = ga[0] * gb[0] + ga[1] * gb[1];
                for (int i = 0; i < 2; ++i) {
                    for (int j = 0; j < 2; ++j) {
                        const double v = lam * ga[i] * gb[j] + mu * ((i == j ? gg : 0.0) + ga[j] * gb[i]);
                        K(2 * a + i, 2 * b + j) += w * v;
                    }
                }
            }
        }
    });
}

SparseMatrix assemble_boundary_mass(const FeSpace& space) {
    const GaussRule& rule = gauss_for_order(2 * space.degree());
    const std::size_t nloc = space.local_size();
    Triplets triplets;
    Eigen::MatrixXd local(2 * nloc, 2 * nloc);
    for (const Facet& f : space.forest().facets()) {
        if (f.kind != FacetKind::Boundary) {
            continue;
        }
        const CellGeometry g = space.forest().cell_geometry(f.owner);
        local.setZero();
        for (std::size_t q = 0; q < rule.size(); ++q) {
            const ShapeValues s = shape_values(space.degree(), side_point(f.owner_side, rule.points[q]), g.jacobian);
            const double w = rule.weights[q] * f.h_e;
            for (std::size_t a = 0; a < nloc; ++a) {
                for (std::size_t b = 0; b < nloc; ++b) {
                    local(2 * a, 2 * b) += w * s.N[a] * s.N[b];
                    local(2 * a + 1, 2 * b + 1) += w * s.N[a] * s.N[b];
                }
            }
        }
        scatter_matrix(space, f.owner, local, triplets);
    }
    return to_matrix(space, triplets);
}

Eigen::MatrixXd rigid_body_block(const FeSpace& space) {
    const GaussRule& rule = gauss_for_order(space.degree() + 1);
    const std::size_t nloc = space.local_size();
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(space.n_displacement_dofs()), 3);
    for (std::size_t c = 0; c < space.forest().size(); ++c) {
        const CellGeometry g = space.forest().cell_geometry(c);
        for (std::size_t qy = 0; qy < rule.size(); ++qy) {
            for (std::size_t qx = 0; qx < rule.size(); ++qx) {
                const Vec2 ref{rule.points[qx], rule.points[qy]};
                const Vec2 x = g.map(ref);
                const double w = rule.weights[qx] * rule.weights[qy] * g.area();
                const ShapeValues s = shape_values(space.degree(), ref, g.jacobian);
                for (std::size_t a = 0; a < nloc; ++a) {
                    for (const auto& t : space.local_expansion(c, a)) {
                        const auto rx = static_cast<Eigen::Index>(2 * t.node);
                        const double v = w * t.weight * s.N[a];
                        B(rx, 0) += v;
                        B(rx + 1, 1) += v;
                        B(rx, 2) += -x[1] * v;
                        B(rx + 1, 2) += x[0] * v;
                    }
                }
            }
        }
    }
    return B;
}

struct AssembledSystem::Factorization {
    Eigen::SimplicialLDLT<SparseMatrix> block;
    Eigen::MatrixXd coupling;      // B, n_disp x 3
    Eigen::MatrixXd block_inv_b;   // K^{-1} B
    Eigen::PartialPivLU<Eigen::MatrixXd> schur; // B^T K^{-1} B
};

AssembledSystem::AssembledSystem(std::shared_ptr<const FeSpace> space, ProximalKind kind, SparseMatrix matrix,
                                 SparseMatrix proximal_mass, SparseMatrix stationary)
    : space_(std::move(space)), kind_(kind), matrix_(std::move(matrix)), proximal_mass_(std::move(proximal_mass)),
      stationary_(std::move(stationary)) {}

AssembledSystem::AssembledSystem(AssembledSystem&&) noexcept = default;
AssembledSystem& AssembledSystem::operator=(AssembledSystem&&) noexcept = default;
AssembledSystem::~AssembledSystem() = default;

void AssembledSystem::factorize() {
    const auto nd = static_cast<Eigen::Index>(space_->n_displacement_dofs());
    const Eigen::Index nm = matrix_.rows() - nd;
    auto f = std::make_unique<Factorization>();
    const SparseMatrix block = matrix_.topLeftCorner(nd, nd);
    f->block.compute(block);
    ++factorizations_;
    if (f->block.info() != Eigen::Success || (f->block.vectorD().array() <= 0.0).any()) {
        throw SolverError("factorisation failed: displacement block (" + std::to_string(nd) +
                          " unknowns) is not positive definite");
    }
    if (nm > 0) {
        f->coupling = Eigen::MatrixXd(matrix_.topRightCorner(nd, nm));
        f->block_inv_b = f->block.solve(f->coupling);
        const Eigen::MatrixXd schur = f->coupling.transpose() * f->block_inv_b;
        f->schur.compute(schur);
        if (!(std::abs(f->schur.determinant()) > 1e-300)) {
            throw SolverError("factorisation failed: rigid-mode constraints are degenerate");
        }
    }
    factor_ = std::move(f);
}

Vector AssembledSystem::solve(const Vector& rhs) {
    if (!factor_) {
        factorize();
    }
    const auto nd = static_cast<Eigen::Index>(space_->n_displacement_dofs());
    const Eigen::Index nm = matrix_.rows() - nd;
    Vector x(matrix_.rows());
    Vector u = factor_->block.solve(rhs.head(nd));
    if (nm > 0) {
        // [K B; B^T 0][u; l] = [f; c]  =>  (B^T K^-1 B) l = B^T K^-1 f - c
        const Vector l = factor_->schur.solve(factor_->coupling.transpose() * u - rhs.tail(nm));
        u -= factor_->block_inv_b * l;
        x.tail(nm) = l;
    }
    x.head(nd) = u;
    return x;
}

const Vector& AssembledSystem::extra_load(const ExtraForcing& extra) const {
    if (extra_key_ != &extra) {
        extra_load_ = assemble_extra_load(*space_, extra);
        extra_key_ = &extra;
    }
    return extra_load_;
}

AssembledSystem assemble_operator(std::shared_ptr<const FeSpace> space, ProximalKind kind) {
    const MaterialParams& p = space->params();
    SparseMatrix mass = assemble_mass(*space);
    if (kind == ProximalKind::H1) {
        mass += assemble_vector_laplacian(*space);
    }
    SparseMatrix stationary = assemble_elasticity(*space);
    if (p.kappa > 0.0) {
        stationary += p.kappa * assemble_boundary_mass(*space);
    }
    if (space->rm_mode()) {
        const Eigen::MatrixXd B = rigid_body_block(*space);
        const auto nd = static_cast<int>(space->n_displacement_dofs());
        Triplets t;
        t.reserve(static_cast<std::size_t>(6 * B.rows()));
        for (int r = 0; r < B.rows(); ++r) {
            for (int i = 0; i < 3; ++i) {
                if (B(r, i) != 0.0) {
                    t.emplace_back(r, nd + i, B(r, i));
                    t.emplace_back(nd + i, r, B(r, i));
                }
            }
        }
        SparseMatrix block(stationary.rows(), stationary.cols());
        block.setFromTriplets(t.begin(), t.end());
        stationary += block;
    }
    SparseMatrix matrix = (1.0 / p.dt) * mass + stationary;
    matrix.makeCompressed();
    return AssembledSystem(std::move(space), kind, std::move(matrix), std::move(mass), std::move(stationary));
}

Vector assemble_image_load(const FeFunction& u, const ScalarField& T, const ScalarField& R, int q_img) {
    const FeSpace& space = u.space();
    const double alpha = space.params().alpha;
    const std::size_t nloc = space.local_size();
    Vector b = Vector::Zero(static_cast<Eigen::Index>(space.n_dofs()));
    Eigen::VectorXd local(2 * nloc);

    const GaussRule& img_rule = gauss_for_order(q_img);
    for (std::size_t c = 0; c < space.forest().size(); ++c) {
        const CellGeometry g = space.forest().cell_geometry(c);
        const std::vector<Vec2> lv = u.local_values(c);
        local.setZero();
        for (std::size_t qy = 0; qy < img_rule.size(); ++qy) {
            for (std::size_t qx = 0; qx < img_rule.size(); ++qx) {
                const Vec2 ref{img_rule.points[qx], img_rule.points[qy]};
                const Vec2 x = g.map(ref);
                const double w = img_rule.weights[qx] * img_rule.weights[qy] * g.area();
                const ShapeValues s = shape_values(space.degree(), ref, g.jacobian);
                Vec2 uq{0.0, 0.0};
                for (std::size_t a = 0; a < nloc; ++a) {
                    uq[0] += s.N[a] * lv[a][0];
                    uq[1] += s.N[a] * lv[a][1];
                }
                const Vec2 f = forcing(T, R, x, uq);
                for (std::size_t a = 0; a < nloc; ++a) {
                    local(2 * a) -= alpha * w * f[0] * s.N[a];
                    local(2 * a + 1) -= alpha * w * f[1] * s.N[a];
                }
            }
        }
        scatter_vector(space, c, local, b);
    }
    return b;
}

Vector assemble_extra_load(const FeSpace& space, const ExtraForcing& extra) {
    const std::size_t nloc = space.local_size();
    Vector b = Vector::Zero(static_cast<Eigen::Index>(space.n_dofs()));
    Eigen::VectorXd local(2 * nloc);
    const GaussRule& rule = gauss_for_order(extra.order);
    if (extra.volume) {
        for (std::size_t c = 0; c < space.forest().size(); ++c) {
            const CellGeometry g = space.forest().cell_geometry(c);
            local.setZero();
            for (std::size_t qy = 0; qy < rule.size(); ++qy) {
                for (std::size_t qx = 0; qx < rule.size(); ++qx) {
                    const Vec2 ref{rule.points[qx], rule.points[qy]};
                    const double w = rule.weights[qx] * rule.weights[qy] * g.area();
                    const ShapeValues s = shape_values(space.degree(), ref, g.jacobian);
                    const Vec2 m = extra.volume(g.map(ref));
                    for (std::size_t a = 0; a < nloc; ++a) {
                        local(2 * a) += w * m[0] * s.N[a];
                        local(2 * a + 1) += w * m[1] * s.N[a];
                    }
                }
            }
            scatter_vector(space, c, local, b);
        }
    }
    if (extra.boundary) {
        for (const Facet& f : space.forest().facets()) {
            if (f.kind != FacetKind::Boundary) {
                continue;
            }
            const CellGeometry g = space.forest().cell_geometry(f.owner);
            local.setZero();
            for (std::size_t q = 0; q < rule.size(); ++q) {
                const Vec2 ref = side_point(f.owner_side, rule.points[q]);
                const ShapeValues s = shape_values(space.degree(), ref, g.jacobian);
                const Vec2 d = extra.boundary(g.map(ref), f.normal);
                const double w = rule.weights[q] * f.h_e;
                for (std::size_t a = 0; a < nloc; ++a) {
                    local(2 * a) += w * d[0] * s.N[a];
                    local(2 * a + 1) += w * d[1] * s.N[a];
                }
            }
            scatter_vector(space, f.owner, local, b);
        }
    }
    if (space.rm_mode()) {
        const auto nd = static_cast<Eigen::Index>(space.n_displacement_dofs());
        for (int i = 0; i < 3; ++i) {
            b(nd + i) = extra.multiplier_rhs[i];
        }
    }
    return b;
}

Vector assemble_stationary_load(const FeFunction& u, const ScalarField& T, const ScalarField& R, int q_img,
                                const ExtraForcing* extra) {
    Vector b = assemble_image_load(u, T, R, q_img);
    if (extra) {
        b += assemble_extra_load(u.space(), *extra);
    }
    return b;
}

Vector assemble_load(const AssembledSystem& system, const FeFunction& u_prev, const ScalarField& T,
                     const ScalarField& R, int q_img, const ExtraForcing* extra) {
    if (u_prev.space().id() != system.space().id()) {
        throw SolverError("assemble_load: iterate and system live on different spaces");
    }
    Vector rhs = assemble_image_load(u_prev, T, R, q_img);
    if (extra) {
        rhs += system.extra_load(*extra);
    }
    rhs += (1.0 / system.space().params().dt) * (system.proximal_mass() * u_prev.coefficients());
    return rhs;
}

Norms error_norms(const FeFunction& u, const std::function<Vec2(const Vec2&)>& exact,
                  const std::function<Mat2(const Vec2&)>& exact_gradient,
                  const std::function<int(const CellGeometry&)>& order_for_cell) {
    const FeSpace& space = u.space();
    const std::size_t nloc = space.local_size();
    double l2 = 0.0;
    double grad2 = 0.0;
    double energy = 0.0;
    for (std::size_t c = 0; c < space.forest().size(); ++c) {
        const CellGeometry g = space.forest().cell_geometry(c);
        const GaussRule& rule = gauss_for_order(order_for_cell(g));
        const std::vector<Vec2> lv = u.local_values(c);
        for (std::size_t qy = 0; qy < rule.size(); ++qy) {
            for (std::size_t qx = 0; qx < rule.size(); ++qx) {
                const Vec2 ref{rule.points[qx], rule.points[qy]};
                const Vec2 x = g.map(ref);
                const double w = rule.weights[qx] * rule.weights[qy] * g.area();
                const ShapeValues s = shape_values(space.degree(), ref, g.jacobian);
                Vec2 v{0.0, 0.0};
                Mat2 G{};
                for (std::size_t a = 0; a < nloc; ++a) {
                    for (int i = 0; i < 2; ++i) {
                        v[i] += s.N[a] * lv[a][i];
                        G[i][0] += s.dx[a] * lv[a][i];
                        G[i][1] += s.dy[a] * lv[a][i];
                    }
                }
                if (exact) {
                    v = v - exact(x);
                }
                if (exact_gradient) {
                    const Mat2 Ge = exact_gradient(x);
                    for (int i = 0; i < 2; ++i) {
                        for (int j = 0; j < 2; ++j) {
                            G[i][j] -= Ge[i][j];
                        }
                    }
                }
                const Mat2 e = strain(G);
                l2 += w * dot(v, v);
                grad2 += w * ddot(G, G);
                energy += w * ddot(e, e);
            }
        }
    }
    return {std::sqrt(l2), std::sqrt(l2 + grad2), std::sqrt(energy)};
}

Norms norms(const FeFunction& u) {
    const int order = 2 * u.space().degree();
    return error_norms(u, nullptr, nullptr, [order](const CellGeometry&) { return order; });
}

FeFunction transfer(const FeFunction& u_old, std::shared_ptr<const FeSpace> target) {
    FeFunction u(target);
    for (std::size_t k = 0; k < target->n_free_nodes(); ++k) {
        const Vec2 v = u_old.value(target->node_position(target->free_node(k)));
        u.coefficients()(static_cast<Eigen::Index>(2 * k)) = v[0];
        u.coefficients()(static_cast<Eigen::Index>(2 * k + 1)) = v[1];
    }
    if (target->rm_mode() && u_old.space().rm_mode()) {
        u.coefficients().tail(3) = u_old.coefficients().tail(3);
    }
    return u;
}

void write_matrix_market(const SparseMatrix& matrix, const std::filesystem::path& path) {
    if (!Eigen::saveMarket(matrix, path.string())) {
        throw IoError("cannot write " + path.string());
    }
}

} // namespace elasreg
