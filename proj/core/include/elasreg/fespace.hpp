// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "elasreg/geometry.hpp"
#include "elasreg/mesh.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <vector>

namespace elasreg {

class ScalarField;

using SparseMatrix = Eigen::SparseMatrix<double>;
using Vector = Eigen::VectorXd;

/// Linear elastic material, boundary springs and registration weights.
/// Lame coefficients are derived from (E, nu).
struct MaterialParams {
    double E = 1.0;
    double nu = 0.25;
    double kappa = 0.0; ///< boundary spring stiffness
    double alpha = 1.0; ///< similarity weight
    double dt = 1.0;    ///< pseudo-timestep

    double mu() const { return E / (2.0 * (1.0 + nu)); }
    double lambda() const { return E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)); }

    /// Throws ConfigError unless E > 0, -1 < nu < 1/2, kappa >= 0, alpha > 0, dt > 0.
    void validate() const;
};

/// Operator of the proximal term: L2 (identity) or H1 (I - Laplacian).
enum class ProximalKind { Identity, H1 };

/// Hanging-node constraints: each constrained node is a weighted sum of
/// unconstrained master nodes (chains already resolved).
class ConstraintSet {
public:
    struct Term {
        std::size_t node;
        double weight;
    };

    bool is_constrained(std::size_t node) const { return terms_.contains(node); }
    const std::vector<Term>& masters(std::size_t node) const { return terms_.at(node); }
    std::size_t size() const { return terms_.size(); }
    const std::map<std::size_t, std::vector<Term>>& all() const { return terms_; }

private:
    friend class FeSpace;
    std::map<std::size_t, std::vector<Term>> terms_;
};

/// Values and physical derivatives of the (k+1)^2 scalar shape functions of a
/// cell at one reference point. Local node a + (k+1) b sits at (a/k, b/k).
/// Entries past (k+1)^2, and the second derivatives unless requested, are zero.
struct ShapeValues {
    static constexpr std::size_t kMax = 9;
    std::size_t size = 0;
    std::array<double, kMax> N{}, dx{}, dy{}, dxx{}, dxy{}, dyy{};
};

ShapeValues shape_values(int degree, const Vec2& ref, const Vec2& jacobian, bool second_derivatives = false);

/// 1D Lagrange basis of degree `k` on equispaced nodes in [0, 1], evaluated at t.
std::vector<double> lagrange_1d(int k, double t);

/// Vector Q_k Lagrange space on a balanced quadtree with hanging-node
/// constraints and an optional rigid-body multiplier block.
///
/// Unknown layout: 2 * free_node + component, followed by three multipliers
/// (translation x, translation y, rotation) when rm_mode is on.
class FeSpace {
public:
    /// Throws ConfigError for degree outside {1, 2}, invalid parameters, or
    /// kappa == 0 without rm_mode; MeshError for an unbalanced forest.
    static std::shared_ptr<const FeSpace> build(std::shared_ptr<const QuadForest> forest, int degree,
                                                const MaterialParams& params, bool rm_mode);

    const QuadForest& forest() const { return *forest_; }
    std::shared_ptr<const QuadForest> forest_ptr() const { return forest_; }
    int degree() const { return degree_; }
    const MaterialParams& params() const { return params_; }
    bool rm_mode() const { return rm_mode_; }
    std::uint64_t id() const { return id_; }

    std::size_t n_nodes() const { return positions_.size(); }
    std::size_t n_free_nodes() const { return n_free_; }
    std::size_t n_displacement_dofs() const { return 2 * n_free_; }
    std::size_t n_dofs() const { return 2 * n_free_ + (rm_mode_ ? 3 : 0); }
    std::size_t local_size() const { return static_cast<std::size_t>((degree_ + 1) * (degree_ + 1)); }

    const Vec2& node_position(std::size_t node) const { return positions_[node]; }
    std::optional<std::size_t> free_index(std::size_t node) const;
    /// Geometric node of a free index.
    std::size_t free_node(std::size_t free) const { return free_nodes_[free]; }
    const ConstraintSet& constraints() const { return constraints_; }

    /// Geometric node ids of a cell's local nodes.
    std::span<const std::size_t> cell_nodes(std::size_t cell) const;
    /// Expansion of a cell's local node over free nodes.
    const std::vector<ConstraintSet::Term>& local_expansion(std::size_t cell, std::size_t local) const {
        return cell_terms_[cell * local_size() + local];
    }

private:
    FeSpace() = default;

    std::shared_ptr<const QuadForest> forest_;
    int degree_ = 1;
    MaterialParams params_;
    bool rm_mode_ = false;
    std::uint64_t id_ = 0;
    std::vector<Vec2> positions_;
    std::vector<std::size_t> cell_nodes_;
    std::vector<std::ptrdiff_t> free_index_;
    std::vector<std::size_t> free_nodes_;
    std::size_t n_free_ = 0;
    ConstraintSet constraints_;
    std::vector<std::vector<ConstraintSet::Term>> cell_terms_;
};

/// Displacement field (plus multiplier values) on an FeSpace.
class FeFunction {
public:
    explicit FeFunction(std::shared_ptr<const FeSpace> space);
    FeFunction(std::shared_ptr<const FeSpace> space, Vector coefficients);

    /// Nodal interpolant of `f`; multipliers are zero.
    static FeFunction interpolate(std::shared_ptr<const FeSpace> space, const std::function<Vec2(const Vec2&)>& f);

    const FeSpace& space() const { return *space_; }
    const std::shared_ptr<const FeSpace>& space_ptr() const { return space_; }
    const Vector& coefficients() const { return coeffs_; }
    Vector& coefficients() { return coeffs_; }
    /// Displacement part of the coefficient vector.
    Eigen::Ref<const Vector> displacement() const { return coeffs_.head(space_->n_displacement_dofs()); }

    /// Per-local-node values (ux, uy) of a cell, constraints applied.
    std::vector<Vec2> local_values(std::size_t cell) const;

    Vec2 value(const Vec2& x) const;
    /// grad[i][j] = d u_i / d x_j.
    Mat2 gradient(const Vec2& x) const;

    Vec2 value_in_cell(std::size_t cell, const Vec2& ref) const;
    Mat2 gradient_in_cell(std::size_t cell, const Vec2& ref) const;

private:
    std::shared_ptr<const FeSpace> space_;
    Vector coeffs_;
};

inline Mat2 strain(const Mat2& grad) {
    const double off = 0.5 * (grad[0][1] + grad[1][0]);
    return {{{grad[0][0], off}, {off, grad[1][1]}}};
}

/// C e = lambda tr(e) I + 2 mu e.
inline Mat2 stress(const MaterialParams& p, const Mat2& grad) {
    const Mat2 e = strain(grad);
    const double tr = e[0][0] + e[1][1];
    const double lam = p.lambda();
    const double mu = p.mu();
    return {{{lam * tr + 2 * mu * e[0][0], 2 * mu * e[0][1]}, {2 * mu * e[1][0], lam * tr + 2 * mu * e[1][1]}}};
}

// Matrices below are n_dofs x n_dofs with empty multiplier rows/columns.

/// Vector mass matrix, exact for degree 2k.
SparseMatrix assemble_mass(const FeSpace& space);
/// int grad u : grad v.
SparseMatrix assemble_vector_laplacian(const FeSpace& space);
/// int C e(u) : e(v).
SparseMatrix assemble_elasticity(const FeSpace& space);
/// int_{boundary} u . v.
SparseMatrix assemble_boundary_mass(const FeSpace& space);

/// Columns c_i with (c_i)_j = int r_i . phi_j for r = (1,0), (0,1), (-y,x);
/// n_displacement_dofs x 3.
Eigen::MatrixXd rigid_body_block(const FeSpace& space);

/// Factorised system (1/dt) M_L + A_elast + kappa M_boundary (+ rigid-mode rows).
/// The factorisation is computed once and reused by every solve.
struct ExtraForcing;

class AssembledSystem {
public:
    AssembledSystem(std::shared_ptr<const FeSpace> space, ProximalKind kind, SparseMatrix matrix,
                    SparseMatrix proximal_mass, SparseMatrix stationary);
    AssembledSystem(AssembledSystem&&) noexcept;
    AssembledSystem& operator=(AssembledSystem&&) noexcept;
    ~AssembledSystem();

    const FeSpace& space() const { return *space_; }
    const std::shared_ptr<const FeSpace>& space_ptr() const { return space_; }
    ProximalKind proximal_kind() const { return kind_; }
    const SparseMatrix& matrix() const { return matrix_; }
    /// M_L, unscaled.
    const SparseMatrix& proximal_mass() const { return proximal_mass_; }
    /// A_elast + kappa M_boundary with the rigid-mode block, without the proximal term.
    const SparseMatrix& stationary_operator() const { return stationary_; }

    /// Sparse LDL^T of the displacement block; the rigid-mode multipliers, if
    /// any, are eliminated through their 3x3 Schur complement. Throws
    /// SolverError when the matrix is singular.
    void factorize();
    bool factorized() const { return static_cast<bool>(factor_); }
    int factorization_count() const { return factorizations_; }
    /// Solves with the cached factorisation, computing it on first use.
    Vector solve(const Vector& rhs);

    /// Load of `extra` on this space, cached by address: `extra` must outlive
    /// its use with this system.
    const Vector& extra_load(const ExtraForcing& extra) const;

private:
    std::shared_ptr<const FeSpace> space_;
    ProximalKind kind_;
    SparseMatrix matrix_;
    SparseMatrix proximal_mass_;
    SparseMatrix stationary_;
    struct Factorization;
    std::unique_ptr<Factorization> factor_;
    mutable const ExtraForcing* extra_key_ = nullptr;
    mutable Vector extra_load_;
    int factorizations_ = 0;
};

AssembledSystem assemble_operator(std::shared_ptr<const FeSpace> space, ProximalKind kind);

/// Manufactured right-hand-side contributions.
struct ExtraForcing {
    std::function<Vec2(const Vec2&)> volume;                  ///< added as int volume . v
    std::function<Vec2(const Vec2&, const Vec2&)> boundary;   ///< (x, n) -> datum, added on the boundary
    std::array<double, 3> multiplier_rhs{0.0, 0.0, 0.0};     ///< int u . r_i targets
    int order = 8;                                            ///< quadrature exactness for these terms
};

/// alpha F_u(phi) = -alpha int f_u . phi on every displacement unknown.
Vector assemble_image_load(const FeFunction& u, const ScalarField& T, const ScalarField& R, int q_img);

/// The u-independent manufactured terms; multiplier rows hold the rigid-mode targets.
Vector assemble_extra_load(const FeSpace& space, const ExtraForcing& extra);

/// Load of the stationary problem a(u, v) = alpha F_u(v) + extras, with
/// F_u(v) = -int f_u . v evaluated at `u` using quadrature order `q_img`.
Vector assemble_stationary_load(const FeFunction& u, const ScalarField& T, const ScalarField& R, int q_img,
                                const ExtraForcing* extra = nullptr);

/// IMEX right-hand side (1/dt) M_L u_prev + alpha b(u_prev) + extras.
/// Throws SolverError when u_prev lives on a different space.
Vector assemble_load(const AssembledSystem& system, const FeFunction& u_prev, const ScalarField& T,
                     const ScalarField& R, int q_img, const ExtraForcing* extra = nullptr);

struct Norms {
    double l2 = 0.0;
    double h1 = 0.0;     ///< full H1 norm
    double energy = 0.0; ///< |u|_1 = ||e(u)||_0
};

/// Norms of u, exact for degree 2k.
Norms norms(const FeFunction& u);

/// Norms of u - exact with a per-cell quadrature order.
Norms error_norms(const FeFunction& u, const std::function<Vec2(const Vec2&)>& exact,
                  const std::function<Mat2(const Vec2&)>& exact_gradient,
                  const std::function<int(const CellGeometry&)>& order_for_cell);

/// Nodal interpolation of u_old onto `target`; multipliers are carried over
/// when both spaces have them.
FeFunction transfer(const FeFunction& u_old, std::shared_ptr<const FeSpace> target);

void write_matrix_market(const SparseMatrix& matrix, const std::filesystem::path& path);

} // namespace elasreg
