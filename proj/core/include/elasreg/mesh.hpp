// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "elasreg/geometry.hpp"

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace elasreg {

/// Deepest supported refinement level.
inline constexpr int kMaxLevel = 28;

/// Quadtree cell address: refinement level plus Z-order index within that level.
///
/// Keys order depth-first along the Morton curve: an ancestor precedes its
/// descendants, and the four children of a cell are contiguous.
struct MortonKey {
    int level = 0;
    std::uint64_t index = 0;

    /// Interleaves (i, j) with the x bit least significant. Throws MeshError
    /// when a coordinate is outside [0, 2^level).
    static MortonKey encode(int level, std::uint32_t i, std::uint32_t j);
    std::pair<std::uint32_t, std::uint32_t> decode() const;

    MortonKey parent() const { return {level - 1, index >> 2}; }
    MortonKey child(int c) const { return {level + 1, (index << 2) | static_cast<std::uint64_t>(c)}; }
    int child_id() const { return static_cast<int>(index & 3U); }

    /// Position of the cell's first descendant at kMaxLevel.
    std::uint64_t anchor() const { return index << (2 * (kMaxLevel - level)); }
    std::uint64_t packed() const { return (static_cast<std::uint64_t>(level) << 58) | index; }

    friend bool operator==(const MortonKey&, const MortonKey&) = default;
    friend std::strong_ordering operator<=>(const MortonKey& a, const MortonKey& b) {
        if (auto c = a.anchor() <=> b.anchor(); c != 0) {
            return c;
        }
        return a.level <=> b.level;
    }
};

/// Cell side, numbered -x, +x, -y, +y.
enum class Side : int { Left = 0, Right = 1, Bottom = 2, Top = 3 };

inline Side opposite(Side s) { return static_cast<Side>(static_cast<int>(s) ^ 1); }

/// Outward unit normal of a side.
inline Vec2 side_normal(Side s) {
    switch (s) {
    case Side::Left: return {-1.0, 0.0};
    case Side::Right: return {1.0, 0.0};
    case Side::Bottom: return {0.0, -1.0};
    case Side::Top: return {0.0, 1.0};
    }
    return {0.0, 0.0};
}

struct CellGeometry {
    Vec2 lo;
    Vec2 hi;
    std::array<Vec2, 4> vertices; ///< Z-order: (lo,lo), (hi,lo), (lo,hi), (hi,hi)
    double diameter;              ///< h_K, the cell diagonal
    Vec2 jacobian;                ///< diagonal of the reference-to-physical map

    Vec2 map(const Vec2& ref) const { return {lo[0] + ref[0] * jacobian[0], lo[1] + ref[1] * jacobian[1]}; }
    double area() const { return jacobian[0] * jacobian[1]; }
};

enum class FacetKind { Conforming, Nonconforming, Boundary };

/// Fine-side piece of a nonconforming facet.
struct SubFacet {
    std::size_t cell;  ///< fine leaf
    double t0, t1;     ///< occupied interval of the coarse edge, in [0, 1]
    double length;     ///< physical length, h_e of the piece
};

/// One mesh edge. For nonconforming facets the owner is the coarse cell and
/// the fine neighbours are listed in `subfacets`; otherwise the owner is the
/// lower Z-order cell. Normals point out of the owner.
struct Facet {
    FacetKind kind;
    std::size_t owner;
    Side owner_side;
    std::optional<std::size_t> neighbor; ///< conforming facets only
    double h_e;
    Vec2 normal;
    std::vector<SubFacet> subfacets;
};

/// How a leaf of an adapted forest relates to the forest it came from.
struct Provenance {
    enum class Kind { Same, ChildOf, ParentOf } kind;
    std::vector<std::size_t> old_cells; ///< one entry for Same/ChildOf, four for ParentOf
};

class QuadForest;

struct AdaptResult;

/// 2:1-balanced quadtree over a single rectangular coarse cell, leaves stored
/// in Z-order. Instances are immutable; refinement returns a new forest.
class QuadForest {
public:
    explicit QuadForest(Rect domain);

    /// Builds a forest from an arbitrary leaf set; leaves are sorted but not
    /// otherwise validated (see tiles_domain / is_balanced).
    QuadForest(Rect domain, std::vector<MortonKey> leaves);

    const Rect& domain() const { return domain_; }
    std::size_t size() const { return leaves_.size(); }
    std::span<const MortonKey> leaves() const { return leaves_; }
    const MortonKey& leaf(std::size_t i) const { return leaves_[i]; }
    std::optional<std::size_t> find(const MortonKey& key) const;
    int max_level() const;

    QuadForest uniform_refine(int n) const;

    /// Refines `refine`, collapses complete sibling groups in `coarsen`, then
    /// restores 2:1 balance by refinement. Refinement wins over coarsening and
    /// collapses that would break balance are skipped. Throws MeshError for
    /// keys that are not current leaves or appear in both sets.
    AdaptResult adapt(std::span<const MortonKey> refine, std::span<const MortonKey> coarsen) const;

    /// Leaf containing `x`, after clamping x to the domain. Points on shared
    /// edges resolve to the cell on the greater-coordinate side.
    std::size_t locate(const Vec2& x) const;

    CellGeometry cell_geometry(std::size_t cell) const;
    CellGeometry cell_geometry(const MortonKey& key) const;

    /// Throws MeshError when the forest is unbalanced.
    std::vector<Facet> facets() const;

    bool is_balanced() const;
    /// Leaves cover the coarse cell exactly once: no leaf overlaps its Z-order
    /// successor and the dyadic areas sum to the coarse-cell area.
    bool tiles_domain() const;

    /// Legacy ASCII VTK unstructured grid, with `level` and any extra cell fields.
    void write_vtk(const std::filesystem::path& path,
                   std::span<const std::pair<std::string, std::span<const double>>> cell_fields = {}) const;

private:
    // Leaf containing the same-level cell at (level, i, j), searching ancestors.
    std::optional<std::size_t> containing_leaf(int level, std::int64_t i, std::int64_t j) const;
    void rebuild_index();
    static std::vector<MortonKey> balance(std::vector<MortonKey> leaves);

    Rect domain_;
    std::vector<MortonKey> leaves_;
    std::unordered_map<std::uint64_t, std::size_t> index_;
};

struct AdaptResult {
    QuadForest forest;
    std::vector<Provenance> provenance; ///< one per leaf of `forest`
};

} // namespace elasreg
