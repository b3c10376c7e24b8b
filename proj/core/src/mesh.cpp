// SPDX-License-Identifier: Apache-2.0

#include "elasreg/mesh.hpp"

#include "elasreg/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_set>

namespace elasreg {

MortonKey MortonKey::encode(int level, std::uint32_t i, std::uint32_t j) {
    if (level < 0 || level > kMaxLevel) {
        throw MeshError("MortonKey: level out of range");
    }
    const std::uint64_t n = std::uint64_t{1} << level;
    if (i >= n || j >= n) {
        throw MeshError("MortonKey: coordinates out of range for level " + std::to_string(level));
    }
    std::uint64_t index = 0;
    for (int b = 0; b < level; ++b) {
        index |= static_cast<std::uint64_t>((i >> b) & 1U) << (2 * b);
        index |= static_cast<std::uint64_t>((j >> b) & 1U) << (2 * b + 1);
    }
    return {level, index};
}

std::pair<std::uint32_t, std::uint32_t> MortonKey::decode() const {
    std::uint32_t i = 0;
    std::uint32_t j = 0;
    for (int b = 0; b < level; ++b) {
        i |= static_cast<std::uint32_t>((index >> (2 * b)) & 1U) << b;
        j |= static_cast<std::uint32_t>((index >> (2 * b + 1)) & 1U) << b;
    }
    return {i, j};
}

namespace {

struct NeighborCoord {
    std::int64_t i;
    std::int64_t j;
};

NeighborCoord step(std::int64_t i, std::int64_t j, Side s) {
    switch (s) {
    case Side::Left: return {i - 1, j};
    case Side::Right: return {i + 1, j};
    case Side::Bottom: return {i, j - 1};
    case Side::Top: return {i, j + 1};
    }
    return {i, j};
}

bool in_range(int level, std::int64_t i, std::int64_t j) {
    const std::int64_t n = std::int64_t{1} << level;
    return i >= 0 && j >= 0 && i < n && j < n;
}

// Children of the same-level neighbour cell (i, j) that touch the side `s` of
// the cell we came from, ordered by increasing coordinate along the edge.
std::array<MortonKey, 2> touching_children(int level, std::int64_t i, std::int64_t j, Side s) {
    const auto ci = static_cast<std::uint32_t>(2 * i);
    const auto cj = static_cast<std::uint32_t>(2 * j);
    switch (s) {
    case Side::Right: return {MortonKey::encode(level + 1, ci, cj), MortonKey::encode(level + 1, ci, cj + 1)};
    case Side::Left: return {MortonKey::encode(level + 1, ci + 1, cj), MortonKey::encode(level + 1, ci + 1, cj + 1)};
    case Side::Top: return {MortonKey::encode(level + 1, ci, cj), MortonKey::encode(level + 1, ci + 1, cj)};
    case Side::Bottom:
        return {MortonKey::encode(level + 1, ci, cj + 1), MortonKey::encode(level + 1, ci + 1, cj + 1)};
    }
    return {};
}

constexpr std::array<Side, 4> kSides{Side::Left, Side::Right, Side::Bottom, Side::Top};

} // namespace

QuadForest::QuadForest(Rect domain) : QuadForest(domain, {MortonKey{0, 0}}) {}

QuadForest::QuadForest(Rect domain, std::vector<MortonKey> leaves) : domain_(domain), leaves_(std::move(leaves)) {
    if (!(domain_.width() > 0.0 && domain_.height() > 0.0)) {
        throw MeshError("QuadForest: coarse cell must have positive side lengths");
    }
    std::sort(leaves_.begin(), leaves_.end());
    rebuild_index();
}

void QuadForest::rebuild_index() {
    index_.clear();
    index_.reserve(leaves_.size() * 2);
    for (std::size_t c = 0; c < leaves_.size(); ++c) {
        index_.emplace(leaves_[c].packed(), c);
    }
}

std::optional<std::size_t> QuadForest::find(const MortonKey& key) const {
    auto it = index_.find(key.packed());
    if (it == index_.end()) {
        return std::nullopt;
    }
    return it->second;
}

int QuadForest::max_level() const {
    int lmax = 0;
    for (const auto& k : leaves_) {
        lmax = std::max(lmax, k.level);
    }
    return lmax;
}

std::optional<std::size_t> QuadForest::containing_leaf(int level, std::int64_t i, std::int64_t j) const {
    MortonKey key = MortonKey::encode(level, static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j));
    while (true) {
        if (auto c = find(key)) {
            return c;
        }
        if (key.level == 0) {
            return std::nullopt;
        }
        key = key.parent();
    }
}

QuadForest QuadForest::uniform_refine(int n) const {
    if (n < 0) {
        throw MeshError("uniform_refine: negative refinement count");
    }
    std::vector<MortonKey> current(leaves_.begin(), leaves_.end());
    for (int r = 0; r < n; ++r) {
        std::vector<MortonKey> next;
        next.reserve(current.size() * 4);
        for (const auto& k : current) {
            for (int c = 0; c < 4; ++c) {
                next.push_back(k.child(c));
            }
        }
        current = std::move(next);
    }
    return QuadForest(domain_, std::move(current));
}

std::vector<MortonKey> QuadForest::balance(std::vector<MortonKey> leaves) {
    while (true) {
        QuadForest probe(Rect{}, leaves);
        std::unordered_set<std::uint64_t> marked;
        for (const auto& key : probe.leaves_) {
            const auto [i, j] = key.decode();
            for (Side s : kSides) {
                const auto [ni, nj] = step(i, j, s);
                if (!in_range(key.level, ni, nj)) {
                    continue;
                }
                const auto r = probe.containing_leaf(key.level, ni, nj);
                if (r && probe.leaves_[*r].level < key.level - 1) {
                    marked.insert(probe.leaves_[*r].packed());
                }
            }
        }
        if (marked.empty()) {
            return std::vector<MortonKey>(probe.leaves_.begin(), probe.leaves_.end());
        }
        std::vector<MortonKey> next;
        next.reserve(leaves.size() + 3 * marked.size());
        for (const auto& key : probe.leaves_) {
            if (marked.contains(key.packed())) {
                for (int c = 0; c < 4; ++c) {
                    next.push_back(key.child(c));
                }
            } else {
                next.push_back(key);
            }
        }
        leaves = std::move(next);
    }
}

AdaptResult QuadForest::adapt(std::span<const MortonKey> refine, std::span<const MortonKey> coarsen) const {
    std::unordered_set<std::uint64_t> refine_set;
    std::unordered_set<std::uint64_t> coarsen_set;
    for (const auto& k : refine) {
        if (!find(k)) {
            throw MeshError("adapt: refine key is not a leaf");
        }
        refine_set.insert(k.packed());
    }
    for (const auto& k : coarsen) {
        if (!find(k)) {
            throw MeshError("adapt: coarsen key is not a leaf");
        }
        if (refine_set.contains(k.packed())) {
            throw MeshError("adapt: key marked for both refinement and coarsening");
        }
        coarsen_set.insert(k.packed());
    }

    std::vector<MortonKey> next;
    next.reserve(leaves_.size() + 3 * refine_set.size());
    for (const auto& key : leaves_) {
        if (refine_set.contains(key.packed())) {
            for (int c = 0; c < 4; ++c) {
                next.push_back(key.child(c));
            }
        } else {
            next.push_back(key);
        }
    }
    QuadForest refined(domain_, balance(std::move(next)));

    // Collapse complete sibling groups whose parent would stay balanced.
    std::unordered_set<std::uint64_t> collapse;
    for (const auto& key : coarsen) {
        if (key.level == 0) {
            continue;
        }
        const MortonKey parent = key.parent();
        if (collapse.contains(parent.packed())) {
            continue;
        }
        bool complete = true;
        for (int c = 0; c < 4 && complete; ++c) {
            const MortonKey sib = parent.child(c);
            complete = coarsen_set.contains(sib.packed()) && refined.find(sib).has_value();
        }
        if (!complete) {
            continue;
        }
        const auto [pi, pj] = parent.decode();
        bool balanced = true;
        for (Side s : kSides) {
            const auto [ni, nj] = step(pi, pj, s);
            if (!in_range(parent.level, ni, nj) || refined.containing_leaf(parent.level, ni, nj)) {
                continue;
            }
            for (const auto& child : touching_children(parent.level, ni, nj, s)) {
                if (!refined.find(child)) {
                    balanced = false;
                }
            }
        }
        if (balanced) {
            collapse.insert(parent.packed());
        }
    }

    std::vector<MortonKey> final_leaves;
    final_leaves.reserve(refined.size());
    for (const auto& key : refined.leaves_) {
        if (key.level > 0 && collapse.contains(key.parent().packed())) {
            if (key.child_id() == 0) {
                final_leaves.push_back(key.parent());
            }
        } else {
            final_leaves.push_back(key);
        }
    }

    AdaptResult result{QuadForest(domain_, std::move(final_leaves)), {}};
    result.provenance.reserve(result.forest.size());
    for (const auto& key : result.forest.leaves_) {
        if (auto old = find(key)) {
            result.provenance.push_back({Provenance::Kind::Same, {*old}});
            continue;
        }
        if (collapse.contains(key.packed())) {
            Provenance p{Provenance::Kind::ParentOf, {}};
            for (int c = 0; c < 4; ++c) {
                p.old_cells.push_back(*find(key.child(c)));
            }
            result.provenance.push_back(std::move(p));
            continue;
        }
        MortonKey anc = key;
        std::optional<std::size_t> old;
        while (!old && anc.level > 0) {
            anc = anc.parent();
            old = find(anc);
        }
        if (!old) {
            throw MeshError("adapt: leaf without provenance");
        }
        result.provenance.push_back({Provenance::Kind::ChildOf, {*old}});
    }
    return result;
}

std::size_t QuadForest::locate(const Vec2& x) const {
    const Vec2 xc = domain_.clamp(x);
    const double scale = static_cast<double>(std::uint64_t{1} << kMaxLevel);
    auto lattice = [&](double v, double lo, double len) {
        const double s = (v - lo) / len * scale;
        return std::min(static_cast<std::uint64_t>(std::max(s, 0.0)), (std::uint64_t{1} << kMaxLevel) - 1);
    };
    const std::uint64_t I = lattice(xc[0], domain_.lo[0], domain_.width());
    const std::uint64_t J = lattice(xc[1], domain_.lo[1], domain_.height());
    for (int level = 0; level <= kMaxLevel; ++level) {
        const int shift = kMaxLevel - level;
        const MortonKey key =
            MortonKey::encode(level, static_cast<std::uint32_t>(I >> shift), static_cast<std::uint32_t>(J >> shift));
        if (auto c = find(key)) {
            return *c;
        }
    }
    throw MeshError("locate: forest does not cover the query point");
}

CellGeometry QuadForest::cell_geometry(const MortonKey& key) const {
    const auto [i, j] = key.decode();
    const double n = static_cast<double>(std::uint64_t{1} << key.level);
    const double hx = domain_.width() / n;
    const double hy = domain_.height() / n;
    CellGeometry g;
    g.lo = {domain_.lo[0] + i * hx, domain_.lo[1] + j * hy};
    g.hi = {g.lo[0] + hx, g.lo[1] + hy};
    g.vertices = {Vec2{g.lo[0], g.lo[1]}, Vec2{g.hi[0], g.lo[1]}, Vec2{g.lo[0], g.hi[1]}, Vec2{g.hi[0], g.hi[1]}};
    g.diameter = std::hypot(hx, hy);
    g.jacobian = {hx, hy};
    return g;
}

CellGeometry QuadForest::cell_geometry(std::size_t cell) const {
    if (cell >= leaves_.size()) {
        throw MeshError("cell_geometry: not a leaf");
    }
    return cell_geometry(leaves_[cell]);
}

std::vector<Facet> QuadForest::facets() const {
    std::vector<Facet> out;
    out.reserve(2 * leaves_.size() + 8);
    for (std::size_t c = 0; c < leaves_.size(); ++c) {
        const MortonKey& key = leaves_[c];
        const auto [i, j] = key.decode();
        const CellGeometry g = cell_geometry(key);
        for (Side s : kSides) {
            const double len = (s == Side::Left || s == Side::Right) ? g.jacobian[1] : g.jacobian[0];
            const auto [ni, nj] = step(i, j, s);
            if (!in_range(key.level, ni, nj)) {
                out.push_back({FacetKind::Boundary, c, s, std::nullopt, len, side_normal(s), {}});
                continue;
            }
            if (const auto r = containing_leaf(key.level, ni, nj)) {
                const int lr = leaves_[*r].level;
                if (lr == key.level) {
                    if (c < *r) {
                        out.push_back({FacetKind::Conforming, c, s, *r, len, side_normal(s), {}});
                    }
                } else if (lr < key.level - 1) {
                    throw MeshError("facets: forest is not 2:1 balanced");
                }
                continue;
            }
            const auto kids = touching_children(key.level, ni, nj, s);
            Facet f{FacetKind::Nonconforming, c, s, std::nullopt, len, side_normal(s), {}};
            for (int q = 0; q < 2; ++q) {
                const auto fine = find(kids[q]);
                if (!fine) {
                    throw MeshError("facets: forest is not 2:1 balanced");
                }
                f.subfacets.push_back({*fine, 0.5 * q, 0.5 * (q + 1), 0.5 * len});
            }
            out.push_back(std::move(f));
        }
    }
    return out;
}

bool QuadForest::is_balanced() const {
    for (const auto& key : leaves_) {
        const auto [i, j] = key.decode();
        for (Side s : kSides) {
            const auto [ni, nj] = step(i, j, s);
            if (!in_range(key.level, ni, nj)) {
                continue;
            }
            const auto r = containing_leaf(key.level, ni, nj);
            if (r && leaves_[*r].level < key.level - 1) {
                return false;
            }
        }
    }
    return true;
}

bool QuadForest::tiles_domain() const {
    double area = 0.0;
    for (std::size_t c = 0; c < leaves_.size(); ++c) {
        const MortonKey& key = leaves_[c];
        area += std::ldexp(1.0, -2 * key.level);
        if (c + 1 < leaves_.size()) {
            const std::uint64_t span = std::uint64_t{1} << (2 * (kMaxLevel - key.level));
            const MortonKey& next = leaves_[c + 1];
            if (next.anchor() < key.anchor() + span) {
                return false; // overlap: next lies inside the current leaf
            }
        }
    }
    return std::abs(area - 1.0) <= 1e-12;
}

void QuadForest::write_vtk(const std::filesystem::path& path,
                           std::span<const std::pair<std::string, std::span<const double>>> cell_fields) const {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out.precision(12);
    out << "# vtk DataFile Version 3.0\nelasreg quadtree\nASCII\nDATASET UNSTRUCTURED_GRID\n";
    out << "POINTS " << 4 * leaves_.size() << " double\n";
    for (const auto& key : leaves_) {
        const CellGeometry g = cell_geometry(key);
        out << g.lo[0] << ' ' << g.lo[1] << " 0\n"
            << g.hi[0] << ' ' << g.lo[1] << " 0\n"
            << g.hi[0] << ' ' << g.hi[1] << " 0\n"
            << g.lo[0] << ' ' << g.hi[1] << " 0\n";
    }
    out << "CELLS " << leaves_.size() << ' ' << 5 * leaves_.size() << '\n';
    for (std::size_t c = 0; c < leaves_.size(); ++c) {
        out << "4 " << 4 * c << ' ' << 4 * c + 1 << ' ' << 4 * c + 2 << ' ' << 4 * c + 3 << '\n';
    }
    out << "CELL_TYPES " << leaves_.size() << '\n';
    for (std::size_t c = 0; c < leaves_.size(); ++c) {
        out << "9\n";
    }
    out << "CELL_DATA " << leaves_.size() << "\nSCALARS level int 1\nLOOKUP_TABLE default\n";
    for (const auto& key : leaves_) {
        out << key.level << '\n';
    }
    for (const auto& [name, values] : cell_fields) {
        if (values.size() != leaves_.size()) {
            throw MeshError("write_vtk: field '" + name + "' has wrong length");
        }
        out << "SCALARS " << name << " double 1\nLOOKUP_TABLE default\n";
        for (double v : values) {
            out << v << '\n';
        }
    }
}

} // namespace elasreg
