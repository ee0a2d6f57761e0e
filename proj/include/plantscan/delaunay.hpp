#pragma once

// Incremental 3D Delaunay triangulation (Bowyer-Watson with an infinite
// vertex). Points are inserted in Morton order and located by a randomized
// visibility walk. Conflicts use the strict in-sphere test with exact
// fallback, so co-spherical inputs such as lattices yield a valid, if
// non-unique, triangulation without flat tetrahedra.

#include <algorithm>
#include <array>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "plantscan/cloudcore.hpp"
#include "plantscan/predicates.hpp"

namespace plantscan {

using Tet = std::array<std::uint32_t, 4>;

/// Finite Delaunay tetrahedra over `vertices`. All tetrahedra are positively
/// oriented. `neighbours[t][i]` is the tetrahedron across the face opposite
/// vertex i, or kNoNeighbour on the convex hull.
struct TetComplex {
    static constexpr std::uint32_t kNoNeighbour = 0xffffffffu;

    std::vector<Vec3> vertices;
    std::vector<Tet> tets;
    std::vector<Tet> neighbours;
};

inline double signed_tet_volume(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
    return (b - a).dot((c - a).cross(d - a)) / 6.0;
}

/// Squared circumradius of a non-degenerate tetrahedron.
inline double circumradius2(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
    const Vec3 u = b - a, v = c - a, w = d - a;
    const double den = 2.0 * u.dot(v.cross(w));
    const Vec3 num = u.squaredNorm() * v.cross(w) + v.squaredNorm() * w.cross(u) + w.squaredNorm() * u.cross(v);
    return (num / den).squaredNorm();
}

namespace detail {

class DelaunayBuilder {
public:
    static constexpr std::uint32_t kInf = 0xffffffffu;
    static constexpr std::uint32_t kNone = 0xffffffffu;

    explicit DelaunayBuilder(std::span<const Vec3> pts) : pts_(pts), rng_(0x5eed) {}

    TetComplex run() {
        const auto order = insertion_order();
        const auto seed = initial_simplex(order);
        std::vector<char> used(pts_.size(), 0);
        for (auto s : seed) used[s] = 1;
        build_initial(seed);
        for (auto idx : order) {
            if (used[idx]) continue;
            insert(idx);
        }
        return extract();
    }

private:
    struct Cell {
        std::array<std::uint32_t, 4> v;
        std::array<std::uint32_t, 4> n;
        bool alive = true;
    };

    bool is_ghost(const Cell& c) const { return c.v[0] == kInf || c.v[1] == kInf || c.v[2] == kInf || c.v[3] == kInf; }

    const Vec3& P(std::uint32_t i) const { return pts_[i]; }

    std::vector<std::uint32_t> insertion_order() const {
        const Aabb box = bounding_box(pts_);
        const Vec3 ext = box.extent().cwiseMax(Vec3::Constant(1e-300));
        std::vector<std::pair<std::uint64_t, std::uint32_t>> keyed(pts_.size());
        auto spread = [](std::uint64_t x) {
            x &= 0x1fffff;
            x = (x | x << 32) & 0x1f00000000ffffull;
            x = (x | x << 16) & 0x1f0000ff0000ffull;
            x = (x | x << 8) & 0x100f00f00f00f00full;
            x = (x | x << 4) & 0x10c30c30c30c30c3ull;
            x = (x | x << 2) & 0x1249249249249249ull;
            return x;
        };
        for (std::uint32_t i = 0; i < pts_.size(); ++i) {
            const Vec3 q = ((pts_[i] - box.min).cwiseQuotient(ext) * 2097151.0).cwiseMax(0.0);
            keyed[i] = {spread(static_cast<std::uint64_t>(q.x())) | spread(static_cast<std::uint64_t>(q.y())) << 1 |
                            spread(static_cast<std::uint64_t>(q.z())) << 2,
                        i};
        }
        std::sort(keyed.begin(), keyed.end());
        std::vector<std::uint32_t> order(pts_.size());
        for (std::size_t i = 0; i < keyed.size(); ++i) order[i] = keyed[i].second;
        return order;
    }

    std::array<std::uint32_t, 4> initial_simplex(const std::vector<std::uint32_t>& order) const {
        std::uint32_t a = order.front();
        std::uint32_t b = kNone, c = kNone, d = kNone;
        for (auto i : order)
            if (pts_[i] != pts_[a]) {
                b = i;
                break;
            }
        if (b == kNone) throw DegeneracyError("delaunay3: all points coincide");
        for (auto i : order) {
            const Vec3 n = (P(b) - P(a)).cross(P(i) - P(a));
            if (n.squaredNorm() > 0 && !collinear_exact(a, b, i)) {
                c = i;
                break;
            }
        }
        if (c == kNone) throw DegeneracyError("delaunay3: all points collinear");
        for (auto i : order)
            if (predicates::orient3d(P(a), P(b), P(c), P(i)) != 0) {
                d = i;
                break;
            }
        if (d == kNone) throw DegeneracyError("delaunay3: all points coplanar");
        if (predicates::orient3d(P(a), P(b), P(c), P(d)) < 0) std::swap(b, c);
        return {a, b, c, d};
    }

    bool collinear_exact(std::uint32_t a, std::uint32_t b, std::uint32_t c) const {
        // Collinear iff every coordinate-plane projection has zero 2D orientation.
        const Vec3 &pa = P(a), &pb = P(b), &pc = P(c);
        for (int k = 0; k < 3; ++k) {
            const int i = (k + 1) % 3, j = (k + 2) % 3;
            const mpq_class det = (mpq_class(pb[i]) - pa[i]) * (mpq_class(pc[j]) - pa[j]) -
                                  (mpq_class(pb[j]) - pa[j]) * (mpq_class(pc[i]) - pa[i]);
            if (sgn(det) != 0) return false;
        }
        return true;
    }

    std::uint32_t new_cell(const std::array<std::uint32_t, 4>& v) {
        Cell c{v, {kNone, kNone, kNone, kNone}, true};
        if (!free_.empty()) {
            const auto id = free_.back();
            free_.pop_back();
            cells_[id] = c;
            return id;
        }
        cells_.push_back(c);
        mark_.push_back(0);
        return static_cast<std::uint32_t>(cells_.size() - 1);
    }

    void build_initial(const std::array<std::uint32_t, 4>& s) {
        std::array<std::uint32_t, 5> ids{};
        ids[0] = new_cell(s);
        // Ghost i replaces vertex i by infinity; swapping two finite slots
        // keeps it positively oriented with infinity beyond face i.
        for (int i = 0; i < 4; ++i) {
            auto v = s;
            v[i] = kInf;
            std::swap(v[(i + 1) & 3], v[(i + 2) & 3]);
            ids[i + 1] = new_cell(v);
        }
        for (auto a : ids)
            for (int fa = 0; fa < 4; ++fa)
                for (auto b : ids) {
                    if (a == b) continue;
                    for (int fb = 0; fb < 4; ++fb)
                        if (same_face(cells_[a], fa, cells_[b], fb)) cells_[a].n[fa] = b;
                }
        last_ = ids[0];
    }

    static bool same_face(const Cell& a, int fa, const Cell& b, int fb) {
        int matches = 0;
        for (int m = 0; m < 4; ++m) {
            if (m == fa) continue;
            for (int k = 0; k < 4; ++k)
                if (k != fb && a.v[m] == b.v[k]) ++matches;
        }
        return matches == 3;
    }

    // Orientation of cell c with vertex slot k replaced by point p. For ghost
    // cells the infinite vertex stands for a point beyond the hull face, so
    // substituting p for it tests whether p is outside that face.
    int orient_with(const Cell& c, int k, const Vec3& p) const {
        std::array<const Vec3*, 4> q;
        for (int i = 0; i < 4; ++i) {
            if (i == k)
                q[i] = &p;
            else if (c.v[i] == kInf)
                return 1;  // face contains infinity: never blocks the walk
            else
                q[i] = &pts_[c.v[i]];
        }
        return predicates::orient3d(*q[0], *q[1], *q[2], *q[3]);
    }

    bool in_conflict(std::uint32_t id, const Vec3& p) const {
        const Cell& c = cells_[id];
        int inf = -1;
        for (int i = 0; i < 4; ++i)
            if (c.v[i] == kInf) inf = i;
        if (inf < 0) return predicates::insphere(P(c.v[0]), P(c.v[1]), P(c.v[2]), P(c.v[3]), p) > 0;
        const int o = orient_with(c, inf, p);
        if (o > 0) return true;
        if (o < 0) return false;
        // Coplanar with the hull face: conflict iff strictly inside its
        // circumcircle, i.e. inside the circumsphere of the finite cell behind it.
        const Cell& f = cells_[c.n[inf]];
        return predicates::insphere(P(f.v[0]), P(f.v[1]), P(f.v[2]), P(f.v[3]), p) > 0;
    }

    std::uint32_t locate(const Vec3& p) {
        std::uint32_t cur = last_;
        if (!cells_[cur].alive) {
            for (cur = 0; !cells_[cur].alive; ++cur) {
            }
        }
        std::size_t steps = 0;
        while (true) {
            const Cell& c = cells_[cur];
            if (is_ghost(c)) return cur;  // p is beyond this hull face
            const int start = static_cast<int>(rng_() & 3u);
            int next = -1;
            for (int s = 0; s < 4; ++s) {
                const int i = (start + s) & 3;
                if (orient_with(c, i, p) < 0) {
                    next = i;
                    break;
                }
            }
            if (next < 0) return cur;
            cur = c.n[next];
            if (++steps > 4 * cells_.size() + 64) throw DegeneracyError("delaunay3: point location did not terminate");
        }
    }

    void insert(std::uint32_t pi) {
        const Vec3& p = P(pi);
        std::uint32_t start = locate(p);
        if (!in_conflict(start, p)) {
            // A ghost reached by the walk may be non-conflicting when p is
            // coplanar with the hull face; fall back to its finite neighbour.
            const Cell& c = cells_[start];
            for (int i = 0; i < 4; ++i)
                if (c.v[i] == kInf) start = c.n[i];
            if (!in_conflict(start, p)) throw DegeneracyError("delaunay3: could not seed conflict region");
        }
        ++stamp_;
        cavity_.clear();
        boundary_.clear();
        cavity_.push_back(start);
        mark_[start] = stamp_;
        for (std::size_t q = 0; q < cavity_.size(); ++q) {
            const auto id = cavity_[q];
            for (int i = 0; i < 4; ++i) {
                const auto nb = cells_[id].n[i];
                if (mark_[nb] == stamp_) continue;
                if (in_conflict(nb, p)) {
                    mark_[nb] = stamp_;
                    cavity_.push_back(nb);
                } else {
                    boundary_.push_back({id, i});
                }
            }
        }
        // Retriangulate: one new cell per boundary face, p replacing the
        // cavity vertex (which keeps the orientation positive).
        edges_.clear();
        std::uint32_t any_finite = kNone;
        for (const auto& [old_id, i] : boundary_) {
            auto v = cells_[old_id].v;
            v[i] = pi;
            const auto outside = cells_[old_id].n[i];
            const auto nid = new_cell(v);
            cells_[nid].n[i] = outside;
            Cell& oc = cells_[outside];
            for (int j = 0; j < 4; ++j)
                if (oc.n[j] == old_id) oc.n[j] = nid;
            if (!is_ghost(cells_[nid])) any_finite = nid;
            // Faces through p: pair them up by the edge they share with the boundary face.
            for (int j = 0; j < 4; ++j) {
                if (j == i) continue;
                std::uint32_t a = kNone, b = kNone;
                for (int m = 0; m < 4; ++m) {
                    if (m == i || m == j) continue;
                    (a == kNone ? a : b) = v[m];
                }
                const std::uint64_t key = a < b ? (std::uint64_t(a) << 32 | b) : (std::uint64_t(b) << 32 | a);
                auto it = std::find_if(edges_.begin(), edges_.end(), [&](const auto& e) { return e.key == key; });
                if (it == edges_.end()) {
                    edges_.push_back({key, nid, j});
                } else {
                    cells_[nid].n[j] = it->cell;
                    cells_[it->cell].n[it->face] = nid;
                    *it = edges_.back();
                    edges_.pop_back();
                }
            }
        }
        for (auto id : cavity_) {
            cells_[id].alive = false;
            free_.push_back(id);
        }
        if (any_finite != kNone) last_ = any_finite;
    }

    TetComplex extract() const {
        TetComplex out;
        out.vertices.assign(pts_.begin(), pts_.end());
        std::vector<std::uint32_t> remap(cells_.size(), TetComplex::kNoNeighbour);
        for (std::uint32_t id = 0; id < cells_.size(); ++id) {
            const Cell& c = cells_[id];
            if (!c.alive || is_ghost(c)) continue;
            remap[id] = static_cast<std::uint32_t>(out.tets.size());
            out.tets.push_back(c.v);
        }
        out.neighbours.resize(out.tets.size());
        for (std::uint32_t id = 0; id < cells_.size(); ++id) {
            if (remap[id] == TetComplex::kNoNeighbour) continue;
            for (int i = 0; i < 4; ++i) out.neighbours[remap[id]][i] = remap[cells_[id].n[i]];
        }
        return out;
    }

    struct EdgeSlot {
        std::uint64_t key;
        std::uint32_t cell;
        int face;
    };

    std::span<const Vec3> pts_;
    std::vector<Cell> cells_;
    std::vector<std::uint32_t> free_;
    std::vector<std::uint32_t> mark_;
    std::uint32_t stamp_ = 0;
    std::uint32_t last_ = 0;
    std::vector<std::uint32_t> cavity_;
    std::vector<std::pair<std::uint32_t, int>> boundary_;
    std::vector<EdgeSlot> edges_;
    std::minstd_rand rng_;
};

}  // namespace detail

/// Delaunay tetrahedralisation. Exact duplicate points are triangulated once
/// (later copies are left unreferenced).
/// Throws DegeneracyError when the points do not span 3D.
inline TetComplex delaunay3(std::span<const Vec3> points) {
    if (points.size() < 4) throw DegeneracyError("delaunay3: need at least 4 points");
    for (const auto& p : points)
        if (!is_finite(p)) throw PreconditionError("delaunay3: non-finite point");
    // Drop exact duplicates before triangulating, then map back.
    std::vector<std::uint32_t> idx(points.size());
    std::iota(idx.begin(), idx.end(), 0u);
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) {
        const auto& p = points[a];
        const auto& q = points[b];
        return std::tie(p.x(), p.y(), p.z(), a) < std::tie(q.x(), q.y(), q.z(), b);
    });
    std::vector<Vec3> unique;
    std::vector<std::uint32_t> original;
    unique.reserve(points.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
        if (k > 0 && points[idx[k]] == points[idx[k - 1]]) continue;
        unique.push_back(points[idx[k]]);
        original.push_back(idx[k]);
    }
    if (unique.size() < 4) throw DegeneracyError("delaunay3: fewer than 4 distinct points");
    TetComplex tc = detail::DelaunayBuilder(unique).run();
    tc.vertices.assign(points.begin(), points.end());
    for (auto& t : tc.tets)
        for (auto& v : t) v = original[v];
    return tc;
}

}  // namespace plantscan
