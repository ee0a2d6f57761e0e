#pragma once

// Alpha-complex surface reconstruction and mesh metrics.

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "plantscan/cloudcore.hpp"
#include "plantscan/delaunay.hpp"

namespace plantscan {

/// Squared-radius threshold (mm²) used for plant meshes.
inline constexpr double kDefaultAlpha = 0.6;

using Triangle = std::array<std::uint32_t, 3>;

struct AlphaComplexMesh {
    double alpha = kDefaultAlpha;
    std::vector<Vec3> vertices;
    std::vector<Tet> kept;                   // tetrahedra with circumradius² <= alpha
    std::vector<Triangle> boundary;          // outward-oriented faces of exactly one kept tet
    std::vector<std::uint32_t> boundary_tet; // index into `kept` owning each boundary face
};

namespace detail {

// Faces of a positively oriented tetrahedron with outward winding, face i
// opposite vertex i.
inline constexpr std::array<std::array<int, 3>, 4> kOutwardFaces{{{1, 2, 3}, {0, 3, 2}, {0, 1, 3}, {0, 2, 1}}};

inline std::uint64_t edge_key(std::uint32_t a, std::uint32_t b) {
    if (a > b) std::swap(a, b);
    return std::uint64_t(a) << 32 | b;
}

}  // namespace detail

/// Keeps the Delaunay tetrahedra whose squared circumradius is at most
/// `alpha`, and extracts the boundary between kept and discarded space.
inline AlphaComplexMesh alpha_shape(const TetComplex& dt, double alpha) {
    if (!(alpha > 0))
        throw PreconditionError("alpha_shape: alpha must be > 0 (at alpha = 0 the alpha-shape is the point set itself)");
    AlphaComplexMesh mesh;
    mesh.alpha = alpha;
    mesh.vertices = dt.vertices;
    const auto& V = dt.vertices;
    std::vector<char> keep(dt.tets.size(), 0);
    std::vector<std::uint32_t> kept_index(dt.tets.size(), 0);
    for (std::size_t t = 0; t < dt.tets.size(); ++t) {
        const auto& c = dt.tets[t];
        if (circumradius2(V[c[0]], V[c[1]], V[c[2]], V[c[3]]) <= alpha) {
            keep[t] = 1;
            kept_index[t] = static_cast<std::uint32_t>(mesh.kept.size());
            mesh.kept.push_back(c);
        }
    }
    for (std::size_t t = 0; t < dt.tets.size(); ++t) {
        if (!keep[t]) continue;
        const auto& c = dt.tets[t];
        for (int i = 0; i < 4; ++i) {
            const auto nb = dt.neighbours[t][i];
            if (nb != TetComplex::kNoNeighbour && keep[nb]) continue;
            const auto& f = detail::kOutwardFaces[static_cast<std::size_t>(i)];
            mesh.boundary.push_back({c[f[0]], c[f[1]], c[f[2]]});
            mesh.boundary_tet.push_back(kept_index[t]);
        }
    }
    return mesh;
}

inline AlphaComplexMesh alpha_shape(std::span<const Vec3> points, double alpha = kDefaultAlpha) {
    if (!(alpha > 0))
        throw PreconditionError("alpha_shape: alpha must be > 0 (at alpha = 0 the alpha-shape is the point set itself)");
    return alpha_shape(delaunay3(points), alpha);
}

inline double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) { return 0.5 * (b - a).cross(c - a).norm(); }

inline double surface_area(const AlphaComplexMesh& mesh) {
    if (mesh.boundary.empty()) throw PreconditionError("surface_area: mesh has no boundary triangles");
    double area = 0.0;
    for (const auto& t : mesh.boundary) area += triangle_area(mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]);
    return area;
}

/// True when every boundary edge is shared by an even, non-zero number of
/// boundary triangles, so the boundary encloses a volume.
inline bool boundary_is_closed(const AlphaComplexMesh& mesh) {
    if (mesh.boundary.empty()) return false;
    std::unordered_map<std::uint64_t, int> count;
    count.reserve(mesh.boundary.size() * 2);
    for (const auto& t : mesh.boundary)
        for (int e = 0; e < 3; ++e) ++count[detail::edge_key(t[e], t[(e + 1) % 3])];
    return std::all_of(count.begin(), count.end(), [](const auto& kv) { return kv.second % 2 == 0; });
}

/// True when every boundary edge has exactly two incident boundary triangles
/// traversed in opposite directions.
inline bool boundary_is_manifold(const AlphaComplexMesh& mesh) {
    if (mesh.boundary.empty()) return false;
    std::unordered_map<std::uint64_t, int> directed;
    directed.reserve(mesh.boundary.size() * 3);
    for (const auto& t : mesh.boundary)
        for (int e = 0; e < 3; ++e) {
            const std::uint64_t key = std::uint64_t(t[e]) << 32 | t[(e + 1) % 3];
            if (++directed[key] > 1) return false;
        }
    for (const auto& [key, n] : directed) {
        const std::uint64_t rev = (key << 32) | (key >> 32);
        if (!directed.count(rev)) return false;
    }
    return true;
}

/// Connected components of the boundary surface (triangles joined by edges).
inline std::size_t boundary_components(const AlphaComplexMesh& mesh) {
    std::vector<std::size_t> parent(mesh.boundary.size());
    std::iota(parent.begin(), parent.end(), std::size_t{0});
    auto find = [&](std::size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    std::unordered_map<std::uint64_t, std::size_t> first;
    for (std::size_t i = 0; i < mesh.boundary.size(); ++i) {
        const auto& t = mesh.boundary[i];
        for (int e = 0; e < 3; ++e) {
            auto [it, inserted] = first.try_emplace(detail::edge_key(t[e], t[(e + 1) % 3]), i);
            if (!inserted) parent[find(i)] = find(it->second);
        }
    }
    std::size_t n = 0;
    for (std::size_t i = 0; i < parent.size(); ++i) n += find(i) == i;
    return n;
}

struct VolumeReport {
    double volume = 0.0;                    // sum of kept tetrahedron volumes
    std::optional<double> boundary_volume;  // divergence-theorem sum, closed boundaries only
};

inline VolumeReport mesh_volume_report(const AlphaComplexMesh& mesh) {
    VolumeReport r;
    const auto& V = mesh.vertices;
    for (const auto& c : mesh.kept) r.volume += std::abs(signed_tet_volume(V[c[0]], V[c[1]], V[c[2]], V[c[3]]));
    if (boundary_is_closed(mesh)) {
        double s = 0.0;
        for (const auto& t : mesh.boundary) s += V[t[0]].dot(V[t[1]].cross(V[t[2]]));
        r.boundary_volume = s / 6.0;
    }
    return r;
}

inline double mesh_volume(const AlphaComplexMesh& mesh) { return mesh_volume_report(mesh).volume; }

/// ASCII PLY with the referenced vertices and the oriented boundary faces.
inline void save_mesh(const std::filesystem::path& path, const AlphaComplexMesh& mesh) {
    std::vector<std::uint32_t> remap(mesh.vertices.size(), TetComplex::kNoNeighbour);
    std::vector<std::uint32_t> used;
    for (const auto& t : mesh.boundary)
        for (auto v : t)
            if (remap[v] == TetComplex::kNoNeighbour) {
                remap[v] = static_cast<std::uint32_t>(used.size());
                used.push_back(v);
            }
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "ply\nformat ascii 1.0\ncomment alpha " << mesh.alpha << "\nelement vertex " << used.size()
        << "\nproperty double x\nproperty double y\nproperty double z\nelement face " << mesh.boundary.size()
        << "\nproperty list uchar uint vertex_indices\nend_header\n";
    char buf[96];
    for (auto v : used) {
        const auto& p = mesh.vertices[v];
        out.write(buf, std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g\n", p.x(), p.y(), p.z()));
    }
    for (const auto& t : mesh.boundary) out << "3 " << remap[t[0]] << ' ' << remap[t[1]] << ' ' << remap[t[2]] << '\n';
    if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace plantscan
