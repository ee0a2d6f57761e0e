#pragma once

// Point-cloud data model, kd-tree index, voxel downsampling and .xyz/.ply I/O.
// All lengths are millimetres.

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <queue>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "plantscan/error.hpp"

namespace plantscan {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Scanner sampling resolution (mm) of the reference laser scanner.
inline constexpr double kScannerResolution = 0.25;

inline bool is_finite(const Vec3& p) { return std::isfinite(p.x()) && std::isfinite(p.y()) && std::isfinite(p.z()); }

/// Ordered set of points. `intensity` is either empty or parallel to `points`
/// and holds values normalised to [0,1]; it is carried along but never used by
/// the algorithms.
struct PointCloud {
    std::vector<Vec3> points;
    std::vector<double> intensity;
    std::optional<int> view_id;
    std::optional<std::string> timestamp;

    PointCloud() = default;
    explicit PointCloud(std::vector<Vec3> pts) : points(std::move(pts)) {}

    std::size_t size() const noexcept { return points.size(); }
    bool empty() const noexcept { return points.empty(); }
    bool has_intensity() const noexcept { return !intensity.empty(); }
    const Vec3& operator[](std::size_t i) const { return points[i]; }

    void push_back(const Vec3& p) { points.push_back(p); }
    void push_back(const Vec3& p, double value) {
        points.push_back(p);
        intensity.push_back(value);
    }

    /// Appends `other`; intensity is kept only if both sides carry it.
    void append(const PointCloud& other) {
        const bool keep = (empty() || has_intensity()) && other.has_intensity();
        points.insert(points.end(), other.points.begin(), other.points.end());
        if (keep)
            intensity.insert(intensity.end(), other.intensity.begin(), other.intensity.end());
        else
            intensity.clear();
    }

    void validate() const {
        for (std::size_t i = 0; i < points.size(); ++i)
            if (!is_finite(points[i]))
                throw PreconditionError("point " + std::to_string(i) + " is not finite");
        if (!intensity.empty() && intensity.size() != points.size())
            throw PreconditionError("intensity channel size does not match point count");
    }
};

struct Aabb {
    Vec3 min;
    Vec3 max;

    Vec3 centre() const { return 0.5 * (min + max); }
    Vec3 extent() const { return max - min; }
    bool contains(const Vec3& p, double slack = 0.0) const {
        return (p.array() >= min.array() - slack).all() && (p.array() <= max.array() + slack).all();
    }
    void expand(const Vec3& p) {
        min = min.cwiseMin(p);
        max = max.cwiseMax(p);
    }
};

inline Aabb bounding_box(std::span<const Vec3> points) {
    if (points.empty()) throw EmptyCloudError("bounding_box: empty cloud");
    Aabb box{points.front(), points.front()};
    for (const auto& p : points) box.expand(p);
    return box;
}

inline Aabb bounding_box(const PointCloud& cloud) { return bounding_box(std::span<const Vec3>(cloud.points)); }

inline Vec3 centroid(std::span<const Vec3> points) {
    if (points.empty()) throw EmptyCloudError("centroid: empty point set");
    Vec3 c = Vec3::Zero();
    for (const auto& p : points) c += p;
    return c / static_cast<double>(points.size());
}

// ---------------------------------------------------------------------------
// Spatial index

struct Neighbour {
    std::size_t index;
    double dist2;

    friend bool operator<(const Neighbour& a, const Neighbour& b) {
        return std::tie(a.dist2, a.index) < std::tie(b.dist2, b.index);
    }
    friend bool operator==(const Neighbour& a, const Neighbour& b) = default;
};

struct KnnResult {
    std::vector<Neighbour> neighbours;  // ascending (distance, index)
    bool clamped = false;               // requested k exceeded the cloud size

    std::vector<std::size_t> indices() const {
        std::vector<std::size_t> out;
        out.reserve(neighbours.size());
        for (const auto& n : neighbours) out.push_back(n.index);
        return out;
    }
};

/// Static kd-tree over a borrowed point array. The points must outlive the
/// index. Read-only after construction, so concurrent queries are safe.
/// Results are exact and ties are broken by lowest point index.
class SpatialIndex {
public:
    explicit SpatialIndex(std::span<const Vec3> points, std::size_t leaf_size = 8)
        : pts_(points), order_(points.size()), leaf_size_(std::max<std::size_t>(1, leaf_size)) {
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        if (!pts_.empty()) {
            nodes_.reserve(2 * pts_.size() / leaf_size_ + 1);
            build(0, order_.size());
        }
    }
    explicit SpatialIndex(const PointCloud& cloud) : SpatialIndex(std::span<const Vec3>(cloud.points)) {}

    std::size_t size() const noexcept { return pts_.size(); }
    std::span<const Vec3> points() const noexcept { return pts_; }

    KnnResult knn(const Vec3& query, std::size_t k) const {
        if (k == 0) throw PreconditionError("knn: k must be >= 1");
        if (pts_.empty()) throw EmptyCloudError("knn: empty cloud");
        KnnResult res;
        if (k > pts_.size()) {
            k = pts_.size();
            res.clamped = true;
        }
        std::priority_queue<Neighbour> heap;  // max-heap on (dist2, index)
        search_knn(0, query, k, heap);
        res.neighbours.resize(heap.size());
        for (std::size_t i = heap.size(); i-- > 0;) {
            res.neighbours[i] = heap.top();
            heap.pop();
        }
        return res;
    }

    Neighbour nearest(const Vec3& query) const { return knn(query, 1).neighbours.front(); }

    /// All points with squared distance <= radius², ascending (distance, index).
    std::vector<Neighbour> radius(const Vec3& query, double r) const {
        std::vector<Neighbour> out;
        if (pts_.empty()) return out;
        search_radius(0, query, r * r, out);
        std::sort(out.begin(), out.end());
        return out;
    }

private:
    struct Node {
        std::size_t begin, end;   // range in order_
        int axis = -1;            // -1 marks a leaf
        double split = 0.0;
        std::size_t left = 0, right = 0;
    };

    std::size_t build(std::size_t begin, std::size_t end) {
        const std::size_t id = nodes_.size();
        nodes_.push_back({begin, end});
        if (end - begin <= leaf_size_) return id;
        Vec3 lo = pts_[order_[begin]], hi = lo;
        for (std::size_t i = begin; i < end; ++i) {
            lo = lo.cwiseMin(pts_[order_[i]]);
            hi = hi.cwiseMax(pts_[order_[i]]);
        }
        int axis;
        const double spread = (hi - lo).maxCoeff(&axis);
        if (spread <= 0.0) return id;  // all coincident: keep as leaf
        const std::size_t mid = begin + (end - begin) / 2;
        std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                         order_.begin() + static_cast<std::ptrdiff_t>(mid),
                         order_.begin() + static_cast<std::ptrdiff_t>(end),
                         [&](std::size_t a, std::size_t b) { return pts_[a][axis] < pts_[b][axis]; });
        const double split = pts_[order_[mid]][axis];
        const std::size_t l = build(begin, mid);
        const std::size_t r = build(mid, end);
        nodes_[id].axis = axis;
        nodes_[id].split = split;
        nodes_[id].left = l;
        nodes_[id].right = r;
        return id;
    }

    static double dist2(const Vec3& a, const Vec3& b) { return (a - b).squaredNorm(); }

    void search_knn(std::size_t id, const Vec3& q, std::size_t k, std::priority_queue<Neighbour>& heap) const {
        const Node& n = nodes_[id];
        if (n.axis < 0) {
            for (std::size_t i = n.begin; i < n.end; ++i) {
                const Neighbour cand{order_[i], dist2(pts_[order_[i]], q)};
                if (heap.size() < k)
                    heap.push(cand);
                else if (cand < heap.top()) {
                    heap.pop();
                    heap.push(cand);
                }
            }
            return;
        }
        // Left child holds coordinates <= split, right child >= split.
        const double diff = q[n.axis] - n.split;
        const std::size_t first = diff <= 0 ? n.left : n.right;
        const std::size_t second = diff <= 0 ? n.right : n.left;
        search_knn(first, q, k, heap);
        if (heap.size() < k || diff * diff <= heap.top().dist2) search_knn(second, q, k, heap);
    }

    void search_radius(std::size_t id, const Vec3& q, double r2, std::vector<Neighbour>& out) const {
        const Node& n = nodes_[id];
        if (n.axis < 0) {
            for (std::size_t i = n.begin; i < n.end; ++i) {
                const double d2 = dist2(pts_[order_[i]], q);
                if (d2 <= r2) out.push_back({order_[i], d2});
            }
            return;
        }
        const double diff = q[n.axis] - n.split;
        if (diff <= 0 || diff * diff <= r2) search_radius(n.left, q, r2, out);
        if (diff >= 0 || diff * diff <= r2) search_radius(n.right, q, r2, out);
    }

    std::span<const Vec3> pts_;
    std::vector<std::size_t> order_;
    std::vector<Node> nodes_;
    std::size_t leaf_size_;
};

// ---------------------------------------------------------------------------
// Downsampling

/// Keeps, for every occupied voxel (side `cell`, grid anchored at `origin`),
/// the input point closest to the voxel's centroid; ties go to the earlier
/// point. Unlike averaging, the kept points lie on the sampled surface.
inline std::vector<std::size_t> voxel_subsample_indices(std::span<const Vec3> points, double cell,
                                                        const Vec3& origin = Vec3::Zero()) {
    if (!(cell > 0)) throw PreconditionError("voxel_subsample: cell size must be > 0");
    std::map<std::array<std::int64_t, 3>, std::vector<std::size_t>> voxels;
    for (std::size_t i = 0; i < points.size(); ++i) {
        const Vec3 r = (points[i] - origin) / cell;
        voxels[{static_cast<std::int64_t>(std::floor(r.x())), static_cast<std::int64_t>(std::floor(r.y())),
                static_cast<std::int64_t>(std::floor(r.z()))}]
            .push_back(i);
    }
    std::vector<std::size_t> keep;
    keep.reserve(voxels.size());
    for (const auto& [key, members] : voxels) {
        Vec3 c = Vec3::Zero();
        for (auto i : members) c += points[i];
        c /= static_cast<double>(members.size());
        // Two points always tie with their midpoint, so near-ties within
        // rounding go to the earlier point to keep the choice frame-free.
        std::size_t best = members.front();
        double best_d = (points[best] - c).squaredNorm();
        for (auto i : members) {
            const double d = (points[i] - c).squaredNorm();
            if (d < best_d - 1e-9 * (best_d + cell * cell)) {
                best = i;
                best_d = d;
            }
        }
        keep.push_back(best);
    }
    std::sort(keep.begin(), keep.end());
    return keep;
}

inline PointCloud voxel_subsample(const PointCloud& cloud, double cell, const Vec3& origin = Vec3::Zero()) {
    PointCloud out;
    for (auto i : voxel_subsample_indices(cloud.points, cell, origin)) {
        if (cloud.has_intensity())
            out.push_back(cloud.points[i], cloud.intensity[i]);
        else
            out.push_back(cloud.points[i]);
    }
    return out;
}

/// Replaces the points of every occupied voxel (side `cell`, grid anchored at
/// `origin`) by their centroid. Output order follows the first occurrence of
/// each voxel in the input.
inline PointCloud voxel_downsample(const PointCloud& cloud, double cell, const Vec3& origin = Vec3::Zero()) {
    if (!(cell > 0)) throw PreconditionError("voxel_downsample: cell size must be > 0");
    struct Acc {
        Vec3 sum = Vec3::Zero();
        double inten = 0.0;
        std::size_t count = 0;
    };
    using Key = std::array<std::int64_t, 3>;
    struct KeyHash {
        std::size_t operator()(const Key& k) const noexcept {
            std::uint64_t h = 1469598103934665603ull;
            for (auto v : k) {
                h ^= static_cast<std::uint64_t>(v) + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
            }
            return static_cast<std::size_t>(h);
        }
    };
    std::unordered_map<Key, std::size_t, KeyHash> slot;
    std::vector<Acc> acc;
    slot.reserve(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Vec3& p = cloud.points[i];
        const Vec3 r = p - origin;
        const Key key{static_cast<std::int64_t>(std::floor(r.x() / cell)),
                      static_cast<std::int64_t>(std::floor(r.y() / cell)),
                      static_cast<std::int64_t>(std::floor(r.z() / cell))};
        auto [it, inserted] = slot.try_emplace(key, acc.size());
        if (inserted) acc.emplace_back();
        Acc& a = acc[it->second];
        a.sum += p;
        if (cloud.has_intensity()) a.inten += cloud.intensity[i];
        ++a.count;
    }
    PointCloud out;
    out.view_id = cloud.view_id;
    out.timestamp = cloud.timestamp;
    out.points.reserve(acc.size());
    for (const auto& a : acc) {
        const double n = static_cast<double>(a.count);
        if (cloud.has_intensity())
            out.push_back(a.sum / n, a.inten / n);
        else
            out.push_back(a.sum / n);
    }
    return out;
}

// ---------------------------------------------------------------------------
// File I/O

enum class CloudFormat { Xyz, Ply };

inline CloudFormat format_from_path(const std::filesystem::path& path) {
    auto ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".ply") return CloudFormat::Ply;
    return CloudFormat::Xyz;
}

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
        std::size_t j = i;
        while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
        if (j > i) out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

inline std::optional<double> parse_double(std::string_view tok) {
    // strtod accepts "nan"/"inf"; the caller rejects non-finite values.
    std::string s(tok);
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size()) return std::nullopt;
    return v;
}

}  // namespace detail

/// Parses "x y z [intensity]" records, one per line. Blank lines and lines
/// starting with '#' are skipped.
inline PointCloud parse_xyz(std::istream& in, const std::string& name = "<xyz>") {
    PointCloud cloud;
    std::string line;
    std::size_t lineno = 0;
    std::optional<bool> with_intensity;
    while (std::getline(in, line)) {
        ++lineno;
        const auto toks = detail::split_ws(line);
        if (toks.empty() || toks.front().front() == '#') continue;
        if (toks.size() != 3 && toks.size() != 4)
            throw ParseError(name, lineno, "expected 3 or 4 fields, got " + std::to_string(toks.size()));
        if (!with_intensity) with_intensity = toks.size() == 4;
        if (*with_intensity != (toks.size() == 4))
            throw ParseError(name, lineno, "inconsistent field count");
        double v[4] = {0, 0, 0, 0};
        for (std::size_t k = 0; k < toks.size(); ++k) {
            const auto d = detail::parse_double(toks[k]);
            if (!d) throw ParseError(name, lineno, "malformed number '" + std::string(toks[k]) + "'");
            if (!std::isfinite(*d)) throw ParseError(name, lineno, "non-finite value '" + std::string(toks[k]) + "'");
            v[k] = *d;
        }
        if (*with_intensity) {
            if (v[3] < 0.0 || v[3] > 1.0) throw ParseError(name, lineno, "intensity outside [0,1]");
            cloud.push_back(Vec3(v[0], v[1], v[2]), v[3]);
        } else {
            cloud.push_back(Vec3(v[0], v[1], v[2]));
        }
    }
    if (cloud.empty()) throw EmptyCloudError(name + ": file contains no points");
    return cloud;
}

namespace detail {

inline std::optional<double> ply_type_max(std::string_view type) {
    if (type == "uchar" || type == "uint8") return 255.0;
    if (type == "char" || type == "int8") return 127.0;
    if (type == "ushort" || type == "uint16") return 65535.0;
    if (type == "short" || type == "int16") return 32767.0;
    if (type == "uint" || type == "uint32") return 4294967295.0;
    if (type == "int" || type == "int32") return 2147483647.0;
    return std::nullopt;  // float/double: already normalised unless declared
}

}  // namespace detail

/// ASCII PLY, vertex element only. Intensity (property `intensity` or
/// `scalar_intensity`) is normalised by `comment intensity_max <v>` when given,
/// otherwise by the maximum of its integer type; float intensities without a
/// declared maximum must already lie in [0,1].
inline PointCloud parse_ply(std::istream& in, const std::string& name = "<ply>") {
    std::string line;
    std::size_t lineno = 0;
    auto next = [&]() -> bool {
        if (!std::getline(in, line)) return false;
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return true;
    };
    if (!next() || line != "ply") throw ParseError(name, 1, "missing 'ply' magic");
    std::size_t vertex_count = 0;
    bool in_vertex = false, seen_vertex = false;
    std::vector<std::string> props;
    std::optional<double> declared_max, type_max;
    int ix = -1, iy = -1, iz = -1, ii = -1;
    while (true) {
        if (!next()) throw ParseError(name, lineno, "unexpected end of header");
        const auto toks = detail::split_ws(line);
        if (toks.empty()) continue;
        if (toks[0] == "end_header") break;
        if (toks[0] == "format") {
            if (toks.size() < 2 || toks[1] != "ascii") throw ParseError(name, lineno, "only ascii ply is supported");
        } else if (toks[0] == "comment") {
            if (toks.size() >= 3 && toks[1] == "intensity_max") {
                declared_max = detail::parse_double(toks[2]);
                if (!declared_max || !(*declared_max > 0)) throw ParseError(name, lineno, "bad intensity_max");
            }
        } else if (toks[0] == "element") {
            if (toks.size() != 3) throw ParseError(name, lineno, "malformed element line");
            in_vertex = toks[1] == "vertex";
            if (in_vertex) {
                seen_vertex = true;
                const auto c = detail::parse_double(toks[2]);
                if (!c || *c < 0) throw ParseError(name, lineno, "bad vertex count");
                vertex_count = static_cast<std::size_t>(*c);
            } else {
                throw ParseError(name, lineno, "only vertex elements are supported");
            }
        } else if (toks[0] == "property") {
            if (!in_vertex) throw ParseError(name, lineno, "property outside vertex element");
            if (toks.size() != 3) throw ParseError(name, lineno, "list properties are not supported");
            const std::string pname(toks[2]);
            const int idx = static_cast<int>(props.size());
            props.push_back(pname);
            if (pname == "x") ix = idx;
            if (pname == "y") iy = idx;
            if (pname == "z") iz = idx;
            if (pname == "intensity" || pname == "scalar_intensity") {
                ii = idx;
                type_max = detail::ply_type_max(toks[1]);
            }
        } else if (toks[0] != "obj_info") {
            throw ParseError(name, lineno, "unknown header keyword '" + std::string(toks[0]) + "'");
        }
    }
    if (!seen_vertex || ix < 0 || iy < 0 || iz < 0) throw ParseError(name, lineno, "missing vertex x/y/z properties");
    const std::optional<double> norm = declared_max ? declared_max : type_max;
    PointCloud cloud;
    cloud.points.reserve(vertex_count);
    for (std::size_t v = 0; v < vertex_count; ++v) {
        if (!next()) throw ParseError(name, lineno + 1, "expected " + std::to_string(vertex_count) + " vertices");
        const auto toks = detail::split_ws(line);
        if (toks.size() != props.size())
            throw ParseError(name, lineno, "expected " + std::to_string(props.size()) + " fields");
        auto field = [&](int k) {
            const auto d = detail::parse_double(toks[static_cast<std::size_t>(k)]);
            if (!d) throw ParseError(name, lineno, "malformed number");
            if (!std::isfinite(*d)) throw ParseError(name, lineno, "non-finite value");
            return *d;
        };
        const Vec3 p(field(ix), field(iy), field(iz));
        if (ii >= 0) {
            double t = field(ii);
            if (norm) t /= *norm;
            if (t < 0.0 || t > 1.0) throw ParseError(name, lineno, "intensity outside declared range");
            cloud.push_back(p, t);
        } else {
            cloud.push_back(p);
        }
    }
    if (cloud.empty()) throw EmptyCloudError(name + ": file contains no points");
    return cloud;
}

inline PointCloud load_cloud(const std::filesystem::path& path, std::optional<CloudFormat> format = std::nullopt) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    const auto fmt = format.value_or(format_from_path(path));
    return fmt == CloudFormat::Ply ? parse_ply(in, path.string()) : parse_xyz(in, path.string());
}

inline void write_xyz(std::ostream& out, const PointCloud& cloud) {
    char buf[128];
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Vec3& p = cloud.points[i];
        int n;
        if (cloud.has_intensity())
            n = std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g %.9g\n", p.x(), p.y(), p.z(), cloud.intensity[i]);
        else
            n = std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g\n", p.x(), p.y(), p.z());
        out.write(buf, n);
    }
}

inline void write_ply(std::ostream& out, const PointCloud& cloud) {
    out << "ply\nformat ascii 1.0\nelement vertex " << cloud.size() << "\n"
        << "property double x\nproperty double y\nproperty double z\n";
    if (cloud.has_intensity()) out << "property double intensity\n";
    out << "end_header\n";
    write_xyz(out, cloud);
}

inline void save_cloud(const std::filesystem::path& path, const PointCloud& cloud,
                       std::optional<CloudFormat> format = std::nullopt) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    if (format.value_or(format_from_path(path)) == CloudFormat::Ply)
        write_ply(out, cloud);
    else
        write_xyz(out, cloud);
    if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace plantscan
