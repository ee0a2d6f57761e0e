#pragma once

// Branch-junction features for rough alignment of arbitrary views:
// dip-test junction detection, density clustering of the candidates, and
// distance-consistent feature matching.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "plantscan/cloudcore.hpp"
#include "plantscan/dip.hpp"
#include "plantscan/rigid.hpp"

namespace plantscan {

struct JunctionCandidate {
    Vec3 position;
    double dip_value = 0.0;
    double neighbourhood_radius = 0.0;
    std::size_t source_point = 0;
};

struct JunctionParams {
    std::size_t k_neighbours = 40;
    double dip_threshold = 0.04;
    double nms_radius = 4.0;
    double resolution = kScannerResolution;
    /// Largest gap between the two fitted lines that still counts as an
    /// intersection; defaults to twice the resolution.
    std::optional<double> line_tolerance;
    /// Half-width of the band around the first line whose points belong to
    /// it; defaults to the intersection tolerance.
    std::optional<double> inlier_band;

    double tolerance() const { return line_tolerance.value_or(2.0 * resolution); }
    double band() const { return inlier_band.value_or(tolerance()); }
};

struct JunctionDetection {
    std::vector<JunctionCandidate> raw;  // every accepted point, before suppression
    std::vector<JunctionCandidate> nms;  // local dip maxima within nms_radius
};

namespace detail {

struct Line {
    Vec3 point;
    Vec3 direction;  // unit
};

inline double distance_to_line(const Line& l, const Vec3& p) {
    const Vec3 d = p - l.point;
    return (d - d.dot(l.direction) * l.direction).norm();
}

inline std::optional<Line> principal_line(std::span<const Vec3> pts) {
    if (pts.size() < 2) return std::nullopt;
    const Vec3 c = centroid(pts);
    Mat3 cov = Mat3::Zero();
    for (const auto& p : pts) cov += (p - c) * (p - c).transpose();
    Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
    if (!(es.eigenvalues()(2) > 0)) return std::nullopt;
    return Line{c, es.eigenvectors().col(2).normalized()};
}

inline std::size_t count_within(const Line& l, std::span<const Vec3> pts, double band) {
    std::size_t n = 0;
    for (const auto& p : pts) n += distance_to_line(l, p) <= band;
    return n;
}

/// Line through `q` and one of `pts` with the most points within `band`.
inline std::optional<Line> dominant_line_through(const Vec3& q, std::span<const Vec3> pts, double band) {
    std::optional<Line> best;
    std::size_t best_count = 0;
    for (const auto& p : pts) {
        const Vec3 d = p - q;
        if (d.norm() <= band) continue;
        const Line l{q, d.normalized()};
        const auto c = count_within(l, pts, band);
        if (c > best_count) {
            best_count = c;
            best = l;
        }
    }
    return best;
}

/// Alternates inlier selection and principal-line fitting a few times.
inline Line refine_line(Line line, std::span<const Vec3> pts, double band, int rounds = 3) {
    for (int r = 0; r < rounds; ++r) {
        std::vector<Vec3> in;
        for (const auto& p : pts)
            if (distance_to_line(line, p) <= band) in.push_back(p);
        if (in.size() < 3) break;
        const auto next = principal_line(in);
        if (!next) break;
        line = *next;
    }
    return line;
}

/// Closest points between two lines; nullopt when (nearly) parallel.
inline std::optional<std::pair<Vec3, double>> closest_approach(const Line& a, const Line& b) {
    const Vec3 w = a.point - b.point;
    const double aa = 1.0, bb = 1.0, ab = a.direction.dot(b.direction);
    const double denom = aa * bb - ab * ab;
    if (denom < 1e-6) return std::nullopt;
    const double d = a.direction.dot(w), e = b.direction.dot(w);
    const double s = (ab * e - bb * d) / denom;
    const double t = (aa * e - ab * d) / denom;
    const Vec3 pa = a.point + s * a.direction, pb = b.point + t * b.direction;
    return std::make_pair(Vec3(0.5 * (pa + pb)), (pa - pb).norm());
}

/// Orientation angles (mod pi) of the offsets in the plane spanned by the
/// two dominant principal directions, linearised by cutting the circle at
/// its widest empty arc and sorted.
inline std::vector<double> planar_angles(std::span<const Vec3> offsets, const Vec3& u, const Vec3& v) {
    std::vector<double> ang;
    ang.reserve(offsets.size());
    for (const auto& o : offsets) {
        const double x = o.dot(u), y = o.dot(v);
        if (x == 0.0 && y == 0.0) continue;
        double a = std::atan2(y, x);
        if (a < 0) a += M_PI;
        if (a >= M_PI) a -= M_PI;
        ang.push_back(a);
    }
    if (ang.size() < 2) return ang;
    std::sort(ang.begin(), ang.end());
    std::size_t cut = 0;
    double widest = ang.front() + M_PI - ang.back();
    for (std::size_t i = 1; i < ang.size(); ++i)
        if (ang[i] - ang[i - 1] > widest) {
            widest = ang[i] - ang[i - 1];
            cut = i;
        }
    std::rotate(ang.begin(), ang.begin() + static_cast<std::ptrdiff_t>(cut), ang.end());
    for (std::size_t i = ang.size() - cut; i < ang.size(); ++i) ang[i] += M_PI;
    return ang;
}

}  // namespace detail

/// Junction test for a single point of the cloud; nullopt when the
/// neighbourhood is unimodal in orientation or the two fitted branch lines
/// do not meet inside it.
inline std::optional<JunctionCandidate> junction_at(const SpatialIndex& index, std::size_t i, const JunctionParams& params) {
    const auto pts = index.points();
    const Vec3& q = pts[i];
    const auto nbrs = index.knn(q, params.k_neighbours).neighbours;
    if (nbrs.size() < 8) return std::nullopt;
    std::vector<Vec3> hood;
    hood.reserve(nbrs.size());
    for (const auto& n : nbrs) hood.push_back(pts[n.index]);
    const double radius = std::sqrt(nbrs.back().dist2);

    const Vec3 c = centroid(hood);
    Mat3 cov = Mat3::Zero();
    for (const auto& p : hood) cov += (p - c) * (p - c).transpose();
    Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
    const Vec3 u = es.eigenvectors().col(2), v = es.eigenvectors().col(1);
    std::vector<Vec3> offsets;
    offsets.reserve(hood.size());
    for (const auto& p : hood) offsets.push_back(p - q);
    const auto angles = detail::planar_angles(offsets, u, v);
    if (angles.size() < 4) return std::nullopt;
    const double dip = dip_statistic(angles).dip;
    if (!(dip > params.dip_threshold)) return std::nullopt;

    // Sequential line fits. The first line is the best-supported line
    // through q, refined by principal-line fits on its inliers; the second
    // is the principal line of the remaining points, refined the same way.
    const double tol = params.tolerance();
    const double band = params.band();
    auto first = detail::dominant_line_through(q, hood, band);
    if (!first) return std::nullopt;
    first = detail::refine_line(*first, hood, band);
    std::vector<Vec3> rest;
    for (const auto& p : hood)
        if (detail::distance_to_line(*first, p) > band) rest.push_back(p);
    if (rest.size() < 3) return std::nullopt;
    auto second = detail::principal_line(rest);
    if (!second) return std::nullopt;
    second = detail::refine_line(*second, rest, band);
    const auto meet = detail::closest_approach(*first, *second);
    if (!meet || meet->second >= tol) return std::nullopt;
    if ((meet->first - q).norm() > radius) return std::nullopt;
    return JunctionCandidate{meet->first, dip, radius, i};
}

/// Keeps the highest-dip candidate within `radius`; ties go to the lower
/// source index.
inline std::vector<JunctionCandidate> non_max_suppression(std::vector<JunctionCandidate> cands, double radius) {
    std::stable_sort(cands.begin(), cands.end(),
                     [](const auto& a, const auto& b) { return a.dip_value > b.dip_value; });
    std::vector<JunctionCandidate> kept;
    for (const auto& c : cands) {
        const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const auto& k) {
            return (k.position - c.position).squaredNorm() <= radius * radius;
        });
        if (!suppressed) kept.push_back(c);
    }
    return kept;
}

inline JunctionDetection detect_junctions_full(const PointCloud& cloud, const JunctionParams& params = {}) {
    if (cloud.size() < params.k_neighbours)
        throw PreconditionError("detect_junctions: cloud has fewer points than k_neighbours");
    SpatialIndex index(cloud);
    JunctionDetection out;
    for (std::size_t i = 0; i < cloud.size(); ++i)
        if (auto c = junction_at(index, i, params)) out.raw.push_back(*c);
    out.nms = non_max_suppression(out.raw, params.nms_radius);
    return out;
}

/// Junction candidates after non-maximal suppression of the dip value.
inline std::vector<JunctionCandidate> detect_junctions(const PointCloud& cloud, const JunctionParams& params = {}) {
    return detect_junctions_full(cloud, params).nms;
}

// ---------------------------------------------------------------------------
// Density clustering

struct DbscanConfig {
    double eps = 1.5;
    std::size_t min_pts = 4;

    void validate() const {
        if (!(eps > 0)) throw PreconditionError("dbscan: eps must be > 0");
        if (min_pts < 2) throw PreconditionError("dbscan: min_pts must be >= 2");
    }
};

struct DbscanResult {
    static constexpr int kNoise = -1;
    std::vector<int> labels;     // cluster id per point, or kNoise
    std::vector<char> core;      // 1 for core points
    std::size_t cluster_count = 0;

    std::vector<std::size_t> outliers() const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == kNoise) out.push_back(i);
        return out;
    }
};

/// Density-based clustering. A point is core when at least `min_pts` points
/// (itself included) lie within `eps`. Points are visited in index order, so
/// border points reachable from two clusters join the lower cluster id.
inline DbscanResult dbscan(std::span<const Vec3> points, const DbscanConfig& config = {}) {
    config.validate();
    DbscanResult res;
    const std::size_t n = points.size();
    res.labels.assign(n, DbscanResult::kNoise);
    res.core.assign(n, 0);
    if (n == 0) return res;
    SpatialIndex index(points);
    std::vector<std::vector<std::size_t>> nbrs(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (const auto& nb : index.radius(points[i], config.eps)) nbrs[i].push_back(nb.index);
        std::sort(nbrs[i].begin(), nbrs[i].end());
        res.core[i] = nbrs[i].size() >= config.min_pts;
    }
    std::vector<char> assigned(n, 0);
    int next_id = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!res.core[i] || assigned[i]) continue;
        const int id = next_id++;
        std::vector<std::size_t> queue{i};
        assigned[i] = 1;
        res.labels[i] = id;
        for (std::size_t q = 0; q < queue.size(); ++q) {
            const auto p = queue[q];
            if (!res.core[p]) continue;
            for (auto nb : nbrs[p]) {
                if (assigned[nb]) continue;
                assigned[nb] = 1;
                res.labels[nb] = id;
                queue.push_back(nb);
            }
        }
    }
    res.cluster_count = static_cast<std::size_t>(next_id);
    return res;
}

struct FeatureCluster {
    std::vector<JunctionCandidate> members;
    Vec3 centroid = Vec3::Zero();
};

/// Clusters candidate positions and returns one feature per dense cluster;
/// outliers are discarded.
inline std::vector<FeatureCluster> extract_true_junctions(std::span<const JunctionCandidate> candidates,
                                                          const DbscanConfig& config = {}) {
    std::vector<Vec3> pos;
    pos.reserve(candidates.size());
    for (const auto& c : candidates) pos.push_back(c.position);
    const auto res = dbscan(pos, config);
    std::vector<FeatureCluster> clusters(res.cluster_count);
    for (std::size_t i = 0; i < candidates.size(); ++i)
        if (res.labels[i] != DbscanResult::kNoise) clusters[static_cast<std::size_t>(res.labels[i])].members.push_back(candidates[i]);
    for (auto& c : clusters) {
        for (const auto& m : c.members) c.centroid += m.position;
        c.centroid /= static_cast<double>(c.members.size());
    }
    return clusters;
}

// ---------------------------------------------------------------------------
// Feature matching

using Correspondences = std::vector<std::pair<std::size_t, std::size_t>>;

struct FeatureMatch {
    Correspondences pairs;      // (index in A, index in B)
    RigidTransform transform;   // maps A onto B
    double rms = 0.0;
};

namespace detail {

// Correspondences induced by a transform: mutual nearest neighbours within
// `tol` after mapping A into B's frame.
inline Correspondences induced_pairs(std::span<const Vec3> a, std::span<const Vec3> b, const RigidTransform& t, double tol) {
    Correspondences out;
    std::vector<Vec3> ta;
    ta.reserve(a.size());
    for (const auto& p : a) ta.push_back(t(p));
    for (std::size_t i = 0; i < ta.size(); ++i) {
        std::size_t best = b.size();
        double bd = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < b.size(); ++j) {
            const double d = (ta[i] - b[j]).squaredNorm();
            if (d < bd) {
                bd = d;
                best = j;
            }
        }
        if (best == b.size() || bd >= tol * tol) continue;
        std::size_t back = a.size();
        double bb = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < ta.size(); ++k) {
            const double d = (ta[k] - b[best]).squaredNorm();
            if (d < bb) {
                bb = d;
                back = k;
            }
        }
        if (back == i) out.emplace_back(i, best);
    }
    return out;
}

inline double pairs_rms(std::span<const Vec3> a, std::span<const Vec3> b, const Correspondences& pairs,
                        const RigidTransform& t) {
    double s = 0.0;
    for (const auto& [i, j] : pairs) s += (t(a[i]) - b[j]).squaredNorm();
    return pairs.empty() ? 0.0 : std::sqrt(s / static_cast<double>(pairs.size()));
}

}  // namespace detail

/// Finds the rigid motion A -> B supported by the most features. Every
/// triplet of A is paired with every ordered triplet of B whose three side
/// lengths agree within `tolerance`; each such hypothesis is scored by the
/// number of mutually nearest feature pairs within `tolerance` after
/// alignment and refined by least squares over them. Ties prefer lower RMS.
inline FeatureMatch match_features(std::span<const Vec3> a, std::span<const Vec3> b, double tolerance = 2.0) {
    if (a.size() < 3 || b.size() < 3) throw NoAlignmentError("match_features: need at least 3 features per view");
    const double min_side = tolerance;  // degenerate triplets give unstable rotations
    auto dist = [](const Vec3& p, const Vec3& q) { return (p - q).norm(); };
    std::optional<FeatureMatch> best;
    std::vector<Vec3> fa(3), fb(3);
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = i + 1; j < a.size(); ++j)
            for (std::size_t k = j + 1; k < a.size(); ++k) {
                const double dij = dist(a[i], a[j]), djk = dist(a[j], a[k]), dik = dist(a[i], a[k]);
                if (std::min({dij, djk, dik}) < min_side) continue;
                if ((a[j] - a[i]).cross(a[k] - a[i]).norm() < min_side * min_side * 0.5) continue;
                for (std::size_t l = 0; l < b.size(); ++l)
                    for (std::size_t m = 0; m < b.size(); ++m) {
                        if (m == l || std::abs(dist(b[l], b[m]) - dij) >= tolerance) continue;
                        for (std::size_t n = 0; n < b.size(); ++n) {
                            if (n == l || n == m) continue;
                            if (std::abs(dist(b[m], b[n]) - djk) >= tolerance) continue;
                            if (std::abs(dist(b[l], b[n]) - dik) >= tolerance) continue;
                            fa = {a[i], a[j], a[k]};
                            fb = {b[l], b[m], b[n]};
                            auto t = fit_rigid(fa, fb);
                            auto pairs = detail::induced_pairs(a, b, t, tolerance);
                            if (pairs.size() < 3) continue;
                            // Refine on the full consensus, then re-derive it once.
                            std::vector<Vec3> pa, pb;
                            for (const auto& [x, y] : pairs) {
                                pa.push_back(a[x]);
                                pb.push_back(b[y]);
                            }
                            const auto refined = fit_rigid(pa, pb);
                            auto refined_pairs = detail::induced_pairs(a, b, refined, tolerance);
                            if (refined_pairs.size() >= pairs.size()) {
                                t = refined;
                                pairs = std::move(refined_pairs);
                            }
                            const double rms = detail::pairs_rms(a, b, pairs, t);
                            if (!best || pairs.size() > best->pairs.size() ||
                                (pairs.size() == best->pairs.size() && rms < best->rms - 1e-12))
                                best = FeatureMatch{std::move(pairs), t, rms};
                        }
                    }
            }
    if (!best || best->pairs.size() < 3) throw NoAlignmentError("match_features: fewer than 3 consistent features");
    return *best;
}

// ---------------------------------------------------------------------------

struct RoughAlignParams {
    JunctionParams junctions;
    DbscanConfig clustering;
    double distance_tolerance = 2.0;
};

/// Junction features of one view: cluster centroids of the raw (unsuppressed)
/// candidates, where true junctions show up as dense groups.
inline std::vector<Vec3> junction_features(const PointCloud& view, const RoughAlignParams& params = {}) {
    const auto det = detect_junctions_full(view, params.junctions);
    const auto clusters = extract_true_junctions(det.raw, params.clustering);
    std::vector<Vec3> out;
    out.reserve(clusters.size());
    for (const auto& c : clusters) out.push_back(c.centroid);
    return out;
}

/// Transform mapping view B into view A's frame.
inline RigidTransform rough_align(const PointCloud& view_a, const PointCloud& view_b, const RoughAlignParams& params = {}) {
    const auto fa = junction_features(view_a, params);
    const auto fb = junction_features(view_b, params);
    return match_features(fb, fa, params.distance_tolerance).transform;
}

}  // namespace plantscan
