#pragma once

// Gaussian-mixture discrepancies, non-rigid Coherent Point Drift, and
// multi-view merging against a mutual-nearest-neighbour average scan.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "plantscan/cloudcore.hpp"
#include "plantscan/error.hpp"
#include "plantscan/rigid.hpp"

namespace plantscan {

// ---------------------------------------------------------------------------
// Gaussian mixtures

/// Isotropic mixture sum_i w_i N(mu_i, sigma2 I), optionally blended with a
/// uniform density over `outlier_bounds` carrying weight `w_out`.
struct GmmParams {
    std::vector<double> weights;
    std::vector<Vec3> means;
    double sigma2 = 1.0;
    double w_out = 0.0;
    Aabb outlier_bounds{Vec3::Zero(), Vec3::Zero()};

    void validate() const {
        if (means.empty() || weights.size() != means.size()) throw PreconditionError("gmm: need one weight per mean");
        if (!(sigma2 > 0)) throw PreconditionError("gmm: sigma2 must be > 0");
        if (!(w_out >= 0 && w_out < 1)) throw PreconditionError("gmm: w_out must be in [0, 1)");
        double s = 0;
        for (double w : weights) s += w;
        if (std::abs(s - 1.0) > 1e-9) throw PreconditionError("gmm: weights must sum to 1");
        if (w_out > 0 && !(outlier_bounds.extent().prod() > 0))
            throw PreconditionError("gmm: outlier term needs a box of positive volume");
    }
};

/// Equal-weight mixture centred on `points`; the outlier box is their bounding box.
inline GmmParams make_gmm(std::span<const Vec3> points, double sigma2, double w_out = 0.0) {
    if (points.empty()) throw EmptyCloudError("make_gmm: no points");
    GmmParams g;
    g.means.assign(points.begin(), points.end());
    g.weights.assign(points.size(), 1.0 / static_cast<double>(points.size()));
    g.sigma2 = sigma2;
    g.w_out = w_out;
    g.outlier_bounds = bounding_box(points);
    return g;
}

inline double gmm_density(const GmmParams& g, const Vec3& x) {
    g.validate();
    const double norm = std::pow(2.0 * M_PI * g.sigma2, -1.5);
    double s = 0.0;
    for (std::size_t i = 0; i < g.means.size(); ++i)
        s += g.weights[i] * norm * std::exp(-(x - g.means[i]).squaredNorm() / (2.0 * g.sigma2));
    if (g.w_out == 0.0) return s;
    const double uniform = g.outlier_bounds.contains(x) ? 1.0 / g.outlier_bounds.extent().prod() : 0.0;
    return (1.0 - g.w_out) * s + g.w_out * uniform;
}

namespace detail {

// sum_ij (1/|a||b|) * integral N(x; a_i, s2) N(x; b_j, s2) dx
inline double mixture_overlap(std::span<const Vec3> a, std::span<const Vec3> b, double sigma2) {
    const double norm = std::pow(4.0 * M_PI * sigma2, -1.5);
    double s = 0.0;
    for (const auto& p : a)
        for (const auto& q : b) s += std::exp(-(p - q).squaredNorm() / (4.0 * sigma2));
    return norm * s / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
}

}  // namespace detail

/// Integrated squared difference of the equal-weight mixtures built on the
/// two clouds, in closed form.
inline double gmm_l2_distance(const PointCloud& a, const PointCloud& b, double sigma2) {
    if (a.empty() || b.empty()) throw EmptyCloudError("gmm_l2_distance: empty cloud");
    if (!(sigma2 > 0)) throw PreconditionError("gmm_l2_distance: sigma2 must be > 0");
    const double d = detail::mixture_overlap(a.points, a.points, sigma2) +
                     detail::mixture_overlap(b.points, b.points, sigma2) -
                     2.0 * detail::mixture_overlap(a.points, b.points, sigma2);
    return std::max(0.0, d);
}

// ---------------------------------------------------------------------------
// Coherent Point Drift

struct CpdConfig {
    double beta = 2.0;          // coherence kernel width, mm
    double lambda = 3.0;        // smoothness weight
    double w_out = 0.1;         // outlier weight
    std::size_t max_iterations = 100;
    double tolerance = 1e-5;    // relative objective change
    double downsample_cell = 1.0;  // mm; <= 0 registers every point
    double sigma2_floor = 1e-10;   // mm^2; the fit is treated as exact below this

    void validate() const {
        if (!(beta > 0)) throw PreconditionError("cpd: beta must be > 0");
        if (!(lambda > 0)) throw PreconditionError("cpd: lambda must be > 0");
        if (!(w_out >= 0 && w_out < 1)) throw PreconditionError("cpd: w_out must be in [0, 1)");
        if (max_iterations < 1) throw PreconditionError("cpd: max_iterations must be >= 1");
        if (!(tolerance > 0)) throw PreconditionError("cpd: tolerance must be > 0");
    }
};

struct DeformationField {
    std::vector<Vec3> displacements;  // one per source point
    double sigma2 = 0.0;
    /// Objective per EM iteration: negative log-likelihood of the target under
    /// the moved mixture plus lambda/2 tr(W^T G W).
    std::vector<double> objective;
    std::size_t iterations = 0;
    bool converged = false;

    PointCloud apply(const PointCloud& source) const {
        if (source.size() != displacements.size()) throw PreconditionError("deformation does not match cloud size");
        PointCloud out = source;
        for (std::size_t i = 0; i < out.size(); ++i) out.points[i] += displacements[i];
        return out;
    }

    double mean_norm() const {
        if (displacements.empty()) return 0.0;
        double s = 0;
        for (const auto& d : displacements) s += d.norm();
        return s / static_cast<double>(displacements.size());
    }
};

namespace detail {

using MatX3 = Eigen::Matrix<double, Eigen::Dynamic, 3>;

inline MatX3 to_matrix(std::span<const Vec3> pts) {
    MatX3 m(static_cast<Eigen::Index>(pts.size()), 3);
    for (std::size_t i = 0; i < pts.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = pts[i].transpose();
    return m;
}

inline Eigen::MatrixXd gaussian_kernel(const MatX3& a, const MatX3& b, double beta) {
    Eigen::MatrixXd g(a.rows(), b.rows());
    const double s = 1.0 / (2.0 * beta * beta);
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < b.rows(); ++j) g(i, j) = std::exp(-(a.row(i) - b.row(j)).squaredNorm() * s);
    return g;
}

struct Posterior {
    Eigen::MatrixXd p;        // M x N, P(m | x_n)
    Eigen::VectorXd outlier;  // N, P(outlier | x_n)
    double nll = 0.0;
};

/// E-step for centroids `t` (M x 3) and data `x` (N x 3). The outlier
/// component is uniform with density 1/volume.
inline Posterior cpd_posterior(const MatX3& t, const MatX3& x, double sigma2, double w_out, double volume) {
    const auto m = t.rows(), n = x.rows();
    Posterior post;
    post.p.resize(m, n);
    post.outlier.resize(n);
    const double log_c = w_out > 0 ? 1.5 * std::log(2.0 * M_PI * sigma2) + std::log(w_out / (1.0 - w_out)) +
                                         std::log(static_cast<double>(m) / volume)
                                   : -std::numeric_limits<double>::infinity();
    const double log_scale = std::log((1.0 - w_out) / static_cast<double>(m)) - 1.5 * std::log(2.0 * M_PI * sigma2);
    Eigen::VectorXd expo(m);
    double nll = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
        double top = log_c;
        for (Eigen::Index i = 0; i < m; ++i) {
            expo(i) = -(x.row(j) - t.row(i)).squaredNorm() / (2.0 * sigma2);
            top = std::max(top, expo(i));
        }
        double sum = std::isfinite(log_c) ? std::exp(log_c - top) : 0.0;
        for (Eigen::Index i = 0; i < m; ++i) {
            expo(i) = std::exp(expo(i) - top);
            sum += expo(i);
        }
        post.p.col(j) = expo / sum;
        post.outlier(j) = std::isfinite(log_c) ? std::exp(log_c - top) / sum : 0.0;
        nll -= log_scale + top + std::log(sum);
    }
    post.nll = nll;
    return post;
}

inline double outlier_volume(const MatX3& x) {
    const Vec3 ext = x.colwise().maxCoeff().transpose() - x.colwise().minCoeff().transpose();
    return std::max(ext.x(), 1.0) * std::max(ext.y(), 1.0) * std::max(ext.z(), 1.0);
}

struct CpdSolution {
    MatX3 y;           // registered (possibly downsampled) source points
    Eigen::MatrixXd w;  // M x 3 kernel weights
    DeformationField field;  // displacements at the rows of y
};

inline CpdSolution cpd_solve(const MatX3& y, const MatX3& x, const CpdConfig& cfg) {
    const auto m = y.rows(), n = x.rows();
    const Eigen::MatrixXd g = gaussian_kernel(y, y, cfg.beta);
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(m, 3);
    MatX3 t = y;
    double sigma2 = 0.0;
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j < n; ++j) sigma2 += (x.row(j) - y.row(i)).squaredNorm();
    sigma2 /= 3.0 * static_cast<double>(m) * static_cast<double>(n);
    if (!(sigma2 > 0) || !std::isfinite(sigma2))
        throw NumericalError("cpd: degenerate initial variance", 0);
    const double volume = outlier_volume(x);

    CpdSolution sol;
    sol.y = y;
    DeformationField& f = sol.field;
    if (y.rows() == x.rows() && y == x) {
        // Source already coincides with the target: the zero field is optimal.
        const Posterior post = cpd_posterior(t, x, sigma2, cfg.w_out, volume);
        f.objective.push_back(post.nll);
        f.iterations = 1;
        f.converged = true;
        f.sigma2 = sigma2;
        sol.w = w;
        f.displacements.assign(static_cast<std::size_t>(m), Vec3::Zero());
        return sol;
    }
    for (std::size_t it = 0; it < cfg.max_iterations; ++it) {
        const Posterior post = cpd_posterior(t, x, sigma2, cfg.w_out, volume);
        const double objective = post.nll + 0.5 * cfg.lambda * (w.transpose() * g * w).trace();
        if (!std::isfinite(objective)) throw NumericalError("cpd: objective is not finite", it);
        f.objective.push_back(objective);
        f.iterations = it + 1;
        if (it > 0) {
            const double prev = f.objective[f.objective.size() - 2];
            if (std::abs(prev - objective) <= cfg.tolerance * std::max(1.0, std::abs(objective))) {
                f.converged = true;
                break;
            }
        }
        // M-step: (diag(P1) G + lambda sigma2 I) W = P X - diag(P1) Y.
        const Eigen::VectorXd p1 = post.p.rowwise().sum();
        const Eigen::VectorXd pt1 = post.p.colwise().sum().transpose();
        const double np = p1.sum();
        if (!(np > 0)) throw NumericalError("cpd: every target point assigned to the outlier class", it);
        const Eigen::MatrixXd px = post.p * x;
        Eigen::MatrixXd a = p1.asDiagonal() * g;
        a.diagonal().array() += cfg.lambda * sigma2;
        const Eigen::MatrixXd b = px - p1.asDiagonal() * y;
        w = a.partialPivLu().solve(b);
        t = y + g * w;
        const double xx = (pt1.array() * x.rowwise().squaredNorm().array()).sum();
        const double pxt = (px.array() * t.array()).sum();
        const double tt = (p1.array() * t.rowwise().squaredNorm().array()).sum();
        const double next = (xx - 2.0 * pxt + tt) / (3.0 * np);
        if (!std::isfinite(next) || !w.allFinite()) throw NumericalError("cpd: update is not finite", it);
        sigma2 = std::max(next, 0.0);
        if (sigma2 <= cfg.sigma2_floor) {
            // Exact fit: no further EM step is meaningful.
            sigma2 = cfg.sigma2_floor;
            f.converged = true;
            break;
        }
    }
    f.sigma2 = sigma2;
    sol.w = w;
    const MatX3 gw = g * w;
    f.displacements.resize(static_cast<std::size_t>(m));
    for (Eigen::Index i = 0; i < m; ++i) f.displacements[static_cast<std::size_t>(i)] = gw.row(i).transpose();
    return sol;
}

}  // namespace detail

/// Non-rigid registration of `source` onto `target`. Both clouds are thinned
/// to one point per `downsample_cell` voxel (grid anchored at each cloud's
/// bounding-box minimum); the resulting smooth displacement field is then
/// evaluated at every original source point.
inline DeformationField cpd_register(const PointCloud& source, const PointCloud& target, const CpdConfig& config = {}) {
    if (source.empty() || target.empty()) throw EmptyCloudError("cpd_register: empty cloud");
    config.validate();
    const bool reduce = config.downsample_cell > 0;
    const PointCloud ys = reduce ? voxel_subsample(source, config.downsample_cell, bounding_box(source).min) : source;
    const PointCloud xs = reduce ? voxel_subsample(target, config.downsample_cell, bounding_box(target).min) : target;
    // Work relative to the target centroid so large coordinates do not eat
    // into the precision of the variance update.
    const Vec3 origin = centroid(xs.points);
    const detail::MatX3 y = detail::to_matrix(ys.points).rowwise() - origin.transpose();
    const detail::MatX3 x = detail::to_matrix(xs.points).rowwise() - origin.transpose();
    auto sol = detail::cpd_solve(y, x, config);
    if (!reduce) return sol.field;

    DeformationField out = sol.field;
    const detail::MatX3 full = detail::to_matrix(source.points).rowwise() - origin.transpose();
    const Eigen::MatrixXd disp = detail::gaussian_kernel(full, sol.y, config.beta) * sol.w;
    out.displacements.resize(source.size());
    for (std::size_t i = 0; i < source.size(); ++i) out.displacements[i] = disp.row(static_cast<Eigen::Index>(i)).transpose();
    return out;
}

// ---------------------------------------------------------------------------
// Mutual nearest neighbours and the average scan

using PointPairs = std::vector<std::pair<std::size_t, std::size_t>>;

/// Pairs (i, j) with j the nearest point of `b` to a_i and i the nearest
/// point of `a` to b_j, ordered by i.
inline PointPairs mutual_nearest_neighbours(const PointCloud& a, const PointCloud& b) {
    if (a.empty() || b.empty()) throw EmptyCloudError("mutual_nearest_neighbours: empty cloud");
    const SpatialIndex ia(a), ib(b);
    PointPairs out;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const std::size_t j = ib.nearest(a.points[i]).index;
        if (ia.nearest(b.points[j]).index == i) out.emplace_back(i, j);
    }
    return out;
}

/// Average scan: every point of the largest scan (lowest index on ties)
/// averaged with its mutual nearest neighbours in the other scans. Partners
/// farther than `gate` are ignored, so opposite faces of a thin organ are
/// not blended. Points with partners in fewer than ceil((k-1)/2) other scans
/// are dropped.
inline PointCloud centroid_scan(std::span<const PointCloud> scans,
                                double gate = 2.0 * kScannerResolution) {
    if (!(gate > 0)) throw PreconditionError("centroid_scan: gate must be positive");
    if (scans.size() < 2) throw PreconditionError("centroid_scan: need at least 2 scans");
    std::size_t ref = 0;
    for (std::size_t s = 1; s < scans.size(); ++s)
        if (scans[s].size() > scans[ref].size()) ref = s;
    const PointCloud& r = scans[ref];
    if (r.empty()) throw EmptyCloudError("centroid_scan: all scans are empty");
    std::vector<Vec3> sum(r.points.begin(), r.points.end());
    std::vector<std::size_t> partners(r.size(), 0);
    for (std::size_t s = 0; s < scans.size(); ++s) {
        if (s == ref || scans[s].empty()) continue;
        for (const auto& [i, j] : mutual_nearest_neighbours(r, scans[s])) {
            if ((r.points[i] - scans[s].points[j]).norm() > gate) continue;
            sum[i] += scans[s].points[j];
            ++partners[i];
        }
    }
    const std::size_t need = scans.size() / 2;  // ceil((k-1)/2)
    PointCloud out;
    for (std::size_t i = 0; i < r.size(); ++i)
        if (partners[i] >= need) out.push_back(sum[i] / static_cast<double>(partners[i] + 1));
    return out;
}

// ---------------------------------------------------------------------------
// Multi-view merging

struct MultiviewConfig {
    CpdConfig cpd;
    std::size_t max_sweeps = 5;
    double stop_displacement = kScannerResolution;  // mean per-sweep displacement, mm
    double coverage_gate = 1.5 * kScannerResolution;  // MNN pairs farther apart do not count as overlap
    double low_coverage = 0.05;
};

/// Fraction of the smaller cloud that has a mutual nearest neighbour in the
/// other within `gate`.
inline double mnn_coverage(const PointCloud& a, const PointCloud& b, double gate) {
    if (a.empty() || b.empty()) return 0.0;
    std::size_t n = 0;
    for (const auto& [i, j] : mutual_nearest_neighbours(a, b)) n += (a.points[i] - b.points[j]).norm() <= gate;
    return static_cast<double>(n) / static_cast<double>(std::min(a.size(), b.size()));
}

struct MultiviewResult {
    PointCloud merged;
    std::vector<PointCloud> scans;          // final registered scans
    std::vector<DeformationField> fields;   // accumulated displacement per scan
    std::vector<double> sweep_displacement; // mean displacement per sweep
    std::vector<double> adjacent_coverage;  // coverage of (i, i+1) after the rough transforms
    std::vector<std::string> warnings;
};

/// Registration target for one held-out scan: the points of the union of
/// all other scans that are mutual nearest neighbours of a point in it.
/// Restricting to MNN partners keeps regions the held-out scan never saw
/// (far sides of leaves, occluded organs) from pulling it.
inline PointCloud mnn_target(const PointCloud& held_out, std::span<const PointCloud> others) {
    PointCloud all;
    for (const auto& o : others) all.points.insert(all.points.end(), o.points.begin(), o.points.end());
    PointCloud out;
    if (held_out.empty() || all.empty()) return out;
    for (const auto& [i, j] : mutual_nearest_neighbours(held_out, all)) out.push_back(all.points[j]);
    return out;
}

/// Applies the rough transforms, then sweeps over the scans registering
/// each to the MNN target built from all the others and replacing it with
/// the result. Stops when a sweep moves points by less than
/// `stop_displacement` on average, or after `max_sweeps`.
inline MultiviewResult align_multiview(std::span<const PointCloud> scans, std::span<const RigidTransform> rough,
                                       const MultiviewConfig& config = {}) {
    if (scans.size() < 2) throw PreconditionError("align_multiview: need at least 2 scans");
    if (rough.size() != scans.size()) throw PreconditionError("align_multiview: one rough transform per scan");
    config.cpd.validate();
    MultiviewResult res;
    for (std::size_t s = 0; s < scans.size(); ++s) {
        if (scans[s].empty()) throw EmptyCloudError("align_multiview: scan " + std::to_string(s) + " is empty");
        res.scans.push_back(rough[s].apply(scans[s]));
        res.fields.push_back(DeformationField{std::vector<Vec3>(scans[s].size(), Vec3::Zero()), 0.0, {}, 0, true});
    }
    const std::size_t k = scans.size();
    const std::size_t pairs = k == 2 ? 1 : k;
    for (std::size_t s = 0; s < pairs; ++s) {
        const std::size_t t = (s + 1) % k;
        const double c = mnn_coverage(res.scans[s], res.scans[t], config.coverage_gate);
        res.adjacent_coverage.push_back(c);
        if (c < config.low_coverage)
            res.warnings.push_back("low MNN coverage between scans " + std::to_string(s) + " and " + std::to_string(t));
    }

    for (std::size_t sweep = 0; sweep < std::max<std::size_t>(1, config.max_sweeps); ++sweep) {
        double moved = 0.0;
        std::size_t count = 0;
        for (std::size_t s = 0; s < k; ++s) {
            std::vector<PointCloud> others;
            for (std::size_t o = 0; o < k; ++o)
                if (o != s) others.push_back(res.scans[o]);
            const PointCloud target = mnn_target(res.scans[s], others);
            if (target.empty()) {
                res.warnings.push_back("scan " + std::to_string(s) + ": empty registration target, left unregistered");
                continue;
            }
            DeformationField f;
            try {
                f = cpd_register(res.scans[s], target, config.cpd);
            } catch (const NumericalError& e) {
                throw NumericalError("scan " + std::to_string(s) + ": " + e.what(), e.iteration());
            }
            for (std::size_t i = 0; i < f.displacements.size(); ++i) {
                res.scans[s].points[i] += f.displacements[i];
                res.fields[s].displacements[i] += f.displacements[i];
                moved += f.displacements[i].norm();
            }
            count += f.displacements.size();
            res.fields[s].sigma2 = f.sigma2;
            res.fields[s].objective = f.objective;
            res.fields[s].iterations += f.iterations;
            res.fields[s].converged = f.converged;
        }
        const double mean = count ? moved / static_cast<double>(count) : 0.0;
        res.sweep_displacement.push_back(mean);
        if (mean < config.stop_displacement) break;
    }
    for (const auto& s : res.scans) {
        res.merged.points.insert(res.merged.points.end(), s.points.begin(), s.points.end());
        res.merged.intensity.insert(res.merged.intensity.end(), s.intensity.begin(), s.intensity.end());
    }
    if (res.merged.intensity.size() != res.merged.points.size()) res.merged.intensity.clear();
    return res;
}

}  // namespace plantscan
