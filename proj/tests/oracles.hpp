#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance suite. Each one takes the slow, obvious route.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "plantscan/cloudcore.hpp"
#include "plantscan/synthscan.hpp"

namespace plantscan::testing {

inline double gauss1(double x, double mu, double s2) {
    return std::exp(-(x - mu) * (x - mu) / (2 * s2)) / std::sqrt(2 * M_PI * s2);
}

/// Integral of (f_a - f_b)^2 for equal-weight isotropic mixtures, by the
/// midpoint rule on a grid padded 8 sigma past both clouds. Every cross
/// term is a product of 1D Gaussians, so the 3D sum factorises per axis.
inline double gmm_l2_midpoint(const std::vector<Vec3>& a, const std::vector<Vec3>& b, double s2, double h) {
    std::vector<Vec3> mu(a);
    mu.insert(mu.end(), b.begin(), b.end());
    std::vector<double> c;
    for (std::size_t i = 0; i < a.size(); ++i) c.push_back(1.0 / static_cast<double>(a.size()));
    for (std::size_t i = 0; i < b.size(); ++i) c.push_back(-1.0 / static_cast<double>(b.size()));
    const double pad = 8.0 * std::sqrt(s2);
    Vec3 lo = mu[0], hi = mu[0];
    for (const auto& m : mu) {
        lo = lo.cwiseMin(m);
        hi = hi.cwiseMax(m);
    }
    double total = 0;
    for (std::size_t i = 0; i < mu.size(); ++i)
        for (std::size_t j = 0; j < mu.size(); ++j) {
            double prod = 1;
            for (int d = 0; d < 3; ++d) {
                double s = 0;
                for (double x = lo[d] - pad + h / 2; x < hi[d] + pad; x += h)
                    s += gauss1(x, mu[i][d], s2) * gauss1(x, mu[j][d], s2);
                prod *= s * h;
            }
            total += c[i] * c[j] * prod;
        }
    return total;
}

/// Reference clustering: core graph components via union-find, clusters
/// numbered by their lowest core index, border points take the smallest
/// cluster id among their core neighbours.
inline std::vector<int> brute_dbscan(const std::vector<Vec3>& pts, double eps, std::size_t min_pts) {
    const std::size_t n = pts.size();
    auto near = [&](std::size_t i, std::size_t j) { return (pts[i] - pts[j]).squaredNorm() <= eps * eps; };
    std::vector<bool> core(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t c = 0;
        for (std::size_t j = 0; j < n; ++j) c += near(i, j);
        core[i] = c >= min_pts;
    }
    std::vector<std::size_t> parent(n);
    std::iota(parent.begin(), parent.end(), std::size_t{0});
    auto find = [&](std::size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (core[i] && core[j] && near(i, j)) parent[std::max(find(i), find(j))] = std::min(find(i), find(j));
    std::vector<int> root_label(n, -1), labels(n, -1);
    int next = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (core[i]) {
            const auto r = find(i);
            if (root_label[r] < 0) root_label[r] = next++;
            labels[i] = root_label[r];
        }
    for (std::size_t i = 0; i < n; ++i) {
        if (core[i]) continue;
        for (std::size_t j = 0; j < n; ++j)
            if (core[j] && near(i, j) && (labels[i] < 0 || labels[j] < labels[i])) labels[i] = labels[j];
    }
    return labels;
}

/// Median over points of `a` of the distance to the nearest point of `b`.
inline double median_nn(const PointCloud& a, const PointCloud& b) {
    SpatialIndex ib(b);
    std::vector<double> d;
    for (const auto& p : a.points) d.push_back(std::sqrt(ib.nearest(p).dist2));
    std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2), d.end());
    return d[d.size() / 2];
}

/// RMS distance from the cloud to the plant's analytic surface.
inline double rms_surface_distance(const SyntheticPlant& plant, const PointCloud& c) {
    double s = 0;
    for (const auto& p : c.points) s += std::pow(plant.surface_distance(p), 2);
    return std::sqrt(s / static_cast<double>(c.size()));
}

}  // namespace plantscan::testing
