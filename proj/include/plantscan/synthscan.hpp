#pragma once

// Synthetic plants with analytic ground truth and a virtual range scanner.
//
// A plant is a set of closed organs, each a capped tapered cylinder (branch
// segments) or a short wide cylinder (leaf discs). Growth scales the whole
// plant about its base: with volumetric log-rate r per day, every linear
// dimension is multiplied by exp(r * dt / (3 * 24h)), so volume grows by
// exp(r * dt / 24h) and area by exp(2/3 * r * dt / 24h).

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "plantscan/cloudcore.hpp"
#include "plantscan/growth.hpp"
#include "plantscan/rigid.hpp"

namespace plantscan {

/// Capped frustum from `a` (radius r0) to `b` (radius r1).
struct Frustum {
    Vec3 a, b;
    double r0 = 0.0, r1 = 0.0;

    double length() const { return (b - a).norm(); }
    Vec3 axis() const { return (b - a).normalized(); }
    double radius_at(double h) const { return r0 + (r1 - r0) * h / length(); }

    double area() const {
        const double l = length();
        const double slant = std::sqrt(l * l + (r1 - r0) * (r1 - r0));
        return M_PI * (r0 + r1) * slant + M_PI * (r0 * r0 + r1 * r1);
    }
    double volume() const { return M_PI * length() / 3.0 * (r0 * r0 + r0 * r1 + r1 * r1); }

    Frustum scaled(const Vec3& about, double f) const {
        return {about + f * (a - about), about + f * (b - about), f * r0, f * r1};
    }

    bool contains(const Vec3& p, double slack = 0.0) const {
        const Vec3 ax = axis();
        const double h = (p - a).dot(ax);
        if (h < -slack || h > length() + slack) return false;
        const double rho = (p - a - h * ax).norm();
        return rho <= radius_at(std::clamp(h, 0.0, length())) + slack;
    }

    /// Unsigned distance to the closed surface (lateral side plus caps).
    double surface_distance(const Vec3& p) const {
        const Vec3 ax = axis();
        const double l = length();
        const double h = (p - a).dot(ax);
        const double rho = (p - a - h * ax).norm();
        auto seg = [](double px, double py, double x0, double y0, double x1, double y1) {
            const double dx = x1 - x0, dy = y1 - y0;
            const double len2 = dx * dx + dy * dy;
            const double t = len2 > 0 ? std::clamp(((px - x0) * dx + (py - y0) * dy) / len2, 0.0, 1.0) : 0.0;
            return std::hypot(px - (x0 + t * dx), py - (y0 + t * dy));
        };
        return std::min({seg(h, rho, 0, 0, 0, r0), seg(h, rho, 0, r0, l, r1), seg(h, rho, l, r1, l, 0)});
    }

    /// Nearest ray parameter s > eps with its outward normal.
    std::optional<std::pair<double, Vec3>> intersect(const Vec3& o, const Vec3& d) const {
        const Vec3 ax = axis();
        const double l = length();
        const double k = (r1 - r0) / l;
        const Vec3 w0 = o - a;
        const double h0 = w0.dot(ax), dh = d.dot(ax);
        double best = std::numeric_limits<double>::infinity();
        Vec3 normal = Vec3::Zero();
        // Lateral surface: |w|^2 - h^2 = (r0 + k h)^2.
        const double A = 1.0 - dh * dh - k * k * dh * dh;
        const double B = 2.0 * (w0.dot(d) - h0 * dh - k * dh * (r0 + k * h0));
        const double C = w0.squaredNorm() - h0 * h0 - (r0 + k * h0) * (r0 + k * h0);
        auto try_lateral = [&](double s) {
            if (!(s > 1e-9) || s >= best) return;
            const double h = h0 + s * dh;
            if (h < 0 || h > l || r0 + k * h < 0) return;
            const Vec3 p = o + s * d;
            const Vec3 radial = p - a - h * ax;
            const double rn = radial.norm();
            if (rn <= 0) return;
            best = s;
            normal = (radial / rn - k * ax).normalized();
        };
        if (std::abs(A) > 1e-12) {
            const double disc = B * B - 4 * A * C;
            if (disc >= 0) {
                const double sq = std::sqrt(disc);
                const double q = -0.5 * (B + (B >= 0 ? sq : -sq));
                try_lateral(q / A);
                if (q != 0) try_lateral(C / q);
            }
        } else if (std::abs(B) > 1e-12) {
            try_lateral(-C / B);
        }
        // Caps.
        if (std::abs(dh) > 1e-12) {
            for (int cap = 0; cap < 2; ++cap) {
                const double hc = cap == 0 ? 0.0 : l;
                const double rc = cap == 0 ? r0 : r1;
                const double s = (hc - h0) / dh;
                if (!(s > 1e-9) || s >= best) continue;
                const Vec3 p = o + s * d;
                if ((p - a - hc * ax).norm() <= rc) {
                    best = s;
                    normal = cap == 0 ? Vec3(-ax) : ax;
                }
            }
        }
        if (!std::isfinite(best)) return std::nullopt;
        return std::make_pair(best, normal);
    }
};

struct PlantParams {
    double stem_height = 40.0;
    double stem_radius = 0.4;
    std::size_t branch_count = 5;   // branches on each parent segment
    std::size_t depth = 1;          // 0: bare stem, 1: branches off the stem, 2: side branches
    double branch_length = 14.0;
    double branch_radius = 0.3;
    double leaf_radius = 4.0;
    double leaf_thickness = 0.6;
    bool leaves = true;
    double min_elevation_deg = 25.0;
    double max_elevation_deg = 55.0;
};

struct SyntheticPlant {
    std::vector<Frustum> organs;          // at the reference (unit) scale
    std::vector<std::string> organ_kinds; // "stem", "branch", "leaf"
    std::vector<Vec3> junctions;          // branch points, reference scale
    std::vector<double> growth;           // per-organ linear growth state
    Vec3 base = Vec3::Zero();
    std::uint32_t seed = 0;

    Frustum organ(std::size_t i) const { return organs[i].scaled(base, growth[i]); }

    std::vector<Frustum> current_organs() const {
        std::vector<Frustum> out;
        out.reserve(organs.size());
        for (std::size_t i = 0; i < organs.size(); ++i) out.push_back(organ(i));
        return out;
    }

    /// Junction positions at the current growth state.
    std::vector<Vec3> current_junctions() const {
        const double f = growth.empty() ? 1.0 : growth.front();
        std::vector<Vec3> out;
        for (const auto& j : junctions) out.push_back(base + f * (j - base));
        return out;
    }

    /// Sum of organ surface areas, in closed form.
    double analytic_area() const {
        double s = 0;
        for (std::size_t i = 0; i < organs.size(); ++i) s += organ(i).area();
        return s;
    }
    double analytic_volume() const {
        double s = 0;
        for (std::size_t i = 0; i < organs.size(); ++i) s += organ(i).volume();
        return s;
    }

    double surface_distance(const Vec3& p) const {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < organs.size(); ++i) best = std::min(best, organ(i).surface_distance(p));
        return best;
    }

    /// Nearest hit along a ray, with outward normal.
    std::optional<std::pair<double, Vec3>> cast(const Vec3& o, const Vec3& d) const {
        std::optional<std::pair<double, Vec3>> best;
        for (std::size_t i = 0; i < organs.size(); ++i) {
            const auto hit = organ(i).intersect(o, d);
            if (hit && (!best || hit->first < best->first)) best = hit;
        }
        return best;
    }

    Aabb bounds() const {
        Aabb box{organ(0).a, organ(0).a};
        for (std::size_t i = 0; i < organs.size(); ++i) {
            const auto f = organ(i);
            const double r = std::max(f.r0, f.r1);
            for (const Vec3& e : {f.a, f.b}) {
                box.expand(e - Vec3::Constant(r));
                box.expand(e + Vec3::Constant(r));
            }
        }
        return box;
    }

    /// Area-uniform samples of the exposed surface (points buried inside
    /// another organ are rejected).
    std::vector<Vec3> surface_samples(std::size_t n, std::uint32_t sample_seed) const {
        const auto cur = current_organs();
        std::vector<double> weight;
        for (const auto& f : cur) weight.push_back(f.area());
        std::mt19937 rng(sample_seed);
        std::discrete_distribution<std::size_t> pick(weight.begin(), weight.end());
        std::uniform_real_distribution<double> u(0.0, 1.0);
        std::vector<Vec3> out;
        out.reserve(n);
        std::size_t guard = 0;
        while (out.size() < n && guard++ < 50 * n + 1000) {
            const std::size_t i = pick(rng);
            const Frustum& f = cur[i];
            const Vec3 ax = f.axis();
            const Vec3 e1 = ax.unitOrthogonal(), e2 = ax.cross(e1);
            const double l = f.length();
            const double slant = std::sqrt(l * l + (f.r1 - f.r0) * (f.r1 - f.r0));
            const double lat = M_PI * (f.r0 + f.r1) * slant, cap0 = M_PI * f.r0 * f.r0;
            const double pickarea = u(rng) * f.area();
            const double phi = 2 * M_PI * u(rng);
            Vec3 p;
            if (pickarea < lat) {
                // Radius linear in h: sample h with density proportional to r(h).
                const double t = u(rng);
                double h;
                if (std::abs(f.r1 - f.r0) < 1e-12) {
                    h = t * l;
                } else {
                    const double r = std::sqrt(f.r0 * f.r0 + t * (f.r1 * f.r1 - f.r0 * f.r0));
                    h = (r - f.r0) / (f.r1 - f.r0) * l;
                }
                const double r = f.radius_at(h);
                p = f.a + h * ax + r * (std::cos(phi) * e1 + std::sin(phi) * e2);
            } else {
                const bool first = pickarea < lat + cap0;
                const double rc = first ? f.r0 : f.r1;
                const double r = rc * std::sqrt(u(rng));
                p = (first ? f.a : f.b) + r * (std::cos(phi) * e1 + std::sin(phi) * e2);
            }
            bool buried = false;
            for (std::size_t j = 0; j < cur.size() && !buried; ++j)
                if (j != i && cur[j].contains(p, -1e-9)) buried = true;
            if (!buried) out.push_back(p);
        }
        return out;
    }
};

/// Dense sample of the plant as a solid: regular rings over every exposed
/// organ surface at `spacing`, plus a lattice inside each organ at
/// `interior_spacing` kept clear of the surface, so an alpha complex at the
/// usual alpha fills the organs. Surface points buried in another organ are
/// dropped.
inline std::vector<Vec3> solid_sample(const SyntheticPlant& plant, double spacing, double interior_spacing) {
    if (!(spacing > 0) || !(interior_spacing > 0)) throw PreconditionError("solid_sample: spacing must be > 0");
    const auto cur = plant.current_organs();
    std::vector<Vec3> out;
    for (std::size_t i = 0; i < cur.size(); ++i) {
        const Frustum& f = cur[i];
        const Vec3 ax = f.axis(), e1 = ax.unitOrthogonal(), e2 = ax.cross(e1);
        const double l = f.length();
        auto ring = [&](const Vec3& c, double r) {
            if (r <= 0) {
                out.push_back(c);
                return;
            }
            const int n = std::max(3, static_cast<int>(std::ceil(2 * M_PI * r / spacing)));
            for (int k = 0; k < n; ++k) {
                const double phi = 2 * M_PI * k / n;
                out.push_back(c + r * (std::cos(phi) * e1 + std::sin(phi) * e2));
            }
        };
        const std::size_t first = out.size();
        const int nh = std::max(1, static_cast<int>(std::ceil(l / spacing)));
        for (int k = 0; k <= nh; ++k) {
            const double h = l * k / nh;
            ring(f.a + h * ax, f.radius_at(h));
        }
        for (int end = 0; end < 2; ++end) {
            const double rc = end == 0 ? f.r0 : f.r1;
            const int nr = static_cast<int>(std::ceil(rc / spacing));
            for (int k = 0; k < nr; ++k) ring(end == 0 ? f.a : f.b, rc * k / nr);
        }
        // Drop surface points inside another organ.
        std::size_t w = first;
        for (std::size_t r = first; r < out.size(); ++r) {
            bool buried = false;
            for (std::size_t j = 0; j < cur.size() && !buried; ++j)
                if (j != i && cur[j].contains(out[r], -1e-9)) buried = true;
            if (!buried) out[w++] = out[r];
        }
        out.resize(w);
        const double margin = 0.6 * interior_spacing;
        const double rmax = std::max(f.r0, f.r1);
        for (double h = margin; h <= l - margin; h += interior_spacing)
            for (double x = -rmax; x <= rmax; x += interior_spacing)
                for (double y = -rmax; y <= rmax; y += interior_spacing)
                    if (std::hypot(x, y) <= f.radius_at(h) - margin) out.push_back(f.a + h * ax + x * e1 + y * e2);
    }
    return out;
}

namespace detail {

inline Vec3 direction(double azimuth_deg, double elevation_deg) {
    const double az = azimuth_deg * M_PI / 180.0, el = elevation_deg * M_PI / 180.0;
    return Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
}

}  // namespace detail

/// Deterministic plant for a given seed. Branch points along each parent are
/// spread over its upper two thirds with random azimuth and elevation.
inline SyntheticPlant generate_plant(const PlantParams& params, std::uint32_t seed) {
    SyntheticPlant plant;
    plant.seed = seed;
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const Vec3 top(0, 0, params.stem_height);
    plant.organs.push_back({Vec3::Zero(), top, params.stem_radius, params.stem_radius});
    plant.organ_kinds.push_back("stem");

    struct Parent {
        Vec3 a, b;
        std::size_t level;
    };
    std::vector<Parent> parents{{Vec3::Zero(), top, 0}};
    for (std::size_t pi = 0; pi < parents.size(); ++pi) {
        const Parent par = parents[pi];
        if (par.level >= params.depth) continue;
        const std::size_t nb = par.level == 0 ? params.branch_count : std::max<std::size_t>(1, params.branch_count / 3);
        const double len_scale = par.level == 0 ? 1.0 : 0.5;
        const double golden = 137.50776;
        const double az0 = 360.0 * u(rng);
        for (std::size_t k = 0; k < nb; ++k) {
            // Even spread along the parent with jitter, golden-angle azimuths.
            const double t = 0.3 + 0.6 * (static_cast<double>(k) + 0.25 + 0.5 * u(rng)) / static_cast<double>(nb);
            const Vec3 j = par.a + t * (par.b - par.a);
            const double az = az0 + golden * static_cast<double>(k) + 10.0 * (u(rng) - 0.5);
            const double el = params.min_elevation_deg + (params.max_elevation_deg - params.min_elevation_deg) * u(rng);
            const double len = params.branch_length * len_scale * (0.85 + 0.3 * u(rng));
            const Vec3 dir = detail::direction(az, el);
            const Vec3 tip = j + len * dir;
            plant.organs.push_back({j, tip, params.branch_radius, params.branch_radius * 0.8});
            plant.organ_kinds.push_back("branch");
            plant.junctions.push_back(j);
            parents.push_back({j, tip, par.level + 1});
            if (params.leaves && par.level + 1 == params.depth) {
                // Leaf disc beyond the tip, facing mostly upward.
                const Vec3 normal = (Vec3::UnitZ() + 0.6 * Vec3(dir.x(), dir.y(), 0)).normalized();
                const Vec3 centre = tip + (params.leaf_radius * 0.9) * Vec3(dir.x(), dir.y(), 0).normalized();
                plant.organs.push_back({centre - 0.5 * params.leaf_thickness * normal,
                                        centre + 0.5 * params.leaf_thickness * normal, params.leaf_radius,
                                        params.leaf_radius});
                plant.organ_kinds.push_back("leaf");
            }
        }
    }
    plant.growth.assign(plant.organs.size(), 1.0);
    return plant;
}

/// Single stem, no branches or leaves.
inline SyntheticPlant stem_plant(double radius, double height) {
    PlantParams p;
    p.stem_radius = radius;
    p.stem_height = height;
    p.depth = 0;
    return generate_plant(p, 0);
}

/// Stem with five branch junctions and a leaf on each branch.
inline SyntheticPlant rosette_plant(std::uint32_t seed = 7) {
    PlantParams p;
    p.branch_count = 5;
    p.depth = 1;
    return generate_plant(p, seed);
}

/// Grows every organ for `dt_hours` at the volumetric log-rate of `phase`.
inline SyntheticPlant grow_step(const SyntheticPlant& plant, double dt_hours, double day_rate, double night_rate,
                                LightPhase phase) {
    if (!(dt_hours > 0)) throw PreconditionError("grow_step: dt must be > 0");
    if (!std::isfinite(day_rate) || !std::isfinite(night_rate)) throw PreconditionError("grow_step: rates must be finite");
    const double rate = phase == LightPhase::Day ? day_rate : night_rate;
    SyntheticPlant out = plant;
    const double f = std::exp(rate * dt_hours / (24.0 * 3.0));
    for (auto& g : out.growth) g *= f;
    return out;
}

/// Grows the plant from `from` to `to`, switching rate exactly at each
/// lights-on and lights-off time.
inline SyntheticPlant grow_between(const SyntheticPlant& plant, TimePoint from, TimePoint to, double day_rate,
                                   double night_rate, const Photoperiod& photoperiod) {
    if (!(to > from)) throw PreconditionError("grow_between: end must be after start");
    photoperiod.validate();
    SyntheticPlant out = plant;
    TimePoint t = from;
    while (t < to) {
        const auto midnight = std::chrono::floor<std::chrono::days>(t);
        TimePoint next = to;
        for (int day = 0; day < 2; ++day)
            for (int m : {photoperiod.lights_on, photoperiod.lights_off}) {
                const TimePoint b = midnight + std::chrono::days(day) + std::chrono::minutes(m);
                if (b > t && b < next) next = b;
            }
        const double hours = std::chrono::duration<double, std::ratio<3600>>(next - t).count();
        out = grow_step(out, hours, day_rate, night_rate, label_phase(t, photoperiod));
        t = next;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Virtual scanner

struct ScannerModel {
    double resolution = kScannerResolution;  // mm between samples
    double fov_width = 200.0;                // stage travel, mm
    double standoff = 560.0;                 // scanner to rotation centre, mm
    double pedestal_standoff = 260.0;        // scanner to pedestal, mm
    double noise_sigma = 0.05;               // along-ray Gaussian noise, mm
    double jitter_amplitude = 0.0;           // optional coherent per-scan sway, mm
    std::uint32_t noise_seed = 1;

    void validate() const {
        if (!(resolution > 0)) throw PreconditionError("scanner resolution must be > 0");
        if (!(fov_width > 0)) throw PreconditionError("scanner FOV must be > 0");
        if (noise_sigma < 0) throw PreconditionError("scanner noise must be >= 0");
    }
};

struct ScanResult {
    PointCloud cloud;            // scanner frame
    int partial_scans = 1;
    bool clipped = false;        // plant wider than three FOV widths
    std::string warning;
};

/// Scanner frame of the view at `view_angle` degrees: the world rotated by
/// -view_angle about the vertical axis through `centre`. The returned
/// transform maps scanner-frame points back into the world.
inline RigidTransform view_to_world(double view_angle, const Vec3& centre) { return RigidTransform::about_z(view_angle, centre); }

/// Orthographic ray-cast of the plant from azimuth `view_angle` about the
/// vertical axis through `centre`. Rays lie on a grid with spacing equal to the
/// resolution; only the first hit is recorded. A pre-scan of the silhouette
/// decides how many adjacent stage windows (at most 3) are needed.
inline ScanResult virtual_scan(const SyntheticPlant& plant, double view_angle, const ScannerModel& model,
                               const Vec3& centre) {
    model.validate();
    const double az = view_angle * M_PI / 180.0;
    const Vec3 toward_scanner(std::cos(az), std::sin(az), 0.0);
    const Vec3 d = -toward_scanner;                     // ray direction
    const Vec3 side = Vec3::UnitZ().cross(toward_scanner);  // horizontal image axis

    // Silhouette pre-scan: bounding box of the plant projected on the image axes.
    const Aabb box = plant.bounds();
    double umin = std::numeric_limits<double>::infinity(), umax = -umin;
    for (int c = 0; c < 8; ++c) {
        const Vec3 corner((c & 1) ? box.max.x() : box.min.x(), (c & 2) ? box.max.y() : box.min.y(),
                          (c & 4) ? box.max.z() : box.min.z());
        const double uu = (corner - centre).dot(side);
        umin = std::min(umin, uu);
        umax = std::max(umax, uu);
    }
    ScanResult res;
    const double width = umax - umin;
    int windows = std::max(1, static_cast<int>(std::ceil(width / model.fov_width - 1e-9)));
    if (windows > 3) {
        res.clipped = true;
        res.warning = "plant wider than 3 FOV widths; scan clipped";
        windows = 3;
    }
    res.partial_scans = windows;
    const double span = windows * model.fov_width;
    const double start = 0.5 * (umin + umax) - 0.5 * span;

    std::mt19937 rng(model.noise_seed ^ static_cast<std::uint32_t>(std::lround(view_angle * 1000.0)) * 2654435761u);
    std::normal_distribution<double> noise(0.0, model.noise_sigma);
    const RigidTransform to_scanner = view_to_world(view_angle, centre).inverse();
    const double res_mm = model.resolution;
    const double vlo = std::floor(box.min.z() / res_mm) * res_mm;
    const double vhi = box.max.z();
    for (int w = 0; w < windows; ++w) {
        const double wlo = start + w * model.fov_width;
        const double whi = wlo + model.fov_width;
        const double ulo = std::max(wlo, umin), uhi = std::min(whi, umax);
        const double u0 = std::ceil(ulo / res_mm) * res_mm;
        for (double v = vlo; v <= vhi; v += res_mm) {
            for (double uu = u0; uu <= uhi && uu < whi; uu += res_mm) {
                const Vec3 o = centre + model.standoff * toward_scanner + uu * side + (v - centre.z()) * Vec3::UnitZ();
                const auto hit = plant.cast(o, d);
                if (!hit) continue;
                double s = hit->first;
                if (model.noise_sigma > 0) s += noise(rng);
                Vec3 p = o + s * d;
                if (model.jitter_amplitude > 0) {
                    // Smooth sway growing with height, phase fixed per view.
                    const double ph = view_angle * 0.0174533 * 3.0;
                    const double hgt = (p.z() - box.min.z()) / std::max(1e-9, box.extent().z());
                    p += model.jitter_amplitude * hgt * Vec3(std::sin(ph), std::cos(ph), 0.0);
                }
                res.cloud.push_back(to_scanner(p), std::clamp(std::abs(hit->second.dot(d)), 0.0, 1.0));
            }
        }
    }
    return res;
}

inline ScanResult virtual_scan(const SyntheticPlant& plant, double view_angle, const ScannerModel& model) {
    return virtual_scan(plant, view_angle, model, plant.bounds().centre());
}

struct ScanView {
    PointCloud cloud;       // scanner frame
    double view_angle = 0;  // degrees
    Vec3 centre;            // rotation centre used for the session
    int partial_scans = 1;
};

/// `n_views` scans at equal azimuth increments about the vertical axis
/// through the plant's bounding-box centre.
inline std::vector<ScanView> scan_session(const SyntheticPlant& plant, const ScannerModel& model, std::size_t n_views = 12) {
    if (n_views < 2) throw PreconditionError("scan_session: need at least 2 views");
    const Vec3 centre = plant.bounds().centre();
    std::vector<ScanView> views;
    for (std::size_t i = 0; i < n_views; ++i) {
        const double angle = 360.0 * static_cast<double>(i) / static_cast<double>(n_views);
        auto r = virtual_scan(plant, angle, model, centre);
        r.cloud.view_id = static_cast<int>(i);
        views.push_back({std::move(r.cloud), angle, centre, r.partial_scans});
    }
    return views;
}

/// Views mapped into the world frame using their known turntable angles.
inline std::vector<PointCloud> views_in_world(const std::vector<ScanView>& views) {
    std::vector<PointCloud> out;
    for (const auto& v : views) out.push_back(view_to_world(v.view_angle, v.centre).apply(v.cloud));
    return out;
}

}  // namespace plantscan
