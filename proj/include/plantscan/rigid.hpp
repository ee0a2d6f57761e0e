#pragma once

#include <algorithm>
#include <cmath>
#include <span>

#include "plantscan/cloudcore.hpp"

namespace plantscan {

/// Proper rigid motion x -> R x + t.
struct RigidTransform {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    static RigidTransform identity() { return {}; }

    /// Rotation by `degrees` about the vertical (z) axis through `centre`.
    static RigidTransform about_z(double degrees, const Vec3& centre = Vec3::Zero()) {
        RigidTransform t;
        t.rotation = Eigen::AngleAxisd(degrees * M_PI / 180.0, Vec3::UnitZ()).toRotationMatrix();
        t.translation = centre - t.rotation * centre;
        return t;
    }

    Vec3 operator()(const Vec3& p) const { return rotation * p + translation; }

    /// (*this * other)(x) == (*this)(other(x))
    RigidTransform operator*(const RigidTransform& other) const {
        return {rotation * other.rotation, rotation * other.translation + translation};
    }

    RigidTransform inverse() const {
        const Mat3 rt = rotation.transpose();
        return {rt, -(rt * translation)};
    }

    bool is_valid(double tol = 1e-9) const {
        return (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
               std::abs(rotation.determinant() - 1.0) <= tol && translation.allFinite();
    }

    /// Rotation angle in degrees.
    double angle_degrees() const {
        const double c = std::clamp((rotation.trace() - 1.0) / 2.0, -1.0, 1.0);
        return std::acos(c) * 180.0 / M_PI;
    }

    PointCloud apply(const PointCloud& cloud) const {
        PointCloud out = cloud;
        for (auto& p : out.points) p = (*this)(p);
        return out;
    }
};

/// Least-squares rigid transform taking `from[i]` onto `to[i]` (Kabsch).
inline RigidTransform fit_rigid(std::span<const Vec3> from, std::span<const Vec3> to) {
    if (from.size() != to.size() || from.empty()) throw PreconditionError("fit_rigid: need matched, non-empty point sets");
    const Vec3 cf = centroid(from), ct = centroid(to);
    Mat3 h = Mat3::Zero();
    for (std::size_t i = 0; i < from.size(); ++i) h += (from[i] - cf) * (to[i] - ct).transpose();
    Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 d = Mat3::Identity();
    if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0) d(2, 2) = -1.0;
    RigidTransform t;
    t.rotation = svd.matrixV() * d * svd.matrixU().transpose();
    t.translation = ct - t.rotation * cf;
    return t;
}

}  // namespace plantscan
