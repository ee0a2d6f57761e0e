#pragma once

// Orientation and in-sphere predicates. A floating-point evaluation is used
// when its forward error bound certifies the sign; otherwise the determinant
// is recomputed exactly in rational arithmetic.

#include <cmath>
#include <limits>

#include <gmpxx.h>

#include "plantscan/cloudcore.hpp"

namespace plantscan::predicates {

namespace detail {

inline constexpr double kEps = std::numeric_limits<double>::epsilon() / 2;  // 2^-53
inline constexpr double kOrientBound = (7.0 + 56.0 * kEps) * kEps;
inline constexpr double kInSphereBound = (16.0 + 224.0 * kEps) * kEps;

inline int sign_of(const mpq_class& v) { return sgn(v); }

inline int orient_exact(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
    const mpq_class adx = mpq_class(a.x()) - d.x(), ady = mpq_class(a.y()) - d.y(), adz = mpq_class(a.z()) - d.z();
    const mpq_class bdx = mpq_class(b.x()) - d.x(), bdy = mpq_class(b.y()) - d.y(), bdz = mpq_class(b.z()) - d.z();
    const mpq_class cdx = mpq_class(c.x()) - d.x(), cdy = mpq_class(c.y()) - d.y(), cdz = mpq_class(c.z()) - d.z();
    const mpq_class det = adx * (bdy * cdz - bdz * cdy) + bdx * (cdy * adz - cdz * ady) + cdx * (ady * bdz - adz * bdy);
    return sign_of(det);
}

inline int insphere_exact(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d, const Vec3& e) {
    auto diff = [&](const Vec3& p, int k) -> mpq_class { return mpq_class(p[k]) - e[k]; };
    const mpq_class aex = diff(a, 0), aey = diff(a, 1), aez = diff(a, 2);
    const mpq_class bex = diff(b, 0), bey = diff(b, 1), bez = diff(b, 2);
    const mpq_class cex = diff(c, 0), cey = diff(c, 1), cez = diff(c, 2);
    const mpq_class dex = diff(d, 0), dey = diff(d, 1), dez = diff(d, 2);
    const mpq_class ab = aex * bey - bex * aey, bc = bex * cey - cex * bey;
    const mpq_class cd = cex * dey - dex * cey, da = dex * aey - aex * dey;
    const mpq_class ac = aex * cey - cex * aey, bd = bex * dey - dex * bey;
    const mpq_class abc = aez * bc - bez * ac + cez * ab;
    const mpq_class bcd = bez * cd - cez * bd + dez * bc;
    const mpq_class cda = cez * da + dez * ac + aez * cd;
    const mpq_class dab = dez * ab + aez * bd + bez * da;
    const mpq_class alift = aex * aex + aey * aey + aez * aez;
    const mpq_class blift = bex * bex + bey * bey + bez * bez;
    const mpq_class clift = cex * cex + cey * cey + cez * cez;
    const mpq_class dlift = dex * dex + dey * dey + dez * dez;
    const mpq_class det = (dlift * abc - clift * dab) + (blift * cda - alift * bcd);
    return sign_of(det);
}

}  // namespace detail

/// Sign of det[b-a, c-a, d-a]: positive when d lies on the side of the
/// normal (b-a)x(c-a).
inline int orient3d(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
    const double adx = a.x() - d.x(), ady = a.y() - d.y(), adz = a.z() - d.z();
    const double bdx = b.x() - d.x(), bdy = b.y() - d.y(), bdz = b.z() - d.z();
    const double cdx = c.x() - d.x(), cdy = c.y() - d.y(), cdz = c.z() - d.z();
    const double bdxcdy = bdx * cdy, cdxbdy = cdx * bdy;
    const double cdxady = cdx * ady, adxcdy = adx * cdy;
    const double adxbdy = adx * bdy, bdxady = bdx * ady;
    const double det = adz * (bdxcdy - cdxbdy) + bdz * (cdxady - adxcdy) + cdz * (adxbdy - bdxady);
    const double permanent = (std::abs(bdxcdy) + std::abs(cdxbdy)) * std::abs(adz) +
                             (std::abs(cdxady) + std::abs(adxcdy)) * std::abs(bdz) +
                             (std::abs(adxbdy) + std::abs(bdxady)) * std::abs(cdz);
    const double bound = detail::kOrientBound * permanent;
    // det above is the left-handed form; flip to the right-handed convention.
    if (det > bound) return -1;
    if (-det > bound) return 1;
    return -detail::orient_exact(a, b, c, d);
}

/// For a positively oriented tetrahedron (orient3d(a,b,c,d) > 0): positive
/// when e lies strictly inside the circumsphere, zero when on it.
inline int insphere(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d, const Vec3& e) {
    const double aex = a.x() - e.x(), aey = a.y() - e.y(), aez = a.z() - e.z();
    const double bex = b.x() - e.x(), bey = b.y() - e.y(), bez = b.z() - e.z();
    const double cex = c.x() - e.x(), cey = c.y() - e.y(), cez = c.z() - e.z();
    const double dex = d.x() - e.x(), dey = d.y() - e.y(), dez = d.z() - e.z();

    const double aexbey = aex * bey, bexaey = bex * aey;
    const double bexcey = bex * cey, cexbey = cex * bey;
    const double cexdey = cex * dey, dexcey = dex * cey;
    const double dexaey = dex * aey, aexdey = aex * dey;
    const double aexcey = aex * cey, cexaey = cex * aey;
    const double bexdey = bex * dey, dexbey = dex * bey;
    const double ab = aexbey - bexaey, bc = bexcey - cexbey, cd = cexdey - dexcey;
    const double da = dexaey - aexdey, ac = aexcey - cexaey, bd = bexdey - dexbey;

    const double abc = aez * bc - bez * ac + cez * ab;
    const double bcd = bez * cd - cez * bd + dez * bc;
    const double cda = cez * da + dez * ac + aez * cd;
    const double dab = dez * ab + aez * bd + bez * da;

    const double alift = aex * aex + aey * aey + aez * aez;
    const double blift = bex * bex + bey * bey + bez * bez;
    const double clift = cex * cex + cey * cey + cez * cez;
    const double dlift = dex * dex + dey * dey + dez * dez;
    const double det = (dlift * abc - clift * dab) + (blift * cda - alift * bcd);

    const double aezp = std::abs(aez), bezp = std::abs(bez), cezp = std::abs(cez), dezp = std::abs(dez);
    const double aexbeyp = std::abs(aexbey), bexaeyp = std::abs(bexaey);
    const double bexceyp = std::abs(bexcey), cexbeyp = std::abs(cexbey);
    const double cexdeyp = std::abs(cexdey), dexceyp = std::abs(dexcey);
    const double dexaeyp = std::abs(dexaey), aexdeyp = std::abs(aexdey);
    const double aexceyp = std::abs(aexcey), cexaeyp = std::abs(cexaey);
    const double bexdeyp = std::abs(bexdey), dexbeyp = std::abs(dexbey);
    const double permanent =
        ((cexdeyp + dexceyp) * bezp + (dexbeyp + bexdeyp) * cezp + (bexceyp + cexbeyp) * dezp) * alift +
        ((dexaeyp + aexdeyp) * cezp + (aexceyp + cexaeyp) * dezp + (cexdeyp + dexceyp) * aezp) * blift +
        ((aexbeyp + bexaeyp) * dezp + (bexdeyp + dexbeyp) * aezp + (dexaeyp + aexdeyp) * bezp) * clift +
        ((bexceyp + cexbeyp) * aezp + (cexaeyp + aexceyp) * bezp + (aexbeyp + bexaeyp) * cezp) * dlift;
    const double bound = detail::kInSphereBound * permanent;
    // Left-handed determinant: inside is negative for our orientation.
    if (det > bound) return -1;
    if (-det > bound) return 1;
    return -detail::insphere_exact(a, b, c, d, e);
}

}  // namespace plantscan::predicates
