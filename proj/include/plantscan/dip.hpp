#pragma once

// Hartigan's dip statistic of unimodality: the sup-distance between the
// empirical CDF and the closest unimodal CDF. Follows the greatest convex
// minorant / least concave majorant iteration of Hartigan & Hartigan (1985).

#include <algorithm>
#include <span>
#include <vector>

#include "plantscan/error.hpp"

namespace plantscan {

struct DipResult {
    double dip = 0.0;
    std::size_t modal_low = 0;   // 0-based index of the modal interval ends
    std::size_t modal_high = 0;
};

/// `sorted` must be non-decreasing and hold at least 4 values. The result is
/// in [0, 0.25]; a point mass has dip 0, n distinct values at least 1/(2n).
inline DipResult dip_statistic(std::span<const double> sorted) {
    const int n = static_cast<int>(sorted.size());
    if (n < 4) throw PreconditionError("dip_statistic: need at least 4 values");
    for (int k = 1; k < n; ++k)
        if (sorted[static_cast<std::size_t>(k)] < sorted[static_cast<std::size_t>(k - 1)])
            throw PreconditionError("dip_statistic: sample is not sorted");

    // 1-based views to keep the index arithmetic of the original algorithm.
    auto x = [&](int i) { return sorted[static_cast<std::size_t>(i - 1)]; };
    DipResult res;
    if (x(n) == x(1)) {
        res.modal_high = static_cast<std::size_t>(n - 1);
        return res;
    }
    std::vector<int> mn(static_cast<std::size_t>(n + 1)), mj(static_cast<std::size_t>(n + 1));
    std::vector<int> gcm(static_cast<std::size_t>(n + 1)), lcm(static_cast<std::size_t>(n + 1));
    auto at = [](std::vector<int>& v, int i) -> int& { return v[static_cast<std::size_t>(i)]; };

    // Indices for the greatest convex minorant.
    at(mn, 1) = 1;
    for (int j = 2; j <= n; ++j) {
        at(mn, j) = j - 1;
        while (true) {
            const int mnj = at(mn, j);
            const int mnmnj = at(mn, mnj);
            if (mnj == 1 || (x(j) - x(mnj)) * (mnj - mnmnj) < (x(mnj) - x(mnmnj)) * (j - mnj)) break;
            at(mn, j) = mnmnj;
        }
    }
    // Indices for the least concave majorant.
    at(mj, n) = n;
    for (int k = n - 1; k >= 1; --k) {
        at(mj, k) = k + 1;
        while (true) {
            const int mjk = at(mj, k);
            const int mjmjk = at(mj, mjk);
            if (mjk == n || (x(k) - x(mjk)) * (mjk - mjmjk) < (x(mjk) - x(mjmjk)) * (k - mjk)) break;
            at(mj, k) = mjmjk;
        }
    }

    int low = 1, high = n;
    double dip = 1.0;  // works in units of 1/(2n) until the end
    while (true) {
        at(gcm, 1) = high;
        int i = 1;
        while (at(gcm, i) > low) {
            at(gcm, i + 1) = at(mn, at(gcm, i));
            ++i;
        }
        const int l_gcm = i;
        int ig = l_gcm, ix = ig - 1;

        at(lcm, 1) = low;
        i = 1;
        while (at(lcm, i) < high) {
            at(lcm, i + 1) = at(mj, at(lcm, i));
            ++i;
        }
        const int l_lcm = i;
        int ih = l_lcm, iv = 2;

        // Largest distance between the GCM and LCM on [low, high].
        long double d = 0.0L;
        if (l_gcm != 2 || l_lcm != 2) {
            do {
                const int gcmix = at(gcm, ix), lcmiv = at(lcm, iv);
                if (gcmix > lcmiv) {
                    const int gcmi1 = at(gcm, ix + 1);
                    const long double dx = (lcmiv - gcmi1 + 1) - (static_cast<long double>(x(lcmiv)) - x(gcmi1)) *
                                                                     (gcmix - gcmi1) / (x(gcmix) - x(gcmi1));
                    ++iv;
                    if (dx >= d) {
                        d = dx;
                        ig = ix + 1;
                        ih = iv - 1;
                    }
                } else {
                    const int lcmiv1 = at(lcm, iv - 1);
                    const long double dx = (static_cast<long double>(x(gcmix)) - x(lcmiv1)) * (lcmiv - lcmiv1) /
                                               (x(lcmiv) - x(lcmiv1)) -
                                           (gcmix - lcmiv1 - 1);
                    --ix;
                    if (dx >= d) {
                        d = dx;
                        ig = ix + 1;
                        ih = iv;
                    }
                }
                if (ix < 1) ix = 1;
                if (iv > l_lcm) iv = l_lcm;
            } while (at(gcm, ix) != at(lcm, iv));
        } else {
            d = 1.0L;
        }
        if (d < dip) break;

        // Dip of the convex minorant on [low, gcm[ig]].
        double dip_l = 0.0;
        for (int j = ig; j < l_gcm; ++j) {
            double max_t = 1.0;
            const int jb = at(gcm, j + 1), je = at(gcm, j);
            if (je - jb > 1 && x(je) != x(jb)) {
                const double c = (je - jb) / (x(je) - x(jb));
                for (int jj = jb; jj <= je; ++jj) max_t = std::max(max_t, (jj - jb + 1) - (x(jj) - x(jb)) * c);
            }
            dip_l = std::max(dip_l, max_t);
        }
        // Dip of the concave majorant on [lcm[ih], high].
        double dip_u = 0.0;
        for (int j = ih; j < l_lcm; ++j) {
            double max_t = 1.0;
            const int jb = at(lcm, j), je = at(lcm, j + 1);
            if (je - jb > 1 && x(je) != x(jb)) {
                const double c = (je - jb) / (x(je) - x(jb));
                for (int jj = jb; jj <= je; ++jj) max_t = std::max(max_t, (x(jj) - x(jb)) * c - (jj - jb - 1));
            }
            dip_u = std::max(dip_u, max_t);
        }
        dip = std::max(dip, std::max(dip_l, dip_u));

        // Without this check the iteration can cycle.
        if (low == at(gcm, ig) && high == at(lcm, ih)) break;
        low = at(gcm, ig);
        high = at(lcm, ih);
    }
    res.dip = dip / (2.0 * n);
    res.modal_low = static_cast<std::size_t>(low - 1);
    res.modal_high = static_cast<std::size_t>(high - 1);
    return res;
}

/// Convenience overload that sorts a copy first.
inline double dip_of(std::vector<double> sample) {
    std::sort(sample.begin(), sample.end());
    return dip_statistic(sample).dip;
}

}  // namespace plantscan
