#pragma once

// Growth series: schedule and light phases, imputation of missing sessions,
// spline interpolation, log-linear growth rates and day/night increments.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <gsl/gsl_errno.h>
#include <gsl/gsl_spline.h>

#include "plantscan/error.hpp"

namespace plantscan {

using TimePoint = std::chrono::sys_seconds;

/// Parses "YYYY-MM-DDTHH:MM:SS" with an optional trailing "Z" (UTC).
inline TimePoint parse_timestamp(std::string_view s) {
    int y, mo, d, h, mi, sec;
    char tail = 0;
    const std::string str(s);
    const int n = std::sscanf(str.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d%c", &y, &mo, &d, &h, &mi, &sec, &tail);
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{static_cast<unsigned>(mo)},
                                          std::chrono::day{static_cast<unsigned>(d)}};
    if (n < 6 || (n == 7 && tail != 'Z') || !ymd.ok() || h < 0 || h > 23 || mi < 0 || mi > 59 || sec < 0 || sec > 59)
        throw ParseError("timestamp", 0, "expected YYYY-MM-DDTHH:MM:SSZ, got '" + str + "'");
    return std::chrono::sys_days{ymd} + std::chrono::hours{h} + std::chrono::minutes{mi} + std::chrono::seconds{sec};
}

inline std::string format_timestamp(TimePoint t) {
    const auto day = std::chrono::floor<std::chrono::days>(t);
    const std::chrono::year_month_day ymd{day};
    const std::chrono::hh_mm_ss hms{t - day};
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02ld:%02ld:%02ldZ", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                  static_cast<long>(hms.hours().count()), static_cast<long>(hms.minutes().count()),
                  static_cast<long>(hms.seconds().count()));
    return buf;
}

enum class LightPhase { Day, Night };

inline std::string_view to_string(LightPhase p) { return p == LightPhase::Day ? "day" : "night"; }

inline LightPhase parse_phase(std::string_view s) {
    if (s == "day") return LightPhase::Day;
    if (s == "night") return LightPhase::Night;
    throw ParseError("phase", 0, "expected 'day' or 'night', got '" + std::string(s) + "'");
}

/// Daily lights-on interval [on, off) in minutes after midnight UTC; wraps
/// past midnight when off < on.
struct Photoperiod {
    int lights_on = 6 * 60;
    int lights_off = 18 * 60;

    void validate() const {
        if (lights_on < 0 || lights_on >= 1440 || lights_off < 0 || lights_off >= 1440 || lights_on == lights_off)
            throw PreconditionError("photoperiod: need distinct clock times within one day");
    }

    double light_hours() const {
        const int d = lights_off - lights_on;
        return (d > 0 ? d : d + 1440) / 60.0;
    }

    /// "L/D" hours with lights on at 06:00 (e.g. "12/12", "16/8"), or
    /// "HH:MM-HH:MM".
    static Photoperiod parse(std::string_view s) {
        const std::string str(s);
        int a, b, c, d;
        char tail;
        Photoperiod p;
        if (std::sscanf(str.c_str(), "%d:%d-%d:%d%c", &a, &b, &c, &d, &tail) == 4) {
            p.lights_on = a * 60 + b;
            p.lights_off = c * 60 + d;
        } else if (std::sscanf(str.c_str(), "%d/%d%c", &a, &b, &tail) == 2 && a > 0 && b > 0 && a + b == 24) {
            p.lights_off = (p.lights_on + a * 60) % 1440;
        } else {
            throw PreconditionError("photoperiod: expected 'L/D' summing to 24 or 'HH:MM-HH:MM', got '" + str + "'");
        }
        p.validate();
        return p;
    }

    std::string str() const {
        char buf[48];
        std::snprintf(buf, sizeof buf, "%02d:%02d-%02d:%02d", lights_on / 60, lights_on % 60, lights_off / 60,
                      lights_off % 60);
        return buf;
    }

    friend bool operator==(const Photoperiod&, const Photoperiod&) = default;
};

inline LightPhase label_phase(TimePoint t, const Photoperiod& p) {
    p.validate();
    const auto since_midnight = t - std::chrono::floor<std::chrono::days>(t);
    const double m = std::chrono::duration<double, std::ratio<60>>(since_midnight).count();
    const bool lit = p.lights_on < p.lights_off ? (m >= p.lights_on && m < p.lights_off)
                                                : (m >= p.lights_on || m < p.lights_off);
    return lit ? LightPhase::Day : LightPhase::Night;
}

/// `per_day` equally spaced sessions a day for `days` days from `start`.
inline std::vector<TimePoint> session_schedule(TimePoint start, int days, int per_day) {
    if (days < 1 || per_day < 1) throw PreconditionError("schedule: need at least one day and one session per day");
    std::vector<TimePoint> out;
    const auto step = std::chrono::seconds(86400 / per_day);
    for (int k = 0; k < days * per_day; ++k) out.push_back(start + k * step);
    return out;
}

// ---------------------------------------------------------------------------

struct GrowthSample {
    TimePoint time;
    double area = 0.0;    // mm^2
    double volume = 0.0;  // mm^3
    LightPhase phase = LightPhase::Day;
    bool imputed = false;

    friend bool operator==(const GrowthSample&, const GrowthSample&) = default;
};

enum class Metric { Area, Volume };

inline double value_of(const GrowthSample& s, Metric m) { return m == Metric::Area ? s.area : s.volume; }

struct GrowthSeries {
    std::vector<GrowthSample> samples;
    Photoperiod photoperiod;

    void validate() const {
        for (std::size_t i = 0; i < samples.size(); ++i) {
            const auto& s = samples[i];
            if (i > 0 && !(s.time > samples[i - 1].time))
                throw PreconditionError("growth series: timestamps must be strictly increasing at sample " +
                                        std::to_string(i));
            if (!s.imputed && !(s.area > 0 && s.volume > 0))
                throw PreconditionError("growth series: non-positive measurement at sample " + std::to_string(i));
        }
    }

    std::size_t size() const noexcept { return samples.size(); }

    /// Days since the first sample.
    std::vector<double> days() const {
        std::vector<double> t;
        for (const auto& s : samples)
            t.push_back(std::chrono::duration<double, std::ratio<86400>>(s.time - samples.front().time).count());
        return t;
    }

    std::vector<double> values(Metric m) const {
        std::vector<double> v;
        for (const auto& s : samples) v.push_back(value_of(s, m));
        return v;
    }

    std::size_t imputed_count() const {
        return static_cast<std::size_t>(std::count_if(samples.begin(), samples.end(), [](const auto& s) { return s.imputed; }));
    }
};

/// Fills every scheduled slot that has no observation. Interior gaps take
/// the mean of the nearest real samples on either side; a single missing
/// slot at either end copies its nearest real neighbour. Observations must
/// sit exactly on scheduled slots.
inline GrowthSeries impute_missing(std::span<const GrowthSample> observed, std::span<const TimePoint> schedule,
                                   const Photoperiod& photoperiod) {
    photoperiod.validate();
    if (schedule.empty()) throw PreconditionError("impute_missing: empty schedule");
    for (std::size_t i = 1; i < schedule.size(); ++i)
        if (!(schedule[i] > schedule[i - 1])) throw PreconditionError("impute_missing: schedule must be increasing");
    std::vector<std::optional<GrowthSample>> slots(schedule.size());
    for (const auto& s : observed) {
        const auto it = std::lower_bound(schedule.begin(), schedule.end(), s.time);
        if (it == schedule.end() || *it != s.time)
            throw PreconditionError("impute_missing: sample at " + format_timestamp(s.time) + " is not on the schedule");
        auto& slot = slots[static_cast<std::size_t>(it - schedule.begin())];
        if (slot) throw PreconditionError("impute_missing: two samples at " + format_timestamp(s.time));
        slot = s;
    }
    const std::size_t n = slots.size();
    const auto missing = static_cast<std::size_t>(std::count(slots.begin(), slots.end(), std::nullopt));
    if (2 * missing > n)
        throw DataQualityError("impute_missing: " + std::to_string(missing) + " of " + std::to_string(n) +
                               " sessions missing (more than half)");
    if (n >= 2 && ((!slots[0] && !slots[1]) || (!slots[n - 1] && !slots[n - 2])))
        throw PreconditionError("impute_missing: two consecutive missing sessions at a series boundary");

    GrowthSeries out;
    out.photoperiod = photoperiod;
    for (std::size_t i = 0; i < n; ++i) {
        if (slots[i]) {
            out.samples.push_back(*slots[i]);
            continue;
        }
        std::optional<std::size_t> prev, next;
        for (std::size_t j = i; j-- > 0;)
            if (slots[j]) {
                prev = j;
                break;
            }
        for (std::size_t j = i + 1; j < n; ++j)
            if (slots[j]) {
                next = j;
                break;
            }
        GrowthSample g;
        g.time = schedule[i];
        g.phase = label_phase(g.time, photoperiod);
        g.imputed = true;
        if (prev && next) {
            g.area = 0.5 * (slots[*prev]->area + slots[*next]->area);
            g.volume = 0.5 * (slots[*prev]->volume + slots[*next]->volume);
        } else {
            const auto& src = *slots[prev ? *prev : *next];
            g.area = src.area;
            g.volume = src.volume;
        }
        out.samples.push_back(g);
    }
    return out;
}

// ---------------------------------------------------------------------------

/// Natural cubic spline through (t_i, v_i).
class NaturalSpline {
public:
    NaturalSpline(std::span<const double> t, std::span<const double> v) {
        if (t.size() != v.size()) throw PreconditionError("spline: times and values differ in length");
        if (t.size() < 4) throw PreconditionError("spline: need at least 4 samples");
        for (std::size_t i = 1; i < t.size(); ++i) {
            if (t[i] == t[i - 1]) throw PreconditionError("spline: duplicate time at sample " + std::to_string(i));
            if (!(t[i] > t[i - 1])) throw PreconditionError("spline: times must increase");
        }
        gsl_set_error_handler_off();
        spline_.reset(gsl_spline_alloc(gsl_interp_cspline, t.size()));
        accel_.reset(gsl_interp_accel_alloc());
        if (gsl_spline_init(spline_.get(), t.data(), v.data(), t.size()) != GSL_SUCCESS)
            throw NumericalError("spline: construction failed", 0);
        lo_ = t.front();
        hi_ = t.back();
    }

    double operator()(double x) const {
        if (x < lo_ || x > hi_) throw PreconditionError("spline: evaluation outside the sampled range");
        return gsl_spline_eval(spline_.get(), x, accel_.get());
    }

    double lo() const { return lo_; }
    double hi() const { return hi_; }

private:
    struct SplineFree {
        void operator()(gsl_spline* s) const { gsl_spline_free(s); }
    };
    struct AccelFree {
        void operator()(gsl_interp_accel* a) const { gsl_interp_accel_free(a); }
    };
    std::unique_ptr<gsl_spline, SplineFree> spline_;
    std::unique_ptr<gsl_interp_accel, AccelFree> accel_;
    double lo_ = 0, hi_ = 0;
};

inline NaturalSpline fit_spline(const GrowthSeries& series, Metric metric) {
    const auto t = series.days();
    const auto v = series.values(metric);
    return NaturalSpline(t, v);
}

// ---------------------------------------------------------------------------

/// Half-open index range [first, last) of samples used by a fit.
struct FitWindow {
    std::size_t first = 0;
    std::size_t last = static_cast<std::size_t>(-1);
};

struct GrowthRateFit {
    double slope = 0.0;      // log-rate per day
    double intercept = 0.0;  // ln value at day 0
    double residual_rms = 0.0;
    std::size_t first = 0, last = 0;
};

/// Least-squares line through (days, ln value) over the window.
inline GrowthRateFit growth_rate(const GrowthSeries& series, Metric metric, FitWindow window = {}) {
    const std::size_t last = std::min(window.last, series.size());
    if (window.first >= last || last - window.first < 2)
        throw PreconditionError("growth_rate: window needs at least 2 samples");
    const auto t = series.days();
    std::vector<double> x, y;
    for (std::size_t i = window.first; i < last; ++i) {
        const double v = value_of(series.samples[i], metric);
        if (!(v > 0))
            throw PreconditionError("growth_rate: non-positive value " + std::to_string(v) + " at sample " +
                                    std::to_string(i) + " (" + format_timestamp(series.samples[i].time) + ")");
        x.push_back(t[i]);
        y.push_back(std::log(v));
    }
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (!(sxx > 0)) throw PreconditionError("growth_rate: window spans no time");
    GrowthRateFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    double ss = 0;
    for (std::size_t i = 0; i < x.size(); ++i) ss += std::pow(y[i] - (fit.intercept + fit.slope * x[i]), 2);
    fit.residual_rms = std::sqrt(ss / n);
    fit.first = window.first;
    fit.last = last;
    return fit;
}

// ---------------------------------------------------------------------------

enum class Increment { Absolute, Log };

struct DiurnalStats {
    double day_increment = 0.0;
    double night_increment = 0.0;
    std::optional<double> ratio;  // night / day; empty when the day increment is zero
};

/// Sums consecutive-sample increments by the light phase of each interval's
/// starting sample. Absolute increments telescope to last - first; log
/// increments to ln(last / first).
inline DiurnalStats diurnal_stats(const GrowthSeries& series, Metric metric, Increment mode = Increment::Absolute) {
    if (series.size() < 2) throw PreconditionError("diurnal_stats: need at least 2 samples");
    const auto span = series.samples.back().time - series.samples.front().time;
    if (span < std::chrono::hours(24)) throw PreconditionError("diurnal_stats: series must cover at least one day");
    auto f = [&](double v) {
        if (mode == Increment::Absolute) return v;
        if (!(v > 0)) throw PreconditionError("diurnal_stats: log increments need positive values");
        return std::log(v);
    };
    DiurnalStats out;
    for (std::size_t i = 0; i + 1 < series.size(); ++i) {
        const double d = f(value_of(series.samples[i + 1], metric)) - f(value_of(series.samples[i], metric));
        (series.samples[i].phase == LightPhase::Day ? out.day_increment : out.night_increment) += d;
    }
    if (out.day_increment != 0.0) out.ratio = out.night_increment / out.day_increment;
    return out;
}

// ---------------------------------------------------------------------------

inline void write_growth_csv(std::ostream& out, const GrowthSeries& series) {
    out << "timestamp,phase,area,volume,imputed\n";
    char buf[64];
    for (const auto& s : series.samples) {
        out << format_timestamp(s.time) << ',' << to_string(s.phase) << ',';
        std::snprintf(buf, sizeof buf, "%.9g,%.9g", s.area, s.volume);
        out << buf << ',' << (s.imputed ? 1 : 0) << '\n';
    }
}

/// Both splines sampled at `per_day` points a day, for dual-axis plots.
inline void write_spline_csv(std::ostream& out, const GrowthSeries& series, int per_day = 48) {
    if (per_day < 1) throw PreconditionError("spline csv: density must be >= 1 per day");
    const auto area = fit_spline(series, Metric::Area);
    const auto volume = fit_spline(series, Metric::Volume);
    out << "day,area,volume\n";
    const auto n = static_cast<long>(std::floor(area.hi() * per_day + 1e-9));
    char buf[96];
    for (long k = 0; k <= n; ++k) {
        const double t = std::min(area.hi(), static_cast<double>(k) / per_day);
        std::snprintf(buf, sizeof buf, "%.6f,%.9g,%.9g\n", t, area(t), volume(t));
        out << buf;
    }
}

}  // namespace plantscan
