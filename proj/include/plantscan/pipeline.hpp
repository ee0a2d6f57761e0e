#pragma once

// Session manifest, results record and the per-session / series stages the
// CLI drives. Both documents are JSON with a versioned "schema" field.

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "cloudcore.hpp"
#include "error.hpp"
#include "growth.hpp"
#include "junctions.hpp"
#include "meshing.hpp"
#include "registration.hpp"
#include "rigid.hpp"
#include "synthscan.hpp"

namespace plantscan {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

inline constexpr const char* kManifestSchema = "plantscan.manifest/1";
inline constexpr const char* kResultsSchema = "plantscan.results/1";
inline constexpr const char* kTruthSchema = "plantscan.truth/1";

// ---------------------------------------------------------------------------
// Manifest

struct ScanEntry {
    std::string path;  // relative to the manifest directory unless absolute
    double view_angle = 0.0;
    friend bool operator==(const ScanEntry&, const ScanEntry&) = default;
};

struct SessionEntry {
    std::string id;
    TimePoint time;
    LightPhase phase = LightPhase::Day;
    bool absent = false;  // scheduled but never acquired
    Vec3 centre = Vec3::Zero();  // turntable axis position in the world frame
    std::vector<ScanEntry> scans;
    friend bool operator==(const SessionEntry&, const SessionEntry&) = default;
};

struct SessionManifest {
    std::string plant_id;
    Photoperiod photoperiod;
    std::vector<SessionEntry> sessions;

    void validate() const {
        photoperiod.validate();
        std::map<std::string, int> seen;
        for (std::size_t i = 0; i < sessions.size(); ++i) {
            const auto& s = sessions[i];
            if (s.id.empty()) throw PreconditionError("manifest: session " + std::to_string(i) + " has no id");
            if (seen[s.id]++) throw PreconditionError("manifest: duplicate session id '" + s.id + "'");
            if (i && !(s.time > sessions[i - 1].time))
                throw PreconditionError("manifest: sessions not time-ordered at '" + s.id + "'");
            if (s.absent && !s.scans.empty())
                throw PreconditionError("manifest: absent session '" + s.id + "' lists scans");
        }
    }

    const SessionEntry& session(const std::string& id) const {
        for (const auto& s : sessions)
            if (s.id == id) return s;
        throw PreconditionError("manifest: no session '" + id + "'");
    }

    friend bool operator==(const SessionManifest&, const SessionManifest&) = default;
};

namespace detail {

inline Json vec_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

inline Vec3 json_vec(const Json& j) {
    if (!j.is_array() || j.size() != 3) throw IoError("expected a 3-vector");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline Json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return Json::parse(in);
    } catch (const Json::exception& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

inline void check_schema(const Json& j, const char* schema, const fs::path& path) {
    if (!j.is_object() || !j.contains("schema") || j["schema"] != schema)
        throw IoError(path.string() + ": expected schema " + schema);
}

// Written to a sibling then renamed, so an interrupted run never leaves a
// truncated document behind.
inline void write_text(const fs::path& path, const std::string& text) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw IoError("cannot write " + path.string());
        out << text;
        if (!out) throw IoError("write failed for " + path.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("cannot write " + path.string() + ": " + ec.message());
}

inline void write_json(const fs::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

}  // namespace detail

inline Json to_json(const SessionManifest& m) {
    Json j;
    j["schema"] = kManifestSchema;
    j["plant_id"] = m.plant_id;
    j["photoperiod"] = m.photoperiod.str();
    Json ss = Json::array();
    for (const auto& s : m.sessions) {
        Json e;
        e["id"] = s.id;
        e["timestamp"] = format_timestamp(s.time);
        e["phase"] = std::string(to_string(s.phase));
        e["absent"] = s.absent;
        e["centre"] = detail::vec_json(s.centre);
        Json scans = Json::array();
        for (const auto& sc : s.scans) scans.push_back({{"path", sc.path}, {"view_angle", sc.view_angle}});
        e["scans"] = std::move(scans);
        ss.push_back(std::move(e));
    }
    j["sessions"] = std::move(ss);
    return j;
}

inline SessionManifest manifest_from_json(const Json& j) {
    SessionManifest m;
    try {
        m.plant_id = j.at("plant_id").get<std::string>();
        m.photoperiod = Photoperiod::parse(j.at("photoperiod").get<std::string>());
        for (const auto& e : j.at("sessions")) {
            SessionEntry s;
            s.id = e.at("id").get<std::string>();
            s.time = parse_timestamp(e.at("timestamp").get<std::string>());
            s.phase = parse_phase(e.at("phase").get<std::string>());
            s.absent = e.value("absent", false);
            if (e.contains("centre")) s.centre = detail::json_vec(e["centre"]);
            for (const auto& sc : e.at("scans"))
                s.scans.push_back({sc.at("path").get<std::string>(), sc.at("view_angle").get<double>()});
            m.sessions.push_back(std::move(s));
        }
    } catch (const Json::exception& e) {
        throw IoError(std::string("manifest: ") + e.what());
    }
    m.validate();
    return m;
}

inline std::string emit_manifest(const SessionManifest& m) { return to_json(m).dump(2) + "\n"; }

inline SessionManifest parse_manifest(std::string_view text) {
    Json j;
    try {
        j = Json::parse(text);
    } catch (const Json::exception& e) {
        throw IoError(std::string("manifest: ") + e.what());
    }
    detail::check_schema(j, kManifestSchema, "manifest");
    return manifest_from_json(j);
}

inline SessionManifest load_manifest(const fs::path& path) {
    const Json j = detail::read_json(path);
    detail::check_schema(j, kManifestSchema, path);
    return manifest_from_json(j);
}

inline void save_manifest(const fs::path& path, const SessionManifest& m) { detail::write_text(path, emit_manifest(m)); }

// ---------------------------------------------------------------------------
// Simulation

struct SimulateConfig {
    int days = 21;
    int per_day = 6;
    std::size_t views = 12;
    Photoperiod photoperiod;
    std::uint32_t seed = 1;
    double day_rate = 0.07;    // volumetric log-rate per day
    double night_rate = 0.14;
    std::size_t missing = 0;   // sessions marked absent
    TimePoint start = parse_timestamp("2026-03-01T06:00:00Z");
    ScannerModel scanner;
};

/// `count` distinct interior slots, no two adjacent, drawn from `seed`.
/// Neither end slot is chosen, so every gap has real samples on both sides.
inline std::vector<std::size_t> pick_missing(std::size_t n, std::size_t count, std::uint32_t seed) {
    if (count == 0) return {};
    if (n < 3 || count > (n - 1) / 2)
        throw PreconditionError("simulate: cannot drop " + std::to_string(count) + " of " + std::to_string(n) +
                                " sessions without adjacent or boundary gaps");
    // Distinct draws from a range shortened by count - 1, then spread by
    // their rank: the i-th smallest moves up by i + 1.
    std::vector<std::size_t> picked(n - 1 - count);
    std::iota(picked.begin(), picked.end(), std::size_t{0});
    std::mt19937 rng(seed ^ 0x9e3779b9u);
    std::shuffle(picked.begin(), picked.end(), rng);
    picked.resize(count);
    std::sort(picked.begin(), picked.end());
    for (std::size_t i = 0; i < count; ++i) picked[i] += i + 1;
    return picked;
}

inline std::string session_id(std::size_t k) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "s%04zu", k);
    return buf;
}

/// Writes scans, `manifest.json` and the ground-truth sidecar `truth.json`
/// under `out`. Returns the manifest.
inline SessionManifest simulate(const fs::path& out, const SimulateConfig& cfg) {
    cfg.photoperiod.validate();
    if (cfg.views < 1) throw PreconditionError("simulate: need at least one view");
    const auto schedule = session_schedule(cfg.start, cfg.days, cfg.per_day);
    const auto missing = pick_missing(schedule.size(), cfg.missing, cfg.seed);

    std::error_code ec;
    fs::create_directories(out / "scans", ec);
    if (ec) throw IoError("cannot create " + (out / "scans").string() + ": " + ec.message());

    SessionManifest m;
    m.plant_id = "synthetic-" + std::to_string(cfg.seed);
    m.photoperiod = cfg.photoperiod;
    Json truth;
    truth["schema"] = kTruthSchema;
    truth["seed"] = cfg.seed;
    truth["day_rate"] = cfg.day_rate;
    truth["night_rate"] = cfg.night_rate;
    const double light = cfg.photoperiod.light_hours();
    truth["mean_volume_rate"] = (cfg.day_rate * light + cfg.night_rate * (24.0 - light)) / 24.0;
    truth["mean_area_rate"] = 2.0 / 3.0 * truth["mean_volume_rate"].get<double>();
    Json tsessions = Json::array();

    SyntheticPlant plant = rosette_plant(cfg.seed);
    for (std::size_t k = 0; k < schedule.size(); ++k) {
        if (k) plant = grow_between(plant, schedule[k - 1], schedule[k], cfg.day_rate, cfg.night_rate, cfg.photoperiod);
        SessionEntry s;
        s.id = session_id(k);
        s.time = schedule[k];
        s.phase = label_phase(s.time, cfg.photoperiod);
        s.centre = plant.bounds().centre();
        s.absent = std::binary_search(missing.begin(), missing.end(), k);
        tsessions.push_back({{"id", s.id},
                             {"area", plant.analytic_area()},
                             {"volume", plant.analytic_volume()},
                             {"absent", s.absent}});
        if (!s.absent) {
            ScannerModel model = cfg.scanner;
            model.noise_seed = cfg.seed * 7919u + static_cast<std::uint32_t>(k);
            const fs::path dir = out / "scans" / s.id;
            fs::create_directories(dir, ec);
            if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
            for (std::size_t v = 0; v < cfg.views; ++v) {
                const double angle = 360.0 * static_cast<double>(v) / static_cast<double>(cfg.views);
                auto scan = virtual_scan(plant, angle, model, s.centre);
                char name[32];
                std::snprintf(name, sizeof name, "view%02zu.xyz", v);
                save_cloud(dir / name, scan.cloud);
                s.scans.push_back({(fs::path("scans") / s.id / name).generic_string(), angle});
            }
        }
        m.sessions.push_back(std::move(s));
    }
    truth["sessions"] = std::move(tsessions);
    save_manifest(out / "manifest.json", m);
    detail::write_json(out / "truth.json", truth);
    return m;
}

// ---------------------------------------------------------------------------
// Per-session stages

struct PipelineConfig {
    double alpha = kDefaultAlpha;
    std::uint32_t seed = 1;
    bool strict = false;
    bool resume = false;
    unsigned jobs = 1;
    RoughAlignParams rough;
    MultiviewConfig multiview;
    /// A feature-based pair transform is kept only if its median
    /// nearest-neighbour distance beats the turntable angles and this cap.
    double rough_accept = 3.0;
};

struct PairAlignment {
    std::string source;  // "features" or "manifest"
    double median_nn = 0.0;
    std::optional<double> feature_median_nn;
};

struct AlignOutcome {
    PointCloud merged;
    std::vector<PairAlignment> pairs;
    std::vector<double> adjacent_coverage;
    std::vector<double> sweep_displacement;
    std::vector<std::string> warnings;
};

inline double median_nn_distance(const PointCloud& moving, const PointCloud& fixed) {
    const SpatialIndex index(fixed.points);
    std::vector<double> d;
    d.reserve(moving.size());
    for (const auto& p : moving.points) d.push_back(std::sqrt(index.nearest(p).dist2));
    if (d.empty()) return std::numeric_limits<double>::infinity();
    auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
    std::nth_element(d.begin(), mid, d.end());
    return *mid;
}

inline fs::path resolve(const fs::path& base, const std::string& p) {
    const fs::path q(p);
    return q.is_absolute() ? q : base / q;
}

/// Loads every scan of the session, rough-aligns adjacent pairs and runs
/// the multi-view registration. The merged cloud is in the world frame.
inline AlignOutcome align_session(const SessionEntry& session, const fs::path& base, const PipelineConfig& cfg) {
    if (session.absent) throw PreconditionError("session " + session.id + ": absent");
    if (session.scans.size() < 2)
        throw PreconditionError("session " + session.id + ": >= 2 scans required, found " +
                                std::to_string(session.scans.size()));
    std::vector<PointCloud> clouds;
    for (const auto& sc : session.scans) {
        const fs::path path = resolve(base, sc.path);
        PointCloud c;
        try {
            c = load_cloud(path);
        } catch (const IoError& e) {
            const std::string what = e.what();
            throw IoError(what.find(path.string()) == std::string::npos ? path.string() + ": " + what : what);
        }
        if (c.empty()) throw EmptyCloudError(path.string() + ": no points");
        clouds.push_back(std::move(c));
    }

    AlignOutcome out;
    std::vector<RigidTransform> to_world{view_to_world(session.scans[0].view_angle, session.centre)};
    for (std::size_t i = 1; i < clouds.size(); ++i) {
        const RigidTransform prev_m = view_to_world(session.scans[i - 1].view_angle, session.centre);
        const RigidTransform cur_m = view_to_world(session.scans[i].view_angle, session.centre);
        RigidTransform rel = prev_m.inverse() * cur_m;
        PairAlignment pa{"manifest", median_nn_distance(rel.apply(clouds[i]), clouds[i - 1]), std::nullopt};
        try {
            const RigidTransform feat = rough_align(clouds[i - 1], clouds[i], cfg.rough);
            const double d = median_nn_distance(feat.apply(clouds[i]), clouds[i - 1]);
            pa.feature_median_nn = d;
            if (d < pa.median_nn && d < cfg.rough_accept) {
                rel = feat;
                pa.source = "features";
                pa.median_nn = d;
            }
        } catch (const NoAlignmentError&) {
        }
        out.pairs.push_back(pa);
        to_world.push_back(to_world.back() * rel);
    }

    auto mv = align_multiview(clouds, to_world, cfg.multiview);
    out.merged = std::move(mv.merged);
    out.adjacent_coverage = std::move(mv.adjacent_coverage);
    out.sweep_displacement = std::move(mv.sweep_displacement);
    out.warnings = std::move(mv.warnings);
    return out;
}

inline Json registration_json(const AlignOutcome& al) {
    Json reg;
    Json pairs = Json::array();
    for (const auto& p : al.pairs) {
        Json pj{{"source", p.source}, {"median_nn", p.median_nn}};
        pj["feature_median_nn"] = p.feature_median_nn ? Json(*p.feature_median_nn) : Json(nullptr);
        pairs.push_back(std::move(pj));
    }
    reg["rough"] = std::move(pairs);
    reg["adjacent_coverage"] = al.adjacent_coverage;
    reg["sweep_displacement"] = al.sweep_displacement;
    reg["warnings"] = al.warnings;
    reg["merged_points"] = al.merged.size();
    return reg;
}

struct MeshMetrics {
    double area = 0.0;
    double volume = 0.0;
    std::size_t vertices = 0;
    std::size_t tetrahedra = 0;
    std::size_t triangles = 0;
    bool closed = false;
    std::size_t components = 0;
};

inline MeshMetrics mesh_metrics(const AlphaComplexMesh& mesh) {
    MeshMetrics m;
    m.area = surface_area(mesh);
    m.volume = mesh_volume(mesh);
    m.vertices = mesh.vertices.size();
    m.tetrahedra = mesh.kept.size();
    m.triangles = mesh.boundary.size();
    m.closed = boundary_is_closed(mesh);
    m.components = boundary_components(mesh);
    return m;
}

/// Alpha shape of a merged cloud. A cloud whose alpha complex keeps no
/// tetrahedron has no enclosed volume and is rejected.
inline AlphaComplexMesh mesh_cloud(const PointCloud& cloud, double alpha) {
    if (!(alpha > 0)) throw PreconditionError("mesh: alpha must be > 0");
    auto mesh = alpha_shape(cloud.points, alpha);
    if (mesh.kept.empty()) throw DegeneracyError("mesh: alpha complex is empty at alpha " + std::to_string(alpha));
    return mesh;
}

inline Json metrics_json(const MeshMetrics& m) {
    return {{"area", m.area},           {"volume", m.volume},         {"vertices", m.vertices},
            {"tetrahedra", m.tetrahedra}, {"triangles", m.triangles}, {"closed", m.closed},
            {"components", m.components}};
}

inline std::string error_kind(const std::exception& e) {
    if (dynamic_cast<const IoError*>(&e)) return "io";
    if (dynamic_cast<const DataQualityError*>(&e)) return "data_quality";
    if (dynamic_cast<const PreconditionError*>(&e)) return "precondition";
    if (dynamic_cast<const NumericalError*>(&e)) return "numerical";
    return "failure";
}

inline int exit_code_of(const std::string& kind) {
    if (kind == "io") return 4;
    if (kind == "data_quality") return 3;
    if (kind == "precondition") return 2;
    return 1;
}

/// Runs align and mesh for one session inside `dir`, returning its record
/// entry. Failures become an error entry rather than an exception.
inline Json run_session(const SessionEntry& s, const fs::path& base, const fs::path& dir, const PipelineConfig& cfg) {
    Json e;
    e["id"] = s.id;
    e["timestamp"] = format_timestamp(s.time);
    e["phase"] = std::string(to_string(s.phase));
    if (s.absent) {
        e["status"] = "absent";
        return e;
    }
    std::string stage = "align";
    try {
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
        const auto al = align_session(s, base, cfg);
        save_cloud(dir / "merged.ply", al.merged);
        Json reg = registration_json(al);
        stage = "mesh";
        const auto mesh = mesh_cloud(al.merged, cfg.alpha);
        save_mesh(dir / "mesh.ply", mesh);
        const auto mm = mesh_metrics(mesh);
        e["status"] = "ok";
        e["merged_cloud"] = (dir.filename() / "merged.ply").generic_string();
        e["mesh"] = (dir.filename() / "mesh.ply").generic_string();
        e["area"] = mm.area;
        e["volume"] = mm.volume;
        e["registration"] = std::move(reg);
        e["mesh_diagnostics"] = metrics_json(mm);
    } catch (const std::exception& ex) {
        e["status"] = "error";
        e["stage"] = stage;
        e["error_kind"] = error_kind(ex);
        e["error"] = ex.what();
    }
    return e;
}

// ---------------------------------------------------------------------------
// Series analysis

struct SeriesAnalysis {
    GrowthSeries series;
    GrowthRateFit area_rate, volume_rate;
    // Empty when the series is shorter than one photoperiod cycle.
    std::optional<DiurnalStats> area_diurnal, volume_diurnal;
    std::optional<DiurnalStats> area_log_diurnal, volume_log_diurnal;
    std::string diurnal_note;
};

/// Imputes, labels, fits and summarises the session entries of a results
/// record. Entries without metrics (absent or failed) count as missing.
inline SeriesAnalysis analyze_sessions(const Json& sessions, const Photoperiod& photoperiod) {
    if (!sessions.is_array() || sessions.empty()) throw PreconditionError("analyze: results contain no sessions");
    std::vector<TimePoint> schedule;
    std::vector<GrowthSample> observed;
    for (const auto& e : sessions) {
        const TimePoint t = parse_timestamp(e.at("timestamp").get<std::string>());
        schedule.push_back(t);
        if (e.value("status", "") == "ok")
            observed.push_back({t, e.at("area").get<double>(), e.at("volume").get<double>(),
                                label_phase(t, photoperiod), false});
    }
    const std::size_t failed = schedule.size() - observed.size();
    if (2 * failed > schedule.size())
        throw DataQualityError("analyze: " + std::to_string(failed) + " of " + std::to_string(schedule.size()) +
                               " sessions have no metrics (more than half)");
    if (observed.size() < 4)
        throw PreconditionError("analyze: need >= 4 sessions with metrics, found " + std::to_string(observed.size()));
    SeriesAnalysis a;
    a.series = impute_missing(observed, schedule, photoperiod);
    a.area_rate = growth_rate(a.series, Metric::Area);
    a.volume_rate = growth_rate(a.series, Metric::Volume);
    try {
        a.area_diurnal = diurnal_stats(a.series, Metric::Area);
        a.volume_diurnal = diurnal_stats(a.series, Metric::Volume);
        a.area_log_diurnal = diurnal_stats(a.series, Metric::Area, Increment::Log);
        a.volume_log_diurnal = diurnal_stats(a.series, Metric::Volume, Increment::Log);
    } catch (const PreconditionError& e) {
        a.area_diurnal = a.volume_diurnal = a.area_log_diurnal = a.volume_log_diurnal = std::nullopt;
        a.diurnal_note = e.what();
    }
    return a;
}

inline Json analysis_json(const SeriesAnalysis& a) {
    auto fit = [](const GrowthRateFit& f) {
        return Json{{"slope_per_day", f.slope}, {"intercept", f.intercept}, {"residual_rms", f.residual_rms}};
    };
    auto di = [](const std::optional<DiurnalStats>& od) {
        if (!od) return Json(nullptr);
        const auto& d = *od;
        return Json{{"day_increment", d.day_increment},
                    {"night_increment", d.night_increment},
                    {"night_day_ratio", d.ratio ? Json(*d.ratio) : Json(nullptr)}};
    };
    Json imputed = Json::array();
    for (const auto& s : a.series.samples)
        if (s.imputed) imputed.push_back(format_timestamp(s.time));
    return {{"area_rate", fit(a.area_rate)},
            {"volume_rate", fit(a.volume_rate)},
            {"diurnal_absolute", {{"area", di(a.area_diurnal)}, {"volume", di(a.volume_diurnal)}}},
            {"diurnal_log", {{"area", di(a.area_log_diurnal)}, {"volume", di(a.volume_log_diurnal)}}},
            {"diurnal_note", a.diurnal_note.empty() ? Json(nullptr) : Json(a.diurnal_note)},
            {"imputed", std::move(imputed)}};
}

/// Writes growth.csv and spline.csv into `out`.
inline void write_series_outputs(const fs::path& out, const SeriesAnalysis& a) {
    std::ostringstream g, s;
    write_growth_csv(g, a.series);
    write_spline_csv(s, a.series);
    detail::write_text(out / "growth.csv", g.str());
    detail::write_text(out / "spline.csv", s.str());
}

// ---------------------------------------------------------------------------
// Whole pipeline

struct PipelineOutcome {
    Json record;
    int exit_code = 0;
    std::size_t computed = 0;  // sessions run in this invocation (the rest were resumed)
};

inline Json config_json(const PipelineConfig& cfg) {
    return {{"alpha", cfg.alpha}, {"seed", cfg.seed}};
}

/// Per-session work in `out/sessions/<id>/`, each session finished by its
/// `session.json`. With `resume`, sessions that already have one are reused.
/// The record in `out/results.json` lists sessions in manifest order.
inline PipelineOutcome run_pipeline(const fs::path& manifest_path, const fs::path& out, const PipelineConfig& cfg) {
    const auto manifest = load_manifest(manifest_path);
    const fs::path base = manifest_path.parent_path();
    std::error_code ec;
    fs::create_directories(out / "sessions", ec);
    if (ec) throw IoError("cannot create " + (out / "sessions").string() + ": " + ec.message());

    const std::size_t n = manifest.sessions.size();
    std::vector<Json> entries(n);
    std::vector<std::size_t> todo;
    for (std::size_t i = 0; i < n; ++i) {
        const fs::path done = out / "sessions" / manifest.sessions[i].id / "session.json";
        if (cfg.resume && fs::exists(done)) {
            try {
                entries[i] = detail::read_json(done);
                if (entries[i].value("id", "") == manifest.sessions[i].id) continue;
            } catch (const IoError&) {
            }
        }
        todo.push_back(i);
    }

    std::atomic<std::size_t> next{0};
    std::mutex io_error_mutex;
    std::optional<std::string> io_failure;
    auto worker = [&] {
        for (std::size_t k; (k = next++) < todo.size();) {
            const auto& s = manifest.sessions[todo[k]];
            const fs::path dir = out / "sessions" / s.id;
            Json e = run_session(s, base, dir, cfg);
            try {
                fs::create_directories(dir);
                detail::write_json(dir / "session.json", e);
            } catch (const std::exception& ex) {
                std::lock_guard lock(io_error_mutex);
                if (!io_failure) io_failure = ex.what();
            }
            entries[todo[k]] = std::move(e);
        }
    };
    const unsigned jobs = std::max(1u, std::min<unsigned>(cfg.jobs, static_cast<unsigned>(todo.size())));
    if (jobs <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned j = 0; j < jobs; ++j) pool.emplace_back(worker);
    }
    if (io_failure) throw IoError(*io_failure);

    PipelineOutcome res;
    res.computed = todo.size();
    int series_code = 0;
    Json rec;
    rec["schema"] = kResultsSchema;
    rec["plant_id"] = manifest.plant_id;
    rec["photoperiod"] = manifest.photoperiod.str();
    rec["config"] = config_json(cfg);
    rec["sessions"] = Json(entries);
    int worst = 0;
    for (const auto& e : entries)
        if (e.value("status", "") == "error") worst = std::max(worst, exit_code_of(e.value("error_kind", "")));
    try {
        const auto a = analyze_sessions(rec["sessions"], manifest.photoperiod);
        write_series_outputs(out, a);
        rec["series"] = analysis_json(a);
    } catch (const Error& ex) {
        rec["series"] = {{"error_kind", error_kind(ex)}, {"error", ex.what()}};
        series_code = ex.exit_code();
    }
    detail::write_json(out / "results.json", rec);
    res.record = std::move(rec);
    // Session failures only fail the run under strict; a refused analysis always does.
    res.exit_code = series_code ? series_code : (cfg.strict ? worst : 0);
    return res;
}

/// Reads and checks a results record.
inline Json load_results(const fs::path& path) {
    Json j = detail::read_json(path);
    detail::check_schema(j, kResultsSchema, path);
    if (!j.contains("sessions") || !j["sessions"].is_array()) throw IoError(path.string() + ": no sessions array");
    return j;
}

}  // namespace plantscan
