// plantscan: simulate, align, mesh and analyze plant scan sessions.
//
// Exit codes: 0 success, 2 precondition, 3 data quality, 4 I/O, 1 other.

#include <iostream>

#include <CLI11.hpp>

#include <plantscan/pipeline.hpp>

using namespace plantscan;

namespace {

int run_simulate(const fs::path& out, SimulateConfig cfg, const std::string& photoperiod) {
    cfg.photoperiod = Photoperiod::parse(photoperiod);
    const auto m = simulate(out, cfg);
    std::size_t files = 0, absent = 0;
    for (const auto& s : m.sessions) {
        files += s.scans.size();
        absent += s.absent;
    }
    std::cout << m.sessions.size() << " sessions, " << files << " scan files, " << absent << " absent\n"
              << (out / "manifest.json").string() << '\n';
    return 0;
}

int run_align(const fs::path& manifest_path, const std::string& id, const fs::path& out, const PipelineConfig& cfg) {
    const auto manifest = load_manifest(manifest_path);
    const auto& s = manifest.session(id);
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());
    Json rec{{"schema", "plantscan.align/1"}, {"id", s.id}};
    int code = 0;
    try {
        const auto al = align_session(s, manifest_path.parent_path(), cfg);
        save_cloud(out / "merged.ply", al.merged);
        rec["status"] = "ok";
        rec["merged_cloud"] = "merged.ply";
        rec["registration"] = registration_json(al);
        for (const auto& w : al.warnings) std::cerr << "warning: " << w << '\n';
    } catch (const IoError&) {
        throw;
    } catch (const std::exception& e) {
        rec["status"] = "error";
        rec["error_kind"] = error_kind(e);
        rec["error"] = e.what();
        std::cerr << "error: " << e.what() << '\n';
        if (cfg.strict) code = exit_code_of(error_kind(e));
    }
    detail::write_json(out / "align.json", rec);
    return code;
}

int run_mesh(const fs::path& cloud_path, const fs::path& out, double alpha) {
    const auto cloud = load_cloud(cloud_path);
    const auto mesh = mesh_cloud(cloud, alpha);
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());
    save_mesh(out / "mesh.ply", mesh);
    Json row = metrics_json(mesh_metrics(mesh));
    row["alpha"] = alpha;
    row["cloud"] = cloud_path.string();
    detail::write_json(out / "metrics.json", row);
    std::cout << row.dump() << '\n';
    return 0;
}

int run_analyze(const fs::path& results_path, const fs::path& out, const std::string& photoperiod) {
    const Json rec = load_results(results_path);
    const auto p = Photoperiod::parse(photoperiod.empty() ? rec.value("photoperiod", "12/12") : photoperiod);
    const auto a = analyze_sessions(rec["sessions"], p);
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());
    write_series_outputs(out, a);
    Json j = analysis_json(a);
    j = Json{{"schema", "plantscan.analysis/1"}, {"photoperiod", p.str()}, {"series", j}};
    detail::write_json(out / "analysis.json", j);
    std::cout << "area rate " << a.area_rate.slope << "/day, volume rate " << a.volume_rate.slope << "/day\n";
    return 0;
}

int run_pipeline_cmd(const fs::path& manifest_path, const fs::path& out, const PipelineConfig& cfg) {
    const auto res = run_pipeline(manifest_path, out, cfg);
    std::size_t ok = 0, failed = 0;
    for (const auto& e : res.record["sessions"]) {
        const auto st = e.value("status", "");
        ok += st == "ok";
        if (st == "error") {
            ++failed;
            std::cerr << "session " << e.value("id", "?") << ": " << e.value("error", "") << '\n';
        }
    }
    std::cout << ok << " sessions meshed, " << failed << " failed, " << res.computed << " computed this run\n";
    if (res.record["series"].contains("error")) std::cerr << "analysis: " << res.record["series"]["error"].get<std::string>() << '\n';
    return res.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-view plant scan registration, meshing and growth analysis"};
    app.require_subcommand(1);

    fs::path out, manifest, cloud, results;
    std::string session, photoperiod = "12/12", analyze_photoperiod;
    SimulateConfig sim;
    PipelineConfig cfg;

    auto* simulate_cmd = app.add_subcommand("simulate", "Generate scans, manifest and ground truth of a growing plant");
    simulate_cmd->add_option("--out", out, "Output directory")->required();
    simulate_cmd->add_option("--days", sim.days, "Days to simulate")->capture_default_str();
    simulate_cmd->add_option("--per-day", sim.per_day, "Sessions per day")->capture_default_str();
    simulate_cmd->add_option("--views", sim.views, "Views per session")->capture_default_str();
    simulate_cmd->add_option("--photoperiod", photoperiod, "L/D hours or HH:MM-HH:MM")->capture_default_str();
    simulate_cmd->add_option("--seed", sim.seed, "Plant and noise seed")->capture_default_str();
    simulate_cmd->add_option("--missing", sim.missing, "Sessions to mark absent")->capture_default_str();
    simulate_cmd->add_option("--day-rate", sim.day_rate, "Volumetric log-rate per day in the light")->capture_default_str();
    simulate_cmd->add_option("--night-rate", sim.night_rate, "Volumetric log-rate per day in the dark")->capture_default_str();

    auto* align_cmd = app.add_subcommand("align", "Register the scans of one session into a merged cloud");
    align_cmd->add_option("--manifest", manifest, "Session manifest")->required();
    align_cmd->add_option("--session", session, "Session id")->required();
    align_cmd->add_option("--out", out, "Output directory")->required();
    align_cmd->add_flag("--strict", cfg.strict, "Exit nonzero when registration fails");

    auto* mesh_cmd = app.add_subcommand("mesh", "Alpha-shape mesh, area and volume of a merged cloud");
    mesh_cmd->add_option("--cloud", cloud, "Merged cloud (.ply or .xyz)")->required();
    mesh_cmd->add_option("--out", out, "Output directory")->required();
    mesh_cmd->add_option("--alpha", cfg.alpha, "Squared radius threshold, mm^2")->capture_default_str();

    auto* analyze_cmd = app.add_subcommand("analyze", "Growth series, fits and diurnal statistics from a results record");
    analyze_cmd->add_option("--results", results, "Results record")->required();
    analyze_cmd->add_option("--out", out, "Output directory")->required();
    analyze_cmd->add_option("--photoperiod", analyze_photoperiod, "Override the record's photoperiod");

    auto* pipeline_cmd = app.add_subcommand("pipeline", "Align, mesh and analyze every session of a manifest");
    pipeline_cmd->add_option("--manifest", manifest, "Session manifest")->required();
    pipeline_cmd->add_option("--out", out, "Output directory")->required();
    pipeline_cmd->add_option("--alpha", cfg.alpha, "Squared radius threshold, mm^2")->capture_default_str();
    pipeline_cmd->add_option("--seed", cfg.seed, "Recorded in the results record")->capture_default_str();
    pipeline_cmd->add_option("--jobs", cfg.jobs, "Sessions processed concurrently")->capture_default_str();
    pipeline_cmd->add_flag("--strict", cfg.strict, "Exit nonzero when any session fails");
    pipeline_cmd->add_flag("--resume", cfg.resume, "Reuse sessions finished by an earlier run");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*simulate_cmd) return run_simulate(out, sim, photoperiod);
        if (*align_cmd) return run_align(manifest, session, out, cfg);
        if (*mesh_cmd) return run_mesh(cloud, out, cfg.alpha);
        if (*analyze_cmd) return run_analyze(results, out, analyze_photoperiod);
        if (*pipeline_cmd) return run_pipeline_cmd(manifest, out, cfg);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.exit_code();
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
