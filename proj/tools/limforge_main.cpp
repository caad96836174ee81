// limforge: corpus morphometry, receptive-field accounting, pyramid-level
// auditing, normalization kernels, and scene tiling behind one executable.
//
// Exit codes: 0 success, 2 user/input error, 3 verification failure
// (gncheck), 4 internal error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "limforge/limforge.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace limforge;

namespace {

struct VerificationFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Every emitted report carries tool version, the run seed, and a content
// digest of each input file, so identical inputs and seed reproduce
// byte-identical outputs.
json report_meta(std::uint64_t seed, const std::vector<fs::path>& inputs) {
    json meta;
    meta["tool"] = kToolName;
    meta["version"] = kToolVersion;
    meta["seed"] = seed;
    json digests = json::object();
    for (const auto& p : inputs) digests[p.string()] = file_digest(p);
    meta["inputs"] = digests;
    return meta;
}

void write_report(const fs::path& out_dir, const std::string& name, const json& doc) {
    fs::create_directories(out_dir);
    write_text_file(out_dir / name, doc.dump(2) + "\n");
}

std::string fmt(double v, int decimals = 4) { return format_fixed(v, decimals); }

json stats_to_json(const AxisStats& s) {
    return {{"axis", axis_name(s.axis)},
            {"n", s.n},
            {"degenerate", s.degenerate},
            {"min", s.min},
            {"mean", s.mean},
            {"max", s.max},
            {"std", s.std_dev},
            {"cv", s.cv},
            {"q2.5", s.q_low},
            {"q97.5", s.q_high},
            {"range95_snapped", {s.snap_low, s.snap_high}}};
}

// ---------------------------------------------------------------------------
// stats
// ---------------------------------------------------------------------------

int cmd_stats(const fs::path& manifest, const fs::path& out_dir, std::uint64_t seed,
              unsigned threads, bool strict) {
    LoadOptions opt;
    opt.threads = threads;
    opt.oob = strict ? OobPolicy::Reject : OobPolicy::Clamp;
    LoadStats load_stats;
    Corpus corpus = load_corpus(manifest, opt, &load_stats);
    if (corpus.instance_count() == 0) throw Error("empty corpus");

    std::vector<std::string> datasets;
    for (const auto& scene : corpus.scenes) {
        std::string d = scene.dataset.empty() ? corpus.name : scene.dataset;
        if (std::find(datasets.begin(), datasets.end(), d) == datasets.end())
            datasets.push_back(d);
    }

    std::vector<std::pair<std::string, AxisStats>> rows;
    json per_dataset = json::object();
    for (const auto& d : datasets) {
        for (Axis axis : {Axis::Major, Axis::Minor}) {
            AxisSamples s = collect_axis_samples(corpus, axis, d);
            if (s.values.empty()) continue;
            AxisStats st = axis_stats_from_samples(std::move(s.values), axis, s.degenerate);
            rows.emplace_back(d, st);
            per_dataset[d][axis_name(axis)] = stats_to_json(st);
        }
    }
    if (datasets.size() > 1) {
        for (Axis axis : {Axis::Major, Axis::Minor}) {
            AxisStats st = corpus_axis_stats(corpus, axis);
            rows.emplace_back("overall", st);
            per_dataset["overall"][axis_name(axis)] = stats_to_json(st);
        }
    }

    fs::create_directories(out_dir);
    write_text_file(out_dir / "stats.csv", stats_to_csv(rows));
    write_text_file(out_dir / "histogram_major.csv",
                    histogram_to_csv(axis_histogram(corpus, Axis::Major)));
    write_text_file(out_dir / "histogram_minor.csv",
                    histogram_to_csv(axis_histogram(corpus, Axis::Minor)));

    json doc = report_meta(seed, {manifest});
    doc["scenes"] = load_stats.scenes;
    doc["instances"] = load_stats.boxes;
    doc["clamped_vertices"] = load_stats.clamped_vertices;
    doc["class_set"] = corpus.class_set;
    doc["stats"] = per_dataset;
    write_report(out_dir, "stats.json", doc);

    std::printf("%-16s %-6s %8s %10s %10s %10s %10s %10s %8s\n", "dataset", "axis",
                "n", "min", "mean", "max", "q2.5", "q97.5", "cv");
    for (const auto& [name, s] : rows)
        std::printf("%-16s %-6s %8zu %10s %10s %10s %10s %10s %8s\n", name.c_str(),
                    axis_name(s.axis), s.n, fmt(s.min, 2).c_str(), fmt(s.mean, 2).c_str(),
                    fmt(s.max, 2).c_str(), fmt(s.q_low, 2).c_str(),
                    fmt(s.q_high, 2).c_str(), fmt(s.cv, 1).c_str());
    std::printf("wrote %s\n", (out_dir / "stats.csv").string().c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// audit
// ---------------------------------------------------------------------------

int cmd_audit(const fs::path& manifest, const fs::path& arch_path, double image_size,
              const fs::path& out_dir, const std::string& rf_source_flag,
              const fs::path& erf_data, std::uint64_t seed, unsigned threads) {
    LoadOptions opt;
    opt.threads = threads;
    Corpus corpus = load_corpus(manifest, opt);
    if (corpus.instance_count() == 0) throw Error("empty corpus");
    ArchSpec arch = load_arch(arch_path);

    AxisSamples minor_samples = collect_axis_samples(corpus, Axis::Minor);
    AxisStats minor =
        axis_stats_from_samples(minor_samples.values, Axis::Minor, minor_samples.degenerate);
    AxisStats major = corpus_axis_stats(corpus, Axis::Major);

    RfSource source = rf_source_flag == "erf" ? RfSource::Erf : RfSource::Trf;

    std::map<std::string, double> erf_map;
    std::vector<fs::path> inputs = {manifest, arch_path};
    if (!erf_data.empty()) {
        json doc = json::parse(read_text_file(erf_data));
        if (doc.contains("level") && doc.contains("erf_diameter")) {
            erf_map[doc["level"].get<std::string>()] = doc["erf_diameter"].get<double>();
        } else {
            for (const auto& [lvl, dia] : doc.items()) erf_map[lvl] = dia.get<double>();
        }
        inputs.push_back(erf_data);
    }

    PyramidReport report = recommend_levels(minor, major, arch, image_size, source,
                                            erf_map.empty() ? nullptr : &erf_map,
                                            &minor_samples.values);

    json doc = report_meta(seed, inputs);
    doc["image_size"] = image_size;
    doc["rf_source"] = rf_source_name(report.rf_source);
    doc["coverage_target"] = report.coverage_target;
    doc["minor_stats"] = stats_to_json(minor);
    doc["major_stats"] = stats_to_json(major);
    json audits = json::array();
    for (std::size_t i = 0; i < report.audits.size(); ++i) {
        const auto& a = report.audits[i];
        json row = {{"level", a.level},
                    {"stride", a.stride},
                    {"rho_mean", a.rho_mean},
                    {"rho_q_low", a.rho_q_low},
                    {"nyquist_strict_ok", a.nyquist_strict_ok},
                    {"trf", trf_and_stride(arch, a.level).trf.to_double()},
                    {"rf", report.erf_coverage[i].rf},
                    {"covers", report.erf_coverage[i].covers}};
        if (a.subpixel_fraction) row["subpixel_fraction"] = *a.subpixel_fraction;
        audits.push_back(row);
    }
    doc["audits"] = audits;
    doc["recommended_levels"] = report.recommended_levels;
    doc["rationale"] = report.rationale;
    write_report(out_dir, "audit.json", doc);

    std::printf("%-6s %8s %10s %10s %10s %10s %8s %8s\n", "level", "stride", "trf",
                "rf", "rho_mean", "rho_q2.5", "nyquist", "covers");
    for (std::size_t i = 0; i < report.audits.size(); ++i) {
        const auto& a = report.audits[i];
        std::printf("%-6s %8s %10s %10s %10s %10s %8s %8s\n", a.level.c_str(),
                    fmt(a.stride, 0).c_str(),
                    fmt(trf_and_stride(arch, a.level).trf.to_double(), 1).c_str(),
                    fmt(report.erf_coverage[i].rf, 1).c_str(), fmt(a.rho_mean).c_str(),
                    fmt(a.rho_q_low).c_str(), a.nyquist_strict_ok ? "yes" : "no",
                    report.erf_coverage[i].covers ? "yes" : "no");
    }
    std::string rec;
    for (const auto& l : report.recommended_levels) rec += l + " ";
    std::printf("recommended: %s\n", rec.c_str());
    for (const auto& r : report.rationale) std::printf("  - %s\n", r.c_str());
    std::printf("wrote %s\n", (out_dir / "audit.json").string().c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// erf
// ---------------------------------------------------------------------------

int cmd_erf(const fs::path& arch_path, const std::string& level, int input_size,
            int draws, double mass, bool deterministic, const fs::path& out_dir,
            std::uint64_t seed, unsigned threads) {
    ArchSpec arch = load_arch(arch_path);
    ErfEstimate est = erf_estimate(arch, level, input_size, draws, mass, seed,
                                   deterministic ? WeightMode::AllOnes
                                                 : WeightMode::RandomUniform,
                                   threads);

    json doc = report_meta(seed, {arch_path});
    doc["arch"] = arch.name;
    doc["level"] = est.result.level;
    doc["input_size"] = input_size;
    doc["draws"] = deterministic ? 1 : draws;
    doc["weight_mode"] = deterministic ? "all_ones" : "uniform_signed";
    doc["stride"] = est.result.stride;
    doc["trf"] = est.result.trf;
    doc["erf_diameter"] = *est.result.erf_diameter;
    doc["erf_mass_fraction"] = est.result.erf_mass_fraction;
    doc["truncated"] = est.result.truncated;
    write_report(out_dir, "erf_" + level + ".json", doc);
    write_text_file(out_dir / ("erf_" + level + "_grid.csv"), sensitivity_to_csv(est));

    std::printf("%s %s: stride %s trf %s erf_diameter %s (mass %s)%s\n",
                arch.name.c_str(), level.c_str(), fmt(est.result.stride, 0).c_str(),
                fmt(est.result.trf, 1).c_str(), fmt(*est.result.erf_diameter, 1).c_str(),
                fmt(mass, 2).c_str(), est.result.truncated ? " [truncated]" : "");
    std::printf("wrote %s\n", (out_dir / ("erf_" + level + ".json")).string().c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// tile
// ---------------------------------------------------------------------------

int cmd_tile(const fs::path& manifest, const fs::path& out_dir, const TileConfig& cfg,
             std::uint64_t seed, unsigned threads) {
    LoadOptions opt;
    opt.threads = threads;
    Corpus corpus = load_corpus(manifest, opt);

    fs::create_directories(out_dir);
    json index = json::array();
    std::size_t total_patches = 0;
    for (const auto& scene : corpus.scenes) {
        if (scene.image_file.empty())
            throw Error("scene " + scene.image_id + " has no image_file in the manifest");
        Image raster = read_pnm(scene.image_file);
        std::vector<Patch> patches = tile_scene(scene, raster, cfg);
        json manifest_entry = write_tiles(out_dir, scene, patches, cfg);
        manifest_entry["patches"] = patches.size();
        index.push_back(manifest_entry);
        total_patches += patches.size();
        std::printf("%s: %zu patches\n", scene.image_id.c_str(), patches.size());
    }

    json doc = report_meta(seed, {manifest});
    doc["window"] = cfg.window;
    doc["overlap"] = cfg.overlap;
    doc["keep_empty"] = cfg.keep_empty;
    doc["min_box_area_ratio"] = cfg.min_box_area_ratio;
    doc["total_patches"] = total_patches;
    doc["scenes"] = index;
    write_report(out_dir, "tiles_index.json", doc);
    std::printf("total: %zu patches -> %s\n", total_patches, out_dir.string().c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// gncheck
// ---------------------------------------------------------------------------

int cmd_gncheck(std::uint64_t seed, const fs::path& out_dir, bool inject_bug) {
    auto cases = gradcheck_suite(seed, inject_bug);
    StabilityResult stability = stability_report(seed);

    bool all_passed = true;
    std::printf("%-28s %14s %s\n", "kernel", "max_rel_err", "status");
    for (const auto& c : cases) {
        all_passed = all_passed && c.passed;
        std::printf("%-28s %14.3e %s\n", c.name.c_str(), c.max_rel_err,
                    c.passed ? "ok" : "FAIL");
    }
    bool gn_ok = stability.gn_drift == 0.0;
    bool bn_positive = !stability.bn_per_companion.empty();
    for (double d : stability.bn_per_companion) bn_positive = bn_positive && d > 0.0;
    std::printf("gn_drift %.3e (%s)  bn_drift %.3e (%s)\n", stability.gn_drift,
                gn_ok ? "batch-independent" : "FAIL", stability.bn_drift,
                bn_positive ? "batch-sensitive as expected" : "FAIL");

    if (!out_dir.empty()) {
        json doc = report_meta(seed, {});
        doc["tolerance"] = kGradCheckTolerance;
        json rows = json::array();
        for (const auto& c : cases)
            rows.push_back({{"kernel", c.name},
                            {"max_rel_err", c.max_rel_err},
                            {"passed", c.passed}});
        doc["gradcheck"] = rows;
        doc["stability"] = {{"gn_drift", stability.gn_drift},
                            {"bn_drift", stability.bn_drift},
                            {"gn_per_companion", stability.gn_per_companion},
                            {"bn_per_companion", stability.bn_per_companion}};
        write_report(out_dir, "gncheck.json", doc);
        std::printf("wrote %s\n", (out_dir / "gncheck.json").string().c_str());
    }

    if (!all_passed || !gn_ok || !bn_positive)
        throw VerificationFailure("kernel verification failed");
    return 0;
}

// ---------------------------------------------------------------------------
// dilution
// ---------------------------------------------------------------------------

int cmd_dilution(const fs::path& out_dir, std::vector<double> widths,
                 std::vector<double> lengths, std::vector<double> angles,
                 std::vector<int> strides, std::uint64_t seed) {
    if (widths.empty()) widths = {4, 16, 17.34, 32};
    if (lengths.empty()) lengths = {64, 128};
    if (angles.empty()) angles = {0, 30, 45};
    if (strides.empty()) strides = {4, 8, 16, 32};

    std::string csv = "stride,width,length,angle,max_cell_signal,bound\n";
    long long rows = 0;
    for (int stride : strides)
        for (double w : widths)
            for (double l : lengths)
                for (double a : angles) {
                    double extent = std::max(w, l) * 1.5 + stride;
                    int canvas = stride * static_cast<int>(std::ceil(extent / stride));
                    DilutionResult r = simulate_dilution(w, l, a, stride, canvas);
                    csv += fmt(static_cast<double>(stride), 0) + "," + fmt(w) + "," +
                           fmt(l) + "," + fmt(a, 1) + "," + fmt(r.max_cell_signal) +
                           "," + fmt(r.occupancy_bound) + "\n";
                    ++rows;
                }

    fs::create_directories(out_dir);
    write_text_file(out_dir / "dilution_sweep.csv", csv);
    json doc = report_meta(seed, {});
    doc["rows"] = rows;
    doc["columns"] = {"stride", "width", "length", "angle", "max_cell_signal", "bound"};
    write_report(out_dir, "dilution.json", doc);

    std::printf("%lld rows -> %s\n", rows,
                (out_dir / "dilution_sweep.csv").string().c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"detection-pyramid design toolkit for oriented-box corpora"};
    app.require_subcommand(1);

    std::uint64_t seed = 42;
    unsigned threads = 0;
    fs::path manifest, arch_path, out_dir, erf_data;
    std::string level = "P2", rf_source = "trf";
    double image_size = 1024, mass = 0.95;
    int draws = 64, input_size = 64;
    bool strict = false, deterministic = false, inject_bug = false;

    TileConfig tile_cfg;
    std::string tile_mode = "train";

    auto* stats = app.add_subcommand("stats", "corpus axis statistics + histograms");
    stats->add_option("--manifest", manifest, "corpus manifest JSON")->required();
    stats->add_option("--out", out_dir, "output directory")->required();
    stats->add_option("--seed", seed);
    stats->add_option("--threads", threads);
    stats->add_flag("--strict", strict, "reject out-of-bounds vertices");

    auto* audit = app.add_subcommand("audit", "occupancy/coverage audit + level shift");
    audit->add_option("--manifest", manifest)->required();
    audit->add_option("--arch", arch_path, "arch spec JSON")->required();
    audit->add_option("--image-size", image_size);
    audit->add_option("--out", out_dir)->required();
    audit->add_option("--rf-source", rf_source)->check(CLI::IsMember({"trf", "erf"}));
    audit->add_option("--erf-data", erf_data, "per-level ERF diameters JSON");
    audit->add_option("--seed", seed);
    audit->add_option("--threads", threads);

    auto* erf = app.add_subcommand("erf", "empirical receptive field of an arch level");
    erf->add_option("--arch", arch_path)->required();
    erf->add_option("--level", level)->required();
    erf->add_option("--image-size", input_size, "probe input side (px)");
    erf->add_option("--draws", draws)->check(CLI::PositiveNumber);
    erf->add_option("--mass", mass, "gradient-mass fraction for the diameter")
        ->check(CLI::Range(1e-9, 1.0));
    erf->add_flag("--deterministic", deterministic, "all-ones weights (support probe)");
    erf->add_option("--out", out_dir)->required();
    erf->add_option("--seed", seed);
    erf->add_option("--threads", threads);

    auto* tile = app.add_subcommand("tile", "sliding-window tiling with re-projection");
    tile->add_option("--manifest", manifest)->required();
    tile->add_option("--out", out_dir)->required();
    tile->add_option("--mode", tile_mode, "train (overlap 256, drop empty) or val")
        ->check(CLI::IsMember({"train", "val"}));
    auto* window_opt = tile->add_option("--window", tile_cfg.window);
    auto* overlap_opt = tile->add_option("--overlap", tile_cfg.overlap);
    auto* keep_opt = tile->add_flag("--keep-empty", tile_cfg.keep_empty);
    tile->add_option("--min-area-ratio", tile_cfg.min_box_area_ratio);
    tile->add_option("--seed", seed);
    tile->add_option("--threads", threads);

    auto* gncheck = app.add_subcommand("gncheck", "gradient + batch-stability checks");
    gncheck->add_option("--seed", seed);
    gncheck->add_option("--out", out_dir);
    gncheck->add_flag("--inject-bug", inject_bug,
                      "negative control: perturb one analytic gradient");

    auto* dilution = app.add_subcommand("dilution", "bar-target pooling sweep");
    dilution->add_option("--out", out_dir)->required();
    std::vector<double> widths, lengths, angles;
    std::vector<int> strides;
    dilution->add_option("--widths", widths);
    dilution->add_option("--lengths", lengths);
    dilution->add_option("--angles", angles);
    dilution->add_option("--strides", strides);
    dilution->add_option("--seed", seed);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (app.got_subcommand(stats))
            return cmd_stats(manifest, out_dir, seed, threads, strict);
        if (app.got_subcommand(audit))
            return cmd_audit(manifest, arch_path, image_size, out_dir, rf_source,
                             erf_data, seed, threads);
        if (app.got_subcommand(erf))
            return cmd_erf(arch_path, level, input_size, draws, mass, deterministic,
                           out_dir, seed, threads);
        if (app.got_subcommand(tile)) {
            TileConfig cfg = tile_cfg;
            if (window_opt->count() == 0) cfg.window = 1024;
            if (tile_mode == "val") {
                if (overlap_opt->count() == 0) cfg.overlap = 0;
                if (keep_opt->count() == 0) cfg.keep_empty = true;
            } else {
                if (overlap_opt->count() == 0) cfg.overlap = 256;
            }
            cfg.validate();
            return cmd_tile(manifest, out_dir, cfg, seed, threads);
        }
        if (app.got_subcommand(gncheck)) return cmd_gncheck(seed, out_dir, inject_bug);
        if (app.got_subcommand(dilution))
            return cmd_dilution(out_dir, widths, lengths, angles, strides, seed);
    } catch (const VerificationFailure& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return 4;
    }
    return 2;
}
