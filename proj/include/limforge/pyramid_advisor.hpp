#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "limforge/common.hpp"
#include "limforge/geometry.hpp"
#include "limforge/morphometry.hpp"
#include "limforge/rf_engine.hpp"

namespace limforge {

// ---------------------------------------------------------------------------
// Occupancy auditing
// ---------------------------------------------------------------------------

/// Minor-axis occupancy ratio: object minor-axis extent in feature-map cells.
/// A value below 1 means the object is sub-cell at that stride.
inline double occupancy_ratio(double minor_px, double stride_px) {
    if (minor_px < 0) throw Error("occupancy_ratio: minor axis must be >= 0");
    if (stride_px < 1) throw Error("occupancy_ratio: stride must be >= 1");
    return minor_px / stride_px;
}

struct OccupancyAudit {
    std::string level;
    double stride = 1.0;
    double rho_mean = 0.0;   // mean minor / stride
    double rho_q_low = 0.0;  // 2.5th-percentile minor / stride
    bool nyquist_strict_ok = false;  // stride <= q_low / 2
    std::optional<double> subpixel_fraction;  // instances with rho < 1
};

struct LevelStride {
    std::string name;
    double stride = 1.0;
};

/// Fill one audit row per level. Both criteria the literature argues from are
/// reported side by side: the rho >= 1 occupancy condition and the strict
/// Shannon condition stride <= minor/2; they differ by a factor of two and
/// neither is silently preferred here. subpixel_fraction needs the raw
/// per-instance minors and is omitted when they are not supplied.
inline std::vector<OccupancyAudit> audit_levels(
    const AxisStats& minor_stats, const std::vector<LevelStride>& levels,
    const std::vector<double>* minor_samples = nullptr) {
    std::vector<OccupancyAudit> out;
    for (const auto& lv : levels) {
        OccupancyAudit a;
        a.level = lv.name;
        a.stride = lv.stride;
        a.rho_mean = occupancy_ratio(minor_stats.mean, lv.stride);
        a.rho_q_low = occupancy_ratio(minor_stats.q_low, lv.stride);
        a.nyquist_strict_ok = lv.stride <= minor_stats.q_low / 2.0;
        if (minor_samples && !minor_samples->empty()) {
            std::size_t sub = 0;
            for (double m : *minor_samples)
                if (m / lv.stride < 1.0) ++sub;
            a.subpixel_fraction =
                static_cast<double>(sub) / static_cast<double>(minor_samples->size());
        }
        out.push_back(std::move(a));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Level-shift recommendation
// ---------------------------------------------------------------------------

enum class RfSource { Trf, Erf };

inline const char* rf_source_name(RfSource s) { return s == RfSource::Trf ? "trf" : "erf"; }

struct LevelCoverage {
    std::string level;
    double rf = 0.0;  // erf diameter when supplied, else analytic trf
    double image_size = 0.0;
    bool covers = false;  // rf >= min(image_size, snapped major q97.5)
};

struct PyramidReport {
    std::vector<OccupancyAudit> audits;
    std::vector<LevelCoverage> erf_coverage;
    std::vector<std::string> recommended_levels;  // contiguous, stride order
    std::vector<std::string> rationale;
    RfSource rf_source = RfSource::Trf;
    double coverage_target = 0.0;
};

/// Pick the recommended pyramid-level window from corpus statistics:
///   * lowest level: the coarsest tap whose stride still satisfies the
///     occupancy condition stride <= q2.5(minor), i.e. rho_q_low >= 1; finer
///     levels would only add cost. When even the finest tap fails, the report
///     keeps it and records a warning instead of failing.
///   * highest level: the first tap (in stride order) whose receptive field
///     reaches min(image_size, snap_high(q97.5(major))); every deeper level
///     is pruned as redundant.
/// `erf_diameters`, when provided with rf_source == Erf, supplies measured
/// diameters per level; levels missing from it fall back to TRF with a note.
inline PyramidReport recommend_levels(
    const AxisStats& minor_stats, const AxisStats& major_stats, const ArchSpec& arch,
    double image_size, RfSource rf_source = RfSource::Trf,
    const std::map<std::string, double>* erf_diameters = nullptr,
    const std::vector<double>* minor_samples = nullptr) {
    if (arch.taps.empty()) throw Error("recommend_levels: arch has no taps");
    if (image_size < 1) throw Error("recommend_levels: image_size must be >= 1");

    struct Tap {
        std::string name;
        double stride;
        double trf;
    };
    std::vector<Tap> taps;
    for (const auto& [name, idx] : arch.taps) {
        StrideTrf st = trf_and_stride(arch, name);
        taps.push_back({name, st.stride.to_double(), st.trf.to_double()});
    }
    std::sort(taps.begin(), taps.end(),
              [](const Tap& a, const Tap& b) { return a.stride < b.stride; });

    PyramidReport report;
    report.rf_source = rf_source;

    std::vector<LevelStride> level_strides;
    for (const auto& t : taps) level_strides.push_back({t.name, t.stride});
    report.audits = audit_levels(minor_stats, level_strides, minor_samples);

    const double target =
        std::min(image_size, major_stats.q_high > 0 ? ceil_pow2(major_stats.q_high)
                                                    : image_size);
    report.coverage_target = target;

    auto rf_of = [&](const Tap& t) -> std::pair<double, bool> {  // (rf, is_erf)
        if (rf_source == RfSource::Erf && erf_diameters) {
            auto it = erf_diameters->find(t.name);
            if (it != erf_diameters->end()) return {it->second, true};
        }
        return {t.trf, false};
    };

    bool any_erf_fallback = false;
    for (const auto& t : taps) {
        auto [rf, is_erf] = rf_of(t);
        if (rf_source == RfSource::Erf && !is_erf) any_erf_fallback = true;
        report.erf_coverage.push_back({t.name, rf, image_size, rf >= target - 1e-9});
    }
    if (rf_source == RfSource::Erf && (!erf_diameters || any_erf_fallback))
        report.rationale.push_back(
            "note: erf requested but not supplied for every level; "
            "missing levels use trf");

    // Occupancy rule: coarsest tap with stride <= q_low(minor).
    std::size_t lowest = 0;
    bool feasible = false;
    for (std::size_t i = 0; i < taps.size(); ++i) {
        if (taps[i].stride <= minor_stats.q_low) {
            lowest = i;
            feasible = true;
        }
    }
    if (feasible) {
        report.rationale.push_back(
            "occupancy: " + taps[lowest].name + " (stride " +
            format_fixed(taps[lowest].stride, 0) +
            ") is the coarsest level with stride <= minor q2.5 = " +
            format_fixed(minor_stats.q_low, 2) + " (rho_q_low = " +
            format_fixed(minor_stats.q_low / taps[lowest].stride, 2) + " >= 1)");
    } else {
        lowest = 0;
        report.rationale.push_back(
            "warning: no feasible level; even the finest tap " + taps[0].name +
            " (stride " + format_fixed(taps[0].stride, 0) +
            ") exceeds minor q2.5 = " + format_fixed(minor_stats.q_low, 2) +
            "; keeping it as best effort");
    }

    // Coverage rule: shallowest tap whose receptive field reaches the target.
    std::size_t highest = taps.size() - 1;
    bool covered = false;
    for (std::size_t i = 0; i < taps.size(); ++i) {
        if (report.erf_coverage[i].covers) {
            highest = i;
            covered = true;
            break;
        }
    }
    if (covered) {
        report.rationale.push_back(
            "coverage: " + taps[highest].name + " " + rf_source_name(rf_source) + " " +
            format_fixed(report.erf_coverage[highest].rf, 1) + " >= target " +
            format_fixed(target, 1) + " = min(image " + format_fixed(image_size, 0) +
            ", major q97.5 snapped " +
            format_fixed(major_stats.q_high > 0 ? ceil_pow2(major_stats.q_high) : 0, 1) +
            ")");
    } else {
        report.rationale.push_back(
            "warning: no level reaches coverage target " + format_fixed(target, 1) +
            "; keeping the deepest tap " + taps[highest].name);
    }
    if (highest < lowest) {
        report.rationale.push_back("note: coverage already satisfied below the "
                                   "occupancy level; window collapsed to " +
                                   taps[lowest].name);
        highest = lowest;
    }

    for (std::size_t i = lowest; i <= highest; ++i)
        report.recommended_levels.push_back(taps[i].name);
    for (std::size_t i = highest + 1; i < taps.size(); ++i)
        report.rationale.push_back("pruned: " + taps[i].name +
                                   " (receptive field redundant for target " +
                                   format_fixed(target, 1) + ")");
    return report;
}

// ---------------------------------------------------------------------------
// Feature-dilution simulation
// ---------------------------------------------------------------------------

struct DilutionResult {
    double stride = 1.0;
    double bar_width = 0.0;
    double bar_length = 0.0;
    double angle_deg = 0.0;
    double max_cell_signal = 0.0;  // max average-pooled coverage over cells
    double occupancy_bound = 0.0;  // analytic cap on max_cell_signal
};

struct BarExceedsCanvasError : Error {
    using Error::Error;
};

/// Rasterize a width x length bar at the given angle (exact per-pixel
/// coverage fractions via polygon clipping), average-pool by `stride`, and
/// report the strongest pooled cell against the analytic bound. The bar's
/// bounding box is anchored at `offset` (default: the canvas origin), so an
/// axis-aligned bar is grid-aligned by default.
inline DilutionResult simulate_dilution(double bar_width, double bar_length,
                                        double angle_deg, int stride, int canvas,
                                        Vec2 offset = {0.0, 0.0}) {
    if (stride < 1) throw Error("simulate_dilution: stride must be >= 1");
    if (canvas < stride || canvas % stride != 0)
        throw Error("simulate_dilution: canvas must be a positive multiple of stride");
    if (bar_width <= 0 || bar_length <= 0)
        throw Error("simulate_dilution: bar dimensions must be positive");

    const double rad = angle_deg * std::acos(-1.0) / 180.0;
    const double cs = std::cos(rad), sn = std::sin(rad);
    const double hl = bar_length / 2.0, hw = bar_width / 2.0;
    std::vector<Vec2> bar = {
        {-hl * cs + hw * sn, -hl * sn - hw * cs},
        {hl * cs + hw * sn, hl * sn - hw * cs},
        {hl * cs - hw * sn, hl * sn + hw * cs},
        {-hl * cs - hw * sn, -hl * sn + hw * cs},
    };
    double min_x = bar[0].x, min_y = bar[0].y, max_x = bar[0].x, max_y = bar[0].y;
    for (const auto& v : bar) {
        min_x = std::min(min_x, v.x);
        min_y = std::min(min_y, v.y);
        max_x = std::max(max_x, v.x);
        max_y = std::max(max_y, v.y);
    }
    Vec2 shift{offset.x - min_x, offset.y - min_y};
    for (auto& v : bar) v = v + shift;
    if (max_x - min_x + offset.x > canvas + 1e-9 || max_y - min_y + offset.y > canvas + 1e-9)
        throw BarExceedsCanvasError("bar bounding box exceeds canvas");

    const int cells = canvas / stride;
    std::vector<double> cell_sum(static_cast<std::size_t>(cells) * cells, 0.0);

    int px0 = std::max(0, static_cast<int>(std::floor(offset.x)));
    int py0 = std::max(0, static_cast<int>(std::floor(offset.y)));
    int px1 = std::min(canvas, static_cast<int>(std::ceil(max_x - min_x + offset.x)));
    int py1 = std::min(canvas, static_cast<int>(std::ceil(max_y - min_y + offset.y)));
    for (int py = py0; py < py1; ++py) {
        for (int px = px0; px < px1; ++px) {
            std::vector<Vec2> cov = clip_to_rect(bar, px, py, px + 1, py + 1);
            if (cov.size() < 3) continue;
            double a = polygon_area(cov);
            if (a <= 0) continue;
            cell_sum[static_cast<std::size_t>(py / stride) * cells + px / stride] += a;
        }
    }

    DilutionResult res;
    res.stride = stride;
    res.bar_width = bar_width;
    res.bar_length = bar_length;
    res.angle_deg = angle_deg;
    double cell_px = static_cast<double>(stride) * stride;
    for (double s : cell_sum)
        res.max_cell_signal = std::max(res.max_cell_signal, s / cell_px);

    bool axis_aligned = std::abs(std::remainder(angle_deg, 90.0)) < 1e-9;
    double s = static_cast<double>(stride);
    res.occupancy_bound = std::min(1.0, bar_width * bar_length / (s * s));
    if (axis_aligned && bar_length >= s)
        res.occupancy_bound = std::min(1.0, bar_width / s);
    return res;
}

}  // namespace limforge
