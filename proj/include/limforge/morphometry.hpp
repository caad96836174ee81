#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "limforge/annotations.hpp"
#include "limforge/common.hpp"
#include "limforge/geometry.hpp"

namespace limforge {

enum class Axis { Major, Minor };

inline const char* axis_name(Axis a) { return a == Axis::Major ? "major" : "minor"; }

/// Major/minor side lengths of a box's minimum-area enclosing rectangle.
struct AxisPair {
    double major = 0.0;
    double minor = 0.0;
    bool degenerate() const { return minor <= 0.0; }
};

/// Row type of the per-dataset axis statistics table.
struct AxisStats {
    Axis axis = Axis::Minor;
    std::size_t n = 0;           // instances contributing
    std::size_t degenerate = 0;  // hull-collapsed instances excluded from stats
    double min = 0.0;
    double mean = 0.0;
    double max = 0.0;
    double std_dev = 0.0;  // population standard deviation
    double cv = 0.0;       // 100 * std_dev / mean
    double q_low = 0.0;    // 2.5th percentile
    double q_high = 0.0;   // 97.5th percentile
    double snap_low = 0.0;   // q_low floored to a power of two
    double snap_high = 0.0;  // q_high ceiled to a power of two
};

/// 2-D instance counts: log2 length bins along x, one row per dataset.
struct Histogram2D {
    std::vector<double> x_edges;        // 1, 2, 4, ..., 2048 (12 edges, 11 bins)
    std::vector<double> y_edges;        // row bucket ids 0..rows
    std::vector<std::string> y_labels;  // dataset per row
    std::vector<std::vector<std::uint64_t>> counts;  // [row][bin]

    std::uint64_t total() const {
        std::uint64_t t = 0;
        for (const auto& row : counts)
            for (auto c : row) t += c;
        return t;
    }
};

struct EmptyCorpusError : Error {
    EmptyCorpusError() : Error("empty corpus") {}
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Axis lengths via the minimum-area enclosing rectangle of the 4 vertices.
/// Annotations are near-rectangles but not exact, so the enclosing rectangle
/// is used rather than edge lengths; for a true rectangle they coincide.
/// A hull collapsed to a segment yields minor == 0 (flagged, not thrown).
inline AxisPair axis_lengths(const OrientedBox& box) {
    MinAreaRect rect = min_area_rect(box.polygon());
    AxisPair p;
    p.major = std::max(rect.side_a, rect.side_b);
    p.minor = std::min(rect.side_a, rect.side_b);
    return p;
}

struct AxisSamples {
    std::vector<double> values;
    std::size_t degenerate = 0;
};

/// All per-instance lengths of one axis, in scene/box order. Instances whose
/// hull collapses (minor == 0) are tallied, not included.
inline AxisSamples collect_axis_samples(const Corpus& corpus, Axis axis,
                                        const std::string& dataset_filter = {}) {
    AxisSamples out;
    for (const auto& scene : corpus.scenes) {
        if (!dataset_filter.empty() && scene.dataset != dataset_filter) continue;
        for (const auto& box : scene.boxes) {
            AxisPair p = axis_lengths(box);
            if (p.degenerate()) {
                ++out.degenerate;
                continue;
            }
            out.values.push_back(axis == Axis::Major ? p.major : p.minor);
        }
    }
    return out;
}

inline AxisStats axis_stats_from_samples(std::vector<double> values, Axis axis,
                                         std::size_t degenerate = 0) {
    if (values.empty()) throw EmptyCorpusError();
    AxisStats s;
    s.axis = axis;
    s.n = values.size();
    s.degenerate = degenerate;

    std::sort(values.begin(), values.end());
    s.min = values.front();
    s.max = values.back();
    s.mean = pairwise_sum(values) / static_cast<double>(s.n);

    std::vector<double> sq(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        double d = values[i] - s.mean;
        sq[i] = d * d;
    }
    s.std_dev = std::sqrt(pairwise_sum(sq) / static_cast<double>(s.n));
    s.cv = s.mean > 0 ? 100.0 * s.std_dev / s.mean : 0.0;

    s.q_low = quantile_sorted(values, 0.025);
    s.q_high = quantile_sorted(values, 0.975);
    s.snap_low = s.q_low > 0 ? floor_pow2(s.q_low) : 0.0;
    s.snap_high = s.q_high > 0 ? ceil_pow2(s.q_high) : 0.0;
    return s;
}

inline AxisStats corpus_axis_stats(const Corpus& corpus, Axis axis) {
    AxisSamples samples = collect_axis_samples(corpus, axis);
    return axis_stats_from_samples(std::move(samples.values), axis, samples.degenerate);
}

/// Log2 bin edges 2^0 .. 2^11: eleven octave bins covering [1, 2048] px.
inline std::vector<double> log2_length_edges() {
    std::vector<double> e;
    for (int k = 0; k <= 11; ++k) e.push_back(std::exp2(k));
    return e;
}

/// Instance counts over (axis length, dataset). Lengths outside [1, 2048]
/// land in the first/last bin so every instance is counted.
inline Histogram2D axis_histogram(const Corpus& corpus, Axis axis) {
    if (corpus.instance_count() == 0) throw EmptyCorpusError();
    Histogram2D h;
    h.x_edges = log2_length_edges();

    std::vector<std::string> datasets;
    for (const auto& scene : corpus.scenes) {
        std::string d = scene.dataset.empty() ? corpus.name : scene.dataset;
        if (std::find(datasets.begin(), datasets.end(), d) == datasets.end())
            datasets.push_back(d);
    }
    h.y_labels = datasets;
    for (std::size_t i = 0; i <= datasets.size(); ++i)
        h.y_edges.push_back(static_cast<double>(i));
    h.counts.assign(datasets.size(), std::vector<std::uint64_t>(h.x_edges.size() - 1, 0));

    const std::size_t last_bin = h.x_edges.size() - 2;
    for (const auto& scene : corpus.scenes) {
        std::string d = scene.dataset.empty() ? corpus.name : scene.dataset;
        std::size_t row = static_cast<std::size_t>(
            std::find(datasets.begin(), datasets.end(), d) - datasets.begin());
        for (const auto& box : scene.boxes) {
            AxisPair p = axis_lengths(box);
            if (p.degenerate()) continue;
            double v = axis == Axis::Major ? p.major : p.minor;
            std::size_t bin;
            if (v < h.x_edges.front()) {
                bin = 0;
            } else if (v >= h.x_edges.back()) {
                bin = last_bin;
            } else {
                bin = static_cast<std::size_t>(std::floor(std::log2(v)));
                bin = std::min(bin, last_bin);
            }
            ++h.counts[row][bin];
        }
    }
    return h;
}

// ---------------------------------------------------------------------------
// CSV export
// ---------------------------------------------------------------------------

/// One row per (dataset, axis); min/mean/max/95% range/CV column order as in
/// the usual axis-statistics tables, with raw quantiles alongside the
/// power-of-two snapped range.
inline std::string stats_to_csv(
    const std::vector<std::pair<std::string, AxisStats>>& rows) {
    std::string out =
        "dataset,axis,n,min,mean,max,q2.5,q97.5,range95_low,range95_high,cv,std,"
        "degenerate\n";
    for (const auto& [name, s] : rows) {
        out += name;
        out += ',';
        out += axis_name(s.axis);
        out += ',';
        out += std::to_string(s.n);
        for (double v : {s.min, s.mean, s.max, s.q_low, s.q_high, s.snap_low,
                         s.snap_high, s.cv, s.std_dev}) {
            out += ',';
            out += format_fixed(v, 4);
        }
        out += ',';
        out += std::to_string(s.degenerate);
        out += '\n';
    }
    return out;
}

inline std::string histogram_to_csv(const Histogram2D& h) {
    std::string out = "# bin edges (px)";
    for (double e : h.x_edges) {
        out += ',';
        out += format_shortest(e);
    }
    out += "\ndataset";
    for (std::size_t i = 0; i + 1 < h.x_edges.size(); ++i) {
        out += ",[" + format_shortest(h.x_edges[i]) + "," +
               format_shortest(h.x_edges[i + 1]) + ")";
    }
    out += '\n';
    for (std::size_t r = 0; r < h.counts.size(); ++r) {
        out += h.y_labels[r];
        for (auto c : h.counts[r]) {
            out += ',';
            out += std::to_string(c);
        }
        out += '\n';
    }
    return out;
}

}  // namespace limforge
