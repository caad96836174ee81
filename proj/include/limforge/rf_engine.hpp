#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <future>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "limforge/common.hpp"

namespace limforge {

// ---------------------------------------------------------------------------
// Architecture description
// ---------------------------------------------------------------------------

enum class LayerKind { Conv, Pool, Upsample };

struct LayerSpec {
    LayerKind kind = LayerKind::Conv;
    int kernel = 1;
    int stride = 1;
    int dilation = 1;
    int out_channels = 1;  // conv only
};

/// Declarative conv stack. A tap maps a pyramid-level name to the number of
/// leading layers applied, i.e. taps["P3"] == 4 means the P3 feature map is
/// the output of layers[0..3].
struct ArchSpec {
    std::string name;
    std::vector<LayerSpec> layers;
    std::map<std::string, std::size_t> taps;
};

struct UnknownLevelError : Error {
    explicit UnknownLevelError(const std::string& level)
        : Error("unknown pyramid level: " + level) {}
};

/// Exact rational, for jump bookkeeping through upsample layers.
struct Rational {
    long long num = 0;
    long long den = 1;

    static Rational of(long long n, long long d = 1) {
        Rational r{n, d};
        r.normalize();
        return r;
    }
    void normalize() {
        if (den < 0) {
            num = -num;
            den = -den;
        }
        long long g = std::gcd(num < 0 ? -num : num, den);
        if (g > 1) {
            num /= g;
            den /= g;
        }
        if (num == 0) den = 1;
    }
    Rational operator*(long long s) const { return of(num * s, den); }
    Rational operator/(long long s) const { return of(num, den * s); }
    Rational operator+(Rational o) const {
        return of(num * o.den + o.num * den, den * o.den);
    }
    bool integral() const { return den == 1; }
    double to_double() const { return static_cast<double>(num) / static_cast<double>(den); }
    bool operator==(const Rational&) const = default;
};

inline void validate_arch(const ArchSpec& arch) {
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const LayerSpec& l = arch.layers[i];
        std::string where = arch.name + " layer " + std::to_string(i) + ": ";
        if (l.kernel < 1) throw Error(where + "kernel must be >= 1");
        if (l.stride < 1) throw Error(where + "stride must be >= 1");
        if (l.dilation < 1) throw Error(where + "dilation must be >= 1");
        if (l.kind == LayerKind::Conv) {
            if (l.kernel % 2 == 0) throw Error(where + "conv kernels must be odd");
            if (l.out_channels < 1) throw Error(where + "out_channels must be >= 1");
        }
    }
    for (const auto& [level, idx] : arch.taps) {
        if (idx > arch.layers.size())
            throw Error(arch.name + ": tap " + level + " beyond last layer");
        // P<n> taps must sit at stride 2^n.
        if (level.size() >= 2 && level[0] == 'P' &&
            std::all_of(level.begin() + 1, level.end(),
                        [](char c) { return c >= '0' && c <= '9'; })) {
            int n = std::stoi(level.substr(1));
            Rational j = Rational::of(1);
            for (std::size_t i = 0; i < idx; ++i) {
                const LayerSpec& l = arch.layers[i];
                j = l.kind == LayerKind::Upsample ? j / l.stride : j * l.stride;
            }
            if (!(j.integral() && j.num == (1ll << n)))
                throw Error(arch.name + ": tap " + level + " sits at stride " +
                            std::to_string(j.to_double()) + ", expected " +
                            std::to_string(1ll << n));
        }
    }
}

// ---------------------------------------------------------------------------
// Analytic stride / TRF
// ---------------------------------------------------------------------------

struct StrideTrf {
    Rational stride;
    Rational trf;
};

/// The standard receptive-field recurrence: j0 = 1, r0 = 1, and per layer
/// r += (kernel-1) * dilation * j, then j *= stride (or j /= stride for
/// upsample layers). Exact rational arithmetic throughout.
inline StrideTrf trf_and_stride(const ArchSpec& arch, const std::string& level) {
    auto it = arch.taps.find(level);
    if (it == arch.taps.end()) throw UnknownLevelError(level);
    Rational j = Rational::of(1);
    Rational r = Rational::of(1);
    for (std::size_t i = 0; i < it->second; ++i) {
        const LayerSpec& l = arch.layers[i];
        r = r + j * (static_cast<long long>(l.kernel - 1) * l.dilation);
        j = l.kind == LayerKind::Upsample ? j / l.stride : j * l.stride;
    }
    return {j, r};
}

struct RFResult {
    std::string level;
    double stride = 1.0;
    double trf = 1.0;
    std::optional<double> erf_diameter;
    double erf_mass_fraction = 0.95;
    bool truncated = false;  // gradient support clipped by the input border
};

// ---------------------------------------------------------------------------
// Linear network + reverse-mode gradients
//
// ERF measurement runs on a purely linear realization of the arch (no
// activation, no normalization): the sensitivity map is then exactly the
// composed linear map's coefficients, the TRF cross-check is exact, and
// results are seed-stable.
// ---------------------------------------------------------------------------

enum class WeightMode { RandomUniform, AllOnes };

/// Dense (channels, height, width) grid.
struct Grid {
    int c = 0, h = 0, w = 0;
    std::vector<double> v;

    Grid() = default;
    Grid(int c_, int h_, int w_)
        : c(c_), h(h_), w(w_),
          v(static_cast<std::size_t>(c_) * h_ * w_, 0.0) {}
    double& at(int ci, int y, int x) {
        return v[(static_cast<std::size_t>(ci) * h + y) * w + x];
    }
    double at(int ci, int y, int x) const {
        return v[(static_cast<std::size_t>(ci) * h + y) * w + x];
    }
};

namespace detail {

struct LayerState {
    LayerSpec spec;
    int in_channels = 1;
    int out_channels = 1;
    int in_size = 0;   // spatial side at input
    int out_size = 0;  // spatial side at output
    int pad = 0;       // conv only
    std::vector<double> weights;  // conv: [out][in][ky][kx]

    double wgt(int o, int i, int ky, int kx) const {
        return weights[((static_cast<std::size_t>(o) * in_channels + i) * spec.kernel + ky) *
                           spec.kernel +
                       kx];
    }
};

inline int out_size_of(const LayerSpec& l, int in) {
    switch (l.kind) {
        case LayerKind::Conv: {
            int pad = (l.kernel - 1) * l.dilation / 2;
            return (in + 2 * pad - ((l.kernel - 1) * l.dilation + 1)) / l.stride + 1;
        }
        case LayerKind::Pool:
            return (in - l.kernel) / l.stride + 1;
        case LayerKind::Upsample:
            return in * l.stride;
    }
    return in;
}

}  // namespace detail

/// Linear realization of an arch prefix on a square single-channel input.
class LinearConvNet {
public:
    LinearConvNet(const ArchSpec& arch, const std::string& level, int input_size) {
        auto it = arch.taps.find(level);
        if (it == arch.taps.end()) throw UnknownLevelError(level);
        if (input_size < 1) throw Error("input size must be >= 1");
        int ch = 1;
        int size = input_size;
        for (std::size_t i = 0; i < it->second; ++i) {
            detail::LayerState st;
            st.spec = arch.layers[i];
            st.in_channels = ch;
            st.out_channels = st.spec.kind == LayerKind::Conv ? st.spec.out_channels : ch;
            st.in_size = size;
            st.out_size = detail::out_size_of(st.spec, size);
            if (st.out_size < 1)
                throw Error("input too small: layer " + std::to_string(i) +
                            " would produce an empty map");
            st.pad = st.spec.kind == LayerKind::Conv
                         ? (st.spec.kernel - 1) * st.spec.dilation / 2
                         : 0;
            ch = st.out_channels;
            size = st.out_size;
            layers_.push_back(std::move(st));
        }
        input_size_ = input_size;
        out_channels_ = ch;
        out_size_ = size;
    }

    /// Fill conv weights: fixed (layer, out, in, ky, kx) draw order.
    void assign_weights(WeightMode mode, Rng* rng) {
        for (auto& st : layers_) {
            if (st.spec.kind != LayerKind::Conv) continue;
            std::size_t n = static_cast<std::size_t>(st.out_channels) * st.in_channels *
                            st.spec.kernel * st.spec.kernel;
            st.weights.resize(n);
            for (auto& w : st.weights)
                w = mode == WeightMode::AllOnes ? 1.0 : rng->uniform_signed_nonzero();
        }
    }

    int input_size() const { return input_size_; }
    int output_size() const { return out_size_; }
    int output_channels() const { return out_channels_; }
    int center_out() const { return out_size_ / 2; }

    Grid forward(const Grid& x) const {
        Grid cur = x;
        for (const auto& st : layers_) cur = forward_layer(st, cur);
        return cur;
    }

    /// Gradient of out[channel, cy, cx] with respect to the input, by
    /// reverse-mode accumulation from a unit seed.
    Grid input_gradient(int channel, int cy, int cx) const {
        Grid g(out_channels_, out_size_, out_size_);
        g.at(channel, cy, cx) = 1.0;
        for (auto it = layers_.rbegin(); it != layers_.rend(); ++it)
            g = backward_layer(*it, g);
        return g;
    }

    /// Sensitivity map of the center output cell: sum over output channels of
    /// the absolute input gradient.
    Grid center_sensitivity() const {
        Grid acc(1, input_size_, input_size_);
        int cy = center_out(), cx = center_out();
        for (int c = 0; c < out_channels_; ++c) {
            Grid g = input_gradient(c, cy, cx);
            for (std::size_t i = 0; i < acc.v.size(); ++i) acc.v[i] += std::abs(g.v[i]);
        }
        return acc;
    }

    /// Exact input-pixel interval [lo, hi] (per axis) that can influence the
    /// center output cell, by walking the index mapping backwards.
    std::pair<long long, long long> center_support_interval() const {
        long long lo = center_out(), hi = center_out();
        for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
            const auto& st = *it;
            switch (st.spec.kind) {
                case LayerKind::Conv:
                    lo = lo * st.spec.stride - st.pad;
                    hi = hi * st.spec.stride - st.pad +
                         static_cast<long long>(st.spec.kernel - 1) * st.spec.dilation;
                    break;
                case LayerKind::Pool:
                    lo = lo * st.spec.stride;
                    hi = hi * st.spec.stride + (st.spec.kernel - 1);
                    break;
                case LayerKind::Upsample:
                    lo = lo / st.spec.stride;
                    hi = hi / st.spec.stride;
                    break;
            }
        }
        return {lo, hi};
    }

    bool center_support_truncated() const {
        auto [lo, hi] = center_support_interval();
        return lo < 0 || hi >= input_size_;
    }

private:
    static Grid forward_layer(const detail::LayerState& st, const Grid& x) {
        const LayerSpec& l = st.spec;
        Grid y(st.out_channels, st.out_size, st.out_size);
        switch (l.kind) {
            case LayerKind::Conv:
                for (int o = 0; o < st.out_channels; ++o)
                    for (int ty = 0; ty < st.out_size; ++ty)
                        for (int tx = 0; tx < st.out_size; ++tx) {
                            double acc = 0.0;
                            for (int i = 0; i < st.in_channels; ++i)
                                for (int ky = 0; ky < l.kernel; ++ky) {
                                    int sy = ty * l.stride + ky * l.dilation - st.pad;
                                    if (sy < 0 || sy >= st.in_size) continue;
                                    for (int kx = 0; kx < l.kernel; ++kx) {
                                        int sx = tx * l.stride + kx * l.dilation - st.pad;
                                        if (sx < 0 || sx >= st.in_size) continue;
                                        acc += st.wgt(o, i, ky, kx) * x.at(i, sy, sx);
                                    }
                                }
                            y.at(o, ty, tx) = acc;
                        }
                break;
            case LayerKind::Pool: {
                double inv = 1.0 / (static_cast<double>(l.kernel) * l.kernel);
                for (int c = 0; c < st.out_channels; ++c)
                    for (int ty = 0; ty < st.out_size; ++ty)
                        for (int tx = 0; tx < st.out_size; ++tx) {
                            double acc = 0.0;
                            for (int ky = 0; ky < l.kernel; ++ky)
                                for (int kx = 0; kx < l.kernel; ++kx)
                                    acc += x.at(c, ty * l.stride + ky, tx * l.stride + kx);
                            y.at(c, ty, tx) = acc * inv;
                        }
                break;
            }
            case LayerKind::Upsample:
                for (int c = 0; c < st.out_channels; ++c)
                    for (int ty = 0; ty < st.out_size; ++ty)
                        for (int tx = 0; tx < st.out_size; ++tx)
                            y.at(c, ty, tx) = x.at(c, ty / l.stride, tx / l.stride);
                break;
        }
        return y;
    }

    static Grid backward_layer(const detail::LayerState& st, const Grid& gy) {
        const LayerSpec& l = st.spec;
        Grid gx(st.in_channels, st.in_size, st.in_size);
        switch (l.kind) {
            case LayerKind::Conv:
                for (int o = 0; o < st.out_channels; ++o)
                    for (int ty = 0; ty < st.out_size; ++ty)
                        for (int tx = 0; tx < st.out_size; ++tx) {
                            double g = gy.at(o, ty, tx);
                            if (g == 0.0) continue;
                            for (int i = 0; i < st.in_channels; ++i)
                                for (int ky = 0; ky < l.kernel; ++ky) {
                                    int sy = ty * l.stride + ky * l.dilation - st.pad;
                                    if (sy < 0 || sy >= st.in_size) continue;
                                    for (int kx = 0; kx < l.kernel; ++kx) {
                                        int sx = tx * l.stride + kx * l.dilation - st.pad;
                                        if (sx < 0 || sx >= st.in_size) continue;
                                        gx.at(i, sy, sx) += st.wgt(o, i, ky, kx) * g;
                                    }
                                }
                        }
                break;
            case LayerKind::Pool: {
                double inv = 1.0 / (static_cast<double>(l.kernel) * l.kernel);
                for (int c = 0; c < st.out_channels; ++c)
                    for (int ty = 0; ty < st.out_size; ++ty)
                        for (int tx = 0; tx < st.out_size; ++tx) {
                            double g = gy.at(c, ty, tx) * inv;
                            if (g == 0.0) continue;
                            for (int ky = 0; ky < l.kernel; ++ky)
                                for (int kx = 0; kx < l.kernel; ++kx)
                                    gx.at(c, ty * l.stride + ky, tx * l.stride + kx) += g;
                        }
                break;
            }
            case LayerKind::Upsample:
                for (int c = 0; c < st.out_channels; ++c)
                    for (int ty = 0; ty < st.out_size; ++ty)
                        for (int tx = 0; tx < st.out_size; ++tx)
                            gx.at(c, ty / l.stride, tx / l.stride) += gy.at(c, ty, tx);
                break;
        }
        return gx;
    }

    std::vector<detail::LayerState> layers_;
    int input_size_ = 0;
    int out_channels_ = 1;
    int out_size_ = 0;
};

// ---------------------------------------------------------------------------
// ERF estimation and support measurement
// ---------------------------------------------------------------------------

struct ErfEstimate {
    RFResult result;
    Grid mean_sensitivity;  // single channel, input_size x input_size
    double center_row = 0;  // support-interval midpoint (may be half-integral)
    double center_col = 0;
};

namespace detail {

/// Smallest centered square (about the exact support midpoint) holding at
/// least `mass` of the map's total. Returns the side length.
inline int mass_diameter(const Grid& map, double mid, double mass) {
    double total = 0.0;
    for (double x : map.v) total += x;
    if (total <= 0.0) return 0;

    int lo, hi;
    if (mid == std::floor(mid)) {
        lo = hi = static_cast<int>(mid);
    } else {
        lo = static_cast<int>(std::floor(mid));
        hi = lo + 1;
    }
    auto window_sum = [&](int a, int b) {
        double s = 0.0;
        int ya = std::max(a, 0), yb = std::min(b, map.h - 1);
        int xa = std::max(a, 0), xb = std::min(b, map.w - 1);
        for (int y = ya; y <= yb; ++y)
            for (int x = xa; x <= xb; ++x) s += map.at(0, y, x);
        return s;
    };
    while (true) {
        if (window_sum(lo, hi) >= mass * total - 1e-12 * total) return hi - lo + 1;
        if (lo <= 0 && hi >= map.h - 1) return hi - lo + 1;  // whole map
        --lo;
        ++hi;
    }
}

}  // namespace detail

/// Empirical ERF: average over `draws` random linear networks of the
/// per-pixel absolute-gradient sum at the center output cell, reduced to the
/// side of the smallest centered square holding `mass` of the total.
/// Deterministic for a fixed seed regardless of thread count.
inline ErfEstimate erf_estimate(const ArchSpec& arch, const std::string& level,
                                int input_size, int draws, double mass,
                                std::uint64_t seed,
                                WeightMode mode = WeightMode::RandomUniform,
                                unsigned threads = 0) {
    if (draws < 1) throw Error("draws must be >= 1");
    if (!(mass > 0.0 && mass <= 1.0)) throw Error("mass must be in (0, 1]");
    validate_arch(arch);
    if (mode == WeightMode::AllOnes) draws = 1;

    LinearConvNet probe(arch, level, input_size);
    std::vector<Grid> maps(static_cast<std::size_t>(draws));

    auto run_draw = [&](int d) {
        LinearConvNet net(arch, level, input_size);
        Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(d)));
        net.assign_weights(mode, &rng);
        maps[static_cast<std::size_t>(d)] = net.center_sensitivity();
    };

    unsigned nthreads = threads ? threads : std::max(1u, std::thread::hardware_concurrency());
    nthreads = std::min<unsigned>(nthreads, static_cast<unsigned>(draws));
    if (nthreads <= 1) {
        for (int d = 0; d < draws; ++d) run_draw(d);
    } else {
        std::vector<std::future<void>> futs;
        for (unsigned t = 0; t < nthreads; ++t) {
            futs.push_back(std::async(std::launch::async, [&, t] {
                for (int d = static_cast<int>(t); d < draws; d += static_cast<int>(nthreads))
                    run_draw(d);
            }));
        }
        for (auto& f : futs) f.get();
    }

    Grid mean(1, input_size, input_size);
    for (const auto& m : maps)
        for (std::size_t i = 0; i < mean.v.size(); ++i) mean.v[i] += m.v[i];
    for (auto& x : mean.v) x /= static_cast<double>(draws);

    auto [lo, hi] = probe.center_support_interval();
    double mid = 0.5 * static_cast<double>(lo + hi);

    StrideTrf st = trf_and_stride(arch, level);
    ErfEstimate est;
    est.result.level = level;
    est.result.stride = st.stride.to_double();
    est.result.trf = st.trf.to_double();
    est.result.erf_mass_fraction = mass;
    est.result.truncated = probe.center_support_truncated();
    est.result.erf_diameter = detail::mass_diameter(mean, mid, mass);
    est.mean_sensitivity = std::move(mean);
    est.center_row = mid;
    est.center_col = mid;
    return est;
}

/// Side of the bounding square of strictly-nonzero center-cell gradients
/// under all-ones weights. Equals the analytic TRF when the support is not
/// clipped by the input border.
inline long long gradient_support(const ArchSpec& arch, const std::string& level,
                                  int input_size) {
    validate_arch(arch);
    LinearConvNet net(arch, level, input_size);
    net.assign_weights(WeightMode::AllOnes, nullptr);
    Grid g = net.center_sensitivity();
    int ymin = g.h, ymax = -1, xmin = g.w, xmax = -1;
    for (int y = 0; y < g.h; ++y)
        for (int x = 0; x < g.w; ++x)
            if (g.at(0, y, x) != 0.0) {
                ymin = std::min(ymin, y);
                ymax = std::max(ymax, y);
                xmin = std::min(xmin, x);
                xmax = std::max(xmax, x);
            }
    if (ymax < 0) return 0;
    return std::max<long long>(ymax - ymin + 1, xmax - xmin + 1);
}

/// Smallest input size (a multiple of the tap stride) whose center-cell
/// support is clear of the borders; keeps TRF measurements exact.
inline int min_clear_input(const ArchSpec& arch, const std::string& level) {
    StrideTrf st = trf_and_stride(arch, level);
    if (!st.stride.integral() || !st.trf.integral())
        throw Error("min_clear_input requires integral stride/TRF");
    auto stride = st.stride.num;
    for (long long m = std::max<long long>(1, st.trf.num / stride);
         m < st.trf.num / stride + 1024; ++m) {
        int n = static_cast<int>(m * stride);
        LinearConvNet net(arch, level, n);
        if (!net.center_support_truncated()) return n;
    }
    throw Error("no clear input size found for " + level);
}

// ---------------------------------------------------------------------------
// JSON / CSV interchange
// ---------------------------------------------------------------------------

inline LayerKind layer_kind_from_string(const std::string& s) {
    if (s == "conv") return LayerKind::Conv;
    if (s == "pool") return LayerKind::Pool;
    if (s == "upsample") return LayerKind::Upsample;
    throw Error("unknown layer kind: " + s);
}

inline const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Conv: return "conv";
        case LayerKind::Pool: return "pool";
        case LayerKind::Upsample: return "upsample";
    }
    return "conv";
}

inline ArchSpec arch_from_json(const nlohmann::json& doc) {
    ArchSpec arch;
    arch.name = doc.value("name", "unnamed");
    for (const auto& l : doc.at("layers")) {
        LayerSpec spec;
        spec.kind = layer_kind_from_string(l.at("kind").get<std::string>());
        spec.kernel = l.value("kernel", 1);
        spec.stride = l.value("stride", 1);
        spec.dilation = l.value("dilation", 1);
        spec.out_channels = l.value("out_channels", 1);
        arch.layers.push_back(spec);
    }
    for (const auto& [level, idx] : doc.at("taps").items())
        arch.taps[level] = idx.get<std::size_t>();
    validate_arch(arch);
    return arch;
}

inline ArchSpec load_arch(const std::filesystem::path& path) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw Error(path.string() + ": " + e.what());
    }
    try {
        return arch_from_json(doc);
    } catch (const nlohmann::json::exception& e) {
        throw Error(path.string() + ": " + e.what());
    }
}

/// Gradient-map CSV: one row per input row, plain numbers.
inline std::string sensitivity_to_csv(const ErfEstimate& est) {
    std::string out = "# center=(" + format_shortest(est.center_row) + "," +
                      format_shortest(est.center_col) + ") mass=" +
                      format_shortest(est.result.erf_mass_fraction) + "\n";
    const Grid& g = est.mean_sensitivity;
    for (int y = 0; y < g.h; ++y) {
        for (int x = 0; x < g.w; ++x) {
            if (x) out += ',';
            out += format_shortest(g.at(0, y, x));
        }
        out += '\n';
    }
    return out;
}

}  // namespace limforge
