#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "limforge/common.hpp"

namespace limforge {

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

/// Dense rank-4 (batch, channel, height, width) array, row-major.
/// Double precision is the verification default; float is available for
/// throughput paths.
template <class T>
struct Tensor4T {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<T> data;

    Tensor4T() = default;
    Tensor4T(int n_, int c_, int h_, int w_)
        : n(n_), c(c_), h(h_), w(w_),
          data(static_cast<std::size_t>(n_) * c_ * h_ * w_, T(0)) {}

    std::size_t size() const { return data.size(); }
    std::size_t index(int ni, int ci, int y, int x) const {
        return ((static_cast<std::size_t>(ni) * c + ci) * h + y) * w + x;
    }
    T& at(int ni, int ci, int y, int x) { return data[index(ni, ci, y, x)]; }
    T at(int ni, int ci, int y, int x) const { return data[index(ni, ci, y, x)]; }

    bool same_shape(const Tensor4T& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }

    static Tensor4T random(int n_, int c_, int h_, int w_, Rng& rng,
                           T lo = T(-1), T hi = T(1)) {
        Tensor4T t(n_, c_, h_, w_);
        for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
        return t;
    }
};

using Tensor4 = Tensor4T<double>;
using Tensor4f = Tensor4T<float>;

namespace detail {

template <class T>
void require_shape(const Tensor4T<T>& a, const Tensor4T<T>& b, const char* what) {
    if (!a.same_shape(b)) throw ShapeError(std::string(what) + ": shape mismatch");
}

}  // namespace detail

/// Stack two tensors along the batch axis.
template <class T>
Tensor4T<T> concat_batch(const Tensor4T<T>& a, const Tensor4T<T>& b) {
    if (a.c != b.c || a.h != b.h || a.w != b.w)
        throw ShapeError("concat_batch: per-sample shapes differ");
    Tensor4T<T> out(a.n + b.n, a.c, a.h, a.w);
    std::copy(a.data.begin(), a.data.end(), out.data.begin());
    std::copy(b.data.begin(), b.data.end(), out.data.begin() + a.data.size());
    return out;
}

// ---------------------------------------------------------------------------
// Group Normalization
// ---------------------------------------------------------------------------

template <class T>
struct GNParamsT {
    int groups = 32;
    std::vector<T> gamma;  // length C
    std::vector<T> beta;   // length C
    T epsilon = T(1e-5);

    static GNParamsT identity(int channels, int groups_ = 32) {
        GNParamsT p;
        p.groups = groups_;
        p.gamma.assign(channels, T(1));
        p.beta.assign(channels, T(0));
        return p;
    }
};

using GNParams = GNParamsT<double>;

/// Largest divisor of `channels` not exceeding the requested group count;
/// keeps groups equal-sized when C is not divisible by G (or C < G).
inline int effective_groups(int channels, int requested) {
    int g = std::min(channels, std::max(1, requested));
    while (channels % g != 0) --g;
    return g;
}

template <class T>
struct GNCacheT {
    int groups = 1;
    std::vector<T> mean;     // [n * groups]
    std::vector<T> inv_std;  // [n * groups]
    Tensor4T<T> xhat;
};

using GNCache = GNCacheT<double>;

/// Per-sample, per-group normalization with a per-channel affine:
///   xhat = (x - mean_g) / sqrt(var_g + eps),  y = gamma_c * xhat + beta_c
/// Statistics use biased (population) variance over the group's C/G * H * W
/// elements. Summation order is fixed, so outputs are bit-reproducible.
template <class T>
std::pair<Tensor4T<T>, GNCacheT<T>> gn_forward(const Tensor4T<T>& x,
                                               const GNParamsT<T>& p) {
    if (static_cast<int>(p.gamma.size()) != x.c || static_cast<int>(p.beta.size()) != x.c)
        throw ShapeError("gn_forward: gamma/beta length != channels");
    const int G = effective_groups(x.c, p.groups);
    const int cpg = x.c / G;
    const T m = static_cast<T>(cpg) * x.h * x.w;

    Tensor4T<T> y(x.n, x.c, x.h, x.w);
    GNCacheT<T> cache;
    cache.groups = G;
    cache.mean.resize(static_cast<std::size_t>(x.n) * G);
    cache.inv_std.resize(static_cast<std::size_t>(x.n) * G);
    cache.xhat = Tensor4T<T>(x.n, x.c, x.h, x.w);

    for (int ni = 0; ni < x.n; ++ni) {
        for (int g = 0; g < G; ++g) {
            T sum = 0;
            for (int ci = g * cpg; ci < (g + 1) * cpg; ++ci)
                for (int yy = 0; yy < x.h; ++yy)
                    for (int xx = 0; xx < x.w; ++xx) sum += x.at(ni, ci, yy, xx);
            T mean = sum / m;

            T var_acc = 0;
            for (int ci = g * cpg; ci < (g + 1) * cpg; ++ci)
                for (int yy = 0; yy < x.h; ++yy)
                    for (int xx = 0; xx < x.w; ++xx) {
                        T d = x.at(ni, ci, yy, xx) - mean;
                        var_acc += d * d;
                    }
            T inv = T(1) / std::sqrt(var_acc / m + p.epsilon);

            cache.mean[static_cast<std::size_t>(ni) * G + g] = mean;
            cache.inv_std[static_cast<std::size_t>(ni) * G + g] = inv;
            for (int ci = g * cpg; ci < (g + 1) * cpg; ++ci)
                for (int yy = 0; yy < x.h; ++yy)
                    for (int xx = 0; xx < x.w; ++xx) {
                        T xh = (x.at(ni, ci, yy, xx) - mean) * inv;
                        cache.xhat.at(ni, ci, yy, xx) = xh;
                        y.at(ni, ci, yy, xx) = p.gamma[ci] * xh + p.beta[ci];
                    }
        }
    }
    return {std::move(y), std::move(cache)};
}

template <class T>
struct GNGradsT {
    Tensor4T<T> x;
    std::vector<T> gamma;
    std::vector<T> beta;
};

using GNGrads = GNGradsT<double>;

/// Exact reverse-mode gradients of gn_forward. Per group with m elements:
///   dx = inv_std/m * (m*dxhat - sum(dxhat) - xhat * sum(dxhat*xhat))
template <class T>
GNGradsT<T> gn_backward(const Tensor4T<T>& grad_y, const GNCacheT<T>& cache,
                        const GNParamsT<T>& p) {
    detail::require_shape(grad_y, cache.xhat, "gn_backward");
    const Tensor4T<T>& xhat = cache.xhat;
    const int G = cache.groups;
    const int cpg = xhat.c / G;
    const T m = static_cast<T>(cpg) * xhat.h * xhat.w;

    GNGradsT<T> g;
    g.x = Tensor4T<T>(xhat.n, xhat.c, xhat.h, xhat.w);
    g.gamma.assign(xhat.c, T(0));
    g.beta.assign(xhat.c, T(0));

    for (int ni = 0; ni < xhat.n; ++ni) {
        for (int gi = 0; gi < G; ++gi) {
            T inv = cache.inv_std[static_cast<std::size_t>(ni) * G + gi];
            T sum_dxh = 0, sum_dxh_xh = 0;
            for (int ci = gi * cpg; ci < (gi + 1) * cpg; ++ci)
                for (int yy = 0; yy < xhat.h; ++yy)
                    for (int xx = 0; xx < xhat.w; ++xx) {
                        T gy = grad_y.at(ni, ci, yy, xx);
                        T xh = xhat.at(ni, ci, yy, xx);
                        T dxh = gy * p.gamma[ci];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh;
                        g.gamma[ci] += gy * xh;
                        g.beta[ci] += gy;
                    }
            for (int ci = gi * cpg; ci < (gi + 1) * cpg; ++ci)
                for (int yy = 0; yy < xhat.h; ++yy)
                    for (int xx = 0; xx < xhat.w; ++xx) {
                        T dxh = grad_y.at(ni, ci, yy, xx) * p.gamma[ci];
                        T xh = xhat.at(ni, ci, yy, xx);
                        g.x.at(ni, ci, yy, xx) =
                            inv / m * (m * dxh - sum_dxh - xh * sum_dxh_xh);
                    }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// 1x1 convolution (linear projection)
// ---------------------------------------------------------------------------

template <class T>
struct Conv1x1ParamsT {
    int out_channels = 0;
    int in_channels = 0;
    std::vector<T> weight;  // [out][in]
    std::vector<T> bias;    // [out] or empty

    T wgt(int o, int i) const {
        return weight[static_cast<std::size_t>(o) * in_channels + i];
    }
    T& wgt(int o, int i) { return weight[static_cast<std::size_t>(o) * in_channels + i]; }

    static Conv1x1ParamsT identity(int channels) {
        Conv1x1ParamsT p;
        p.out_channels = p.in_channels = channels;
        p.weight.assign(static_cast<std::size_t>(channels) * channels, T(0));
        for (int i = 0; i < channels; ++i) p.wgt(i, i) = T(1);
        return p;
    }

    static Conv1x1ParamsT random(int out, int in, Rng& rng, bool with_bias = true) {
        Conv1x1ParamsT p;
        p.out_channels = out;
        p.in_channels = in;
        p.weight.resize(static_cast<std::size_t>(out) * in);
        for (auto& v : p.weight) v = static_cast<T>(rng.uniform(-1.0, 1.0));
        if (with_bias) {
            p.bias.resize(out);
            for (auto& v : p.bias) v = static_cast<T>(rng.uniform(-1.0, 1.0));
        }
        return p;
    }
};

using Conv1x1Params = Conv1x1ParamsT<double>;

template <class T>
Tensor4T<T> conv1x1_forward(const Tensor4T<T>& x, const Conv1x1ParamsT<T>& q) {
    if (x.c != q.in_channels) throw ShapeError("conv1x1_forward: channel mismatch");
    if (!q.bias.empty() && static_cast<int>(q.bias.size()) != q.out_channels)
        throw ShapeError("conv1x1_forward: bias length != out_channels");
    Tensor4T<T> y(x.n, q.out_channels, x.h, x.w);
    for (int ni = 0; ni < x.n; ++ni)
        for (int o = 0; o < q.out_channels; ++o) {
            T b = q.bias.empty() ? T(0) : q.bias[o];
            for (int yy = 0; yy < x.h; ++yy)
                for (int xx = 0; xx < x.w; ++xx) {
                    T acc = b;
                    for (int i = 0; i < x.c; ++i)
                        acc += q.wgt(o, i) * x.at(ni, i, yy, xx);
                    y.at(ni, o, yy, xx) = acc;
                }
        }
    return y;
}

template <class T>
struct Conv1x1GradsT {
    Tensor4T<T> x;
    std::vector<T> weight;
    std::vector<T> bias;  // empty when the layer has no bias
};

using Conv1x1Grads = Conv1x1GradsT<double>;

template <class T>
Conv1x1GradsT<T> conv1x1_backward(const Tensor4T<T>& grad_y, const Tensor4T<T>& x,
                                  const Conv1x1ParamsT<T>& q) {
    if (x.c != q.in_channels || grad_y.c != q.out_channels ||
        grad_y.n != x.n || grad_y.h != x.h || grad_y.w != x.w)
        throw ShapeError("conv1x1_backward: shape mismatch");
    Conv1x1GradsT<T> g;
    g.x = Tensor4T<T>(x.n, x.c, x.h, x.w);
    g.weight.assign(q.weight.size(), T(0));
    if (!q.bias.empty()) g.bias.assign(q.bias.size(), T(0));

    for (int ni = 0; ni < x.n; ++ni)
        for (int o = 0; o < q.out_channels; ++o)
            for (int yy = 0; yy < x.h; ++yy)
                for (int xx = 0; xx < x.w; ++xx) {
                    T gy = grad_y.at(ni, o, yy, xx);
                    if (!g.bias.empty()) g.bias[o] += gy;
                    for (int i = 0; i < x.c; ++i) {
                        g.weight[static_cast<std::size_t>(o) * x.c + i] +=
                            gy * x.at(ni, i, yy, xx);
                        g.x.at(ni, i, yy, xx) += gy * q.wgt(o, i);
                    }
                }
    return g;
}

// ---------------------------------------------------------------------------
// GN-CBLinear: 1x1 conv applied to the group-normalized features, with no
// activation anywhere so the projection stays linear in its input.
// ---------------------------------------------------------------------------

template <class T>
struct GnCblinearCacheT {
    GNCacheT<T> gn;
    Tensor4T<T> gn_out;
};

using GnCblinearCache = GnCblinearCacheT<double>;

template <class T>
Tensor4T<T> gn_cblinear_forward(const Tensor4T<T>& x, const GNParamsT<T>& p,
                                const Conv1x1ParamsT<T>& q,
                                GnCblinearCacheT<T>* cache = nullptr) {
    auto [normed, gn_cache] = gn_forward(x, p);
    Tensor4T<T> y = conv1x1_forward(normed, q);
    if (cache) {
        cache->gn = std::move(gn_cache);
        cache->gn_out = std::move(normed);
    }
    return y;
}

template <class T>
struct GnCblinearGradsT {
    Tensor4T<T> x;
    std::vector<T> gamma, beta, weight, bias;
};

using GnCblinearGrads = GnCblinearGradsT<double>;

template <class T>
GnCblinearGradsT<T> gn_cblinear_backward(const Tensor4T<T>& grad_y,
                                         const GnCblinearCacheT<T>& cache,
                                         const GNParamsT<T>& p,
                                         const Conv1x1ParamsT<T>& q) {
    Conv1x1GradsT<T> conv_g = conv1x1_backward(grad_y, cache.gn_out, q);
    GNGradsT<T> gn_g = gn_backward(conv_g.x, cache.gn, p);
    GnCblinearGradsT<T> g;
    g.x = std::move(gn_g.x);
    g.gamma = std::move(gn_g.gamma);
    g.beta = std::move(gn_g.beta);
    g.weight = std::move(conv_g.weight);
    g.bias = std::move(conv_g.bias);
    return g;
}

// ---------------------------------------------------------------------------
// Batch Normalization (momentumless batch mode, for the stability contrast)
// ---------------------------------------------------------------------------

/// Per-channel normalization over the whole batch (N*H*W elements). Batch
/// statistics are built from per-sample partial sums averaged across the
/// batch, so duplicating a sample reproduces the solo statistics bit-exactly.
template <class T>
Tensor4T<T> bn_forward(const Tensor4T<T>& x, T epsilon = T(1e-5)) {
    if (x.n < 1) throw ShapeError("bn_forward: empty batch");
    const T m = static_cast<T>(x.h) * x.w;
    Tensor4T<T> y(x.n, x.c, x.h, x.w);
    for (int ci = 0; ci < x.c; ++ci) {
        T mean_acc = 0;
        for (int ni = 0; ni < x.n; ++ni) {
            T s = 0;
            for (int yy = 0; yy < x.h; ++yy)
                for (int xx = 0; xx < x.w; ++xx) s += x.at(ni, ci, yy, xx);
            mean_acc += s / m;
        }
        T mean = mean_acc / static_cast<T>(x.n);

        T var_acc = 0;
        for (int ni = 0; ni < x.n; ++ni) {
            T s = 0;
            for (int yy = 0; yy < x.h; ++yy)
                for (int xx = 0; xx < x.w; ++xx) {
                    T d = x.at(ni, ci, yy, xx) - mean;
                    s += d * d;
                }
            var_acc += s / m;
        }
        T inv = T(1) / std::sqrt(var_acc / static_cast<T>(x.n) + epsilon);

        for (int ni = 0; ni < x.n; ++ni)
            for (int yy = 0; yy < x.h; ++yy)
                for (int xx = 0; xx < x.w; ++xx)
                    y.at(ni, ci, yy, xx) = (x.at(ni, ci, yy, xx) - mean) * inv;
    }
    return y;
}

// ---------------------------------------------------------------------------
// Micro-batch stability experiment
// ---------------------------------------------------------------------------

struct StabilityResult {
    double gn_drift = 0.0;  // max over companions (expected: exactly 0)
    double bn_drift = 0.0;  // max over companions (> 0 for distinct companions)
    std::vector<double> gn_per_companion;
    std::vector<double> bn_per_companion;
};

/// For each companion, normalize the batch [sample, companion] and compare
/// the sample's output against its solo (N=1) output. GN statistics never
/// see the companion, so its drift is zero bitwise; BN statistics do.
template <class T>
StabilityResult stability_experiment(const Tensor4T<T>& sample,
                                     const std::vector<Tensor4T<T>>& companions,
                                     const GNParamsT<T>& p) {
    if (sample.n != 1) throw ShapeError("stability_experiment: sample must have N=1");
    auto [solo_gn, cache] = gn_forward(sample, p);
    Tensor4T<T> solo_bn = bn_forward(sample);

    StabilityResult res;
    for (const auto& comp : companions) {
        if (comp.c != sample.c || comp.h != sample.h || comp.w != sample.w)
            throw ShapeError("stability_experiment: companion shape mismatch");
        Tensor4T<T> batch = concat_batch(sample, comp);

        auto [gn_out, c2] = gn_forward(batch, p);
        double gn_d = 0.0;
        for (std::size_t i = 0; i < solo_gn.data.size(); ++i)
            gn_d = std::max(gn_d, std::abs(static_cast<double>(gn_out.data[i]) -
                                           static_cast<double>(solo_gn.data[i])));

        Tensor4T<T> bn_out = bn_forward(batch);
        double bn_d = 0.0;
        for (std::size_t i = 0; i < solo_bn.data.size(); ++i)
            bn_d = std::max(bn_d, std::abs(static_cast<double>(bn_out.data[i]) -
                                           static_cast<double>(solo_bn.data[i])));

        res.gn_per_companion.push_back(gn_d);
        res.bn_per_companion.push_back(bn_d);
        res.gn_drift = std::max(res.gn_drift, gn_d);
        res.bn_drift = std::max(res.bn_drift, bn_d);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Finite-difference verification (double precision)
// ---------------------------------------------------------------------------

inline constexpr double kGradCheckStep = 1e-5;
inline constexpr double kGradCheckTolerance = 1e-6;

/// Max relative error between analytic gradients and central differences of
/// `loss` over every coordinate of `params`.
inline double fd_max_rel_err(std::vector<double>& params,
                             const std::vector<double>& analytic,
                             const std::function<double()>& loss,
                             double h = kGradCheckStep) {
    if (params.size() != analytic.size())
        throw ShapeError("fd_max_rel_err: gradient length mismatch");
    double worst = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        double keep = params[i];
        params[i] = keep + h;
        double lp = loss();
        params[i] = keep - h;
        double lm = loss();
        params[i] = keep;
        double numeric = (lp - lm) / (2.0 * h);
        double denom = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-10});
        worst = std::max(worst, std::abs(numeric - analytic[i]) / denom);
    }
    return worst;
}

struct GradCheckCase {
    std::string name;
    double max_rel_err = 0.0;
    bool passed = false;
};

namespace detail {

inline double project(const Tensor4& y, const Tensor4& p) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.data.size(); ++i) s += y.data[i] * p.data[i];
    return s;
}

inline GradCheckCase check_gn(std::uint64_t seed, int n, int c, int h, int w, int groups,
                              double bug = 0.0) {
    Rng rng(seed);
    Tensor4 x = Tensor4::random(n, c, h, w, rng);
    GNParams p = GNParams::identity(c, groups);
    for (auto& g : p.gamma) g = rng.uniform(0.5, 1.5);
    for (auto& b : p.beta) b = rng.uniform(-0.5, 0.5);
    Tensor4 proj = Tensor4::random(n, c, h, w, rng);

    auto [y, cache] = gn_forward(x, p);
    GNGrads grads = gn_backward(proj, cache, p);
    grads.gamma[0] += bug;

    GradCheckCase result;
    result.name = "gn[" + std::to_string(n) + "x" + std::to_string(c) + "x" +
                  std::to_string(h) + "x" + std::to_string(w) + ",G=" +
                  std::to_string(effective_groups(c, groups)) + "]";
    double worst = 0.0;
    auto loss_x = [&] { return project(gn_forward(x, p).first, proj); };
    worst = std::max(worst, fd_max_rel_err(x.data, grads.x.data, loss_x));
    worst = std::max(worst, fd_max_rel_err(p.gamma, grads.gamma, loss_x));
    worst = std::max(worst, fd_max_rel_err(p.beta, grads.beta, loss_x));
    result.max_rel_err = worst;
    result.passed = worst < kGradCheckTolerance;
    return result;
}

inline GradCheckCase check_conv1x1(std::uint64_t seed, int n, int c_in, int c_out,
                                   int h, int w, bool with_bias) {
    Rng rng(seed);
    Tensor4 x = Tensor4::random(n, c_in, h, w, rng);
    Conv1x1Params q = Conv1x1Params::random(c_out, c_in, rng, with_bias);
    Tensor4 proj = Tensor4::random(n, c_out, h, w, rng);

    Conv1x1Grads grads = conv1x1_backward(proj, x, q);

    GradCheckCase result;
    result.name = "conv1x1[" + std::to_string(c_in) + "->" + std::to_string(c_out) +
                  (with_bias ? ",bias" : "") + "]";
    auto loss = [&] { return project(conv1x1_forward(x, q), proj); };
    double worst = fd_max_rel_err(x.data, grads.x.data, loss);
    worst = std::max(worst, fd_max_rel_err(q.weight, grads.weight, loss));
    if (with_bias) worst = std::max(worst, fd_max_rel_err(q.bias, grads.bias, loss));
    result.max_rel_err = worst;
    result.passed = worst < kGradCheckTolerance;
    return result;
}

inline GradCheckCase check_gn_cblinear(std::uint64_t seed, int n, int c, int c_out,
                                       int h, int w, int groups) {
    Rng rng(seed);
    Tensor4 x = Tensor4::random(n, c, h, w, rng);
    GNParams p = GNParams::identity(c, groups);
    for (auto& g : p.gamma) g = rng.uniform(0.5, 1.5);
    for (auto& b : p.beta) b = rng.uniform(-0.5, 0.5);
    Conv1x1Params q = Conv1x1Params::random(c_out, c, rng, true);
    Tensor4 proj = Tensor4::random(n, c_out, h, w, rng);

    GnCblinearCache cache;
    gn_cblinear_forward(x, p, q, &cache);
    GnCblinearGrads grads = gn_cblinear_backward(proj, cache, p, q);

    GradCheckCase result;
    result.name = "gn_cblinear[" + std::to_string(c) + "->" + std::to_string(c_out) +
                  ",G=" + std::to_string(effective_groups(c, groups)) + "]";
    auto loss = [&] { return project(gn_cblinear_forward(x, p, q), proj); };
    double worst = fd_max_rel_err(x.data, grads.x.data, loss);
    worst = std::max(worst, fd_max_rel_err(p.gamma, grads.gamma, loss));
    worst = std::max(worst, fd_max_rel_err(p.beta, grads.beta, loss));
    worst = std::max(worst, fd_max_rel_err(q.weight, grads.weight, loss));
    worst = std::max(worst, fd_max_rel_err(q.bias, grads.bias, loss));
    result.max_rel_err = worst;
    result.passed = worst < kGradCheckTolerance;
    return result;
}

}  // namespace detail

/// The pinned verification suite: 22 seeded shape/group configurations per
/// run, including the degenerate G=1 (LayerNorm-like) and G=C
/// (InstanceNorm-like) groupings. `inject_bug` perturbs one analytic gradient
/// and exists as a negative control for the CLI exit path.
inline std::vector<GradCheckCase> gradcheck_suite(std::uint64_t seed,
                                                  bool inject_bug = false) {
    std::vector<GradCheckCase> out;
    int lane = 0;
    auto sub = [&] { return Rng::derive(seed, static_cast<std::uint64_t>(lane++)); };

    // (n, c, h, w, groups)
    const int gn_cfg[][5] = {
        {2, 8, 4, 4, 4},  {1, 4, 3, 3, 1},  {2, 2, 2, 2, 2},  {1, 8, 2, 2, 8},
        {3, 6, 2, 3, 3},  {2, 4, 1, 5, 2},  {1, 3, 4, 4, 3},  {2, 8, 4, 4, 2},
        {1, 5, 2, 2, 1},  {2, 12, 3, 3, 32},
    };
    for (std::size_t i = 0; i < std::size(gn_cfg); ++i) {
        const int* c = gn_cfg[i];
        out.push_back(detail::check_gn(sub(), c[0], c[1], c[2], c[3], c[4],
                                       inject_bug && i == 0 ? 1e-3 : 0.0));
    }

    // (n, c_in, c_out, h, w, bias)
    const int conv_cfg[][6] = {
        {2, 3, 5, 4, 4, 1}, {1, 1, 1, 1, 1, 1}, {2, 4, 2, 3, 3, 1},
        {1, 6, 6, 2, 2, 0}, {3, 2, 7, 2, 2, 1}, {1, 8, 3, 5, 1, 0},
    };
    for (const auto& c : conv_cfg)
        out.push_back(detail::check_conv1x1(sub(), c[0], c[1], c[2], c[3], c[4], c[5]));

    // (n, c, c_out, h, w, groups)
    const int comp_cfg[][6] = {
        {2, 8, 6, 4, 4, 4}, {1, 4, 3, 3, 3, 2}, {2, 2, 2, 5, 5, 2},
        {1, 8, 4, 2, 2, 8}, {2, 6, 1, 3, 3, 1}, {1, 12, 5, 2, 2, 6},
    };
    for (const auto& c : comp_cfg)
        out.push_back(detail::check_gn_cblinear(sub(), c[0], c[1], c[2], c[3], c[4], c[5]));

    return out;
}

/// Seeded stability fixture: one sample plus `count` distinct companions.
inline StabilityResult stability_report(std::uint64_t seed, int count = 10) {
    Rng rng(seed);
    Tensor4 sample = Tensor4::random(1, 8, 4, 4, rng);
    std::vector<Tensor4> companions;
    for (int i = 0; i < count; ++i)
        companions.push_back(Tensor4::random(1, 8, 4, 4, rng));
    GNParams p = GNParams::identity(8, 4);
    return stability_experiment(sample, companions, p);
}

// ---------------------------------------------------------------------------
// Tensor interchange: flat little-endian float64 + JSON sidecar
// ---------------------------------------------------------------------------

inline void save_tensor(const Tensor4& t, const std::filesystem::path& bin_path) {
    std::string bytes;
    bytes.reserve(t.data.size() * 8);
    for (double v : t.data) {
        std::uint64_t u;
        std::memcpy(&u, &v, 8);
        for (int b = 0; b < 8; ++b)
            bytes.push_back(static_cast<char>((u >> (8 * b)) & 0xFF));
    }
    write_text_file(bin_path, bytes);
    nlohmann::json side = {{"shape", {t.n, t.c, t.h, t.w}}, {"dtype", "float64"}};
    write_text_file(bin_path.string() + ".json", side.dump(2) + "\n");
}

inline Tensor4 load_tensor(const std::filesystem::path& bin_path) {
    nlohmann::json side = nlohmann::json::parse(read_text_file(bin_path.string() + ".json"));
    if (side.at("dtype").get<std::string>() != "float64")
        throw Error("unsupported tensor dtype");
    auto shape = side.at("shape");
    Tensor4 t(shape.at(0).get<int>(), shape.at(1).get<int>(), shape.at(2).get<int>(),
              shape.at(3).get<int>());
    std::string bytes = read_text_file(bin_path);
    if (bytes.size() != t.data.size() * 8)
        throw Error("tensor payload size does not match sidecar shape");
    for (std::size_t i = 0; i < t.data.size(); ++i) {
        std::uint64_t u = 0;
        for (int b = 0; b < 8; ++b)
            u |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[i * 8 + b]))
                 << (8 * b);
        std::memcpy(&t.data[i], &u, 8);
    }
    return t;
}

}  // namespace limforge
