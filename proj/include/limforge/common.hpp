#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace limforge {

inline constexpr const char* kToolName = "limforge";
inline constexpr const char* kToolVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Base class for all limforge errors. Subcommands map these to exit code 2.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Input file missing or unreadable.
struct MissingFileError : Error {
    explicit MissingFileError(const std::filesystem::path& p)
        : Error("missing file: " + p.string()), path(p) {}
    std::filesystem::path path;
};

/// Tensor/layer shape disagreement in the numeric kernels.
struct ShapeError : Error {
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Deterministic RNG
//
// std::uniform_real_distribution is implementation-defined, so all random
// draws in the project go through this wrapper: mt19937_64 raw output mapped
// to [0,1) with a fixed 53-bit ladder. Bit-identical on every platform.
// ---------------------------------------------------------------------------

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform double in [0, 1).
    double uniform01() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform01();
    }

    /// Uniform in [-1, 1), redrawing the (measure-zero) exact 0.
    double uniform_signed_nonzero() {
        for (;;) {
            double v = 2.0 * uniform01() - 1.0;
            if (v != 0.0) return v;
        }
    }

    /// Uniform integer in [lo, hi]. Modulo bias is negligible for the
    /// fixture-sized ranges this is used with.
    std::uint64_t uniform_u64(std::uint64_t lo, std::uint64_t hi) {
        return lo + engine_() % (hi - lo + 1);
    }

    std::uint64_t next() { return engine_(); }

    /// Derive an independent stream seed for (master, lane) pairs, e.g. one
    /// RNG per ERF draw from a single master seed (splitmix64 step).
    static std::uint64_t derive(std::uint64_t master, std::uint64_t lane) {
        std::uint64_t z = master + 0x9E3779B97F4A7C15ull * (lane + 1);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

private:
    std::mt19937_64 engine_;
};

// ---------------------------------------------------------------------------
// Hashing (report provenance) and number formatting
// ---------------------------------------------------------------------------

/// FNV-1a 64-bit over a byte range.
inline std::uint64_t fnv1a64(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001B3ull;
    }
    return h;
}

/// Content digest of a file, as 16 hex chars. Throws MissingFileError.
inline std::string file_digest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFileError(path);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(bytes.data(), bytes.size())));
    return buf;
}

/// Fixed-decimal formatting, the interchange format for coordinates.
inline std::string format_fixed(double v, int decimals = 6) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
    return buf;
}

/// Shortest representation that parses back to the same double.
inline std::string format_shortest(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    // Try shorter forms first; %.17g is always exact but often ugly.
    for (int prec = 1; prec <= 16; ++prec) {
        char cand[64];
        std::snprintf(cand, sizeof(cand), "%.*g", prec, v);
        if (std::strtod(cand, nullptr) == v) return cand;
    }
    return buf;
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFileError(path);
    return std::string((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
}

inline void write_text_file(const std::filesystem::path& path, std::string_view text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write: " + path.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

// ---------------------------------------------------------------------------
// Small numeric helpers
// ---------------------------------------------------------------------------

/// Largest power of two (2^k, k integer, possibly negative) that is <= v.
/// v must be positive.
inline double floor_pow2(double v) {
    return std::exp2(std::floor(std::log2(v)));
}

/// Smallest power of two >= v. v must be positive.
inline double ceil_pow2(double v) {
    return std::exp2(std::ceil(std::log2(v)));
}

/// Linear-interpolation quantile on a sorted sample (inclusive method):
/// rank h = p * (n - 1), value = x[floor(h)] + frac(h) * (x[floor(h)+1] - x[floor(h)]).
inline double quantile_sorted(const std::vector<double>& sorted, double p) {
    if (sorted.empty()) throw Error("quantile of empty sample");
    if (sorted.size() == 1) return sorted[0];
    double h = p * static_cast<double>(sorted.size() - 1);
    auto lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= sorted.size()) return sorted.back();
    double frac = h - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

/// Pairwise (cascade) summation; order-stable and accurate for large samples.
inline double pairwise_sum(const double* x, std::size_t n) {
    if (n <= 8) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += x[i];
        return s;
    }
    std::size_t half = n / 2;
    return pairwise_sum(x, half) + pairwise_sum(x + half, n - half);
}

inline double pairwise_sum(const std::vector<double>& x) {
    return pairwise_sum(x.data(), x.size());
}

}  // namespace limforge
