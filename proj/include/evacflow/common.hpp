#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace evacflow {

// ---------------------------------------------------------------------------
// Error taxonomy. Everything user-facing is an EvacflowError; the CLI maps
// subclasses to stable exit codes.
// ---------------------------------------------------------------------------

struct EvacflowError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform (matmul inner dims, elementwise mismatch...).
struct ShapeError : EvacflowError {
    using EvacflowError::EvacflowError;
};

/// Non-finite values where finite ones are required.
struct NumericError : EvacflowError {
    using EvacflowError::EvacflowError;
};

/// A precondition of an operation was violated by the caller.
struct ContractError : EvacflowError {
    using EvacflowError::EvacflowError;
};

/// Bad configuration (files, flags, scenario definitions).
struct ConfigError : EvacflowError {
    using EvacflowError::EvacflowError;
};

/// Dataset-level problems (empty network, insufficient history...).
struct DataError : EvacflowError {
    using EvacflowError::EvacflowError;
};

/// Model artifact problems (missing file, version mismatch, corruption).
struct ArtifactError : EvacflowError {
    using EvacflowError::EvacflowError;
};

/// Training produced a non-finite loss.
struct DivergenceError : EvacflowError {
    using EvacflowError::EvacflowError;
};

template <typename Err = ContractError>
inline void require(bool cond, const std::string& msg) {
    if (!cond) throw Err(msg);
}

// ---------------------------------------------------------------------------
// Deterministic RNG. Thin wrapper over mt19937_64 with hand-rolled
// distributions so streams are reproducible bit-for-bit across platforms
// (std::*_distribution output is implementation-defined).
// ---------------------------------------------------------------------------

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // Rejection sampling keeps the distribution exact.
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    /// Standard normal via Box-Muller (pair computed, one discarded).
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

/// Derive an independent stream from a base seed and a stream tag.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// Hashing and formatting helpers.
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a64(const void* bytes, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::vector<double>& v,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
    return fnv1a64(v.data(), v.size() * sizeof(double), h);
}

inline std::string to_hex(std::uint64_t x) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(x));
    return std::string(buf);
}

/// Shortest decimal form that parses back to the exact same double.
inline std::string format_double(double x) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

inline std::string shape_string(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

inline bool all_finite(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace evacflow
