#pragma once

// Shared error types, deterministic RNG, and small shape helpers used
// across the library.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dosecast {

// ---------------------------------------------------------------- errors

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Mismatched tensor extents.
struct ShapeError : Error { using Error::Error; };
// Invalid or inconsistent configuration values.
struct ConfigError : Error { using Error::Error; };
// Input values outside an operation's stated domain.
struct ContractError : Error { using Error::Error; };
// Non-finite intermediates or failed numerical procedures.
struct NumericalError : Error { using Error::Error; };
// Metric requested on an empty region.
struct UndefinedMetricError : Error { using Error::Error; };
// Malformed VOL1/CKPT1/config files.
struct FormatError : Error { using Error::Error; };
// Training aborts (non-finite loss or gradient).
struct TrainError : Error { using Error::Error; };
// Phantom placement failure.
struct GenerationError : Error { using Error::Error; };

// ---------------------------------------------------------------- shapes

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::int64_t{1},
                           [](std::int64_t a, std::int64_t b) { return a * b; });
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ')';
    return os.str();
}

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

// ---------------------------------------------------------------- rng

// Deterministic generator: splitmix64 core with Box-Muller normals.
// Implemented here (not <random>) so that draw sequences are pinned by
// this code alone, independent of the standard library build.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::uint64_t uniform_int(std::uint64_t n) { return next_u64() % n; }

    // Standard normal via Box-Muller with a cached spare.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do { u1 = uniform(); } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // Independent child stream (used to pin per-purpose draw orders).
    Rng fork(std::uint64_t stream) {
        std::uint64_t h = state_ ^ (0x2545F4914F6CDD1Dull * (stream + 1));
        h ^= h >> 33;
        h *= 0xFF51AFD7ED558CCDull;
        h ^= h >> 33;
        return Rng(h);
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// FNV-1a 64-bit, used for checksums and config fingerprints.
inline std::uint64_t fnv1a64(const void* bytes, std::size_t n, std::uint64_t h = 0xCBF29CE484222325ull) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001B3ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[v & 0xF];
        v >>= 4;
    }
    return s;
}

}  // namespace dosecast
