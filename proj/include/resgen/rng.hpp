#pragma once

// Deterministic random numbers. All sampling in the library goes through
// Rng so that a (seed, stream) pair fully determines every draw, independent
// of platform or standard-library distribution internals.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace resgen {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace detail

/// Derive an independent sub-seed from a master seed and up to three stream
/// indices. Used everywhere a task fans out (per-graph, per-epoch, per-event)
/// so parallel and serial schedules see identical streams.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a,
                                 std::uint64_t b = 0, std::uint64_t c = 0) {
    std::uint64_t s = detail::splitmix64(seed ^ 0x243f6a8885a308d3ULL);
    s = detail::splitmix64(s ^ detail::splitmix64(a));
    s = detail::splitmix64(s ^ detail::splitmix64(b + 0x13198a2e03707344ULL));
    s = detail::splitmix64(s ^ detail::splitmix64(c + 0xa4093822299f31d0ULL));
    return s;
}

/// mt19937_64 with fixed, implementation-independent draw helpers.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform in [0, 1): 53 mantissa bits, identical on every platform.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t uniform_int(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    /// Standard normal via Box-Muller (one value per call, cached pair).
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(theta);
        has_cached_ = true;
        return r * std::cos(theta);
    }

    /// Fisher-Yates shuffle with this stream.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

}  // namespace resgen
