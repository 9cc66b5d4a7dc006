#pragma once

#include <cmath>
#include <cstdint>

#include "rsalab/tensor.hpp"

namespace rsalab {

/// splitmix64 generator. The stream for a given seed is identical across
/// platforms and thread counts; forked substreams are independent and
/// addressable, which keeps data generation reproducible when work is
/// distributed.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    /// Uniform in [0,1) with 53 random bits.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    /// Standard normal via Box-Muller; the spare is cached so every draw
    /// consumes a fixed amount of the underlying stream.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    /// Derive an independent substream addressed by `stream`.
    Rng fork(std::uint64_t stream) const {
        Rng child(state_ ^ (0x9e3779b97f4a7c15ull * (stream + 0x632be59bd9b4e019ull)));
        child.next_u64();
        return child;
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

template <typename T>
void fill_normal(Tensor<T>& t, Rng& rng, double stddev = 1.0) {
    for (T& v : t.span()) v = static_cast<T>(rng.normal() * stddev);
}

template <typename T>
void fill_uniform(Tensor<T>& t, Rng& rng, double lo, double hi) {
    for (T& v : t.span()) v = static_cast<T>(rng.uniform(lo, hi));
}

}  // namespace rsalab
