#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

#include "hydranat/errors.hpp"
#include "hydranat/tensor.hpp"

namespace hnat {

// SplitMix64 stream. State advance rule: state += 0x9E3779B97F4A7C15 per
// draw, output is the finalizer mix of the new state. Same seed gives a
// bit-identical stream on every platform; every sampling helper below
// consumes a fixed number of draws per call.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in (0, 1]: top 53 bits, shifted into the unit interval.
    double next_unit() { return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; }

    // Standard normal via Box-Muller; consumes exactly two u64 draws.
    double normal() {
        double u1 = next_unit();
        double u2 = next_unit();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    std::uint64_t state() const { return state_; }

private:
    std::uint64_t state_;
};

template <typename T>
void normal_fill(Tensor<T>& t, Rng& rng, double mean = 0.0, double stddev = 1.0) {
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.normal(mean, stddev));
}

// Normal(mean, std) samples rejected and redrawn until they land in
// [lo, hi]. Deterministic for a fixed rng state.
template <typename T>
void trunc_normal_fill(Tensor<T>& t, Rng& rng, double mean, double stddev, double lo, double hi) {
    if (!(lo < hi)) throw ContractError("trunc_normal_fill: lo must be < hi");
    for (std::size_t i = 0; i < t.size(); ++i) {
        double x;
        do {
            x = rng.normal(mean, stddev);
        } while (x < lo || x > hi);
        t[i] = static_cast<T>(x);
    }
}

}  // namespace hnat
