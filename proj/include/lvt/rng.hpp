#pragma once

#include <cstdint>
#include <limits>

namespace lvt {

/// Complete state of the counter-based generator. Identical states produce
/// identical streams.
struct RngState {
    std::uint64_t seed = 0;
    std::uint64_t counter = 0;

    friend bool operator==(const RngState&, const RngState&) = default;
};

/// SplitMix64 in counter form: draw n is mix(seed + n * gamma), so any
/// position in the stream is addressable from (seed, counter) alone.
/// Every draw (uniform, normal, u64) advances the counter by exactly one.
class Rng {
public:
    using result_type = std::uint64_t;

    Rng() = default;
    explicit Rng(std::uint64_t seed, std::uint64_t counter = 0) : state_{seed, counter} {}
    explicit Rng(RngState state) : state_(state) {}

    const RngState& state() const { return state_; }
    std::uint64_t seed() const { return state_.seed; }
    std::uint64_t counter() const { return state_.counter; }

    std::uint64_t next_u64();
    /// Uniform in [0, 1) with 53 bits of resolution.
    double uniform();
    /// Standard normal via Box-Muller on two decorrelated 53-bit uniforms
    /// derived from a single counter step.
    double normal();
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

    /// Independent stream keyed by (seed, stream id); does not touch this generator.
    Rng fork(std::uint64_t stream) const;

    // UniformRandomBitGenerator
    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
    result_type operator()() { return next_u64(); }

private:
    RngState state_{};
};

std::uint64_t splitmix64_mix(std::uint64_t x);

} // namespace lvt
