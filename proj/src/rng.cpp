#include "lvt/rng.hpp"

#include <cmath>
#include <numbers>

namespace lvt {

namespace {
constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;
constexpr std::uint64_t kSecondLane = 0xD1B54A32D192ED03ULL;

double to_unit(std::uint64_t bits) {
    return static_cast<double>(bits >> 11) * 0x1.0p-53;
}
} // namespace

std::uint64_t splitmix64_mix(std::uint64_t x) {
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::uint64_t Rng::next_u64() {
    ++state_.counter;
    return splitmix64_mix(state_.seed + state_.counter * kGamma);
}

double Rng::uniform() {
    return to_unit(next_u64());
}

double Rng::normal() {
    const std::uint64_t a = next_u64();
    const std::uint64_t b = splitmix64_mix(a ^ kSecondLane);
    // u1 in (0, 1] keeps the log finite.
    const double u1 = 1.0 - to_unit(a);
    const double u2 = to_unit(b);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t n) {
    if (n <= 1) {
        next_u64();
        return 0;
    }
    // Multiply-shift; bias is below 2^-64 * n, negligible for sampling.
    const unsigned __int128 wide = static_cast<unsigned __int128>(next_u64()) * n;
    return static_cast<std::uint64_t>(wide >> 64);
}

Rng Rng::fork(std::uint64_t stream) const {
    return Rng(splitmix64_mix(state_.seed ^ splitmix64_mix(stream + kGamma)), 0);
}

} // namespace lvt
