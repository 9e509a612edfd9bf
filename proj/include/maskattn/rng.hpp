#pragma once

#include <cstdint>
#include <string_view>

namespace maskattn {

// Deterministic splitmix64 generator. Every random draw in the project comes
// from one root seed; subsystems get independent streams via fork(), which
// derives a child seed from the stream's identity (not its position), so the
// order in which streams are created does not matter.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();
    // Uniform in [0, 1).
    double uniform();
    // Uniform in [lo, hi).
    double uniform(double lo, double hi);
    // Uniform integer in [0, n).
    std::uint64_t next_below(std::uint64_t n);
    // Standard normal via Box-Muller (pair-cached).
    double normal();

    Rng fork(std::uint64_t tag) const;
    Rng fork(std::string_view tag) const;

private:
    std::uint64_t seed0_;
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace maskattn
