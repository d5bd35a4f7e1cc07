#pragma once

#include <cstdint>
#include <string>

namespace vla {

/// Deterministic generator with hand-rolled distributions so that streams are
/// reproducible bit-for-bit regardless of the standard library in use.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();
    /// Uniform in [0, 1).
    double uniform();
    /// Uniform in [lo, hi).
    double uniform(double lo, double hi);
    /// Uniform integer in [0, n).
    std::uint64_t uniform_index(std::uint64_t n);
    /// Standard normal via Box-Muller.
    double gaussian();
    double gaussian(double mean, double sigma);

    /// Derive an independent child stream (e.g. one per scene index).
    Rng fork(std::uint64_t stream) const;

private:
    std::uint64_t state_[4];
    double cached_gaussian_ = 0.0;
    bool has_cached_ = false;
};

/// Stable 64-bit FNV-1a hash of a string; used to seed per-name streams.
std::uint64_t stable_hash(const std::string& text);

}  // namespace vla
