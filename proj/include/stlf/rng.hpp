#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace stlf {

// Self-contained deterministic generator (splitmix64 seeding, xoshiro256**
// core). The same seed yields the same draw sequence on every platform and
// every run; nothing here depends on libc or libstdc++ distribution
// internals.
class Rng {
 public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();

    // Uniform in [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi);

    // Box-Muller; the spare draw is cached so the stream stays sequential.
    double normal(double mean, double stddev);

    // Unbiased integer in [0, n) via rejection sampling. n must be > 0.
    std::uint32_t below(std::uint32_t n);

    // Fisher-Yates permutation of {0, ..., n-1}.
    std::vector<std::size_t> permutation(std::size_t n);

    std::uint64_t seed() const { return seed_; }

    // Independent stream derived from (seed, label). Used so that e.g. each
    // model route draws its parameters from its own stream regardless of
    // which other routes exist.
    static Rng derive(std::uint64_t seed, std::string_view label);

 private:
    std::uint64_t state_[4];
    std::uint64_t seed_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace stlf
