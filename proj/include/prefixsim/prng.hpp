#pragma once

#include <cmath>
#include <cstdint>

namespace prefixsim {

// splitmix64: tiny, fast, and fully specified, so streams are reproducible
// across compilers and standard libraries (std:: distributions are not).
class Rng {
 public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // uniform integer in [lo, hi], inclusive
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<std::int64_t>(next_u64() % span);
    }

    bool bernoulli(double p) { return next_double() < p; }

    // exponential with given mean (inter-arrival gaps)
    double exponential(double mean) {
        double u = next_double();
        if (u <= 0.0) u = 0x1.0p-53;
        return -std::log(u) * mean;
    }

    // geometric starting at 1 with the given mean, truncated at cap
    std::int64_t truncated_geometric(double mean, std::int64_t cap) {
        if (mean <= 1.0) return 1;
        const double p = 1.0 / mean;
        double u = next_double();
        if (u <= 0.0) u = 0x1.0p-53;
        auto k = static_cast<std::int64_t>(std::floor(std::log(u) / std::log(1.0 - p))) + 1;
        if (k < 1) k = 1;
        if (k > cap) k = cap;
        return k;
    }

 private:
    std::uint64_t state_;
};

}  // namespace prefixsim
