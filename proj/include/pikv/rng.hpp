// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace pikv {

// Deterministic random stream. mt19937_64 output is fixed by the standard,
// and the double transforms below avoid std::*_distribution, whose results
// vary across standard library implementations. Same seed, same bits,
// everywhere.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : seed_(seed), gen_(seed) {}

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1) with 53 bits of mantissa.
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Integer in [0, n). n == 0 returns 0.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) return 0;
        return gen_() % n;
    }

    // Standard normal via Box-Muller. The spare value is cached, so draws
    // come in deterministic pairs.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        // Avoid log(0).
        while (u1 <= 0.0) u1 = uniform();
        double radius = std::sqrt(-2.0 * std::log(u1));
        double angle = 2.0 * M_PI * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    std::vector<double> normal_vector(std::size_t n, double scale = 1.0) {
        std::vector<double> out(n);
        for (auto& x : out) x = scale * normal();
        return out;
    }

    // Worker streams are derived by seed-splitting; one Rng per worker.
    Rng split(std::uint64_t worker_index) const {
        return Rng(seed_ ^ worker_index);
    }

  private:
    std::uint64_t seed_;
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace pikv
