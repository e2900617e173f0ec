#pragma once

#include <cstdint>
#include <random>

namespace latshield {

/// Mixes a seed with a tag into a fresh stream seed (splitmix64 step).
uint64_t mix_seed(uint64_t seed, uint64_t tag);

/// Deterministic random stream. All randomness in the project flows through
/// this class so that runs are reproducible for a fixed master seed.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed), gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    /// Uniform double in [0, 1).
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Inclusive integer range.
    int uniform_int(int lo, int hi) {
        return lo + static_cast<int>(gen_() % static_cast<uint64_t>(hi - lo + 1));
    }

    /// Standard normal via Box-Muller.
    double gaussian();

    uint64_t seed() const { return seed_; }

    /// Independent stream derived from this stream's seed (not its state).
    Rng child(uint64_t tag) const { return Rng(mix_seed(seed_, tag)); }

private:
    uint64_t seed_;
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace latshield
