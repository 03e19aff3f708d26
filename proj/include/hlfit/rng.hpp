#ifndef HLFIT_RNG_HPP
#define HLFIT_RNG_HPP

#include <cstdint>
#include <random>

namespace hlfit {

// splitmix64 finalizer; used to derive statistically independent child seeds
// from a master seed so parallel jobs stay reproducible whatever the
// execution order.
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
    return mix_seed(master ^ mix_seed(index + 1));
}

// Thin wrapper so all sampling goes through one engine type.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double normal(double mean = 0.0, double sd = 1.0) {
        std::normal_distribution<double> d(mean, sd);
        return d(engine_);
    }

    double uniform(double lo = 0.0, double hi = 1.0) {
        std::uniform_real_distribution<double> d(lo, hi);
        return d(engine_);
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

} // namespace hlfit

#endif
