#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace arlk {

// Deterministic 64-bit stream (splitmix64). All randomness in the project
// flows from one root seed through named child streams, so adding or removing
// a consumer never shifts the draws of an unrelated one. No std::random
// distributions anywhere: the bit streams must be stable across toolchains.
class Rng {
  public:
    explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller; two draws per call, no cached spare.
    double normal() {
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    // Unbiased integer in [0, n), n > 0.
    std::uint64_t next_below(std::uint64_t n) {
        const std::uint64_t threshold = (0ull - n) % n;
        for (;;) {
            const std::uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    int uniform_int(int lo, int hi) {  // inclusive bounds
        return lo + static_cast<int>(next_below(static_cast<std::uint64_t>(hi - lo + 1)));
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Derived stream; does not advance this generator.
    Rng child(std::string_view tag) const {
        std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
        for (char c : tag) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ull;
        }
        return mix_child(h);
    }

    Rng child(std::uint64_t idx) const { return mix_child(0x9e3779b97f4a7c15ull ^ idx); }

    std::uint64_t state() const { return state_; }
    void set_state(std::uint64_t s) { state_ = s; }

  private:
    Rng mix_child(std::uint64_t h) const {
        Rng r(state_ ^ h);
        r.next_u64();  // burn one step to decouple from the parent seed
        return r;
    }

    std::uint64_t state_;
};

// Wrap an angle to (-pi, pi].
inline double wrap_angle(double a) {
    constexpr double kPi = 3.141592653589793238462643383279502884;
    constexpr double kTwoPi = 2.0 * kPi;
    a = std::fmod(a, kTwoPi);
    if (a <= -kPi) a += kTwoPi;
    if (a > kPi) a -= kTwoPi;
    return a;
}

}  // namespace arlk
