#ifndef S2AP_RNG_HPP
#define S2AP_RNG_HPP

#include <cstdint>
#include <random>

namespace s2ap {

// Deterministic randomness. Engines are std::mt19937_64 (output sequence is
// fixed by the standard); the distributions are hand-rolled because the
// standard library distributions are implementation-defined.

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Derives an independent stream seed from a master seed and up to three
/// tags (component id, epoch, iteration...). Components draw from disjoint
/// streams so that enabling one feature never shifts another's randomness.
inline uint64_t substream(uint64_t master, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
    uint64_t s = splitmix64(master ^ 0x5851f42d4c957f2dULL);
    s = splitmix64(s ^ a);
    s = splitmix64(s ^ b);
    s = splitmix64(s ^ c);
    return s;
}

// Stream tags for the pipeline components.
namespace stream {
constexpr uint64_t data = 1;
constexpr uint64_t weight_init = 2;
constexpr uint64_t shuffle = 3;
constexpr uint64_t attack = 4;
constexpr uint64_t power_iter = 5;
constexpr uint64_t loss_diff = 6;
constexpr uint64_t eval_attack = 7;
}  // namespace stream

class Rng {
   public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    /// Uniform integer in [0, n).
    uint64_t below(uint64_t n) {
        // Rejection-free modulo bias is irrelevant at desk scale but cheap to avoid.
        uint64_t threshold = (~n + 1) % n;  // 2^64 mod n
        for (;;) {
            uint64_t r = engine_();
            if (r >= threshold) return r % n;
        }
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

   private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace s2ap

#endif  // S2AP_RNG_HPP
