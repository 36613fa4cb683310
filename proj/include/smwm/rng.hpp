#pragma once

#include <cmath>
#include <cstdint>

namespace smwm {

// Deterministic splitmix64 generator. Small state, trivially serializable,
// identical sequences across platforms. Normal deviates use Box-Muller so
// results do not depend on the standard library's distribution internals.
class Rng {
public:
    explicit Rng(uint64_t seed = 0x9e3779b97f4a7c15ULL) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    uint64_t next_below(uint64_t n) {
        // modulo bias is irrelevant for n << 2^64
        return n == 0 ? 0 : next_u64() % n;
    }

    int uniform_int(int lo, int hi_exclusive) {
        return lo + static_cast<int>(next_below(static_cast<uint64_t>(hi_exclusive - lo)));
    }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0, u2;
        while (u1 <= 1e-300) u1 = uniform();
        u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // Derive an independent stream, e.g. one per training step.
    static Rng derive(uint64_t seed, uint64_t stream) {
        Rng mix(seed ^ (0x632be59bd9b4e019ULL * (stream + 1)));
        mix.next_u64();
        return mix;
    }

    uint64_t raw_state() const { return state_; }
    void set_raw_state(uint64_t s) {
        state_ = s;
        have_spare_ = false;
    }

private:
    uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace smwm
