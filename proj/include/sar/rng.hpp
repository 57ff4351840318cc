// Deterministic RNG with a fixed cross-platform bit stream (xoshiro256++).
// std:: distributions are implementation-defined, so sampling helpers are
// hand-rolled here; every stochastic component in the project draws from
// this class and nothing else.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace sar {

class Rng {
public:
    explicit Rng(uint64_t seed = 0) { reseed(seed); }

    void reseed(uint64_t seed) {
        // splitmix64 expansion of the seed into the xoshiro state
        uint64_t z = seed;
        for (auto& w : state_) {
            z += 0x9e3779b97f4a7c15ULL;
            uint64_t t = z;
            t = (t ^ (t >> 30)) * 0xbf58476d1ce4e5b9ULL;
            t = (t ^ (t >> 27)) * 0x94d049bb133111ebULL;
            w = t ^ (t >> 31);
        }
        has_spare_ = false;
        spare_ = 0.0;
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform01() { return double(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n); unbiased via rejection. n must be >= 1.
    uint64_t uniform_int(uint64_t n) {
        if (n == 0) throw std::invalid_argument("uniform_int: n must be >= 1");
        const uint64_t threshold = (0 - n) % n;  // 2^64 mod n
        for (;;) {
            const uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Standard Box-Muller normal with one cached spare.
    double normal(double mu = 0.0, double sigma = 1.0) {
        if (has_spare_) {
            has_spare_ = false;
            return mu + spare_ * sigma;
        }
        const double u1 = 1.0 - uniform01();  // avoid log(0)
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return mu + r * std::cos(theta) * sigma;
    }

    /// Normal truncated to |z| <= 2 before scaling by sigma.
    double truncated_normal(double sigma) {
        for (;;) {
            const double z = normal();
            if (std::fabs(z) <= 2.0) return z * sigma;
        }
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = size_t(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // State introspection for bitwise-reproducible checkpoint resume.
    struct State {
        std::array<uint64_t, 4> s;
        bool has_spare;
        uint64_t spare_bits;  // bit_cast of the cached normal spare
    };

    State save_state() const {
        State st;
        st.s = state_;
        st.has_spare = has_spare_;
        uint64_t bits;
        static_assert(sizeof(bits) == sizeof(spare_));
        __builtin_memcpy(&bits, &spare_, sizeof(bits));
        st.spare_bits = bits;
        return st;
    }

    void load_state(const State& st) {
        state_ = st.s;
        has_spare_ = st.has_spare;
        __builtin_memcpy(&spare_, &st.spare_bits, sizeof(spare_));
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::array<uint64_t, 4> state_{};
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace sar
