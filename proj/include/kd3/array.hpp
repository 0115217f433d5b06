#pragma once

// Dense row-major arrays and the project-wide deterministic RNG.
//
// The RNG is xoshiro256** seeded through splitmix64. State layout is the
// four 64-bit words of xoshiro256**; identical seeds and call sequences
// give identical streams on every platform.

#include <array>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace kd3 {

struct DenseArray {
    std::vector<std::size_t> shape;
    std::vector<double> values;

    DenseArray() = default;
    DenseArray(std::vector<std::size_t> shape_, std::vector<double> values_)
        : shape(std::move(shape_)), values(std::move(values_)) {
        if (values.size() != element_count(shape))
            throw std::invalid_argument("DenseArray: values length " +
                                        std::to_string(values.size()) +
                                        " does not match shape product " +
                                        std::to_string(element_count(shape)));
    }

    static std::size_t element_count(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t d : s) n *= d;
        return n;
    }

    static DenseArray vector(std::vector<double> v) {
        std::size_t n = v.size();
        return DenseArray({n}, std::move(v));
    }

    static DenseArray zeros(std::vector<std::size_t> shape_) {
        std::size_t n = element_count(shape_);
        return DenseArray(std::move(shape_), std::vector<double>(n, 0.0));
    }

    std::size_t size() const { return values.size(); }
    double& operator[](std::size_t i) { return values[i]; }
    double operator[](std::size_t i) const { return values[i]; }

    bool same_shape(const DenseArray& o) const { return shape == o.shape; }
};

// Throws naming the first non-finite element.
inline void check_finite(const DenseArray& a, const char* what) {
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        if (!std::isfinite(a.values[i]))
            throw std::invalid_argument(std::string(what) +
                                        ": non-finite value at flat index " +
                                        std::to_string(i));
    }
}

inline std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : seed_(seed) {
        std::uint64_t sm = seed;
        for (auto& w : state_) w = splitmix64(sm);
    }

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, n) via bitmask rejection.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
        if (n == 1) return 0;
        std::uint64_t mask = ~0ULL >> std::countl_zero(n - 1);
        for (;;) {
            std::uint64_t v = next_u64() & mask;
            if (v < n) return v;
        }
    }

    // Standard normal via Box-Muller; consumes exactly two uniforms per call.
    double normal() {
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // Derived generator for an independent substream.
    Rng split(std::uint64_t stream) const {
        std::uint64_t x = seed_ ^ (0xd1b54a32d192ed03ULL * (stream + 1));
        return Rng(splitmix64(x));
    }

  private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t seed_;
    std::array<std::uint64_t, 4> state_;
};

}  // namespace kd3
