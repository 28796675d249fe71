#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "probegen/common.hpp"

namespace probegen {

// splitmix64, used to expand seeds into xoshiro state words.
inline std::uint64_t splitmix64(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d49b5b26a99783ULL;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// xoshiro256++ generator. Every stochastic component owns a named substream
// derived from (seed, name), so modules never perturb each other's draws.
class Rng {
public:
    Rng() : Rng(0, "default") {}

    Rng(std::uint64_t seed, const std::string& name) {
        std::uint64_t x = seed ^ fnv1a64(name);
        for (auto& w : s_) w = splitmix64(x);
        bool all_zero = true;
        for (auto w : s_) all_zero &= (w == 0);
        if (all_zero) s_[0] = 1;
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform double in [0, 1).
    double uniform() { return (next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased integer in [0, n) via rejection.
    std::uint64_t uniform_int(std::uint64_t n) {
        check_domain(n > 0, "uniform_int: n must be positive");
        const std::uint64_t limit = ~std::uint64_t(0) - (~std::uint64_t(0) % n);
        std::uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return v % n;
    }

    // Box-Muller without a cached spare, so state is exactly the four words.
    double normal() {
        double u1 = 1.0 - uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Knuth's product method, splitting large means to keep the products stable.
    std::uint64_t poisson(double lambda) {
        check_domain(lambda >= 0.0 && std::isfinite(lambda), "poisson: lambda must be finite and >= 0");
        std::uint64_t total = 0;
        while (lambda > 30.0) {
            total += poisson_small(30.0);
            lambda -= 30.0;
        }
        return total + poisson_small(lambda);
    }

    // Index drawn from unnormalized non-negative weights.
    std::size_t categorical(const std::vector<double>& weights) {
        check_domain(!weights.empty(), "categorical: empty weights");
        double total = 0.0;
        for (double w : weights) {
            check_domain(w >= 0.0 && std::isfinite(w), "categorical: weights must be finite and >= 0");
            total += w;
        }
        check_domain(total > 0.0, "categorical: weights sum to zero");
        double u = uniform() * total;
        double acc = 0.0;
        for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
            acc += weights[i];
            if (u < acc) return i;
        }
        return weights.size() - 1;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = uniform_int(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    std::array<std::uint64_t, 4> state() const { return s_; }
    void set_state(const std::array<std::uint64_t, 4>& s) { s_ = s; }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t poisson_small(double lambda) {
        if (lambda <= 0.0) return 0;
        const double l = std::exp(-lambda);
        std::uint64_t k = 0;
        double p = 1.0;
        do {
            ++k;
            p *= uniform();
        } while (p > l);
        return k - 1;
    }

    std::array<std::uint64_t, 4> s_{};
};

} // namespace probegen
