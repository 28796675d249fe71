#include <catch2/catch_amalgamated.hpp>

#include "probegen/rng.hpp"

#include <cmath>
#include <vector>

using namespace probegen;

TEST_CASE("rng: identical seed and name give identical sequences") {
    Rng a(42, "data");
    Rng b(42, "data");
    for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());
}

TEST_CASE("rng: different names give different streams") {
    Rng a(42, "data");
    Rng b(42, "training");
    int same = 0;
    for (int i = 0; i < 64; ++i) same += a.next_u64() == b.next_u64();
    REQUIRE(same == 0);
}

TEST_CASE("rng: state roundtrip resumes the sequence bitwise") {
    Rng a(7, "sampling");
    for (int i = 0; i < 10; ++i) a.next_u64();
    auto st = a.state();
    std::vector<std::uint64_t> expect;
    for (int i = 0; i < 20; ++i) expect.push_back(a.next_u64());
    Rng b;
    b.set_state(st);
    for (int i = 0; i < 20; ++i) REQUIRE(b.next_u64() == expect[static_cast<std::size_t>(i)]);
}

TEST_CASE("rng: uniform lies in [0,1) and covers the range") {
    Rng r(1, "u");
    double lo = 1.0, hi = 0.0;
    for (int i = 0; i < 10000; ++i) {
        double v = r.uniform();
        REQUIRE(v >= 0.0);
        REQUIRE(v < 1.0);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    REQUIRE(lo < 0.01);
    REQUIRE(hi > 0.99);
}

TEST_CASE("rng: uniform_int is unbiased enough and in range") {
    Rng r(3, "ui");
    std::vector<int> hist(7, 0);
    for (int i = 0; i < 70000; ++i) {
        auto v = r.uniform_int(7);
        REQUIRE(v < 7);
        ++hist[static_cast<std::size_t>(v)];
    }
    for (int h : hist) {
        REQUIRE(h > 9000);
        REQUIRE(h < 11000);
    }
}

TEST_CASE("rng: normal has roughly standard moments") {
    Rng r(5, "n");
    const int n = 200000;
    double s1 = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        double v = r.normal();
        s1 += v;
        s2 += v * v;
    }
    double mean = s1 / n;
    double var = s2 / n - mean * mean;
    REQUIRE(std::abs(mean) < 0.02);
    REQUIRE(std::abs(var - 1.0) < 0.03);
}

TEST_CASE("rng: poisson matches its mean, including the large-mean split") {
    Rng r(9, "p");
    for (double lambda : {0.5, 4.0, 75.0}) {
        const int n = 20000;
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += static_cast<double>(r.poisson(lambda));
        double mean = s / n;
        REQUIRE(std::abs(mean - lambda) < 0.05 * std::max(1.0, lambda));
    }
    REQUIRE(r.poisson(0.0) == 0);
    REQUIRE_THROWS_AS(r.poisson(-1.0), DomainError);
}

TEST_CASE("rng: categorical respects weights and rejects bad input") {
    Rng r(11, "c");
    std::vector<double> w{1.0, 0.0, 3.0};
    std::vector<int> hist(3, 0);
    for (int i = 0; i < 40000; ++i) ++hist[r.categorical(w)];
    REQUIRE(hist[1] == 0);
    REQUIRE(std::abs(hist[0] / 40000.0 - 0.25) < 0.02);
    REQUIRE_THROWS_AS(r.categorical({}), DomainError);
    REQUIRE_THROWS_AS(r.categorical({0.0, 0.0}), DomainError);
    REQUIRE_THROWS_AS(r.categorical({1.0, -1.0}), DomainError);
}

TEST_CASE("rng: shuffle is a seeded permutation") {
    std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7};
    Rng a(13, "s");
    Rng b(13, "s");
    auto va = v;
    auto vb = v;
    a.shuffle(va);
    b.shuffle(vb);
    REQUIRE(va == vb);
    std::vector<int> sorted = va;
    std::sort(sorted.begin(), sorted.end());
    REQUIRE(sorted == v);
}
