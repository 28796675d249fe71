#include <catch2/catch_amalgamated.hpp>

#include "probegen/geo.hpp"
#include "probegen/rng.hpp"

using namespace probegen;

TEST_CASE("geo: known tile coordinates") {
    auto origin = lonlat_to_tile({0.0, 0.0}, 24);
    REQUIRE(origin.x == 8388608);
    REQUIRE(origin.y == 8388608);

    auto west = lonlat_to_tile({-180.0, 0.0}, 1);
    REQUIRE(west.x == 0);
    REQUIRE(west.y == 1);

    auto mid = lonlat_to_tile({45.0, 45.0}, 2);
    REQUIRE(mid.x == 2);
    REQUIRE(mid.y == 1);
}

TEST_CASE("geo: zoom z and z+1 nest as a quadtree") {
    Rng r(101, "geo");
    for (int trial = 0; trial < 500; ++trial) {
        GeoPoint p{r.uniform(-180.0, 180.0), r.uniform(-84.0, 84.0)};
        int z = static_cast<int>(r.uniform_int(24));
        auto parent = lonlat_to_tile(p, z);
        auto child = lonlat_to_tile(p, z + 1);
        REQUIRE(child.x / 2 == parent.x);
        REQUIRE(child.y / 2 == parent.y);
    }
}

TEST_CASE("geo: longitude wraps") {
    auto a = lonlat_to_tile({190.0, 10.0}, 8);
    auto b = lonlat_to_tile({-170.0, 10.0}, 8);
    REQUIRE(a == b);
    REQUIRE(normalize_lon(180.0) == -180.0);
    REQUIRE(normalize_lon(-180.0) == -180.0);
    REQUIRE(normalize_lon(540.0) == -180.0);
}

TEST_CASE("geo: domain errors") {
    REQUIRE_THROWS_AS(lonlat_to_tile({0.0, 86.0}, 10), DomainError);
    REQUIRE_THROWS_AS(lonlat_to_tile({0.0, -86.0}, 10), DomainError);
    REQUIRE_THROWS_AS(lonlat_to_tile({0.0, 0.0}, 25), DomainError);
    REQUIRE_THROWS_AS(lonlat_to_tile({0.0, 0.0}, -1), DomainError);
}

TEST_CASE("geo: tile_to_lonlat inverts lonlat_to_tile at pixel centers") {
    Rng r(19, "geo2");
    for (int trial = 0; trial < 300; ++trial) {
        std::uint64_t x = r.uniform_int(1 << 20);
        std::uint64_t y = (1 << 19) + r.uniform_int(1 << 18);
        GeoPoint p = tile_to_lonlat(static_cast<double>(x) + 0.5,
                                    static_cast<double>(y) + 0.5, 20);
        auto t = lonlat_to_tile(p, 20);
        REQUIRE(t.x == x);
        REQUIRE(t.y == y);
    }
}

TEST_CASE("geo: heading buckets") {
    REQUIRE(heading_to_bucket(0.0) == 0);
    REQUIRE(heading_to_bucket(29.999) == 0);
    REQUIRE(heading_to_bucket(30.0) == 1);
    REQUIRE(heading_to_bucket(95.0) == 3);
    REQUIRE(heading_to_bucket(359.999) == 11);
    REQUIRE(heading_to_bucket(360.0) == 0);
    REQUIRE(heading_to_bucket(-30.0) == 11);
    REQUIRE(heading_to_bucket(-0.0001) == 11);
    REQUIRE(heading_to_bucket(725.0) == 0);
    REQUIRE_THROWS_AS(heading_to_bucket(std::nan("")), DomainError);

    Rng r(23, "hb");
    for (int i = 0; i < 2000; ++i) {
        int b = heading_to_bucket(r.uniform(-4000.0, 4000.0));
        REQUIRE(b >= 0);
        REQUIRE(b <= 11);
    }
}

TEST_CASE("geo: compass bearing of pixel deltas") {
    REQUIRE(bearing_of_delta(0.0, -1.0) == Catch::Approx(0.0));
    REQUIRE(bearing_of_delta(1.0, 0.0) == Catch::Approx(90.0));
    REQUIRE(bearing_of_delta(0.0, 1.0) == Catch::Approx(180.0));
    REQUIRE(bearing_of_delta(-1.0, 0.0) == Catch::Approx(270.0));
    REQUIRE(bearing_of_delta(1.0, -1.0) == Catch::Approx(45.0));
}
