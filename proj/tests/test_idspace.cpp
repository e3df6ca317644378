#include "doctest.h"

#include <cmath>
#include <stdexcept>

#include "treep/idspace.hpp"
#include "treep/rng.hpp"

using namespace treep;

// =============================================================================
// Euclidean distance d
// =============================================================================

TEST_CASE("distance_d: identity, symmetry, endpoints") {
    CHECK(distance_d(5, 5) == 0);
    CHECK(distance_d(10, 3) == 7);
    CHECK(distance_d(3, 10) == 7);
    // linear space: the extremes are a full extent apart, no wraparound
    CHECK(distance_d(0, kDefaultSpace - 1) == kDefaultSpace - 1);
}

TEST_CASE("distance_d is a metric on random triples") {
    Rng rng(42);
    for (int i = 0; i < 2000; ++i) {
        Pos a = rng.next_below(kDefaultSpace);
        Pos b = rng.next_below(kDefaultSpace);
        Pos c = rng.next_below(kDefaultSpace);
        CHECK(distance_d(a, b) == distance_d(b, a));
        CHECK((distance_d(a, b) == 0) == (a == b));
        CHECK(distance_d(a, c) <= distance_d(a, b) + distance_d(b, c));
    }
}

// =============================================================================
// Hierarchical distance D
// =============================================================================

TEST_CASE("distance_D: level 0 degenerates to d") {
    CHECK(distance_D(100, 0, 400, 6, 1024) == 300);
}

TEST_CASE("distance_D: direct formula evaluation") {
    // L=1024, h=6, lvl=2: subtrahend 1024 / 2^4 = 64
    CHECK(distance_D(0, 2, 300, 6, 1024) == 236);
    CHECK(distance_D(0, 2, 50, 6, 1024) == 0); // clipped at zero
    // lvl = h: subtrahend equals the whole extent
    CHECK(distance_D(0, 6, 1000, 6, 1024) == 0);
    CHECK(distance_D(0, 6, 1023, 6, 1024) == 0);
}

TEST_CASE("distance_D: contract violations") {
    CHECK_THROWS_AS(distance_D(0, 7, 10, 6, 1024), std::invalid_argument);
    CHECK_THROWS_AS(distance_D(0, -1, 10, 6, 1024), std::invalid_argument);
    CHECK_THROWS_AS(distance_D(0, 1, 10, 6, 1000), std::invalid_argument); // not a power of two
}

TEST_CASE("distance_D properties over random inputs") {
    Rng rng(7);
    for (int i = 0; i < 2000; ++i) {
        Pos a = rng.next_below(1024);
        Pos b = rng.next_below(1024);
        int h = 1 + static_cast<int>(rng.next_below(8));
        int lvl = static_cast<int>(rng.next_below(h + 1));
        Dist D = distance_D(a, lvl, b, h, 1024);
        // never exceeds d; equals d at level 0
        CHECK(D <= distance_d(a, b));
        if (lvl == 0)
            CHECK(D == distance_d(a, b));
        // non-increasing in the level
        if (lvl + 1 <= h)
            CHECK(distance_D(a, lvl + 1, b, h, 1024) <= D);
    }
}

// =============================================================================
// Height bound
// =============================================================================

namespace {

// brute-force oracle: largest h with 2*t^h - 1 <= n
int height_oracle(std::uint64_t n, std::uint64_t t) {
    int h = 0;
    while (true) {
        // compute 2*t^(h+1) - 1 without overflow for the tested range
        std::uint64_t pw = 1;
        for (int i = 0; i < h + 1; ++i)
            pw *= t;
        if (2 * pw - 1 <= n)
            ++h;
        else
            break;
    }
    return h;
}

} // namespace

TEST_CASE("height_bound: stated examples") {
    CHECK(height_bound(1, 2) == 0);
    CHECK(height_bound(127, 2) == 6);
    // n = 2*4^6 - 1: the smallest n reaching height 6 at c = 4
    CHECK(height_bound(8191, 4) == 6);
}

TEST_CASE("height_bound equals the integer oracle") {
    Rng rng(3);
    for (int i = 0; i < 500; ++i) {
        std::uint64_t n = 1 + rng.next_below(1000000);
        std::uint64_t t = 2 + rng.next_below(7);
        CHECK(height_bound(n, t) == height_oracle(n, t));
    }
}

TEST_CASE("height_bound: contract violations") {
    CHECK_THROWS_AS(height_bound(0, 2), std::invalid_argument);
    CHECK_THROWS_AS(height_bound(10, 1), std::invalid_argument);
}

// =============================================================================
// Tessellations
// =============================================================================

TEST_CASE("tessellation_contains: half-open interval") {
    Tessellation t{10, 1, 0, 64};
    CHECK(tessellation_contains(t, 63));
    CHECK_FALSE(tessellation_contains(t, 64));
    CHECK(tessellation_contains(t, 0));
}

// =============================================================================
// Table-size and connection-count expressions
// =============================================================================

TEST_CASE("expected_table_size: stated examples") {
    CHECK(expected_table_size_level0(2, 6) == 8);
    TableSizeInputs in;
    in.l0 = 2;
    in.li = 2;
    in.Li = 3;
    in.ci = 4;
    in.ca = 4;
    in.da = 2;
    in.h = 6;
    in.i = 2;
    CHECK(expected_table_size(in) == 21);
}

TEST_CASE("expected_table_size: bound violations") {
    TableSizeInputs in;
    in.l0 = 1; // below the minimum of two connections
    in.h = 6;
    in.i = 1;
    CHECK_THROWS_AS(expected_table_size(in), std::invalid_argument);
    in.l0 = 2;
    in.li = 3;
    CHECK_THROWS_AS(expected_table_size(in), std::invalid_argument);
    in.li = 0;
    in.da = 3;
    CHECK_THROWS_AS(expected_table_size(in), std::invalid_argument);
    in.da = 0;
    in.i = 7; // above h
    CHECK_THROWS_AS(expected_table_size(in), std::invalid_argument);
}

TEST_CASE("active_connection_count per level") {
    CHECK(active_connection_count(0, 2, 0, 0) == 3);     // l0 + 1
    CHECK(active_connection_count(1, 2, 4, 2) == 8);     // l0 + ca + da
    CHECK(active_connection_count(3, 2, 4, 2) == 10);    // l0 + ca + da + 2
}
