#include "treep/idspace.hpp"

#include <limits>
#include <stdexcept>

namespace treep {

bool is_power_of_two(Pos v) {
    return v != 0 && (v & (v - 1)) == 0;
}

Dist distance_d(Pos a, Pos b) {
    return a > b ? a - b : b - a;
}

Dist distance_D(Pos a, int lvl_a, Pos b, int height, Pos space) {
    if (lvl_a < 0 || height < 0 || lvl_a > height)
        throw std::invalid_argument("distance_D: level outside [0, height]");
    if (!is_power_of_two(space))
        throw std::invalid_argument("distance_D: space extent must be a power of two");

    const Dist d = distance_d(a, b);
    if (lvl_a == 0)
        return d;

    const int shift = height - lvl_a;
    if (shift >= 64)
        return d; // subtrahend underflows to nothing meaningful; treat as 0
    const Dist radius = space >> shift;
    return d > radius ? d - radius : 0;
}

int height_bound(std::uint64_t n, std::uint64_t t) {
    if (n < 1)
        throw std::invalid_argument("height_bound: n must be >= 1");
    if (t < 2)
        throw std::invalid_argument("height_bound: minimum degree t must be >= 2");

    // largest h with 2*t^h - 1 <= n
    int h = 0;
    std::uint64_t pow = 1;
    const std::uint64_t limit = (n + 1) / 2; // t^h <= (n+1)/2
    while (pow <= limit / t)
        pow *= t, ++h;
    if (pow * t <= limit)
        ++h;
    return h;
}

bool tessellation_contains(const Tessellation& t, Pos p) {
    return t.contains(p);
}

int expected_table_size_level0(int l0, int h) {
    if (l0 < 2)
        throw std::invalid_argument("expected_table_size_level0: l0 must be >= 2");
    if (h < 0)
        throw std::invalid_argument("expected_table_size_level0: h must be >= 0");
    return l0 + h;
}

int expected_table_size(const TableSizeInputs& in) {
    if (in.l0 < 2)
        throw std::invalid_argument("expected_table_size: l0 must be >= 2");
    if (in.li < 0 || in.li > 2)
        throw std::invalid_argument("expected_table_size: li outside [0, 2]");
    if (in.da < 0 || in.da > 2)
        throw std::invalid_argument("expected_table_size: da outside [0, 2]");
    if (in.Li < 0 || in.ci < 0 || in.ca < 0)
        throw std::invalid_argument("expected_table_size: negative entry count");
    if (in.i < 1 || in.i > in.h)
        throw std::invalid_argument("expected_table_size: level i outside [1, h]");
    return in.l0 + in.li + in.Li + in.ci + in.ca + in.da + in.h - in.i;
}

int active_connection_count(int lvl, int l0, int ca, int da) {
    if (lvl == 0)
        return l0 + 1;
    if (lvl == 1)
        return l0 + ca + da;
    return l0 + ca + da + 2;
}

} // namespace treep
