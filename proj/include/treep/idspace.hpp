#ifndef TREEP_IDSPACE_HPP
#define TREEP_IDSPACE_HPP

#include <cstdint>

namespace treep {

// Node identifier doubling as a coordinate in the linear ID space [0, L).
// The space is a line, not a ring: the two extreme IDs have no wraparound
// neighbour.
using Pos = std::uint64_t;
using Dist = std::uint64_t;

inline constexpr Pos kDefaultSpace = Pos{1} << 20;

bool is_power_of_two(Pos v);

// Euclidean distance |a - b|.
Dist distance_d(Pos a, Pos b);

// Hierarchical distance: d(a,b) minus the tessellation-radius term of the
// sender's level, clipped at zero. lvl_a = 0 degenerates to plain d.
// Throws std::invalid_argument when lvl_a is outside [0, height] or space
// is not a power of two.
Dist distance_D(Pos a, int lvl_a, Pos b, int height, Pos space);

// Largest h with 2*t^h - 1 <= n, i.e. floor(log_t((n+1)/2)). Exact integer
// arithmetic. Throws when n < 1 or t < 2.
int height_bound(std::uint64_t n, std::uint64_t t);

// The contiguous ID interval [lo, hi) a level >= 1 node is responsible for.
struct Tessellation {
    Pos owner = 0;
    int level = 1;
    Pos lo = 0;
    Pos hi = 0;

    bool contains(Pos p) const { return lo <= p && p < hi; }
};

bool tessellation_contains(const Tessellation& t, Pos p);

// Per-node inputs of the closed-form routing-table-size expression for a
// node elevated to level i:
//   l0  level-0 connections
//   li  indirect (two-away) same-level bus entries
//   Li  same-level entries gathered through level-0 connections
//   ci  children of the direct same-level neighbours
//   ca  own children
//   da  direct same-level bus neighbours
struct TableSizeInputs {
    int l0 = 0;
    int li = 0;
    int Li = 0;
    int ci = 0;
    int ca = 0;
    int da = 0;
    int h = 0;
    int i = 0;
};

// Size for a node that lives only at level 0: l0 + h.
int expected_table_size_level0(int l0, int h);

// Size for a level-i node (i > 0): l0 + li + Li + ci + ca + da + h - i.
// Throws std::invalid_argument on out-of-bounds inputs.
int expected_table_size(const TableSizeInputs& in);

// Actively maintained connection count:
//   level 0     -> l0 + 1
//   level 1     -> l0 + ca + da
//   level i > 1 -> l0 + ca + da + 2
int active_connection_count(int lvl, int l0, int ca, int da);

struct StructuralParams {
    std::uint64_t n = 0;  // node count
    std::uint64_t t = 2;  // minimum degree
    double c = 0.0;       // average children per parent
    int h = 0;            // hierarchy height
    int nc = 0;           // maximum children per parent
};

} // namespace treep

#endif
