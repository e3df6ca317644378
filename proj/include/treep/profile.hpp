#ifndef TREEP_PROFILE_HPP
#define TREEP_PROFILE_HPP

#include <cstdint>

#include "treep/idspace.hpp"

namespace treep {

// Simulation time in milli-units: 1000 = one simulated time unit.
using SimTime = std::uint64_t;

inline constexpr SimTime kTimeUnit = 1000;

// Synthetic resource characteristics of a peer. Rates are normalized to
// [0,1]; uptime is in simulation-time units and is capped by the harness
// when folded into the capacity score.
struct NodeProfile {
    double cpu = 0.0;
    double memory = 0.0;
    double bandwidth = 0.0;
    double storage = 0.0;
    double uptime = 0.0;
    double work_load = 0.0;
    double network_load = 0.0;
};

// Mean of {cpu, memory, bandwidth, storage, min(uptime/uptime_cap, 1),
// 1 - work_load, 1 - network_load}. Deterministic; result in [0,1].
double capacity_score(const NodeProfile& p, double uptime_cap);

// Deterministic per-node jitter in [0, span), keyed by (seed, id, salt).
SimTime det_jitter(std::uint64_t seed, Pos id, std::uint64_t salt, SimTime span);

// Election countdown: base * (1 - score) + jitter. Strictly decreasing in
// score before jitter: better nodes claim parenthood sooner.
SimTime election_countdown_duration(double score, SimTime base, SimTime jitter);

// Demotion countdown: base * score + jitter. Better nodes linger longer
// before dropping out of their level.
SimTime demotion_countdown_duration(double score, SimTime base, SimTime jitter);

// Capability-derived maximum child count: clamp(2, 16, round(16 * score)).
int variable_nc(double score);

} // namespace treep

#endif
