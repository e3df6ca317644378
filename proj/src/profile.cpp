#include "treep/profile.hpp"

#include <algorithm>
#include <cmath>

#include "treep/rng.hpp"

namespace treep {

double capacity_score(const NodeProfile& p, double uptime_cap) {
    const double up = uptime_cap > 0.0 ? std::min(p.uptime / uptime_cap, 1.0) : 1.0;
    const double sum = p.cpu + p.memory + p.bandwidth + p.storage + up +
                       (1.0 - p.work_load) + (1.0 - p.network_load);
    return sum / 7.0;
}

SimTime det_jitter(std::uint64_t seed, Pos id, std::uint64_t salt, SimTime span) {
    if (span == 0)
        return 0;
    return mix_seed(mix_seed(seed, id), salt) % span;
}

SimTime election_countdown_duration(double score, SimTime base, SimTime jitter) {
    const double s = std::clamp(score, 0.0, 1.0);
    return static_cast<SimTime>(std::llround(static_cast<double>(base) * (1.0 - s))) + jitter;
}

SimTime demotion_countdown_duration(double score, SimTime base, SimTime jitter) {
    const double s = std::clamp(score, 0.0, 1.0);
    return static_cast<SimTime>(std::llround(static_cast<double>(base) * s)) + jitter;
}

int variable_nc(double score) {
    const int raw = static_cast<int>(std::lround(16.0 * std::clamp(score, 0.0, 1.0)));
    return std::clamp(raw, 2, 16);
}

} // namespace treep
