#include "treep/rng.hpp"

#include <cmath>

namespace treep {

double Rng::next_exponential(double mean) {
    // inverse CDF on a (0,1] uniform so log() never sees zero
    double u = 1.0 - next_double();
    return -mean * std::log(u);
}

} // namespace treep
