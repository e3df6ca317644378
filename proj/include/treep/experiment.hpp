#ifndef TREEP_EXPERIMENT_HPP
#define TREEP_EXPERIMENT_HPP

#include <string>
#include <vector>

#include "treep/simnet.hpp"

namespace treep {

enum class EmitMode : std::uint8_t { Summary, Histogram, Both };

struct ExperimentSpec {
    bool sweep = false; // multiple seeds
    SimConfig base;
    std::vector<std::uint64_t> seeds; // non-empty
    std::string out_path;             // stem; files get .summary.csv / .hist.csv / .agg.csv
    EmitMode emit = EmitMode::Both;
};

struct SweepRow {
    std::uint64_t seed = 0;
    int step = 0;
    SimMetricsRow row;
};

struct SweepOutcome {
    std::vector<SweepRow> rows;
    bool converged = true;
};

// build -> steady -> loop { measure, fail 5%, settle } until the floor
SweepOutcome run_sweep(const SimConfig& cfg);

// locale-free fixed formatting with 4 fractional digits
std::string format_fixed(double v);

std::string summary_csv(const ExperimentSpec& spec, const std::vector<SweepRow>& rows);
std::string histogram_csv(const ExperimentSpec& spec, const std::vector<SweepRow>& rows);
std::string aggregate_csv(const ExperimentSpec& spec, const std::vector<SweepRow>& rows);

// exit codes: 0 ok, 2 I/O failure, 3 non-convergence
int run_experiment(const ExperimentSpec& spec, std::string& error);

} // namespace treep

#endif
