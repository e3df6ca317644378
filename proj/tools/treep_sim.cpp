// Experiment runner for the TreeP overlay simulator: builds a network to
// steady state, removes nodes in 5% bursts, measures lookup outcomes, and
// writes CSV summaries plus gnuplot-ready hop histograms.

#include <cstdlib>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "treep/experiment.hpp"

using namespace treep;

namespace {

bool parse_seed_range(const std::string& text, std::vector<std::uint64_t>& seeds) {
    auto dots = text.find("..");
    if (dots == std::string::npos)
        return false;
    try {
        std::uint64_t a = std::stoull(text.substr(0, dots));
        std::uint64_t b = std::stoull(text.substr(dots + 2));
        if (b < a)
            return false;
        for (std::uint64_t s = a; s <= b; ++s)
            seeds.push_back(s);
        return true;
    } catch (...) {
        return false;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"TreeP hierarchical P2P overlay simulator"};

    ExperimentSpec spec;
    SimConfig& cfg = spec.base;

    std::string nc_text = "4";
    std::string algo_text = "g";
    std::string emit_text = "both";
    std::string seeds_text;
    std::uint64_t seed = 0;
    bool seed_given = false;

    app.add_option("--nodes", cfg.n, "initial node count")->capture_default_str();
    app.add_option("--space", cfg.space, "ID space extent (power of two)")
        ->capture_default_str();
    app.add_option("--nc", nc_text, "max children per parent: integer or 'variable'")
        ->capture_default_str();
    app.add_option("--height", cfg.target_height, "target hierarchy height label")
        ->capture_default_str();
    app.add_option("--algo", algo_text, "lookup algorithm: g, ng or ngsa")
        ->capture_default_str();
    auto* seed_opt = app.add_option("--seed", seed, "simulation seed");
    app.add_option("--seeds", seeds_text, "seed range a..b (sweep mode)");
    app.add_option("--failure-step", cfg.failure_step, "fraction removed per step")
        ->capture_default_str();
    app.add_option("--failure-floor", cfg.failure_floor, "stop when live <= floor * n")
        ->capture_default_str();
    app.add_option("--lookups", cfg.lookups_per_step, "lookups per failure step")
        ->capture_default_str();
    std::string out_path = "treep_run";
    app.add_option("--out", out_path, "output path stem")->capture_default_str();
    app.add_option("--emit", emit_text, "summary, hist or both")->capture_default_str();
    app.set_config("--config", "", "key=value config file mirroring the flags");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    seed_given = seed_opt->count() > 0;

    if (nc_text == "variable") {
        cfg.nc_policy = NcPolicy::Variable;
    } else {
        cfg.nc_policy = NcPolicy::Fixed;
        try {
            cfg.nc_fixed = std::stoi(nc_text);
        } catch (...) {
            std::cerr << "invalid --nc value: " << nc_text << "\n";
            return 1;
        }
        if (cfg.nc_fixed < 2) {
            std::cerr << "--nc must be >= 2\n";
            return 1;
        }
    }

    if (algo_text == "g")
        cfg.algo = Algo::Greedy;
    else if (algo_text == "ng")
        cfg.algo = Algo::NG;
    else if (algo_text == "ngsa")
        cfg.algo = Algo::NGSA;
    else {
        std::cerr << "invalid --algo value: " << algo_text << " (expected g, ng or ngsa)\n";
        return 1;
    }

    if (emit_text == "summary")
        spec.emit = EmitMode::Summary;
    else if (emit_text == "hist")
        spec.emit = EmitMode::Histogram;
    else if (emit_text == "both")
        spec.emit = EmitMode::Both;
    else {
        std::cerr << "invalid --emit value: " << emit_text << "\n";
        return 1;
    }

    if (!is_power_of_two(cfg.space)) {
        std::cerr << "--space must be a power of two\n";
        return 1;
    }
    if (cfg.failure_step <= 0.0 || cfg.failure_step >= 1.0 || cfg.failure_floor >= 1.0) {
        std::cerr << "--failure-step must be in (0,1) and --failure-floor below 1\n";
        return 1;
    }

    if (!seeds_text.empty()) {
        spec.sweep = true;
        if (!parse_seed_range(seeds_text, spec.seeds)) {
            std::cerr << "invalid --seeds range: " << seeds_text << " (expected a..b)\n";
            return 1;
        }
    } else if (seed_given) {
        spec.seeds.push_back(seed);
    } else if (const char* env = std::getenv("TREEP_SEED")) {
        try {
            spec.seeds.push_back(std::stoull(env));
        } catch (...) {
            std::cerr << "invalid TREEP_SEED value: " << env << "\n";
            return 1;
        }
    } else {
        spec.seeds.push_back(1);
    }

    spec.out_path = out_path;

    std::string error;
    int rc = run_experiment(spec, error);
    if (rc == 2)
        std::cerr << error << "\n";
    else if (rc == 3)
        std::cerr << "warning: at least one seed did not reach steady state\n";
    return rc;
}
