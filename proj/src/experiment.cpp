#include "treep/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

namespace treep {

SweepOutcome run_sweep(const SimConfig& cfg) {
    SweepOutcome out;
    Simulation sim = Simulation::build(cfg);
    if (!sim.converged()) {
        out.converged = false;
        return out;
    }
    int step = 0;
    while (true) {
        auto pairs = sim.draw_pairs(cfg.lookups_per_step);
        auto results = sim.run_batch(cfg.algo, pairs);
        out.rows.push_back({cfg.seed, step, sim.collect_metrics(results)});
        if (!sim.can_inject_failure())
            break;
        sim.inject_failure_step();
        sim.settle(cfg.settle_window);
        ++step;
    }
    return out;
}

std::string format_fixed(double v) {
    bool neg = v < 0;
    double a = neg ? -v : v;
    long long scaled = static_cast<long long>(std::llround(a * 10000.0));
    long long ip = scaled / 10000;
    long long fp = scaled % 10000;
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%s%lld.%04lld", neg ? "-" : "", ip, fp);
    return buf;
}

std::string summary_csv(const ExperimentSpec& spec, const std::vector<SweepRow>& rows) {
    std::string out = "failure_fraction,algo,nc_policy,seed,lookups_issued,failed_pct,"
                      "routing_fail_pct,partition_fail_pct,hop_min,hop_avg,hop_max,"
                      "component_count\n";
    for (const auto& r : rows) {
        const SimMetricsRow& m = r.row;
        double rf = m.lookups_issued ? 100.0 * m.routing_failures / m.lookups_issued : 0.0;
        double pf = m.lookups_issued ? 100.0 * m.partition_failures / m.lookups_issued : 0.0;
        out += format_fixed(m.failure_fraction);
        out += ',';
        out += algo_name(spec.base.algo);
        out += ',';
        out += nc_policy_name(spec.base.nc_policy);
        out += ',';
        out += std::to_string(r.seed);
        out += ',';
        out += std::to_string(m.lookups_issued);
        out += ',';
        out += format_fixed(m.failed_pct);
        out += ',';
        out += format_fixed(rf);
        out += ',';
        out += format_fixed(pf);
        out += ',';
        out += std::to_string(m.hop_min);
        out += ',';
        out += format_fixed(m.hop_avg);
        out += ',';
        out += std::to_string(m.hop_max);
        out += ',';
        out += std::to_string(m.component_count);
        out += '\n';
    }
    return out;
}

std::string histogram_csv(const ExperimentSpec& spec, const std::vector<SweepRow>& rows) {
    (void)spec;
    std::string out = "failure_fraction";
    for (int h = 0; h <= 30; ++h)
        out += ",h" + std::to_string(h);
    out += '\n';

    // one row per failure fraction; cells are the percentage of issued
    // requests resolved at that hop count, averaged across seeds
    std::map<int, std::pair<std::array<double, 31>, int>> agg; // step -> (sums, seeds)
    std::map<int, double> fraction_of;
    for (const auto& r : rows) {
        auto& [sums, cnt] = agg[r.step];
        if (r.row.lookups_issued > 0)
            for (int h = 0; h <= 30; ++h)
                sums[h] += 100.0 * r.row.hop_histogram[h] / r.row.lookups_issued;
        cnt += 1;
        fraction_of[r.step] = r.row.failure_fraction;
    }
    for (const auto& [step, data] : agg) {
        out += format_fixed(fraction_of[step]);
        for (int h = 0; h <= 30; ++h)
            out += ',' + format_fixed(data.second ? data.first[h] / data.second : 0.0);
        out += '\n';
    }
    return out;
}

std::string aggregate_csv(const ExperimentSpec& spec, const std::vector<SweepRow>& rows) {
    std::string out = "failure_fraction,algo,nc_policy,seeds,mean_failed_pct,min_failed_pct,"
                      "max_failed_pct,mean_hop_avg\n";
    std::map<int, std::vector<const SweepRow*>> by_step;
    for (const auto& r : rows)
        by_step[r.step].push_back(&r);
    for (const auto& [step, group] : by_step) {
        (void)step;
        double sum = 0, lo = 1e18, hi = -1e18, hops = 0;
        for (const SweepRow* r : group) {
            sum += r->row.failed_pct;
            lo = std::min(lo, r->row.failed_pct);
            hi = std::max(hi, r->row.failed_pct);
            hops += r->row.hop_avg;
        }
        const auto nsz = static_cast<double>(group.size());
        out += format_fixed(group.front()->row.failure_fraction);
        out += ',';
        out += algo_name(spec.base.algo);
        out += ',';
        out += nc_policy_name(spec.base.nc_policy);
        out += ',';
        out += std::to_string(group.size());
        out += ',';
        out += format_fixed(sum / nsz);
        out += ',';
        out += format_fixed(lo);
        out += ',';
        out += format_fixed(hi);
        out += ',';
        out += format_fixed(hops / nsz);
        out += '\n';
    }
    return out;
}

namespace {

bool write_file(const std::string& path, const std::string& content, std::string& error) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        error = "cannot open output file: " + path;
        return false;
    }
    f << content;
    if (!f) {
        error = "write failed: " + path;
        return false;
    }
    return true;
}

} // namespace

int run_experiment(const ExperimentSpec& spec, std::string& error) {
    std::vector<SweepRow> rows;
    bool all_converged = true;

    // seeds run sequentially; rows come out ordered by (seed, step)
    for (std::uint64_t seed : spec.seeds) {
        SimConfig cfg = spec.base;
        cfg.seed = seed;
        SweepOutcome sweep = run_sweep(cfg);
        if (!sweep.converged) {
            all_converged = false;
            continue;
        }
        rows.insert(rows.end(), sweep.rows.begin(), sweep.rows.end());
    }

    if (spec.emit == EmitMode::Summary || spec.emit == EmitMode::Both) {
        if (!write_file(spec.out_path + ".summary.csv", summary_csv(spec, rows), error))
            return 2;
    }
    if (spec.emit == EmitMode::Histogram || spec.emit == EmitMode::Both) {
        if (!write_file(spec.out_path + ".hist.csv", histogram_csv(spec, rows), error))
            return 2;
    }
    if (spec.sweep) {
        if (!write_file(spec.out_path + ".agg.csv", aggregate_csv(spec, rows), error))
            return 2;
    }
    return all_converged ? 0 : 3;
}

} // namespace treep
