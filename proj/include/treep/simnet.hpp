#ifndef TREEP_SIMNET_HPP
#define TREEP_SIMNET_HPP

#include <cstdint>
#include <queue>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "treep/idspace.hpp"
#include "treep/lookup.hpp"
#include "treep/protocol.hpp"
#include "treep/rng.hpp"

namespace treep {

enum class NcPolicy : std::uint8_t { Fixed, Variable };
enum class IdAssign : std::uint8_t { UniformRandom, HashedAddress };

struct SimConfig {
    std::uint64_t n = 8191;
    Pos space = kDefaultSpace;
    NcPolicy nc_policy = NcPolicy::Fixed;
    int nc_fixed = 4;
    int target_height = 6; // informational label for the experiment
    Algo algo = Algo::Greedy;
    std::uint64_t seed = 1;
    double failure_step = 0.05;
    double failure_floor = 0.05;
    int lookups_per_step = 1000;

    // timing, in simulation-time units
    double t_elect_base = 10.0;
    double t_demote_base = 30.0;
    double keepalive_interval = 5.0;
    double entry_ttl = 15.0; // 3 x keepalive
    double settle_window = 20.0;
    double quiet_window = 50.0; // 10 x keepalive
    double join_spacing = 0.125;

    double uptime_cap = 1000.0;
    IdAssign id_assign = IdAssign::UniformRandom;
    bool piggyback_updates = false;
    bool ng_literal_condition = false;
    std::uint64_t max_events = 400000000ULL;
};

inline const char* algo_name(Algo a) {
    switch (a) {
    case Algo::Greedy: return "g";
    case Algo::NG: return "ng";
    case Algo::NGSA: return "ngsa";
    }
    return "g";
}

inline const char* nc_policy_name(NcPolicy p) {
    return p == NcPolicy::Fixed ? "fixed" : "variable";
}

struct LookupResult {
    Pos src = 0;
    Pos dst = 0;
    bool resolved = false;
    int hops = 0;
};

struct SimMetricsRow {
    double failure_fraction = 0.0;
    int lookups_issued = 0;
    int failed_count = 0;
    double failed_pct = 0.0;
    int routing_failures = 0;
    int partition_failures = 0;
    int hop_min = 0;
    double hop_avg = 0.0;
    int hop_max = 0;
    std::array<int, 31> hop_histogram{}; // last bucket absorbs >= 30
    int component_count = 0;
};

// Deterministic discrete-event queue: events fire in (time, insertion) order.
class EventQueue {
public:
    struct Event {
        SimTime at = 0;
        std::uint64_t seq = 0;
        bool is_timer = false;
        Pos dst = 0;
        Message msg;
        TimerKind timer = TimerKind::Keepalive;
        std::uint64_t epoch = 0;
    };

    void push(Event e) {
        e.seq = ++seq_;
        heap_.push(std::move(e));
    }
    bool empty() const { return heap_.empty(); }
    const Event& top() const { return heap_.top(); }
    Event pop() {
        Event e = heap_.top();
        heap_.pop();
        return e;
    }
    std::size_t size() const { return heap_.size(); }

private:
    struct Later {
        bool operator()(const Event& a, const Event& b) const {
            if (a.at != b.at)
                return a.at > b.at;
            return a.seq > b.seq;
        }
    };
    std::priority_queue<Event, std::vector<Event>, Later> heap_;
    std::uint64_t seq_ = 0;
};

class Simulation : public ProtocolEnv {
public:
    explicit Simulation(const SimConfig& cfg);

    // construct the network: sequential joins through random bootstraps,
    // then advance to structural steady state
    static Simulation build(const SimConfig& cfg);
    static Simulation prepare(const SimConfig& cfg); // build without settling

    bool run_until_steady(); // false when the event budget ran out

    bool can_inject_failure() const;
    void inject_failure_step(); // crash-stop removal of failure_step * n nodes
    void settle(double units); // advance maintenance for a fixed window

    std::vector<std::pair<Pos, Pos>> draw_pairs(int count);
    std::vector<LookupResult> run_batch(Algo algo, std::span<const std::pair<Pos, Pos>> pairs);
    std::vector<LookupResult> issue_lookups(int count); // configured algorithm

    bool oracle_reachable(Pos src, Pos dst) const;
    SimMetricsRow collect_metrics(std::span<const LookupResult> results) const;

    // ProtocolEnv
    void send(const Message& m) override;
    void schedule_timer(Pos node, TimerKind kind, SimTime at, std::uint64_t epoch) override;
    SimTime now() const override { return now_; }
    const ProtocolParams& params() const override { return pp_; }
    void note_structural_event() override { last_structural_ = now_; }
    Pos pick_bootstrap(Pos exclude) override;

    // introspection
    const std::vector<NodeState>& nodes() const { return nodes_; }
    std::vector<NodeState>& nodes_mut() { return nodes_; }
    const SimConfig& config() const { return cfg_; }
    std::uint64_t live_count() const { return live_; }
    std::uint64_t removed_count() const { return removed_; }
    double failure_fraction() const {
        return static_cast<double>(removed_) / static_cast<double>(cfg_.n);
    }
    int measured_height() const;
    std::uint64_t halving_violations() const { return halving_violations_; }
    int max_hops_seen() const { return max_hops_seen_; }
    bool converged() const { return converged_; }
    const NodeState* find_node(Pos id) const;

    // connected components over live active connections; index by node slot
    std::vector<int> components(int* count = nullptr) const;

private:
    void create_nodes();
    void pump_until(SimTime t);
    void dispatch(const EventQueue::Event& ev);
    NodeState* node_ptr(Pos id);
    std::vector<std::uint32_t> live_indices() const;

    SimConfig cfg_;
    ProtocolParams pp_;
    std::vector<NodeState> nodes_;
    std::unordered_map<Pos, std::uint32_t> by_id_;
    EventQueue queue_;
    SimTime now_ = 0;
    SimTime last_structural_ = 0;
    SimTime last_join_ = 0;
    std::uint64_t live_ = 0;
    std::uint64_t removed_ = 0;
    std::uint64_t joined_so_far_ = 0;
    std::uint64_t events_processed_ = 0;
    bool converged_ = false;

    Rng boot_rng_;
    Rng fail_rng_;
    Rng pair_rng_;

    std::uint64_t halving_violations_ = 0;
    int max_hops_seen_ = 0;
};

} // namespace treep

#endif
