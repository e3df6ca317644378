#include "treep/simnet.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace treep {

namespace {

SimTime to_ticks(double units) {
    return static_cast<SimTime>(std::llround(units * static_cast<double>(kTimeUnit)));
}

constexpr SimTime kMessageLatency = kTimeUnit; // unit latency, lossless

} // namespace

Simulation::Simulation(const SimConfig& cfg)
    : cfg_(cfg),
      boot_rng_(mix_seed(cfg.seed, 0xb007)),
      fail_rng_(mix_seed(cfg.seed, 0xfa11)),
      pair_rng_(mix_seed(cfg.seed, 0x4009)) {
    pp_.space = cfg.space;
    pp_.t_elect_base = to_ticks(cfg.t_elect_base);
    pp_.t_demote_base = to_ticks(cfg.t_demote_base);
    pp_.keepalive_interval = to_ticks(cfg.keepalive_interval);
    pp_.entry_ttl = to_ticks(cfg.entry_ttl);
    pp_.jitter_span = 2 * kTimeUnit;
    pp_.uptime_cap = cfg.uptime_cap;
    pp_.piggyback_updates = cfg.piggyback_updates;
    pp_.seed = cfg.seed;
}

void Simulation::create_nodes() {
    Rng id_rng(mix_seed(cfg_.seed, 0x1d5));
    Rng prof_rng(mix_seed(cfg_.seed, 0x9f0f));

    nodes_.reserve(cfg_.n);
    by_id_.reserve(cfg_.n * 2);
    for (std::uint64_t i = 0; i < cfg_.n; ++i) {
        Pos id = 0;
        do {
            if (cfg_.id_assign == IdAssign::UniformRandom)
                id = id_rng.next_below(cfg_.space);
            else
                id = mix_seed(mix_seed(cfg_.seed, 0xadd2), i + by_id_.size()) % cfg_.space;
        } while (by_id_.count(id));

        NodeState n;
        n.id = id;
        n.profile.cpu = prof_rng.next_double();
        n.profile.memory = prof_rng.next_double();
        n.profile.bandwidth = prof_rng.next_double();
        n.profile.storage = prof_rng.next_double();
        n.profile.work_load = prof_rng.next_double();
        n.profile.network_load = prof_rng.next_double();
        n.profile.uptime = prof_rng.next_exponential(cfg_.uptime_cap / 2.0);
        n.score = capacity_score(n.profile, cfg_.uptime_cap);
        n.nc = cfg_.nc_policy == NcPolicy::Fixed ? cfg_.nc_fixed : variable_nc(n.score);

        by_id_.emplace(id, static_cast<std::uint32_t>(nodes_.size()));
        nodes_.push_back(std::move(n));
    }
    live_ = cfg_.n;
}

Simulation Simulation::build(const SimConfig& cfg) {
    Simulation sim = Simulation::prepare(cfg);
    sim.run_until_steady();
    return sim;
}

// schedule the joins without running them; build() = prepare() + steady
Simulation Simulation::prepare(const SimConfig& cfg) {
    Simulation sim(cfg);
    sim.create_nodes();

    // early arrivals are paced so the hierarchy's coverage stays ahead of
    // the join rate; later joins land at the configured spacing
    std::vector<SimTime> join_times(cfg.n, 0);
    SimTime at = 0;
    for (std::uint64_t i = 1; i < cfg.n; ++i) {
        double spacing = std::max(cfg.join_spacing, 40.0 / static_cast<double>(i));
        at += std::max<SimTime>(to_ticks(spacing), 1);
        join_times[i] = at;
    }

    for (std::uint64_t i = 0; i < cfg.n; ++i) {
        NodeState& n = sim.nodes_[i];
        SimTime join_at = sim.now_ + join_times[i];
        if (i == 0) {
            n.joined = true;
        } else {
            // join kickoff; the dispatcher draws a random live bootstrap and
            // the join routes to the covering parent for admission
            EventQueue::Event ev;
            ev.at = join_at;
            ev.is_timer = true;
            ev.dst = n.id;
            ev.timer = TimerKind::JoinRetry;
            ev.epoch = 0; // attempt 0: triggers start_join
            sim.queue_.push(ev);
        }
        // keep-alive cadence, staggered per node
        EventQueue::Event ka;
        ka.at = join_at + det_jitter(cfg.seed, n.id, 0x6a, sim.pp_.keepalive_interval) + 1;
        ka.is_timer = true;
        ka.dst = n.id;
        ka.timer = TimerKind::Keepalive;
        sim.queue_.push(ka);
        sim.last_join_ = join_at;
    }
    return sim;
}

NodeState* Simulation::node_ptr(Pos id) {
    auto it = by_id_.find(id);
    if (it == by_id_.end())
        return nullptr;
    return &nodes_[it->second];
}

const NodeState* Simulation::find_node(Pos id) const {
    auto it = by_id_.find(id);
    if (it == by_id_.end())
        return nullptr;
    return &nodes_[it->second];
}

void Simulation::send(const Message& m) {
    EventQueue::Event ev;
    ev.at = now_ + kMessageLatency;
    ev.dst = m.dst;
    ev.msg = m;
    queue_.push(std::move(ev));
}

void Simulation::schedule_timer(Pos node, TimerKind kind, SimTime at, std::uint64_t epoch) {
    EventQueue::Event ev;
    ev.at = std::max(at, now_ + 1);
    ev.is_timer = true;
    ev.dst = node;
    ev.timer = kind;
    ev.epoch = epoch;
    queue_.push(std::move(ev));
}

Pos Simulation::pick_bootstrap(Pos exclude) {
    for (int tries = 0; tries < 64; ++tries) {
        const NodeState& n = nodes_[boot_rng_.next_below(nodes_.size())];
        if (n.alive && n.joined && n.id != exclude)
            return n.id;
    }
    return 0;
}

void Simulation::dispatch(const EventQueue::Event& ev) {
    NodeState* n = node_ptr(ev.dst);
    if (!n || !n->alive)
        return; // datagram to a dead node: silence
    if (ev.is_timer) {
        if (ev.timer == TimerKind::JoinRetry && !n->joined && n->join_attempts == 0 &&
            ev.epoch == 0) {
            // the earliest arrivals bootstrap through the seed node, the
            // way real deployments hand out a well-known rendezvous
            Pos boot;
            if (joined_so_far_ < 64) {
                boot = nodes_[0].id;
                if (boot == n->id)
                    boot = pick_bootstrap(0);
            } else {
                boot = pick_bootstrap(0);
            }
            ++joined_so_far_;
            start_join(*this, *n, boot);
            return;
        }
        handle_timer(*this, *n, ev.timer, ev.epoch);
    } else {
        handle_message(*this, *n, ev.msg);
    }
}

void Simulation::pump_until(SimTime t) {
    while (!queue_.empty() && queue_.top().at <= t) {
        EventQueue::Event ev = queue_.pop();
        now_ = ev.at;
        dispatch(ev);
        if (++events_processed_ > cfg_.max_events)
            return;
    }
    now_ = std::max(now_, t);
}

bool Simulation::run_until_steady() {
    const SimTime quiet = to_ticks(cfg_.quiet_window);
    converged_ = false;
    while (true) {
        SimTime cutoff = std::max(last_structural_, last_join_) + quiet;
        if (queue_.empty() || queue_.top().at > cutoff) {
            now_ = std::max(now_, cutoff);
            converged_ = true;
            return true;
        }
        EventQueue::Event ev = queue_.pop();
        now_ = ev.at;
        dispatch(ev);
        if (++events_processed_ > cfg_.max_events)
            return false; // no convergence within the event budget
    }
}

bool Simulation::can_inject_failure() const {
    const auto count =
        static_cast<std::uint64_t>(cfg_.failure_step * static_cast<double>(cfg_.n));
    return static_cast<double>(live_) - static_cast<double>(count) >=
           cfg_.failure_floor * static_cast<double>(cfg_.n);
}

void Simulation::inject_failure_step() {
    const auto count =
        static_cast<std::uint64_t>(cfg_.failure_step * static_cast<double>(cfg_.n));
    std::uint64_t removed = 0;
    while (removed < count) {
        NodeState& n = nodes_[fail_rng_.next_below(nodes_.size())];
        if (!n.alive)
            continue;
        n.alive = false; // crash-stop: no goodbye, never returns
        ++removed;
    }
    live_ -= removed;
    removed_ += removed;
}

void Simulation::settle(double units) {
    pump_until(now_ + to_ticks(units));
}

std::vector<std::uint32_t> Simulation::live_indices() const {
    std::vector<std::uint32_t> out;
    out.reserve(live_);
    for (std::uint32_t i = 0; i < nodes_.size(); ++i)
        if (nodes_[i].alive)
            out.push_back(i);
    return out;
}

std::vector<std::pair<Pos, Pos>> Simulation::draw_pairs(int count) {
    std::vector<std::pair<Pos, Pos>> pairs;
    auto live = live_indices();
    if (live.size() < 2)
        return pairs;
    pairs.reserve(count);
    for (int i = 0; i < count; ++i) {
        Pos src = nodes_[live[pair_rng_.next_below(live.size())]].id;
        Pos dst = src;
        while (dst == src)
            dst = nodes_[live[pair_rng_.next_below(live.size())]].id;
        pairs.emplace_back(src, dst);
    }
    return pairs;
}

std::vector<LookupResult> Simulation::run_batch(Algo algo,
                                                std::span<const std::pair<Pos, Pos>> pairs) {
    std::vector<LookupResult> out;
    out.reserve(pairs.size());

    for (const auto& [src, dst] : pairs) {
        LookupResult res;
        res.src = src;
        res.dst = dst;

        LookupMessage msg;
        msg.target = dst;
        msg.origin = src;
        msg.algorithm = algo;

        const NodeState* cur = find_node(src);
        for (int step = 0; step < 2 * kHopCap + 8 && cur; ++step) {
            RouteAction act = route(*cur, msg, cfg_.space, cfg_.ng_literal_condition);
            if (act.kind == RouteKind::ReplyFound) {
                res.resolved = true;
                res.hops = msg.hops;
                break;
            }
            if (act.kind == RouteKind::Discard)
                break;
            if (act.kind == RouteKind::ReplyNotFound) {
                if (algo == Algo::NGSA) {
                    Pos back = ngsa_backtrack(act.msg);
                    if (back != 0 && loop_guard(act.msg)) {
                        msg = act.msg;
                        msg.hops += 1;
                        msg.from_parent_level = -1;
                        max_hops_seen_ = std::max(max_hops_seen_, msg.hops);
                        const NodeState* nxt = find_node(back);
                        cur = (nxt && nxt->alive) ? nxt : nullptr; // dead alternate: lost
                        continue;
                    }
                }
                break;
            }

            // Forward
            if (act.via_halving) {
                const int kh = cur->known_height();
                Dist mc = lookup_metric(cur->id, cur->lvl, msg.target, msg.hops, kh, cfg_.space);
                const NodeState* nn = find_node(act.next);
                int nl = nn ? nn->lvl : 0;
                Dist mn = lookup_metric(act.next, std::min(nl, kh), msg.target, msg.hops, kh,
                                        cfg_.space);
                if (2 * mn > mc)
                    ++halving_violations_;
            }
            int sender_level = cur->lvl;
            msg = act.msg;
            msg.hops += 1;
            msg.from_parent_level = act.next_is_child ? sender_level : -1;
            max_hops_seen_ = std::max(max_hops_seen_, msg.hops);
            const NodeState* nxt = find_node(act.next);
            if (!nxt || !nxt->alive) {
                cur = nullptr; // forwarded into silence
                break;
            }
            cur = nxt;
        }
        out.push_back(res);
    }
    return out;
}

std::vector<LookupResult> Simulation::issue_lookups(int count) {
    auto pairs = draw_pairs(count);
    return run_batch(cfg_.algo, pairs);
}

std::vector<int> Simulation::components(int* count) const {
    std::vector<int> comp(nodes_.size(), -1);
    std::vector<std::uint32_t> stack;
    int c = 0;

    auto index_of = [&](Pos id) -> int {
        auto it = by_id_.find(id);
        return it == by_id_.end() ? -1 : static_cast<int>(it->second);
    };

    auto push_if_live = [&](Pos id) {
        int j = index_of(id);
        if (j >= 0 && nodes_[j].alive && comp[j] < 0) {
            comp[j] = c;
            stack.push_back(static_cast<std::uint32_t>(j));
        }
    };

    for (std::uint32_t i = 0; i < nodes_.size(); ++i) {
        if (!nodes_[i].alive || comp[i] >= 0)
            continue;
        comp[i] = c;
        stack.push_back(i);
        while (!stack.empty()) {
            const NodeState& n = nodes_[stack.back()];
            stack.pop_back();
            for (const auto& e : n.tables.level0)
                push_if_live(e.id);
            for (const auto& e : n.tables.children)
                if (n.tess && n.tess->contains(e.id))
                    push_if_live(e.id);
            // bus adjacency: nearest same-level link on each side
            const TableEntry* left = nullptr;
            const TableEntry* right = nullptr;
            for (const auto& e : n.tables.same_level) {
                if (e.id < n.id && (!left || e.id > left->id))
                    left = &e;
                if (e.id > n.id && (!right || e.id < right->id))
                    right = &e;
            }
            if (left)
                push_if_live(left->id);
            if (right)
                push_if_live(right->id);
            if (Pos p = parent_of(n); p != 0 && p != n.id)
                push_if_live(p);
        }
        ++c;
    }
    if (count)
        *count = c;
    return comp;
}

bool Simulation::oracle_reachable(Pos src, Pos dst) const {
    if (src == dst)
        return true;
    auto comp = components(nullptr);
    int a = -1, b = -1;
    if (auto it = by_id_.find(src); it != by_id_.end())
        a = comp[it->second];
    if (auto it = by_id_.find(dst); it != by_id_.end())
        b = comp[it->second];
    return a >= 0 && a == b;
}

SimMetricsRow Simulation::collect_metrics(std::span<const LookupResult> results) const {
    SimMetricsRow row;
    row.failure_fraction = failure_fraction();
    row.lookups_issued = static_cast<int>(results.size());

    int comp_count = 0;
    auto comp = components(&comp_count);
    row.component_count = comp_count;

    auto comp_of = [&](Pos id) -> int {
        auto it = by_id_.find(id);
        return it == by_id_.end() ? -1 : comp[it->second];
    };

    long long hop_sum = 0;
    int resolved = 0;
    row.hop_min = std::numeric_limits<int>::max();
    for (const auto& r : results) {
        if (r.resolved) {
            ++resolved;
            hop_sum += r.hops;
            row.hop_min = std::min(row.hop_min, r.hops);
            row.hop_max = std::max(row.hop_max, r.hops);
            row.hop_histogram[std::min(r.hops, 30)] += 1;
        } else {
            ++row.failed_count;
            int ca = comp_of(r.src), cb = comp_of(r.dst);
            if (ca >= 0 && ca == cb)
                ++row.routing_failures;
            else
                ++row.partition_failures;
        }
    }
    if (resolved == 0)
        row.hop_min = 0;
    if (row.lookups_issued > 0)
        row.failed_pct = 100.0 * row.failed_count / row.lookups_issued;
    if (resolved > 0)
        row.hop_avg = static_cast<double>(hop_sum) / resolved;
    return row;
}

int Simulation::measured_height() const {
    int h = 0;
    for (const auto& n : nodes_)
        if (n.alive)
            h = std::max(h, n.lvl);
    return h;
}

} // namespace treep
