#include "treep/protocol.hpp"

#include <algorithm>
#include <cassert>
#include <cstdio>
#include <limits>

namespace treep {

namespace {

std::uint64_t g_dropped_unknown = 0;
bool g_trace = false;

#define PTRACE(...)                                                                            \
    do {                                                                                       \
        if (g_trace)                                                                           \
            std::fprintf(stderr, __VA_ARGS__);                                                 \
    } while (0)

constexpr int kJoinHopCap = 255;
constexpr int kJoinRetries = 5;

Pos midpoint_right(Pos a, Pos b) {
    // a < b; returns m with a < m <= b
    return a + (b - a + 1) / 2;
}

void shed_child(ProtocolEnv& env, NodeState& n, Pos child, Pos hint);

bool fresh_enough(SimTime now, SimTime heard, SimTime ttl) {
    return now <= heard + 2 * ttl;
}

// any live sign of an existing hierarchy in the peer cache
bool hierarchy_evidence(const NodeState& n, SimTime now, SimTime ttl) {
    for (const auto& r : n.tables.resources)
        if (r.id != n.id && r.level >= 1 && fresh_enough(now, r.last_heard, ttl))
            return true;
    return false;
}

// nearest left/right same-level entries, by id
struct BusAdjacency {
    const TableEntry* left = nullptr;
    const TableEntry* right = nullptr;
};

BusAdjacency bus_adjacency(const NodeState& n) {
    BusAdjacency adj;
    for (const auto& e : n.tables.same_level) {
        if (e.id < n.id) {
            if (!adj.left || e.id > adj.left->id)
                adj.left = &e;
        } else if (e.id > n.id) {
            if (!adj.right || e.id < adj.right->id)
                adj.right = &e;
        }
    }
    return adj;
}

constexpr Pos kNoPos = std::numeric_limits<Pos>::max();

struct Candidate {
    Pos id = kNoPos;
    Dist dist = std::numeric_limits<Dist>::max();
};

// keep the two offers nearest to `anchor`, ties to the lower id
struct NearestTwo {
    Pos anchor;
    Candidate best[2];

    explicit NearestTwo(Pos a) : anchor(a) {}

    void offer(Pos id) {
        if (id == anchor || id == best[0].id || id == best[1].id)
            return;
        Dist d = distance_d(id, anchor);
        if (d < best[0].dist || (d == best[0].dist && id < best[0].id)) {
            best[1] = best[0];
            best[0] = {id, d};
        } else if (d < best[1].dist || (d == best[1].dist && id < best[1].id)) {
            best[1] = {id, d};
        }
    }

    std::vector<Pos> take() const {
        std::vector<Pos> out;
        if (best[0].id != kNoPos)
            out.push_back(best[0].id);
        if (best[1].id != kNoPos)
            out.push_back(best[1].id);
        return out;
    }
};

// the two believed-live peers nearest by id, drawn from the level-0 table
// and the peer cache
std::vector<Pos> wanted_level0(const NodeState& n, SimTime now, SimTime ttl) {
    NearestTwo nn(n.id);
    for (const auto& e : n.tables.level0)
        nn.offer(e.id);
    for (const auto& s : n.tables.resources)
        if (fresh_enough(now, s.last_heard, ttl))
            nn.offer(s.id);
    return nn.take();
}

SimTime watermark_for(NodeState& n, Pos peer) {
    for (auto& [p, wm] : n.sent_watermark)
        if (p == peer)
            return wm;
    return 0;
}

void set_watermark(NodeState& n, Pos peer, SimTime wm) {
    for (auto& [p, w] : n.sent_watermark)
        if (p == peer) {
            w = wm;
            return;
        }
    n.sent_watermark.emplace_back(peer, wm);
}

bool is_first_contact(const NodeState& n, Pos peer) {
    for (const auto& [p, wm] : n.sent_watermark)
        if (p == peer)
            return false;
    return true;
}

TableEntry self_entry(const NodeState& n, SimTime now) {
    TableEntry e;
    e.id = n.id;
    e.address = n.id;
    e.level = n.lvl;
    e.last_active = now;
    e.last_modified = now;
    e.source = n.id;
    return e;
}

// rows describing this node's direct level-0 adjacency
void append_level0_rows(const NodeState& n, SimTime wm, TableDelta& d) {
    for (const auto& e : n.tables.level0)
        if (e.last_modified >= wm)
            d.rows.push_back({TableTag::Level0, DeltaOp::Refresh, e});
}

void append_tombstones(const NodeState& n, SimTime wm, TableDelta& d) {
    for (const auto& tb : n.tables.tombstones)
        if (tb.removed_at >= wm) {
            TableEntry e;
            e.id = tb.id;
            e.last_modified = tb.removed_at;
            d.rows.push_back({tb.tag, DeltaOp::Remove, e});
        }
}

const TableEntry* superior_at(const NodeState& n, int level) {
    for (const auto& s : n.tables.superiors)
        if (s.level == level)
            return &s;
    return nullptr;
}

// Keep-alive payload for one link, per the update-exchange rules: level-0
// links gossip level-0 adjacency plus the sender's ancestor at the peer's
// level; bus links carry adjacency, own children and the immediate parent.
std::shared_ptr<const TableDelta> compose_link_delta(NodeState& n, Pos peer, int peer_level,
                                                     std::uint8_t link_kind, SimTime now) {
    SimTime wm = watermark_for(n, peer);
    auto d = std::make_shared<TableDelta>();
    d->origin = n.id;
    d->since = wm;

    if (link_kind == 0) {
        append_level0_rows(n, wm, *d);
        if (peer_level > n.lvl) {
            // the ancestor at the peer's own level rides on every keep-alive:
            // it is the channel that knits adjacent subtrees together
            const TableEntry* anc = nullptr;
            if (peer_level == n.lvl + 1 && n.lvl == 0) {
                if (n.tables.parent)
                    anc = &*n.tables.parent;
            } else {
                anc = superior_at(n, peer_level);
            }
            if (anc)
                d->rows.push_back({TableTag::Superior, DeltaOp::Refresh, *anc});
        }
    } else {
        // bus link: inner neighbours, own children, immediate parent
        BusAdjacency adj = bus_adjacency(n);
        for (const TableEntry* e : {adj.left, adj.right})
            if (e && e->id != peer && e->last_modified >= wm)
                d->rows.push_back({TableTag::SameLevel, DeltaOp::Refresh, *e});
        if (n.tess) {
            for (const auto& c : n.tables.children)
                if (c.source == c.id && n.tess->contains(c.id) && c.last_modified >= wm)
                    d->rows.push_back({TableTag::Children, DeltaOp::Refresh, c});
        }
        if (const TableEntry* p = superior_at(n, n.lvl + 1))
            d->rows.push_back({TableTag::Parent, DeltaOp::Refresh, *p});
    }
    append_tombstones(n, wm, *d);

    set_watermark(n, peer, now);
    if (d->rows.empty())
        return nullptr;
    return d;
}

// ack payload from a parent to a child: own ancestry and bus adjacency
std::shared_ptr<const TableDelta> compose_parent_ack(NodeState& n, Pos child, SimTime now) {
    SimTime wm = watermark_for(n, child);
    auto d = std::make_shared<TableDelta>();
    d->origin = n.id;
    d->since = wm;
    for (const auto& s : n.tables.superiors)
        if (s.last_modified >= wm)
            d->rows.push_back({TableTag::Superior, DeltaOp::Refresh, s});
    BusAdjacency adj = bus_adjacency(n);
    for (const TableEntry* e : {adj.left, adj.right})
        if (e && e->last_modified >= wm)
            d->rows.push_back({TableTag::ParentNeighbor, DeltaOp::Refresh, *e});
    set_watermark(n, child, now);
    if (d->rows.empty())
        return nullptr;
    return d;
}

void cache_peer(NodeState& n, Pos id, int level, SimTime now) {
    if (id == n.id)
        return;
    NodeProfile keep;
    if (const ProfileSnapshot* s = find_resource(n.tables, id))
        keep = s->profile;
    upsert_resource(n.tables, id, level, keep, now);
}

void cache_peer_profile(NodeState& n, Pos id, int level, const NodeProfile& p, SimTime now) {
    if (id == n.id)
        return;
    upsert_resource(n.tables, id, level, p, now);
}

// parent hint for a parentless node: any fresh cache row one level up, or a
// same-level peer's reported parent
Pos find_parent_candidate(const NodeState& n, SimTime now, SimTime ttl);

void send_keepalive(ProtocolEnv& env, NodeState& n, Pos peer, int peer_level,
                    std::uint8_t link_kind) {
    Message m;
    m.kind = MsgKind::Keepalive;
    m.src = n.id;
    m.dst = peer;
    m.src_level = n.lvl;
    m.src_parent = parent_of(n);
    m.link_kind = link_kind;
    if (link_kind == 1 && n.tess) {
        m.tess_lo = n.tess->lo;
        m.tess_hi = n.tess->hi;
        m.tess_stamp = n.tess_set_at;
    }
    if (is_first_contact(n, peer)) {
        m.carries_profile = true;
        m.profile = n.profile;
    }
    m.delta = compose_link_delta(n, peer, peer_level, link_kind, env.now());
    env.send(m);
}

void send_child_report(ProtocolEnv& env, NodeState& n, Pos parent) {
    Message m;
    m.kind = MsgKind::ChildReport;
    m.src = n.id;
    m.dst = parent;
    m.src_level = n.lvl;
    m.src_parent = parent_of(n);
    m.carries_profile = true;
    m.profile = n.profile;
    env.send(m);
}

void start_countdown(ProtocolEnv& env, NodeState& n, CountdownKind kind, SimTime duration) {
    n.cd = kind;
    n.cd_deadline = env.now() + duration;
    ++n.cd_epoch;
    env.schedule_timer(n.id, TimerKind::Countdown, n.cd_deadline, n.cd_epoch);
}

void cancel_countdown(NodeState& n) {
    n.cd = CountdownKind::None;
    ++n.cd_epoch;
}

void announce_parenthood(ProtocolEnv& env, NodeState& n, Pos to) {
    Message m;
    m.kind = MsgKind::ParentAnnounce;
    m.src = n.id;
    m.dst = to;
    m.src_level = n.lvl;
    m.new_level = n.lvl;
    m.tess_lo = n.tess->lo;
    m.tess_hi = n.tess->hi;
    m.tess_stamp = n.tess_set_at;
    m.claim_time = n.last_claim_time;
    env.send(m);
}

void become_ordinary(ProtocolEnv& env, NodeState& n);
void vacate_level(ProtocolEnv& env, NodeState& n, Pos child_hint_exclude);
void check_overflow(ProtocolEnv& env, NodeState& n);

std::vector<ChildRef> own_children_refs(const NodeState& n) {
    std::vector<ChildRef> out;
    for (const auto& c : n.tables.children) {
        if (!n.tess || c.source != c.id || !n.tess->contains(c.id))
            continue;
        double score = 0.0;
        if (const ProfileSnapshot* s = find_resource(n.tables, c.id))
            score = capacity_score(s->profile, 1000.0);
        out.push_back({c.id, score});
    }
    return out;
}

void send_promote(ProtocolEnv& env, NodeState& n, Pos target, int new_level,
                  const Tessellation& tess, const std::vector<Pos>& children, Pos parent_hint,
                  Pos bus_seed) {
    Message m;
    m.kind = MsgKind::Promote;
    m.src = n.id;
    m.dst = target;
    m.src_level = n.lvl;
    m.new_level = new_level;
    m.tess_lo = tess.lo;
    m.tess_hi = tess.hi;
    m.hint = parent_hint;
    auto d = std::make_shared<TableDelta>();
    d->origin = n.id;
    d->since = 0;
    SimTime now = env.now();
    for (Pos c : children) {
        if (const TableEntry* e = n.tables.find(TableTag::Children, c)) {
            TableEntry row = *e;
            row.last_modified = now;
            d->rows.push_back({TableTag::Children, DeltaOp::Refresh, row});
        }
    }
    // seed the promotee's bus with its sibling at the target level
    if (bus_seed != 0 && bus_seed != target) {
        TableEntry b;
        b.id = bus_seed;
        b.level = new_level;
        b.last_modified = now;
        b.source = n.id;
        d->rows.push_back({TableTag::SameLevel, DeltaOp::Refresh, b});
    }
    m.delta = d;
    env.send(m);
}

void remove_child_row(NodeState& n, Pos id, SimTime now) {
    auto& v = n.tables.children;
    for (auto it = v.begin(); it != v.end(); ++it)
        if (it->id == id) {
            n.tables.tombstones.push_back({TableTag::Children, id, now});
            v.erase(it);
            return;
        }
}

// split a parented node that exceeded its child capacity
void do_split(ProtocolEnv& env, NodeState& n) {
    auto kids = own_children_refs(n);
    auto plan = plan_split(n.id, *n.tess, kids);
    if (!plan)
        return;
    SimTime now = env.now();
    PTRACE("[%8.1f] %llu SPLIT lvl %d promotee=%llu keep=%zu give=%zu\n", now / 1000.0,
           (unsigned long long)n.id, n.lvl, (unsigned long long)plan->promotee,
           plan->keep_children.size(), plan->give_children.size());

    send_promote(env, n, plan->promotee, n.lvl, plan->give_tess, plan->give_children,
                 parent_of(n), n.id);

    for (Pos c : plan->give_children)
        remove_child_row(n, c, now);
    remove_child_row(n, plan->promotee, now);
    n.tess = plan->keep_tess;
    n.tess_set_at = now;

    TableEntry q;
    q.id = plan->promotee;
    q.level = n.lvl;
    q.source = plan->promotee;
    upsert(n.tables, TableTag::SameLevel, q, now);
    env.note_structural_event();
}

// a parentless node over the lift threshold raises itself one level
void do_root_lift(ProtocolEnv& env, NodeState& n) {
    auto kids = own_children_refs(n);
    auto plan = plan_root_lift(*n.tess, kids);
    if (!plan)
        return;
    SimTime now = env.now();
    PTRACE("[%8.1f] %llu ROOT-LIFT lvl %d -> %d heads=%llu,%llu\n", now / 1000.0,
           (unsigned long long)n.id, n.lvl, n.lvl + 1, (unsigned long long)plan->head_left,
           (unsigned long long)plan->head_right);
    if (g_trace)
        for (const auto& c : n.tables.children)
            std::fprintf(stderr, "      child %llu lvl=%d src=%llu own=%d\n",
                         (unsigned long long)c.id, c.level, (unsigned long long)c.source,
                         n.tess->contains(c.id) ? 1 : 0);

    send_promote(env, n, plan->head_left, n.lvl, plan->left_tess, plan->left_children, n.id,
                 plan->head_right);
    send_promote(env, n, plan->head_right, n.lvl, plan->right_tess, plan->right_children, n.id,
                 plan->head_left);

    Tessellation up;
    up.owner = n.id;
    up.level = n.lvl + 1;
    up.lo = n.tess->lo;
    up.hi = n.tess->hi;

    n.lvl += 1;
    n.tess = up;
    n.tess_set_at = now;
    n.tables.same_level.clear();
    n.tables.children.clear();
    n.tables.superiors.clear();
    upsert(n.tables, TableTag::Parent, self_entry(n, now), now); // elevated: self
    TableEntry l, r;
    l.id = plan->head_left;
    l.level = n.lvl - 1;
    l.source = plan->head_left;
    r.id = plan->head_right;
    r.level = n.lvl - 1;
    r.source = plan->head_right;
    upsert(n.tables, TableTag::Children, l, now);
    upsert(n.tables, TableTag::Children, r, now);
    env.note_structural_event();
}

void check_overflow(ProtocolEnv& env, NodeState& n) {
    if (n.lvl < 1 || !n.tess)
        return;
    int ca = own_children_count(n);
    if (parent_of(n) == 0 || parent_of(n) == n.id) {
        if (ca >= root_lift_threshold(n.nc))
            do_root_lift(env, n);
        return;
    }
    if (ca <= n.nc)
        return;

    auto kids = own_children_refs(n);
    auto plan = plan_split(n.id, *n.tess, kids);
    if (plan && plan->min_side >= 2) {
        do_split(env, n);
        return;
    }
    // No balanced cut exists from here: this node's own id sits outside its
    // children cluster. Hand the whole role to the median-placed child and
    // step down; future splits cut cleanly around the new owner's id.
    std::sort(kids.begin(), kids.end(),
              [](const ChildRef& a, const ChildRef& b) { return a.id < b.id; });
    const ChildRef& heir = kids[kids.size() / 2];
    PTRACE("[%8.1f] %llu REPLACE lvl %d (children=%d) heir=%llu\n", env.now() / 1000.0,
           (unsigned long long)n.id, n.lvl, ca, (unsigned long long)heir.id);
    std::vector<Pos> handover;
    for (const auto& c : kids)
        if (c.id != heir.id)
            handover.push_back(c.id);
    Tessellation t = *n.tess;
    t.owner = heir.id;
    send_promote(env, n, heir.id, n.lvl, t, handover, parent_of(n), 0);
    become_ordinary(env, n);
}

Pos find_parent_candidate(const NodeState& n, SimTime now, SimTime ttl) {
    Pos best = 0;
    Dist best_d = std::numeric_limits<Dist>::max();
    for (const auto& s : n.tables.resources) {
        if (!fresh_enough(now, s.last_heard, ttl))
            continue;
        if (s.level == n.lvl + 1) {
            Dist d = distance_d(s.id, n.id);
            if (d < best_d || (d == best_d && s.id < best)) {
                best = s.id;
                best_d = d;
            }
        }
    }
    if (best)
        return best;
    // fall back to replicated parent neighbours (failover after parent death)
    for (const auto& e : n.tables.parent_neighbors) {
        if (e.level != n.lvl + 1)
            continue;
        Dist d = distance_d(e.id, n.id);
        if (d < best_d || (d == best_d && e.id < best)) {
            best = e.id;
            best_d = d;
        }
    }
    return best;
}

} // namespace

std::uint64_t dropped_unknown_messages() {
    return g_dropped_unknown;
}

void set_protocol_trace(bool on) {
    g_trace = on;
}

Pos parent_of(const NodeState& n) {
    if (n.lvl == 0)
        return n.tables.parent ? n.tables.parent->id : 0;
    if (const TableEntry* s = superior_at(n, n.lvl + 1))
        return s->id;
    return 0;
}

int own_children_count(const NodeState& n) {
    if (!n.tess)
        return 0;
    int c = 0;
    for (const auto& e : n.tables.children)
        if (e.source == e.id && n.tess->contains(e.id))
            ++c; // replicated neighbours' children never count as own
    return c;
}

int root_lift_threshold(int nc) {
    return std::max(nc + 1, 6);
}

std::optional<SplitPlan> plan_split(Pos parent_id, const Tessellation& tess,
                                    const std::vector<ChildRef>& children_in) {
    if (children_in.size() < 2)
        return std::nullopt;
    std::vector<ChildRef> children = children_in;
    std::sort(children.begin(), children.end(),
              [](const ChildRef& a, const ChildRef& b) { return a.id < b.id; });

    // The boundary between the parent and the promotee is the midpoint of
    // their IDs, like every other boundary in the tessellation; the promotee
    // is chosen so both sides keep at least two children where possible,
    // with capacity deciding among the workable candidates.
    struct Choice {
        Pos q = 0;
        Pos cut = 0;
        int min_side = -1;
        int gap = 0;
        double score = 0.0;
        bool valid = false;
    } best;

    auto better = [](const Choice& a, const Choice& b) {
        bool fa = a.min_side >= 2, fb = b.min_side >= 2;
        if (fa != fb)
            return fa;
        if (a.score != b.score)
            return a.score > b.score;
        if (a.min_side != b.min_side)
            return a.min_side > b.min_side;
        if (a.gap != b.gap)
            return a.gap < b.gap;
        return a.q < b.q;
    };

    for (const auto& cand : children) {
        if (cand.id == parent_id)
            continue;
        Pos m = cand.id < parent_id ? midpoint_right(cand.id, parent_id)
                                    : midpoint_right(parent_id, cand.id);
        int left = 0, right = 0;
        for (const auto& c : children) {
            if (c.id == cand.id)
                continue;
            (c.id < m ? left : right)++;
        }
        Choice ch{cand.id, m, std::min(left, right), std::abs(left - right), cand.score, true};
        if (!best.valid || better(ch, best))
            best = ch;
    }
    if (!best.valid)
        return std::nullopt;

    const Pos promotee = best.q;
    const Pos best_cut = best.cut;

    SplitPlan plan;
    plan.promotee = promotee;
    plan.cut = best_cut;
    plan.min_side = best.min_side;
    plan.promotee_right = promotee >= best_cut;

    plan.keep_tess = tess;
    plan.give_tess = tess;
    if (plan.promotee_right) {
        plan.keep_tess.hi = best_cut;
        plan.give_tess.lo = best_cut;
        plan.give_tess.owner = promotee;
    } else {
        plan.keep_tess.lo = best_cut;
        plan.give_tess.hi = best_cut;
        plan.give_tess.owner = promotee;
    }
    for (const auto& c : children) {
        if (c.id == promotee)
            continue;
        bool right = c.id >= best_cut;
        if (right == plan.promotee_right)
            plan.give_children.push_back(c.id);
        else
            plan.keep_children.push_back(c.id);
    }
    return plan;
}

std::optional<RootLiftPlan> plan_root_lift(const Tessellation& tess,
                                           const std::vector<ChildRef>& children_in) {
    if (children_in.size() < 6)
        return std::nullopt;
    std::vector<ChildRef> kids = children_in;
    std::sort(kids.begin(), kids.end(),
              [](const ChildRef& a, const ChildRef& b) { return a.id < b.id; });
    const std::size_t k = kids.size();

    // two heads whose ID midpoint splits the rest as evenly as it can; the
    // boundary stays midpoint-consistent with the rest of the tessellation
    struct Choice {
        std::size_t li = 0, ri = 0;
        Pos cut = 0;
        int min_side = -1;
        int gap = 0;
        double score = 0.0;
        bool valid = false;
    } best;

    for (std::size_t li = 0; li < k; ++li) {
        for (std::size_t ri = li + 1; ri < k; ++ri) {
            Pos cut = midpoint_right(kids[li].id, kids[ri].id);
            if (kids[li].id >= cut || kids[ri].id < cut)
                continue;
            int left = 0, right = 0;
            for (std::size_t i = 0; i < k; ++i) {
                if (i == li || i == ri)
                    continue;
                (kids[i].id < cut ? left : right)++;
            }
            Choice ch{li,
                      ri,
                      cut,
                      std::min(left, right),
                      std::abs(left - right),
                      kids[li].score + kids[ri].score,
                      true};
            bool fa = ch.min_side >= 2, fb = best.min_side >= 2;
            bool take = !best.valid;
            if (!take && fa != fb)
                take = fa;
            else if (!take && ch.score != best.score)
                take = ch.score > best.score;
            else if (!take && ch.min_side != best.min_side)
                take = ch.min_side > best.min_side;
            else if (!take && ch.gap != best.gap)
                take = ch.gap < best.gap;
            if (take)
                best = ch;
        }
    }
    if (!best.valid)
        return std::nullopt;

    RootLiftPlan plan;
    plan.head_left = kids[best.li].id;
    plan.head_right = kids[best.ri].id;
    plan.cut = best.cut;

    plan.left_tess = tess;
    plan.left_tess.hi = plan.cut;
    plan.left_tess.owner = plan.head_left;
    plan.right_tess = tess;
    plan.right_tess.lo = plan.cut;
    plan.right_tess.owner = plan.head_right;

    for (const auto& c : kids) {
        if (c.id == plan.head_left || c.id == plan.head_right)
            continue;
        if (c.id < plan.cut)
            plan.left_children.push_back(c.id);
        else
            plan.right_children.push_back(c.id);
    }
    return plan;
}

// ---------------------------------------------------------------------------

namespace {

// receiver-side mapping of a merged delta (see tables::merge_delta): rows
// that belong in the peer cache rather than a named table
void file_cache_rows(ProtocolEnv& env, NodeState& n, const TableDelta& d) {
    SimTime now = env.now();
    const SimTime ka = env.params().keepalive_interval;
    for (const auto& row : d.rows) {
        if (row.op == DeltaOp::Remove)
            continue;
        const TableEntry& e = row.entry;
        if (e.id == n.id)
            continue;
        if (row.tag == TableTag::Level0 || e.level < n.lvl ||
            (e.level == n.lvl + 1 && n.lvl == 0 && row.tag != TableTag::ParentNeighbor))
            cache_peer(n, e.id, e.level, now);
        if (row.tag == TableTag::Level0 && !n.tables.find(TableTag::Level0, e.id)) {
            // a level-0 peer this node cannot cover through a confirmed link
            // becomes a contact, keeping the chain whole as links shorten
            bool covered = false;
            for (const auto& f : n.tables.level0) {
                bool between =
                    (n.id < f.id && f.id < e.id) || (e.id < f.id && f.id < n.id);
                if (between && now <= f.last_active + 2 * ka) {
                    covered = true;
                    break;
                }
            }
            if (!covered)
                send_keepalive(env, n, e.id, e.level, 0);
        }
    }
}

// strip rows the generic merge should not touch (cache-bound rows)
TableDelta filter_for_merge(const NodeState& n, const TableDelta& d) {
    TableDelta out;
    out.origin = d.origin;
    out.since = d.since;
    for (const auto& row : d.rows) {
        if (row.op != DeltaOp::Remove) {
            const TableEntry& e = row.entry;
            if (e.id == n.id)
                continue;
            if (row.tag == TableTag::Level0 && n.lvl >= 0) {
                // another node's level-0 adjacency is a healing hint, not a link
                continue;
            }
            if (n.lvl == 0 && e.level == 1 && row.tag != TableTag::ParentNeighbor &&
                (!n.tables.parent || n.tables.parent->id != e.id)) {
                // a neighbour's level-1 parent; kept in the cache only
                continue;
            }
            if (e.level > n.lvl + 1 && d.origin != parent_of(n)) {
                continue; // deep ancestry is only trusted from the own parent
            }
            if (e.level == n.lvl + 1 && row.tag == TableTag::Superior)
                continue; // handled as Parent rows by the bus exchange
        }
        out.rows.push_back(row);
    }
    return out;
}

void apply_delta(ProtocolEnv& env, NodeState& n, const TableDelta& d) {
    file_cache_rows(env, n, d);
    TableDelta filtered = filter_for_merge(n, d);
    std::size_t sl_before = n.tables.same_level.size();
    MergeResult r = merge_delta(n.tables, filtered, n.lvl, env.now());
    if (n.tables.same_level.size() > sl_before)
        PTRACE("[%8.1f] %llu NEW-SAMELEVEL (lvl %d) from %llu\n", env.now() / 1000.0,
               (unsigned long long)n.id, n.lvl, (unsigned long long)d.origin);
    if (r.rejected)
        return;
    if (!r.forward_to_parent.empty()) {
        Pos p = parent_of(n);
        if (p != 0 && p != n.id) {
            auto fwd = std::make_shared<TableDelta>();
            fwd->origin = n.id;
            for (const auto& e : r.forward_to_parent)
                fwd->rows.push_back({TableTag::Parent, DeltaOp::Refresh, e});
            Message m;
            m.kind = MsgKind::TableDeltaMsg;
            m.src = n.id;
            m.dst = p;
            m.src_level = n.lvl;
            m.src_parent = p;
            m.delta = fwd;
            env.send(m);
        }
    }
}

void adopt_parent(ProtocolEnv& env, NodeState& n, Pos parent, int parent_level) {
    SimTime now = env.now();
    TableEntry e;
    e.id = parent;
    e.level = parent_level;
    e.source = parent;
    if (n.lvl == 0)
        upsert(n.tables, TableTag::Parent, e, now);
    upsert(n.tables, TableTag::Superior, e, now);
    n.forwarded_parents.clear();
    cancel_countdown(n);
    send_child_report(env, n, parent);
}

void handle_join(ProtocolEnv& env, NodeState& n, const Message& m) {
    if (m.hops > kJoinHopCap)
        return;
    const Pos target = m.target;

    // descend while some table entry is strictly closer to the joiner
    Pos next = 0;
    Dist self_d = distance_d(n.id, target);
    Dist next_d = self_d;
    auto offer = [&](Pos id) {
        if (id == target || id == n.id)
            return;
        Dist d = distance_d(id, target);
        if (d < next_d || (d == next_d && next != 0 && id < next)) {
            next = id;
            next_d = d;
        }
    };

    bool covering = n.tess && n.tess->contains(target);
    if (covering && n.lvl == 1) {
        // admit: adopt the joiner and hand it its two nearest peers
        SimTime now = env.now();
        TableEntry c;
        c.id = target;
        c.level = 0;
        c.source = target;
        upsert(n.tables, TableTag::Children, c, now);
        if (m.carries_profile)
            cache_peer_profile(n, target, 0, m.profile, now);

        NearestTwo nn(target);
        for (const auto& e : n.tables.children)
            nn.offer(e.id);
        for (const auto& e : n.tables.level0)
            nn.offer(e.id);
        for (const auto& s : n.tables.resources)
            nn.offer(s.id);
        nn.offer(n.id);

        Message ack;
        ack.kind = MsgKind::JoinAck;
        ack.src = n.id;
        ack.dst = target;
        ack.src_level = n.lvl;
        ack.src_parent = parent_of(n);
        ack.admit = true;
        auto d = std::make_shared<TableDelta>();
        d->origin = n.id;
        for (const auto& s : n.tables.superiors)
            d->rows.push_back({TableTag::Superior, DeltaOp::Refresh, s});
        BusAdjacency adj = bus_adjacency(n);
        for (const TableEntry* e : {adj.left, adj.right})
            if (e)
                d->rows.push_back({TableTag::ParentNeighbor, DeltaOp::Refresh, *e});
        for (Pos b : nn.take()) {
            TableEntry e;
            e.id = b;
            e.level = 0;
            e.last_modified = now;
            d->rows.push_back({TableTag::Level0, DeltaOp::Refresh, e});
        }
        ack.delta = d;
        env.send(ack);
        check_overflow(env, n);
        return;
    }

    if (covering && n.lvl >= 2) {
        for (const auto& e : n.tables.children)
            if (n.tess->contains(e.id))
                offer(e.id);
    } else if (n.lvl >= 1) {
        for (const auto& e : n.tables.same_level)
            offer(e.id);
        for (const auto& e : n.tables.children)
            offer(e.id);
        for (const auto& e : n.tables.superiors)
            offer(e.id);
    } else {
        for (const auto& e : n.tables.level0)
            offer(e.id);
        for (const auto& s : n.tables.resources)
            offer(s.id);
        if (next == 0 && parent_of(n) != 0)
            next = parent_of(n);
        if (next == 0 && n.join_bootstrap != 0 && n.join_bootstrap != n.id &&
            n.join_bootstrap != m.src && n.join_bootstrap != target)
            next = n.join_bootstrap; // a parentless pocket routes outward
    }

    if (next != 0) {
        Message fwd = m;
        fwd.dst = next;
        fwd.hops = m.hops + 1;
        env.send(fwd);
        return;
    }

    // landing fallback: reply with the best local view, without adoption
    Message ack;
    ack.kind = MsgKind::JoinAck;
    ack.src = n.id;
    ack.dst = target;
    ack.src_level = n.lvl;
    ack.src_parent = parent_of(n);
    auto d = std::make_shared<TableDelta>();
    d->origin = n.id;
    SimTime now = env.now();
    TableEntry mine = self_entry(n, now);
    mine.level = 0;
    d->rows.push_back({TableTag::Level0, DeltaOp::Refresh, mine});
    for (const auto& e : n.tables.level0) {
        TableEntry row = e;
        row.last_modified = now;
        d->rows.push_back({TableTag::Level0, DeltaOp::Refresh, row});
    }
    ack.delta = d;
    env.send(ack);
    if (m.carries_profile)
        cache_peer_profile(n, target, 0, m.profile, env.now());
}

void handle_join_ack(ProtocolEnv& env, NodeState& n, const Message& m) {
    if (n.joined)
        return;
    n.joined = true;
    SimTime now = env.now();
    cache_peer(n, m.src, m.src_level, now);
    if (m.src_parent != 0 && m.src_parent != n.id)
        cache_peer(n, m.src_parent, m.src_level + 1, now);
    if (m.admit && m.src_level == n.lvl + 1) {
        TableEntry e;
        e.id = m.src;
        e.level = m.src_level;
        e.source = m.src;
        upsert(n.tables, TableTag::Parent, e, now);
        upsert(n.tables, TableTag::Superior, e, now);
    }
    if (m.delta)
        apply_delta(env, n, *m.delta);
    // link to the two nearest peers named in the ack
    auto wanted = wanted_level0(n, now, env.params().entry_ttl);
    for (Pos w : wanted) {
        TableEntry e;
        e.id = w;
        e.level = 0;
        e.source = w;
        upsert(n.tables, TableTag::Level0, e, now);
        send_keepalive(env, n, w, 0, 0);
    }
    if (Pos p = parent_of(n); p != 0 && p != n.id)
        send_child_report(env, n, p);
    // greet the bootstrap too: a joiner is often the only node that knows
    // two ends of the network, and the exchange stitches them together
    if (n.join_bootstrap != 0 && n.join_bootstrap != m.src)
        send_keepalive(env, n, n.join_bootstrap, 0, 0);
}

// two same-level tessellation owners reconcile an overlap by re-tiling at
// the midpoint between them; a stale advert never overrides a newer cut
void reconcile_same_level(ProtocolEnv& env, NodeState& n, Pos peer, Pos peer_lo, Pos peer_hi,
                          SimTime peer_stamp) {
    if (!n.tess || peer_lo >= peer_hi)
        return;
    SimTime now = env.now();
    bool overlap = peer_lo < n.tess->hi && n.tess->lo < peer_hi;
    if (!overlap)
        return;
    if (peer_stamp < n.tess_set_at)
        return;
    // only adjacent owners re-tile; a distant claim is reconciled by the
    // nodes actually flanking it
    for (const auto& f : n.tables.same_level)
        if ((n.id < f.id && f.id < peer) || (peer < f.id && f.id < n.id))
            return;
    Pos mid = peer < n.id ? midpoint_right(peer, n.id) : midpoint_right(n.id, peer);
    bool changed = false;
    if (peer < n.id) {
        if (n.tess->lo < mid) {
            n.tess->lo = mid;
            changed = true;
        }
    } else {
        if (n.tess->hi > mid) {
            n.tess->hi = mid;
            changed = true;
        }
    }
    if (changed)
        n.tess_set_at = now;
    std::vector<Pos> out;
    for (const auto& c : n.tables.children)
        if (c.source == c.id && !n.tess->contains(c.id))
            out.push_back(c.id);
    for (Pos c : out) {
        remove_child_row(n, c, now);
        shed_child(env, n, c, peer);
    }
}

void handle_keepalive(ProtocolEnv& env, NodeState& n, const Message& m) {
    SimTime now = env.now();
    const ProtocolParams& pp = env.params();
    bool known = n.tables.contains_id(m.src) || find_resource(n.tables, m.src) != nullptr;

    if (m.carries_profile)
        cache_peer_profile(n, m.src, m.src_level, m.profile, now);
    else
        cache_peer(n, m.src, m.src_level, now);
    // parent knowledge rides on the keep-alive header
    if (m.src_parent == 0)
        n.parentless_seen.insert(m.src);
    else
        n.parentless_seen.erase(m.src);

    // the link itself: a level-0 keep-alive records the sender as a level-0
    // neighbour for as long as it keeps interacting; a bus keep-alive as a
    // same-level neighbour
    TableEntry e;
    e.id = m.src;
    e.level = m.src_level;
    e.source = m.src;
    if (m.link_kind == 0)
        refresh_or_upsert(n.tables, TableTag::Level0, e, now);
    if (m.src_level == n.lvl && n.lvl >= 1) {
        refresh_or_upsert(n.tables, TableTag::SameLevel, e, now);
        if (m.tess_hi > m.tess_lo)
            reconcile_same_level(env, n, m.src, m.tess_lo, m.tess_hi, m.tess_stamp);
    }

    touch(n.tables, m.src, now);
    touch_sourced(n.tables, m.src, now);
    if (m.delta)
        apply_delta(env, n, *m.delta);

    // a parent that changed rank is no longer our parent
    if (parent_of(n) == m.src && m.src_level != n.lvl + 1) {
        if (n.lvl == 0)
            n.tables.parent.reset();
        auto& sup = n.tables.superiors;
        for (auto it = sup.begin(); it != sup.end(); ++it)
            if (it->level == n.lvl + 1) {
                sup.erase(it);
                break;
            }
    }

    if (!m.intro) {
        bool wanted = false;
        if (m.link_kind == 0) {
            for (Pos w : wanted_level0(n, now, pp.entry_ttl))
                if (w == m.src)
                    wanted = true;
        } else {
            BusAdjacency adj = bus_adjacency(n);
            wanted = (adj.left && adj.left->id == m.src) ||
                     (adj.right && adj.right->id == m.src);
        }
        if (!known || !wanted) {
            // first contact exchanges resources and state; a one-sided link
            // is acknowledged so the peer's entry stays fresh
            Message r;
            r.kind = MsgKind::Keepalive;
            r.src = n.id;
            r.dst = m.src;
            r.src_level = n.lvl;
            r.src_parent = parent_of(n);
            r.intro = true;
            r.carries_profile = !known;
            if (!known)
                r.profile = n.profile;
            r.link_kind = m.link_kind;
            r.delta = compose_link_delta(n, m.src, m.src_level, m.link_kind, now);
            env.send(r);
        }
    }

    // a neighbour's foreign parent is recorded and forwarded to our own
    // parent, linking adjacent subtrees into one hierarchy
    if (m.src_parent != 0 && m.src_parent != n.id && m.src_level == n.lvl) {
        cache_peer(n, m.src_parent, m.src_level + 1, now);
        Pos own = parent_of(n);
        if (own == 0) {
            // a parentless node adopts through a neighbour's parent
            send_child_report(env, n, m.src_parent);
        } else if (own != n.id && own != m.src_parent &&
                   !n.forwarded_parents.count(m.src_parent)) {
            PTRACE("[%8.1f] %llu FWD-PARENT %llu (of %llu) to own parent %llu\n",
                   now / 1000.0, (unsigned long long)n.id, (unsigned long long)m.src_parent,
                   (unsigned long long)m.src, (unsigned long long)own);
            n.forwarded_parents.insert(m.src_parent);
            auto fwd = std::make_shared<TableDelta>();
            fwd->origin = n.id;
            TableEntry pe;
            pe.id = m.src_parent;
            pe.level = m.src_level + 1;
            pe.last_modified = now;
            pe.source = m.src;
            fwd->rows.push_back({TableTag::Parent, DeltaOp::Refresh, pe});
            Message f;
            f.kind = MsgKind::TableDeltaMsg;
            f.src = n.id;
            f.dst = own;
            f.src_level = n.lvl;
            f.src_parent = own;
            f.delta = fwd;
            env.send(f);
        }
    }
}

void shed_child(ProtocolEnv& env, NodeState& n, Pos child, Pos hint) {
    Message m;
    m.kind = MsgKind::DemoteNotice;
    m.src = n.id;
    m.dst = child;
    m.src_level = n.lvl;
    m.hint = hint;
    env.send(m);
}

void handle_child_report(ProtocolEnv& env, NodeState& n, const Message& m) {
    SimTime now = env.now();
    if (m.carries_profile)
        cache_peer_profile(n, m.src, m.src_level, m.profile, now);

    if (n.lvl > m.src_level + 1 && n.tess && own_children_count(n) > 0) {
        // a lower-ranked node looking for a home: descend toward the level
        // that can adopt it
        Pos down = 0;
        Dist dd = std::numeric_limits<Dist>::max();
        for (const auto& c : n.tables.children) {
            if (c.source != c.id || !n.tess->contains(c.id))
                continue;
            Dist d = distance_d(c.id, m.src);
            if (d < dd || (d == dd && c.id < down)) {
                down = c.id;
                dd = d;
            }
        }
        Message fwd = m;
        fwd.dst = down;
        fwd.hops = m.hops + 1;
        if (fwd.dst != 0 && fwd.hops <= 64)
            env.send(fwd);
        return;
    }
    if (n.lvl != m.src_level + 1 || !n.tess) {
        // stale parenthood: tell the reporter where we stand
        Message r;
        r.kind = MsgKind::Keepalive;
        r.src = n.id;
        r.dst = m.src;
        r.src_level = n.lvl;
        r.src_parent = parent_of(n);
        r.intro = true;
        env.send(r);
        return;
    }

    if (!n.tess->contains(m.src)) {
        // hand the reporter to a strictly nearer bus neighbour, otherwise
        // extend own range over the uncovered gap
        BusAdjacency adj = bus_adjacency(n);
        const TableEntry* toward = m.src < n.tess->lo ? adj.left : adj.right;
        Dist mine = distance_d(n.id, m.src);
        bool neighbour_nearer =
            toward && (distance_d(toward->id, m.src) < mine ||
                       (distance_d(toward->id, m.src) == mine && toward->id < n.id));
        if (neighbour_nearer) {
            Message fwd = m;
            fwd.dst = toward->id;
            fwd.hops = m.hops + 1;
            if (fwd.hops <= 64)
                env.send(fwd);
            return;
        }
        if (m.src < n.tess->lo)
            n.tess->lo = m.src;
        else
            n.tess->hi = m.src + 1;
        n.tess_set_at = env.now();
    }

    TableEntry c;
    c.id = m.src;
    c.level = m.src_level;
    c.source = m.src;
    refresh_or_upsert(n.tables, TableTag::Children, c, now);
    touch_sourced(n.tables, m.src, now);

    Message ack;
    ack.kind = MsgKind::TableDeltaMsg;
    ack.src = n.id;
    ack.dst = m.src;
    ack.src_level = n.lvl;
    ack.src_parent = parent_of(n);
    ack.admit = true;
    ack.delta = compose_parent_ack(n, m.src, now);
    env.send(ack);

    check_overflow(env, n);
}

void handle_table_delta(ProtocolEnv& env, NodeState& n, const Message& m) {
    SimTime now = env.now();
    touch(n.tables, m.src, now);
    touch_sourced(n.tables, m.src, now);
    cache_peer(n, m.src, m.src_level, now);
    if (m.admit && m.src_level == n.lvl + 1) {
        TableEntry e;
        e.id = m.src;
        e.level = m.src_level;
        e.source = m.src;
        if (n.lvl == 0)
            upsert(n.tables, TableTag::Parent, e, now);
        upsert(n.tables, TableTag::Superior, e, now);
    }
    if (m.delta)
        apply_delta(env, n, *m.delta);
}

void handle_parent_announce(ProtocolEnv& env, NodeState& n, const Message& m) {
    SimTime now = env.now();
    Tessellation t;
    t.owner = m.src;
    t.level = m.new_level;
    t.lo = m.tess_lo;
    t.hi = m.tess_hi;
    cache_peer(n, m.src, m.new_level, now);
    n.parentless_seen.erase(m.src);
    if (m.new_level == n.lvl || m.new_level == n.lvl + 1) {
        n.last_rival_claim = now;
        if (n.cd == CountdownKind::Election)
            cancel_countdown(n); // someone nearby was elected during the countdown
    }

    if (m.new_level == n.lvl + 1 && t.contains(n.id)) {
        Pos cur = parent_of(n);
        PTRACE("[%8.1f] %llu ADOPT-ANNOUNCE from %llu (cur=%llu)\n", now / 1000.0,
               (unsigned long long)n.id, (unsigned long long)m.src, (unsigned long long)cur);
        if (cur != m.src)
            adopt_parent(env, n, m.src, m.new_level);
        return;
    }
    if (m.new_level == n.lvl + 1)
        PTRACE("[%8.1f] %llu DECLINE-ANNOUNCE from %llu lvl=%d tess=[%llu,%llu) me=%llu\n",
               now / 1000.0, (unsigned long long)n.id, (unsigned long long)m.src, m.new_level,
               (unsigned long long)m.tess_lo, (unsigned long long)m.tess_hi,
               (unsigned long long)n.id);

    if (m.new_level == n.lvl && n.tess) {
        // simultaneous claims resolve by id: the lower claimant survives
        if (m.claim_time != 0 && m.claim_time == n.last_claim_time && n.id > m.src) {
            PTRACE("[%8.1f] %llu RESCIND lvl %d to %llu\n", now / 1000.0,
                   (unsigned long long)n.id, n.lvl, (unsigned long long)m.src);
            bool covers_me = t.contains(n.id);
            vacate_level(env, n, 0);
            become_ordinary(env, n);
            if (covers_me && m.new_level == 1)
                adopt_parent(env, n, m.src, m.new_level);
            return;
        }
        // a peer appeared at my level: register it and reconcile any
        // tessellation overlap
        TableEntry e;
        e.id = m.src;
        e.level = m.new_level;
        e.source = m.src;
        upsert(n.tables, TableTag::SameLevel, e, now);
        reconcile_same_level(env, n, m.src, m.tess_lo, m.tess_hi, m.tess_stamp);
    }
}

void handle_election_claim(ProtocolEnv& env, NodeState& n, const Message& m) {
    // absorb-claim between two parentless peers: comply unless our own claim
    // wins the lower-id tie-break
    if (n.lvl < 1 || n.lvl != m.src_level)
        return;
    if (parent_of(n) != 0)
        return; // no longer parentless; the claimant will learn via keep-alives
    bool we_win = n.claim_outstanding && n.id < m.src;
    if (we_win)
        return;
    SimTime now = env.now();
    PTRACE("[%8.1f] %llu ABSORBED-BY %llu at lvl %d\n", now / 1000.0,
           (unsigned long long)n.id, (unsigned long long)m.src, n.lvl);
    env.note_structural_event();

    Message comply;
    comply.kind = MsgKind::DemoteNotice;
    comply.src = n.id;
    comply.dst = m.src;
    comply.src_level = n.lvl;
    comply.tess_lo = n.tess ? n.tess->lo : 0;
    comply.tess_hi = n.tess ? n.tess->hi : 0;
    auto d = std::make_shared<TableDelta>();
    d->origin = n.id;
    for (const auto& c : n.tables.children)
        if (n.tess && c.source == c.id && n.tess->contains(c.id)) {
            TableEntry row = c;
            row.last_modified = now;
            d->rows.push_back({TableTag::Children, DeltaOp::Refresh, row});
        }
    comply.delta = d;
    env.send(comply);

    for (const auto& c : n.tables.children)
        if (n.tess && c.source == c.id && n.tess->contains(c.id))
            shed_child(env, n, c.id, m.src);

    become_ordinary(env, n);
}

void handle_demote_notice(ProtocolEnv& env, NodeState& n, const Message& m) {
    SimTime now = env.now();
    if (m.src_level == n.lvl && m.delta) {
        // an absorbed peer hands over its children and range
        if (n.tess) {
            if (m.tess_lo < n.tess->lo)
                n.tess->lo = m.tess_lo;
            if (m.tess_hi > n.tess->hi)
                n.tess->hi = m.tess_hi;
            n.tess_set_at = now;
        }
        for (const auto& row : m.delta->rows)
            if (row.tag == TableTag::Children && row.op != DeltaOp::Remove) {
                TableEntry e = row.entry;
                e.source = e.id;
                upsert(n.tables, TableTag::Children, e, now);
            }
        n.claim_outstanding = false;
        // the absorbed peer is gone from this level
        auto& v = n.tables.same_level;
        for (auto it = v.begin(); it != v.end(); ++it)
            if (it->id == m.src) {
                v.erase(it);
                break;
            }
        check_overflow(env, n);
        env.note_structural_event();
        return;
    }

    if (m.src_level == n.lvl + 1) {
        // our parent dropped us (demotion or re-tile): re-home
        if (n.lvl == 0)
            n.tables.parent.reset();
        auto& v = n.tables.superiors;
        for (auto it = v.begin(); it != v.end(); ++it)
            if (it->level == n.lvl + 1) {
                v.erase(it);
                break;
            }
        if (m.hint != 0 && m.hint != n.id)
            send_child_report(env, n, m.hint);
        return;
    }

    if (m.src_level == n.lvl - 1) {
        // a child left its level
        remove_child_row(n, m.src, now);
        return;
    }
}

void handle_promote(ProtocolEnv& env, NodeState& n, const Message& m) {
    SimTime now = env.now();
    PTRACE("[%8.1f] %llu PROMOTED lvl %d -> %d by %llu\n", now / 1000.0,
           (unsigned long long)n.id, n.lvl, m.new_level, (unsigned long long)m.src);
    env.note_structural_event();

    if (n.lvl >= 1 && n.tess) {
        // leaving the current level: hand the old children to the
        // surviving bus neighbours before taking the new role
        vacate_level(env, n, 0);
        if (Pos p = parent_of(n); p != 0 && p != n.id) {
            Message bye;
            bye.kind = MsgKind::DemoteNotice;
            bye.src = n.id;
            bye.dst = p;
            bye.src_level = n.lvl;
            env.send(bye);
        }
    }

    int new_level = m.new_level;
    Tessellation t;
    t.owner = n.id;
    t.level = new_level;
    t.lo = m.tess_lo;
    t.hi = m.tess_hi;

    n.lvl = new_level;
    n.tess = t;
    n.tess_set_at = now;
    n.tables.same_level.clear();
    n.tables.children.clear();
    n.tables.parent_neighbors.clear();
    n.forwarded_parents.clear();
    upsert(n.tables, TableTag::Parent, self_entry(n, now), now); // elevated: self

    // superiors: keep only levels above the new one, then adopt the hint
    auto& sup = n.tables.superiors;
    sup.erase(std::remove_if(sup.begin(), sup.end(),
                             [&](const TableEntry& e) { return e.level <= new_level; }),
              sup.end());

    if (m.delta) {
        for (const auto& row : m.delta->rows) {
            if (row.op == DeltaOp::Remove)
                continue;
            TableEntry e = row.entry;
            if (row.tag == TableTag::Children) {
                e.source = e.id;
                upsert(n.tables, TableTag::Children, e, now);
            } else if (row.tag == TableTag::SameLevel && e.id != n.id) {
                e.source = e.id;
                upsert(n.tables, TableTag::SameLevel, e, now);
            }
        }
    }

    if (m.hint != 0 && m.hint != n.id) {
        TableEntry e;
        e.id = m.hint;
        e.level = new_level + 1;
        e.source = m.hint;
        upsert(n.tables, TableTag::Superior, e, now);
        send_child_report(env, n, m.hint);
    }

    cancel_countdown(n);
    // tell the children they belong to us now
    for (const auto& c : n.tables.children)
        if (t.contains(c.id))
            announce_parenthood(env, n, c.id);
}

void become_ordinary(ProtocolEnv& env, NodeState& n) {
    SimTime now = env.now();
    // goodbye to bus neighbours so they splice around us
    BusAdjacency adj = bus_adjacency(n);
    for (const TableEntry* e : {adj.left, adj.right}) {
        if (!e)
            continue;
        auto d = std::make_shared<TableDelta>();
        d->origin = n.id;
        TableEntry me;
        me.id = n.id;
        me.last_modified = now;
        d->rows.push_back({TableTag::SameLevel, DeltaOp::Remove, me});
        Message m;
        m.kind = MsgKind::TableDeltaMsg;
        m.src = n.id;
        m.dst = e->id;
        m.src_level = n.lvl;
        m.delta = d;
        env.send(m);
    }
    // leave the old parent
    if (Pos p = parent_of(n); p != 0 && p != n.id) {
        Message bye;
        bye.kind = MsgKind::DemoteNotice;
        bye.src = n.id;
        bye.dst = p;
        bye.src_level = n.lvl;
        env.send(bye);
    }

    n.lvl = 0;
    n.tess.reset();
    n.tables.same_level.clear();
    n.tables.children.clear();
    n.tables.superiors.clear();
    n.tables.parent.reset();
    n.tables.parent_neighbors.clear();
    n.forwarded_parents.clear();
    cancel_countdown(n);
    n.claim_outstanding = false;
    env.note_structural_event();
}

void vacate_level(ProtocolEnv& env, NodeState& n, Pos exclude) {
    // re-home every owned child to the nearest surviving bus neighbour, or
    // failing that to any cached same-level peer
    BusAdjacency adj = bus_adjacency(n);
    for (const auto& c : n.tables.children) {
        if (!n.tess || c.source != c.id || !n.tess->contains(c.id) || c.id == exclude)
            continue;
        Pos hint = 0;
        Dist hd = std::numeric_limits<Dist>::max();
        for (const TableEntry* e : {adj.left, adj.right}) {
            if (!e)
                continue;
            Dist d = distance_d(e->id, c.id);
            if (d < hd || (d == hd && e->id < hint)) {
                hint = e->id;
                hd = d;
            }
        }
        if (hint == 0) {
            for (const auto& s : n.tables.resources) {
                if (s.id == n.id || s.level != n.lvl)
                    continue;
                Dist d = distance_d(s.id, c.id);
                if (d < hd || (d == hd && s.id < hint)) {
                    hint = s.id;
                    hd = d;
                }
            }
        }
        shed_child(env, n, c.id, hint);
    }
}

void fire_election(ProtocolEnv& env, NodeState& n) {
    const ProtocolParams& pp = env.params();
    SimTime now = env.now();
    if (parent_of(n) != 0)
        return;
    if (n.last_rival_claim != 0 && now < n.last_rival_claim + 2 * pp.keepalive_interval)
        return; // another node was elected nearby; re-evaluate after adopting

    // visible parentless peers at my level
    std::vector<Pos> parentless;
    for (const auto& s : n.tables.resources) {
        if (s.id == n.id || s.level != n.lvl)
            continue;
        if (!fresh_enough(now, s.last_heard, pp.entry_ttl))
            continue;
        if (n.parentless_seen.count(s.id))
            parentless.push_back(s.id);
    }

    if (n.lvl == 0 && (n.tables.level0.size() < 2 || parentless.size() < 2))
        return; // a lone parentless pair waits for a covering parent instead
    if (n.lvl == 0 && hierarchy_evidence(n, now, pp.entry_ttl))
        return;
    if (n.lvl >= 1 && own_children_count(n) < 2)
        return;
    if (parentless.empty())
        return;

    if (n.lvl >= 1) {
        // root merge: absorb the nearest parentless peer's children and
        // range; repeated pairwise absorption leaves a single root, and the
        // root lift regrows height when the merged range overfills
        Pos target = parentless.front();
        Dist td = distance_d(target, n.id);
        for (Pos p : parentless) {
            Dist d = distance_d(p, n.id);
            if (d < td || (d == td && p < target)) {
                target = p;
                td = d;
            }
        }
        PTRACE("[%8.1f] %llu ABSORB-CLAIM at lvl %d -> %llu\n", now / 1000.0,
               (unsigned long long)n.id, n.lvl, (unsigned long long)target);
        Message m;
        m.kind = MsgKind::ElectionClaim;
        m.src = n.id;
        m.dst = target;
        m.src_level = n.lvl;
        m.claim_time = now;
        env.send(m);
        n.claim_outstanding = true;
        n.claim_sent_at = now;
        env.note_structural_event();
        return;
    }

    // promote-claim: rise one level and announce to the group
    PTRACE("[%8.1f] %llu PROMOTE-CLAIM lvl %d -> %d (peers=%zu children=%d)\n",
           now / 1000.0, (unsigned long long)n.id, n.lvl, n.lvl + 1, parentless.size(),
           own_children_count(n));
    env.note_structural_event();
    Tessellation t;
    t.owner = n.id;
    t.level = n.lvl + 1;
    t.lo = 0;
    t.hi = pp.space;
    // clip against known peers already at the target level
    for (const auto& s : n.tables.resources) {
        if (s.level != n.lvl + 1 || !fresh_enough(now, s.last_heard, pp.entry_ttl))
            continue;
        if (s.id < n.id)
            t.lo = std::max(t.lo, midpoint_right(s.id, n.id));
        else if (s.id > n.id)
            t.hi = std::min(t.hi, midpoint_right(n.id, s.id));
    }

    if (n.lvl >= 1)
        vacate_level(env, n, 0);

    std::vector<Pos> audience = parentless;
    if (n.lvl == 0) {
        for (const auto& e : n.tables.level0)
            audience.push_back(e.id);
    } else {
        for (const auto& e : n.tables.same_level)
            audience.push_back(e.id);
    }
    std::sort(audience.begin(), audience.end());
    audience.erase(std::unique(audience.begin(), audience.end()), audience.end());

    n.lvl += 1;
    n.tess = t;
    n.tess_set_at = now;
    n.last_claim_time = now;
    n.tables.same_level.clear();
    n.tables.children.clear();
    n.tables.parent_neighbors.clear();
    auto& sup = n.tables.superiors;
    sup.erase(std::remove_if(sup.begin(), sup.end(),
                             [&](const TableEntry& e) { return e.level <= n.lvl; }),
              sup.end());
    upsert(n.tables, TableTag::Parent, self_entry(n, now), now);

    for (Pos a : audience)
        announce_parenthood(env, n, a);
}

void fire_demotion(ProtocolEnv& env, NodeState& n) {
    if (n.lvl < 1)
        return;
    if (own_children_count(n) >= 2)
        return;
    PTRACE("[%8.1f] %llu DEMOTE from lvl %d (children=%d)\n", env.now() / 1000.0,
           (unsigned long long)n.id, n.lvl, own_children_count(n));
    if (g_trace) {
        for (const auto& c : n.tables.children)
            std::fprintf(stderr, "      row %llu src=%llu la=%.1f own=%d\n",
                         (unsigned long long)c.id, (unsigned long long)c.source,
                         c.last_active / 1000.0,
                         (c.source == c.id && n.tess && n.tess->contains(c.id)) ? 1 : 0);
        if (n.tess)
            std::fprintf(stderr, "      tess=[%llu,%llu)\n", (unsigned long long)n.tess->lo,
                         (unsigned long long)n.tess->hi);
    }
    env.note_structural_event();
    vacate_level(env, n, 0);
    become_ordinary(env, n);
}

} // namespace

void start_join(ProtocolEnv& env, NodeState& self, Pos bootstrap) {
    if (bootstrap == 0) {
        self.joined = true; // first node of the network
        return;
    }
    self.join_bootstrap = bootstrap;
    ++self.join_attempts;
    Message m;
    m.kind = MsgKind::Join;
    m.src = self.id;
    m.dst = bootstrap;
    m.src_level = 0;
    m.target = self.id;
    m.carries_profile = true;
    m.profile = self.profile;
    env.send(m);
    env.schedule_timer(self.id, TimerKind::JoinRetry,
                       env.now() + 4 * env.params().keepalive_interval, self.join_attempts);
}

void handle_message(ProtocolEnv& env, NodeState& self, const Message& m) {
    switch (m.kind) {
    case MsgKind::Join: handle_join(env, self, m); break;
    case MsgKind::JoinAck: handle_join_ack(env, self, m); break;
    case MsgKind::Keepalive: handle_keepalive(env, self, m); break;
    case MsgKind::TableDeltaMsg: handle_table_delta(env, self, m); break;
    case MsgKind::ChildReport: handle_child_report(env, self, m); break;
    case MsgKind::ParentAnnounce: handle_parent_announce(env, self, m); break;
    case MsgKind::ElectionClaim: handle_election_claim(env, self, m); break;
    case MsgKind::DemoteNotice: handle_demote_notice(env, self, m); break;
    case MsgKind::Promote: handle_promote(env, self, m); break;
    default:
        ++g_dropped_unknown;
        break;
    }
}

void handle_timer(ProtocolEnv& env, NodeState& self, TimerKind kind, std::uint64_t epoch) {
    if (!self.alive)
        return;
    switch (kind) {
    case TimerKind::Keepalive:
        keepalive_tick(env, self);
        env.schedule_timer(self.id, TimerKind::Keepalive,
                           env.now() + env.params().keepalive_interval, 0);
        break;
    case TimerKind::Countdown:
        if (epoch != self.cd_epoch || self.cd == CountdownKind::None)
            return;
        if (self.cd == CountdownKind::Election) {
            self.cd = CountdownKind::None;
            fire_election(env, self);
        } else {
            self.cd = CountdownKind::None;
            fire_demotion(env, self);
        }
        break;
    case TimerKind::JoinRetry:
        if (self.joined)
            return;
        if (static_cast<int>(epoch) != self.join_attempts)
            return;
        if (self.join_attempts >= kJoinRetries)
            return; // join failed visibly: node stays isolated
        start_join(env, self, env.pick_bootstrap(self.join_bootstrap));
        break;
    }
}

void trigger_election(ProtocolEnv& env, NodeState& self) {
    const ProtocolParams& pp = env.params();
    bool parentless = parent_of(self) == 0;
    // degree-2 rule at level 0; an elevated node must hold enough children
    // to justify its rank, otherwise the demotion path owns it
    bool eligible = parentless && (self.lvl == 0 ? self.tables.level0.size() >= 2
                                                 : own_children_count(self) >= 2);
    // a node that knows of a live hierarchy joins it instead of founding
    // a rival one
    if (eligible && self.lvl == 0 && hierarchy_evidence(self, env.now(), pp.entry_ttl))
        eligible = false;
    bool has_peer = false;
    if (eligible) {
        SimTime now = env.now();
        for (Pos p : self.parentless_seen) {
            const ProfileSnapshot* s = find_resource(self.tables, p);
            if (s && s->level == self.lvl && fresh_enough(now, s->last_heard, pp.entry_ttl)) {
                has_peer = true;
                break;
            }
        }
    }
    if (eligible && has_peer) {
        if (self.cd == CountdownKind::None) {
            ++self.cd_round;
            SimTime j = det_jitter(pp.seed, self.id, 0xe1ec + self.cd_round, pp.jitter_span);
            start_countdown(env, self, CountdownKind::Election,
                            election_countdown_duration(self.score, pp.t_elect_base, j));
        }
    } else if (self.cd == CountdownKind::Election) {
        cancel_countdown(self);
    }
}

void demotion_tick(ProtocolEnv& env, NodeState& self) {
    const ProtocolParams& pp = env.params();
    if (self.lvl >= 1 && own_children_count(self) < 2) {
        // a fresh claimant gets a grace period to gather its children
        if (env.now() < self.last_claim_time + 2 * pp.keepalive_interval)
            return;
        if (self.cd == CountdownKind::None) {
            ++self.cd_round;
            SimTime j = det_jitter(pp.seed, self.id, 0xde30 + self.cd_round, pp.jitter_span);
            start_countdown(env, self, CountdownKind::Demotion,
                            demotion_countdown_duration(self.score, pp.t_demote_base, j));
        }
    } else if (self.cd == CountdownKind::Demotion) {
        cancel_countdown(self);
    }
}

void keepalive_tick(ProtocolEnv& env, NodeState& self) {
    if (!self.alive)
        return;
    const ProtocolParams& pp = env.params();
    SimTime now = env.now();

    SweepResult sw = expire_sweep(self.tables, now, pp.entry_ttl);
    for (auto& [tag, id] : sw.removed) {
        (void)tag;
        // an expired link is evidence of death: forget the cached peer too
        auto& res = self.tables.resources;
        for (auto it = res.begin(); it != res.end(); ++it)
            if (it->id == id) {
                res.erase(it);
                break;
            }
        self.parentless_seen.erase(id);
    }
    if (sw.parent_lost && self.lvl == 0) {
        if (Pos cand = find_parent_candidate(self, now, pp.entry_ttl))
            send_child_report(env, self, cand);
    }
    // a node still looking for its place keeps every contact it ever made
    if (parent_of(self) != 0)
        prune_resources(self.tables, now, 4 * pp.entry_ttl);

    // level-0 links: the two nearest peers, plus every existing link not
    // yet covered by a confirmed node strictly between us. Links only ever
    // shorten, which keeps the level-0 fabric connected while it rewires.
    auto wanted = wanted_level0(self, now, pp.entry_ttl);
    for (Pos w : wanted) {
        TableEntry e;
        e.id = w;
        e.level = 0;
        e.source = w;
        if (!self.tables.find(TableTag::Level0, w))
            upsert(self.tables, TableTag::Level0, e, now);
    }
    std::vector<Pos> targets = wanted;
    for (const auto& e : self.tables.level0) {
        const TableEntry* cover = nullptr;
        for (const auto& f : self.tables.level0) {
            if (f.id == e.id)
                continue;
            bool between = (self.id < f.id && f.id < e.id) || (e.id < f.id && f.id < self.id);
            if (between && now <= f.last_active + 2 * pp.keepalive_interval) {
                if (!cover || distance_d(f.id, e.id) < distance_d(cover->id, e.id))
                    cover = &f;
            }
        }
        if (!cover) {
            targets.push_back(e.id);
        } else {
            // hand the link inward so the chain never tears while it shortens
            auto d = std::make_shared<TableDelta>();
            d->origin = self.id;
            TableEntry row = e;
            row.last_modified = now;
            d->rows.push_back({TableTag::Level0, DeltaOp::Refresh, row});
            Message h;
            h.kind = MsgKind::TableDeltaMsg;
            h.src = self.id;
            h.dst = cover->id;
            h.src_level = self.lvl;
            h.src_parent = parent_of(self);
            h.delta = d;
            env.send(h);
        }
    }
    std::sort(targets.begin(), targets.end());
    targets.erase(std::unique(targets.begin(), targets.end()), targets.end());
    for (Pos w : targets)
        send_keepalive(env, self, w, 0, 0);

    // bus links, plus a first exchange with any same-level peer just
    // learned about: its reply carries the neighbourhood that slots it
    // into the right place on the bus
    if (self.lvl >= 1) {
        // the same-level table keeps the direct and indirect bus neighbours
        // plus entries vouched by level-0 links; drop drifting extras
        auto& sl = self.tables.same_level;
        std::vector<Pos> keep;
        {
            std::vector<Pos> left, right;
            for (const auto& e : sl)
                (e.id < self.id ? left : right).push_back(e.id);
            std::sort(left.begin(), left.end());
            std::sort(right.begin(), right.end());
            for (std::size_t i = 0; i < left.size() && i < 2; ++i)
                keep.push_back(left[left.size() - 1 - i]);
            for (std::size_t i = 0; i < right.size() && i < 2; ++i)
                keep.push_back(right[i]);
        }
        auto vouched_by_level0 = [&](const TableEntry& e) {
            return self.tables.find(TableTag::Level0, e.source) != nullptr ||
                   e.source == e.id;
        };
        sl.erase(std::remove_if(sl.begin(), sl.end(),
                                [&](const TableEntry& e) {
                                    if (std::find(keep.begin(), keep.end(), e.id) != keep.end())
                                        return false;
                                    if (vouched_by_level0(e) &&
                                        now <= e.last_active + 2 * pp.keepalive_interval)
                                        return false;
                                    return true;
                                }),
                 sl.end());

        BusAdjacency adj = bus_adjacency(self);
        for (const TableEntry* e : {adj.left, adj.right})
            if (e)
                send_keepalive(env, self, e->id, self.lvl, 1);
        std::uint64_t bus_phase = (now / pp.keepalive_interval + self.id) % 4;
        for (const auto& e : self.tables.same_level) {
            bool is_adj = (adj.left && adj.left->id == e.id) ||
                          (adj.right && adj.right->id == e.id);
            if (!is_adj && (is_first_contact(self, e.id) || bus_phase == 0))
                send_keepalive(env, self, e.id, self.lvl, 1);
        }
    }

    // report to the parent
    if (Pos p = parent_of(self); p != 0 && p != self.id) {
        self.orphan_ticks = 0;
        send_child_report(env, self, p);
    } else if (parent_of(self) == 0) {
        ++self.orphan_ticks;
        if (self.lvl >= 1 && self.orphan_ticks > 12 &&
            find_parent_candidate(self, now, pp.entry_ttl) == 0 &&
            self.parentless_seen.empty()) {
            // an isolated elevated node gives up its rank and rejoins from
            // below; the hierarchy regrows height at the root when needed
            self.orphan_ticks = 0;
            vacate_level(env, self, 0);
            become_ordinary(env, self);
            return;
        }
        if (self.lvl == 0 && self.orphan_ticks > 8) {
            // stranded: run the whole admission protocol again, alternating
            // between the original bootstrap and the nearest known contact
            ++self.cd_round;
            Pos boot = 0;
            if (self.cd_round % 2 == 0 && self.join_bootstrap != 0 &&
                self.join_bootstrap != self.id) {
                boot = self.join_bootstrap;
            } else {
                Dist bd = std::numeric_limits<Dist>::max();
                for (const auto& r : self.tables.resources) {
                    if (r.id == self.id)
                        continue;
                    Dist d = distance_d(r.id, self.id);
                    if (d < bd || (d == bd && r.id < boot)) {
                        boot = r.id;
                        bd = d;
                    }
                }
            }
            if (boot != 0) {
                self.orphan_ticks = 0;
                self.joined = false;
                start_join(env, self, boot);
            }
        }
        if (Pos cand = find_parent_candidate(self, now, pp.entry_ttl)) {
            send_child_report(env, self, cand);
        } else {
            // marooned: the original bootstrap is a lifeline into whatever
            // grew elsewhere, and dormant contacts widen the search
            if (self.join_bootstrap != 0 && self.join_bootstrap != self.id &&
                !self.tables.find(TableTag::Level0, self.join_bootstrap))
                send_keepalive(env, self, self.join_bootstrap, 0, 0);
            Pos probe = 0;
            Dist pd = std::numeric_limits<Dist>::max();
            for (const auto& r : self.tables.resources) {
                if (r.id == self.id || r.id == self.join_bootstrap ||
                    self.tables.find(TableTag::Level0, r.id))
                    continue;
                Dist d = distance_d(r.id, self.id);
                if (d < pd || (d == pd && r.id < probe)) {
                    probe = r.id;
                    pd = d;
                }
            }
            if (probe != 0)
                send_keepalive(env, self, probe, 0, 0);
        }
    }

    // standing long-range contact with the original bootstrap: a slow
    // drumbeat normally, every round while the node has no parent, so that
    // separately grown regions always find each other
    if (self.join_bootstrap != 0 && self.join_bootstrap != self.id) {
        std::uint64_t phase = (now / pp.keepalive_interval + self.id) % 8;
        if (phase == 0 || parent_of(self) == 0)
            send_keepalive(env, self, self.join_bootstrap, 0, 0);
    }

    if (self.claim_outstanding && now > self.claim_sent_at + 4 * pp.keepalive_interval)
        self.claim_outstanding = false;

    // slow re-advertisement cadence for foreign parent entries
    if (now > self.last_forward_reset + 8 * pp.keepalive_interval) {
        self.forwarded_parents.clear();
        self.last_forward_reset = now;
    }

    trigger_election(env, self);
    demotion_tick(env, self);
    check_overflow(env, self);
}

} // namespace treep
