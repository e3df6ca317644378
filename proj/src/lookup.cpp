#include "treep/lookup.hpp"

#include <algorithm>
#include <limits>

namespace treep {

namespace {

struct Cand {
    Pos id = 0;
    int level = 0;
};

// candidate rows for the two Fig. 3 searches; ascending id for the
// first-match variants
void collect_level_zero(const NodeState& n, std::vector<Cand>& out) {
    for (const auto& e : n.tables.level0)
        out.push_back({e.id, e.level});
    for (const auto& e : n.tables.children)
        out.push_back({e.id, e.level});
}

void collect_level_a(const NodeState& n, std::vector<Cand>& out) {
    for (const auto& e : n.tables.same_level)
        out.push_back({e.id, e.level});
    for (const auto& e : n.tables.children)
        out.push_back({e.id, e.level});
    // level-0 links are active connections of every node, elevated or not
    for (const auto& e : n.tables.level0)
        out.push_back({e.id, e.level});
}

void sort_unique(std::vector<Cand>& v) {
    std::sort(v.begin(), v.end(), [](const Cand& a, const Cand& b) {
        return a.id < b.id || (a.id == b.id && a.level > b.level);
    });
    v.erase(std::unique(v.begin(), v.end(),
                        [](const Cand& a, const Cand& b) { return a.id == b.id; }),
            v.end());
}

struct Rank {
    Dist metric;
    Dist d;
    Pos id;

    bool operator<(const Rank& o) const {
        if (metric != o.metric)
            return metric < o.metric;
        if (d != o.d)
            return d < o.d;
        return id < o.id;
    }
};

Rank rank_of(const Cand& c, Pos target, int hops, int known_h, Pos space) {
    return {lookup_metric(c.id, c.level, target, hops, known_h, space),
            distance_d(c.id, target), c.id};
}

Pos select_greedy(const NodeState& n, const std::vector<Cand>& cands, Pos target, int hops,
                  Pos space) {
    const int kh = n.known_height();
    const Dist self_metric = lookup_metric(n.id, n.lvl, target, hops, kh, space);
    bool have = false;
    Rank best{};
    for (const auto& c : cands) {
        if (c.id == n.id)
            continue;
        Rank r = rank_of(c, target, hops, kh, space);
        if (!have || r < best) {
            best = r;
            have = true;
        }
    }
    if (!have || best.metric >= self_metric)
        return n.id; // nothing strictly improves
    return best.id;
}

// first entry in ascending-id order that improves on the current node; for
// NGSA the remaining improving entries become alternates
Pos select_first_improving(const NodeState& n, const std::vector<Cand>& cands_in, Pos target,
                           int hops, Pos space, bool literal, std::vector<Pos>* alternates) {
    std::vector<Cand> cands = cands_in;
    sort_unique(cands);
    const int kh = n.known_height();
    const Dist self_metric = lookup_metric(n.id, n.lvl, target, hops, kh, space);
    const Dist self_to_target = distance_d(n.id, target);
    Pos first = n.id;
    for (const auto& c : cands) {
        if (c.id == n.id)
            continue;
        bool improving;
        if (literal) {
            // the printed condition: d(a, n) - d(a, x) < 0
            improving = distance_d(n.id, c.id) < self_to_target;
        } else {
            improving = lookup_metric(c.id, c.level, target, hops, kh, space) < self_metric;
        }
        if (!improving)
            continue;
        if (first == n.id) {
            first = c.id;
        } else if (alternates && alternates->size() < kMaxAlternates) {
            alternates->push_back(c.id);
        } else if (!alternates) {
            break;
        }
    }
    return first;
}

struct SuperiorPick {
    Pos id = 0;
    bool halving = false;
};

// Fig. 3 fallback: the superior closest to the target that satisfies the
// halving condition, else the highest-level superior known.
SuperiorPick pick_superior(const NodeState& n, Pos target, int hops, Pos space) {
    const int kh = n.known_height();
    const Dist self_metric = lookup_metric(n.id, n.lvl, target, hops, kh, space);
    SuperiorPick pick;

    bool have = false;
    Rank best{};
    auto offer = [&](const TableEntry& e) {
        if (e.id == n.id)
            return;
        Rank r{lookup_metric(e.id, e.level, target, hops, kh, space), distance_d(e.id, target),
               e.id};
        if (2 * r.metric > self_metric)
            return; // fails the halving condition
        if (!have || r < best) {
            best = r;
            have = true;
        }
    };
    for (const auto& e : n.tables.superiors)
        offer(e);
    for (const auto& e : n.tables.parent_neighbors)
        offer(e);
    if (have) {
        pick.id = best.id;
        pick.halving = true;
        return pick;
    }

    int top_level = -1;
    for (const auto& e : n.tables.superiors) {
        if (e.id == n.id)
            continue;
        if (e.level > top_level || (e.level == top_level && e.id < pick.id)) {
            top_level = e.level;
            pick.id = e.id;
        }
    }
    return pick;
}

bool is_child_row(const NodeState& n, Pos id) {
    return n.tables.find(TableTag::Children, id) != nullptr;
}

RouteAction route_common(const NodeState& n, const LookupMessage& msg, Pos space,
                         bool first_match, bool collect_alternates, bool literal) {
    RouteAction act;
    act.msg = msg;

    if (msg.hops > kHopCap) {
        act.kind = RouteKind::Discard;
        return act;
    }
    if (msg.target == n.id || n.tables.contains_id(msg.target)) {
        act.kind = RouteKind::ReplyFound;
        return act;
    }

    const bool from_parent = msg.from_parent_level == n.lvl + 1;
    const int kh = n.known_height();
    const Dist self_metric = lookup_metric(n.id, n.lvl, msg.target, msg.hops, kh, space);

    std::vector<Cand> cands;
    if (from_parent && n.lvl == 0)
        collect_level_zero(n, cands);
    else
        collect_level_a(n, cands);

    Pos next;
    if (first_match) {
        std::vector<Pos> alternates;
        next = select_first_improving(n, cands, msg.target, msg.hops, space, literal,
                                      collect_alternates ? &alternates : nullptr);
        if (collect_alternates && !alternates.empty() &&
            act.msg.fallback_stack.size() < kMaxFallbackDepth && next != n.id) {
            act.msg.fallback_stack.push_back({n.id, std::move(alternates)});
        }
    } else {
        next = select_greedy(n, cands, msg.target, msg.hops, space);
    }

    auto forward_to = [&](Pos id, bool halving) {
        if (!loop_guard(msg)) {
            act.kind = RouteKind::Discard;
            return;
        }
        act.kind = RouteKind::Forward;
        act.next = id;
        act.via_halving = halving;
        act.next_is_child = is_child_row(n, id);
    };

    auto superior_fallback = [&]() -> bool {
        SuperiorPick pick = pick_superior(n, msg.target, msg.hops, space);
        if (pick.id == 0)
            return false;
        forward_to(pick.id, pick.halving);
        return true;
    };

    if (next != n.id) {
        Dist nm = self_metric;
        for (const auto& c : cands)
            if (c.id == next) {
                nm = lookup_metric(c.id, c.level, msg.target, msg.hops, kh, space);
                break;
            }
        if (from_parent) {
            forward_to(next, false);
        } else if (2 * nm <= self_metric) {
            forward_to(next, true);
        } else if (n.lvl == 0) {
            forward_to(next, false);
        } else if (superior_fallback()) {
            // forwarded to a superior
        } else {
            act.kind = RouteKind::ReplyNotFound;
        }
        return act;
    }

    // no candidate improves on this node
    if (from_parent && n.lvl == 0) {
        act.kind = RouteKind::ReplyNotFound;
        return act;
    }
    if (own_children_count(n) > 0) {
        forward_to(closest_child(n, msg.target), false);
        return act;
    }
    if (superior_fallback())
        return act;
    act.kind = RouteKind::ReplyNotFound;
    return act;
}

} // namespace

Dist lookup_metric(Pos subject, int subject_level, Pos target, int hops, int known_height,
                   Pos space) {
    if (hops > known_height)
        return distance_d(subject, target);
    int lvl = std::min(subject_level, known_height);
    return distance_D(subject, lvl, target, known_height, space);
}

Pos search_level_zero(const NodeState& node, Pos target, int hops, Pos space) {
    std::vector<Cand> cands;
    collect_level_zero(node, cands);
    return select_greedy(node, cands, target, hops, space);
}

Pos search_level_a(const NodeState& node, Pos target, int hops, Pos space) {
    std::vector<Cand> cands;
    collect_level_a(node, cands);
    return select_greedy(node, cands, target, hops, space);
}

Pos closest_child(const NodeState& node, Pos target) {
    Pos best = 0;
    Dist bd = std::numeric_limits<Dist>::max();
    bool have = false;
    for (const auto& e : node.tables.children) {
        Dist d = distance_d(e.id, target);
        if (!have || d < bd || (d == bd && e.id < best)) {
            best = e.id;
            bd = d;
            have = true;
        }
    }
    return best;
}

bool loop_guard(const LookupMessage& msg) {
    return msg.hops + 1 <= kHopCap;
}

RouteAction route_greedy(const NodeState& node, const LookupMessage& msg, Pos space) {
    return route_common(node, msg, space, false, false, false);
}

RouteAction route_ng(const NodeState& node, const LookupMessage& msg, Pos space,
                     bool literal_condition) {
    return route_common(node, msg, space, true, false, literal_condition);
}

RouteAction route_ngsa(const NodeState& node, const LookupMessage& msg, Pos space,
                       bool literal_condition) {
    return route_common(node, msg, space, true, true, literal_condition);
}

RouteAction route(const NodeState& node, const LookupMessage& msg, Pos space,
                  bool literal_condition) {
    switch (msg.algorithm) {
    case Algo::Greedy: return route_greedy(node, msg, space);
    case Algo::NG: return route_ng(node, msg, space, literal_condition);
    case Algo::NGSA: return route_ngsa(node, msg, space, literal_condition);
    }
    return route_greedy(node, msg, space);
}

Pos ngsa_backtrack(LookupMessage& msg) {
    while (!msg.fallback_stack.empty()) {
        auto& top = msg.fallback_stack.back();
        if (top.alternates.empty()) {
            msg.fallback_stack.pop_back();
            continue;
        }
        Pos next = top.alternates.front();
        top.alternates.erase(top.alternates.begin());
        if (top.alternates.empty())
            msg.fallback_stack.pop_back();
        return next;
    }
    return 0;
}

} // namespace treep
