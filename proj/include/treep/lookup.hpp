#ifndef TREEP_LOOKUP_HPP
#define TREEP_LOOKUP_HPP

#include <cstdint>
#include <vector>

#include "treep/idspace.hpp"
#include "treep/protocol.hpp"

namespace treep {

enum class Algo : std::uint8_t { Greedy, NG, NGSA };

inline constexpr int kHopCap = 255;
inline constexpr int kMaxAlternates = 3;
inline constexpr int kMaxFallbackDepth = 32;

struct LookupMessage {
    Pos target = 0;
    Pos origin = 0;
    int hops = 0;
    Algo algorithm = Algo::Greedy;
    int from_parent_level = -1; // level of the parent that forwarded it

    struct Frame {
        Pos node = 0;
        std::vector<Pos> alternates; // ordered, best first
    };
    std::vector<Frame> fallback_stack; // NGSA only
};

enum class RouteKind : std::uint8_t { ReplyFound, ReplyNotFound, Forward, Discard };

struct RouteAction {
    RouteKind kind = RouteKind::ReplyNotFound;
    Pos next = 0;
    bool via_halving = false;   // the halving branch authorized this forward
    bool next_is_child = false; // next hop is taken from the children table
    LookupMessage msg;          // annotated copy (hops untouched; stack may grow)
};

// Routing metric: hierarchical distance D while hops stay within the locally
// known height, Euclidean afterwards (a high TTL signals instability).
Dist lookup_metric(Pos subject, int subject_level, Pos target, int hops, int known_height,
                   Pos space);

// Fig. 3 candidate searches. Greedy selection minimizes (metric, d, id) and
// returns the node itself when nothing strictly improves on it.
Pos search_level_zero(const NodeState& node, Pos target, int hops, Pos space);
Pos search_level_a(const NodeState& node, Pos target, int hops, Pos space);
Pos closest_child(const NodeState& node, Pos target);

// whether a message may consume one more forward
bool loop_guard(const LookupMessage& msg);

RouteAction route_greedy(const NodeState& node, const LookupMessage& msg, Pos space);
RouteAction route_ng(const NodeState& node, const LookupMessage& msg, Pos space,
                     bool literal_condition = false);
RouteAction route_ngsa(const NodeState& node, const LookupMessage& msg, Pos space,
                       bool literal_condition = false);

RouteAction route(const NodeState& node, const LookupMessage& msg, Pos space,
                  bool literal_condition = false);

// After a dead end, pop the most recent fallback frame with alternates left.
// Returns 0 when the stack is exhausted.
Pos ngsa_backtrack(LookupMessage& msg);

} // namespace treep

#endif
