#ifndef TREEP_PROTOCOL_HPP
#define TREEP_PROTOCOL_HPP

#include <cstdint>
#include <memory>
#include <optional>
#include <set>
#include <vector>

#include "treep/idspace.hpp"
#include "treep/profile.hpp"
#include "treep/tables.hpp"

namespace treep {

enum class MsgKind : std::uint8_t {
    Join,
    JoinAck,
    Keepalive,
    TableDeltaMsg,
    ElectionClaim,
    ParentAnnounce,
    ChildReport,
    Promote,
    DemoteNotice,
    Lookup,
    LookupReply,
    NotFound,
};

struct Message {
    MsgKind kind = MsgKind::Keepalive;
    Pos src = 0;
    Pos dst = 0;
    int src_level = 0;
    Pos src_parent = 0; // 0 = parentless
    // routed messages (Join / Lookup)
    Pos target = 0;
    int hops = 0;
    int from_parent_level = -1;
    // first-contact / report payload
    bool carries_profile = false;
    bool intro = false; // reply to a first contact; never re-replied
    bool admit = false; // sender accepts the receiver as its child
    std::uint8_t link_kind = 0; // 0 = level-0 link, 1 = same-level bus link
    NodeProfile profile;
    // parent claims / promote
    int new_level = 0;
    Pos tess_lo = 0, tess_hi = 0;
    SimTime tess_stamp = 0; // version of the advertised tessellation bounds
    Pos hint = 0;            // e.g. replacement parent on demotion
    SimTime claim_time = 0;  // absorb-claim tie-breaking
    std::shared_ptr<const TableDelta> delta;
};

enum class TimerKind : std::uint8_t { Keepalive, Countdown, JoinRetry };

enum class CountdownKind : std::uint8_t { None, Election, Demotion };

struct NodeState {
    Pos id = 0;
    int lvl = 0;
    bool alive = true;
    NodeProfile profile;
    double score = 0.0;
    int nc = 4;
    RoutingTables tables;
    std::optional<Tessellation> tess; // present iff lvl >= 1
    SimTime tess_set_at = 0;          // stamp of the last boundary change

    CountdownKind cd = CountdownKind::None;
    SimTime cd_deadline = 0;
    std::uint64_t cd_epoch = 0; // bumping the epoch cancels pending timers
    std::uint64_t cd_round = 0; // varies the jitter between repeated attempts

    bool claim_outstanding = false;
    SimTime claim_sent_at = 0;
    SimTime last_claim_time = 0;
    SimTime last_rival_claim = 0;  // a nearby claim was heard; hold own claims briefly
    SimTime last_forward_reset = 0;
    std::set<Pos> parentless_seen; // peers whose last keep-alive reported no parent
    std::set<Pos> forwarded_parents; // foreign parent entries already passed upward

    bool joined = false;
    Pos join_bootstrap = 0;
    int join_attempts = 0;
    int orphan_ticks = 0; // consecutive keep-alive rounds without a parent

    std::vector<std::pair<Pos, SimTime>> sent_watermark; // per-link delta cursor

    int known_height() const {
        return lvl + static_cast<int>(tables.superiors.size());
    }
};

struct ProtocolParams {
    Pos space = kDefaultSpace;
    SimTime t_elect_base = 10 * kTimeUnit;
    SimTime t_demote_base = 30 * kTimeUnit;
    SimTime keepalive_interval = 5 * kTimeUnit;
    SimTime entry_ttl = 15 * kTimeUnit;
    SimTime jitter_span = kTimeUnit;
    double uptime_cap = 1000.0;
    bool piggyback_updates = false;
    std::uint64_t seed = 1;
};

// Engine services the per-node state machine relies on. One simulation
// instance implements this; handlers never touch other nodes directly.
class ProtocolEnv {
public:
    virtual ~ProtocolEnv() = default;
    virtual void send(const Message& m) = 0;
    virtual void schedule_timer(Pos node, TimerKind kind, SimTime at, std::uint64_t epoch) = 0;
    virtual SimTime now() const = 0;
    virtual const ProtocolParams& params() const = 0;
    virtual void note_structural_event() = 0;
    virtual Pos pick_bootstrap(Pos exclude) = 0; // 0 when none available
};

// ---- pure planning helpers (oracle-tested) --------------------------------

struct ChildRef {
    Pos id = 0;
    double score = 0.0;
};

// B+tree-style overflow split of a parented node: the highest-capacity child
// is promoted to the parent's level and the children partition at an ID cut
// separating parent from promotee, as balanced as the separation allows.
struct SplitPlan {
    Pos promotee = 0;
    Pos cut = 0; // keep side is [lo, cut) or [cut, hi) depending on sides
    int min_side = 0; // smaller resulting child count; < 2 marks a degenerate split
    bool promotee_right = false;
    std::vector<Pos> keep_children;
    std::vector<Pos> give_children;
    Tessellation keep_tess;
    Tessellation give_tess;
};

std::optional<SplitPlan> plan_split(Pos parent_id, const Tessellation& tess,
                                    const std::vector<ChildRef>& children);

// Root growth: a parentless node over the lift threshold raises itself one
// level; each half of its children gets a promoted head.
struct RootLiftPlan {
    Pos head_left = 0, head_right = 0;
    Pos cut = 0;
    std::vector<Pos> left_children, right_children;
    Tessellation left_tess, right_tess;
};

int root_lift_threshold(int nc);

std::optional<RootLiftPlan> plan_root_lift(const Tessellation& tess,
                                           const std::vector<ChildRef>& children);

// ---- state machine entry points (driven by the simulator) -----------------

void start_join(ProtocolEnv& env, NodeState& self, Pos bootstrap);
void handle_message(ProtocolEnv& env, NodeState& self, const Message& m);
void handle_timer(ProtocolEnv& env, NodeState& self, TimerKind kind, std::uint64_t epoch);

// periodic tick: expiry sweep, keep-alives with deltas, countdown upkeep
void keepalive_tick(ProtocolEnv& env, NodeState& self);

// Election/demotion upkeep, exposed for tests.
void trigger_election(ProtocolEnv& env, NodeState& self);
void demotion_tick(ProtocolEnv& env, NodeState& self);

// Children rows the node is itself responsible for (inside its own
// tessellation), as opposed to replicated neighbours' children.
int own_children_count(const NodeState& n);

// Level-1 parent for ordinary nodes, the level+1 superior for elevated
// ones; 0 when parentless.
Pos parent_of(const NodeState& n);

std::uint64_t dropped_unknown_messages();
void set_protocol_trace(bool on);

} // namespace treep

#endif
