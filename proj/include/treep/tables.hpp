#ifndef TREEP_TABLES_HPP
#define TREEP_TABLES_HPP

#include <cstdint>
#include <optional>
#include <vector>

#include "treep/idspace.hpp"
#include "treep/profile.hpp"

namespace treep {

enum class TableTag : std::uint8_t {
    Level0,
    SameLevel,
    Children,
    Parent,
    Superior,
    ParentNeighbor, // replicas of the parent's bus neighbours, kept for failover
    PeerCache,      // resource/state cache of peers heard about
};

// One timestamped routing-table row. `address` is the opaque transport
// handle; in the simulated transport it equals the node ID. `source` names
// the peer whose communication vouches for this row: a row learned from a
// neighbour stays fresh while that neighbour keeps talking.
struct TableEntry {
    Pos id = 0;
    Pos address = 0;
    int level = 0;
    SimTime last_active = 0;   // reset at every active communication
    SimTime last_modified = 0; // content change, drives delta extraction
    Pos source = 0;
};

enum class DeltaOp : std::uint8_t { Add, Refresh, Remove };

struct DeltaRow {
    TableTag tag = TableTag::Level0;
    DeltaOp op = DeltaOp::Refresh;
    TableEntry entry;
};

// Out-of-date-data exchange unit: exactly the rows modified after `since`.
// Applying the same delta twice leaves the tables unchanged.
struct TableDelta {
    Pos origin = 0;
    SimTime since = 0;
    std::vector<DeltaRow> rows;
};

struct ProfileSnapshot {
    Pos id = 0;
    int level = 0;
    NodeProfile profile;
    SimTime last_heard = 0;
};

// The per-node routing state: level-0 neighbours, same-level bus entries,
// children, the level-1 parent, the superior (ancestor) list plus parent
// bus-neighbour replicas, and the peer resource cache. All vectors are kept
// sorted by id (superiors by level) for deterministic iteration.
struct RoutingTables {
    std::vector<TableEntry> level0;
    std::vector<TableEntry> same_level;
    std::vector<TableEntry> children;
    std::optional<TableEntry> parent;
    std::vector<TableEntry> superiors;        // ancestors, ascending level
    std::vector<TableEntry> parent_neighbors; // <= 2, failover targets
    std::vector<ProfileSnapshot> resources;

    struct Tombstone {
        TableTag tag;
        Pos id;
        SimTime removed_at;
    };
    std::vector<Tombstone> tombstones;

    const TableEntry* find(TableTag tag, Pos id) const;
    bool contains_id(Pos id) const; // any routing table (resource cache excluded)
    // distinct rows in the tables the closed-form size expression accounts
    // for: level0 + same_level + children + superiors
    int counted_size() const;
};

struct SweepResult {
    std::vector<std::pair<TableTag, Pos>> removed;
    bool parent_lost = false;
};

struct MergeResult {
    bool rejected = false;
    // parent rows that were previously unknown and must be forwarded to the
    // receiver's own parent (keeps two roots from coexisting unlinked)
    std::vector<TableEntry> forward_to_parent;
};

// Insert or refresh one row; duplicate ids within a table collapse to the
// freshest row. Superior rows are keyed by level instead of id.
void upsert(RoutingTables& t, TableTag tag, const TableEntry& e, SimTime now);

// Refresh liveness of an unchanged row without bumping its modification
// stamp; falls back to a full upsert when the row is new or changed.
void refresh_or_upsert(RoutingTables& t, TableTag tag, const TableEntry& e, SimTime now);

// Reset the timestamp of every row carrying this id. Returns false when the
// id is unknown (tables unchanged).
bool touch(RoutingTables& t, Pos id, SimTime now);

// Refresh rows vouched for by `source` (the reporting peer is alive, so its
// reports stand until it says otherwise).
void touch_sourced(RoutingTables& t, Pos source, SimTime now);

// Drop every row older than entry_ttl. Removed ids are reported so the
// protocol can react (re-election, re-linking).
SweepResult expire_sweep(RoutingTables& t, SimTime now, SimTime entry_ttl);

// Rows modified after the watermark, plus matching tombstones.
TableDelta delta_since(const RoutingTables& t, SimTime watermark, Pos origin);

// Merge rows freshest-timestamp-wins. Rows tagged Parent/Superior at levels
// above the receiver's are folded into the superior list; a previously
// unknown parent row is flagged for forwarding. A malformed delta is
// rejected whole.
MergeResult merge_delta(RoutingTables& t, const TableDelta& d, int own_level, SimTime now);

void upsert_resource(RoutingTables& t, Pos id, int level, const NodeProfile& p, SimTime now);
const ProfileSnapshot* find_resource(const RoutingTables& t, Pos id);
void prune_resources(RoutingTables& t, SimTime now, SimTime keep_for);

} // namespace treep

#endif
