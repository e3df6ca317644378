#include "treep/tables.hpp"

#include <algorithm>

namespace treep {

namespace {

std::vector<TableEntry>* vector_for(RoutingTables& t, TableTag tag) {
    switch (tag) {
    case TableTag::Level0: return &t.level0;
    case TableTag::SameLevel: return &t.same_level;
    case TableTag::Children: return &t.children;
    case TableTag::Superior: return &t.superiors;
    case TableTag::ParentNeighbor: return &t.parent_neighbors;
    default: return nullptr;
    }
}

const std::vector<TableEntry>* vector_for(const RoutingTables& t, TableTag tag) {
    return vector_for(const_cast<RoutingTables&>(t), tag);
}

std::vector<TableEntry>::iterator find_by_id(std::vector<TableEntry>& v, Pos id) {
    auto it = std::lower_bound(v.begin(), v.end(), id,
                               [](const TableEntry& e, Pos key) { return e.id < key; });
    if (it != v.end() && it->id == id)
        return it;
    return v.end();
}

void insert_sorted(std::vector<TableEntry>& v, const TableEntry& e) {
    auto it = std::lower_bound(v.begin(), v.end(), e.id,
                               [](const TableEntry& x, Pos key) { return x.id < key; });
    v.insert(it, e);
}

void record_tombstone(RoutingTables& t, TableTag tag, Pos id, SimTime now) {
    t.tombstones.push_back({tag, id, now});
}

bool entry_valid(const TableEntry& e) {
    return e.level >= 0;
}

// insert keeping the entry's own timestamps
void upsert_raw(RoutingTables& t, TableTag tag, const TableEntry& e) {
    if (tag == TableTag::Parent) {
        t.parent = e;
        return;
    }
    if (tag == TableTag::Superior) {
        auto it = std::lower_bound(t.superiors.begin(), t.superiors.end(), e.level,
                                   [](const TableEntry& x, int lvl) { return x.level < lvl; });
        if (it != t.superiors.end() && it->level == e.level)
            *it = e;
        else
            t.superiors.insert(it, e);
        return;
    }
    auto* v = vector_for(t, tag);
    if (!v)
        return;
    auto it = find_by_id(*v, e.id);
    if (it != v->end())
        *it = e;
    else
        insert_sorted(*v, e);
}

// freshest-timestamp-wins merge of a single row; a row the subject itself
// established (source == id) is authoritative and a replica only confirms it
void merge_upsert(RoutingTables& t, TableTag tag, const TableEntry& e, SimTime now) {
    TableEntry* cur = nullptr;
    if (tag == TableTag::Parent) {
        if (t.parent && t.parent->id == e.id)
            cur = &*t.parent;
    } else if (tag == TableTag::Superior) {
        for (auto& s : t.superiors)
            if (s.level == e.level)
                cur = &s;
    } else if (auto* v = vector_for(t, tag)) {
        auto it = find_by_id(*v, e.id);
        if (it != v->end())
            cur = &*it;
    }
    if (cur) {
        if (cur->source == cur->id && e.source != e.id && cur->id == e.id) {
            cur->last_active = now;
            return;
        }
        if (cur->last_modified > e.last_modified)
            return; // existing row is fresher
    }
    TableEntry ins = e;
    ins.last_active = now;
    upsert_raw(t, tag, ins);
}


} // namespace

const TableEntry* RoutingTables::find(TableTag tag, Pos id) const {
    if (tag == TableTag::Parent)
        return parent && parent->id == id ? &*parent : nullptr;
    const auto* v = vector_for(*this, tag);
    if (!v)
        return nullptr;
    for (const auto& e : *v)
        if (e.id == id)
            return &e;
    return nullptr;
}

bool RoutingTables::contains_id(Pos id) const {
    for (const auto* v : {&level0, &same_level, &children, &superiors, &parent_neighbors})
        for (const auto& e : *v)
            if (e.id == id)
                return true;
    return parent && parent->id == id;
}

int RoutingTables::counted_size() const {
    return static_cast<int>(level0.size() + same_level.size() + children.size() +
                            superiors.size());
}

void upsert(RoutingTables& t, TableTag tag, const TableEntry& entry, SimTime now) {
    TableEntry e = entry;
    e.last_active = now;
    e.last_modified = now;
    if (e.address == 0)
        e.address = e.id;

    if (tag == TableTag::Parent) {
        t.parent = e;
        return;
    }
    if (tag == TableTag::Superior) {
        // one ancestor per level, ascending
        auto it = std::lower_bound(t.superiors.begin(), t.superiors.end(), e.level,
                                   [](const TableEntry& x, int lvl) { return x.level < lvl; });
        if (it != t.superiors.end() && it->level == e.level)
            *it = e;
        else
            t.superiors.insert(it, e);
        return;
    }

    auto* v = vector_for(t, tag);
    if (!v)
        return;
    auto it = find_by_id(*v, e.id);
    if (it != v->end())
        *it = e;
    else
        insert_sorted(*v, e);
}

// periodic confirmation of an unchanged row: refreshes liveness without
// bumping the modification stamp that drives delta extraction
void refresh_or_upsert(RoutingTables& t, TableTag tag, const TableEntry& e, SimTime now) {
    if (tag != TableTag::Parent) {
        if (auto* v = vector_for(t, tag)) {
            auto it = find_by_id(*v, e.id);
            if (it != v->end() && it->level == e.level && it->source == e.source) {
                it->last_active = now;
                return;
            }
        }
    } else if (t.parent && t.parent->id == e.id && t.parent->level == e.level) {
        t.parent->last_active = now;
        return;
    }
    upsert(t, tag, e, now);
}

bool touch(RoutingTables& t, Pos id, SimTime now) {
    // children rows are deliberately excluded: a child entry stays alive only
    // through its reports, not through unrelated traffic from the same node
    bool found = false;
    for (auto* v : {&t.level0, &t.same_level, &t.superiors, &t.parent_neighbors})
        for (auto& e : *v)
            if (e.id == id) {
                e.last_active = now;
                found = true;
            }
    for (auto& e : t.children)
        if (e.id == id)
            found = true; // known, but not refreshed here
    if (t.parent && t.parent->id == id) {
        t.parent->last_active = now;
        found = true;
    }
    return found;
}

void touch_sourced(RoutingTables& t, Pos source, SimTime now) {
    for (auto* v : {&t.level0, &t.same_level, &t.superiors, &t.parent_neighbors})
        for (auto& e : *v)
            if (e.source == source)
                e.last_active = now;
    for (auto& e : t.children)
        if (e.source == source && e.id != source)
            e.last_active = now; // replicated neighbours' children stay vouched
    if (t.parent && t.parent->source == source)
        t.parent->last_active = now;
}

SweepResult expire_sweep(RoutingTables& t, SimTime now, SimTime entry_ttl) {
    SweepResult r;
    auto stale = [&](const TableEntry& e) {
        return now > e.last_active && now - e.last_active > entry_ttl;
    };

    const std::pair<TableTag, std::vector<TableEntry>*> sets[] = {
        {TableTag::Level0, &t.level0},
        {TableTag::SameLevel, &t.same_level},
        {TableTag::Children, &t.children},
        {TableTag::Superior, &t.superiors},
        {TableTag::ParentNeighbor, &t.parent_neighbors},
    };
    for (auto [tag, v] : sets) {
        auto it = v->begin();
        while (it != v->end()) {
            if (stale(*it)) {
                r.removed.emplace_back(tag, it->id);
                record_tombstone(t, tag, it->id, now);
                it = v->erase(it);
            } else {
                ++it;
            }
        }
    }
    if (t.parent && stale(*t.parent)) {
        r.removed.emplace_back(TableTag::Parent, t.parent->id);
        record_tombstone(t, TableTag::Parent, t.parent->id, now);
        t.parent.reset();
        r.parent_lost = true;
    }

    // tombstones older than the ttl can no longer matter to any peer
    auto tb = t.tombstones.begin();
    while (tb != t.tombstones.end()) {
        if (now > tb->removed_at && now - tb->removed_at > 2 * entry_ttl)
            tb = t.tombstones.erase(tb);
        else
            ++tb;
    }
    return r;
}

TableDelta delta_since(const RoutingTables& t, SimTime watermark, Pos origin) {
    TableDelta d;
    d.origin = origin;
    d.since = watermark;

    const std::pair<TableTag, const std::vector<TableEntry>*> sets[] = {
        {TableTag::Level0, &t.level0},
        {TableTag::SameLevel, &t.same_level},
        {TableTag::Children, &t.children},
        {TableTag::Superior, &t.superiors},
        {TableTag::ParentNeighbor, &t.parent_neighbors},
    };
    for (auto [tag, v] : sets)
        for (const auto& e : *v)
            if (e.last_modified > watermark)
                d.rows.push_back({tag, DeltaOp::Refresh, e});
    if (t.parent && t.parent->last_modified > watermark)
        d.rows.push_back({TableTag::Parent, DeltaOp::Refresh, *t.parent});
    for (const auto& tb : t.tombstones)
        if (tb.removed_at > watermark) {
            TableEntry e;
            e.id = tb.id;
            e.last_modified = tb.removed_at;
            d.rows.push_back({tb.tag, DeltaOp::Remove, e});
        }
    return d;
}

MergeResult merge_delta(RoutingTables& t, const TableDelta& d, int own_level, SimTime now) {
    MergeResult r;

    for (const auto& row : d.rows) {
        if (!entry_valid(row.entry) || row.tag > TableTag::PeerCache) {
            r.rejected = true;
            return r; // whole delta rejected, nothing was applied yet
        }
    }

    for (const auto& row : d.rows) {
        if (row.op == DeltaOp::Remove) {
            // drop only if our copy is not fresher than the removal
            for (auto* v : {&t.level0, &t.same_level, &t.children, &t.superiors,
                            &t.parent_neighbors}) {
                auto it = find_by_id(*v, row.entry.id);
                if (it != v->end() && it->last_modified <= row.entry.last_modified)
                    v->erase(it);
            }
            continue;
        }

        TableEntry ins = row.entry;
        ins.source = d.origin;

        // rows land by level relative to the receiver, not by the sender's
        // table of origin
        if (row.tag == TableTag::ParentNeighbor) {
            merge_upsert(t, TableTag::ParentNeighbor, ins, now);
            continue;
        }
        if (ins.level == own_level && own_level >= 1) {
            merge_upsert(t, TableTag::SameLevel, ins, now);
            continue;
        }
        if (ins.level == own_level + 1) {
            bool is_current_parent = (t.parent && t.parent->id == ins.id);
            for (const auto& s : t.superiors)
                if (s.level == ins.level && s.id == ins.id)
                    is_current_parent = true;
            if (is_current_parent) {
                merge_upsert(t, TableTag::Superior, ins, now);
                if (own_level == 0)
                    merge_upsert(t, TableTag::Parent, ins, now);
            } else {
                bool known = t.find(TableTag::ParentNeighbor, ins.id) != nullptr;
                merge_upsert(t, TableTag::ParentNeighbor, ins, now);
                if (!known && row.tag == TableTag::Parent)
                    r.forward_to_parent.push_back(ins);
            }
            continue;
        }
        if (ins.level > own_level + 1) {
            merge_upsert(t, TableTag::Superior, ins, now);
            continue;
        }
        if (row.tag == TableTag::Children && ins.level == own_level - 1) {
            merge_upsert(t, TableTag::Children, ins, now);
            continue;
        }
        // below-level rows with no structural place (healing hints) are
        // handled by the caller's cache pass
    }
    return r;
}

void upsert_resource(RoutingTables& t, Pos id, int level, const NodeProfile& p, SimTime now) {
    auto it = std::lower_bound(t.resources.begin(), t.resources.end(), id,
                               [](const ProfileSnapshot& s, Pos key) { return s.id < key; });
    if (it != t.resources.end() && it->id == id) {
        it->level = level;
        it->profile = p;
        it->last_heard = now;
    } else {
        t.resources.insert(it, ProfileSnapshot{id, level, p, now});
    }
}

const ProfileSnapshot* find_resource(const RoutingTables& t, Pos id) {
    auto it = std::lower_bound(t.resources.begin(), t.resources.end(), id,
                               [](const ProfileSnapshot& s, Pos key) { return s.id < key; });
    if (it != t.resources.end() && it->id == id)
        return &*it;
    return nullptr;
}

void prune_resources(RoutingTables& t, SimTime now, SimTime keep_for) {
    auto it = t.resources.begin();
    while (it != t.resources.end()) {
        if (now > it->last_heard && now - it->last_heard > keep_for)
            it = t.resources.erase(it);
        else
            ++it;
    }
}

} // namespace treep
