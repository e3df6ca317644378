#include "doctest.h"

#include "treep/rng.hpp"
#include "treep/tables.hpp"

using namespace treep;

namespace {

TableEntry entry(Pos id, int level = 0, Pos source = 0) {
    TableEntry e;
    e.id = id;
    e.level = level;
    e.source = source ? source : id;
    return e;
}

} // namespace

// =============================================================================
// upsert / touch / expiry
// =============================================================================

TEST_CASE("upsert collapses duplicate ids to the freshest entry") {
    RoutingTables t;
    upsert(t, TableTag::Level0, entry(7), 10);
    upsert(t, TableTag::Level0, entry(7), 20);
    REQUIRE(t.level0.size() == 1);
    CHECK(t.level0[0].last_active == 20);
}

TEST_CASE("upsert into empty tables") {
    RoutingTables t;
    upsert(t, TableTag::Level0, entry(3), 1);
    CHECK(t.level0.size() == 1);
}

TEST_CASE("upsert then expire after the ttl") {
    RoutingTables t;
    const SimTime ttl = 15;
    upsert(t, TableTag::Level0, entry(3), 0);
    auto r = expire_sweep(t, ttl + 1, ttl);
    CHECK(t.level0.empty());
    REQUIRE(r.removed.size() == 1);
    CHECK(r.removed[0].second == 3);
}

TEST_CASE("touch resets timestamps; unknown id is a flagged no-op") {
    RoutingTables t;
    upsert(t, TableTag::Level0, entry(3), 0);
    CHECK(touch(t, 3, 9));
    CHECK(t.level0[0].last_active == 9);
    CHECK_FALSE(touch(t, 4, 9));

    // touched at t survives a sweep at t + ttl - 1
    const SimTime ttl = 15;
    auto r = expire_sweep(t, 9 + ttl - 1, ttl);
    CHECK(r.removed.empty());
    CHECK(t.level0.size() == 1);
}

TEST_CASE("expire_sweep removes exactly the stale entries") {
    RoutingTables t;
    const SimTime ttl = 10;
    upsert(t, TableTag::Level0, entry(1), 0);
    upsert(t, TableTag::Level0, entry(2), 8);
    auto r = expire_sweep(t, 12, ttl);
    REQUIRE(r.removed.size() == 1);
    CHECK(r.removed[0].second == 1);
    CHECK(t.level0.size() == 1);
    CHECK(t.level0[0].id == 2);
}

TEST_CASE("stale parent is removed and the slot emptied") {
    RoutingTables t;
    upsert(t, TableTag::Parent, entry(42, 1), 0);
    auto r = expire_sweep(t, 100, 10);
    CHECK(r.parent_lost);
    CHECK_FALSE(t.parent.has_value());
}

// =============================================================================
// delta extraction and merge
// =============================================================================

TEST_CASE("delta_since: watermark now yields an empty delta") {
    RoutingTables t;
    upsert(t, TableTag::Level0, entry(1), 5);
    TableDelta d = delta_since(t, 5, 99);
    CHECK(d.rows.empty());
}

TEST_CASE("delta_since: one change after the watermark") {
    RoutingTables t;
    upsert(t, TableTag::Level0, entry(1), 5);
    upsert(t, TableTag::Level0, entry(2), 11);
    TableDelta d = delta_since(t, 10, 99);
    REQUIRE(d.rows.size() == 1);
    CHECK(d.rows[0].entry.id == 2);
}

TEST_CASE("merge twice equals merge once") {
    RoutingTables a;
    upsert(a, TableTag::Children, entry(30, 1), 7);
    upsert(a, TableTag::Children, entry(40, 1), 7);
    TableDelta d = delta_since(a, 0, 99);

    RoutingTables b;
    merge_delta(b, d, 2, 10);
    auto snapshot = b.children;
    merge_delta(b, d, 2, 10);
    REQUIRE(b.children.size() == snapshot.size());
    for (std::size_t i = 0; i < snapshot.size(); ++i) {
        CHECK(b.children[i].id == snapshot[i].id);
        CHECK(b.children[i].last_modified == snapshot[i].last_modified);
    }
}

TEST_CASE("merge is commutative over disjoint-id deltas") {
    Rng rng(11);
    for (int round = 0; round < 50; ++round) {
        TableDelta d1, d2;
        d1.origin = 100;
        d2.origin = 200;
        for (int i = 0; i < 5; ++i) {
            TableEntry e1 = entry(rng.next_below(500), 1);
            e1.last_modified = rng.next_below(50);
            TableEntry e2 = entry(500 + rng.next_below(500), 1);
            e2.last_modified = rng.next_below(50);
            d1.rows.push_back({TableTag::Children, DeltaOp::Refresh, e1});
            d2.rows.push_back({TableTag::Children, DeltaOp::Refresh, e2});
        }
        RoutingTables x, y;
        merge_delta(x, d1, 2, 60);
        merge_delta(x, d2, 2, 60);
        merge_delta(y, d2, 2, 60);
        merge_delta(y, d1, 2, 60);
        REQUIRE(x.children.size() == y.children.size());
        for (std::size_t i = 0; i < x.children.size(); ++i)
            CHECK(x.children[i].id == y.children[i].id);
    }
}

TEST_CASE("freshest entry wins on conflict") {
    RoutingTables t;
    TableEntry fresh = entry(5, 1);
    fresh.last_modified = 50;
    TableDelta d1;
    d1.origin = 1;
    d1.rows.push_back({TableTag::Children, DeltaOp::Refresh, fresh});
    merge_delta(t, d1, 2, 60);

    TableEntry stale = entry(5, 1, 77);
    stale.last_modified = 20;
    TableDelta d2;
    d2.origin = 2;
    d2.rows.push_back({TableTag::Children, DeltaOp::Refresh, stale});
    merge_delta(t, d2, 2, 61);

    REQUIRE(t.children.size() == 1);
    CHECK(t.children[0].source == 1); // the older report did not overwrite
}

TEST_CASE("empty delta leaves tables unchanged") {
    RoutingTables t;
    upsert(t, TableTag::Level0, entry(1), 5);
    TableDelta d;
    d.origin = 9;
    merge_delta(t, d, 0, 10);
    CHECK(t.level0.size() == 1);
}

TEST_CASE("unknown higher parent entry is added and flagged for forwarding") {
    RoutingTables t; // a level-2 node's tables
    TableEntry p = entry(900, 3);
    p.last_modified = 5;
    TableDelta d;
    d.origin = 450;
    d.rows.push_back({TableTag::Parent, DeltaOp::Refresh, p});
    MergeResult r = merge_delta(t, d, 2, 10);
    REQUIRE(r.forward_to_parent.size() == 1);
    CHECK(r.forward_to_parent[0].id == 900);
    // the entry landed in the failover slot for this level
    CHECK(t.find(TableTag::ParentNeighbor, 900) != nullptr);

    // a second merge is no longer "previously unknown"
    MergeResult r2 = merge_delta(t, d, 2, 11);
    CHECK(r2.forward_to_parent.empty());
}

TEST_CASE("malformed delta is rejected whole") {
    RoutingTables t;
    upsert(t, TableTag::Level0, entry(1), 5);
    TableDelta d;
    d.origin = 9;
    TableEntry bad = entry(2);
    bad.level = -3;
    d.rows.push_back({TableTag::Level0, DeltaOp::Refresh, entry(3)});
    d.rows.push_back({TableTag::Level0, DeltaOp::Refresh, bad});
    MergeResult r = merge_delta(t, d, 0, 10);
    CHECK(r.rejected);
    CHECK(t.level0.size() == 1); // no partial merge
}

TEST_CASE("remove rows drop entries unless the local copy is fresher") {
    RoutingTables t;
    TableEntry e = entry(5, 1);
    e.last_modified = 30;
    TableDelta add;
    add.origin = 1;
    add.rows.push_back({TableTag::Children, DeltaOp::Refresh, e});
    merge_delta(t, add, 2, 31);

    TableEntry dead = entry(5, 1);
    dead.last_modified = 40;
    TableDelta rm;
    rm.origin = 1;
    rm.rows.push_back({TableTag::Children, DeltaOp::Remove, dead});
    merge_delta(t, rm, 2, 41);
    CHECK(t.children.empty());
}

// =============================================================================
// resource cache
// =============================================================================

TEST_CASE("resource cache stores and prunes profiles") {
    RoutingTables t;
    NodeProfile p;
    p.cpu = 0.5;
    upsert_resource(t, 7, 1, p, 10);
    REQUIRE(find_resource(t, 7) != nullptr);
    CHECK(find_resource(t, 7)->profile.cpu == doctest::Approx(0.5));
    prune_resources(t, 100, 50);
    CHECK(find_resource(t, 7) == nullptr);
}
