#include <catch2/catch.hpp>

#include <prefixsim/kv_index.hpp>
#include <prefixsim/prng.hpp>

#include <map>
#include <vector>

using namespace prefixsim;

namespace {

// Recount oracle: recompute every node's counters from a flat mirror of the
// residents and compare against the tree's aggregates.
struct Mirror {
    std::map<RequestId, PoolResident> residents;

    void check(const QuadTree& tree) const {
        for (int d = 0; d <= QuadTree::kLeafDepth; ++d) {
            for (std::int64_t i = 0; i < QuadTree::nodes_at(d); ++i) {
                const NodeRef n{d, i};
                const auto [lo, hi] = QuadTree::node_range(n);
                std::int64_t reqs = 0, blocks = 0;
                for (const auto& [id, r] : residents) {
                    const std::int64_t len = QuadTree::clamp_len(r.prefix_len);
                    if (len >= lo && len <= hi) {
                        ++reqs;
                        blocks += r.kv_blocks;
                    }
                }
                if (reqs != tree.request_count(n) || blocks != tree.block_count(n)) {
                    FAIL("counter mismatch at depth " << d << " index " << i);
                }
            }
        }
    }
};

}  // namespace

TEST_CASE("tree geometry") {
    CHECK(QuadTree::nodes_at(QuadTree::kLeafDepth) == 4096);
    const std::pair<std::int64_t, std::int64_t> full{1, 65536}, leaf0{1, 16}, d2n1{4097, 8192};
    CHECK(QuadTree::node_range(NodeRef{0, 0}) == full);
    CHECK(QuadTree::node_range(NodeRef{6, 0}) == leaf0);
    CHECK(QuadTree::node_range(NodeRef{2, 1}) == d2n1);
    CHECK(QuadTree::leaf_of(1) == 0);
    CHECK(QuadTree::leaf_of(16) == 0);
    CHECK(QuadTree::leaf_of(17) == 1);
    CHECK(QuadTree::leaf_of(65536) == 4095);
}

TEST_CASE("single insert updates counters along the path") {
    QuadTree tree;
    tree.insert({1, 100, 7}, 0.0);
    CHECK(tree.request_count(NodeRef{0, 0}) == 1);
    CHECK(tree.block_count(NodeRef{0, 0}) == 7);
    const std::int64_t leaf = QuadTree::leaf_of(100);
    CHECK(tree.request_count(NodeRef{QuadTree::kLeafDepth, leaf}) == 1);
    CHECK_THROWS(tree.insert({1, 50, 2}, 0.0));  // duplicate id
}

TEST_CASE("lengths beyond the range clamp into the last leaf") {
    QuadTree tree;
    tree.insert({1, 70000, 4375}, 0.0);
    CHECK(tree.request_count(NodeRef{QuadTree::kLeafDepth, 4095}) == 1);
    const auto all = tree.collect_requests(NodeRef{0, 0});
    REQUIRE(all.size() == 1);
    CHECK(all[0].prefix_len == 70000);  // original length kept on the resident
}

TEST_CASE("insert then remove leaves all counters at zero") {
    QuadTree tree;
    tree.insert({5, 1234, 10}, 1.0);
    const auto removed = tree.remove(5);
    CHECK(removed.kv_blocks == 10);
    CHECK(tree.request_count(NodeRef{0, 0}) == 0);
    CHECK(tree.block_count(NodeRef{0, 0}) == 0);
    CHECK(tree.empty());
    CHECK_THROWS(tree.remove(5));
}

TEST_CASE("leaf FIFO order survives removal") {
    QuadTree tree;
    tree.insert({1, 100, 3}, 0.0);
    tree.insert({2, 101, 3}, 0.0);
    tree.insert({3, 99, 3}, 0.0);
    tree.remove(2);
    const auto rest = tree.collect_requests(NodeRef{0, 0});
    REQUIRE(rest.size() == 2);
    CHECK(rest[0].id == 1);
    CHECK(rest[1].id == 3);
}

TEST_CASE("collect_requests orders by leaf range then arrival") {
    QuadTree tree;
    tree.insert({1, 5000, 4}, 0.0);
    tree.insert({2, 40, 1}, 0.0);
    tree.insert({3, 41, 1}, 0.0);
    const auto all = tree.collect_requests(NodeRef{0, 0});
    REQUIRE(all.size() == 3);
    CHECK(all[0].id == 2);
    CHECK(all[1].id == 3);
    CHECK(all[2].id == 1);
}

TEST_CASE("max density child picks the largest counter, leftmost on ties") {
    QuadTree tree;
    // root children cover [1,16384], [16385,32768], [32769,49152], [49153,65536]
    for (int i = 0; i < 80; ++i) tree.insert({i, 100 + i, 1}, 0.0);
    for (int i = 0; i < 210; ++i) tree.insert({1000 + i, 17000 + i, 1}, 0.0);
    for (int i = 0; i < 20; ++i) tree.insert({2000 + i, 33000 + i, 1}, 0.0);
    for (int i = 0; i < 5; ++i) tree.insert({3000 + i, 50000 + i, 1}, 0.0);
    CHECK(tree.max_density_child(NodeRef{0, 0}).index == 1);

    QuadTree tie;
    tie.insert({1, 10, 1}, 0.0);
    tie.insert({2, 11, 1}, 0.0);
    tie.insert({3, 17000, 1}, 0.0);
    tie.insert({4, 17001, 1}, 0.0);
    CHECK(tie.max_density_child(NodeRef{0, 0}).index == 0);

    QuadTree empty;
    CHECK_THROWS(empty.max_density_child(NodeRef{0, 0}));
}

TEST_CASE("random insert/remove sequences match the recount oracle") {
    QuadTree tree;
    Mirror mirror;
    Rng rng(23);
    RequestId next_id = 0;
    for (int step = 0; step < 500; ++step) {
        const bool do_insert = mirror.residents.empty() || rng.bernoulli(0.6);
        if (do_insert) {
            PoolResident r;
            r.id = next_id++;
            r.prefix_len = rng.uniform_int(1, 70000);
            r.kv_blocks = (QuadTree::clamp_len(r.prefix_len) + 15) / 16;
            tree.insert(r, static_cast<double>(step));
            mirror.residents[r.id] = r;
        } else {
            auto it = mirror.residents.begin();
            std::advance(it, rng.uniform_int(0, static_cast<std::int64_t>(mirror.residents.size()) - 1));
            tree.remove(it->first);
            mirror.residents.erase(it);
        }
        if (step % 25 == 0) mirror.check(tree);
        CHECK(tree.size() == static_cast<std::int64_t>(mirror.residents.size()));
    }
    mirror.check(tree);
}

TEST_CASE("starvation clocks never decrease and reset on empty insert") {
    QuadTree tree;
    tree.insert({1, 100, 1}, 50.0);
    const NodeRef node{2, 0};
    CHECK(tree.last_batch_ms(node) == 50.0);  // clock starts when waiting starts
    tree.touch_path(NodeRef{QuadTree::kLeafDepth, QuadTree::leaf_of(100)}, 80.0);
    CHECK(tree.last_batch_ms(node) == 80.0);
    tree.touch_path(NodeRef{QuadTree::kLeafDepth, QuadTree::leaf_of(100)}, 60.0);
    CHECK(tree.last_batch_ms(node) == 80.0);  // monotone

    const auto starving = tree.starving_nodes(2, 1000.0, 500.0);
    REQUIRE(starving.size() == 1);
    CHECK(starving[0].index == 0);
    CHECK(tree.starving_nodes(2, 1000.0, 2000.0).empty());
}

TEST_CASE("debug dump renders ranges, counters, and residents") {
    QuadTree tree;
    tree.insert({7, 33, 3}, 5.0);
    const auto j = tree.dump_json();
    CHECK(j["range"][0] == 1);
    CHECK(j["range"][1] == 65536);
    CHECK(j["requests"] == 1);
    CHECK(j["blocks"] == 3);
    // walk to the leaf
    auto node = j;
    while (node.contains("children")) {
        REQUIRE(node["children"].size() == 1);
        node = node["children"][0];
    }
    REQUIRE(node["residents"].size() == 1);
    CHECK(node["residents"][0]["id"] == 7);
    CHECK(node["residents"][0]["prefix_len"] == 33);
}
