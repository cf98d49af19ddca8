#pragma once

#include <prefixsim/kv_index.hpp>

#include <algorithm>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

namespace prefixsim {

struct BatchConstraints {
    std::int64_t b_max = 0;               // maximum memory blocks per batch; 0 = derive
    std::int64_t k_min = 36;              // minimum requests per batch
    double starvation_threshold_ms = 500.0;
    int starvation_scan_depth = 2;        // 16 nodes of 4096 tokens each

    void validate() const {
        if (b_max < 1 || k_min < 1) {
            throw std::invalid_argument("b_max and k_min must be >= 1");
        }
    }
};

struct Batch {
    std::int64_t id = 0;
    std::vector<PoolResident> members;  // admission order
    std::int64_t total_blocks = 0;
    std::int64_t window_lo = 0, window_hi = 0;  // prefix-length span
    double created_ms = 0.0;
    bool starvation_override = false;   // search started at a starving subtree
    std::vector<NodeRef> source_nodes;  // nodes whose starvation clocks reset

    std::vector<RequestId> request_ids() const {
        std::vector<RequestId> ids;
        ids.reserve(members.size());
        for (const auto& m : members) ids.push_back(m.id);
        return ids;
    }
};

// Refresh starvation clocks along the paths the batch was drawn from.
inline void refresh_batch_clocks(QuadTree& tree, const Batch& batch, double now_ms) {
    for (const NodeRef& n : batch.source_nodes) tree.touch_path(n, now_ms);
}

namespace dfs_detail {

// Greedy per-request admission over a sibling scan order, nearest requests
// first: when expanding toward lower ranges the scan walks each sibling's
// leaves highest-first, so the batch stays in as small a range as possible.
// Stops at the first request that would overflow the block budget; empty
// siblings are skipped. FIFO order is kept within a leaf.
inline std::vector<PoolResident> expand_siblings(const QuadTree& tree,
                                                 const std::vector<NodeRef>& siblings,
                                                 bool leaves_descending,
                                                 std::int64_t block_budget,
                                                 std::int64_t count_budget) {
    std::vector<PoolResident> selected;
    std::int64_t used = 0;
    for (const NodeRef& s : siblings) {
        auto requests = tree.collect_requests(s);
        if (leaves_descending) {
            std::stable_sort(requests.begin(), requests.end(),
                             [](const PoolResident& a, const PoolResident& b) {
                                 return QuadTree::leaf_of(a.prefix_len) >
                                        QuadTree::leaf_of(b.prefix_len);
                             });
        }
        for (const auto& r : requests) {
            if (count_budget >= 0 &&
                static_cast<std::int64_t>(selected.size()) >= count_budget) {
                return selected;
            }
            if (used + r.kv_blocks > block_budget) return selected;
            used += r.kv_blocks;
            selected.push_back(r);
        }
    }
    return selected;
}

}  // namespace dfs_detail

// Expansion over the left siblings of a node, nearest first (rightmost
// sibling, and its highest leaves, before anything farther).
inline std::vector<PoolResident> r_search(const QuadTree& tree, NodeRef node,
                                          std::int64_t block_budget,
                                          std::int64_t count_budget = -1) {
    std::vector<NodeRef> order;
    for (std::int64_t k = (node.index % 4) - 1; k >= 0; --k) {
        order.push_back(NodeRef{node.depth, node.index - (node.index % 4) + k});
    }
    return dfs_detail::expand_siblings(tree, order, true, block_budget, count_budget);
}

// Expansion over the right siblings of a node, nearest (leftmost) first.
inline std::vector<PoolResident> l_search(const QuadTree& tree, NodeRef node,
                                          std::int64_t block_budget,
                                          std::int64_t count_budget = -1) {
    std::vector<NodeRef> order;
    for (std::int64_t k = (node.index % 4) + 1; k < 4; ++k) {
        order.push_back(NodeRef{node.depth, node.index - (node.index % 4) + k});
    }
    return dfs_detail::expand_siblings(tree, order, false, block_budget, count_budget);
}

// =========================================================================
// Density First Search.
//
// Starting node: the oldest starving internal node at the scan depth, if
// any; otherwise the root. Then, per node:
//   case 1  blocks <= b_max and requests >= k_min   -> take the subtree
//   case 2  blocks >  b_max                         -> recurse into the
//                                                      max-request child
//   case 3  blocks <= b_max but requests < k_min    -> expand from siblings,
//           nearest-first (left siblings if any exist, else right siblings),
//           and return the union even if still short of k_min
// A leaf whose residents exceed b_max admits its FIFO prefix that fits.
//
// On success the starvation clocks along the visited path (and on any
// sibling that contributed requests) are refreshed. The caller removes the
// returned requests from the tree.
// =========================================================================
inline std::optional<Batch> density_first_search(QuadTree& tree,
                                                 const BatchConstraints& constraints,
                                                 double now_ms,
                                                 std::int64_t batch_id = 0,
                                                 bool update_clocks = true) {
    constraints.validate();
    if (tree.empty()) return std::nullopt;

    NodeRef node{0, 0};
    bool starvation_start = false;
    const auto starving = tree.starving_nodes(constraints.starvation_scan_depth, now_ms,
                                              constraints.starvation_threshold_ms);
    if (!starving.empty()) {
        node = starving.front();
        starvation_start = true;
    }

    std::vector<PoolResident> members;
    std::vector<NodeRef> touched;

    while (true) {
        const std::int64_t blocks = tree.block_count(node);
        const std::int64_t requests = tree.request_count(node);

        if (node.depth == QuadTree::kLeafDepth && blocks > constraints.b_max) {
            // overfull leaf: greedy FIFO prefix
            std::int64_t used = 0;
            for (const auto& r : tree.collect_requests(node)) {
                if (used + r.kv_blocks > constraints.b_max) break;
                used += r.kv_blocks;
                members.push_back(r);
            }
            touched.push_back(node);
            break;
        }

        if (blocks <= constraints.b_max && requests >= constraints.k_min) {
            members = tree.collect_requests(node);  // case 1
            touched.push_back(node);
            break;
        }
        if (blocks > constraints.b_max) {  // case 2
            node = tree.max_density_child(node);
            continue;
        }

        // case 3
        members = tree.collect_requests(node);
        touched.push_back(node);
        const std::int64_t block_budget = constraints.b_max - blocks;
        const std::int64_t count_budget = constraints.k_min - requests;
        if (node.depth > 0) {
            std::vector<PoolResident> additions;
            if (node.index % 4 > 0) {
                additions = r_search(tree, node, block_budget, count_budget);
            } else {
                additions = l_search(tree, node, block_budget, count_budget);
            }
            for (const auto& a : additions) {
                members.push_back(a);
                touched.push_back(NodeRef{QuadTree::kLeafDepth, QuadTree::leaf_of(a.prefix_len)});
            }
        }
        break;
    }

    if (members.empty()) return std::nullopt;

    Batch batch;
    batch.id = batch_id;
    batch.created_ms = now_ms;
    batch.starvation_override = starvation_start;
    batch.window_lo = members.front().prefix_len;
    batch.window_hi = members.front().prefix_len;
    for (const auto& m : members) {
        batch.total_blocks += m.kv_blocks;
        batch.window_lo = std::min(batch.window_lo, m.prefix_len);
        batch.window_hi = std::max(batch.window_hi, m.prefix_len);
    }
    batch.members = std::move(members);
    batch.source_nodes = std::move(touched);

    if (update_clocks) refresh_batch_clocks(tree, batch, now_ms);
    return batch;
}

}  // namespace prefixsim
