#pragma once

// Independent re-implementation of the density-first search semantics,
// computed from a flat request list with no shared code with the quad-tree:
// counters are recounted per query, the descent path is re-derived with
// plain scans. Used as the oracle the production search is checked against.

#include <prefixsim/kv_index.hpp>

#include <algorithm>
#include <cstdint>
#include <optional>
#include <vector>

namespace refdfs {

struct RefRequest {
    prefixsim::RequestId id;
    std::int64_t prefix_len;
    std::int64_t kv_blocks;
    std::int64_t seq;  // insertion order
};

struct RefNode {
    int depth;
    std::int64_t index;
};

constexpr int kLeafDepth = 6;
constexpr std::int64_t kRangeMax = 65536;

inline std::int64_t clamp_len(std::int64_t len) { return len > kRangeMax ? kRangeMax : len; }
inline std::int64_t leaf_of(std::int64_t len) { return (clamp_len(len) - 1) / 16; }

inline bool in_node(const RefRequest& r, RefNode n) {
    const std::int64_t shift = 2 * (kLeafDepth - n.depth);
    return (leaf_of(r.prefix_len) >> shift) == n.index;
}

inline std::int64_t count_requests(const std::vector<RefRequest>& rs, RefNode n) {
    std::int64_t c = 0;
    for (const auto& r : rs) c += in_node(r, n) ? 1 : 0;
    return c;
}

inline std::int64_t count_blocks(const std::vector<RefRequest>& rs, RefNode n) {
    std::int64_t c = 0;
    for (const auto& r : rs) c += in_node(r, n) ? r.kv_blocks : 0;
    return c;
}

inline std::vector<RefRequest> collect(const std::vector<RefRequest>& rs, RefNode n) {
    std::vector<RefRequest> out;
    for (const auto& r : rs) {
        if (in_node(r, n)) out.push_back(r);
    }
    std::stable_sort(out.begin(), out.end(), [](const RefRequest& a, const RefRequest& b) {
        if (leaf_of(a.prefix_len) != leaf_of(b.prefix_len)) {
            return leaf_of(a.prefix_len) < leaf_of(b.prefix_len);
        }
        return a.seq < b.seq;
    });
    return out;
}

struct RefResult {
    std::vector<prefixsim::RequestId> ids;
    std::int64_t total_blocks = 0;
    int terminal_case = 0;  // 1, 2 never terminal, 3, or 4 for overfull leaf
    RefNode terminal_node{0, 0};
};

inline std::optional<RefResult> reference_dfs(const std::vector<RefRequest>& rs,
                                              std::int64_t b_max, std::int64_t k_min) {
    if (rs.empty()) return std::nullopt;
    RefNode node{0, 0};
    RefResult res;

    while (true) {
        const std::int64_t blocks = count_blocks(rs, node);
        const std::int64_t reqs = count_requests(rs, node);

        if (node.depth == kLeafDepth && blocks > b_max) {
            std::int64_t used = 0;
            for (const auto& r : collect(rs, node)) {
                if (used + r.kv_blocks > b_max) break;
                used += r.kv_blocks;
                res.ids.push_back(r.id);
            }
            res.total_blocks = used;
            res.terminal_case = 4;
            res.terminal_node = node;
            return res;
        }

        if (blocks <= b_max && reqs >= k_min) {
            for (const auto& r : collect(rs, node)) res.ids.push_back(r.id);
            res.total_blocks = blocks;
            res.terminal_case = 1;
            res.terminal_node = node;
            return res;
        }

        if (blocks > b_max) {
            std::int64_t best = -1, best_count = 0;
            for (std::int64_t k = 0; k < 4; ++k) {
                const RefNode child{node.depth + 1, node.index * 4 + k};
                const std::int64_t c = count_requests(rs, child);
                if (c > best_count) {
                    best_count = c;
                    best = k;
                }
            }
            node = RefNode{node.depth + 1, node.index * 4 + best};
            continue;
        }

        // case 3: sibling expansion, nearest requests first (left expansion
        // walks each sibling's leaves highest-first)
        std::int64_t used = blocks;
        for (const auto& r : collect(rs, node)) res.ids.push_back(r.id);
        const std::int64_t count_budget = k_min - reqs;
        std::int64_t added = 0;
        if (node.depth > 0) {
            std::vector<RefNode> order;
            const std::int64_t pos = node.index % 4;
            const std::int64_t base = node.index - pos;
            const bool from_left = pos > 0;
            if (from_left) {
                for (std::int64_t k = pos - 1; k >= 0; --k) order.push_back({node.depth, base + k});
            } else {
                for (std::int64_t k = pos + 1; k < 4; ++k) order.push_back({node.depth, base + k});
            }
            bool stop = false;
            for (const RefNode& sib : order) {
                if (stop) break;
                auto members = collect(rs, sib);
                if (from_left) {
                    std::stable_sort(members.begin(), members.end(),
                                     [](const RefRequest& a, const RefRequest& b) {
                                         return leaf_of(a.prefix_len) > leaf_of(b.prefix_len);
                                     });
                }
                for (const auto& r : members) {
                    if (added >= count_budget) { stop = true; break; }
                    if (used + r.kv_blocks > b_max) { stop = true; break; }
                    used += r.kv_blocks;
                    res.ids.push_back(r.id);
                    ++added;
                }
            }
        }
        res.total_blocks = used;
        res.terminal_case = 3;
        res.terminal_node = node;
        return res;
    }
}

// Exhaustive feasibility scan: does any subtree, or any subtree plus its
// nearest-first sibling expansion, satisfy both constraints?
inline bool feasible_exists(const std::vector<RefRequest>& rs, std::int64_t b_max,
                            std::int64_t k_min) {
    for (int d = 0; d <= kLeafDepth; ++d) {
        for (std::int64_t i = 0; i < (std::int64_t{1} << (2 * d)); ++i) {
            const RefNode n{d, i};
            const std::int64_t blocks = count_blocks(rs, n);
            const std::int64_t reqs = count_requests(rs, n);
            if (reqs == 0) continue;
            if (blocks <= b_max && reqs >= k_min) return true;
            if (blocks <= b_max && d > 0) {
                // try the expansion this node would perform
                std::int64_t used = blocks, have = reqs;
                const std::int64_t pos = i % 4;
                const std::int64_t base = i - pos;
                const bool from_left = pos > 0;
                std::vector<RefNode> order;
                if (from_left) {
                    for (std::int64_t k = pos - 1; k >= 0; --k) order.push_back({d, base + k});
                } else {
                    for (std::int64_t k = pos + 1; k < 4; ++k) order.push_back({d, base + k});
                }
                bool stop = false;
                for (const RefNode& sib : order) {
                    if (stop) break;
                    auto members = collect(rs, sib);
                    if (from_left) {
                        std::stable_sort(members.begin(), members.end(),
                                         [](const RefRequest& a, const RefRequest& b) {
                                             return leaf_of(a.prefix_len) > leaf_of(b.prefix_len);
                                         });
                    }
                    for (const auto& r : members) {
                        if (have >= k_min) { stop = true; break; }
                        if (used + r.kv_blocks > b_max) { stop = true; break; }
                        used += r.kv_blocks;
                        ++have;
                    }
                }
                if (have >= k_min) return true;
            }
        }
    }
    return false;
}

}  // namespace refdfs
