#pragma once

#include <prefixsim/request.hpp>

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace prefixsim {

// =========================================================================
// Quad-tree over prefix lengths [1, 65536].
//
// The tree shape is fixed: 7 levels, fan-out 4, so depth 6 has 4^6 = 4096
// leaves, each covering a 16-token range. Internal nodes carry
// (request counter, block counter) aggregates plus the starvation clock
// last_batch_ms. Leaves keep resident requests in FIFO arrival order.
// Lengths above 65536 clamp into the last leaf.
//
// Stored per resident: id, prefix length, block count. Nothing else — batch
// policies looking at the tree cannot see output lengths.
// =========================================================================

struct PoolResident {
    RequestId id = 0;
    std::int64_t prefix_len = 0;
    std::int64_t kv_blocks = 0;
};

// (depth, index) node handle; root is {0, 0}, leaves live at depth kLeafDepth.
struct NodeRef {
    int depth = 0;
    std::int64_t index = 0;
    bool operator==(const NodeRef&) const = default;
};

class QuadTree {
 public:
    static constexpr int kLeafDepth = 6;
    static constexpr std::int64_t kRangeMax = 65536;
    static constexpr std::int64_t kLeafCount = 4096;  // 4^6
    static constexpr std::int64_t kLeafWidth = 16;

    QuadTree() {
        for (int d = 0; d <= kLeafDepth; ++d) {
            const auto n = nodes_at(d);
            req_count_[d].assign(static_cast<std::size_t>(n), 0);
            block_count_[d].assign(static_cast<std::size_t>(n), 0);
            last_batch_ms_[d].assign(static_cast<std::size_t>(n), 0.0);
        }
        leaves_.resize(kLeafCount);
    }

    static std::int64_t nodes_at(int depth) { return std::int64_t{1} << (2 * depth); }

    static std::int64_t clamp_len(std::int64_t prefix_len) {
        return prefix_len > kRangeMax ? kRangeMax : prefix_len;
    }

    static std::int64_t leaf_of(std::int64_t prefix_len) {
        return (clamp_len(prefix_len) - 1) / kLeafWidth;
    }

    // inclusive token range covered by a node
    static std::pair<std::int64_t, std::int64_t> node_range(NodeRef n) {
        const std::int64_t width = kRangeMax >> (2 * n.depth);
        return {n.index * width + 1, (n.index + 1) * width};
    }

    // leaves [first, last) under a node
    static std::pair<std::int64_t, std::int64_t> leaf_span(NodeRef n) {
        const int shift = 2 * (kLeafDepth - n.depth);
        return {n.index << shift, (n.index + 1) << shift};
    }

    void insert(const PoolResident& r, double now_ms) {
        if (r.prefix_len < 1) throw std::invalid_argument("prefix_len must be >= 1");
        if (location_.count(r.id)) {
            throw std::invalid_argument("duplicate request id " + std::to_string(r.id));
        }
        const std::int64_t leaf = leaf_of(r.prefix_len);
        leaves_[static_cast<std::size_t>(leaf)].push_back(r);
        location_[r.id] = leaf;
        for_path(leaf, [&](int d, std::int64_t i) {
            // a subtree that was empty starts its starvation clock now
            if (req_count_[d][static_cast<std::size_t>(i)] == 0) {
                last_batch_ms_[d][static_cast<std::size_t>(i)] =
                    std::max(last_batch_ms_[d][static_cast<std::size_t>(i)], now_ms);
            }
            req_count_[d][static_cast<std::size_t>(i)] += 1;
            block_count_[d][static_cast<std::size_t>(i)] += r.kv_blocks;
        });
        ++size_;
    }

    PoolResident remove(RequestId id) {
        const auto it = location_.find(id);
        if (it == location_.end()) {
            throw std::invalid_argument("request id not in tree: " + std::to_string(id));
        }
        const std::int64_t leaf = it->second;
        auto& residents = leaves_[static_cast<std::size_t>(leaf)];
        PoolResident removed;
        for (std::size_t i = 0; i < residents.size(); ++i) {
            if (residents[i].id == id) {
                removed = residents[i];
                residents.erase(residents.begin() + static_cast<std::ptrdiff_t>(i));
                break;
            }
        }
        location_.erase(it);
        for_path(leaf, [&](int d, std::int64_t i) {
            req_count_[d][static_cast<std::size_t>(i)] -= 1;
            block_count_[d][static_cast<std::size_t>(i)] -= removed.kv_blocks;
        });
        --size_;
        return removed;
    }

    bool contains(RequestId id) const { return location_.count(id) > 0; }
    std::int64_t size() const { return size_; }
    bool empty() const { return size_ == 0; }

    std::int64_t request_count(NodeRef n) const {
        return req_count_[n.depth][static_cast<std::size_t>(n.index)];
    }
    std::int64_t block_count(NodeRef n) const {
        return block_count_[n.depth][static_cast<std::size_t>(n.index)];
    }
    double last_batch_ms(NodeRef n) const {
        return last_batch_ms_[n.depth][static_cast<std::size_t>(n.index)];
    }

    // Residents of the subtree, ascending by leaf range, FIFO within a leaf.
    std::vector<PoolResident> collect_requests(NodeRef n) const {
        const auto [first, last] = leaf_span(n);
        std::vector<PoolResident> out;
        out.reserve(static_cast<std::size_t>(request_count(n)));
        for (std::int64_t leaf = first; leaf < last; ++leaf) {
            const auto& v = leaves_[static_cast<std::size_t>(leaf)];
            out.insert(out.end(), v.begin(), v.end());
        }
        return out;
    }

    // Child with the largest request counter; ties break to the lowest range.
    NodeRef max_density_child(NodeRef n) const {
        if (n.depth >= kLeafDepth) throw std::invalid_argument("leaf has no children");
        NodeRef best{-1, -1};
        std::int64_t best_count = 0;
        for (int k = 0; k < 4; ++k) {
            const NodeRef c{n.depth + 1, n.index * 4 + k};
            const std::int64_t cnt = request_count(c);
            if (cnt > best_count) {
                best_count = cnt;
                best = c;
            }
        }
        if (best.depth < 0) throw std::invalid_argument("max_density_child of empty node");
        return best;
    }

    void touch_path(NodeRef n, double now_ms) {
        std::int64_t idx = n.index;
        for (int d = n.depth; d >= 0; --d) {
            auto& ts = last_batch_ms_[d][static_cast<std::size_t>(idx)];
            ts = std::max(ts, now_ms);
            idx /= 4;
        }
    }

    void touch_node(NodeRef n, double now_ms) {
        auto& ts = last_batch_ms_[n.depth][static_cast<std::size_t>(n.index)];
        ts = std::max(ts, now_ms);
    }

    // Internal nodes at the starvation scan depth whose residents have waited
    // longer than the threshold, oldest clock first.
    std::vector<NodeRef> starving_nodes(int scan_depth, double now_ms,
                                        double threshold_ms) const {
        std::vector<NodeRef> out;
        for (std::int64_t i = 0; i < nodes_at(scan_depth); ++i) {
            const NodeRef n{scan_depth, i};
            if (request_count(n) > 0 && now_ms - last_batch_ms(n) > threshold_ms) {
                out.push_back(n);
            }
        }
        std::sort(out.begin(), out.end(), [&](NodeRef a, NodeRef b) {
            const double ta = last_batch_ms(a), tb = last_batch_ms(b);
            if (ta != tb) return ta < tb;
            return a.index < b.index;
        });
        return out;
    }

    // Debug rendering: non-empty subtrees only, with ranges, counters and
    // starvation clocks; resident ids at the leaves.
    nlohmann::json dump_json() const { return dump_node(NodeRef{0, 0}); }

 private:
    template <typename F>
    void for_path(std::int64_t leaf, F&& f) {
        std::int64_t idx = leaf;
        for (int d = kLeafDepth; d >= 0; --d) {
            f(d, idx);
            idx /= 4;
        }
    }

    nlohmann::json dump_node(NodeRef n) const {
        nlohmann::json j;
        const auto [lo, hi] = node_range(n);
        j["range"] = {lo, hi};
        j["requests"] = request_count(n);
        j["blocks"] = block_count(n);
        j["last_batch_ms"] = last_batch_ms(n);
        if (n.depth == kLeafDepth) {
            auto ids = nlohmann::json::array();
            for (const auto& r : leaves_[static_cast<std::size_t>(n.index)]) {
                ids.push_back({{"id", r.id}, {"prefix_len", r.prefix_len}, {"blocks", r.kv_blocks}});
            }
            j["residents"] = std::move(ids);
        } else {
            auto children = nlohmann::json::array();
            for (int k = 0; k < 4; ++k) {
                const NodeRef c{n.depth + 1, n.index * 4 + k};
                if (request_count(c) > 0) children.push_back(dump_node(c));
            }
            j["children"] = std::move(children);
        }
        return j;
    }

    std::array<std::vector<std::int64_t>, kLeafDepth + 1> req_count_;
    std::array<std::vector<std::int64_t>, kLeafDepth + 1> block_count_;
    std::array<std::vector<double>, kLeafDepth + 1> last_batch_ms_;
    std::vector<std::vector<PoolResident>> leaves_;
    std::unordered_map<RequestId, std::int64_t> location_;
    std::int64_t size_ = 0;
};

}  // namespace prefixsim
