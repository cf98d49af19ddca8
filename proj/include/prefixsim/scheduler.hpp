#pragma once

#include <prefixsim/batch_gen.hpp>
#include <prefixsim/kv_index.hpp>

#include <algorithm>
#include <cstdint>
#include <deque>
#include <optional>
#include <set>
#include <stdexcept>
#include <vector>

namespace prefixsim {

constexpr std::int64_t kNoOrigin = -1;

struct RunningMember {
    RequestId id = 0;
    std::int64_t prefix_len = 0;
    std::int64_t kv_blocks = 0;
    std::int64_t origin_batch = kNoOrigin;
};

struct BufferedMember {
    RequestId id = 0;
    std::int64_t prefix_len = 0;
    std::int64_t kv_blocks = 0;
    std::int64_t origin_batch = kNoOrigin;  // evictees keep their batch id
};

struct CandidateBatch {
    std::int64_t batch_id = 0;
    std::deque<BufferedMember> members;
    bool ready = false;  // prefetch transfer finished
    std::int64_t window_lo = 0, window_hi = 0;  // prefix span at generation
};

enum class ActionKind {
    kRelease,        // completed request left the device
    kEvict,          // running -> candidate requests buffer
    kEvictToPool,    // running -> pool directly (buffer cannot hold it)
    kFlushStale,     // candidate whose origin batch drained -> back to pool
    kAdmitFromCrb,   // candidate requests buffer -> running
    kAdmitFromCbb,   // candidate batch buffer -> running
    kSignalBatchGen, // candidate batch buffer drained; generate the next one
};

struct SchedulingAction {
    ActionKind kind;
    RequestId request_id = 0;
    std::int64_t blocks = 0;
};

// Decode-side view the batch-level policy operates on. The candidate buffers
// physically live on the prefill instance; the scheduler only tracks
// membership and block counts.
struct SchedulerState {
    std::vector<RunningMember> running;
    std::deque<BufferedMember> candidate_requests;
    std::optional<CandidateBatch> candidate_batch;

    std::int64_t decode_capacity_blocks = 0;
    std::int64_t block_size = 16;
    std::int64_t similarity_delta = 32;

    // candidate-requests-buffer capacity on the prefill side; the reserved
    // part covers stray prefetches still in flight
    std::int64_t crb_capacity_blocks = 0;
    std::int64_t crb_reserved_blocks = 0;

    // prefix window of the newest admitted batch, as designed by the batch
    // generator; drifts by one token per iteration as the batch decodes.
    // Strays and evictees joining the batch do not widen it.
    std::int64_t window_origin = kNoOrigin;
    std::int64_t window_lo = 0, window_hi = 0;

    std::int64_t used_blocks() const {
        std::int64_t used = 0;
        for (const auto& m : running) used += m.kv_blocks;
        return used;
    }
    std::int64_t free_blocks() const { return decode_capacity_blocks - used_blocks(); }

    std::int64_t crb_used_blocks() const {
        std::int64_t used = 0;
        for (const auto& m : candidate_requests) used += m.kv_blocks;
        return used;
    }

    std::set<std::int64_t> origins() const {
        std::set<std::int64_t> o;
        for (const auto& m : running) o.insert(m.origin_batch);
        return o;
    }
    bool switching() const { return origins().size() == 2; }

    // Requests whose next token starts a new block; the next iteration needs
    // one free block for each of them.
    std::int64_t blocks_needed_next_iteration() const {
        std::int64_t need = 0;
        for (const auto& m : running) {
            if (m.prefix_len % block_size == 0) ++need;
        }
        return need;
    }
};

namespace sched_detail {

// Victim: longest prefix within the eligible set. While switching, only the
// old (smaller id) origin batch is eligible, which drains it faster.
inline std::size_t pick_victim(const SchedulerState& st) {
    const auto origins = st.origins();
    std::int64_t eligible_origin = kNoOrigin - 1;  // sentinel: everyone
    if (origins.size() == 2) eligible_origin = *origins.begin();

    std::size_t best = st.running.size();
    for (std::size_t i = 0; i < st.running.size(); ++i) {
        const auto& m = st.running[i];
        if (origins.size() == 2 && m.origin_batch != eligible_origin) continue;
        if (best == st.running.size() || m.prefix_len > st.running[best].prefix_len) {
            best = i;
        }
    }
    return best;
}

}  // namespace sched_detail

// Batch-level scheduling at an iteration boundary, in strict case order:
// releases first, then eviction if the next iteration does not fit, else
// admissions from the candidate requests buffer (FIFO), else admissions from
// the candidate batch buffer. Admissions never share a boundary with
// evictions, and the candidate batch is untouched while candidate requests
// remain. Buffered members whose origin batch has fully drained are flushed
// back to the pool before any admission is considered.
inline std::vector<SchedulingAction> on_iteration_end(SchedulerState& st,
                                                      const std::vector<RequestId>& completed) {
    std::vector<SchedulingAction> actions;

    for (RequestId id : completed) {
        auto it = std::find_if(st.running.begin(), st.running.end(),
                               [&](const RunningMember& m) { return m.id == id; });
        if (it == st.running.end()) {
            throw std::invalid_argument("completed request not in running batch");
        }
        actions.push_back({ActionKind::kRelease, id, it->kv_blocks});
        st.running.erase(it);
    }

    bool evicted = false;
    while (st.free_blocks() < st.blocks_needed_next_iteration()) {
        if (st.running.empty()) {
            throw std::runtime_error("unschedulable: zero-capacity HBM");
        }
        const std::size_t v = sched_detail::pick_victim(st);
        const RunningMember victim = st.running[v];
        st.running.erase(st.running.begin() + static_cast<std::ptrdiff_t>(v));
        const bool fits_buffer = st.crb_used_blocks() + st.crb_reserved_blocks +
                                     victim.kv_blocks <=
                                 st.crb_capacity_blocks;
        if (fits_buffer) {
            st.candidate_requests.push_back(
                {victim.id, victim.prefix_len, victim.kv_blocks, victim.origin_batch});
            actions.push_back({ActionKind::kEvict, victim.id, victim.kv_blocks});
        } else {
            actions.push_back({ActionKind::kEvictToPool, victim.id, victim.kv_blocks});
        }
        evicted = true;
    }

    {
        // Only candidates of the newest running batch stay buffered. Members
        // of the outgoing batch go back to the pool: re-admitting them would
        // stretch the old batch's life and undo the switch the victim rule
        // accelerates.
        const auto origins = st.origins();
        const std::int64_t newest = origins.empty() ? kNoOrigin : *origins.rbegin();
        auto& crb = st.candidate_requests;
        for (std::size_t i = 0; i < crb.size();) {
            if (crb[i].origin_batch == newest && newest != kNoOrigin) {
                ++i;
                continue;
            }
            actions.push_back({ActionKind::kFlushStale, crb[i].id, crb[i].kv_blocks});
            crb.erase(crb.begin() + static_cast<std::ptrdiff_t>(i));
        }
    }
    if (evicted) return actions;

    // Admissions happen where capacity was freed: after completions, or into
    // an empty device.
    const bool capacity_freed = !completed.empty() || st.running.empty();
    if (!capacity_freed) return actions;

    if (!st.candidate_requests.empty()) {
        // case 1: FIFO, stop at the first member that does not fit
        while (!st.candidate_requests.empty()) {
            const BufferedMember& head = st.candidate_requests.front();
            if (head.kv_blocks > st.free_blocks() - st.blocks_needed_next_iteration()) break;
            std::int64_t origin = head.origin_batch;
            if (origin == kNoOrigin) {
                const auto o = st.origins();
                origin = o.empty() ? kNoOrigin : *o.rbegin();
            }
            st.running.push_back({head.id, head.prefix_len, head.kv_blocks, origin});
            actions.push_back({ActionKind::kAdmitFromCrb, head.id, head.kv_blocks});
            st.candidate_requests.pop_front();
        }
        return actions;
    }

    // A new batch may begin entering only once the previous switch finished:
    // the running set never holds members of more than two origin batches.
    if (st.candidate_batch && st.candidate_batch->ready && st.origins().size() <= 1) {
        auto& cb = *st.candidate_batch;
        bool admitted_any = false;
        while (!cb.members.empty()) {
            const BufferedMember& head = cb.members.front();
            if (head.kv_blocks > st.free_blocks() - st.blocks_needed_next_iteration()) break;
            st.running.push_back({head.id, head.prefix_len, head.kv_blocks, cb.batch_id});
            actions.push_back({ActionKind::kAdmitFromCbb, head.id, head.kv_blocks});
            cb.members.pop_front();
            admitted_any = true;
        }
        if (admitted_any && st.window_origin != cb.batch_id) {
            st.window_origin = cb.batch_id;
            st.window_lo = cb.window_lo;
            st.window_hi = cb.window_hi;
        }
        if (cb.members.empty()) {
            st.candidate_batch.reset();
            actions.push_back({ActionKind::kSignalBatchGen, 0, 0});
        }
    }
    return actions;
}

// Pooled requests whose prefix falls within delta of the running batch's
// window, nearest-to-window first, as many as the buffer capacity allows.
// The caller removes them from the tree and starts the transfers. The window
// is the one the batch was generated with (drifted by decoding progress),
// so a handful of stragglers cannot widen the net.
inline std::vector<PoolResident> dynamic_prefetch(const SchedulerState& st,
                                                  const QuadTree& tree,
                                                  std::int64_t buffer_capacity_blocks,
                                                  std::int64_t buffer_used_blocks) {
    if (st.running.empty() || tree.empty()) return {};

    std::int64_t lo, hi;
    if (st.window_origin != kNoOrigin && st.origins().count(st.window_origin)) {
        lo = st.window_lo;
        hi = st.window_hi;
    } else {
        lo = st.running.front().prefix_len;
        hi = lo;
        for (const auto& m : st.running) {
            lo = std::min(lo, m.prefix_len);
            hi = std::max(hi, m.prefix_len);
        }
    }
    // "similar length" only means something for a tight batch; a degenerate
    // window (short-of-k_min expansions across half the range) attracts no
    // strays, otherwise it would swallow the whole pool and starve the next
    // batch behind a never-empty candidate buffer
    if (hi - lo > 8 * st.similarity_delta) return {};
    const std::int64_t from = std::max<std::int64_t>(1, lo - st.similarity_delta);
    const std::int64_t to = hi + st.similarity_delta;

    std::vector<PoolResident> in_window;
    const std::int64_t leaf_from = QuadTree::leaf_of(from);
    const std::int64_t leaf_to = QuadTree::leaf_of(std::min(to, QuadTree::kRangeMax));
    for (std::int64_t leaf = leaf_from; leaf <= leaf_to; ++leaf) {
        for (const auto& r : tree.collect_requests(NodeRef{QuadTree::kLeafDepth, leaf})) {
            if (r.prefix_len >= from && r.prefix_len <= to) in_window.push_back(r);
        }
    }
    const auto distance = [&](const PoolResident& r) {
        if (r.prefix_len >= lo && r.prefix_len <= hi) return std::int64_t{0};
        return r.prefix_len < lo ? lo - r.prefix_len : r.prefix_len - hi;
    };
    std::stable_sort(in_window.begin(), in_window.end(),
                     [&](const PoolResident& a, const PoolResident& b) {
                         const auto da = distance(a), db = distance(b);
                         if (da != db) return da < db;
                         return a.prefix_len < b.prefix_len;
                     });

    std::vector<PoolResident> picks;
    std::int64_t used = buffer_used_blocks;
    for (const auto& r : in_window) {
        if (used + r.kv_blocks > buffer_capacity_blocks) break;
        used += r.kv_blocks;
        picks.push_back(r);
    }
    return picks;
}

// Fraction of logged iterations that ran during a batch switch.
inline double batch_switch_fraction(const std::vector<bool>& switching_flags) {
    if (switching_flags.empty()) throw std::invalid_argument("empty log");
    std::int64_t n = 0;
    for (bool f : switching_flags) n += f ? 1 : 0;
    return static_cast<double>(n) / static_cast<double>(switching_flags.size());
}

}  // namespace prefixsim
