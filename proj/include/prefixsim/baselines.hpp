#pragma once

#include <prefixsim/prng.hpp>
#include <prefixsim/scheduler.hpp>

#include <algorithm>
#include <cstdint>
#include <deque>
#include <stdexcept>
#include <unordered_map>
#include <vector>

namespace prefixsim {

// Continuous-batching baseline state: a FIFO of requests waiting for a slot.
// Evicted requests go back to the queue head with their grown prefix and are
// swapped back in rather than recomputed.
struct FcfsEntry {
    RequestId id = 0;
    std::int64_t prefix_len = 0;
    std::int64_t kv_blocks = 0;
    bool swapped_out = false;
};

struct FcfsState {
    std::deque<FcfsEntry> wait_queue;
    std::unordered_map<RequestId, std::int64_t> admit_seq;
    std::int64_t next_admit_seq = 0;
    std::int64_t max_batch = 256;
};

enum class FcfsActionKind { kRelease, kEvict, kAdmitFresh, kAdmitSwapIn };

struct FcfsAction {
    FcfsActionKind kind;
    RequestId request_id = 0;
    std::int64_t blocks = 0;
};

enum class VictimPolicy { kLongest, kRandom, kMostRecent };

// One scheduling pass at an iteration boundary: release completed requests,
// evict (most-recently-admitted victim) while the next iteration does not
// fit, otherwise admit from the queue head strictly in FIFO order.
inline std::vector<FcfsAction> fcfs_step(SchedulerState& st, FcfsState& fs,
                                         const std::vector<RequestId>& completed,
                                         VictimPolicy victim_policy = VictimPolicy::kMostRecent,
                                         Rng* rng = nullptr) {
    std::vector<FcfsAction> actions;

    for (RequestId id : completed) {
        auto it = std::find_if(st.running.begin(), st.running.end(),
                               [&](const RunningMember& m) { return m.id == id; });
        if (it == st.running.end()) {
            throw std::invalid_argument("completed request not in running batch");
        }
        actions.push_back({FcfsActionKind::kRelease, id, it->kv_blocks});
        st.running.erase(it);
    }

    bool evicted = false;
    while (st.free_blocks() < st.blocks_needed_next_iteration()) {
        if (st.running.empty()) throw std::runtime_error("unschedulable: zero-capacity HBM");
        std::size_t v = 0;
        if (victim_policy == VictimPolicy::kRandom && rng != nullptr) {
            v = static_cast<std::size_t>(
                rng->uniform_int(0, static_cast<std::int64_t>(st.running.size()) - 1));
        } else {
            for (std::size_t i = 1; i < st.running.size(); ++i) {
                if (fs.admit_seq[st.running[i].id] > fs.admit_seq[st.running[v].id]) v = i;
            }
        }
        const RunningMember m = st.running[v];
        st.running.erase(st.running.begin() + static_cast<std::ptrdiff_t>(v));
        fs.wait_queue.push_front({m.id, m.prefix_len, m.kv_blocks, true});
        actions.push_back({FcfsActionKind::kEvict, m.id, m.kv_blocks});
        evicted = true;
    }
    if (evicted) return actions;

    while (!fs.wait_queue.empty() &&
           static_cast<std::int64_t>(st.running.size()) < fs.max_batch) {
        const FcfsEntry& head = fs.wait_queue.front();
        if (head.kv_blocks > st.free_blocks() - st.blocks_needed_next_iteration()) break;
        const FcfsEntry entry = head;
        fs.wait_queue.pop_front();
        st.running.push_back({entry.id, entry.prefix_len, entry.kv_blocks, 0});
        fs.admit_seq[entry.id] = fs.next_admit_seq++;
        actions.push_back({entry.swapped_out ? FcfsActionKind::kAdmitSwapIn
                                             : FcfsActionKind::kAdmitFresh,
                           entry.id, entry.kv_blocks});
    }
    return actions;
}

}  // namespace prefixsim
