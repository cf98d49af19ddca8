#pragma once

#include <cstdint>
#include <string>

namespace prefixsim {

using RequestId = std::int64_t;

// Lifecycle of a request through the disaggregated pipeline.
enum class RequestState {
    kArrived,
    kPrefilling,
    kPooled,
    kPrefetchedBatch,      // staged in the candidate-batch buffer
    kPrefetchedCandidate,  // staged in the candidate-requests buffer
    kRunning,
    kEvictedToCandidate,
    kCompleted,
};

inline const char* to_string(RequestState s) {
    switch (s) {
        case RequestState::kArrived: return "arrived";
        case RequestState::kPrefilling: return "prefilling";
        case RequestState::kPooled: return "pooled";
        case RequestState::kPrefetchedBatch: return "prefetched_batch";
        case RequestState::kPrefetchedCandidate: return "prefetched_candidate";
        case RequestState::kRunning: return "running";
        case RequestState::kEvictedToCandidate: return "evicted_to_candidate";
        case RequestState::kCompleted: return "completed";
    }
    return "?";
}

// One inference job. prefix_len = prompt plus tokens generated so far; it is
// the length the attention of the next token depends on.
//
// target_output_len is consumed only by the simulation engine to decide when
// the request completes; scheduling policies never read it (they see requests
// through the pool index and scheduler views, which do not carry it).
struct Request {
    RequestId id = 0;
    double arrival_ms = 0.0;
    std::int64_t prompt_len = 0;
    std::int64_t target_output_len = 0;
    std::int64_t prefix_len = 0;
    std::int64_t kv_blocks = 0;
    RequestState state = RequestState::kArrived;
    double pool_enter_ms = 0.0;
};

inline std::int64_t blocks_for(std::int64_t prefix_len, std::int64_t block_size) {
    return (prefix_len + block_size - 1) / block_size;
}

}  // namespace prefixsim
