#pragma once

#include <prefixsim/request.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace prefixsim {

constexpr int kLogSchemaVersion = 1;

enum class LinkKind { kPcie, kNvlink, kNone };

inline const char* to_string(LinkKind l) {
    switch (l) {
        case LinkKind::kPcie: return "pcie";
        case LinkKind::kNvlink: return "nvlink";
        case LinkKind::kNone: return "none";
    }
    return "?";
}

struct IterationRecord {
    std::int64_t seq = 0;
    double start_ms = 0.0;       // after boundary scheduling
    double end_ms = 0.0;
    double schedule_ms = 0.0;    // synchronous KV movement at the boundary
    double prefill_stall_ms = 0.0;  // merged-instance prefill work (fcfs only)
    double compute_ms = 0.0;
    double attn_ms = 0.0;        // attention part of compute_ms
    double bubble_ms = 0.0;
    bool switching = false;
    std::vector<std::int64_t> prefix_lengths;
};

struct TransferRecord {
    double t_ms = 0.0;
    LinkKind link = LinkKind::kPcie;
    std::int64_t bytes = 0;
    double duration_ms = 0.0;
    bool synchronous = false;
    std::string kind;  // prefill_offload, batch_prefetch, stray_prefetch, admit, evict, spill
    RequestId request_id = -1;  // -1 for aggregate transfers
};

// Scheduling decisions, one record per request movement.
struct ActionRecord {
    double t_ms = 0.0;
    std::string action;  // release, evict, admit, spill, pool_insert, reject
    RequestId request_id = 0;
    std::string from;
    std::string to;
    std::int64_t blocks = 0;
};

struct RequestRecord {
    RequestId id = 0;
    double arrival_ms = 0.0;
    std::int64_t prompt_len = 0;
    std::int64_t output_len = 0;
    double ttft_ms = -1.0;                // arrival to first decoded token
    double completed_ms = -1.0;
    std::vector<double> token_times_ms;   // timestamp of each decoded token
    bool rejected = false;
    std::string reject_reason;
};

struct PoolSample {
    double t_ms = 0.0;
    std::int64_t pool_bytes = 0;
};

struct MetricsLog {
    std::string policy;
    std::uint64_t seed = 0;
    std::vector<IterationRecord> iterations;
    std::vector<TransferRecord> transfers;
    std::vector<ActionRecord> actions;
    std::vector<RequestRecord> requests;
    std::vector<PoolSample> pool_samples;
};

}  // namespace prefixsim
