#pragma once

#include <prefixsim/baselines.hpp>
#include <prefixsim/batch_gen.hpp>
#include <prefixsim/cost_model.hpp>
#include <prefixsim/kv_index.hpp>
#include <prefixsim/log.hpp>
#include <prefixsim/prng.hpp>
#include <prefixsim/request.hpp>
#include <prefixsim/scheduler.hpp>
#include <prefixsim/workload.hpp>

#include <algorithm>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <queue>
#include <stdexcept>
#include <string>
#include <vector>

namespace prefixsim {

enum class Policy { kAligned, kFcfsContinuous, kDisaggFcfs };

inline const char* to_string(Policy p) {
    switch (p) {
        case Policy::kAligned: return "aligned";
        case Policy::kFcfsContinuous: return "fcfs_continuous";
        case Policy::kDisaggFcfs: return "disagg_fcfs";
    }
    return "?";
}

struct ClusterConfig {
    std::int64_t decode_hbm_blocks = 8192;
    std::int64_t prefill_hbm_blocks = 8192;
    std::int64_t kv_pool_bytes = 800'000'000'000LL;
    double pcie_bw = 6.4e7;    // bytes per ms (~64 GB/s)
    double nvlink_bw = 4.48e8; // bytes per ms (~448 GB/s)
    double transfer_latency_floor_ms = 0.05;
    double prefill_ms_per_token = 0.02;
    bool nvlink_available = true;
    std::int64_t block_size = 16;

    void validate() const {
        if (decode_hbm_blocks < 1 || prefill_hbm_blocks < 1 || kv_pool_bytes < 1) {
            throw std::invalid_argument("cluster capacities must be positive");
        }
        if (pcie_bw <= 0 || nvlink_bw <= 0 || transfer_latency_floor_ms < 0 ||
            prefill_ms_per_token <= 0 || block_size < 1) {
            throw std::invalid_argument("cluster rates must be positive");
        }
    }
};

// floor + bytes / bandwidth; NVLink requests fall back to PCIe pricing when
// the link is unavailable.
inline double transfer_time(std::int64_t bytes, LinkKind link, const ClusterConfig& cfg) {
    if (bytes < 0) throw std::invalid_argument("negative transfer size");
    LinkKind effective = link;
    if (link == LinkKind::kNvlink && !cfg.nvlink_available) effective = LinkKind::kPcie;
    const double bw = effective == LinkKind::kNvlink ? cfg.nvlink_bw : cfg.pcie_bw;
    return cfg.transfer_latency_floor_ms + static_cast<double>(bytes) / bw;
}

// Linear prefill model: latency plus the KV footprint the prompt produces.
inline std::pair<double, std::int64_t> prefill(const Request& r, const ClusterConfig& cfg,
                                               const ModelSpec& spec) {
    if (r.prompt_len < 1) throw std::invalid_argument("prompt_len must be >= 1");
    return {static_cast<double>(r.prompt_len) * cfg.prefill_ms_per_token,
            r.prompt_len * spec.kv_bytes_per_token()};
}

struct SimConfig {
    ClusterConfig cluster;
    BatchConstraints constraints;  // b_max of 0 means "use b_max_fraction"
    double b_max_fraction = 0.4;
    double candidate_buffer_fraction = 0.2;
    std::int64_t similarity_delta = 32;
    std::int64_t fcfs_max_batch = 256;
    Policy policy = Policy::kAligned;
    VictimPolicy fcfs_victim_policy = VictimPolicy::kMostRecent;
    std::uint64_t seed = 1;
    bool validate_invariants = true;

    std::int64_t b_max_blocks() const {
        if (constraints.b_max > 0) return constraints.b_max;
        return std::max<std::int64_t>(
            1, static_cast<std::int64_t>(b_max_fraction *
                                         static_cast<double>(cluster.decode_hbm_blocks)));
    }
    std::int64_t crb_capacity_blocks() const {
        return std::max<std::int64_t>(
            1, static_cast<std::int64_t>(candidate_buffer_fraction *
                                         static_cast<double>(cluster.prefill_hbm_blocks)));
    }
};

// =========================================================================
// Discrete-event engine. One instance simulates one (config, workload,
// policy, seed) run. The loop is single-threaded and deterministic: events
// at equal timestamps break ties by (kind priority, sequence number), with
// transfer completions first so capacity frees before consumers ask for it.
//
// Shared across all three policies: the prefill model, the iteration cost
// model, block accounting and transfer pricing. Only the scheduling policy
// differs.
// =========================================================================
class Simulation {
 public:
    Simulation(SimConfig config, const CalibratedCostModel& cost,
               std::vector<Request> workload)
        : cfg_(std::move(config)), cost_(cost), requests_(std::move(workload)),
          rng_(cfg_.seed) {
        cfg_.cluster.validate();
        cost_.validate();
        b_max_ = cfg_.b_max_blocks();
        crb_cap_ = cfg_.crb_capacity_blocks();
        if (cfg_.policy == Policy::kAligned &&
            b_max_ + crb_cap_ > cfg_.cluster.prefill_hbm_blocks) {
            throw std::invalid_argument(
                "prefill HBM too small for candidate batch plus candidate requests buffer");
        }
        constraints_ = cfg_.constraints;
        constraints_.b_max = b_max_;
        constraints_.validate();
    }

    MetricsLog run() {
        log_.policy = to_string(cfg_.policy);
        log_.seed = cfg_.seed;

        meta_.resize(requests_.size());
        fcfs_.max_batch = cfg_.fcfs_max_batch;
        for (std::size_t i = 0; i < requests_.size(); ++i) {
            auto& r = requests_[i];
            r.id = static_cast<RequestId>(i);
            r.prefix_len = r.prompt_len;
            r.kv_blocks = blocks_for(r.prefix_len, cfg_.cluster.block_size);
            r.state = RequestState::kArrived;
            push_event(r.arrival_ms, EventKind::kArrival, r.id);
        }

        sched_.decode_capacity_blocks = cfg_.cluster.decode_hbm_blocks;
        sched_.block_size = cfg_.cluster.block_size;
        sched_.similarity_delta = cfg_.similarity_delta;
        sched_.crb_capacity_blocks = crb_cap_;

        while (!events_.empty()) {
            const Event ev = events_.top();
            events_.pop();
            now_ = ev.t;
            dispatch(ev);
        }

        finalize();
        return std::move(log_);
    }

    const QuadTree& tree() const { return tree_; }

 private:
    enum class EventKind : int {
        kTransferDone = 0,
        kIterationDone = 1,
        kPrefillDone = 2,
        kArrival = 3,
        kBatchReady = 4,
    };

    struct Event {
        double t;
        EventKind kind;
        std::int64_t seq;
        std::int64_t a = 0;
        bool operator>(const Event& o) const {
            if (t != o.t) return t > o.t;
            if (kind != o.kind) return static_cast<int>(kind) > static_cast<int>(o.kind);
            return seq > o.seq;
        }
    };

    enum class TransferPurpose { kPoolInsert, kBatchPrefetch, kStrayPrefetch, kFlushToPool };

    struct PendingTransfer {
        TransferPurpose purpose;
        RequestId request = -1;
        std::int64_t batch_id = -1;
        std::int64_t bytes = 0;
        std::int64_t blocks = 0;
        std::int64_t origin = kNoOrigin;
    };

    struct Meta {
        std::int64_t generated = 0;
        bool rejected = false;
        bool arrived = false;
        double first_token_ms = -1.0;
        std::vector<double> token_times;
    };

    // ---- event plumbing ----

    void push_event(double t, EventKind kind, std::int64_t a) {
        events_.push(Event{t, kind, event_seq_++, a});
    }

    void dispatch(const Event& ev) {
        switch (ev.kind) {
            case EventKind::kArrival: on_arrival(ev.a); break;
            case EventKind::kPrefillDone: on_prefill_done(ev.a); break;
            case EventKind::kTransferDone: on_transfer_done(ev.a); break;
            case EventKind::kIterationDone: on_iteration_done(); break;
            case EventKind::kBatchReady: on_batch_ready(); break;
        }
    }

    void start_async_transfer(PendingTransfer t, LinkKind link, const std::string& kind) {
        const double dur = transfer_time(t.bytes, link, cfg_.cluster);
        const std::int64_t id = next_transfer_id_++;
        transfers_[id] = t;
        log_.transfers.push_back({now_, effective_link(link), t.bytes, dur, false, kind, t.request});
        push_event(now_ + dur, EventKind::kTransferDone, id);
    }

    double sync_transfer(std::int64_t bytes, LinkKind link, const std::string& kind, RequestId id) {
        const double dur = transfer_time(bytes, link, cfg_.cluster);
        log_.transfers.push_back({now_, effective_link(link), bytes, dur, true, kind, id});
        return dur;
    }

    LinkKind effective_link(LinkKind link) const {
        if (link == LinkKind::kNvlink && !cfg_.cluster.nvlink_available) return LinkKind::kPcie;
        return link;
    }

    std::int64_t kv_bytes(const Request& r) const {
        return r.prefix_len * cost_.spec.kv_bytes_per_token();
    }

    // ---- arrival / prefill / pool ----

    void on_arrival(RequestId id) {
        Request& r = requests_[static_cast<std::size_t>(id)];
        meta(id).arrived = true;
        const std::int64_t lifetime_blocks =
            blocks_for(r.prompt_len + r.target_output_len, cfg_.cluster.block_size);
        const bool too_big_for_device = lifetime_blocks > cfg_.cluster.decode_hbm_blocks;
        const bool too_big_for_batch =
            cfg_.policy == Policy::kAligned && lifetime_blocks > b_max_;
        if (too_big_for_device || too_big_for_batch) {
            meta(id).rejected = true;
            r.state = RequestState::kCompleted;  // leaves the system immediately
            log_.actions.push_back({now_, "reject", id, "arrival", "none", lifetime_blocks});
            return;
        }

        if (cfg_.policy == Policy::kFcfsContinuous) {
            // merged instance: the prompt is processed on the decode GPU when
            // the request is first admitted
            fcfs_.wait_queue.push_back({id, r.prefix_len, r.kv_blocks, false});
            if (!iteration_in_flight_) boundary({});
            return;
        }

        prefill_queue_.push_back(id);
        try_start_prefill();
    }

    void try_start_prefill() {
        if (prefill_busy_ || prefill_queue_.empty()) return;
        const RequestId id = prefill_queue_.front();
        prefill_queue_.pop_front();
        prefill_busy_ = true;
        prefill_active_ = id;
        Request& r = requests_[static_cast<std::size_t>(id)];
        r.state = RequestState::kPrefilling;
        const auto [latency, kv] = prefill(r, cfg_.cluster, cost_.spec);
        (void)kv;
        push_event(now_ + latency, EventKind::kPrefillDone, id);
    }

    void on_prefill_done(RequestId id) {
        const std::int64_t bytes = kv_bytes(requests_[static_cast<std::size_t>(id)]);
        if (pool_bytes_ + pool_inflight_bytes_ + bytes > cfg_.cluster.kv_pool_bytes) {
            parked_prefill_ = id;  // backpressure: hold until the pool drains
            return;
        }
        prefill_busy_ = false;
        prefill_active_ = -1;
        pool_inflight_bytes_ += bytes;
        start_async_transfer({TransferPurpose::kPoolInsert, id, -1, bytes,
                              requests_[static_cast<std::size_t>(id)].kv_blocks},
                             LinkKind::kPcie, "prefill_offload");
        try_start_prefill();
    }

    void unpark_prefill() {
        if (parked_prefill_ < 0) return;
        const RequestId id = parked_prefill_;
        parked_prefill_ = -1;
        on_prefill_done(id);
    }

    void pool_insert(RequestId id, std::int64_t bytes) {
        Request& r = requests_[static_cast<std::size_t>(id)];
        pool_bytes_ += bytes;
        sample_pool();
        r.state = RequestState::kPooled;
        r.pool_enter_ms = now_;
        log_.actions.push_back({now_, "pool_insert", id, "prefill", "pool", r.kv_blocks});

        if (cfg_.policy == Policy::kDisaggFcfs) {
            fcfs_.wait_queue.push_back({id, r.prefix_len, r.kv_blocks, false});
            if (!iteration_in_flight_) boundary({});
            return;
        }
        tree_.insert({id, r.prefix_len, r.kv_blocks}, now_);
        if (!cbb_pending_ && !sched_.candidate_batch) {
            try_generate_batch(sched_.running.empty() && !iteration_in_flight_);
        }
    }

    void sample_pool() {
        log_.pool_samples.push_back({now_, pool_bytes_});
        if (pool_bytes_ > cfg_.cluster.kv_pool_bytes) {
            throw std::runtime_error("kv pool overflow");
        }
    }

    // ---- aligned: batch generation and prefetch ----

    void try_generate_batch(bool decoder_idle = false) {
        if (cfg_.policy != Policy::kAligned) return;
        if (cbb_pending_ || sched_.candidate_batch || tree_.empty()) return;
        // While decoding runs, wait for enough pooled requests to fill a
        // proper batch; scraping together whatever exists is worth it only
        // when the decoder would otherwise sit idle.
        if (!decoder_idle && tree_.size() < constraints_.k_min) return;
        auto batch =
            density_first_search(tree_, constraints_, now_, next_batch_id_, false);
        if (!batch) return;
        // Short of k_min: wait for the pool to fill out instead of mixing
        // across the range. Starvation overrides are exempt; bypassing batch
        // economics is their point.
        if (!decoder_idle && !batch->starvation_override &&
            static_cast<std::int64_t>(batch->members.size()) < constraints_.k_min) {
            return;
        }
        refresh_batch_clocks(tree_, *batch, now_);
        ++next_batch_id_;

        std::int64_t bytes = 0;
        for (const auto& m : batch->members) {
            tree_.remove(m.id);
            requests_[static_cast<std::size_t>(m.id)].state = RequestState::kPrefetchedBatch;
            bytes += m.prefix_len * cost_.spec.kv_bytes_per_token();
            log_.actions.push_back({now_, "batch", m.id, "pool", "candidate_batch", m.kv_blocks});
        }
        cbb_pending_ = true;
        pending_cbb_ = *batch;
        start_async_transfer(
            {TransferPurpose::kBatchPrefetch, -1, batch->id, bytes, batch->total_blocks},
            LinkKind::kPcie, "batch_prefetch");
    }

    void on_transfer_done(std::int64_t transfer_id) {
        const auto it = transfers_.find(transfer_id);
        const PendingTransfer t = it->second;
        transfers_.erase(it);
        switch (t.purpose) {
            case TransferPurpose::kPoolInsert:
                pool_inflight_bytes_ -= t.bytes;
                pool_insert(t.request, t.bytes);
                unpark_prefill();
                break;
            case TransferPurpose::kBatchPrefetch: {
                pool_bytes_ -= t.bytes;
                sample_pool();
                CandidateBatch cb;
                cb.batch_id = pending_cbb_.id;
                for (const auto& m : pending_cbb_.members) {
                    cb.members.push_back({m.id, m.prefix_len, m.kv_blocks, pending_cbb_.id});
                }
                cb.ready = true;
                cb.window_lo = pending_cbb_.window_lo;
                cb.window_hi = pending_cbb_.window_hi;
                sched_.candidate_batch = std::move(cb);
                cbb_pending_ = false;
                push_event(now_, EventKind::kBatchReady, pending_cbb_.id);
                break;
            }
            case TransferPurpose::kStrayPrefetch: {
                pool_bytes_ -= t.bytes;
                sample_pool();
                sched_.crb_reserved_blocks -= t.blocks;
                Request& r = requests_[static_cast<std::size_t>(t.request)];
                const auto origins = sched_.origins();
                const std::int64_t newest = origins.empty() ? kNoOrigin : *origins.rbegin();
                if (t.origin != newest || newest == kNoOrigin) {
                    // the batch this stray was fetched for is on its way out
                    start_async_transfer({TransferPurpose::kFlushToPool, t.request, -1,
                                          t.bytes, t.blocks},
                                         LinkKind::kPcie, "flush");
                    break;
                }
                r.state = RequestState::kPrefetchedCandidate;
                sched_.candidate_requests.push_back(
                    {t.request, r.prefix_len, r.kv_blocks, t.origin});
                break;
            }
            case TransferPurpose::kFlushToPool: {
                Request& r = requests_[static_cast<std::size_t>(t.request)];
                pool_bytes_ += t.bytes;
                sample_pool();
                r.state = RequestState::kPooled;
                r.pool_enter_ms = now_;
                tree_.insert({t.request, r.prefix_len, r.kv_blocks}, now_);
                log_.actions.push_back({now_, "pool_insert", t.request, "candidate_requests",
                                        "pool", r.kv_blocks});
                if (!cbb_pending_ && !sched_.candidate_batch) {
                    try_generate_batch(sched_.running.empty() && !iteration_in_flight_);
                }
                break;
            }
        }
    }

    void on_batch_ready() {
        if (!iteration_in_flight_ && sched_.running.empty()) boundary({});
    }

    // ---- decode iterations ----

    void on_iteration_done() {
        iteration_in_flight_ = false;
        sched_.window_lo += 1;  // every running request grew by one token
        sched_.window_hi += 1;
        std::vector<RequestId> completed;
        for (auto& m : sched_.running) {
            Request& r = requests_[static_cast<std::size_t>(m.id)];
            r.prefix_len += 1;
            r.kv_blocks = blocks_for(r.prefix_len, cfg_.cluster.block_size);
            m.prefix_len = r.prefix_len;
            m.kv_blocks = r.kv_blocks;
            auto& mm = meta(m.id);
            mm.generated += 1;
            mm.token_times.push_back(now_);
            if (mm.first_token_ms < 0) mm.first_token_ms = now_;
            if (mm.generated >= r.target_output_len) completed.push_back(m.id);
        }
        boundary(completed);
    }

    void boundary(const std::vector<RequestId>& completed) {
        double schedule_ms = 0.0;
        double prefill_stall_ms = 0.0;

        if (cfg_.policy == Policy::kAligned) {
            schedule_ms = aligned_boundary(completed);
        } else {
            fcfs_boundary(completed, schedule_ms, prefill_stall_ms);
        }

        if (cfg_.validate_invariants) check_invariants();
        if (sched_.running.empty()) {
            // decoder idle: take whatever the pool has rather than wait
            if (cfg_.policy == Policy::kAligned && !iteration_in_flight_) {
                try_generate_batch(true);
            }
            return;
        }

        std::vector<std::int64_t> lens;
        lens.reserve(sched_.running.size());
        for (const auto& m : sched_.running) lens.push_back(m.prefix_len);
        const IterationCost cost = iteration_latency(lens, cost_);

        IterationRecord rec;
        rec.seq = static_cast<std::int64_t>(log_.iterations.size());
        rec.start_ms = now_ + prefill_stall_ms + schedule_ms;
        rec.end_ms = rec.start_ms + cost.total_ms;
        rec.schedule_ms = schedule_ms;
        rec.prefill_stall_ms = prefill_stall_ms;
        rec.compute_ms = cost.total_ms;
        rec.attn_ms = cost.attn_ms;
        rec.bubble_ms = bubble_from_per_request(cost.per_request_ms);
        rec.switching = sched_.switching();
        rec.prefix_lengths = std::move(lens);
        const double end_ms = rec.end_ms;
        log_.iterations.push_back(std::move(rec));

        iteration_in_flight_ = true;
        push_event(end_ms, EventKind::kIterationDone, 0);
    }

    double aligned_boundary(const std::vector<RequestId>& completed) {
        double schedule_ms = 0.0;

        const auto actions = on_iteration_end(sched_, completed);
        bool saw_evict = false, saw_admit = false;
        for (const auto& a : actions) {
            switch (a.kind) {
                case ActionKind::kRelease: {
                    Request& r = requests_[static_cast<std::size_t>(a.request_id)];
                    r.state = RequestState::kCompleted;
                    log_.actions.push_back({now_, "release", a.request_id, "running",
                                            "completed", a.blocks});
                    break;
                }
                case ActionKind::kEvict: {
                    saw_evict = true;
                    if (saw_admit) throw std::logic_error("eviction after admission in one boundary");
                    Request& r = requests_[static_cast<std::size_t>(a.request_id)];
                    schedule_ms += sync_transfer(kv_bytes(r), LinkKind::kNvlink, "evict",
                                                 a.request_id);
                    r.state = RequestState::kEvictedToCandidate;
                    log_.actions.push_back({now_, "evict", a.request_id, "running",
                                            "candidate_requests", a.blocks});
                    break;
                }
                case ActionKind::kEvictToPool: {
                    saw_evict = true;
                    if (saw_admit) throw std::logic_error("eviction after admission in one boundary");
                    Request& r = requests_[static_cast<std::size_t>(a.request_id)];
                    const std::int64_t bytes = kv_bytes(r);
                    schedule_ms += sync_transfer(bytes, LinkKind::kPcie, "spill", a.request_id);
                    pool_bytes_ += bytes;
                    sample_pool();
                    r.state = RequestState::kPooled;
                    r.pool_enter_ms = now_;
                    tree_.insert({a.request_id, r.prefix_len, r.kv_blocks}, now_);
                    log_.actions.push_back({now_, "spill", a.request_id, "running", "pool",
                                            a.blocks});
                    break;
                }
                case ActionKind::kFlushStale: {
                    Request& r = requests_[static_cast<std::size_t>(a.request_id)];
                    start_async_transfer({TransferPurpose::kFlushToPool, a.request_id, -1,
                                          kv_bytes(r), a.blocks},
                                         LinkKind::kPcie, "flush");
                    break;
                }
                case ActionKind::kAdmitFromCrb:
                case ActionKind::kAdmitFromCbb: {
                    saw_admit = true;
                    if (saw_evict) throw std::logic_error("admission after eviction in one boundary");
                    Request& r = requests_[static_cast<std::size_t>(a.request_id)];
                    schedule_ms += sync_transfer(kv_bytes(r), LinkKind::kNvlink, "admit",
                                                 a.request_id);
                    r.state = RequestState::kRunning;
                    log_.actions.push_back({now_, "admit", a.request_id,
                                            a.kind == ActionKind::kAdmitFromCrb
                                                ? "candidate_requests"
                                                : "candidate_batch",
                                            "running", a.blocks});
                    break;
                }
                case ActionKind::kSignalBatchGen:
                    try_generate_batch();
                    break;
            }
        }

        stray_prefetch();
        return schedule_ms;
    }

    void stray_prefetch() {
        const auto picks = dynamic_prefetch(sched_, tree_, crb_cap_,
                                            sched_.crb_used_blocks() + sched_.crb_reserved_blocks);
        const auto origins = sched_.origins();
        const std::int64_t origin = origins.empty() ? kNoOrigin : *origins.rbegin();
        for (const auto& p : picks) {
            tree_.remove(p.id);
            Request& r = requests_[static_cast<std::size_t>(p.id)];
            r.state = RequestState::kPrefetchedCandidate;
            sched_.crb_reserved_blocks += p.kv_blocks;
            start_async_transfer(
                {TransferPurpose::kStrayPrefetch, p.id, -1, kv_bytes(r), p.kv_blocks, origin},
                LinkKind::kPcie, "stray_prefetch");
            log_.actions.push_back({now_, "prefetch", p.id, "pool", "candidate_requests",
                                    p.kv_blocks});
        }
    }

    // ---- fcfs and disaggregated fcfs ----

    void fcfs_boundary(const std::vector<RequestId>& completed, double& schedule_ms,
                       double& prefill_stall_ms) {
        const auto actions = fcfs_step(sched_, fcfs_, completed, cfg_.fcfs_victim_policy, &rng_);
        for (const auto& a : actions) {
            Request& r = requests_[static_cast<std::size_t>(a.request_id)];
            switch (a.kind) {
                case FcfsActionKind::kRelease:
                    r.state = RequestState::kCompleted;
                    log_.actions.push_back({now_, "release", a.request_id, "running",
                                            "completed", a.blocks});
                    break;
                case FcfsActionKind::kEvict:
                    schedule_ms += sync_transfer(kv_bytes(r), LinkKind::kPcie, "evict",
                                                 a.request_id);
                    pool_bytes_ += kv_bytes(r);
                    sample_pool();
                    r.state = RequestState::kPooled;
                    log_.actions.push_back({now_, "evict", a.request_id, "running",
                                            "wait_queue", a.blocks});
                    break;
                case FcfsActionKind::kAdmitSwapIn:
                    schedule_ms += sync_transfer(kv_bytes(r), LinkKind::kPcie, "admit",
                                                 a.request_id);
                    pool_bytes_ -= kv_bytes(r);
                    sample_pool();
                    r.state = RequestState::kRunning;
                    log_.actions.push_back({now_, "admit", a.request_id, "wait_queue",
                                            "running", a.blocks});
                    break;
                case FcfsActionKind::kAdmitFresh:
                    if (cfg_.policy == Policy::kDisaggFcfs) {
                        schedule_ms += sync_transfer(kv_bytes(r), LinkKind::kPcie, "admit",
                                                     a.request_id);
                        pool_bytes_ -= kv_bytes(r);
                        sample_pool();
                    } else {
                        // merged instance: prompt processed in place
                        prefill_stall_ms += static_cast<double>(r.prompt_len) *
                                            cfg_.cluster.prefill_ms_per_token;
                    }
                    r.state = RequestState::kRunning;
                    log_.actions.push_back({now_, "admit", a.request_id, "wait_queue",
                                            "running", a.blocks});
                    break;
            }
        }
    }

    // ---- invariants ----

    void check_invariants() {
        if (sched_.used_blocks() > cfg_.cluster.decode_hbm_blocks) {
            throw std::logic_error("decode HBM oversubscribed");
        }
        if (sched_.crb_used_blocks() + sched_.crb_reserved_blocks > crb_cap_) {
            throw std::logic_error("candidate requests buffer oversubscribed");
        }
        if (sched_.origins().size() > 2) {
            throw std::logic_error("more than two origin batches in the running set");
        }
        if (++census_tick_ % 16 == 0) census();
    }

    // Conservation: every arrived, unfinished request sits in exactly one
    // place.
    void census() const {
        std::vector<int> seen(requests_.size(), 0);
        const auto mark = [&](RequestId id) { seen[static_cast<std::size_t>(id)] += 1; };

        for (RequestId id : prefill_queue_) mark(id);
        if (prefill_active_ >= 0) mark(prefill_active_);
        if (parked_prefill_ >= 0) mark(parked_prefill_);
        for (const auto& [tid, t] : transfers_) {
            if (t.request >= 0) mark(t.request);
        }
        if (cbb_pending_) {
            for (const auto& m : pending_cbb_.members) mark(m.id);
        }
        if (sched_.candidate_batch) {
            for (const auto& m : sched_.candidate_batch->members) mark(m.id);
        }
        for (const auto& m : sched_.candidate_requests) mark(m.id);
        for (const auto& m : sched_.running) mark(m.id);
        for (const auto& e : fcfs_.wait_queue) mark(e.id);
        if (cfg_.policy == Policy::kAligned) {
            // pooled requests live in the index; the fcfs variants keep them
            // in the wait queue counted above
            for (std::size_t i = 0; i < requests_.size(); ++i) {
                if (requests_[i].state == RequestState::kPooled) {
                    if (!tree_.contains(requests_[i].id)) {
                        throw std::logic_error("pooled request missing from tree");
                    }
                    mark(requests_[i].id);
                }
            }
        }

        for (std::size_t i = 0; i < requests_.size(); ++i) {
            const auto& mm = meta_[i];
            const bool active = mm.arrived && !mm.rejected &&
                                requests_[i].state != RequestState::kCompleted;
            const int expected = active ? 1 : 0;
            if (seen[i] != expected) {
                throw std::logic_error("request census mismatch for id " + std::to_string(i));
            }
        }
    }

    void finalize() {
        for (std::size_t i = 0; i < requests_.size(); ++i) {
            const Request& r = requests_[i];
            const Meta& m = meta_[i];
            RequestRecord rec;
            rec.id = r.id;
            rec.arrival_ms = r.arrival_ms;
            rec.prompt_len = r.prompt_len;
            rec.output_len = r.target_output_len;
            rec.rejected = m.rejected;
            if (m.rejected) rec.reject_reason = "exceeds device or batch block budget";
            if (m.first_token_ms >= 0) rec.ttft_ms = m.first_token_ms - r.arrival_ms;
            if (r.state == RequestState::kCompleted && !m.token_times.empty()) {
                rec.completed_ms = m.token_times.back();
            }
            rec.token_times_ms = m.token_times;
            log_.requests.push_back(std::move(rec));

            if (cfg_.validate_invariants && !m.rejected) {
                if (r.state != RequestState::kCompleted) {
                    throw std::logic_error("request did not complete: " + std::to_string(r.id));
                }
                if (m.generated != r.target_output_len) {
                    throw std::logic_error("token conservation violated");
                }
            }
        }
    }

    Meta& meta(RequestId id) { return meta_[static_cast<std::size_t>(id)]; }

    SimConfig cfg_;
    CalibratedCostModel cost_;
    std::vector<Request> requests_;
    std::vector<Meta> meta_;
    Rng rng_;

    std::priority_queue<Event, std::vector<Event>, std::greater<>> events_;
    std::int64_t event_seq_ = 0;
    double now_ = 0.0;

    // prefill instance
    std::deque<RequestId> prefill_queue_;
    bool prefill_busy_ = false;
    RequestId prefill_active_ = -1;
    RequestId parked_prefill_ = -1;

    // host pool
    QuadTree tree_;
    std::int64_t pool_bytes_ = 0;
    std::int64_t pool_inflight_bytes_ = 0;

    // prefill-side buffers (aligned)
    bool cbb_pending_ = false;
    Batch pending_cbb_;
    std::int64_t next_batch_id_ = 1;
    std::int64_t b_max_ = 1;
    std::int64_t crb_cap_ = 1;
    BatchConstraints constraints_;

    // fcfs variants
    FcfsState fcfs_;

    // decode instance
    SchedulerState sched_;
    bool iteration_in_flight_ = false;

    std::map<std::int64_t, PendingTransfer> transfers_;
    std::int64_t next_transfer_id_ = 0;
    std::int64_t census_tick_ = 0;

    MetricsLog log_;
};

inline MetricsLog run(const SimConfig& config, std::vector<Request> workload,
                      const CalibratedCostModel& cost) {
    Simulation sim(config, cost, std::move(workload));
    return sim.run();
}

}  // namespace prefixsim
