#pragma once

#include <prefixsim/cluster_sim.hpp>
#include <prefixsim/cost_model.hpp>
#include <prefixsim/io.hpp>
#include <prefixsim/metrics.hpp>
#include <prefixsim/svg.hpp>
#include <prefixsim/workload.hpp>

#include <map>
#include <string>
#include <vector>

namespace prefixsim {

// Cost model used when an experiment config supplies none: the reference
// mixed-batch anchors fitted for a 4096x32 fp16 model.
inline CalibratedCostModel default_cost_model() {
    return calibrate(reference_mixed_batch_anchors(), ModelSpec{4096, 32, 2}).model;
}

// -------------------------------------------------------------------------
// Canned experiment: per-iteration latency curves for mixed batches
// (batch 64, 32-token prompts with 0/1/2/4 of them replaced by 4096-token
// prompts), as generated length grows.
// -------------------------------------------------------------------------

struct MixedBatchCurves {
    std::vector<int> long_counts{0, 1, 2, 4};
    std::vector<std::int64_t> generated;          // x axis
    std::vector<std::vector<double>> latency_ms;  // one series per long_count
};

inline MixedBatchCurves mixed_batch_latency_curves(const CalibratedCostModel& model,
                                                   std::int64_t max_generated = 700,
                                                   std::int64_t step = 20) {
    MixedBatchCurves out;
    out.latency_ms.resize(out.long_counts.size());
    for (std::int64_t g = 0; g <= max_generated; g += step) {
        out.generated.push_back(g);
        for (std::size_t i = 0; i < out.long_counts.size(); ++i) {
            const int longs = out.long_counts[i];
            std::vector<std::int64_t> lens(static_cast<std::size_t>(64 - longs), 32 + g);
            lens.insert(lens.end(), static_cast<std::size_t>(longs), 4096 + g);
            out.latency_ms[i].push_back(iteration_latency(lens, model).total_ms);
        }
    }
    return out;
}

// -------------------------------------------------------------------------
// Canned experiment: 64 groups of prompts with lengths 10, 70, ..., 3790.
// Policy A batches each group by itself; policy B mixes one prompt of every
// group into each batch. Both decode the same number of tokens per request;
// reported is the mean TPOT of each policy and their ratio.
// -------------------------------------------------------------------------

struct GroupedBatchResult {
    std::vector<std::int64_t> group_lengths;
    std::vector<double> per_group_tpot_ms;  // grouped policy, one per group
    double grouped_mean_tpot_ms = 0.0;
    double mixed_mean_tpot_ms = 0.0;
    double ratio = 0.0;  // mixed / grouped
};

inline GroupedBatchResult grouped_vs_mixed_tpot(const CalibratedCostModel& model,
                                                std::int64_t output_len = 32) {
    GroupedBatchResult out;
    for (int g = 0; g < 64; ++g) out.group_lengths.push_back(10 + 60 * g);

    double grouped_sum = 0.0;
    for (std::int64_t len : out.group_lengths) {
        double batch_sum = 0.0;
        for (std::int64_t k = 0; k < output_len; ++k) {
            const std::vector<std::int64_t> lens(64, len + k);
            batch_sum += iteration_latency(lens, model).total_ms;
        }
        const double tpot = batch_sum / static_cast<double>(output_len);
        out.per_group_tpot_ms.push_back(tpot);
        grouped_sum += tpot;
    }
    out.grouped_mean_tpot_ms = grouped_sum / 64.0;

    double mixed_sum = 0.0;
    for (std::int64_t k = 0; k < output_len; ++k) {
        std::vector<std::int64_t> lens;
        lens.reserve(64);
        for (std::int64_t len : out.group_lengths) lens.push_back(len + k);
        mixed_sum += iteration_latency(lens, model).total_ms;
    }
    out.mixed_mean_tpot_ms = mixed_sum / static_cast<double>(output_len);
    out.ratio = out.mixed_mean_tpot_ms / out.grouped_mean_tpot_ms;
    return out;
}

// -------------------------------------------------------------------------
// Canned simulator configurations
// -------------------------------------------------------------------------

// Mixed short/long stream: 95% of requests below one thousand tokens, the
// rest between one and eight thousand, under saturating arrivals. Sized so
// the pool stays deep enough for the batch search to find dense windows well
// below the block budget, which is where the policies actually differ.
inline ExperimentConfig short95_experiment(std::uint64_t seed = 1,
                                           Policy policy = Policy::kAligned,
                                           std::int64_t count = 400) {
    ExperimentConfig cfg;
    cfg.model = ModelSpec{4096, 32, 2};
    cfg.sim.policy = policy;
    cfg.sim.seed = seed;
    cfg.sim.cluster.decode_hbm_blocks = 10240;
    cfg.sim.cluster.prefill_hbm_blocks = 10240;
    cfg.sim.constraints.starvation_threshold_ms = 6000;
    cfg.workload.kind = WorkloadSpec::Kind::kSynthetic;
    cfg.workload.count = count;
    cfg.workload.short_ratio = 0.95;
    cfg.workload.short_len_min = 512;
    cfg.workload.short_len_max = 999;
    cfg.workload.long_len_min = 1000;
    cfg.workload.long_len_max = 8000;
    cfg.workload.output_len.family = OutputLenDist::Family::kUniform;
    cfg.workload.output_len.lo = 60;
    cfg.workload.output_len.hi = 68;
    cfg.workload.arrival.kind = ArrivalProcess::Kind::kPoisson;
    cfg.workload.arrival.rate_per_s = 400;
    cfg.workload.seed = seed;
    return cfg;
}

// Every request identical: prefixes inside a batch stay equal through the
// whole decode, so iteration bubbles must vanish exactly.
inline ExperimentConfig homogeneous_experiment(std::uint64_t seed = 1) {
    ExperimentConfig cfg;
    cfg.model = ModelSpec{4096, 32, 2};
    cfg.sim.policy = Policy::kAligned;
    cfg.sim.seed = seed;
    cfg.workload.count = 200;
    cfg.workload.short_ratio = 1.0;
    cfg.workload.short_len_min = 512;
    cfg.workload.short_len_max = 512;
    cfg.workload.output_len.family = OutputLenDist::Family::kFixed;
    cfg.workload.output_len.fixed_value = 128;
    cfg.workload.arrival.kind = ArrivalProcess::Kind::kBurst;
    cfg.workload.seed = seed;
    return cfg;
}

// Dense cluster of near-equal prompts plus one isolated long request; used
// to observe the starvation override picking up the isolated one.
inline std::vector<Request> starvation_workload() {
    std::vector<Request> reqs;
    Rng rng(97);
    double t = 0.0;
    for (int i = 0; i < 300; ++i) {
        Request r;
        r.id = static_cast<RequestId>(reqs.size());
        t += rng.exponential(1000.0 / 150.0);
        r.arrival_ms = t;
        r.prompt_len = 592 + rng.uniform_int(0, 15);
        r.target_output_len = 32;
        reqs.push_back(r);
    }
    Request iso;
    iso.id = static_cast<RequestId>(reqs.size());
    iso.arrival_ms = 100.0;
    iso.prompt_len = 5000;
    iso.target_output_len = 32;
    reqs.push_back(iso);
    return reqs;
}

inline ExperimentConfig starvation_experiment() {
    ExperimentConfig cfg;
    cfg.model = ModelSpec{4096, 32, 2};
    cfg.sim.policy = Policy::kAligned;
    cfg.sim.seed = 97;
    cfg.sim.constraints.starvation_threshold_ms = 500.0;
    cfg.workload.count = 0;  // replaced by starvation_workload()
    return cfg;
}

// -------------------------------------------------------------------------
// Runners
// -------------------------------------------------------------------------

struct ExperimentResult {
    MetricsLog log;
    Summary summary;
};

inline ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                       std::vector<Request> workload_override = {}) {
    const CalibratedCostModel model = cfg.has_calibration
                                          ? cfg.calibration
                                          : calibrate(reference_mixed_batch_anchors(), cfg.model).model;
    std::vector<Request> reqs;
    if (!workload_override.empty()) {
        reqs = std::move(workload_override);
    } else if (cfg.workload.kind == WorkloadSpec::Kind::kTrace) {
        reqs = ingest_trace(cfg.workload.trace_path, cfg.workload.trace_format).requests;
    } else {
        reqs = generate_synthetic(cfg.workload);
    }
    ExperimentResult result;
    result.log = run(cfg.sim, std::move(reqs), model);
    result.summary = summarize(result.log);
    return result;
}

struct PolicyStats {
    double mean = 0.0, min = 0.0, max = 0.0;
};

inline PolicyStats stats_of(const std::vector<double>& xs) {
    PolicyStats s;
    s.min = xs.front();
    s.max = xs.front();
    for (double x : xs) {
        s.mean += x;
        s.min = std::min(s.min, x);
        s.max = std::max(s.max, x);
    }
    s.mean /= static_cast<double>(xs.size());
    return s;
}

struct ComparisonRow {
    Policy policy;
    PolicyStats throughput;
    PolicyStats tpot_p99;
    PolicyStats total_bubble;
    PolicyStats sched_p95;
    std::vector<Summary> per_seed;
};

// Runs one workload shape under several policies and seeds; seed k uses the
// same request stream for every policy.
inline std::vector<ComparisonRow> compare_policies(const ExperimentConfig& base,
                                                   const std::vector<Policy>& policies,
                                                   int seeds) {
    std::vector<ComparisonRow> rows;
    for (Policy p : policies) {
        ComparisonRow row;
        row.policy = p;
        std::vector<double> thr, p99, bubble, sched;
        for (int s = 0; s < seeds; ++s) {
            ExperimentConfig cfg = base;
            cfg.sim.policy = p;
            cfg.sim.seed = base.sim.seed + static_cast<std::uint64_t>(s);
            cfg.workload.seed = base.workload.seed + static_cast<std::uint64_t>(s);
            auto r = run_experiment(cfg);
            thr.push_back(r.summary.decode_throughput_tok_s);
            p99.push_back(r.summary.tpot_p99_ms);
            bubble.push_back(r.summary.total_bubble_ms);
            std::vector<double> st;
            for (const auto& it : r.log.iterations) st.push_back(it.schedule_ms);
            sched.push_back(nearest_rank(std::move(st), 0.95));
            row.per_seed.push_back(r.summary);
        }
        row.throughput = stats_of(thr);
        row.tpot_p99 = stats_of(p99);
        row.total_bubble = stats_of(bubble);
        row.sched_p95 = stats_of(sched);
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace prefixsim
