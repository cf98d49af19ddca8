#pragma once

#include <prefixsim/log.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

namespace prefixsim {

using CdfPoints = std::vector<std::pair<double, double>>;

inline CdfPoints empirical_cdf(std::vector<double> values) {
    CdfPoints out;
    if (values.empty()) return out;
    std::sort(values.begin(), values.end());
    const auto n = static_cast<double>(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i + 1 < values.size() && values[i + 1] == values[i]) continue;
        out.emplace_back(values[i], static_cast<double>(i + 1) / n);
    }
    return out;
}

// Nearest-rank percentile: value at index ceil(q*n) - 1 of the ascending sort.
inline double nearest_rank(std::vector<double> values, double q) {
    if (values.empty()) throw std::invalid_argument("percentile of empty sample");
    std::sort(values.begin(), values.end());
    const auto n = static_cast<double>(values.size());
    auto rank = static_cast<std::size_t>(std::ceil(q * n));
    if (rank < 1) rank = 1;
    if (rank > values.size()) rank = values.size();
    return values[rank - 1];
}

// Per-token decode intervals across all requests. The first token of each
// request is excluded; its latency is the TTFT.
inline std::vector<double> tpot_intervals(const MetricsLog& log) {
    std::vector<double> intervals;
    for (const auto& r : log.requests) {
        for (std::size_t i = 1; i < r.token_times_ms.size(); ++i) {
            intervals.push_back(r.token_times_ms[i] - r.token_times_ms[i - 1]);
        }
    }
    return intervals;
}

inline double tpot_p99(const MetricsLog& log) {
    auto intervals = tpot_intervals(log);
    if (intervals.empty()) throw std::invalid_argument("no decode intervals in log");
    return nearest_rank(std::move(intervals), 0.99);
}

inline double tpot_mean(const MetricsLog& log) {
    auto intervals = tpot_intervals(log);
    if (intervals.empty()) throw std::invalid_argument("no decode intervals in log");
    double s = 0;
    for (double v : intervals) s += v;
    return s / static_cast<double>(intervals.size());
}

// Generated tokens divided by the decode activity window, in tokens/second.
inline double decode_throughput(const MetricsLog& log) {
    if (log.iterations.empty()) throw std::invalid_argument("no decode activity in log");
    std::int64_t tokens = 0;
    for (const auto& it : log.iterations) {
        tokens += static_cast<std::int64_t>(it.prefix_lengths.size());
    }
    const double window_ms = log.iterations.back().end_ms - log.iterations.front().start_ms;
    if (window_ms <= 0) throw std::invalid_argument("degenerate decode window");
    return static_cast<double>(tokens) / (window_ms / 1000.0);
}

inline std::int64_t kv_pool_peak(const MetricsLog& log) {
    std::int64_t peak = 0;
    for (const auto& s : log.pool_samples) peak = std::max(peak, s.pool_bytes);
    return peak;
}

inline double total_bubble_ms(const MetricsLog& log) {
    double b = 0;
    for (const auto& it : log.iterations) b += it.bubble_ms;
    return b;
}

// total bubble normalized by aggregate attention time across requests
inline double bubble_fraction(const MetricsLog& log) {
    double denom = 0;
    for (const auto& it : log.iterations) {
        denom += static_cast<double>(it.prefix_lengths.size()) * it.attn_ms;
    }
    if (denom <= 0) return 0.0;
    return total_bubble_ms(log) / denom;
}

inline double batch_switch_fraction(const MetricsLog& log) {
    if (log.iterations.empty()) throw std::invalid_argument("empty log");
    std::int64_t n = 0;
    for (const auto& it : log.iterations) n += it.switching ? 1 : 0;
    return static_cast<double>(n) / static_cast<double>(log.iterations.size());
}

struct Summary {
    double decode_throughput_tok_s = 0.0;
    double tpot_p99_ms = 0.0;
    double tpot_mean_ms = 0.0;
    CdfPoints ttft_cdf;
    CdfPoints sched_time_cdf;
    double total_bubble_ms = 0.0;
    double bubble_fraction = 0.0;
    double batch_switch_fraction = 0.0;
    std::int64_t kv_pool_peak_bytes = 0;
    std::int64_t completed_requests = 0;
    std::int64_t rejected_requests = 0;
    double total_run_throughput_tok_s = 0.0;  // tokens over the whole run
    double makespan_ms = 0.0;
};

inline Summary summarize(const MetricsLog& log) {
    Summary s;
    s.decode_throughput_tok_s = decode_throughput(log);
    s.tpot_p99_ms = tpot_p99(log);
    s.tpot_mean_ms = tpot_mean(log);

    std::vector<double> ttfts;
    std::int64_t tokens = 0;
    double makespan = 0;
    for (const auto& r : log.requests) {
        if (r.rejected) {
            ++s.rejected_requests;
            continue;
        }
        if (r.ttft_ms >= 0) ttfts.push_back(r.ttft_ms);
        if (r.completed_ms >= 0) {
            ++s.completed_requests;
            makespan = std::max(makespan, r.completed_ms);
        }
        tokens += static_cast<std::int64_t>(r.token_times_ms.size());
    }
    s.ttft_cdf = empirical_cdf(std::move(ttfts));

    std::vector<double> sched;
    for (const auto& it : log.iterations) sched.push_back(it.schedule_ms);
    s.sched_time_cdf = empirical_cdf(std::move(sched));

    s.total_bubble_ms = total_bubble_ms(log);
    s.bubble_fraction = bubble_fraction(log);
    s.batch_switch_fraction = batch_switch_fraction(log);
    s.kv_pool_peak_bytes = kv_pool_peak(log);
    s.makespan_ms = makespan;
    if (makespan > 0) {
        s.total_run_throughput_tok_s = static_cast<double>(tokens) / (makespan / 1000.0);
    }
    return s;
}

}  // namespace prefixsim
