#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace prefixsim {

// =========================================================================
// Per-token decode cost accounting for a decoder-only transformer.
//
//   Dimensions: h = hidden dim, l = layers, s = prefix length (tokens the
//   next token attends over), b = batch size.
//
//   Per layer, generating one token:
//     attention:  ops ~ 2sh   (q·K^T and softmax(..)·V, two s-by-h passes)
//                 bytes ~ 2sh elements (the K and V vectors of the prefix)
//     mlp:        ops ~ 8h^2  (h->4h and 4h->h projections)
//                 bytes ~ 8h^2 elements (the two weight matrices)
//
//   Softmax / GeLU are ignored; they are lower order in both counts.
//   KV bytes per token = 2 * h * l * bytes_per_element (k and v, all layers).
// =========================================================================

struct ModelSpec {
    std::int64_t hidden_dim = 4096;
    std::int64_t num_layers = 32;
    std::int64_t bytes_per_element = 2;  // fp16

    [[nodiscard]] std::int64_t kv_bytes_per_token() const {
        return 2 * hidden_dim * num_layers * bytes_per_element;
    }

    void validate() const {
        if (hidden_dim <= 0 || num_layers <= 0 || bytes_per_element <= 0) {
            throw std::invalid_argument("model spec fields must be strictly positive");
        }
    }
};

struct OpCount {
    std::int64_t ops = 0;
    std::int64_t bytes = 0;
};

// Attention cost of one token that attends over a prefix of s tokens,
// summed over all layers.
inline OpCount mha_cost(std::int64_t prefix_len, const ModelSpec& spec) {
    if (prefix_len < 0) throw std::invalid_argument("prefix_len must be >= 0");
    const std::int64_t ops = 2 * prefix_len * spec.hidden_dim * spec.num_layers;
    return {ops, ops * spec.bytes_per_element};
}

// MLP cost of one token, summed over all layers. Independent of s; the bytes
// are the weight matrices, shared by every token in a batch iteration.
inline OpCount mlp_cost(const ModelSpec& spec) {
    const std::int64_t ops = 8 * spec.hidden_dim * spec.hidden_dim * spec.num_layers;
    return {ops, ops * spec.bytes_per_element};
}

// Fitted constants mapping the counts above to milliseconds.
//
//   compute_rate      ops per ms (effective, not peak)
//   mem_bandwidth     bytes per ms (effective HBM stream rate)
//   attn_serial_coeff ms per prefix token on a single request's critical
//                     path; models the part of a long request's attention
//                     that does not overlap with the rest of the batch
//   fixed_overhead_ms per-iteration constant (launch, sampling, ...)
struct CalibratedCostModel {
    ModelSpec spec;
    double compute_rate = 1.0;
    double mem_bandwidth = 1.0;
    double attn_serial_coeff = 0.0;
    double fixed_overhead_ms = 0.0;

    void validate() const {
        spec.validate();
        if (compute_rate <= 0 || mem_bandwidth <= 0 || attn_serial_coeff <= 0) {
            throw std::invalid_argument("cost model rates must be strictly positive");
        }
        if (fixed_overhead_ms < 0) {
            throw std::invalid_argument("fixed_overhead_ms must be >= 0");
        }
    }
};

struct IterationCost {
    double total_ms = 0.0;
    double mlp_ms = 0.0;
    double attn_ms = 0.0;
    std::vector<double> per_request_ms;  // serial attention term per request
};

// =========================================================================
// One decode iteration for a batch with prefix lengths s_1..s_b:
//
//   t_mlp  = max( b * mlp_ops / compute_rate,  mlp_bytes / mem_bandwidth )
//            -- roofline: ops scale with b, the weight bytes are loaded once
//   t_attn = max_i(attn_serial_coeff * s_i)  +  sum_i mha_bytes(s_i) / bw
//            -- the slowest request's serial tail plus the aggregate KV
//               traffic every request contributes
//   total  = fixed_overhead + t_mlp + t_attn
//
// The additive attention form makes one long request raise the iteration
// (critical-path term) while additional long requests keep raising it
// (traffic term), and keeps total monotone in every s_i and in b.
// =========================================================================
inline IterationCost iteration_latency(std::span<const std::int64_t> prefix_lengths,
                                       const CalibratedCostModel& model) {
    if (prefix_lengths.empty()) throw std::invalid_argument("empty batch");
    const auto b = static_cast<double>(prefix_lengths.size());

    IterationCost out;
    out.per_request_ms.reserve(prefix_lengths.size());
    double serial_max = 0.0;
    double attn_bytes = 0.0;
    for (std::int64_t s : prefix_lengths) {
        if (s < 1) throw std::invalid_argument("prefix lengths must be >= 1");
        const double serial = model.attn_serial_coeff * static_cast<double>(s);
        out.per_request_ms.push_back(serial);
        serial_max = std::max(serial_max, serial);
        attn_bytes += static_cast<double>(mha_cost(s, model.spec).bytes);
    }

    const OpCount mlp = mlp_cost(model.spec);
    out.mlp_ms = std::max(b * static_cast<double>(mlp.ops) / model.compute_rate,
                          static_cast<double>(mlp.bytes) / model.mem_bandwidth);
    out.attn_ms = serial_max + attn_bytes / model.mem_bandwidth;
    out.total_ms = model.fixed_overhead_ms + out.mlp_ms + out.attn_ms;
    return out;
}

// Idle time summed over the batch: every request waits for the slowest one's
// serial attention. Zero iff all per-request serial times are equal.
inline double iteration_bubble(std::span<const std::int64_t> prefix_lengths,
                               const CalibratedCostModel& model) {
    const IterationCost c = iteration_latency(prefix_lengths, model);
    const double m = *std::max_element(c.per_request_ms.begin(), c.per_request_ms.end());
    double bubble = 0.0;
    for (double v : c.per_request_ms) bubble += m - v;
    return bubble;
}

// Same quantity computed from already-known per-request serial times.
inline double bubble_from_per_request(std::span<const double> per_request_ms) {
    if (per_request_ms.empty()) return 0.0;
    const double m = *std::max_element(per_request_ms.begin(), per_request_ms.end());
    double bubble = 0.0;
    for (double v : per_request_ms) bubble += m - v;
    return bubble;
}

// -------------------------------------------------------------------------
// Calibration
// -------------------------------------------------------------------------

struct CalibrationAnchor {
    std::vector<std::int64_t> prefix_lengths;
    double measured_ms = 0.0;
};

struct CalibrationResult {
    CalibratedCostModel model;
    std::vector<double> rel_errors;  // signed, per anchor
    double mean_abs_rel_error = 0.0;
    double max_abs_rel_error = 0.0;
};

namespace detail {

// Anchors reduced to what the latency formula needs, so a grid-search
// evaluation is O(1) per anchor.
struct AnchorKey {
    double batch = 0.0;
    double max_len = 0.0;
    double sum_bytes = 0.0;
    double measured = 0.0;
};

inline double predict(const AnchorKey& a, double mlp_ops, double mlp_bytes,
                      double rate, double bw, double coeff, double fixed) {
    const double t_mlp = std::max(a.batch * mlp_ops / rate, mlp_bytes / bw);
    const double t_attn = coeff * a.max_len + a.sum_bytes / bw;
    return fixed + t_mlp + t_attn;
}

}  // namespace detail

// Fits (compute_rate, mem_bandwidth, attn_serial_coeff, fixed_overhead_ms)
// to the anchors by minimizing the sum of squared relative errors with a
// deterministic coarse-to-fine grid search. No randomness: identical anchors
// always give identical constants.
inline CalibrationResult calibrate(std::span<const CalibrationAnchor> anchors,
                                   const ModelSpec& spec) {
    spec.validate();
    if (anchors.size() < 4) {
        throw std::invalid_argument("underdetermined calibration: need at least 4 anchors");
    }
    std::vector<std::vector<std::int64_t>> compositions;
    for (const auto& a : anchors) {
        if (a.prefix_lengths.empty()) throw std::invalid_argument("anchor with empty batch");
        if (a.measured_ms <= 0) throw std::invalid_argument("anchor with non-positive latency");
        auto sorted = a.prefix_lengths;
        std::sort(sorted.begin(), sorted.end());
        compositions.push_back(std::move(sorted));
    }
    std::sort(compositions.begin(), compositions.end());
    compositions.erase(std::unique(compositions.begin(), compositions.end()),
                       compositions.end());
    if (compositions.size() < 2) {
        throw std::invalid_argument("underdetermined calibration: anchors span a single batch composition");
    }

    std::vector<detail::AnchorKey> keys;
    keys.reserve(anchors.size());
    for (const auto& a : anchors) {
        detail::AnchorKey k;
        k.batch = static_cast<double>(a.prefix_lengths.size());
        for (std::int64_t s : a.prefix_lengths) {
            k.max_len = std::max(k.max_len, static_cast<double>(s));
            k.sum_bytes += static_cast<double>(mha_cost(s, spec).bytes);
        }
        k.measured = a.measured_ms;
        keys.push_back(k);
    }

    const double mlp_ops = static_cast<double>(mlp_cost(spec).ops);
    const double mlp_bytes = static_cast<double>(mlp_cost(spec).bytes);

    const auto sse = [&](double rate, double bw, double coeff, double fixed) {
        double acc = 0.0;
        for (const auto& k : keys) {
            const double p = detail::predict(k, mlp_ops, mlp_bytes, rate, bw, coeff, fixed);
            const double e = (p - k.measured) / k.measured;
            acc += e * e;
        }
        return acc;
    };

    // Search in log10 space for the three rates, linear for the overhead.
    struct Dim { double lo, hi; };
    Dim rate_d{9.0, 13.0};    // 1e9 .. 1e13 ops/ms
    Dim bw_d{7.0, 11.0};      // 1e7 .. 1e11 bytes/ms
    Dim coeff_d{-6.0, 0.0};   // 1e-6 .. 1 ms/token
    Dim fixed_d{0.0, 10.0};   // 0 .. 10 ms

    constexpr int kPoints = 9;
    constexpr int kStages = 14;

    double best_rate = 0, best_bw = 0, best_coeff = 0, best_fixed = 0;
    double best = -1.0;

    for (int stage = 0; stage < kStages; ++stage) {
        double stage_best = -1.0;
        double sr = 0, sb = 0, sc = 0, sf = 0;
        const auto step = [](const Dim& d) { return (d.hi - d.lo) / (kPoints - 1); };
        for (int ir = 0; ir < kPoints; ++ir) {
            const double rate = std::pow(10.0, rate_d.lo + step(rate_d) * ir);
            for (int ib = 0; ib < kPoints; ++ib) {
                const double bw = std::pow(10.0, bw_d.lo + step(bw_d) * ib);
                for (int ic = 0; ic < kPoints; ++ic) {
                    const double coeff = std::pow(10.0, coeff_d.lo + step(coeff_d) * ic);
                    for (int ifx = 0; ifx < kPoints; ++ifx) {
                        const double fixed = fixed_d.lo + step(fixed_d) * ifx;
                        const double v = sse(rate, bw, coeff, fixed);
                        if (stage_best < 0 || v < stage_best) {
                            stage_best = v;
                            sr = rate_d.lo + step(rate_d) * ir;
                            sb = bw_d.lo + step(bw_d) * ib;
                            sc = coeff_d.lo + step(coeff_d) * ic;
                            sf = fixed;
                        }
                    }
                }
            }
        }
        best = stage_best;
        best_rate = sr; best_bw = sb; best_coeff = sc; best_fixed = sf;

        // shrink each dimension around the incumbent, overlapping one step
        const auto shrink = [](Dim& d, double center, double lower_cap) {
            const double w = (d.hi - d.lo) / (kPoints - 1) * 1.5;
            d.lo = std::max(lower_cap, center - w);
            d.hi = center + w;
        };
        shrink(rate_d, sr, 0.0);
        shrink(bw_d, sb, 0.0);
        shrink(coeff_d, sc, -12.0);
        shrink(fixed_d, sf, 0.0);
    }

    // Cyclic coordinate descent to walk down the shallow valley the staged
    // grid leaves (fixed overhead trades off against bandwidth). Spans shrink
    // geometrically; everything stays deterministic.
    {
        double params[4] = {best_rate, best_bw, best_coeff, best_fixed};
        double spans[4] = {0.2, 0.2, 0.2, 1.0};
        const auto eval = [&](const double p[4]) {
            return sse(std::pow(10.0, p[0]), std::pow(10.0, p[1]),
                       std::pow(10.0, p[2]), p[3]);
        };
        for (int round = 0; round < 120; ++round) {
            for (int j = 0; j < 4; ++j) {
                double trial[4] = {params[0], params[1], params[2], params[3]};
                double local_best = best;
                double local_val = params[j];
                for (int i = -8; i <= 8; ++i) {
                    if (i == 0) continue;
                    double v = params[j] + spans[j] * static_cast<double>(i) / 8.0;
                    if (j == 3 && v < 0.0) v = 0.0;
                    trial[j] = v;
                    const double s = eval(trial);
                    if (s < local_best) {
                        local_best = s;
                        local_val = v;
                    }
                }
                params[j] = local_val;
                best = local_best;
            }
            for (double& s : spans) s *= 0.9;
        }
        best_rate = params[0];
        best_bw = params[1];
        best_coeff = params[2];
        best_fixed = params[3];
    }

    CalibrationResult result;
    result.model.spec = spec;
    result.model.compute_rate = std::pow(10.0, best_rate);
    result.model.mem_bandwidth = std::pow(10.0, best_bw);
    result.model.attn_serial_coeff = std::pow(10.0, best_coeff);
    result.model.fixed_overhead_ms = best_fixed;

    for (const auto& k : keys) {
        const double p = detail::predict(k, mlp_ops, mlp_bytes, result.model.compute_rate,
                                         result.model.mem_bandwidth,
                                         result.model.attn_serial_coeff,
                                         result.model.fixed_overhead_ms);
        result.rel_errors.push_back((p - k.measured) / k.measured);
    }
    for (double e : result.rel_errors) {
        result.mean_abs_rel_error += std::abs(e);
        result.max_abs_rel_error = std::max(result.max_abs_rel_error, std::abs(e));
    }
    result.mean_abs_rel_error /= static_cast<double>(result.rel_errors.size());
    return result;
}

// The four mixed-batch latency anchors used throughout: batch size 64 at
// generated length 600, with 0/1/2/4 of the 64 prompts being 4096-token
// prompts and the rest 32-token prompts (prefix = prompt + 600).
inline std::vector<CalibrationAnchor> reference_mixed_batch_anchors() {
    const auto compose = [](int longs, double ms) {
        CalibrationAnchor a;
        a.prefix_lengths.assign(static_cast<std::size_t>(64 - longs), 632);
        a.prefix_lengths.insert(a.prefix_lengths.end(), static_cast<std::size_t>(longs), 4696);
        a.measured_ms = ms;
        return a;
    };
    return {compose(0, 13.49), compose(1, 18.29), compose(2, 19.27), compose(4, 21.73)};
}

}  // namespace prefixsim
