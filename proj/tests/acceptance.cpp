// Acceptance suite: end-to-end checks of the simulator against the
// quantitative targets listed in the README. Each criterion prints one
// PASS/FAIL line; the process exits nonzero if any failed.

#include <prefixsim/batch_gen.hpp>
#include <prefixsim/cluster_sim.hpp>
#include <prefixsim/cost_model.hpp>
#include <prefixsim/experiment.hpp>
#include <prefixsim/io.hpp>
#include <prefixsim/kv_index.hpp>
#include <prefixsim/metrics.hpp>
#include <prefixsim/prng.hpp>

#include "reference_dfs.hpp"

#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

using namespace prefixsim;

namespace {

int g_failures = 0;

void report(int number, const std::string& name, bool pass, const std::string& detail) {
    std::printf("[%s] criterion %2d: %s (%s)\n", pass ? "PASS" : "FAIL", number, name.c_str(),
                detail.c_str());
    if (!pass) ++g_failures;
}

double run_criterion(int number, const std::string& name,
                     const std::function<std::pair<bool, std::string>()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    bool pass = false;
    std::string detail;
    try {
        auto [p, d] = fn();
        pass = p;
        detail = d;
    } catch (const std::exception& e) {
        detail = std::string("exception: ") + e.what();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::ostringstream d2;
    d2 << detail << ", " << secs << " s";
    report(number, name, pass, d2.str());
    return secs;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

// ---- criterion 1: calibration fidelity ----

std::pair<bool, std::string> calibration_fidelity() {
    const auto anchors = reference_mixed_batch_anchors();
    const auto fit = calibrate(anchors, ModelSpec{4096, 32, 2});
    bool ordered = true;
    double prev = -1;
    for (const auto& a : anchors) {
        const double p = iteration_latency(a.prefix_lengths, fit.model).total_ms;
        if (p <= prev) ordered = false;
        prev = p;
    }
    const bool pass = fit.max_abs_rel_error < 0.15 && ordered;
    return {pass, "max rel err " + fmt(fit.max_abs_rel_error * 100) + "% < 15%, ordering " +
                      (ordered ? "strict" : "violated")};
}

// ---- criterion 2: grouped-versus-mixed replication direction ----

std::pair<bool, std::string> grouped_mixed_direction() {
    const auto model = default_cost_model();
    const auto r = grouped_vs_mixed_tpot(model);
    const bool pass = r.ratio >= 1.05 && r.ratio <= 1.35;
    return {pass, "mixed/grouped TPOT ratio " + fmt(r.ratio) + " in [1.05, 1.35]"};
}

// ---- criteria 3, 4, 8b: policy comparison on the 95%-short workload ----

struct ComparisonOutcome {
    std::vector<ComparisonRow> rows;
};

ComparisonOutcome g_comparison;

std::pair<bool, std::string> throughput_direction() {
    const auto base = short95_experiment(1, Policy::kAligned, 3000);
    g_comparison.rows = compare_policies(
        base, {Policy::kAligned, Policy::kFcfsContinuous, Policy::kDisaggFcfs}, 5);
    const auto& rows = g_comparison.rows;
    const double aligned = rows[0].throughput.mean;
    const double fcfs = rows[1].throughput.mean;
    const double disagg = rows[2].throughput.mean;
    const bool pass = aligned >= 1.2 * fcfs && aligned >= 1.1 * disagg;
    return {pass, "aligned/fcfs " + fmt(aligned / fcfs) + " >= 1.2, aligned/disagg " +
                      fmt(aligned / disagg) + " >= 1.1"};
}

std::pair<bool, std::string> scheduling_time_gap() {
    const auto& rows = g_comparison.rows;
    if (rows.empty()) return {false, "comparison runs missing"};
    const double aligned_p95 = rows[0].sched_p95.mean;
    const double disagg_p95 = rows[2].sched_p95.mean;
    const bool pass = disagg_p95 >= 3.0 * aligned_p95;
    return {pass, "sched P95 aligned " + fmt(aligned_p95) + " ms vs disagg " + fmt(disagg_p95) +
                      " ms, gap " + fmt(disagg_p95 / aligned_p95) + "x >= 3x"};
}

// ---- criterion 5: search equivalence against the independent oracle ----

std::pair<bool, std::string> dfs_oracle_equivalence() {
    Rng rng(1009);
    int feasible = 0, case1 = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        QuadTree tree;
        std::vector<refdfs::RefRequest> flat;
        const std::int64_t n = rng.uniform_int(1, 64);
        const std::int64_t b_max = rng.uniform_int(40, 2000);
        const std::int64_t k_min = rng.uniform_int(1, 40);
        for (std::int64_t i = 0; i < n; ++i) {
            const std::int64_t prefix = rng.uniform_int(1, 70000);
            std::int64_t blocks = (QuadTree::clamp_len(prefix) + 15) / 16;
            if (blocks > b_max) blocks = b_max;
            tree.insert({i, prefix, blocks}, 0.0);
            flat.push_back({i, prefix, blocks, i});
        }
        BatchConstraints c;
        c.b_max = b_max;
        c.k_min = k_min;
        c.starvation_threshold_ms = 1e18;

        const auto got = density_first_search(tree, c, 0.0);
        const auto want = refdfs::reference_dfs(flat, b_max, k_min);
        if (!got || !want) return {false, "search returned nothing on a non-empty tree"};
        if (got->request_ids() != want->ids || got->total_blocks != want->total_blocks) {
            return {false, "mismatch with the reference on trial " + std::to_string(trial)};
        }
        if (got->total_blocks > b_max) {
            return {false, "block budget exceeded on trial " + std::to_string(trial)};
        }
        if (refdfs::feasible_exists(flat, b_max, k_min)) {
            ++feasible;
            if (got->members.empty()) return {false, "no batch despite feasibility"};
        }
        if (want->terminal_case == 1) {
            ++case1;
            const auto [lo, hi] = QuadTree::node_range(
                NodeRef{want->terminal_node.depth, want->terminal_node.index});
            if (QuadTree::clamp_len(got->window_lo) < lo ||
                QuadTree::clamp_len(got->window_hi) > hi) {
                return {false, "window escaped the terminal subtree"};
            }
        }
    }
    return {true, "1000 instances match the oracle; " + std::to_string(feasible) +
                      " feasible, " + std::to_string(case1) + " single-subtree"};
}

// ---- criterion 6: quad-tree counter invariants under churn ----

std::pair<bool, std::string> quadtree_invariants() {
    QuadTree tree;
    Rng rng(4242);
    std::map<RequestId, PoolResident> mirror;
    RequestId next_id = 0;

    std::vector<std::int64_t> leaf_req(QuadTree::kLeafCount), leaf_blocks(QuadTree::kLeafCount);
    const auto recount = [&]() -> bool {
        std::fill(leaf_req.begin(), leaf_req.end(), 0);
        std::fill(leaf_blocks.begin(), leaf_blocks.end(), 0);
        for (const auto& [id, r] : mirror) {
            const std::int64_t leaf = QuadTree::leaf_of(r.prefix_len);
            if (leaf < 0 || leaf >= QuadTree::kLeafCount) return false;  // clamping violation
            leaf_req[static_cast<std::size_t>(leaf)] += 1;
            leaf_blocks[static_cast<std::size_t>(leaf)] += r.kv_blocks;
        }
        for (int d = QuadTree::kLeafDepth; d >= 0; --d) {
            const std::int64_t width = std::int64_t{1} << (2 * (QuadTree::kLeafDepth - d));
            for (std::int64_t i = 0; i < QuadTree::nodes_at(d); ++i) {
                std::int64_t reqs = 0, blocks = 0;
                for (std::int64_t leaf = i * width; leaf < (i + 1) * width; ++leaf) {
                    reqs += leaf_req[static_cast<std::size_t>(leaf)];
                    blocks += leaf_blocks[static_cast<std::size_t>(leaf)];
                }
                const NodeRef n{d, i};
                if (tree.request_count(n) != reqs || tree.block_count(n) != blocks) return false;
            }
        }
        return true;
    };

    for (int step = 0; step < 10000; ++step) {
        const int move = static_cast<int>(rng.uniform_int(0, 2));
        if (move == 0 || mirror.empty()) {
            PoolResident r;
            r.id = next_id++;
            r.prefix_len = rng.uniform_int(1, 80000);
            r.kv_blocks = (QuadTree::clamp_len(r.prefix_len) + 15) / 16;
            tree.insert(r, static_cast<double>(step));
            mirror[r.id] = r;
        } else if (move == 1) {
            auto it = mirror.begin();
            std::advance(it, rng.uniform_int(0, static_cast<std::int64_t>(mirror.size()) - 1));
            tree.remove(it->first);
            mirror.erase(it);
        } else {
            // update: re-insert at a grown prefix, as the pool does after
            // an eviction
            auto it = mirror.begin();
            std::advance(it, rng.uniform_int(0, static_cast<std::int64_t>(mirror.size()) - 1));
            PoolResident r = it->second;
            tree.remove(r.id);
            r.prefix_len += rng.uniform_int(1, 600);
            r.kv_blocks = (QuadTree::clamp_len(r.prefix_len) + 15) / 16;
            tree.insert(r, static_cast<double>(step));
            it->second = r;
        }
        if (!recount()) {
            return {false, "counter or clamping violation at step " + std::to_string(step)};
        }
    }
    return {true, "10000 operations, counters match the recount oracle"};
}

// ---- criterion 7: conservation and safety across randomized runs ----

std::pair<bool, std::string> conservation_safety() {
    Rng rng(77);
    const Policy policies[] = {Policy::kAligned, Policy::kFcfsContinuous, Policy::kDisaggFcfs};
    for (int i = 0; i < 100; ++i) {
        const auto count = rng.uniform_int(40, 120);
        auto cfg = short95_experiment(static_cast<std::uint64_t>(1000 + i),
                                      policies[i % 3], count);
        cfg.workload.short_ratio = 0.5 + 0.5 * rng.next_double();
        cfg.workload.arrival.rate_per_s = 100 + 400 * rng.next_double();
        cfg.sim.validate_invariants = true;  // capacity, census, precedence asserts
        const auto r = run_experiment(cfg);
        if (r.summary.completed_requests + r.summary.rejected_requests != count) {
            return {false, "request lost or duplicated in run " + std::to_string(i)};
        }
    }
    return {true, "100 randomized runs, census and capacity checks clean"};
}

// ---- criterion 8: bubble elimination ----

std::pair<bool, std::string> bubble_elimination() {
    const auto homo = run_experiment(homogeneous_experiment(5));
    if (homo.summary.total_bubble_ms != 0.0) {
        return {false, "homogeneous workload produced bubble " +
                           fmt(homo.summary.total_bubble_ms)};
    }
    const auto& rows = g_comparison.rows;
    if (rows.empty()) return {false, "comparison runs missing"};
    const double aligned = rows[0].total_bubble.mean;
    const double fcfs = rows[1].total_bubble.mean;
    const bool pass = aligned <= 0.25 * fcfs;
    return {pass, "homogeneous bubble exactly 0; aligned/fcfs bubble " +
                      fmt(aligned / fcfs) + " <= 0.25"};
}

// ---- criterion 9: determinism ----

std::pair<bool, std::string> determinism() {
    const auto cfg = short95_experiment(9, Policy::kAligned, 120);
    const auto a = run_experiment(cfg);
    const auto b = run_experiment(cfg);
    const bool logs_equal = log_to_jsonl(a.log) == log_to_jsonl(b.log);
    const bool summaries_equal =
        summary_to_json(a.summary).dump() == summary_to_json(b.summary).dump();
    return {logs_equal && summaries_equal,
            std::string("logs ") + (logs_equal ? "identical" : "differ") + ", summaries " +
                (summaries_equal ? "identical" : "differ")};
}

// ---- criterion 10: starvation liveness ----

std::pair<bool, std::string> starvation_liveness() {
    auto cfg = starvation_experiment();
    const auto workload = starvation_workload();
    const RequestId iso = workload.back().id;
    const auto r = run_experiment(cfg, workload);

    double t_pooled = -1, t_batched = -1;
    std::vector<double> generation_times;
    for (const auto& a : r.log.actions) {
        if (a.action == "pool_insert" && a.request_id == iso && t_pooled < 0) t_pooled = a.t_ms;
        if (a.action == "batch" && a.request_id == iso && t_batched < 0) t_batched = a.t_ms;
        if (a.action == "batch") {
            if (generation_times.empty() || generation_times.back() != a.t_ms) {
                generation_times.push_back(a.t_ms);
            }
        }
    }
    if (t_pooled < 0 || t_batched < 0) return {false, "isolated request never batched"};

    double max_gap = 0;
    for (std::size_t i = 1; i < generation_times.size(); ++i) {
        max_gap = std::max(max_gap, generation_times[i] - generation_times[i - 1]);
    }
    const double waited = t_batched - t_pooled;
    const double budget = cfg.sim.constraints.starvation_threshold_ms + max_gap + 1e-6;
    const bool pass = waited <= budget;
    return {pass, "isolated request waited " + fmt(waited) + " ms <= threshold 500 + period " +
                      fmt(max_gap)};
}

}  // namespace

int main() {
    std::printf("acceptance suite\n");
    run_criterion(1, "calibration fidelity", calibration_fidelity);
    run_criterion(2, "grouped-vs-mixed TPOT direction", grouped_mixed_direction);
    run_criterion(3, "throughput direction on the 95%-short workload", throughput_direction);
    run_criterion(4, "iteration scheduling-time gap", scheduling_time_gap);
    run_criterion(5, "search equivalence with the exhaustive oracle", dfs_oracle_equivalence);
    run_criterion(6, "quad-tree counter invariants", quadtree_invariants);
    run_criterion(7, "conservation and capacity safety", conservation_safety);
    run_criterion(8, "bubble elimination", bubble_elimination);
    run_criterion(9, "determinism", determinism);
    run_criterion(10, "starvation liveness", starvation_liveness);

    if (g_failures > 0) {
        std::printf("%d criteria failed\n", g_failures);
        return 1;
    }
    std::printf("all criteria passed\n");
    return 0;
}
