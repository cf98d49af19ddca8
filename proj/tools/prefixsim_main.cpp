#include <prefixsim/cluster_sim.hpp>
#include <prefixsim/experiment.hpp>
#include <prefixsim/io.hpp>
#include <prefixsim/metrics.hpp>
#include <prefixsim/svg.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

namespace {

using namespace prefixsim;
using nlohmann::json;

std::string output_root() {
    if (const char* env = std::getenv("PREFIXSIM_OUTPUT_ROOT")) return env;
    return ".";
}

std::string join_path(const std::string& root, const std::string& leaf) {
    return (std::filesystem::path(root) / leaf).string();
}

void write_run_artifacts(const std::string& dir, const ExperimentResult& result,
                         const json& config_used) {
    write_file(join_path(dir, "config_used.json"), config_used.dump(2) + "\n");
    write_file(join_path(dir, "log.jsonl"), log_to_jsonl(result.log));
    write_file(join_path(dir, "summary.json"), summary_to_json(result.summary).dump(2) + "\n");
    write_file(join_path(dir, "ttft_cdf.csv"), cdf_to_csv(result.summary.ttft_cdf, "ttft_ms"));
    write_file(join_path(dir, "sched_cdf.csv"),
               cdf_to_csv(result.summary.sched_time_cdf, "schedule_ms"));

    Series ttft{"ttft", {}};
    for (const auto& [v, f] : result.summary.ttft_cdf) ttft.points.emplace_back(v, f);
    write_file(join_path(dir, "ttft_cdf.svg"),
               svg_line_chart({ttft}, "TTFT CDF (" + result.log.policy + ")", "ms", "fraction"));
    Series sched{"schedule time", {}};
    for (const auto& [v, f] : result.summary.sched_time_cdf) sched.points.emplace_back(v, f);
    write_file(join_path(dir, "sched_cdf.svg"),
               svg_line_chart({sched}, "Iteration scheduling time CDF (" + result.log.policy + ")",
                              "ms", "fraction"));
}

int cmd_calibrate(const std::string& anchors_path, const std::string& model_path,
                  const std::string& out_path) {
    const auto anchors = anchors_from_json(json::parse(read_file(anchors_path)));
    ModelSpec spec;
    if (!model_path.empty()) spec = model_spec_from_json(json::parse(read_file(model_path)));
    const auto fit = calibrate(anchors, spec);
    const auto j = calibration_to_json(fit);
    if (!out_path.empty()) {
        write_file(out_path, j.dump(2) + "\n");
    }
    std::cout << j.dump(2) << "\n";
    std::cout << "mean relative error: " << fit.mean_abs_rel_error
              << ", max: " << fit.max_abs_rel_error << "\n";
    return 0;
}

int cmd_run(const std::string& config_path, const std::string& policy_flag,
            std::int64_t seed_flag, const std::string& out_dir_flag, bool no_nvlink,
            const std::string& dump_tree_path) {
    const json config_json = json::parse(read_file(config_path));
    ExperimentConfig cfg = experiment_from_json(config_json);
    json used = config_json;
    if (!policy_flag.empty()) {
        cfg.sim.policy = policy_from_string(policy_flag);
        used["policy"] = policy_flag;
    }
    if (seed_flag >= 0) {
        cfg.sim.seed = static_cast<std::uint64_t>(seed_flag);
        cfg.workload.seed = static_cast<std::uint64_t>(seed_flag);
        used["seed"] = seed_flag;
        if (used.contains("workload")) used["workload"]["seed"] = seed_flag;
    }
    if (no_nvlink) {
        cfg.sim.cluster.nvlink_available = false;
        used["cluster"]["nvlink_available"] = false;
    }
    std::string dir = out_dir_flag.empty() ? join_path(output_root(), "run_out") : out_dir_flag;

    if (!dump_tree_path.empty()) {
        // index view of the workload: every request pooled at its prompt length
        QuadTree tree;
        auto reqs = cfg.workload.kind == WorkloadSpec::Kind::kTrace
                        ? ingest_trace(cfg.workload.trace_path, cfg.workload.trace_format).requests
                        : generate_synthetic(cfg.workload);
        for (const auto& r : reqs) {
            tree.insert({r.id, r.prompt_len,
                         blocks_for(r.prompt_len, cfg.sim.cluster.block_size)},
                        0.0);
        }
        write_file(dump_tree_path, tree.dump_json().dump(2) + "\n");
    }

    const auto result = run_experiment(cfg);
    write_run_artifacts(dir, result, used);
    std::cout << "policy " << result.log.policy << ": "
              << result.summary.completed_requests << " completed, "
              << result.summary.rejected_requests << " rejected, decode throughput "
              << result.summary.decode_throughput_tok_s << " tok/s, TPOT p99 "
              << result.summary.tpot_p99_ms << " ms\n";
    std::cout << "artifacts in " << dir << "\n";
    return 0;
}

int cmd_compare(const std::string& config_path, const std::string& policies_flag, int seeds,
                const std::string& out_dir_flag) {
    ExperimentConfig cfg = experiment_from_json(json::parse(read_file(config_path)));
    std::vector<Policy> policies;
    {
        std::stringstream ss(policies_flag);
        std::string tok;
        while (std::getline(ss, tok, ',')) policies.push_back(policy_from_string(tok));
    }
    const auto rows = compare_policies(cfg, policies, seeds);
    const std::string dir =
        out_dir_flag.empty() ? join_path(output_root(), "compare_out") : out_dir_flag;

    std::ostringstream csv;
    csv << "policy,throughput_mean,throughput_min,throughput_max,"
           "tpot_p99_mean,bubble_total_mean,sched_p95_mean\n";
    std::vector<std::string> labels;
    Series thr{"decode throughput (tok/s)", {}};
    Series p99{"TPOT p99 (ms)", {}};
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        labels.push_back(to_string(r.policy));
        csv << to_string(r.policy) << "," << r.throughput.mean << "," << r.throughput.min << ","
            << r.throughput.max << "," << r.tpot_p99.mean << "," << r.total_bubble.mean << ","
            << r.sched_p95.mean << "\n";
        thr.points.emplace_back(static_cast<double>(i), r.throughput.mean);
        p99.points.emplace_back(static_cast<double>(i), r.tpot_p99.mean);
        std::cout << to_string(r.policy) << ": throughput " << r.throughput.mean
                  << " tok/s (min " << r.throughput.min << ", max " << r.throughput.max
                  << "), TPOT p99 " << r.tpot_p99.mean << " ms, bubble "
                  << r.total_bubble.mean << " ms, sched p95 " << r.sched_p95.mean << " ms\n";
    }
    json ratios;
    for (const auto& r : rows) {
        if (r.policy == Policy::kAligned) continue;
        for (const auto& a : rows) {
            if (a.policy != Policy::kAligned) continue;
            ratios[std::string("aligned_over_") + to_string(r.policy)] =
                a.throughput.mean / r.throughput.mean;
        }
    }
    write_file(join_path(dir, "compare.csv"), csv.str());
    write_file(join_path(dir, "ratios.json"), ratios.dump(2) + "\n");
    write_file(join_path(dir, "throughput.svg"),
               svg_bar_chart(labels, {thr}, "Decode throughput by policy", "tok/s"));
    write_file(join_path(dir, "tpot_p99.svg"),
               svg_bar_chart(labels, {p99}, "TPOT p99 by policy", "ms"));
    std::cout << "artifacts in " << dir << "\n";
    return 0;
}

int cmd_paperfig(const std::string& figure, const std::string& out_dir_flag, int seeds) {
    const std::string dir =
        out_dir_flag.empty() ? join_path(output_root(), "fig_" + figure) : out_dir_flag;
    const auto model = default_cost_model();

    if (figure == "fig2") {
        const auto curves = mixed_batch_latency_curves(model);
        std::ostringstream csv;
        csv << "generated";
        for (int n : curves.long_counts) csv << ",longs_" << n;
        csv << "\n";
        std::vector<Series> series(curves.long_counts.size());
        for (std::size_t i = 0; i < series.size(); ++i) {
            series[i].name = std::to_string(curves.long_counts[i]) + " long prompts";
        }
        for (std::size_t g = 0; g < curves.generated.size(); ++g) {
            csv << curves.generated[g];
            for (std::size_t i = 0; i < curves.long_counts.size(); ++i) {
                csv << "," << curves.latency_ms[i][g];
                series[i].points.emplace_back(static_cast<double>(curves.generated[g]),
                                              curves.latency_ms[i][g]);
            }
            csv << "\n";
        }
        write_file(join_path(dir, "fig2.csv"), csv.str());
        write_file(join_path(dir, "fig2.svg"),
                   svg_line_chart(series, "Iteration latency, batch 64, mixed prompt lengths",
                                  "generated tokens", "iteration latency (ms)"));
        std::cout << "wrote " << dir << "\n";
        return 0;
    }
    if (figure == "fig4") {
        const auto r = grouped_vs_mixed_tpot(model);
        std::ostringstream csv;
        csv << "group_length,grouped_tpot_ms\n";
        Series grouped{"grouped batches", {}};
        for (std::size_t i = 0; i < r.group_lengths.size(); ++i) {
            csv << r.group_lengths[i] << "," << r.per_group_tpot_ms[i] << "\n";
            grouped.points.emplace_back(static_cast<double>(r.group_lengths[i]),
                                        r.per_group_tpot_ms[i]);
        }
        Series grouped_mean{"grouped mean", {{10, r.grouped_mean_tpot_ms},
                                             {3790, r.grouped_mean_tpot_ms}}};
        Series mixed_mean{"mixed mean", {{10, r.mixed_mean_tpot_ms},
                                         {3790, r.mixed_mean_tpot_ms}}};
        write_file(join_path(dir, "fig4.csv"), csv.str());
        write_file(join_path(dir, "fig4_summary.json"),
                   json{{"grouped_mean_tpot_ms", r.grouped_mean_tpot_ms},
                        {"mixed_mean_tpot_ms", r.mixed_mean_tpot_ms},
                        {"ratio", r.ratio}}
                           .dump(2) +
                       "\n");
        write_file(join_path(dir, "fig4.svg"),
                   svg_line_chart({grouped, grouped_mean, mixed_mean},
                                  "Grouped versus mixed batching, 64 groups", "prompt length",
                                  "mean TPOT (ms)"));
        std::cout << "grouped mean " << r.grouped_mean_tpot_ms << " ms, mixed mean "
                  << r.mixed_mean_tpot_ms << " ms, ratio " << r.ratio << "\n";
        std::cout << "wrote " << dir << "\n";
        return 0;
    }
    if (figure == "fig8-style" || figure == "fig10-style") {
        // throughput / TPOT across short-request ratios, three policies
        const std::vector<double> ratios{0.70, 0.75, 0.80, 0.85, 0.90, 0.95};
        const std::vector<Policy> policies{Policy::kAligned, Policy::kFcfsContinuous,
                                           Policy::kDisaggFcfs};
        std::vector<std::string> labels;
        std::vector<Series> series(policies.size());
        for (std::size_t p = 0; p < policies.size(); ++p) series[p].name = to_string(policies[p]);
        std::ostringstream csv;
        csv << "short_ratio";
        for (Policy p : policies) csv << "," << to_string(p);
        csv << "\n";
        for (std::size_t ri = 0; ri < ratios.size(); ++ri) {
            labels.push_back(std::to_string(ratios[ri]));
            csv << ratios[ri];
            auto base = short95_experiment(1, Policy::kAligned, 250);
            base.workload.short_ratio = ratios[ri];
            const auto rows = compare_policies(base, policies, seeds);
            for (std::size_t p = 0; p < rows.size(); ++p) {
                const double v = figure == "fig8-style" ? rows[p].throughput.mean
                                                        : rows[p].tpot_p99.mean;
                series[p].points.emplace_back(static_cast<double>(ri), v);
                csv << "," << v;
            }
            csv << "\n";
        }
        const std::string metric = figure == "fig8-style" ? "decode throughput (tok/s)"
                                                          : "TPOT p99 (ms)";
        write_file(join_path(dir, figure + ".csv"), csv.str());
        write_file(join_path(dir, figure + ".svg"),
                   svg_bar_chart(labels, series, metric + " by short-request ratio", metric));
        std::cout << "wrote " << dir << "\n";
        return 0;
    }
    std::cerr << "unknown figure id: " << figure << "\n";
    return 2;
}

int cmd_trace_gen(const std::string& spec_path, std::int64_t count, double short_ratio,
                  std::int64_t seed, const std::string& out_path, const std::string& format) {
    WorkloadSpec spec;
    if (!spec_path.empty()) {
        std::vector<std::string> errors;
        spec = workload_from_json(json::parse(read_file(spec_path)), errors);
        if (!errors.empty()) {
            for (const auto& e : errors) std::cerr << e << "\n";
            return 2;
        }
    } else {
        spec.count = count;
        spec.short_ratio = short_ratio;
        spec.seed = static_cast<std::uint64_t>(seed);
    }
    const auto reqs = generate_synthetic(spec);
    write_file(out_path, format == "csv" ? trace_to_csv(reqs) : trace_to_jsonl(reqs));
    std::cout << "wrote " << reqs.size() << " requests to " << out_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"prefix-aware batching simulator"};
    app.require_subcommand(1);

    auto* cal = app.add_subcommand("calibrate", "fit cost-model constants to latency anchors");
    std::string anchors_path, model_path, cal_out;
    cal->add_option("--anchors", anchors_path, "anchors JSON file")->required();
    cal->add_option("--model", model_path, "model spec JSON file");
    cal->add_option("--out", cal_out, "output calibration JSON");

    auto* runc = app.add_subcommand("run", "run one simulation from a config file");
    std::string run_config, run_policy, run_out, dump_tree;
    std::int64_t run_seed = -1;
    bool no_nvlink = false;
    runc->add_option("--config", run_config, "experiment config JSON")->required();
    runc->add_option("--policy", run_policy, "aligned | fcfs | disagg-fcfs");
    runc->add_option("--seed", run_seed, "override seed");
    runc->add_option("--out", run_out, "output directory");
    runc->add_flag("--no-nvlink", no_nvlink, "price all transfers on PCIe");
    runc->add_option("--dump-tree", dump_tree, "write the workload's pool-index tree as JSON");

    auto* cmp = app.add_subcommand("compare", "run several policies over several seeds");
    std::string cmp_config, cmp_policies = "aligned,fcfs,disagg-fcfs", cmp_out;
    int cmp_seeds = 5;
    cmp->add_option("--config", cmp_config, "experiment config JSON")->required();
    cmp->add_option("--policies", cmp_policies, "comma-separated policy list");
    cmp->add_option("--seeds", cmp_seeds, "number of seeds");
    cmp->add_option("--out", cmp_out, "output directory");

    auto* fig = app.add_subcommand("paperfig", "canned replication experiments");
    std::string fig_id, fig_out;
    int fig_seeds = 3;
    fig->add_option("--figure", fig_id, "fig2 | fig4 | fig8-style | fig10-style")->required();
    fig->add_option("--out", fig_out, "output directory");
    fig->add_option("--seeds", fig_seeds, "seeds for sweep figures");

    auto* gen = app.add_subcommand("trace-gen", "generate a synthetic trace file");
    std::string gen_spec, gen_out, gen_format = "jsonl";
    std::int64_t gen_count = 1000, gen_seed = 1;
    double gen_ratio = 0.95;
    gen->add_option("--spec", gen_spec, "workload spec JSON");
    gen->add_option("--count", gen_count, "request count");
    gen->add_option("--short-ratio", gen_ratio, "fraction of short requests");
    gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--out", gen_out, "output trace path")->required();
    gen->add_option("--format", gen_format, "jsonl | csv");

    CLI11_PARSE(app, argc, argv);

    try {
        if (cal->parsed()) return cmd_calibrate(anchors_path, model_path, cal_out);
        if (runc->parsed()) {
            return cmd_run(run_config, run_policy, run_seed, run_out, no_nvlink, dump_tree);
        }
        if (cmp->parsed()) return cmd_compare(cmp_config, cmp_policies, cmp_seeds, cmp_out);
        if (fig->parsed()) return cmd_paperfig(fig_id, fig_out, fig_seeds);
        if (gen->parsed()) {
            return cmd_trace_gen(gen_spec, gen_count, gen_ratio, gen_seed, gen_out, gen_format);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
