#pragma once

#include <prefixsim/cluster_sim.hpp>
#include <prefixsim/cost_model.hpp>
#include <prefixsim/metrics.hpp>
#include <prefixsim/workload.hpp>

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace prefixsim {

using nlohmann::json;

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write file: " + path);
    out << content;
}

// ---- calibration anchors ----

inline std::vector<CalibrationAnchor> anchors_from_json(const json& j) {
    if (!j.is_array()) throw std::runtime_error("anchors file must be a JSON array");
    std::vector<CalibrationAnchor> anchors;
    for (const auto& item : j) {
        CalibrationAnchor a;
        a.prefix_lengths = item.at("prefix_lengths").get<std::vector<std::int64_t>>();
        a.measured_ms = item.at("measured_ms").get<double>();
        anchors.push_back(std::move(a));
    }
    return anchors;
}

inline json anchors_to_json(const std::vector<CalibrationAnchor>& anchors) {
    json j = json::array();
    for (const auto& a : anchors) {
        j.push_back({{"prefix_lengths", a.prefix_lengths}, {"measured_ms", a.measured_ms}});
    }
    return j;
}

// ---- model / calibration ----

inline ModelSpec model_spec_from_json(const json& j) {
    ModelSpec m;
    m.hidden_dim = j.value("hidden_dim", m.hidden_dim);
    m.num_layers = j.value("num_layers", m.num_layers);
    m.bytes_per_element = j.value("bytes_per_element", m.bytes_per_element);
    m.validate();
    return m;
}

inline json model_spec_to_json(const ModelSpec& m) {
    return {{"hidden_dim", m.hidden_dim},
            {"num_layers", m.num_layers},
            {"bytes_per_element", m.bytes_per_element}};
}

inline json calibration_to_json(const CalibrationResult& r) {
    return {{"model", model_spec_to_json(r.model.spec)},
            {"compute_rate_ops_per_ms", r.model.compute_rate},
            {"mem_bandwidth_bytes_per_ms", r.model.mem_bandwidth},
            {"attn_serial_coeff_ms_per_token", r.model.attn_serial_coeff},
            {"fixed_overhead_ms", r.model.fixed_overhead_ms},
            {"fit", {{"rel_errors", r.rel_errors},
                     {"mean_abs_rel_error", r.mean_abs_rel_error},
                     {"max_abs_rel_error", r.max_abs_rel_error}}}};
}

inline CalibratedCostModel cost_model_from_json(const json& j) {
    CalibratedCostModel m;
    m.spec = j.contains("model") ? model_spec_from_json(j["model"]) : ModelSpec{};
    m.compute_rate = j.at("compute_rate_ops_per_ms").get<double>();
    m.mem_bandwidth = j.at("mem_bandwidth_bytes_per_ms").get<double>();
    m.attn_serial_coeff = j.at("attn_serial_coeff_ms_per_token").get<double>();
    m.fixed_overhead_ms = j.value("fixed_overhead_ms", 0.0);
    m.validate();
    return m;
}

// ---- experiment configuration ----

struct ExperimentConfig {
    SimConfig sim;
    ModelSpec model;
    WorkloadSpec workload;
    bool has_calibration = false;
    CalibratedCostModel calibration;
    std::string output_dir = "out";
};

inline Policy policy_from_string(const std::string& s) {
    if (s == "aligned") return Policy::kAligned;
    if (s == "fcfs" || s == "fcfs_continuous") return Policy::kFcfsContinuous;
    if (s == "disagg-fcfs" || s == "disagg_fcfs") return Policy::kDisaggFcfs;
    throw std::runtime_error("unknown policy: " + s);
}

inline OutputLenDist output_len_from_json(const json& j, std::vector<std::string>& errors) {
    OutputLenDist d;
    const std::string family = j.value("family", "geometric");
    if (family == "geometric") {
        d.family = OutputLenDist::Family::kTruncatedGeometric;
        d.mean = j.value("mean", d.mean);
        d.cap = j.value("cap", d.cap);
        if (d.mean < 1) errors.push_back("output_len.mean must be >= 1");
        if (d.cap < 1) errors.push_back("output_len.cap must be >= 1");
    } else if (family == "fixed") {
        d.family = OutputLenDist::Family::kFixed;
        d.fixed_value = j.value("value", d.fixed_value);
        if (d.fixed_value < 1) errors.push_back("output_len.value must be >= 1");
    } else if (family == "uniform") {
        d.family = OutputLenDist::Family::kUniform;
        d.lo = j.value("lo", d.lo);
        d.hi = j.value("hi", d.hi);
        if (d.lo < 1 || d.lo > d.hi) errors.push_back("output_len uniform range invalid");
    } else {
        errors.push_back("unknown output_len.family: " + family);
    }
    return d;
}

inline WorkloadSpec workload_from_json(const json& j, std::vector<std::string>& errors) {
    WorkloadSpec w;
    const std::string kind = j.value("kind", "synthetic");
    if (kind == "trace") {
        w.kind = WorkloadSpec::Kind::kTrace;
        w.trace_path = j.value("path", "");
        w.trace_format = j.value("format", "jsonl");
        if (w.trace_path.empty()) errors.push_back("trace workload needs a path");
        return w;
    }
    w.kind = WorkloadSpec::Kind::kSynthetic;
    w.count = j.value("count", std::int64_t{0});
    w.short_ratio = j.value("short_ratio", w.short_ratio);
    if (j.contains("short_len_range")) {
        w.short_len_min = j["short_len_range"].at(0).get<std::int64_t>();
        w.short_len_max = j["short_len_range"].at(1).get<std::int64_t>();
    }
    if (j.contains("long_len_range")) {
        w.long_len_min = j["long_len_range"].at(0).get<std::int64_t>();
        w.long_len_max = j["long_len_range"].at(1).get<std::int64_t>();
    }
    if (j.contains("output_len")) w.output_len = output_len_from_json(j["output_len"], errors);
    if (j.contains("arrival")) {
        const auto& a = j["arrival"];
        const std::string process = a.value("process", "poisson");
        if (process == "poisson") {
            w.arrival.kind = ArrivalProcess::Kind::kPoisson;
            w.arrival.rate_per_s = a.value("rate_per_s", w.arrival.rate_per_s);
            if (w.arrival.rate_per_s <= 0) errors.push_back("arrival.rate_per_s must be > 0");
        } else if (process == "burst") {
            w.arrival.kind = ArrivalProcess::Kind::kBurst;
        } else {
            errors.push_back("unknown arrival.process: " + process);
        }
    }
    w.seed = j.value("seed", w.seed);
    try {
        w.validate();
    } catch (const std::exception& e) {
        errors.push_back(e.what());
    }
    return w;
}

inline ExperimentConfig experiment_from_json(const json& j) {
    std::vector<std::string> errors;
    ExperimentConfig cfg;

    if (j.contains("cluster")) {
        const auto& c = j["cluster"];
        auto& cl = cfg.sim.cluster;
        cl.decode_hbm_blocks = c.value("decode_hbm_blocks", cl.decode_hbm_blocks);
        cl.prefill_hbm_blocks = c.value("prefill_hbm_blocks", cl.prefill_hbm_blocks);
        cl.kv_pool_bytes = c.value("kv_pool_bytes", cl.kv_pool_bytes);
        cl.pcie_bw = c.value("pcie_bw_bytes_per_ms", cl.pcie_bw);
        cl.nvlink_bw = c.value("nvlink_bw_bytes_per_ms", cl.nvlink_bw);
        cl.transfer_latency_floor_ms = c.value("transfer_latency_floor_ms", cl.transfer_latency_floor_ms);
        cl.prefill_ms_per_token = c.value("prefill_ms_per_token", cl.prefill_ms_per_token);
        cl.nvlink_available = c.value("nvlink_available", cl.nvlink_available);
        cl.block_size = c.value("block_size", cl.block_size);
        try {
            cl.validate();
        } catch (const std::exception& e) {
            errors.push_back(e.what());
        }
    }
    if (j.contains("model")) {
        try {
            cfg.model = model_spec_from_json(j["model"]);
        } catch (const std::exception& e) {
            errors.push_back(e.what());
        }
    }
    if (j.contains("calibration")) {
        try {
            cfg.calibration = cost_model_from_json(j["calibration"]);
            cfg.has_calibration = true;
        } catch (const std::exception& e) {
            errors.push_back(std::string("calibration: ") + e.what());
        }
    }
    if (j.contains("workload")) {
        cfg.workload = workload_from_json(j["workload"], errors);
    } else {
        errors.push_back("config missing workload");
    }
    if (j.contains("constraints")) {
        const auto& c = j["constraints"];
        cfg.sim.constraints.b_max = c.value("b_max_blocks", std::int64_t{0});
        cfg.sim.b_max_fraction = c.value("b_max_fraction", cfg.sim.b_max_fraction);
        cfg.sim.constraints.k_min = c.value("k_min", cfg.sim.constraints.k_min);
        cfg.sim.constraints.starvation_threshold_ms =
            c.value("starvation_threshold_ms", cfg.sim.constraints.starvation_threshold_ms);
        cfg.sim.similarity_delta = c.value("similarity_delta", cfg.sim.similarity_delta);
        cfg.sim.candidate_buffer_fraction =
            c.value("candidate_buffer_fraction", cfg.sim.candidate_buffer_fraction);
        cfg.sim.fcfs_max_batch = c.value("fcfs_max_batch", cfg.sim.fcfs_max_batch);
    }
    if (j.contains("policy")) {
        try {
            cfg.sim.policy = policy_from_string(j["policy"].get<std::string>());
        } catch (const std::exception& e) {
            errors.push_back(e.what());
        }
    }
    cfg.sim.seed = j.value("seed", cfg.sim.seed);
    cfg.output_dir = j.value("output_dir", cfg.output_dir);

    if (!errors.empty()) {
        std::string joined = "config validation failed:";
        for (const auto& e : errors) joined += "\n  - " + e;
        throw std::runtime_error(joined);
    }
    return cfg;
}

// ---- outputs ----

inline json summary_to_json(const Summary& s) {
    const auto cdf_json = [](const CdfPoints& cdf) {
        json arr = json::array();
        for (const auto& [v, f] : cdf) arr.push_back({v, f});
        return arr;
    };
    return {{"decode_throughput_tok_s", s.decode_throughput_tok_s},
            {"tpot_p99_ms", s.tpot_p99_ms},
            {"tpot_mean_ms", s.tpot_mean_ms},
            {"ttft_cdf", cdf_json(s.ttft_cdf)},
            {"sched_time_cdf", cdf_json(s.sched_time_cdf)},
            {"total_bubble_ms", s.total_bubble_ms},
            {"bubble_fraction", s.bubble_fraction},
            {"batch_switch_fraction", s.batch_switch_fraction},
            {"kv_pool_peak_bytes", s.kv_pool_peak_bytes},
            {"completed_requests", s.completed_requests},
            {"rejected_requests", s.rejected_requests},
            {"total_run_throughput_tok_s", s.total_run_throughput_tok_s},
            {"makespan_ms", s.makespan_ms}};
}

inline std::string log_to_jsonl(const MetricsLog& log) {
    std::ostringstream out;
    out << json{{"log_schema", kLogSchemaVersion},
                {"policy", log.policy},
                {"seed", log.seed}}
               .dump()
        << "\n";
    for (const auto& it : log.iterations) {
        out << json{{"type", "iteration"}, {"seq", it.seq}, {"start_ms", it.start_ms},
                    {"end_ms", it.end_ms}, {"schedule_ms", it.schedule_ms},
                    {"prefill_stall_ms", it.prefill_stall_ms}, {"compute_ms", it.compute_ms},
                    {"attn_ms", it.attn_ms}, {"bubble_ms", it.bubble_ms},
                    {"switching", it.switching}, {"prefix_lengths", it.prefix_lengths}}
                   .dump()
            << "\n";
    }
    for (const auto& t : log.transfers) {
        out << json{{"type", "transfer"}, {"t_ms", t.t_ms}, {"link", to_string(t.link)},
                    {"bytes", t.bytes}, {"duration_ms", t.duration_ms},
                    {"synchronous", t.synchronous}, {"kind", t.kind},
                    {"request_id", t.request_id}}
                   .dump()
            << "\n";
    }
    for (const auto& a : log.actions) {
        out << json{{"type", "action"}, {"t_ms", a.t_ms}, {"action", a.action},
                    {"request_id", a.request_id}, {"from", a.from}, {"to", a.to},
                    {"blocks", a.blocks}}
                   .dump()
            << "\n";
    }
    for (const auto& r : log.requests) {
        out << json{{"type", "request"}, {"id", r.id}, {"arrival_ms", r.arrival_ms},
                    {"prompt_len", r.prompt_len}, {"output_len", r.output_len},
                    {"ttft_ms", r.ttft_ms}, {"completed_ms", r.completed_ms},
                    {"rejected", r.rejected}, {"token_times_ms", r.token_times_ms}}
                   .dump()
            << "\n";
    }
    for (const auto& p : log.pool_samples) {
        out << json{{"type", "pool"}, {"t_ms", p.t_ms}, {"pool_bytes", p.pool_bytes}}.dump()
            << "\n";
    }
    return out.str();
}

inline std::string cdf_to_csv(const CdfPoints& cdf, const std::string& value_name) {
    std::ostringstream out;
    out << value_name << ",cumulative_fraction\n";
    for (const auto& [v, f] : cdf) out << v << "," << f << "\n";
    return out.str();
}

inline std::string trace_to_jsonl(const std::vector<Request>& requests) {
    std::ostringstream out;
    for (const auto& r : requests) {
        out << json{{"arrival_ms", r.arrival_ms},
                    {"prompt_tokens", r.prompt_len},
                    {"output_tokens", r.target_output_len}}
                   .dump()
            << "\n";
    }
    return out.str();
}

inline std::string trace_to_csv(const std::vector<Request>& requests) {
    std::ostringstream out;
    out << "arrival_ms,prompt_tokens,output_tokens\n";
    for (const auto& r : requests) {
        out << r.arrival_ms << "," << r.prompt_len << "," << r.target_output_len << "\n";
    }
    return out.str();
}

}  // namespace prefixsim
