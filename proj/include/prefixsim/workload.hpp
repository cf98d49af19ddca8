#pragma once

#include <prefixsim/prng.hpp>
#include <prefixsim/request.hpp>

#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace prefixsim {

// Output-length distribution. The default heavy-ish tail (truncated
// geometric) drives the completion-triggered scheduling events; "fixed" is
// for lockstep experiments where every request must decode the same number
// of tokens.
struct OutputLenDist {
    enum class Family { kTruncatedGeometric, kFixed, kUniform };
    Family family = Family::kTruncatedGeometric;
    double mean = 256.0;
    std::int64_t cap = 2048;
    std::int64_t fixed_value = 64;
    std::int64_t lo = 1, hi = 1;

    std::int64_t sample(Rng& rng) const {
        switch (family) {
            case Family::kTruncatedGeometric: return rng.truncated_geometric(mean, cap);
            case Family::kFixed: return fixed_value;
            case Family::kUniform: return rng.uniform_int(lo, hi);
        }
        return 1;
    }
};

struct ArrivalProcess {
    enum class Kind { kPoisson, kBurst };
    Kind kind = Kind::kPoisson;
    double rate_per_s = 100.0;  // Poisson only
};

struct WorkloadSpec {
    enum class Kind { kSynthetic, kTrace };
    Kind kind = Kind::kSynthetic;

    double short_ratio = 0.95;
    std::int64_t short_len_min = 64, short_len_max = 999;     // < 1000
    std::int64_t long_len_min = 1000, long_len_max = 8000;    // within [1000, 8000]
    OutputLenDist output_len;
    ArrivalProcess arrival;
    std::uint64_t seed = 1;
    std::int64_t count = 0;

    std::string trace_path;  // kTrace only
    std::string trace_format = "jsonl";

    void validate() const {
        if (kind != Kind::kSynthetic) return;
        if (short_ratio < 0.0 || short_ratio > 1.0) {
            throw std::invalid_argument("short_ratio must be in [0,1]");
        }
        if (short_len_min < 1 || short_len_min > short_len_max || short_len_max >= 1000) {
            throw std::invalid_argument("short length range must be ordered and below 1000");
        }
        if (long_len_min < 1000 || long_len_min > long_len_max || long_len_max > 8000) {
            throw std::invalid_argument("long length range must be ordered within [1000, 8000]");
        }
        if (count < 0) throw std::invalid_argument("count must be >= 0");
    }
};

// Deterministic synthetic stream: same spec + seed, same byte-for-byte list.
inline std::vector<Request> generate_synthetic(const WorkloadSpec& spec) {
    spec.validate();
    std::vector<Request> out;
    out.reserve(static_cast<std::size_t>(spec.count));
    Rng rng(spec.seed);
    double t = 0.0;
    for (std::int64_t i = 0; i < spec.count; ++i) {
        if (spec.arrival.kind == ArrivalProcess::Kind::kPoisson) {
            t += rng.exponential(1000.0 / spec.arrival.rate_per_s);
        }
        Request r;
        r.id = i;
        r.arrival_ms = t;
        const bool is_short = rng.bernoulli(spec.short_ratio);
        r.prompt_len = is_short ? rng.uniform_int(spec.short_len_min, spec.short_len_max)
                                : rng.uniform_int(spec.long_len_min, spec.long_len_max);
        r.target_output_len = spec.output_len.sample(rng);
        r.prefix_len = r.prompt_len;
        r.state = RequestState::kArrived;
        out.push_back(r);
    }
    return out;
}

struct IngestResult {
    std::vector<Request> requests;
    std::vector<std::string> diagnostics;  // one entry per rejected record
};

namespace detail {

inline bool parse_trace_record(const nlohmann::json& j, double& arrival,
                               std::int64_t& prompt, std::int64_t& output,
                               std::string& why) {
    if (!j.contains("arrival_ms") || !j.contains("prompt_tokens") || !j.contains("output_tokens")) {
        why = "missing field";
        return false;
    }
    if (!j["arrival_ms"].is_number() || !j["prompt_tokens"].is_number_integer() ||
        !j["output_tokens"].is_number_integer()) {
        why = "wrong field type";
        return false;
    }
    arrival = j["arrival_ms"].get<double>();
    prompt = j["prompt_tokens"].get<std::int64_t>();
    output = j["output_tokens"].get<std::int64_t>();
    if (arrival < 0) { why = "negative arrival"; return false; }
    if (prompt < 1) { why = "prompt_tokens < 1"; return false; }
    if (output < 1) { why = "output_tokens < 1"; return false; }
    return true;
}

}  // namespace detail

// Reads a jsonl or csv trace. Bad records become per-line diagnostics; if
// more than 10% of lines are bad the whole ingest aborts. Arrivals are
// re-based so the earliest is t = 0.
inline IngestResult ingest_trace(const std::string& path, const std::string& format) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open trace file: " + path);

    IngestResult result;
    std::string line;
    int line_no = 0;
    std::int64_t total_records = 0;
    bool csv_header_seen = false;

    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (format == "csv" && !csv_header_seen) {
            csv_header_seen = true;  // header row: arrival_ms,prompt_tokens,output_tokens
            continue;
        }
        ++total_records;
        double arrival = 0;
        std::int64_t prompt = 0, output = 0;
        std::string why;
        bool ok = false;
        if (format == "jsonl") {
            auto j = nlohmann::json::parse(line, nullptr, false);
            if (j.is_discarded()) {
                why = "invalid json";
            } else {
                ok = detail::parse_trace_record(j, arrival, prompt, output, why);
            }
        } else if (format == "csv") {
            std::stringstream ss(line);
            std::string a, b, c;
            if (std::getline(ss, a, ',') && std::getline(ss, b, ',') && std::getline(ss, c)) {
                try {
                    arrival = std::stod(a);
                    prompt = std::stoll(b);
                    output = std::stoll(c);
                    if (arrival < 0) why = "negative arrival";
                    else if (prompt < 1) why = "prompt_tokens < 1";
                    else if (output < 1) why = "output_tokens < 1";
                    else ok = true;
                } catch (const std::exception&) {
                    why = "unparseable number";
                }
            } else {
                why = "expected 3 comma-separated fields";
            }
        } else {
            throw std::invalid_argument("unknown trace format: " + format);
        }

        if (!ok) {
            result.diagnostics.push_back("line " + std::to_string(line_no) + ": " + why);
            continue;
        }
        Request r;
        r.id = static_cast<RequestId>(result.requests.size());
        r.arrival_ms = arrival;
        r.prompt_len = prompt;
        r.target_output_len = output;
        r.prefix_len = prompt;
        result.requests.push_back(r);
    }

    if (total_records == 0) throw std::runtime_error("empty trace");
    if (static_cast<double>(result.diagnostics.size()) > 0.1 * static_cast<double>(total_records)) {
        throw std::runtime_error("trace rejected: " + std::to_string(result.diagnostics.size()) +
                                 " of " + std::to_string(total_records) + " records malformed");
    }
    if (result.requests.empty()) throw std::runtime_error("empty trace");

    double min_arrival = result.requests.front().arrival_ms;
    for (const auto& r : result.requests) min_arrival = std::min(min_arrival, r.arrival_ms);
    for (auto& r : result.requests) r.arrival_ms -= min_arrival;
    return result;
}

// Empirical CDF over final prefix lengths (prompt + full output).
inline std::vector<std::pair<std::int64_t, double>> prefix_cdf(
        const std::vector<Request>& requests) {
    if (requests.empty()) throw std::invalid_argument("prefix_cdf: empty request list");
    std::vector<std::int64_t> lens;
    lens.reserve(requests.size());
    for (const auto& r : requests) lens.push_back(r.prompt_len + r.target_output_len);
    std::sort(lens.begin(), lens.end());

    std::vector<std::pair<std::int64_t, double>> cdf;
    const auto n = static_cast<double>(lens.size());
    for (std::size_t i = 0; i < lens.size(); ++i) {
        if (i + 1 < lens.size() && lens[i + 1] == lens[i]) continue;
        cdf.emplace_back(lens[i], static_cast<double>(i + 1) / n);
    }
    return cdf;
}

}  // namespace prefixsim
