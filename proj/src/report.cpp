#include "specsim/report.hpp"

#include <chrono>
#include <ctime>
#include <iomanip>
#include <sstream>

#include "specsim/error.hpp"

namespace specsim {

namespace {

std::string utc_timestamp() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

Json hex_array(const std::vector<uint64_t>& v) {
    Json a = Json::array();
    for (auto x : v) a.push_back(hex_string(x));
    return a;
}

std::vector<uint64_t> address_array(const Json& a) {
    std::vector<uint64_t> out;
    for (const auto& x : a) out.push_back(parse_address(x.get<std::string>()));
    return out;
}

}  // namespace

std::string hex_string(uint64_t v) {
    std::ostringstream os;
    os << "0x" << std::hex << v;
    return os.str();
}

uint64_t parse_address(const std::string& text) {
    try {
        size_t used = 0;
        const bool hex = text.size() > 2 && text[0] == '0' && (text[1] == 'x' || text[1] == 'X');
        const uint64_t v = hex ? std::stoull(text.substr(2), &used, 16) : std::stoull(text, &used, 10);
        if (used != text.size() - (hex ? 2 : 0) || text.empty() || text[0] == '-') throw std::invalid_argument(text);
        return v;
    } catch (const std::logic_error&) {
        throw ConfigError("bad address or number '" + text + "'");
    }
}

Json make_report(const std::string& command, Json args, Json result, double wall_seconds) {
    Json j;
    j["schema"] = kReportSchema;
    j["command"] = command;
    j["args"] = std::move(args);
    j["result"] = std::move(result);
    j["volatile"] = {{"timestamp", utc_timestamp()}, {"wall_seconds", wall_seconds}};
    return j;
}

Json strip_volatile(Json report) {
    report.erase("volatile");
    return report;
}

std::string dump(const Json& j) { return j.dump(2) + "\n"; }

Json to_json(const RunResult& r) {
    Json regs = Json::object();
    for (RegId i = 0; i < kNumGpr; ++i) regs[register_name(RegView{i, Width::Qword})] = hex_string(r.registers[i]);
    Json stores = Json::array();
    for (const auto& s : r.stores)
        stores.push_back({{"addr", hex_string(s.addr)}, {"size", s.size}, {"value", hex_string(s.value)}});
    Json j;
    j["terminal"] = std::string(to_string(r.terminal));
    j["cycles"] = r.cycles;
    j["committed"] = r.committed;
    j["flushed"] = r.flushed;
    j["issued"] = r.issued;
    j["mispredictions"] = r.mispredictions;
    j["max_speculation_depth"] = r.max_speculation_depth;
    j["fault_pc"] = r.fault_pc ? Json(*r.fault_pc) : Json(nullptr);
    j["zf"] = r.flags;
    j["registers"] = regs;
    j["resident_lines"] = hex_array(r.resident_lines);
    j["stores"] = stores;
    return j;
}

Json to_json(const PredictorDetection& d) {
    return {{"forward_jump", std::string(to_string(d.result))},
            {"fall_through_cycles", d.fall_through_cycles},
            {"taken_cycles", d.taken_cycles},
            {"threshold", d.threshold}};
}

Json to_json(const BufferLimits& b) {
    auto opt = [](const std::optional<uint32_t>& v) { return v ? Json(*v) : Json(nullptr); };
    // With a universal stall the load buffer limit is not observable.
    return {{"parallel_loads", opt(b.unmapped_stall)},
            {"load_buffer_entries", b.universal_stall ? Json(nullptr) : opt(b.mapped_stall)},
            {"mapped_stall_after", opt(b.mapped_stall)},
            {"unmapped_stall_after", opt(b.unmapped_stall)},
            {"universal_stall", b.universal_stall}};
}

Json to_json(const Calibration& c) {
    return {{"hit_cycles", c.hit_cycles}, {"miss_cycles", c.miss_cycles}, {"threshold", c.threshold}};
}

Json to_json(const TimingSample& s) {
    return {{"address", hex_string(s.address)}, {"trial", s.trial}, {"cycles", s.cycles}, {"cached", s.cached}};
}

TimingSample sample_from_json(const Json& j) {
    TimingSample s;
    s.address = parse_address(j.at("address").get<std::string>());
    s.trial = j.at("trial").get<uint32_t>();
    s.cycles = j.at("cycles").get<uint64_t>();
    s.cached = j.at("cached").get<bool>();
    return s;
}

Json to_json(const ProbeVerdict& v) {
    Json samples = Json::array();
    for (const auto& s : v.samples) samples.push_back(to_json(s));
    return {{"address", hex_string(v.address)}, {"mapped", v.mapped}, {"samples", samples}};
}

Json to_json(const ReadResult& r) {
    return {{"value", r.value ? Json(*r.value) : Json(nullptr)},
            {"read_failed", !r.value.has_value()},
            {"bit_cycles", r.bit_cycles},
            {"control_cycles", r.control_cycles}};
}

Json to_json(const GuardDemo& g) {
    auto run = [](const GuardRun& r) {
        return Json{{"leak_observed", r.leak_observed},
                    {"feedback_cycles", r.feedback_cycles},
                    {"terminal", std::string(to_string(r.terminal))},
                    {"cycles", r.cycles},
                    {"max_speculation_depth", r.max_speculation_depth}};
    };
    return {{"threshold", g.threshold}, {"unguarded", run(g.unguarded)}, {"guarded", run(g.guarded)}};
}

Json to_json(const RangeStats& s) {
    return {{"range", s.name}, {"verdict", s.mapped ? "mapped" : "unmapped"}, {"count", s.count},
            {"min", s.min},    {"median", s.median},                          {"mean", s.mean}};
}

Json to_json(const DerandomizationReport& r, bool with_samples) {
    Json stats = Json::array();
    for (const auto& s : r.stats) stats.push_back(to_json(s));
    Json j;
    j["os"] = std::string(to_string(r.os));
    j["profile"] = r.profile;
    j["technique"] = std::string(to_string(r.technique));
    j["trials"] = r.trials;
    j["layout_seed"] = r.layout_seed;
    j["probe_seed"] = r.probe_seed;
    j["threshold"] = r.threshold;
    j["probes"] = r.probes;
    j["false_positives"] = r.false_positives;
    j["false_negatives"] = r.false_negatives;
    j["located_image_base"] = r.located_image_base ? Json(hex_string(*r.located_image_base)) : Json(nullptr);
    j["simulated_cycles"] = r.simulated_cycles;
    j["detected_count"] = r.detected.size();
    j["ground_truth_count"] = r.ground_truth.size();
    j["stats"] = stats;
    j["detected"] = hex_array(r.detected);
    j["ground_truth"] = hex_array(r.ground_truth);
    if (with_samples) {
        Json samples = Json::array();
        for (const auto& s : r.samples) samples.push_back(to_json(s));
        j["samples"] = samples;
    }
    return j;
}

DerandomizationReport derandomization_from_json(const Json& j) {
    try {
        DerandomizationReport r;
        r.os = parse_os(j.at("os").get<std::string>());
        r.profile = j.at("profile").get<std::string>();
        r.technique = parse_technique(j.at("technique").get<std::string>());
        r.trials = j.at("trials").get<uint32_t>();
        r.layout_seed = j.at("layout_seed").get<uint64_t>();
        r.probe_seed = j.at("probe_seed").get<uint64_t>();
        r.threshold = j.at("threshold").get<uint64_t>();
        r.probes = j.at("probes").get<uint64_t>();
        r.false_positives = j.at("false_positives").get<uint64_t>();
        r.false_negatives = j.at("false_negatives").get<uint64_t>();
        if (!j.at("located_image_base").is_null())
            r.located_image_base = parse_address(j.at("located_image_base").get<std::string>());
        r.simulated_cycles = j.at("simulated_cycles").get<uint64_t>();
        for (const auto& s : j.at("stats")) {
            RangeStats st;
            st.name = s.at("range").get<std::string>();
            st.mapped = s.at("verdict").get<std::string>() == "mapped";
            st.count = s.at("count").get<uint64_t>();
            st.min = s.at("min").get<uint64_t>();
            st.median = s.at("median").get<double>();
            st.mean = s.at("mean").get<double>();
            r.stats.push_back(st);
        }
        r.detected = address_array(j.at("detected"));
        r.ground_truth = address_array(j.at("ground_truth"));
        if (j.contains("samples"))
            for (const auto& s : j.at("samples")) r.samples.push_back(sample_from_json(s));
        return r;
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("malformed report: ") + e.what());
    }
}

std::string samples_csv(const std::vector<TimingSample>& samples) {
    std::ostringstream os;
    os << "address,trial,cycles,verdict\n";
    for (const auto& s : samples)
        os << hex_string(s.address) << ',' << s.trial << ',' << s.cycles << ',' << (s.cached ? "cached" : "uncached")
           << '\n';
    return os.str();
}

std::string summary_text(const DerandomizationReport& r) {
    std::ostringstream os;
    os << to_string(r.os) << " derandomization on " << r.profile << " (" << to_string(r.technique) << ", "
       << r.trials << " trial" << (r.trials == 1 ? "" : "s") << ")\n";
    os << "  probes: " << r.probes << "  threshold: " << r.threshold << " cycles\n";
    os << "  detected: " << r.detected.size() << "  ground truth: " << r.ground_truth.size()
       << "  false positives: " << r.false_positives << "  false negatives: " << r.false_negatives << "\n";
    if (r.located_image_base) os << "  image base: " << hex_string(*r.located_image_base) << "\n";
    os << "  simulated cycles: " << r.simulated_cycles << "\n";
    for (const auto& s : r.stats) {
        os << "  " << std::left << std::setw(8) << s.name << std::setw(9) << (s.mapped ? "mapped" : "unmapped")
           << " n=" << s.count << " min=" << s.min << std::fixed << std::setprecision(2) << " median=" << s.median
           << " mean=" << s.mean << std::defaultfloat << std::setprecision(6) << "\n";
    }
    return os.str();
}

}  // namespace specsim
