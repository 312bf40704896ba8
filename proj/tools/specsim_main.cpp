#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "specsim/attacks.hpp"
#include "specsim/error.hpp"
#include "specsim/oslayout.hpp"
#include "specsim/pipeline.hpp"
#include "specsim/report.hpp"
#include "specsim/uarch.hpp"

using namespace specsim;

namespace {

enum ExitCode { kOk = 0, kInternal = 1, kConfig = 2, kMismatch = 3, kIneffective = 4 };

struct Options {
    std::string profile = "skylake";
    std::vector<std::string> profiles;
    std::string os;
    uint64_t seed = 0;
    std::optional<uint64_t> probe_seed;
    uint32_t trials = 2;
    std::string technique = "dependent-load";
    uint32_t imul_count = 2048;
    uint32_t batch_imul_count = 96;
    uint32_t exhaustion_loads = 0;
    std::optional<uint64_t> threshold;
    std::string noise = "off";
    std::string out;
    std::string csv;
    std::string trace;
    std::string layout;
    uint64_t cycle_budget = 5'000'000;
    bool assert_exact = false;
    bool decoys = false;
    bool no_adapt = false;
    bool with_samples = false;
    std::string listing;
    std::vector<std::string> addresses;
    uint32_t length = 1;
    std::string sweep;
};

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read '" + path + "'");
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_file(const std::string& path, const std::string& text) {
    if (path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + path + "'");
    out << text;
}

struct KernelSpace {
    std::optional<KaslrLayout> layout;
    MemoryMap map;
};

/// --layout (layout JSON or layout records) wins over --os/--seed.
KernelSpace kernel_space(const Options& o, bool decoys) {
    KernelSpace k;
    if (!o.layout.empty()) {
        const std::string text = read_file(o.layout);
        const auto first = text.find_first_not_of(" \t\r\n");
        if (first != std::string::npos && text[first] == '{') {
            k.layout = layout_from_json(text);
            k.map = build_memory_map(*k.layout);
        } else {
            k.map = parse_layout_records(text);
        }
        return k;
    }
    const OsKind os = parse_os(o.os.empty() ? "linux" : o.os);
    auto [layout, map] = os == OsKind::Linux ? randomize_linux(o.seed)
                                             : randomize_windows(o.seed, WindowsLayoutOptions{.decoys = decoys});
    k.layout = std::move(layout);
    k.map = std::move(map);
    return k;
}

RunSettings run_settings(const Options& o) {
    RunSettings s;
    s.noise = parse_noise(o.noise);
    s.seed = o.probe_seed.value_or(o.seed);
    s.cycle_budget = o.cycle_budget;
    return s;
}

ProbeConfig probe_config(const Options& o) {
    ProbeConfig c;
    c.technique = parse_technique(o.technique);
    c.imul_count = o.imul_count;
    c.batch_imul_count = o.batch_imul_count;
    c.trials = o.trials;
    c.exhaustion_loads = o.exhaustion_loads;
    c.threshold = o.threshold;
    c.adapt_static_prediction = !o.no_adapt;
    c.noise = parse_noise(o.noise);
    c.seed = o.probe_seed.value_or(o.seed);
    c.cycle_budget = o.cycle_budget;
    return c;
}

Json noise_json(const Options& o) { return to_string(parse_noise(o.noise)); }

class Timer {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void emit(const Options& o, const std::string& command, Json args, Json result, const Timer& timer) {
    if (o.out.empty()) return;
    write_file(o.out, dump(make_report(command, std::move(args), std::move(result), timer.seconds())));
}

// ---------------------------------------------------------------------------

int cmd_run_listing(const Options& o, bool trace_requested) {
    Timer timer;
    const MicroArchProfile profile = load_profile(o.profile);
    const Program program = assemble(read_file(o.listing));
    const Executable exe(program);
    const MemoryMap map = (!o.layout.empty() || !o.os.empty()) ? attack_map(kernel_space(o, o.decoys).map)
                                                                : reference_attack_map();
    RunOptions ro;
    ro.cycle_budget = o.cycle_budget;
    ro.seed = o.seed;
    ro.noise = parse_noise(o.noise);
    ro.record_events = trace_requested;
    const RunResult r = run(exe, profile, map, ro);

    if (trace_requested) {
        const std::string path =
            o.trace.empty() ? std::filesystem::path(o.listing).stem().string() + ".trace.jsonl" : o.trace;
        write_file(path, events_to_jsonl(r.events));
        std::cout << "trace: " << r.events.size() << " events -> " << path << "\n";
    }

    std::cout << o.listing << " on " << profile.name << ": " << to_string(r.terminal) << "\n"
              << "  cycles " << r.cycles << "  committed " << r.committed << "  issued " << r.issued << "  flushed "
              << r.flushed << "  mispredictions " << r.mispredictions << "  max speculation depth "
              << r.max_speculation_depth << "\n";
    if (r.fault_pc) std::cout << "  fault at op " << *r.fault_pc << "\n";
    for (RegId i = 0; i < kNumGpr; ++i)
        if (r.registers[i] != 0)
            std::cout << "  " << register_name(RegView{i, Width::Qword}) << " = " << hex_string(r.registers[i]) << "\n";
    std::cout << "  resident lines: " << r.resident_lines.size() << "\n";

    Json args = {{"listing", std::filesystem::path(o.listing).filename().string()},
                 {"profile", profile.name},
                 {"seed", o.seed},
                 {"noise", noise_json(o)},
                 {"cycle_budget", o.cycle_budget}};
    Json result = to_json(r);
    result["event_count"] = r.events.size();
    emit(o, "run-listing", std::move(args), std::move(result), timer);
    return kOk;
}

int cmd_detect_predictor(const Options& o) {
    Timer timer;
    const MicroArchProfile profile = load_profile(o.profile);
    const auto d = detect_static_predictor(profile, o.imul_count, parse_noise(o.noise), o.seed);
    std::cout << profile.name << ": forward jumps predicted " << to_string(d.result) << " (fall-through "
              << d.fall_through_cycles << ", taken " << d.taken_cycles << ", threshold " << d.threshold << ")\n";
    Json args = {{"profile", profile.name}, {"imul_count", o.imul_count}, {"noise", noise_json(o)}, {"seed", o.seed}};
    emit(o, "detect-predictor", std::move(args), to_json(d), timer);
    return kOk;
}

int cmd_probe(const Options& o) {
    Timer timer;
    const MicroArchProfile profile = load_profile(o.profile);
    const KernelSpace k = kernel_space(o, o.decoys);
    const ProbeConfig config = probe_config(o);
    Prober prober(profile, k.map, config);

    Json verdicts = Json::array();
    std::vector<TimingSample> samples;
    for (const auto& text : o.addresses) {
        const uint64_t addr = parse_address(text);
        const ProbeVerdict v = prober.probe(addr);
        const bool truth = k.map.is_mapped(addr);
        std::cout << hex_string(addr) << ": " << (v.mapped ? "mapped" : "unmapped") << " (actual "
                  << (truth ? "mapped" : "unmapped") << ")  cycles";
        for (const auto& s : v.samples) std::cout << ' ' << s.cycles;
        std::cout << "\n";
        Json j = to_json(v);
        j["actually_mapped"] = truth;
        verdicts.push_back(std::move(j));
        samples.insert(samples.end(), v.samples.begin(), v.samples.end());
    }
    if (!o.csv.empty()) write_file(o.csv, samples_csv(samples));

    Json args = {{"profile", profile.name},      {"technique", std::string(to_string(config.technique))},
                 {"trials", config.trials},      {"imul_count", config.imul_count},
                 {"noise", noise_json(o)},       {"seed", o.seed},
                 {"probe_seed", config.seed},    {"layout", k.layout ? Json(to_string(k.layout->os)) : Json("records")}};
    Json result = {{"calibration", to_json(prober.calibration())},
                   {"threshold", prober.threshold()},
                   {"simulated_cycles", prober.simulated_cycles()},
                   {"verdicts", verdicts}};
    emit(o, "probe", std::move(args), std::move(result), timer);
    return kOk;
}

int cmd_derandomize(const Options& o) {
    Timer timer;
    const MicroArchProfile profile = load_profile(o.profile);
    const KernelSpace k = kernel_space(o, o.decoys);
    if (!k.layout) throw ConfigError("derandomize needs a layout JSON file, not layout records");
    const ProbeConfig config = probe_config(o);
    DerandomizationReport r = derandomize(*k.layout, k.map, profile, config);

    std::cout << summary_text(r);
    const bool windows = k.layout->os == OsKind::Windows;
    bool exact = r.false_positives == 0 && r.false_negatives == 0;
    if (windows) {
        const bool located = r.located_image_base == k.layout->image_base();
        std::cout << "  image located: " << (located ? "yes" : "no") << " (actual "
                  << hex_string(k.layout->image_base()) << ")\n";
        exact = exact && located;
    }
    if (!o.csv.empty()) write_file(o.csv, samples_csv(r.samples));

    Json args = {{"os", std::string(to_string(k.layout->os))},
                 {"profile", profile.name},
                 {"seed", k.layout->seed},
                 {"probe_seed", config.seed},
                 {"trials", config.trials},
                 {"technique", std::string(to_string(config.technique))},
                 {"imul_count", config.imul_count},
                 {"batch_imul_count", config.batch_imul_count},
                 {"noise", noise_json(o)},
                 {"decoys", !k.layout->decoy_pages.empty()},
                 {"cycle_budget", config.cycle_budget}};
    Json result = to_json(r, o.with_samples);
    result["exact"] = exact;
    emit(o, "derandomize", std::move(args), std::move(result), timer);
    if (o.assert_exact && !exact) {
        std::cerr << "derandomize: result differs from the ground truth\n";
        return kMismatch;
    }
    return kOk;
}

std::vector<MicroArchProfile> sweep_profiles(const Options& o) {
    if (o.profiles.empty()) return builtin_profiles();
    std::vector<MicroArchProfile> out;
    for (const auto& p : o.profiles) out.push_back(load_profile(p));
    return out;
}

std::string cell(const std::optional<uint32_t>& v) { return v ? std::to_string(*v) : "-"; }

int cmd_sweep(const Options& o) {
    Timer timer;
    const auto profiles = sweep_profiles(o);
    Json rows = Json::array();
    std::ostringstream table;
    table << std::left;
    if (o.sweep == "detect-predictor") {
        table << std::setw(14) << "profile" << std::setw(14) << "forward-jump" << std::setw(14) << "fall-through"
              << std::setw(8) << "taken" << "threshold\n";
        for (const auto& p : profiles) {
            const auto d = detect_static_predictor(p, o.imul_count, parse_noise(o.noise), o.seed);
            table << std::setw(14) << p.name << std::setw(14) << to_string(d.result) << std::setw(14)
                  << d.fall_through_cycles << std::setw(8) << d.taken_cycles << d.threshold << "\n";
            Json j = to_json(d);
            j["profile"] = p.name;
            rows.push_back(std::move(j));
        }
    } else if (o.sweep == "buffer-limits") {
        table << std::setw(14) << "profile" << std::setw(16) << "parallel-loads" << std::setw(14) << "load-buffer"
              << "universal-stall\n";
        for (const auto& p : profiles) {
            const auto b = recover_buffer_limits(p, o.imul_count);
            table << std::setw(14) << p.name << std::setw(16) << cell(b.unmapped_stall) << std::setw(14)
                  << (b.universal_stall ? "-" : cell(b.mapped_stall))
                  << (b.universal_stall ? "after " + cell(b.unmapped_stall) : "no") << "\n";
            Json j = to_json(b);
            j["profile"] = p.name;
            rows.push_back(std::move(j));
        }
    } else if (o.sweep == "flushing") {
        table << std::setw(14) << "profile" << std::setw(10) << "per-uop" << std::setw(12) << "without-hlt"
              << std::setw(10) << "with-hlt" << "separation\n";
        const RunSettings s = run_settings(o);
        for (const auto& p : profiles) {
            FlushingConfig c;
            c.imul_count = o.imul_count;
            const uint64_t without = flushing_channel_probe(p, c, s);
            c.with_hlt = true;
            const uint64_t with = flushing_channel_probe(p, c, s);
            const int64_t separation = static_cast<int64_t>(without) - static_cast<int64_t>(with);
            table << std::setw(14) << p.name << std::setw(10) << p.flush_per_uop_cost << std::setw(12) << without
                  << std::setw(10) << with << separation << "\n";
            rows.push_back({{"profile", p.name},
                            {"flush_per_uop_cost", p.flush_per_uop_cost},
                            {"without_hlt_cycles", without},
                            {"with_hlt_cycles", with},
                            {"separation", separation}});
        }
    } else {
        throw ConfigError("unknown sweep command '" + o.sweep + "' (detect-predictor, buffer-limits, flushing)");
    }
    std::cout << table.str();
    Json names = Json::array();
    for (const auto& p : profiles) names.push_back(p.name);
    Json args = {{"command", o.sweep}, {"profiles", names}, {"imul_count", o.imul_count}, {"noise", noise_json(o)},
                 {"seed", o.seed}};
    emit(o, "sweep-profiles", std::move(args), {{"rows", rows}}, timer);
    return kOk;
}

int cmd_demo_guard(const Options& o) {
    Timer timer;
    const MicroArchProfile profile = load_profile(o.profile);
    const GuardDemo g = guarded_conditional_demo(profile, !o.no_adapt, o.imul_count, run_settings(o));
    auto line = [](const char* name, const GuardRun& r) {
        std::cout << "  " << std::left << std::setw(10) << name << "leak " << (r.leak_observed ? "observed" : "not observed")
                  << " (feedback " << r.feedback_cycles << " cycles, speculation depth " << r.max_speculation_depth
                  << ")\n";
    };
    std::cout << "guard demo on " << profile.name << " (threshold " << g.threshold << ")\n";
    line("unguarded", g.unguarded);
    line("guarded", g.guarded);
    Json args = {{"profile", profile.name}, {"adapt_guard", !o.no_adapt}, {"imul_count", o.imul_count},
                 {"noise", noise_json(o)},  {"seed", o.seed}};
    emit(o, "demo-guard", std::move(args), to_json(g), timer);
    return kOk;
}

int cmd_read_memory(const Options& o) {
    Timer timer;
    const MicroArchProfile profile = load_profile(o.profile);
    if (o.addresses.size() != 1) throw ConfigError("read-memory takes one --address");
    if (o.length == 0) throw ConfigError("--length must be positive");
    const uint64_t start = parse_address(o.addresses.front());
    const MemoryMap map = (!o.layout.empty() || !o.os.empty()) ? attack_map(kernel_space(o, o.decoys).map)
                                                                : reference_attack_map();
    const RunSettings s = run_settings(o);

    Json bytes = Json::array();
    std::ostringstream text;
    uint32_t failed = 0;
    for (uint32_t i = 0; i < o.length; ++i) {
        const uint64_t addr = start + i;
        const auto page = map.find(addr);
        const bool kernel = page && page->entry.kernel;
        const ReadResult r = kernel ? kernel_read(addr, profile, map, o.imul_count, s)
                                    : arbitrary_read(addr, profile, map, o.imul_count, s);
        Json j = to_json(r);
        j["address"] = hex_string(addr);
        j["backing"] = page ? Json(map.backing_byte(addr)) : Json(nullptr);
        bytes.push_back(std::move(j));
        if (i % 16 == 0) text << (i ? "\n" : "") << hex_string(addr) << ":";
        if (r.value) {
            text << ' ' << std::hex << std::setw(2) << std::setfill('0') << int(*r.value) << std::dec
                 << std::setfill(' ');
        } else {
            text << " ??";
            ++failed;
        }
    }
    std::cout << text.str() << "\n";
    if (failed) std::cout << failed << " byte(s) could not be read\n";
    Json args = {{"profile", profile.name}, {"address", hex_string(start)}, {"length", o.length},
                 {"imul_count", o.imul_count}, {"noise", noise_json(o)}, {"seed", o.seed}};
    emit(o, "read-memory", std::move(args), {{"bytes", bytes}, {"failed", failed}}, timer);
    return kOk;
}

int cmd_export_profiles(const Options& o) {
    const std::string text = format_profiles(builtin_profiles());
    write_file(o.out.empty() ? "-" : o.out, text);
    return kOk;
}

int cmd_make_layout(const Options& o) {
    const KernelSpace k = kernel_space(o, o.decoys);
    write_file(o.out.empty() ? "-" : o.out, layout_to_json(*k.layout));
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Speculative out-of-order CPU simulator and side-channel experiment runner", "specsim"};
    app.require_subcommand(1);
    Options o;

    auto profile = [&](CLI::App* c) {
        c->add_option("--profile", o.profile, "built-in profile name or profile file")->capture_default_str();
    };
    auto seed = [&](CLI::App* c) { c->add_option("--seed", o.seed, "layout and noise seed")->capture_default_str(); };
    auto noise = [&](CLI::App* c) {
        c->add_option("--noise", o.noise, "off, default, or jitter=<n>,evict=<p>")->capture_default_str();
    };
    auto imul = [&](CLI::App* c) {
        c->add_option("--imul-count", o.imul_count, "length of the delaying imul chain")->capture_default_str();
    };
    auto out = [&](CLI::App* c) { c->add_option("--out", o.out, "JSON report path ('-' for stdout)"); };
    auto budget = [&](CLI::App* c) {
        c->add_option("--cycle-budget", o.cycle_budget, "cycle limit per program run")->capture_default_str();
    };
    auto space = [&](CLI::App* c) {
        c->add_option("--os", o.os, "linux or windows");
        c->add_option("--layout", o.layout, "layout JSON or layout records file");
        c->add_flag("--decoys", o.decoys, "Windows: place decoy 2MiB allocations");
    };
    auto probing = [&](CLI::App* c) {
        c->add_option("--trials", o.trials, "runs per address; mapped only if every run hits")->capture_default_str();
        c->add_option("--technique", o.technique, "two-level, dependent-load, exhaustion or flushing")
            ->capture_default_str();
        c->add_option("--batch-imul-count", o.batch_imul_count, "imul chain per probe in batch programs")
            ->capture_default_str();
        c->add_option("--exhaustion-loads", o.exhaustion_loads, "kernel loads per exhaustion probe (0: midpoint)");
        c->add_option("--threshold", o.threshold, "timing threshold instead of calibration");
        c->add_option("--probe-seed", o.probe_seed, "noise seed (defaults to --seed)");
        c->add_flag("--no-adapt", o.no_adapt, "ignore the static forward-jump policy");
        c->add_option("--csv", o.csv, "timing samples as CSV");
    };

    auto* run_listing = app.add_subcommand("run-listing", "run an assembly listing");
    run_listing->add_option("listing", o.listing, "assembly file")->required();
    auto* trace_opt = run_listing->add_option("--trace", o.trace, "write the event log as JSON lines")->expected(0, 1);
    profile(run_listing), seed(run_listing), noise(run_listing), out(run_listing), budget(run_listing);
    space(run_listing);

    auto* detect = app.add_subcommand("detect-predictor", "detect the static forward-jump prediction");
    profile(detect), imul(detect), noise(detect), seed(detect), out(detect);

    auto* probe = app.add_subcommand("probe", "probe kernel addresses");
    probe->add_option("--address", o.addresses, "kernel address (repeatable)")->required();
    profile(probe), seed(probe), noise(probe), imul(probe), out(probe), budget(probe), space(probe), probing(probe);

    auto* derand = app.add_subcommand("derandomize", "recover the kernel layout");
    derand->add_flag("--assert-exact", o.assert_exact, "exit nonzero unless the result matches the ground truth");
    derand->add_flag("--samples", o.with_samples, "include timing samples in the JSON report");
    profile(derand), seed(derand), noise(derand), imul(derand), out(derand), budget(derand), space(derand);
    probing(derand);

    auto* sweep = app.add_subcommand("sweep-profiles", "run one experiment on several profiles");
    sweep->add_option("sweep", o.sweep, "detect-predictor, buffer-limits or flushing");
    sweep->add_option("--command", o.sweep, "detect-predictor, buffer-limits or flushing");
    sweep->add_option("--profile", o.profiles, "profile to include (repeatable; default all built-ins)");
    imul(sweep), noise(sweep), seed(sweep), out(sweep);

    auto* guard = app.add_subcommand("demo-guard", "guarded conditional branch demo");
    guard->add_flag("--no-adapt", o.no_adapt, "guard the fall-through side regardless of the predictor");
    profile(guard), imul(guard), noise(guard), seed(guard), out(guard), budget(guard);

    auto* read = app.add_subcommand("read-memory", "read bytes through nested speculation");
    read->add_option("--address", o.addresses, "first byte")->required();
    read->add_option("--length", o.length, "bytes to read")->capture_default_str();
    profile(read), imul(read), noise(read), seed(read), out(read), budget(read), space(read);

    auto* export_profiles = app.add_subcommand("export-profiles", "write the built-in profiles");
    out(export_profiles);

    auto* make_layout = app.add_subcommand("make-layout", "write a randomized layout as JSON");
    seed(make_layout), out(make_layout);
    make_layout->add_option("--os", o.os, "linux or windows");
    make_layout->add_flag("--decoys", o.decoys, "Windows: place decoy 2MiB allocations");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }

    try {
        if (*run_listing) return cmd_run_listing(o, trace_opt->count() > 0);
        if (*detect) return cmd_detect_predictor(o);
        if (*probe) return cmd_probe(o);
        if (*derand) return cmd_derandomize(o);
        if (*sweep) return cmd_sweep(o);
        if (*guard) return cmd_demo_guard(o);
        if (*read) return cmd_read_memory(o);
        if (*export_profiles) return cmd_export_profiles(o);
        if (*make_layout) return cmd_make_layout(o);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kConfig;
    } catch (const AssemblyError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kConfig;
    } catch (const TechniqueIneffective& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kIneffective;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kInternal;
    }
    return kInternal;
}
