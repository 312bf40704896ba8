#include "specsim/attacks.hpp"

#include <algorithm>
#include <chrono>
#include <sstream>

#include "specsim/error.hpp"

namespace specsim {

namespace {

constexpr RegId kR9 = 9, kR10 = 10, kR11 = 11, kR12 = 12, kR14 = 14, kR15 = 15;

constexpr uint64_t kRefMapped = kReferenceMappedPage;
constexpr uint64_t kRefUnmapped = kReferenceUnmappedPage;

uint64_t mix(uint64_t a, uint64_t b) { return splitmix64(a ^ splitmix64(b)); }
uint64_t mix(uint64_t a, uint64_t b, uint64_t c) { return mix(mix(a, b), c); }

std::string hex(uint64_t v) {
    std::ostringstream os;
    os << "0x" << std::hex << v;
    return os.str();
}

void ensure_user_page(MemoryMap& map, uint64_t addr, uint64_t seed) {
    if (!map.is_mapped(addr)) map.map_page(addr & ~(kPage4K - 1), kPage4K, false, seed);
}

MemoryMap attack_map_with(const MemoryMap& map, uint64_t feedback) {
    MemoryMap out = map;
    ensure_user_page(out, feedback, 0x5eed);
    for (uint64_t i = 0; i < kTablePages; ++i) ensure_user_page(out, kTableAddress + i * kPage4K, 0x7ab1e + i);
    for (uint64_t i = 0; i < kUserDataPages; ++i) ensure_user_page(out, kUserDataAddress + i * kPage4K, 0xda7a + i);
    return out;
}

MemoryMap reference_map(uint64_t feedback) {
    MemoryMap m;
    m.map_page(kRefMapped, kPage4K, true, 0xa5a5);
    return attack_map_with(m, feedback);
}

/// Appends assembled fragments and relocated bodies, resolving labels at the end.
class Builder {
public:
    void init(RegId reg, uint64_t value) { p_.initial_registers[reg] = value; }

    void text(std::string_view src) {
        Program f = assemble(src);
        for (auto& op : f.ops) p_.ops.push_back(std::move(op));
    }

    void label(const std::string& name) {
        if (!p_.labels.emplace(name, static_cast<uint32_t>(p_.ops.size())).second)
            throw std::logic_error("duplicate harness label " + name);
    }

    void jump(std::optional<Condition> cond, const std::string& target) {
        MacroOp op;
        op.opcode = cond ? Opcode::Jcc : Opcode::Jmp;
        op.form = OperandForm::Label;
        if (cond) op.cond = *cond;
        op.target_label = target;
        p_.ops.push_back(std::move(op));
    }

    /// Copies `body`; its labels get `prefix` and a branch to the end of the
    /// body lands on whatever follows it.
    void body(const Program& body, const std::string& prefix) {
        const auto base = static_cast<uint32_t>(p_.ops.size());
        for (const auto& [name, index] : body.labels) {
            if (!p_.labels.emplace(prefix + name, base + index).second)
                throw std::logic_error("duplicate harness label " + prefix + name);
        }
        for (MacroOp op : body.ops) {
            if (op.form == OperandForm::Label) op.target_label = prefix + op.target_label;
            p_.ops.push_back(std::move(op));
        }
        for (const auto& [reg, value] : body.initial_registers) p_.initial_registers.emplace(reg, value);
    }

    Program finish() {
        for (auto& op : p_.ops) {
            if (op.form != OperandForm::Label) continue;
            auto it = p_.labels.find(op.target_label);
            if (it == p_.labels.end()) throw std::logic_error("unresolved harness label " + op.target_label);
            op.target = it->second;
        }
        return std::move(p_);
    }

private:
    Program p_;
};

std::string imul_chain(uint32_t count) {
    std::string s;
    s.reserve(count * 11);
    for (uint32_t i = 0; i < count; ++i) s += "imul r9, 3\n";
    return s;
}

/// The imul-delayed branch. The committed direction skips the body and the
/// static prediction runs into it; both sides end at `exit_label`.
void emit_branch(Builder& b, const Program& body, const std::string& prefix, uint32_t imul_count, bool taken_side,
                 const std::string& exit_label) {
    b.text(imul_chain(imul_count));
    b.text("cmp r9b, " + std::to_string(imul_chain_low_byte(imul_count)));
    if (!taken_side) {
        b.jump(Condition::Zero, prefix + "C1True");
        b.label(prefix + "C1False");
        b.body(body, prefix);
        b.jump(std::nullopt, exit_label);
        b.label(prefix + "C1True");
        b.jump(std::nullopt, exit_label);
    } else {
        b.jump(Condition::NotZero, prefix + "C1True");
        b.label(prefix + "C1False");
        b.jump(std::nullopt, exit_label);
        b.label(prefix + "C1True");
        b.body(body, prefix);
        b.jump(std::nullopt, exit_label);
    }
}

std::string timestamp_end(bool has_rdtscp) { return has_rdtscp ? "rdtscp\n" : "cpuid\nrdtsc\n"; }

Program body_of(std::string_view src) { return assemble(src); }

/// The nested-speculation bit test: the feedback line is loaded when the
/// tested value is zero. `value_src` leaves the value in r10b.
std::string nested_zero_check(const std::string& value_src, bool taken_side) {
    if (!taken_side)
        return value_src +
               "jz C2True\n"
               "C2False:\n"
               "jmp Done\n"
               "C2True:\n"
               "mov rsi, [r11]\n"
               "Done:\n";
    return value_src +
           "jnz C2False\n"
           "C2True:\n"
           "mov rsi, [r11]\n"
           "jmp Done\n"
           "C2False:\n"
           "jmp Done\n"
           "Done:\n";
}

std::string technique_body(Technique t, uint32_t exhaustion_loads, bool taken_side) {
    switch (t) {
        case Technique::TwoLevelSpeculation: return nested_zero_check("cmp QWORD PTR [r10], 0\n", taken_side);
        case Technique::DependentLoad:
            return "mov rax, [r10]\n"
                   "mov rsi, [r11+rax]\n";
        case Technique::Exhaustion: {
            std::string s;
            for (uint32_t i = 0; i < exhaustion_loads; ++i) s += "mov rax, [r10]\n";
            return s + "mov rsi, [r11]\n";
        }
        case Technique::FlushingChannel: {
            std::string s = "mov rax, [r10]\n";
            for (int i = 0; i < 128; ++i) s += "nop\n";
            return s;
        }
    }
    return {};
}

/// Whole-block timing: the start stamp sits right before the branch and no
/// serializing instruction precedes it.
Program flushing_program(const Program& body, uint32_t imul_count, bool taken_side, bool has_rdtscp) {
    Builder b;
    b.init(kR9, 3);
    b.text(imul_chain(imul_count));
    b.text("cmp r9b, " + std::to_string(imul_chain_low_byte(imul_count)) + "\nrdtsc\nmov r13, rax\n");
    if (!taken_side) {
        b.jump(Condition::Zero, "C1True");
        b.label("C1False");
        b.body(body, "");
        b.jump(std::nullopt, "Exit");
        b.label("C1True");
    } else {
        b.jump(Condition::NotZero, "C1True");
        b.label("C1False");
        b.jump(std::nullopt, "Exit");
        b.label("C1True");
        b.body(body, "");
        b.jump(std::nullopt, "Exit");
    }
    b.label("Exit");
    b.text(timestamp_end(has_rdtscp) + "mov r14, rax\ncpuid\nsub r14, r13\nhlt\n");
    return b.finish();
}

RunOptions options_for(const RunSettings& s) {
    RunOptions o;
    o.noise = s.noise;
    o.seed = s.seed;
    o.cycle_budget = s.cycle_budget;
    return o;
}

RunResult checked(RunResult r, const char* what) {
    if (r.terminal != Terminal::Exited)
        throw std::logic_error(std::string(what) + ": program ended with " + std::string(to_string(r.terminal)));
    return r;
}

uint64_t feedback_time(const RunResult& r) { return r.registers[kR14]; }

}  // namespace

MemoryMap attack_map(const MemoryMap& map) { return attack_map_with(map, kFeedbackAddress); }

MemoryMap reference_attack_map() { return reference_map(kFeedbackAddress); }

std::string_view to_string(Technique t) {
    switch (t) {
        case Technique::TwoLevelSpeculation: return "two-level";
        case Technique::DependentLoad: return "dependent-load";
        case Technique::Exhaustion: return "exhaustion";
        case Technique::FlushingChannel: return "flushing";
    }
    return "?";
}

Technique parse_technique(std::string_view name) {
    for (auto t : {Technique::TwoLevelSpeculation, Technique::DependentLoad, Technique::Exhaustion,
                   Technique::FlushingChannel})
        if (name == to_string(t)) return t;
    throw ConfigError("unknown technique '" + std::string(name) +
                      "' (expected two-level, dependent-load, exhaustion or flushing)");
}

uint8_t imul_chain_low_byte(uint32_t count) {
    uint32_t r = 1, base = 3;
    for (uint64_t e = uint64_t{count} + 1; e; e >>= 1) {
        if (e & 1) r = (r * base) & 0xff;
        base = (base * base) & 0xff;
    }
    return static_cast<uint8_t>(r);
}

std::string measurement_source(bool has_rdtscp) {
    return "cpuid\n"
           "rdtsc\n"
           "mov r13, rax\n"
           "mov rax, [r11]\n" +
           timestamp_end(has_rdtscp) +
           "mov r14, rax\n"
           "cpuid\n"
           "sub r14, r13\n";
}

Program build_speculation_harness(const Program& body, const HarnessConfig& c) {
    Builder b;
    b.init(kR9, 3);
    b.init(kR11, c.feedback_address);
    if (c.flush_feedback) b.text("clflush [r11]");
    b.text("cpuid");
    emit_branch(b, body, "", c.imul_count, c.body_on_taken_side, "Exit");
    b.label("Exit");
    if (c.measure) b.text(measurement_source(c.has_rdtscp));
    b.text("hlt");
    return b.finish();
}

HarnessConfig harness_for(const MicroArchProfile& profile, uint32_t imul_count, bool adapt) {
    HarnessConfig c;
    c.imul_count = imul_count;
    c.body_on_taken_side = adapt && profile.static_forward == ForwardPrediction::Taken;
    c.has_rdtscp = profile.has_rdtscp;
    return c;
}

// ---------------------------------------------------------------------------

uint64_t measure_access(Core& core, uint64_t u, bool cached, const RunSettings& settings) {
    const auto key = core.profile().has_rdtscp;
    static const Executable with_rdtscp(assemble(measurement_source(true) + "hlt\n"));
    static const Executable without_rdtscp(assemble(measurement_source(false) + "hlt\n"));
    RunOptions o = options_for(settings);
    o.registers = {{kR11, u}};
    if (cached) o.warm_lines = {u};
    return feedback_time(checked(core.run(key ? with_rdtscp : without_rdtscp, o), "measure_access"));
}

Calibration calibrate(Core& core, uint64_t u, const RunSettings& settings, uint32_t runs) {
    Calibration c;
    c.hit_cycles = c.miss_cycles = ~0ull;
    for (uint32_t i = 0; i < std::max(runs, 1u); ++i) {
        RunSettings s = settings;
        s.seed = mix(settings.seed, 0xca11b, i);
        c.hit_cycles = std::min(c.hit_cycles, measure_access(core, u, true, s));
        c.miss_cycles = std::min(c.miss_cycles, measure_access(core, u, false, s));
    }
    c.threshold = (c.hit_cycles + c.miss_cycles) / 2;
    return c;
}

std::string_view to_string(StaticPrediction p) {
    switch (p) {
        case StaticPrediction::ForwardNotTaken: return "N";
        case StaticPrediction::ForwardTaken: return "T";
        case StaticPrediction::Inconclusive: return "inconclusive";
    }
    return "?";
}

PredictorDetection detect_static_predictor(const MicroArchProfile& profile, uint32_t imul_count,
                                           const NoiseConfig& noise, uint64_t seed) {
    const MemoryMap map = attack_map(MemoryMap{});
    Core core(profile, map);
    RunSettings s{noise, seed};
    PredictorDetection d;
    d.threshold = calibrate(core, kFeedbackAddress, s).threshold;

    const Program body = body_of("mov rsi, [r11]\n");
    auto run_variant = [&](bool taken_side, uint64_t salt) {
        HarnessConfig c;
        c.imul_count = imul_count;
        c.body_on_taken_side = taken_side;
        c.has_rdtscp = profile.has_rdtscp;
        const Executable exe(build_speculation_harness(body, c));
        RunSettings rs = s;
        rs.seed = mix(seed, salt);
        return feedback_time(checked(core.run(exe, options_for(rs)), "detect_static_predictor"));
    };
    d.fall_through_cycles = run_variant(false, 1);
    d.taken_cycles = run_variant(true, 2);
    const bool nt = d.fall_through_cycles < d.threshold;
    const bool t = d.taken_cycles < d.threshold;
    d.result = nt == t ? StaticPrediction::Inconclusive
                       : (nt ? StaticPrediction::ForwardNotTaken : StaticPrediction::ForwardTaken);
    return d;
}

// ---------------------------------------------------------------------------

TechniqueIneffective::TechniqueIneffective(Technique technique, const std::string& profile, const std::string& why)
    : std::runtime_error("technique " + std::string(to_string(technique)) + " is ineffective on " + profile + ": " +
                         why),
      technique_(technique) {}

std::optional<std::pair<uint32_t, uint32_t>> exhaustion_range(const MicroArchProfile& profile) {
    if (!profile.load_buffer_entries || *profile.load_buffer_entries <= profile.parallel_miss_slots) return std::nullopt;
    return std::make_pair(profile.parallel_miss_slots, *profile.load_buffer_entries - 1);
}

void validate(const ProbeConfig& c, const MicroArchProfile& profile) {
    if (c.trials == 0) throw ConfigError("trials must be at least 1");
    const uint32_t mul = profile.latency_of(UopKind::AluMul);
    for (uint32_t count : {c.imul_count, c.batch_imul_count}) {
        if (uint64_t{mul} * count <= profile.memory_latency)
            throw ConfigError("imul chain of " + std::to_string(count) + " resolves within the memory latency of " +
                              profile.name + " (" + std::to_string(profile.memory_latency) +
                              " cycles); the nested read would outlive the speculation window");
    }
    if (c.technique == Technique::Exhaustion && c.exhaustion_loads != 0) {
        if (auto r = exhaustion_range(profile); r && (c.exhaustion_loads < r->first || c.exhaustion_loads > r->second))
            throw ConfigError("exhaustion load count " + std::to_string(c.exhaustion_loads) + " outside [" +
                              std::to_string(r->first) + ", " + std::to_string(r->second) + "] for " + profile.name);
    }
}

struct Prober::Impl {
    MicroArchProfile profile;
    ProbeConfig config;
    MemoryMap map;
    MemoryMap ref_map;
    Core core;
    Core ref_core;
    bool taken_side;
    uint32_t loads;
    Program single_program;
    Executable single;
    Calibration cal;
    uint64_t threshold = 0;
    bool mapped_is_faster = true;  // flushing channel orientation
    uint64_t cycles = 0;

    // Batch programs are built lazily per chunk size.
    static constexpr uint32_t kChunk = 256;
    std::optional<Executable> batch;

    Impl(const MicroArchProfile& p, const MemoryMap& kernel_map, ProbeConfig c)
        : profile(p),
          config(c),
          map(attack_map_with(kernel_map, c.feedback_address)),
          ref_map(reference_map(c.feedback_address)),
          core(profile, map),
          ref_core(profile, ref_map),
          taken_side(c.adapt_static_prediction && p.static_forward == ForwardPrediction::Taken),
          loads(exhaustion_loads(p, c)),
          single_program(make_single()),
          single(single_program) {}

    static uint32_t exhaustion_loads(const MicroArchProfile& p, const ProbeConfig& c) {
        if (c.exhaustion_loads) return c.exhaustion_loads;
        if (auto r = exhaustion_range(p)) return (r->first + r->second) / 2;
        return p.parallel_miss_slots;
    }

    Program body() const { return body_of(technique_body(config.technique, loads, taken_side)); }

    Program make_single() const {
        if (config.technique == Technique::FlushingChannel) {
            Program prog = flushing_program(body(), config.imul_count, taken_side, profile.has_rdtscp);
            prog.initial_registers[kR11] = config.feedback_address;
            return prog;
        }
        HarnessConfig h = harness_for(profile, config.imul_count, config.adapt_static_prediction);
        h.feedback_address = config.feedback_address;
        return build_speculation_harness(body(), h);
    }

    // One probe per chunk slot: its address comes from the table at r15 and
    // its measurement goes to the results area at r12.
    Program make_batch(uint32_t chunk) const {
        Builder b;
        b.init(kR11, config.feedback_address);
        b.init(kR15, kTableAddress);
        b.init(kR12, kTableAddress + uint64_t{chunk} * 8);
        const Program bd = body();
        for (uint32_t i = 0; i < chunk; ++i) {
            const std::string px = "P" + std::to_string(i) + "_";
            b.label(px + "Start");
            b.text("mov r10, [r15+" + std::to_string(i * 8) + "]\nclflush [r11]\ncpuid\nmov r9, 3\n");
            emit_branch(b, bd, px, config.batch_imul_count, taken_side, px + "Exit");
            b.label(px + "Exit");
            b.text(measurement_source(profile.has_rdtscp) + "mov [r12+" + std::to_string(i * 8) + "], r14\n");
        }
        b.text("hlt");
        return b.finish();
    }

    uint64_t run_single(Core& c, uint64_t address, uint32_t trial) {
        RunOptions o;
        o.noise = config.noise;
        o.seed = mix(config.seed, address, trial);
        o.cycle_budget = config.cycle_budget;
        o.registers = {{kR10, address}};
        const RunResult r = checked(c.run(single, o), "probe");
        cycles += r.cycles;
        return feedback_time(r);
    }

    bool is_mapped(uint64_t min_cycles) const {
        if (config.technique != Technique::FlushingChannel) return min_cycles < threshold;
        return mapped_is_faster ? min_cycles < threshold : min_cycles > threshold;
    }

    std::vector<uint64_t> run_chunk(const std::vector<uint64_t>& addresses, size_t first, uint32_t trial) {
        if (!batch) batch.emplace(make_batch(kChunk));
        const size_t n = std::min<size_t>(kChunk, addresses.size() - first);
        RunOptions o;
        o.noise = config.noise;
        o.seed = mix(config.seed, addresses[first], trial);
        o.cycle_budget = config.cycle_budget * kChunk;
        for (uint32_t i = 0; i < kChunk; ++i) {
            // Unused slots repeat the last address; their results are dropped.
            const uint64_t a = addresses[first + std::min<size_t>(i, n - 1)];
            o.preload_qwords.emplace_back(kTableAddress + uint64_t{i} * 8, a);
        }
        for (uint64_t off = 0; off < uint64_t{kChunk} * 16; off += kLineSize) o.warm_lines.push_back(kTableAddress + off);
        const RunResult r = checked(core.run(*batch, o), "batch probe");
        cycles += r.cycles;
        if (r.stores.size() != kChunk) throw std::logic_error("batch probe: missing measurements");
        std::vector<uint64_t> out;
        for (size_t i = 0; i < n; ++i) out.push_back(r.stores[i].value);
        return out;
    }

    void calibrate_and_check() {
        RunSettings s{config.noise, mix(config.seed, 0x7e57), config.cycle_budget};
        cal = calibrate(core, config.feedback_address, s);
        threshold = config.threshold.value_or(cal.threshold);

        auto min_of = [&](uint64_t address) {
            uint64_t m = ~0ull;
            for (uint32_t t = 0; t < config.trials; ++t) m = std::min(m, run_single(ref_core, address, t));
            return m;
        };
        const uint64_t mapped = min_of(kRefMapped);
        const uint64_t unmapped = min_of(kRefUnmapped);
        if (config.technique == Technique::FlushingChannel) {
            if (mapped == unmapped)
                throw TechniqueIneffective(config.technique, profile.name,
                                           "flush duration is the same for mapped and unmapped pages");
            mapped_is_faster = mapped < unmapped;
            if (!config.threshold) threshold = (mapped + unmapped) / 2;
            return;
        }
        const bool m = mapped < threshold, u = unmapped < threshold;
        if (m == u)
            throw TechniqueIneffective(config.technique, profile.name,
                                       m ? "the feedback line is cached for mapped and unmapped pages alike"
                                         : "the feedback line is never cached");
        if (!m)
            throw TechniqueIneffective(config.technique, profile.name, "only unmapped pages cache the feedback line");
    }
};

Prober::Prober(const MicroArchProfile& profile, const MemoryMap& kernel_map, ProbeConfig config) {
    validate(profile);
    validate(config, profile);
    impl_ = std::make_unique<Impl>(profile, kernel_map, std::move(config));
    impl_->calibrate_and_check();
}

Prober::~Prober() = default;

ProbeVerdict Prober::probe(uint64_t address) {
    ProbeVerdict v;
    v.address = address;
    uint64_t m = ~0ull;
    for (uint32_t t = 0; t < impl_->config.trials; ++t) {
        const uint64_t c = impl_->run_single(impl_->core, address, t);
        m = std::min(m, c);
        v.samples.push_back(TimingSample{address, t, c, impl_->is_mapped(c)});
    }
    v.mapped = impl_->is_mapped(m);
    return v;
}

std::vector<ProbeVerdict> Prober::probe_batch(const std::vector<uint64_t>& addresses) {
    std::vector<ProbeVerdict> out(addresses.size());
    // The flushing channel times the whole speculated block, which the batch
    // program cannot isolate per address.
    if (impl_->config.technique == Technique::FlushingChannel) {
        for (size_t i = 0; i < addresses.size(); ++i) out[i] = probe(addresses[i]);
        return out;
    }
    std::vector<uint64_t> best(addresses.size(), ~0ull);
    for (size_t i = 0; i < addresses.size(); ++i) out[i].address = addresses[i];
    for (uint32_t t = 0; t < impl_->config.trials; ++t) {
        for (size_t first = 0; first < addresses.size(); first += Impl::kChunk) {
            const auto res = impl_->run_chunk(addresses, first, t);
            for (size_t i = 0; i < res.size(); ++i) {
                best[first + i] = std::min(best[first + i], res[i]);
                out[first + i].samples.push_back(TimingSample{addresses[first + i], t, res[i], impl_->is_mapped(res[i])});
            }
        }
    }
    for (size_t i = 0; i < addresses.size(); ++i) out[i].mapped = impl_->is_mapped(best[i]);
    return out;
}

const Calibration& Prober::calibration() const { return impl_->cal; }
uint64_t Prober::threshold() const { return impl_->threshold; }
const ProbeConfig& Prober::config() const { return impl_->config; }
uint64_t Prober::simulated_cycles() const { return impl_->cycles; }
const Program& Prober::probe_program() const { return impl_->single_program; }

ProbeVerdict probe_address(uint64_t address, const ProbeConfig& config, const MicroArchProfile& profile,
                           const MemoryMap& kernel_map) {
    Prober p(profile, kernel_map, config);
    return p.probe(address);
}

// ---------------------------------------------------------------------------

std::optional<uint32_t> exhaustion_threshold(const MicroArchProfile& profile, bool mapped, uint32_t limit,
                                             uint32_t imul_count) {
    validate(profile);
    const MemoryMap map = reference_map(kFeedbackAddress);
    Core core(profile, map);
    const uint64_t threshold = calibrate(core, kFeedbackAddress).threshold;
    const HarnessConfig h = harness_for(profile, imul_count);
    const uint64_t k = mapped ? kRefMapped : kRefUnmapped;

    auto stalls = [&](uint32_t n) {
        const Executable exe(build_speculation_harness(body_of(technique_body(Technique::Exhaustion, n, false)), h));
        RunOptions o;
        o.registers = {{kR10, k}};
        return feedback_time(checked(core.run(exe, o), "exhaustion probe")) >= threshold;
    };
    if (!stalls(limit)) return std::nullopt;
    uint32_t lo = 0, hi = limit;  // stalls(hi) holds
    if (stalls(0)) return 0u;
    while (hi - lo > 1) {
        const uint32_t mid = lo + (hi - lo) / 2;
        (stalls(mid) ? hi : lo) = mid;
    }
    return hi;
}

BufferLimits recover_buffer_limits(const MicroArchProfile& profile, uint32_t imul_count) {
    BufferLimits b;
    b.unmapped_stall = exhaustion_threshold(profile, false, 160, imul_count);
    b.mapped_stall = exhaustion_threshold(profile, true, 160, imul_count);
    b.universal_stall = b.unmapped_stall && b.mapped_stall && *b.unmapped_stall == *b.mapped_stall;
    return b;
}

// ---------------------------------------------------------------------------

RangeStats summarize(std::string name, bool mapped, std::vector<uint64_t> cycles) {
    RangeStats s;
    s.name = std::move(name);
    s.mapped = mapped;
    s.count = cycles.size();
    if (cycles.empty()) return s;
    std::sort(cycles.begin(), cycles.end());
    s.min = cycles.front();
    const size_t n = cycles.size();
    s.median = n % 2 ? static_cast<double>(cycles[n / 2])
                     : (static_cast<double>(cycles[n / 2 - 1]) + static_cast<double>(cycles[n / 2])) / 2.0;
    long double sum = 0;
    for (auto c : cycles) sum += c;
    s.mean = static_cast<double>(sum / n);
    return s;
}

std::optional<uint64_t> locate_fingerprint(const std::vector<uint64_t>& detected, uint64_t stride,
                                           uint32_t run_length) {
    std::optional<uint64_t> found;
    size_t i = 0;
    while (i < detected.size()) {
        size_t j = i + 1;
        while (j < detected.size() && detected[j] == detected[j - 1] + stride) ++j;
        if (j - i == run_length) {
            if (found) return std::nullopt;
            found = detected[i];
        }
        i = j;
    }
    return found;
}

DerandomizationReport derandomize(const KaslrLayout& layout, const MemoryMap& kernel_map,
                                  const MicroArchProfile& profile, const ProbeConfig& config) {
    const auto wall_start = std::chrono::steady_clock::now();
    DerandomizationReport rep;
    rep.os = layout.os;
    rep.profile = profile.name;
    rep.technique = config.technique;
    rep.trials = config.trials;
    rep.layout_seed = layout.seed;
    rep.probe_seed = config.seed;
    rep.ground_truth = ground_truth(layout);

    Prober prober(profile, kernel_map, config);
    rep.threshold = prober.threshold();

    for (const auto& range : layout.search_ranges) {
        std::vector<uint64_t> addresses;
        for (uint64_t i = 0; i < range.count(); ++i) addresses.push_back(range.start + i * range.stride);
        std::vector<ProbeVerdict> verdicts;
        if (layout.os == OsKind::Windows) {
            verdicts = prober.probe_batch(addresses);
        } else {
            verdicts.reserve(addresses.size());
            for (auto a : addresses) verdicts.push_back(prober.probe(a));
        }
        std::vector<uint64_t> by_verdict[2];
        for (auto& v : verdicts) {
            if (v.mapped) rep.detected.push_back(v.address);
            for (const auto& s : v.samples) by_verdict[v.mapped].push_back(s.cycles);
            rep.samples.insert(rep.samples.end(), v.samples.begin(), v.samples.end());
        }
        rep.probes += addresses.size();
        for (int m : {1, 0})
            if (!by_verdict[m].empty()) rep.stats.push_back(summarize(range.name, m == 1, std::move(by_verdict[m])));
    }
    std::sort(rep.detected.begin(), rep.detected.end());
    std::vector<uint64_t> diff;
    std::set_difference(rep.detected.begin(), rep.detected.end(), rep.ground_truth.begin(), rep.ground_truth.end(),
                        std::back_inserter(diff));
    rep.false_positives = diff.size();
    diff.clear();
    std::set_difference(rep.ground_truth.begin(), rep.ground_truth.end(), rep.detected.begin(), rep.detected.end(),
                        std::back_inserter(diff));
    rep.false_negatives = diff.size();

    if (layout.os == OsKind::Windows) {
        rep.located_image_base = locate_fingerprint(rep.detected, layout.image_page_size,
                                                    static_cast<uint32_t>(layout.kernel_image_pages.size()));
    } else {
        for (auto a : rep.detected)
            if (a >= linux_kaslr::kImageStart && a < linux_kaslr::kImageEnd) {
                rep.located_image_base = a;
                break;
            }
    }
    rep.simulated_cycles = prober.simulated_cycles();
    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
    return rep;
}

// ---------------------------------------------------------------------------

namespace {

ReadResult read_byte(uint64_t target, const MicroArchProfile& profile, const MemoryMap& base_map, uint32_t imul_count,
                     const RunSettings& settings) {
    validate(profile);
    const MemoryMap map = attack_map(base_map);
    Core core(profile, map);
    const uint64_t threshold = calibrate(core, kFeedbackAddress, settings).threshold;
    const HarnessConfig h = harness_for(profile, imul_count);

    auto run = [&](const std::string& body, uint64_t salt) {
        const Executable exe(build_speculation_harness(body_of(body), h));
        RunOptions o = options_for(settings);
        o.seed = mix(settings.seed, target, salt);
        o.registers = {{kR10, target}};
        return feedback_time(checked(core.run(exe, o), "arbitrary_read"));
    };

    ReadResult r;
    r.control_cycles = run(
        "mov r10b, BYTE PTR [r10]\n"
        "and r10, 0\n"
        "mov rsi, [r11+r10]\n",
        8);
    uint8_t value = 0;
    for (int bit = 0; bit < 8; ++bit) {
        const std::string load = "mov r10b, BYTE PTR [r10]\ntest r10b, " + hex(1u << bit) + "\n";
        r.bit_cycles[bit] = run(nested_zero_check(load, h.body_on_taken_side), bit);
        if (r.bit_cycles[bit] >= threshold) value |= static_cast<uint8_t>(1u << bit);
    }
    if (r.control_cycles < threshold) r.value = value;
    return r;
}

}  // namespace

ReadResult arbitrary_read(uint64_t target, const MicroArchProfile& profile, const MemoryMap& map, uint32_t imul_count,
                          const RunSettings& settings) {
    return read_byte(target, profile, map, imul_count, settings);
}

ReadResult kernel_read(uint64_t kernel_address, const MicroArchProfile& profile, const MemoryMap& map,
                       uint32_t imul_count, const RunSettings& settings) {
    return read_byte(kernel_address, profile, map, imul_count, settings);
}

uint64_t flushing_channel_probe(const MicroArchProfile& profile, const FlushingConfig& config,
                                const RunSettings& settings) {
    validate(profile);
    std::string body;
    for (uint32_t i = 0; i < config.nops; ++i) body += "nop\n";
    if (config.with_hlt) body += "hlt\n";
    const bool taken_side = profile.static_forward == ForwardPrediction::Taken;
    const Executable exe(flushing_program(body_of(body), config.imul_count, taken_side, profile.has_rdtscp));
    const MemoryMap map;
    Core core(profile, map);
    PredictorState pred(profile.static_forward);
    if (config.correct_prediction) checked(core.run(exe, options_for(settings), &pred), "flushing warm-up");
    return feedback_time(checked(core.run(exe, options_for(settings), &pred), "flushing_channel_probe"));
}

GuardDemo guarded_conditional_demo(const MicroArchProfile& profile, bool adapt_guard, uint32_t imul_count,
                                   const RunSettings& settings) {
    validate(profile);
    const MemoryMap map = attack_map(MemoryMap{});
    Core core(profile, map);
    GuardDemo demo;
    demo.threshold = calibrate(core, kFeedbackAddress, settings).threshold;

    // The payload sits where the static predictor goes; the committed path
    // takes the other side.
    const bool forward_taken = profile.static_forward == ForwardPrediction::Taken;
    const uint8_t low = imul_chain_low_byte(imul_count);
    auto build = [&](bool guarded) {
        const bool guard_fall_through = guarded && !(adapt_guard && forward_taken);
        const bool guard_taken = guarded && adapt_guard && forward_taken;
        std::string s = ".init r9, 3\n.init r11, " + hex(kFeedbackAddress) + "\nclflush [r11]\ncpuid\n";
        s += imul_chain(imul_count);
        s += "cmp r9b, " + std::to_string(forward_taken ? static_cast<uint8_t>(low ^ 1) : low) + "\n";
        s += "je Equal\nFallThrough1:\n";
        if (guard_fall_through) s += "je FallThrough1\n";
        if (!forward_taken) s += "mov rsi, [r11]\n";
        s += "jmp Exit\nEqual:\n";
        if (guard_taken) s += "jne Equal\n";
        if (forward_taken) s += "mov rsi, [r11]\n";
        s += "jmp Exit\nExit:\n" + measurement_source(profile.has_rdtscp) + "hlt\n";
        return Executable(assemble(s));
    };
    auto run = [&](bool guarded) {
        GuardRun g;
        const RunResult r = core.run(build(guarded), options_for(settings));
        g.terminal = r.terminal;
        g.cycles = r.cycles;
        g.max_speculation_depth = r.max_speculation_depth;
        if (r.terminal == Terminal::Exited) {
            g.feedback_cycles = feedback_time(r);
            g.leak_observed = g.feedback_cycles < demo.threshold;
        }
        return g;
    };
    demo.unguarded = run(false);
    demo.guarded = run(true);
    return demo;
}

}  // namespace specsim
