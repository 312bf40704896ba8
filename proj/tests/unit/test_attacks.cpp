#include <doctest.h>

#include <algorithm>
#include <random>

#include "specsim/attacks.hpp"
#include "specsim/error.hpp"

using namespace specsim;

namespace {

// 3^(count+1) mod 256 by square-and-multiply.
uint8_t pow3_low_byte(uint64_t exponent) {
    uint64_t base = 3, result = 1;
    while (exponent) {
        if (exponent & 1) result = result * base % 256;
        base = base * base % 256;
        exponent >>= 1;
    }
    return static_cast<uint8_t>(result);
}

MemoryMap one_kernel_page(uint64_t base) {
    MemoryMap m;
    m.map_page(base, kPage4K, true, 3);
    return m;
}

}  // namespace

TEST_CASE("imul chain low byte") {
    CHECK(imul_chain_low_byte(2048) == 3);
    CHECK(imul_chain_low_byte(256) == 3);
    CHECK(imul_chain_low_byte(0) == 3);
    CHECK(imul_chain_low_byte(1) == 9);
    for (uint32_t n = 0; n < 3000; n += 7) CHECK(imul_chain_low_byte(n) == pow3_low_byte(n + 1));
}

TEST_CASE("harness: the body runs only speculatively") {
    const auto p = builtin_profile("haswell");
    const Program body = assemble("mov rsi, [r11]\nadd rbx, 1");
    for (uint32_t n : {0u, 2048u}) {
        HarnessConfig c;
        c.imul_count = n;
        c.measure = false;
        const Program prog = build_speculation_harness(body, c);
        RunOptions o;
        o.record_events = true;
        const auto r = run(Executable(prog), p, reference_attack_map(), o);
        CHECK(r.terminal == Terminal::Exited);
        CHECK(r.registers[3] == 0);
        bool body_issued = false;
        for (const auto& e : r.events)
            if (e.kind == EventKind::Dispatch && e.uop == UopKind::Load) body_issued = true;
        // Without the chain the branch resolves before the body can issue.
        CHECK(body_issued == (n > 0));
    }
    HarnessConfig taken;
    taken.body_on_taken_side = true;
    const auto r = run(Executable(build_speculation_harness(body, taken)), builtin_profile("nehalem"),
                       reference_attack_map());
    CHECK(r.terminal == Terminal::Exited);
    CHECK(r.registers[3] == 0);
    CHECK(r.registers[14] < 100);
}

TEST_CASE("static predictor detection") {
    for (const auto& p : builtin_profiles()) {
        const auto d = detect_static_predictor(p);
        CAPTURE(p.name);
        CHECK(d.result == (p.static_forward == ForwardPrediction::Taken ? StaticPrediction::ForwardTaken
                                                                        : StaticPrediction::ForwardNotTaken));
        CHECK(std::min(d.fall_through_cycles, d.taken_cycles) < d.threshold);
        CHECK(std::max(d.fall_through_cycles, d.taken_cycles) >= d.threshold);
    }
    CHECK(detect_static_predictor(builtin_profile("haswell"), 0).result == StaticPrediction::Inconclusive);
    const auto noisy = detect_static_predictor(builtin_profile("skylake"), 2048, default_noise(), 4);
    CHECK(noisy.result == StaticPrediction::ForwardNotTaken);
}

TEST_CASE("calibration") {
    for (const char* name : {"haswell", "prescott"}) {
        const auto p = builtin_profile(name);
        const auto map = attack_map(MemoryMap{});
        Core core(p, map);
        const auto c = calibrate(core, kFeedbackAddress);
        CAPTURE(name);
        CHECK(c.hit_cycles < c.miss_cycles);
        CHECK(c.miss_cycles - c.hit_cycles == p.memory_latency - p.l1_hit_latency);
        CHECK(c.threshold > c.hit_cycles);
        CHECK(c.threshold < c.miss_cycles);
        CHECK(measure_access(core, kFeedbackAddress, true) == c.hit_cycles);
        CHECK(measure_access(core, kFeedbackAddress, false) == c.miss_cycles);
    }
    CHECK(measurement_source(true).find("rdtscp") != std::string::npos);
    CHECK(measurement_source(false).find("rdtscp") == std::string::npos);
}

TEST_CASE("probe config validation") {
    const auto p = builtin_profile("haswell");
    ProbeConfig c;
    CHECK_NOTHROW(validate(c, p));
    c.trials = 0;
    CHECK_THROWS_AS(validate(c, p), ConfigError);
    c = {};
    c.imul_count = 50;
    CHECK_THROWS_AS(validate(c, p), ConfigError);
    c = {};
    c.batch_imul_count = 60;
    CHECK_THROWS_AS(validate(c, p), ConfigError);
    c = {};
    c.technique = Technique::Exhaustion;
    c.exhaustion_loads = 10;
    CHECK_THROWS_AS(validate(c, p), ConfigError);
    c.exhaustion_loads = 40;
    CHECK_NOTHROW(validate(c, p));
    CHECK(exhaustion_range(p) == std::make_pair(32u, 71u));
    CHECK(exhaustion_range(builtin_profile("nehalem")) == std::make_pair(11u, 47u));
    CHECK_FALSE(exhaustion_range(builtin_profile("prescott")));
    CHECK(parse_technique("two-level") == Technique::TwoLevelSpeculation);
    CHECK(parse_technique("flushing") == Technique::FlushingChannel);
    CHECK_THROWS_AS(parse_technique("rowhammer"), ConfigError);
}

TEST_CASE("probing a mapped and an unmapped page") {
    const uint64_t mapped = 0xffffffff81000000ull;
    const uint64_t hole = 0xffffffff81200000ull;
    MemoryMap kernel;
    kernel.map_page(mapped, kPage2M, true, 1);
    struct Case {
        const char* profile;
        Technique technique;
        bool effective;
    };
    const Case cases[] = {
        {"haswell", Technique::DependentLoad, true},    {"haswell", Technique::TwoLevelSpeculation, true},
        {"haswell", Technique::Exhaustion, true},       {"haswell", Technique::FlushingChannel, true},
        {"skylake", Technique::DependentLoad, true},    {"skylake", Technique::FlushingChannel, false},
        {"sandybridge", Technique::DependentLoad, true}, {"nehalem", Technique::DependentLoad, false},
        {"nehalem", Technique::TwoLevelSpeculation, false}, {"nehalem", Technique::Exhaustion, true},
        {"prescott", Technique::DependentLoad, false},  {"prescott", Technique::TwoLevelSpeculation, false},
        {"prescott", Technique::Exhaustion, false},     {"prescott", Technique::FlushingChannel, false},
    };
    for (const auto& c : cases) {
        CAPTURE(c.profile);
        CAPTURE(to_string(c.technique));
        const auto p = builtin_profile(c.profile);
        ProbeConfig cfg;
        cfg.technique = c.technique;
        if (!c.effective) {
            CHECK_THROWS_AS(Prober(p, kernel, cfg), TechniqueIneffective);
            continue;
        }
        Prober prober(p, kernel, cfg);
        const auto yes = prober.probe(mapped);
        const auto no = prober.probe(hole);
        CHECK(yes.mapped);
        CHECK_FALSE(no.mapped);
        CHECK(yes.samples.size() == cfg.trials);
        const auto batch = prober.probe_batch({hole, mapped + 4096, hole + kPage2M, mapped});
        REQUIRE(batch.size() == 4);
        CHECK_FALSE(batch[0].mapped);
        CHECK(batch[1].mapped);
        CHECK_FALSE(batch[2].mapped);
        CHECK(batch[3].mapped);
        CHECK(prober.simulated_cycles() > 0);
    }
}

TEST_CASE("nehalem exhaustion works across its valid range") {
    const auto p = builtin_profile("nehalem");
    const uint64_t mapped = 0xffffffff81000000ull;
    MemoryMap kernel;
    kernel.map_page(mapped, kPage2M, true, 1);
    for (uint32_t loads : {11u, 20u, 47u}) {
        ProbeConfig cfg;
        cfg.technique = Technique::Exhaustion;
        cfg.exhaustion_loads = loads;
        Prober prober(p, kernel, cfg);
        CHECK(prober.probe(mapped).mapped);
        CHECK_FALSE(prober.probe(mapped + kPage2M).mapped);
    }
}

TEST_CASE("explicit thresholds do not change verdicts") {
    const auto p = builtin_profile("haswell");
    const uint64_t mapped = 0xffffffff81000000ull;
    MemoryMap kernel;
    kernel.map_page(mapped, kPage2M, true, 1);
    ProbeConfig cfg;
    const uint64_t auto_threshold = Prober(p, kernel, cfg).threshold();
    for (uint64_t t : {uint64_t{20}, auto_threshold, uint64_t{180}}) {
        cfg.threshold = t;
        Prober prober(p, kernel, cfg);
        CHECK(prober.threshold() == t);
        CHECK(prober.probe(mapped).mapped);
        CHECK_FALSE(prober.probe(mapped + kPage2M).mapped);
    }
}

TEST_CASE("buffer limits") {
    struct Row {
        const char* name;
        std::optional<uint32_t> unmapped;
        std::optional<uint32_t> mapped;
        bool universal;
    };
    const Row rows[] = {
        {"skylake", 40, 72, false},      {"haswell", 32, 72, false}, {"sandybridge", 32, 64, false},
        {"nehalem", 11, 48, false},      {"prescott", 19, 19, true},
    };
    for (const auto& r : rows) {
        CAPTURE(r.name);
        const auto b = recover_buffer_limits(builtin_profile(r.name));
        CHECK(b.unmapped_stall == r.unmapped);
        CHECK(b.mapped_stall == r.mapped);
        CHECK(b.universal_stall == r.universal);
    }
}

TEST_CASE("probe verdicts are sound over random layouts") {
    const auto p = builtin_profile("haswell");
    std::mt19937_64 rng(17);
    for (uint64_t seed = 0; seed < 8; ++seed) {
        const auto [layout, map] = randomize_linux(seed);
        ProbeConfig cfg;
        cfg.seed = seed;
        Prober prober(p, map, cfg);
        std::vector<uint64_t> addrs;
        for (int i = 0; i < 40; ++i) {
            const auto& range = layout.search_ranges[rng() % 2];
            addrs.push_back(range.start + (rng() % range.count()) * range.stride);
        }
        addrs.push_back(layout.image_base());
        addrs.push_back(layout.module_pages.front());
        for (auto a : addrs) CHECK(prober.probe(a).mapped == map.is_mapped(a));
        const auto batch = prober.probe_batch(addrs);
        for (size_t i = 0; i < addrs.size(); ++i) CHECK(batch[i].mapped == map.is_mapped(addrs[i]));
    }
}

TEST_CASE("an empty kernel map yields no detections") {
    const auto p = builtin_profile("haswell");
    Prober prober(p, MemoryMap{}, ProbeConfig{});
    std::vector<uint64_t> addrs;
    for (uint64_t i = 0; i < 64; ++i) addrs.push_back(linux_kaslr::kImageStart + i * kPage2M);
    for (const auto& v : prober.probe_batch(addrs)) CHECK_FALSE(v.mapped);
}

TEST_CASE("linux derandomization") {
    const auto p = builtin_profile("haswell");
    const auto [layout, map] = randomize_linux(5);
    ProbeConfig cfg;
    cfg.trials = 1;
    const auto r = derandomize(layout, map, p, cfg);
    CHECK(r.detected == ground_truth(layout));
    CHECK(r.false_positives == 0);
    CHECK(r.false_negatives == 0);
    CHECK(r.probes == 512 + 3072);
    CHECK(r.samples.size() == r.probes);
    CHECK_FALSE(r.stats.empty());
    for (const auto& s : r.stats) CHECK(s.min <= s.median);
}

TEST_CASE("windows derandomization locates the image") {
    const auto p = builtin_profile("skylake");
    WindowsLayoutOptions o;
    o.decoys = true;
    const auto [layout, map] = randomize_windows(8, o);
    ProbeConfig cfg;
    cfg.trials = 1;
    const auto r = derandomize(layout, map, p, cfg);
    CHECK(r.false_positives == 0);
    CHECK(r.false_negatives == 0);
    REQUIRE(r.located_image_base);
    CHECK(*r.located_image_base == layout.image_base());
}

TEST_CASE("fingerprint location") {
    const uint64_t s = kPage2M;
    CHECK(locate_fingerprint({0, s, 2 * s, 3 * s, 4 * s}, s, 5) == 0u);
    CHECK(locate_fingerprint({0, 10 * s, 11 * s, 12 * s, 13 * s, 14 * s, 20 * s}, s, 5) == 10 * s);
    CHECK_FALSE(locate_fingerprint({0, s, 2 * s, 3 * s, 4 * s, 5 * s}, s, 5));
    CHECK_FALSE(locate_fingerprint({0, s, 2 * s, 10 * s, 11 * s, 12 * s, 13 * s, 14 * s, 30 * s, 31 * s, 32 * s, 33 * s,
                                    34 * s},
                                   s, 5));
    CHECK_FALSE(locate_fingerprint({}, s, 5));
}

TEST_CASE("summaries") {
    const auto s = summarize("x", true, {5, 1, 9, 3});
    CHECK(s.count == 4);
    CHECK(s.min == 1);
    CHECK(s.median == doctest::Approx(4.0));
    CHECK(s.mean == doctest::Approx(4.5));
    CHECK(summarize("y", false, {}).count == 0);
}

TEST_CASE("reading user memory") {
    const auto p = builtin_profile("haswell");
    MemoryMap m;
    m.map_page(0x40000000, kPage4K, false, 0, 0x00);
    m.map_page(0x40001000, kPage4K, false, 0, 0xff);
    CHECK(arbitrary_read(0x40000010, p, m).value == uint8_t{0x00});
    CHECK(arbitrary_read(0x40001010, p, m).value == uint8_t{0xff});
    const auto full = attack_map(m);
    for (uint64_t off : {0ull, 1ull, 77ull, 4095ull}) {
        const uint64_t a = kUserDataAddress + off;
        CHECK(arbitrary_read(a, p, m).value == full.backing_byte(a));
    }
}

TEST_CASE("kernel reads see zeros on return-zero profiles") {
    const auto kernel = one_kernel_page(0xffffffff81000000ull);
    CHECK(kernel.backing_read(0xffffffff81000000ull, 8) != 0);
    for (const auto& p : builtin_profiles()) {
        if (p.gpf_behavior != FaultBehavior::ReturnZero) continue;
        CAPTURE(p.name);
        for (uint64_t off : {0ull, 9ull, 4000ull}) CHECK(kernel_read(0xffffffff81000000ull + off, p, kernel).value == uint8_t{0});
    }
    // Prescott stalls the faulting read so the control probe never caches.
    const auto r = kernel_read(0xffffffff81000000ull, builtin_profile("prescott"), kernel);
    CHECK_FALSE(r.value);
    CHECK(r.control_cycles >= 100);
}

TEST_CASE("kernel contents stay architecturally invisible") {
    const auto map = reference_attack_map();
    const auto p = builtin_profile("haswell");
    const auto r = run(Executable(assemble(".init r10, 0xffff800000000000\n"
                                           "mov rax, [r10]\n")),
                       p, map);
    CHECK(r.terminal == Terminal::SegFault);
    CHECK(r.registers[0] == 0);
}

TEST_CASE("flushing channel") {
    for (const auto& p : builtin_profiles()) {
        CAPTURE(p.name);
        FlushingConfig c;
        const uint64_t without = flushing_channel_probe(p, c);
        c.with_hlt = true;
        const uint64_t with = flushing_channel_probe(p, c);
        if (p.flush_per_uop_cost > 0) CHECK(with < without);
        else CHECK(with == without);
        c.correct_prediction = true;
        const uint64_t right_with = flushing_channel_probe(p, c);
        c.with_hlt = false;
        CHECK(flushing_channel_probe(p, c) == right_with);
    }
}

TEST_CASE("guarded conditional") {
    for (const auto& p : builtin_profiles()) {
        CAPTURE(p.name);
        const auto g = guarded_conditional_demo(p);
        CHECK(g.unguarded.leak_observed);
        CHECK_FALSE(g.guarded.leak_observed);
        CHECK(g.guarded.terminal == Terminal::Exited);
        CHECK(g.unguarded.terminal == Terminal::Exited);
    }
    // A fall-through guard does not cover a forward-taken predictor.
    const auto nehalem = guarded_conditional_demo(builtin_profile("nehalem"), false);
    CHECK(nehalem.guarded.leak_observed);
}
