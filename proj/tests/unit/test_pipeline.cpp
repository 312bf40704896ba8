#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <sstream>

#include "program_gen.hpp"
#include "reference.hpp"
#include "specsim/attacks.hpp"
#include "specsim/pipeline.hpp"

using namespace specsim;

namespace {

std::string corpus(const std::string& name) {
    std::ifstream in(std::string(SPECSIM_CORPUS_DIR) + "/" + name);
    REQUIRE(in.good());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

RunResult run_source(const std::string& src, const MicroArchProfile& p, RunOptions o = {}) {
    o.record_events = true;
    return run(Executable(assemble(src)), p, reference_attack_map(), o);
}

const Event* first(const RunResult& r, EventKind k, std::optional<uint32_t> pc = {}) {
    for (const auto& e : r.events)
        if (e.kind == k && (!pc || e.pc == *pc)) return &e;
    return nullptr;
}

// Highest number of micro-ops in flight, rebuilt from the event log.
size_t max_occupancy(const RunResult& r) {
    size_t now = 0, peak = 0;
    for (const auto& e : r.events) {
        if (e.kind == EventKind::Fetch) peak = std::max(peak, ++now);
        if (e.kind == EventKind::Commit || e.kind == EventKind::Flush) --now;
    }
    return peak;
}

}  // namespace

TEST_CASE("empty program exits at cycle 0") {
    const auto r = run(Executable(Program{}), builtin_profile("haswell"), MemoryMap{});
    CHECK(r.terminal == Terminal::Exited);
    CHECK(r.cycles == 0);
    CHECK(r.flushed == 0);
    CHECK(r.committed == 0);
}

TEST_CASE("single uncached load") {
    const auto p = builtin_profile("haswell");
    const auto r = run_source(".init r11, 0x10000000\nmov rsi, [r11]", p);
    CHECK(r.terminal == Terminal::Exited);
    CHECK(r.cycles >= p.memory_latency);
    CHECK(r.resident(kFeedbackAddress));
    CHECK(r.registers[6] == reference_attack_map().backing_read(kFeedbackAddress, 8));
}

TEST_CASE("listing 1: the body runs only speculatively") {
    const auto p = builtin_profile("haswell");
    const Program prog = assemble(corpus("listing1.asm"));
    RunOptions o;
    o.record_events = true;
    const auto r = run(Executable(prog), p, reference_attack_map(), o);
    CHECK(r.terminal == Terminal::Exited);
    CHECK(r.flushed > 0);
    CHECK(r.mispredictions == 1);
    // Committed path is C1True: rdx incremented, rbx untouched.
    CHECK(r.registers[2] == 1);
    CHECK(r.registers[3] == 0);
    const uint32_t body = prog.labels.at("C1True") - 3;  // add rbx, 1
    const Event* fetch = first(r, EventKind::Fetch, body);
    REQUIRE(fetch != nullptr);
    CHECK(fetch->depth == 1);
    CHECK(first(r, EventKind::Flush, body) != nullptr);
    CHECK(first(r, EventKind::Commit, body) == nullptr);
    // The speculative load reached memory, so its line stays cached.
    CHECK(r.resident(kFeedbackAddress));
}

TEST_CASE("an imul chain delays branch resolution") {
    const auto p = builtin_profile("haswell");
    for (uint32_t n : {0u, 1u, 10u, 100u, 500u}) {
        HarnessConfig c;
        c.imul_count = n;
        c.measure = false;
        const Program prog = build_speculation_harness(assemble("nop"), c);
        RunOptions o;
        o.record_events = true;
        const auto r = run(Executable(prog), p, reference_attack_map(), o);
        uint32_t branch = 0;
        for (uint32_t i = 0; i < prog.ops.size(); ++i)
            if (prog.ops[i].opcode == Opcode::Jcc) {
                branch = i;
                break;
            }
        const Event* resolved = first(r, EventKind::Mispredict, branch);
        if (!resolved) resolved = first(r, EventKind::Resolve, branch);
        REQUIRE(resolved != nullptr);
        CHECK(resolved->cycle >= uint64_t{n} * p.latency_of(UopKind::AluMul));
    }
}

TEST_CASE("flush cost") {
    const auto p = builtin_profile("haswell");
    // Nothing but a halt on the wrong path: the flush costs the base only.
    const auto r = run_source(".init r9, 3\nimul r9, 3\ncmp r9, 9\nje T\nhlt\nT: nop", p);
    const Event* m = first(r, EventKind::Mispredict);
    REQUIRE(m != nullptr);
    CHECK(m->aux == p.flush_base_cost);

    // 128 nops with and without a trailing halt.
    auto block = [](bool hlt) {
        std::string s = ".init r9, 3\n";
        for (int i = 0; i < 256; ++i) s += "imul r9, 3\n";
        s += "cmp r9b, 3\nje T\n";
        for (int i = 0; i < 128; ++i) s += "nop\n";
        if (hlt) s += "hlt\n";
        s += "T: nop\n";
        return s;
    };
    const Event* without = nullptr;
    const Event* with = nullptr;
    const auto a = run_source(block(false), p);
    const auto b = run_source(block(true), p);
    without = first(a, EventKind::Mispredict);
    with = first(b, EventKind::Mispredict);
    REQUIRE(without);
    REQUIRE(with);
    CHECK(with->aux < without->aux);
    CHECK(b.cycles < a.cycles);
    CHECK(with->aux == p.flush_base_cost + 128 * p.flush_per_uop_cost);
}

TEST_CASE("listing 2: the speculative load leaves a trace the in-order machine does not") {
    const auto p = builtin_profile("haswell");
    const std::string src = corpus("listing2.asm");
    const Program prog = assemble(src);
    const auto r = run(Executable(prog), p, reference_attack_map());
    CHECK(reference::compare(reference::interpret(prog, reference_attack_map()), r).empty());
    // The measured load was a hit.
    CHECK(r.registers[14] < 100);
    // Without the measurement, only the speculating machine has the line cached.
    const Program bare = assemble(src.substr(0, src.find("Exit:")) + "Exit:\n    hlt\n");
    const auto ooo = run(Executable(bare), p, reference_attack_map());
    const auto ref = reference::interpret(bare, reference_attack_map());
    CHECK(ooo.resident(kFeedbackAddress));
    CHECK_FALSE(ref.resident_lines.count(kFeedbackAddress));
}

TEST_CASE("listing 5 nests two speculation levels") {
    const auto r = run_source(corpus("listing5.asm"), builtin_profile("haswell"));
    CHECK(r.max_speculation_depth == 2);
    CHECK(r.terminal == Terminal::Exited);
}

TEST_CASE("an inner flush keeps the outer speculation") {
    const Program prog = assemble(corpus("listing6.asm"));
    RunOptions o;
    o.record_events = true;
    const auto r = run(Executable(prog), builtin_profile("haswell"), reference_attack_map(), o);
    std::vector<const Event*> mispredicts;
    for (const auto& e : r.events)
        if (e.kind == EventKind::Mispredict) mispredicts.push_back(&e);
    REQUIRE(mispredicts.size() == 2);
    const uint32_t outer = prog.labels.at("C1False") - 1;
    const uint32_t c2true = prog.labels.at("C2True");
    CHECK(mispredicts[0]->pc != outer);
    CHECK(mispredicts[1]->pc == outer);
    // After the inner flush the taken side is fetched, still under the outer branch.
    bool refetched = false;
    for (const auto& e : r.events)
        if (e.kind == EventKind::Fetch && e.pc == c2true && e.cycle >= mispredicts[0]->cycle) {
            refetched = true;
            CHECK(e.depth == 1);
        }
    CHECK(refetched);
    CHECK(r.resident(kFeedbackAddress));
}

TEST_CASE("listing 9: the guard keeps the fall-through path spinning") {
    for (const char* name : {"haswell", "skylake", "sandybridge"}) {
        const auto p = builtin_profile(name);
        RunOptions o;
        o.cycle_budget = 100'000;
        const auto r = run_source(corpus("listing9.asm"), p, o);
        CHECK(r.terminal == Terminal::Exited);
        CHECK(r.registers[2] == 1);
        // The payload load never ran, so the measured load missed.
        CHECK(r.registers[14] >= p.memory_latency);
    }
}

TEST_CASE("kernel reads never cache the kernel line") {
    for (const char* listing : {"listing6.asm", "listing7.asm"}) {
        const auto r = run_source(corpus(listing), builtin_profile("haswell"));
        CHECK_FALSE(r.resident(kReferenceMappedPage));
        CHECK(r.registers[14] < 100);
    }
}

TEST_CASE("committed faults and budgets") {
    const auto p = builtin_profile("haswell");
    const auto seg = run_source(".init r13, 0xffff800000000000\nnop\nmov rax, [r13]\nnop", p);
    CHECK(seg.terminal == Terminal::SegFault);
    CHECK(seg.fault_pc == 1u);
    CHECK(seg.committed == 1);
    const auto unmapped = run_source(".init r13, 0x1234000\nmov rax, [r13]", p);
    CHECK(unmapped.terminal == Terminal::SegFault);
    RunOptions o;
    o.cycle_budget = 1000;
    const auto spin = run_source("L: jmp L", p, o);
    CHECK(spin.terminal == Terminal::CycleBudgetExceeded);
    CHECK(spin.cycles == 1000);
    CHECK(first(spin, EventKind::Mispredict) == nullptr);
}

TEST_CASE("kernel privilege reads kernel memory") {
    RunOptions o;
    o.privilege = Privilege::Kernel;
    const auto r = run_source(".init r13, 0xffff800000000000\nmov rax, [r13]", builtin_profile("haswell"), o);
    CHECK(r.terminal == Terminal::Exited);
    CHECK(r.registers[0] == reference_attack_map().backing_read(kReferenceMappedPage, 8));
}

TEST_CASE("timestamps") {
    const auto p = builtin_profile("haswell");
    const auto r = run_source(corpus("listing8.asm"), p);
    CHECK(r.registers[13] >= p.memory_latency);
    const auto a = run_source("rdtsc\nmov rbx, rax\nnop\nnop\ncpuid\nrdtsc", p);
    CHECK(a.registers[0] > a.registers[3]);
}

TEST_CASE("run options: registers, preload and warm lines") {
    const auto p = builtin_profile("haswell");
    RunOptions o;
    o.registers = {{11, kFeedbackAddress}};
    o.preload_qwords = {{kFeedbackAddress, 0x1234}};
    o.warm_lines = {kFeedbackAddress};
    const auto r = run_source("mov rsi, [r11]", p, o);
    CHECK(r.registers[6] == 0x1234);
    CHECK(r.cycles < p.memory_latency);
}

TEST_CASE("determinism") {
    const auto p = builtin_profile("skylake");
    RunOptions o;
    o.record_events = true;
    o.noise = default_noise();
    o.seed = 99;
    const Executable exe(assemble(corpus("listing5.asm")));
    const auto a = run(exe, p, reference_attack_map(), o);
    const auto b = run(exe, p, reference_attack_map(), o);
    CHECK(a.events == b.events);
    CHECK(a.registers == b.registers);
    CHECK(a.cycles == b.cycles);
    CHECK(a.resident_lines == b.resident_lines);
    const MemoryMap map = reference_attack_map();
    Core core(p, map);
    const auto c = core.run(exe, o);
    const auto d = core.run(exe, o);
    CHECK(c.events == a.events);
    CHECK(d.events == a.events);
}

TEST_CASE("event log export") {
    const auto r = run_source("nop\nhlt", builtin_profile("haswell"));
    const std::string jsonl = events_to_jsonl(r.events);
    CHECK(std::count(jsonl.begin(), jsonl.end(), '\n') == static_cast<long>(r.events.size()));
    CHECK(jsonl.find("\"event\":\"commit\"") != std::string::npos);
    CHECK(jsonl.find("\"event\":\"terminate\"") != std::string::npos);
}

TEST_CASE("property: committed state equals the in-order interpreter") {
    const auto map = reference_attack_map();
    const auto profiles = builtin_profiles();
    size_t faults = 0, mispredicted = 0;
    for (uint64_t seed = 0; seed < 150; ++seed) {
        const std::string src = gen::random_program(seed);
        const Program prog = assemble(src);
        const auto expected = reference::interpret(prog, map);
        REQUIRE_MESSAGE(expected.outcome != reference::Outcome::Indeterminate, "seed " << seed);
        faults += expected.outcome == reference::Outcome::SegFault;
        const Executable exe(prog);
        for (const auto& p : profiles) {
            RunOptions o;
            o.record_events = true;
            const auto actual = run(exe, p, map, o);
            mispredicted += actual.mispredictions > 0;
            const std::string diff = reference::compare(expected, actual);
            CHECK_MESSAGE(diff.empty(), "seed " << seed << " on " << p.name << ": " << diff);

            // Commits follow the architectural path in order.
            std::vector<uint32_t> committed;
            for (const auto& e : actual.events)
                if (e.kind == EventKind::Commit) committed.push_back(e.pc);
            std::vector<uint32_t> expected_pcs;
            for (auto pc : expected.trace)
                for (size_t i = 0; i < decode(prog.ops[pc]).size(); ++i) expected_pcs.push_back(pc);
            CHECK(committed == expected_pcs);

            CHECK(max_occupancy(actual) <= p.rob_entries);
            for (const auto& e : actual.events)
                if (e.kind == EventKind::Mispredict) CHECK(prog.ops[e.pc].opcode == Opcode::Jcc);
        }
    }
    // The generator exercises both faults and mispredictions.
    CHECK(faults > 0);
    CHECK(mispredicted > 100);
}

TEST_CASE("property: the corpus matches the in-order interpreter on every profile") {
    const auto map = reference_attack_map();
    for (int i = 1; i <= 9; ++i) {
        const Program prog = assemble(corpus("listing" + std::to_string(i) + ".asm"));
        const auto expected = reference::interpret(prog, map);
        for (const auto& p : builtin_profiles()) {
            const auto diff = reference::compare(expected, run(Executable(prog), p, map));
            CHECK_MESSAGE(diff.empty(), "listing " << i << " on " << p.name << ": " << diff);
        }
    }
}
