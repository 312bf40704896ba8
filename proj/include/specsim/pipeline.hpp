#pragma once

// Out-of-order speculative core.

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "specsim/isa.hpp"
#include "specsim/memory.hpp"
#include "specsim/uarch.hpp"

namespace specsim {

enum class Terminal : uint8_t { Exited, SegFault, CycleBudgetExceeded };
std::string_view to_string(Terminal t);

enum class EventKind : uint8_t {
    Fetch,       // entered the ROB; depth > 0 means fetched speculatively
    Dispatch,    // started executing; aux = AccessOutcome for loads
    Complete,
    Commit,
    Predict,     // conditional branch predicted; aux = predicted taken
    Resolve,     // prediction confirmed; aux = taken
    Mispredict,  // aux = flush penalty in cycles
    Flush,       // one squashed micro-op
    Terminate,   // aux = Terminal
};
std::string_view to_string(EventKind k);

struct Event {
    uint64_t cycle = 0;
    EventKind kind = EventKind::Fetch;
    uint32_t pc = 0;
    UopKind uop = UopKind::NopOp;
    uint32_t depth = 0;
    int64_t aux = 0;
    bool operator==(const Event&) const = default;
};

/// One JSON object per line.
std::string events_to_jsonl(const std::vector<Event>& events);

struct StoreRecord {
    uint64_t addr = 0;
    uint8_t size = 8;
    uint64_t value = 0;
    bool operator==(const StoreRecord&) const = default;
};

struct RunResult {
    Terminal terminal = Terminal::Exited;
    std::array<uint64_t, kNumGpr> registers{};
    uint64_t flags = 0;  // ZF
    uint64_t cycles = 0;
    uint64_t committed = 0;
    uint64_t flushed = 0;
    uint64_t issued = 0;
    uint32_t max_speculation_depth = 0;
    uint64_t mispredictions = 0;
    std::optional<uint32_t> fault_pc;
    std::vector<uint64_t> resident_lines;  // sorted
    std::vector<StoreRecord> stores;        // committed, in program order
    std::vector<Event> events;

    bool resident(uint64_t addr) const;
};

struct RunOptions {
    uint64_t cycle_budget = 5'000'000;
    uint64_t seed = 0;
    NoiseConfig noise;
    bool record_events = false;
    Privilege privilege = Privilege::User;
    /// Applied after the program's .init directives.
    std::vector<std::pair<RegId, uint64_t>> registers;
    /// Committed memory contents before the run (user pages only).
    std::vector<std::pair<uint64_t, uint64_t>> preload_qwords;
    /// Lines resident before the run.
    std::vector<uint64_t> warm_lines;
};

/// A reusable core bound to one profile and one memory map. Each run starts
/// from an empty pipeline and cache; the predictor is fresh unless supplied.
class Core {
public:
    Core(const MicroArchProfile& profile, const MemoryMap& map);
    ~Core();
    Core(const Core&) = delete;
    Core& operator=(const Core&) = delete;

    RunResult run(const Executable& exe, const RunOptions& options = {}, PredictorState* predictor = nullptr);

    const MicroArchProfile& profile() const { return profile_; }

private:
    struct Impl;
    MicroArchProfile profile_;
    const MemoryMap* map_;
    std::unique_ptr<Impl> impl_;
};

RunResult run(const Executable& exe, const MicroArchProfile& profile, const MemoryMap& map,
              const RunOptions& options = {}, PredictorState* predictor = nullptr);

}  // namespace specsim
