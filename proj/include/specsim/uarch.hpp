#pragma once

// Microarchitecture profiles and the branch predictor.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "specsim/error.hpp"
#include "specsim/isa.hpp"

namespace specsim {

enum class ForwardPrediction : uint8_t { NotTaken, Taken };
enum class FaultBehavior : uint8_t { ReturnZero, Stall };
enum class BranchDirection : uint8_t { Forward, Backward };

struct MicroArchProfile {
    std::string name;
    uint32_t rob_entries = 192;
    std::optional<uint32_t> load_buffer_entries;  // nullopt: no load-buffer limit
    uint32_t parallel_miss_slots = 32;
    ForwardPrediction static_forward = ForwardPrediction::NotTaken;
    FaultBehavior gpf_behavior = FaultBehavior::ReturnZero;
    FaultBehavior pf_behavior = FaultBehavior::Stall;
    bool has_rdtscp = true;

    uint32_t fetch_width = 4;
    uint32_t commit_width = 4;

    /// Execution latency per micro-op kind. Loads use the memory latencies below.
    std::array<uint32_t, kUopKindCount> latency{};
    uint32_t l1_hit_latency = 4;
    uint32_t memory_latency = 200;

    uint32_t flush_base_cost = 5;
    uint32_t flush_per_uop_cost = 1;
    /// Added to the flush cost when the flushed region holds a load that read
    /// a mapped kernel page as zero. May be negative.
    int32_t flush_fault_modifier = 0;

    uint32_t ports = 7;
    /// Eligible port ids per micro-op kind.
    std::array<std::vector<uint32_t>, kUopKindCount> port_map{};

    uint32_t latency_of(UopKind k) const { return latency[static_cast<size_t>(k)]; }
    const std::vector<uint32_t>& ports_of(UopKind k) const { return port_map[static_cast<size_t>(k)]; }

    bool operator==(const MicroArchProfile&) const = default;
};

/// Skylake, Haswell, SandyBridge, Nehalem, Prescott.
std::vector<MicroArchProfile> builtin_profiles();

/// Case-insensitive lookup among the built-ins; throws ConfigError.
MicroArchProfile builtin_profile(std::string_view name);

/// Default latency/port tables shared by the built-ins.
MicroArchProfile base_profile(std::string name);

/// Throws ConfigError when an invariant is violated.
void validate(const MicroArchProfile& profile);

/// `[Name]` sections of `key = value` lines.
std::string format_profiles(const std::vector<MicroArchProfile>& profiles);
std::vector<MicroArchProfile> parse_profiles(std::string_view text);

/// Resolves a built-in name or, failing that, a profile file holding exactly one profile.
MicroArchProfile load_profile(const std::string& name_or_path);

std::string_view to_string(ForwardPrediction p);
std::string_view to_string(FaultBehavior b);

/// Static policy plus untagged, unbounded 2-bit counters keyed by branch address.
class PredictorState {
public:
    explicit PredictorState(ForwardPrediction forward = ForwardPrediction::NotTaken) : forward_(forward) {}

    bool static_prediction(BranchDirection direction) const {
        return direction == BranchDirection::Backward || forward_ == ForwardPrediction::Taken;
    }
    bool predict(uint64_t address, BranchDirection direction) const;
    void train(uint64_t address, BranchDirection direction, bool taken);

    bool seen(uint64_t address) const { return table_.count(address) != 0; }
    std::optional<uint8_t> counter(uint64_t address) const;
    size_t size() const { return table_.size(); }
    ForwardPrediction forward_policy() const { return forward_; }

private:
    ForwardPrediction forward_;
    std::unordered_map<uint64_t, uint8_t> table_;
};

}  // namespace specsim
