#pragma once

// Attack programs, the timestamp measurement protocol, kernel address
// probing and KASLR derandomization.

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "specsim/isa.hpp"
#include "specsim/memory.hpp"
#include "specsim/oslayout.hpp"
#include "specsim/pipeline.hpp"
#include "specsim/uarch.hpp"

namespace specsim {

/// User pages every attack program relies on. attack_map() maps them.
inline constexpr uint64_t kFeedbackAddress = 0x10000000ull;  // U
inline constexpr uint64_t kTableAddress = 0x20000000ull;     // batch probe addresses
inline constexpr uint64_t kTablePages = 16;
inline constexpr uint64_t kUserDataAddress = 0x30000000ull;  // seeded user data
inline constexpr uint64_t kUserDataPages = 16;

/// Reference kernel pages used to check a technique before trusting it.
inline constexpr uint64_t kReferenceMappedPage = 0xffff800000000000ull;
inline constexpr uint64_t kReferenceUnmappedPage = 0xffff800000200000ull;

/// Copy of `map` with the feedback, table and data pages added as user memory.
MemoryMap attack_map(const MemoryMap& map);
/// attack_map() of a single mapped 4KiB kernel page at kReferenceMappedPage.
MemoryMap reference_attack_map();

enum class Technique : uint8_t { TwoLevelSpeculation, DependentLoad, Exhaustion, FlushingChannel };
std::string_view to_string(Technique t);
/// two-level | dependent-load | exhaustion | flushing
Technique parse_technique(std::string_view name);

/// Low byte of 3^(count+1), the value r9b holds after `count` multiplications.
uint8_t imul_chain_low_byte(uint32_t count);

struct HarnessConfig {
    uint32_t imul_count = 2048;
    /// Put the body on the taken side of the branch (forward-taken predictors).
    bool body_on_taken_side = false;
    uint64_t feedback_address = kFeedbackAddress;
    bool flush_feedback = true;
    /// Append the timestamp measurement of [r11] into r14.
    bool measure = true;
    bool has_rdtscp = true;
};

/// Wraps `body` into an imul-delayed conditional branch whose committed
/// direction skips it. A branch in `body` to index body.ops.size() leaves the
/// body. r9 starts at 3 and r11 holds the feedback address.
Program build_speculation_harness(const Program& body, const HarnessConfig& config);

/// The harness configuration a profile needs: body side from its static
/// forward policy (when `adapt` is set) and the timestamp fallback.
HarnessConfig harness_for(const MicroArchProfile& profile, uint32_t imul_count, bool adapt = true);

/// Timestamp measurement of one load of [r11]; result in r14.
std::string measurement_source(bool has_rdtscp);

// ---------------------------------------------------------------------------
// Static predictor detection

enum class StaticPrediction : uint8_t { ForwardNotTaken, ForwardTaken, Inconclusive };
std::string_view to_string(StaticPrediction p);

struct PredictorDetection {
    StaticPrediction result = StaticPrediction::Inconclusive;
    uint64_t fall_through_cycles = 0;  // feedback access time, body on fall-through
    uint64_t taken_cycles = 0;         // feedback access time, body on taken side
    uint64_t threshold = 0;
};

PredictorDetection detect_static_predictor(const MicroArchProfile& profile, uint32_t imul_count = 2048,
                                           const NoiseConfig& noise = {}, uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Timing

struct RunSettings {
    NoiseConfig noise;
    uint64_t seed = 0;
    uint64_t cycle_budget = 5'000'000;
};

/// Timestamp delta around one load of `u` (a user address of the core's map).
/// The line is resident beforehand when `cached` is set.
uint64_t measure_access(Core& core, uint64_t u, bool cached, const RunSettings& settings = {});

struct Calibration {
    uint64_t hit_cycles = 0;   // minimum over the calibration runs
    uint64_t miss_cycles = 0;
    uint64_t threshold = 0;    // midpoint
};

Calibration calibrate(Core& core, uint64_t u, const RunSettings& settings = {}, uint32_t runs = 8);

// ---------------------------------------------------------------------------
// Kernel address probing

struct ProbeConfig {
    Technique technique = Technique::DependentLoad;
    uint32_t imul_count = 2048;
    /// imul chain per probe in batch programs (one program, many addresses).
    uint32_t batch_imul_count = 96;
    uint32_t trials = 2;
    /// 0 selects the midpoint of the valid range of the profile.
    uint32_t exhaustion_loads = 0;
    uint64_t feedback_address = kFeedbackAddress;
    std::optional<uint64_t> threshold;
    bool adapt_static_prediction = true;
    NoiseConfig noise;
    uint64_t seed = 0;
    uint64_t cycle_budget = 5'000'000;
};

/// Throws ConfigError for settings no profile could use.
void validate(const ProbeConfig& config, const MicroArchProfile& profile);

/// The profile cannot tell mapped from unmapped kernel pages with a technique.
class TechniqueIneffective : public std::runtime_error {
public:
    TechniqueIneffective(Technique technique, const std::string& profile, const std::string& why);
    Technique technique() const { return technique_; }

private:
    Technique technique_;
};

struct TimingSample {
    uint64_t address = 0;
    uint32_t trial = 0;
    uint64_t cycles = 0;
    bool cached = false;  // below threshold
    bool operator==(const TimingSample&) const = default;
};

struct ProbeVerdict {
    uint64_t address = 0;
    bool mapped = false;
    std::vector<TimingSample> samples;
};

/// Valid exhaustion load counts for a profile, or nullopt without a load buffer.
std::optional<std::pair<uint32_t, uint32_t>> exhaustion_range(const MicroArchProfile& profile);

/// Probes kernel addresses with one technique. Construction calibrates the
/// timing threshold and checks the technique against a reference map with one
/// mapped and one unmapped kernel page; it throws TechniqueIneffective when
/// the two look alike.
class Prober {
public:
    Prober(const MicroArchProfile& profile, const MemoryMap& kernel_map, ProbeConfig config);
    ~Prober();
    Prober(const Prober&) = delete;
    Prober& operator=(const Prober&) = delete;

    /// One program run per trial, fresh predictor each.
    ProbeVerdict probe(uint64_t address);
    /// One program probing every address in order, fresh predictor per chunk
    /// (single runs for the flushing channel).
    std::vector<ProbeVerdict> probe_batch(const std::vector<uint64_t>& addresses);

    const Calibration& calibration() const;
    uint64_t threshold() const;
    const ProbeConfig& config() const;
    uint64_t simulated_cycles() const;
    const Program& probe_program() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

ProbeVerdict probe_address(uint64_t address, const ProbeConfig& config, const MicroArchProfile& profile,
                           const MemoryMap& kernel_map);

/// Smallest count of loads of a kernel page that keeps a following feedback
/// load from caching, searched by bisection over [0, limit].
std::optional<uint32_t> exhaustion_threshold(const MicroArchProfile& profile, bool mapped, uint32_t limit = 160,
                                             uint32_t imul_count = 2048);

struct BufferLimits {
    std::optional<uint32_t> unmapped_stall;  // parallel loads
    std::optional<uint32_t> mapped_stall;    // load-buffer entries
    /// Both faults stall after the same count: no load buffer limit is visible.
    bool universal_stall = false;
};

BufferLimits recover_buffer_limits(const MicroArchProfile& profile, uint32_t imul_count = 2048);

// ---------------------------------------------------------------------------
// Derandomization

struct RangeStats {
    std::string name;
    bool mapped = false;  // verdict group
    uint64_t count = 0;
    uint64_t min = 0;
    double median = 0;
    double mean = 0;
};

struct DerandomizationReport {
    OsKind os = OsKind::Linux;
    std::string profile;
    Technique technique = Technique::DependentLoad;
    uint32_t trials = 0;
    uint64_t layout_seed = 0;
    uint64_t probe_seed = 0;
    uint64_t threshold = 0;
    uint64_t probes = 0;
    std::vector<uint64_t> detected;      // sorted
    std::vector<uint64_t> ground_truth;  // sorted
    uint64_t false_positives = 0;
    uint64_t false_negatives = 0;
    /// Windows: start of the single run of image-sized consecutive detections.
    std::optional<uint64_t> located_image_base;
    uint64_t simulated_cycles = 0;
    double wall_seconds = 0;
    std::vector<RangeStats> stats;
    std::vector<TimingSample> samples;
};

/// Scans every search range of the layout. Linux probes one address per
/// program run; Windows probes in batch and applies the image fingerprint.
DerandomizationReport derandomize(const KaslrLayout& layout, const MemoryMap& kernel_map,
                                  const MicroArchProfile& profile, const ProbeConfig& config);

/// Start of the unique run of exactly `run_length` consecutive slots.
std::optional<uint64_t> locate_fingerprint(const std::vector<uint64_t>& detected, uint64_t stride,
                                           uint32_t run_length);

/// Order statistics of a sample set; median is the mean of the middle pair.
RangeStats summarize(std::string name, bool mapped, std::vector<uint64_t> cycles);

// ---------------------------------------------------------------------------
// Memory reads

struct ReadResult {
    std::optional<uint8_t> value;  // nullopt: the target read never completed
    std::array<uint64_t, 8> bit_cycles{};
    uint64_t control_cycles = 0;
};

/// Reads the byte at `target` one bit per nested-speculation probe; a bit is
/// 0 when the feedback line got cached. A control probe detects stalled reads.
ReadResult arbitrary_read(uint64_t target, const MicroArchProfile& profile, const MemoryMap& map,
                          uint32_t imul_count = 2048, const RunSettings& settings = {});

/// arbitrary_read of a kernel address.
ReadResult kernel_read(uint64_t kernel_address, const MicroArchProfile& profile, const MemoryMap& map,
                       uint32_t imul_count = 2048, const RunSettings& settings = {});

// ---------------------------------------------------------------------------
// Flushing feedback and the guard mitigation

struct FlushingConfig {
    bool with_hlt = false;
    /// Train the predictor on one run first so the branch is predicted right.
    bool correct_prediction = false;
    uint32_t imul_count = 2048;
    uint32_t nops = 128;
};

/// Cycles of the whole speculated block, timestamps taken around it.
uint64_t flushing_channel_probe(const MicroArchProfile& profile, const FlushingConfig& config,
                                const RunSettings& settings = {});

struct GuardRun {
    bool leak_observed = false;
    uint64_t feedback_cycles = 0;
    Terminal terminal = Terminal::Exited;
    uint64_t cycles = 0;
    uint32_t max_speculation_depth = 0;
};

struct GuardDemo {
    GuardRun unguarded;
    GuardRun guarded;
    uint64_t threshold = 0;
};

/// The payload (a load of the feedback line) sits on the side the static
/// predictor speculates into. The guard is a never-taken backward branch on
/// the fall-through side, or on the taken side when `adapt_guard` is set for a
/// forward-taken profile.
GuardDemo guarded_conditional_demo(const MicroArchProfile& profile, bool adapt_guard = true,
                                   uint32_t imul_count = 2048, const RunSettings& settings = {});

}  // namespace specsim
