#pragma once

// Simulated address space, cache residency, load buffer and miss buffer.

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "specsim/uarch.hpp"

namespace specsim {

inline constexpr uint64_t kLineSize = 64;
inline constexpr uint64_t kPage4K = 4096;
inline constexpr uint64_t kPage2M = 2ull << 20;

inline uint64_t line_of(uint64_t addr) { return addr & ~(kLineSize - 1); }

enum class Privilege : uint8_t { User, Kernel };

class SegFault : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct PageEntry {
    bool kernel = false;
    uint64_t content_seed = 0;
    std::optional<uint8_t> fill;  // constant content instead of seeded bytes
    bool operator==(const PageEntry&) const = default;
};

struct MappedPage {
    uint64_t base = 0;
    uint64_t size = 0;
    PageEntry entry;
    bool operator==(const MappedPage&) const = default;
};

/// Page-granular address space with 4KiB and 2MiB pages. Addresses without a
/// page are unmapped.
class MemoryMap {
public:
    void map_page(uint64_t base, uint64_t size, bool kernel, uint64_t seed = 0, std::optional<uint8_t> fill = {});
    /// Maps [start, end) with pages of `page_size`; page i gets seed `seed + i`.
    void map_range(uint64_t start, uint64_t end, uint64_t page_size, bool kernel, uint64_t seed = 0);

    std::optional<MappedPage> find(uint64_t addr) const;
    bool is_mapped(uint64_t addr) const { return find(addr).has_value(); }

    /// Content of a mapped byte; throws SegFault for unmapped addresses.
    uint8_t backing_byte(uint64_t addr) const;
    /// Little-endian read of `size` backing bytes.
    uint64_t backing_read(uint64_t addr, uint8_t size) const;

    /// All pages sorted by base.
    std::vector<MappedPage> pages() const;
    size_t page_count() const { return small_.size() + large_.size(); }

    bool operator==(const MemoryMap&) const = default;

private:
    std::unordered_map<uint64_t, PageEntry> small_;
    std::unordered_map<uint64_t, PageEntry> large_;
};

/// Layout records, one per line: `start,end,page_size,mapped,kernel[,seed]`
/// with hexadecimal addresses. Unmapped records are accepted and ignored.
MemoryMap parse_layout_records(std::string_view text);
std::string format_layout_records(const MemoryMap& map);

class CacheState {
public:
    bool resident(uint64_t addr) const { return lines_.count(line_of(addr)) != 0; }
    void insert(uint64_t addr) { lines_.insert(line_of(addr)); }
    void flush(uint64_t addr) { lines_.erase(line_of(addr)); }
    size_t size() const { return lines_.size(); }
    std::vector<uint64_t> lines() const;

private:
    std::unordered_set<uint64_t> lines_;
};

/// Latency of a committed (non-speculative) read; the line becomes resident.
/// Throws SegFault unless the address is mapped user memory.
uint32_t timed_read(CacheState& cache, const MemoryMap& map, uint64_t addr, const MicroArchProfile& profile);

class LoadBuffer {
public:
    explicit LoadBuffer(std::optional<uint32_t> capacity = {}) : capacity_(capacity) {}
    bool has_room() const { return !capacity_ || used_ < *capacity_; }
    void allocate();
    void release();
    size_t size() const { return used_; }
    std::optional<uint32_t> capacity() const { return capacity_; }

private:
    std::optional<uint32_t> capacity_;
    size_t used_ = 0;
};

/// Outstanding misses. Resolvable misses are merged per line; every faulting
/// access that stalls holds its own slot until it leaves the pipeline.
class MissBuffer {
public:
    explicit MissBuffer(uint32_t capacity = 32) : capacity_(capacity) {}
    bool has_room() const { return size() < capacity_; }
    size_t size() const { return fills_.size() + unresolvable_; }
    uint32_t capacity() const { return capacity_; }
    size_t unresolvable() const { return unresolvable_; }

    std::optional<uint64_t> pending_fill(uint64_t line) const;
    void start_fill(uint64_t line, uint64_t ready_cycle);
    void add_ref(uint64_t line);
    /// Drops one waiting load; returns true if the fill was cancelled.
    bool drop_ref(uint64_t line);
    /// Returns true if the fill was still pending (slot released now).
    bool complete_fill(uint64_t line);

    void hold_unresolvable();
    void release_unresolvable();

private:
    struct Fill {
        uint64_t ready_cycle;
        uint32_t refs;
    };
    uint32_t capacity_;
    std::unordered_map<uint64_t, Fill> fills_;
    size_t unresolvable_ = 0;
};

/// Committed memory contents: backing bytes plus an overlay of written pages.
class MemoryImage {
public:
    explicit MemoryImage(const MemoryMap& map) : map_(&map) {}
    uint64_t read(uint64_t addr, uint8_t size) const;
    void write(uint64_t addr, uint8_t size, uint64_t value);

private:
    uint8_t byte(uint64_t addr) const;
    const MemoryMap* map_;
    std::unordered_map<uint64_t, std::unique_ptr<std::array<uint8_t, kPage4K>>> pages_;
};

/// Latency jitter (uniform 0..jitter cycles on every load) and spurious
/// eviction of resident lines with the given probability per hit.
struct NoiseConfig {
    uint32_t jitter = 0;
    double evict_probability = 0.0;
    bool enabled() const { return jitter != 0 || evict_probability != 0.0; }
    bool operator==(const NoiseConfig&) const = default;
};

NoiseConfig default_noise();
/// "off", "default", or "jitter=<n>,evict=<p>" (either key may be omitted).
NoiseConfig parse_noise(std::string_view spec);
std::string to_string(const NoiseConfig& noise);

enum class AccessOutcome : uint8_t {
    Hit,
    MissIssued,
    MissMerged,
    GPFZero,         // mapped kernel page read from user mode: value 0, nothing cached
    PFZero,          // unmapped page read as 0; still holds a miss slot
    PFStall,         // never completes; holds a miss slot
    LoadBufferFull,
    MissBufferFull,
};

std::string_view to_string(AccessOutcome o);

struct AccessResult {
    AccessOutcome outcome = AccessOutcome::Hit;
    uint64_t ready_cycle = 0;
    uint64_t value = 0;
    bool faulted = false;            // committing this load is a segmentation fault
    bool holds_unresolvable = false;
    bool holds_fill = false;         // references a pending line fill
};

/// The memory side of one core.
class MemorySystem {
public:
    MemorySystem(const MemoryMap& map, const MicroArchProfile& profile, NoiseConfig noise, uint64_t seed);

    /// Issues a load. On success an LB entry is allocated; the *Full outcomes
    /// allocate nothing.
    AccessResult access(uint64_t addr, uint8_t size, Privilege privilege, uint64_t now);
    /// A load finishes executing: pending fills land in the cache. Returns
    /// true when a miss slot was released.
    bool complete_load(const AccessResult& r, uint64_t addr);
    /// A load leaves the pipeline (commit or flush). Returns true when a miss
    /// slot was released.
    bool retire_load(const AccessResult& r, uint64_t addr, bool completed);

    const MemoryMap& map() const { return *map_; }
    CacheState& cache() { return cache_; }
    const CacheState& cache() const { return cache_; }
    LoadBuffer& load_buffer() { return lb_; }
    const LoadBuffer& load_buffer() const { return lb_; }
    MissBuffer& miss_buffer() { return mb_; }
    const MissBuffer& miss_buffer() const { return mb_; }
    MemoryImage& image() { return image_; }
    const MemoryImage& image() const { return image_; }

private:
    uint32_t jitter();

    const MemoryMap* map_;
    const MicroArchProfile* profile_;
    NoiseConfig noise_;
    std::mt19937_64 rng_;
    CacheState cache_;
    LoadBuffer lb_;
    MissBuffer mb_;
    MemoryImage image_;
};

/// Deterministic backing content generator.
uint64_t splitmix64(uint64_t x);

}  // namespace specsim
