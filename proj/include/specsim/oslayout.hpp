#pragma once

// Randomized Linux and Windows kernel layouts.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "specsim/memory.hpp"

namespace specsim {

enum class OsKind : uint8_t { Linux, Windows };
std::string_view to_string(OsKind os);
OsKind parse_os(std::string_view name);

namespace linux_kaslr {
inline constexpr uint64_t kImageStart = 0xffffffff80000000ull;
inline constexpr uint64_t kImageEnd = 0xffffffffc0000000ull;
inline constexpr uint64_t kImageSlots = (kImageEnd - kImageStart) / kPage2M;  // 512
inline constexpr uint64_t kModuleStart = 0xffffffffc0000000ull;
inline constexpr uint64_t kModuleWindowEnd = 0xffffffffc0c00000ull;
inline constexpr uint32_t kMaxModuleOffset = 1024;
inline constexpr uint32_t kDefaultImagePages = 11;
inline constexpr uint32_t kDefaultModulePages = 1316;
}  // namespace linux_kaslr

namespace windows_kaslr {
inline constexpr uint64_t kStart = 0xfffff80000000000ull;
inline constexpr uint64_t kEnd = 0xfffff88000000000ull;
inline constexpr uint64_t kSlots = (kEnd - kStart) / kPage2M;  // 262144
inline constexpr uint32_t kDefaultImageSlots = 5;
}  // namespace windows_kaslr

struct ScanRange {
    std::string name;
    uint64_t start = 0;
    uint64_t end = 0;
    uint64_t stride = 0;
    uint64_t count() const { return (end - start) / stride; }
    bool operator==(const ScanRange&) const = default;
};

struct KaslrLayout {
    OsKind os = OsKind::Linux;
    uint64_t seed = 0;
    uint32_t entropy_bits = 0;
    uint64_t image_slot = 0;
    uint64_t image_page_size = kPage2M;
    std::vector<uint64_t> kernel_image_pages;
    uint32_t module_offset = 0;  // Linux: 4KiB pages after the module base
    std::vector<uint64_t> module_pages;
    std::vector<uint64_t> decoy_pages;  // Windows: other 2MiB allocations
    std::vector<ScanRange> search_ranges;

    uint64_t image_base() const { return kernel_image_pages.empty() ? 0 : kernel_image_pages.front(); }
    bool operator==(const KaslrLayout&) const = default;
};

struct WindowsLayoutOptions {
    uint32_t image_slots = windows_kaslr::kDefaultImageSlots;
    bool decoys = false;
    uint32_t decoy_runs = 32;  // each run spans 1..4 slots
};

std::pair<KaslrLayout, MemoryMap> randomize_linux(uint64_t seed,
                                                  uint32_t image_pages = linux_kaslr::kDefaultImagePages,
                                                  uint32_t module_pages = linux_kaslr::kDefaultModulePages);
std::pair<KaslrLayout, MemoryMap> randomize_windows(uint64_t seed, const WindowsLayoutOptions& options = {});

/// Every mapped kernel page base, sorted.
std::vector<uint64_t> ground_truth(const KaslrLayout& layout);

/// Rebuilds the memory map of a layout (used after import).
MemoryMap build_memory_map(const KaslrLayout& layout);

std::string layout_to_json(const KaslrLayout& layout);
KaslrLayout layout_from_json(std::string_view text);

/// Uniform integer in [0, n) by rejection sampling; independent of the
/// standard library's distribution implementations.
uint64_t uniform_below(uint64_t n, uint64_t& state);

}  // namespace specsim
