#include "specsim/oslayout.hpp"

#include <algorithm>
#include <sstream>

#include <json.hpp>

#include "specsim/error.hpp"

namespace specsim {

using nlohmann::json;

std::string_view to_string(OsKind os) { return os == OsKind::Linux ? "linux" : "windows"; }

OsKind parse_os(std::string_view name) {
    if (name == "linux") return OsKind::Linux;
    if (name == "windows") return OsKind::Windows;
    throw ConfigError("unknown os '" + std::string(name) + "' (expected linux or windows)");
}

uint64_t uniform_below(uint64_t n, uint64_t& state) {
    if (n == 0) throw std::invalid_argument("uniform_below(0)");
    const uint64_t threshold = (0 - n) % n;
    for (;;) {
        const uint64_t r = splitmix64(state);
        state += 0x9e3779b97f4a7c15ull;
        if (r >= threshold) return r % n;
    }
}

namespace {

uint64_t page_seed(uint64_t layout_seed, uint64_t base) { return splitmix64(layout_seed ^ splitmix64(base)); }

}  // namespace

MemoryMap build_memory_map(const KaslrLayout& layout) {
    MemoryMap map;
    for (auto b : layout.kernel_image_pages) map.map_page(b, layout.image_page_size, true, page_seed(layout.seed, b));
    for (auto b : layout.module_pages) map.map_page(b, kPage4K, true, page_seed(layout.seed, b));
    for (auto b : layout.decoy_pages) map.map_page(b, kPage2M, true, page_seed(layout.seed, b));
    return map;
}

std::pair<KaslrLayout, MemoryMap> randomize_linux(uint64_t seed, uint32_t image_pages, uint32_t module_pages) {
    using namespace linux_kaslr;
    if (image_pages == 0 || image_pages > kImageSlots)
        throw ConfigError("kernel image of " + std::to_string(image_pages) + " pages does not fit the image range");
    const uint64_t module_window = (kModuleWindowEnd - kModuleStart) / kPage4K;
    if (kMaxModuleOffset + static_cast<uint64_t>(module_pages) > module_window)
        throw ConfigError("module region of " + std::to_string(module_pages) + " pages does not fit the module window");

    uint64_t state = seed;
    KaslrLayout l;
    l.os = OsKind::Linux;
    l.seed = seed;
    l.entropy_bits = 9;
    l.image_page_size = kPage2M;
    l.image_slot = uniform_below(kImageSlots - image_pages + 1, state);
    for (uint32_t i = 0; i < image_pages; ++i) l.kernel_image_pages.push_back(kImageStart + (l.image_slot + i) * kPage2M);
    l.module_offset = static_cast<uint32_t>(1 + uniform_below(kMaxModuleOffset, state));
    for (uint32_t i = 0; i < module_pages; ++i)
        l.module_pages.push_back(kModuleStart + (static_cast<uint64_t>(l.module_offset) + i) * kPage4K);
    l.search_ranges = {
        ScanRange{"image", kImageStart, kImageEnd, kPage2M},
        ScanRange{"modules", kModuleStart, kModuleWindowEnd, kPage4K},
    };
    auto map = build_memory_map(l);
    return {std::move(l), std::move(map)};
}

std::pair<KaslrLayout, MemoryMap> randomize_windows(uint64_t seed, const WindowsLayoutOptions& options) {
    using namespace windows_kaslr;
    if (options.image_slots == 0 || options.image_slots > kSlots)
        throw ConfigError("kernel image of " + std::to_string(options.image_slots) + " slots does not fit the range");

    uint64_t state = seed;
    KaslrLayout l;
    l.os = OsKind::Windows;
    l.seed = seed;
    l.entropy_bits = 18;
    l.image_page_size = kPage2M;
    l.image_slot = uniform_below(kSlots - options.image_slots + 1, state);
    for (uint32_t i = 0; i < options.image_slots; ++i) l.kernel_image_pages.push_back(kStart + (l.image_slot + i) * kPage2M);

    if (options.decoys) {
        // Runs of 1..4 slots, each separated from every other allocation by
        // at least one free slot so the image stays the only 5-slot run.
        std::vector<std::pair<uint64_t, uint64_t>> taken = {{l.image_slot, l.image_slot + options.image_slots}};
        uint32_t placed = 0;
        for (uint32_t attempt = 0; placed < options.decoy_runs && attempt < options.decoy_runs * 64; ++attempt) {
            const uint64_t len = 1 + uniform_below(4, state);
            const uint64_t start = uniform_below(kSlots - len + 1, state);
            const bool clear = std::none_of(taken.begin(), taken.end(), [&](const auto& t) {
                return start < t.second + 1 && t.first < start + len + 1;
            });
            if (!clear) continue;
            taken.emplace_back(start, start + len);
            for (uint64_t s = start; s < start + len; ++s) l.decoy_pages.push_back(kStart + s * kPage2M);
            ++placed;
        }
        std::sort(l.decoy_pages.begin(), l.decoy_pages.end());
    }
    l.search_ranges = {ScanRange{"image", kStart, kEnd, kPage2M}};
    auto map = build_memory_map(l);
    return {std::move(l), std::move(map)};
}

std::vector<uint64_t> ground_truth(const KaslrLayout& layout) {
    std::vector<uint64_t> out;
    out.insert(out.end(), layout.kernel_image_pages.begin(), layout.kernel_image_pages.end());
    out.insert(out.end(), layout.module_pages.begin(), layout.module_pages.end());
    out.insert(out.end(), layout.decoy_pages.begin(), layout.decoy_pages.end());
    std::sort(out.begin(), out.end());
    return out;
}

namespace {

std::string hex(uint64_t v) {
    std::ostringstream os;
    os << "0x" << std::hex << v;
    return os.str();
}

uint64_t unhex(const json& j) {
    const auto s = j.get<std::string>();
    if (s.size() < 3 || s[0] != '0' || (s[1] != 'x' && s[1] != 'X')) throw ConfigError("layout: expected hex string");
    size_t used = 0;
    const uint64_t v = std::stoull(s.substr(2), &used, 16);
    if (used != s.size() - 2) throw ConfigError("layout: bad hex string '" + s + "'");
    return v;
}

json hex_list(const std::vector<uint64_t>& v) {
    json a = json::array();
    for (auto x : v) a.push_back(hex(x));
    return a;
}

std::vector<uint64_t> unhex_list(const json& a) {
    std::vector<uint64_t> out;
    for (const auto& x : a) out.push_back(unhex(x));
    return out;
}

}  // namespace

std::string layout_to_json(const KaslrLayout& l) {
    json j;
    j["schema"] = "specsim.layout/1";
    j["os"] = std::string(to_string(l.os));
    j["seed"] = l.seed;
    j["entropy_bits"] = l.entropy_bits;
    j["image_slot"] = l.image_slot;
    j["image_page_size"] = l.image_page_size;
    j["kernel_image_pages"] = hex_list(l.kernel_image_pages);
    j["module_offset"] = l.module_offset;
    j["module_pages"] = hex_list(l.module_pages);
    j["decoy_pages"] = hex_list(l.decoy_pages);
    json ranges = json::array();
    for (const auto& r : l.search_ranges)
        ranges.push_back({{"name", r.name}, {"start", hex(r.start)}, {"end", hex(r.end)}, {"stride", hex(r.stride)}});
    j["search_ranges"] = ranges;
    return j.dump(2) + "\n";
}

KaslrLayout layout_from_json(std::string_view text) {
    try {
        const json j = json::parse(text);
        if (j.at("schema") != "specsim.layout/1") throw ConfigError("layout: unsupported schema");
        KaslrLayout l;
        l.os = parse_os(j.at("os").get<std::string>());
        l.seed = j.at("seed").get<uint64_t>();
        l.entropy_bits = j.at("entropy_bits").get<uint32_t>();
        l.image_slot = j.at("image_slot").get<uint64_t>();
        l.image_page_size = j.at("image_page_size").get<uint64_t>();
        l.kernel_image_pages = unhex_list(j.at("kernel_image_pages"));
        l.module_offset = j.at("module_offset").get<uint32_t>();
        l.module_pages = unhex_list(j.at("module_pages"));
        l.decoy_pages = unhex_list(j.at("decoy_pages"));
        for (const auto& r : j.at("search_ranges"))
            l.search_ranges.push_back(ScanRange{r.at("name").get<std::string>(), unhex(r.at("start")), unhex(r.at("end")),
                                                unhex(r.at("stride"))});
        for (const auto& r : l.search_ranges)
            if (r.stride == 0 || r.end <= r.start) throw ConfigError("layout: bad search range " + r.name);
        return l;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("layout: malformed JSON: ") + e.what());
    } catch (const std::logic_error& e) {
        throw ConfigError(std::string("layout: ") + e.what());
    }
}

}  // namespace specsim
