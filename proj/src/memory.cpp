#include "specsim/memory.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstring>
#include <sstream>

#include "specsim/error.hpp"

namespace specsim {

uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// ---------------------------------------------------------------------------
// MemoryMap

void MemoryMap::map_page(uint64_t base, uint64_t size, bool kernel, uint64_t seed, std::optional<uint8_t> fill) {
    if (size != kPage4K && size != kPage2M) throw ConfigError("page size must be 4KiB or 2MiB");
    if (base % size != 0) throw ConfigError("page base not aligned to its size");
    PageEntry e{kernel, seed, fill};
    if (size == kPage4K) {
        if (large_.count(base & ~(kPage2M - 1))) throw ConfigError("4KiB page overlaps a mapped 2MiB page");
        small_[base] = e;
    } else {
        for (uint64_t a = base; a < base + kPage2M; a += kPage4K)
            if (small_.count(a)) throw ConfigError("2MiB page overlaps a mapped 4KiB page");
        large_[base] = e;
    }
}

void MemoryMap::map_range(uint64_t start, uint64_t end, uint64_t page_size, bool kernel, uint64_t seed) {
    uint64_t i = 0;
    for (uint64_t a = start; a < end; a += page_size, ++i) map_page(a, page_size, kernel, seed + i);
}

std::optional<MappedPage> MemoryMap::find(uint64_t addr) const {
    if (!small_.empty()) {
        const uint64_t b = addr & ~(kPage4K - 1);
        if (auto it = small_.find(b); it != small_.end()) return MappedPage{b, kPage4K, it->second};
    }
    if (!large_.empty()) {
        const uint64_t b = addr & ~(kPage2M - 1);
        if (auto it = large_.find(b); it != large_.end()) return MappedPage{b, kPage2M, it->second};
    }
    return std::nullopt;
}

uint8_t MemoryMap::backing_byte(uint64_t addr) const {
    auto page = find(addr);
    if (!page) throw SegFault("read of unmapped address");
    if (page->entry.fill) return *page->entry.fill;
    const uint64_t word = splitmix64(page->entry.content_seed * 0x100000001b3ull ^ (addr & ~7ull));
    return static_cast<uint8_t>(word >> (8 * (addr & 7)));
}

uint64_t MemoryMap::backing_read(uint64_t addr, uint8_t size) const {
    uint64_t v = 0;
    for (uint8_t i = 0; i < size; ++i) v |= static_cast<uint64_t>(backing_byte(addr + i)) << (8 * i);
    return v;
}

std::vector<MappedPage> MemoryMap::pages() const {
    std::vector<MappedPage> out;
    out.reserve(page_count());
    for (const auto& [b, e] : small_) out.push_back({b, kPage4K, e});
    for (const auto& [b, e] : large_) out.push_back({b, kPage2M, e});
    std::sort(out.begin(), out.end(), [](const MappedPage& a, const MappedPage& b) { return a.base < b.base; });
    return out;
}

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

uint64_t parse_u64(std::string_view s, int line) {
    s = trim(s);
    int base = 10;
    if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
        s.remove_prefix(2);
        base = 16;
    }
    uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v, base);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
        throw ConfigError("layout line " + std::to_string(line) + ": bad number");
    return v;
}

std::string hex(uint64_t v) {
    std::ostringstream os;
    os << "0x" << std::hex << v;
    return os.str();
}

}  // namespace

MemoryMap parse_layout_records(std::string_view text) {
    MemoryMap map;
    int line_no = 0;
    size_t pos = 0;
    while (pos < text.size()) {
        size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (auto c = line.find('#'); c != std::string_view::npos) line = line.substr(0, c);
        line = trim(line);
        if (line.empty()) continue;

        std::vector<std::string_view> fields;
        size_t start = 0;
        while (start <= line.size()) {
            size_t comma = line.find(',', start);
            if (comma == std::string_view::npos) comma = line.size();
            fields.push_back(trim(line.substr(start, comma - start)));
            start = comma + 1;
        }
        if (fields.size() != 5 && fields.size() != 6)
            throw ConfigError("layout line " + std::to_string(line_no) + ": expected start,end,page_size,mapped,kernel[,seed]");
        const uint64_t s = parse_u64(fields[0], line_no);
        const uint64_t e = parse_u64(fields[1], line_no);
        const uint64_t ps = parse_u64(fields[2], line_no);
        const uint64_t mapped = parse_u64(fields[3], line_no);
        const uint64_t kernel = parse_u64(fields[4], line_no);
        const uint64_t seed = fields.size() == 6 ? parse_u64(fields[5], line_no) : 0;
        if (e <= s || (ps != kPage4K && ps != kPage2M) || s % ps || e % ps || mapped > 1 || kernel > 1)
            throw ConfigError("layout line " + std::to_string(line_no) + ": malformed record");
        if (mapped) map.map_range(s, e, ps, kernel != 0, seed);
    }
    return map;
}

std::string format_layout_records(const MemoryMap& map) {
    std::ostringstream os;
    for (const auto& p : map.pages())
        os << hex(p.base) << "," << hex(p.base + p.size) << "," << hex(p.size) << ",1," << (p.entry.kernel ? 1 : 0)
           << "," << p.entry.content_seed << "\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// Cache, buffers

std::vector<uint64_t> CacheState::lines() const {
    std::vector<uint64_t> out(lines_.begin(), lines_.end());
    std::sort(out.begin(), out.end());
    return out;
}

uint32_t timed_read(CacheState& cache, const MemoryMap& map, uint64_t addr, const MicroArchProfile& profile) {
    auto page = map.find(addr);
    if (!page || page->entry.kernel) throw SegFault("timed read of non-user address");
    const bool hit = cache.resident(addr);
    cache.insert(addr);
    return hit ? profile.l1_hit_latency : profile.memory_latency;
}

void LoadBuffer::allocate() {
    if (!has_room()) throw std::logic_error("load buffer overflow");
    ++used_;
}

void LoadBuffer::release() {
    if (used_ == 0) throw std::logic_error("load buffer underflow");
    --used_;
}

std::optional<uint64_t> MissBuffer::pending_fill(uint64_t line) const {
    auto it = fills_.find(line);
    if (it == fills_.end()) return std::nullopt;
    return it->second.ready_cycle;
}

void MissBuffer::start_fill(uint64_t line, uint64_t ready_cycle) {
    if (!has_room()) throw std::logic_error("miss buffer overflow");
    fills_[line] = Fill{ready_cycle, 1};
}

void MissBuffer::add_ref(uint64_t line) { ++fills_.at(line).refs; }

bool MissBuffer::drop_ref(uint64_t line) {
    auto it = fills_.find(line);
    if (it == fills_.end()) return false;
    if (--it->second.refs == 0) {
        fills_.erase(it);
        return true;
    }
    return false;
}

bool MissBuffer::complete_fill(uint64_t line) { return fills_.erase(line) != 0; }

void MissBuffer::hold_unresolvable() {
    if (!has_room()) throw std::logic_error("miss buffer overflow");
    ++unresolvable_;
}

void MissBuffer::release_unresolvable() {
    if (unresolvable_ == 0) throw std::logic_error("miss buffer underflow");
    --unresolvable_;
}

uint8_t MemoryImage::byte(uint64_t addr) const {
    if (!pages_.empty()) {
        auto it = pages_.find(addr & ~(kPage4K - 1));
        if (it != pages_.end()) return (*it->second)[addr & (kPage4K - 1)];
    }
    return map_->backing_byte(addr);
}

uint64_t MemoryImage::read(uint64_t addr, uint8_t size) const {
    uint64_t v = 0;
    for (uint8_t i = 0; i < size; ++i) v |= static_cast<uint64_t>(byte(addr + i)) << (8 * i);
    return v;
}

void MemoryImage::write(uint64_t addr, uint8_t size, uint64_t value) {
    for (uint8_t i = 0; i < size; ++i) {
        const uint64_t a = addr + i;
        const uint64_t base = a & ~(kPage4K - 1);
        auto& page = pages_[base];
        if (!page) {
            page = std::make_unique<std::array<uint8_t, kPage4K>>();
            for (uint64_t j = 0; j < kPage4K; ++j) (*page)[j] = map_->backing_byte(base + j);
        }
        (*page)[a & (kPage4K - 1)] = static_cast<uint8_t>(value >> (8 * i));
    }
}

// ---------------------------------------------------------------------------
// Noise

NoiseConfig default_noise() { return NoiseConfig{8, 0.005}; }

NoiseConfig parse_noise(std::string_view spec) {
    spec = trim(spec);
    if (spec.empty() || spec == "off" || spec == "none") return {};
    if (spec == "default" || spec == "on") return default_noise();
    NoiseConfig n;
    size_t start = 0;
    while (start <= spec.size()) {
        size_t comma = spec.find(',', start);
        if (comma == std::string_view::npos) comma = spec.size();
        auto item = trim(spec.substr(start, comma - start));
        start = comma + 1;
        auto eq = item.find('=');
        if (eq == std::string_view::npos) throw ConfigError("noise: expected key=value, got '" + std::string(item) + "'");
        auto key = trim(item.substr(0, eq));
        auto value = std::string(trim(item.substr(eq + 1)));
        try {
            size_t used = 0;
            if (key == "jitter") {
                const unsigned long v = std::stoul(value, &used);
                if (used != value.size()) throw std::invalid_argument("trailing");
                n.jitter = static_cast<uint32_t>(v);
            } else if (key == "evict") {
                const double p = std::stod(value, &used);
                if (used != value.size() || p < 0.0 || p > 1.0) throw std::invalid_argument("range");
                n.evict_probability = p;
            } else {
                throw ConfigError("noise: unknown key '" + std::string(key) + "'");
            }
        } catch (const std::invalid_argument&) {
            throw ConfigError("noise: bad value for " + std::string(key));
        } catch (const std::out_of_range&) {
            throw ConfigError("noise: bad value for " + std::string(key));
        }
    }
    return n;
}

std::string to_string(const NoiseConfig& noise) {
    if (!noise.enabled()) return "off";
    std::ostringstream os;
    os << "jitter=" << noise.jitter << ",evict=" << noise.evict_probability;
    return os.str();
}

std::string_view to_string(AccessOutcome o) {
    switch (o) {
        case AccessOutcome::Hit: return "Hit";
        case AccessOutcome::MissIssued: return "MissIssued";
        case AccessOutcome::MissMerged: return "MissMerged";
        case AccessOutcome::GPFZero: return "GPFZero";
        case AccessOutcome::PFZero: return "PFZero";
        case AccessOutcome::PFStall: return "PFStall";
        case AccessOutcome::LoadBufferFull: return "LoadBufferFull";
        case AccessOutcome::MissBufferFull: return "MissBufferFull";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// MemorySystem

MemorySystem::MemorySystem(const MemoryMap& map, const MicroArchProfile& profile, NoiseConfig noise, uint64_t seed)
    : map_(&map),
      profile_(&profile),
      noise_(noise),
      rng_(seed),
      lb_(profile.load_buffer_entries),
      mb_(profile.parallel_miss_slots),
      image_(map) {}

uint32_t MemorySystem::jitter() {
    if (noise_.jitter == 0) return 0;
    return static_cast<uint32_t>(rng_() % (noise_.jitter + 1));
}

AccessResult MemorySystem::access(uint64_t addr, uint8_t size, Privilege privilege, uint64_t now) {
    AccessResult r;
    if (!lb_.has_room()) {
        r.outcome = AccessOutcome::LoadBufferFull;
        return r;
    }
    const auto page = map_->find(addr);
    const uint64_t line = line_of(addr);

    auto stall_or_zero = [&](FaultBehavior behavior, AccessOutcome zero_kind) {
        if (behavior == FaultBehavior::ReturnZero && zero_kind == AccessOutcome::GPFZero) {
            r.outcome = AccessOutcome::GPFZero;
        } else {
            if (!mb_.has_room()) {
                r.outcome = AccessOutcome::MissBufferFull;
                return;
            }
            mb_.hold_unresolvable();
            r.holds_unresolvable = true;
            r.outcome = behavior == FaultBehavior::Stall ? AccessOutcome::PFStall : AccessOutcome::PFZero;
        }
        r.faulted = true;
        r.value = 0;
        r.ready_cycle = now + profile_->l1_hit_latency;
        lb_.allocate();
    };

    if (!page) {
        stall_or_zero(profile_->pf_behavior, AccessOutcome::PFZero);
        return r;
    }
    if (page->entry.kernel && privilege == Privilege::User) {
        stall_or_zero(profile_->gpf_behavior, AccessOutcome::GPFZero);
        return r;
    }

    if (cache_.resident(line) && noise_.evict_probability > 0.0) {
        const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
        if (u < noise_.evict_probability) cache_.flush(line);
    }
    if (cache_.resident(line)) {
        r.outcome = AccessOutcome::Hit;
        r.ready_cycle = now + profile_->l1_hit_latency + jitter();
    } else if (auto fill = mb_.pending_fill(line)) {
        mb_.add_ref(line);
        r.outcome = AccessOutcome::MissMerged;
        r.ready_cycle = *fill;
        r.holds_fill = true;
    } else if (mb_.has_room()) {
        r.ready_cycle = now + profile_->memory_latency + jitter();
        mb_.start_fill(line, r.ready_cycle);
        r.outcome = AccessOutcome::MissIssued;
        r.holds_fill = true;
    } else {
        r.outcome = AccessOutcome::MissBufferFull;
        return r;
    }
    r.value = image_.read(addr, size);
    lb_.allocate();
    return r;
}

bool MemorySystem::complete_load(const AccessResult& r, uint64_t addr) {
    if (!r.holds_fill) return false;
    const bool released = mb_.complete_fill(line_of(addr));
    cache_.insert(addr);
    return released;
}

bool MemorySystem::retire_load(const AccessResult& r, uint64_t addr, bool completed) {
    if (r.outcome == AccessOutcome::LoadBufferFull || r.outcome == AccessOutcome::MissBufferFull) return false;
    lb_.release();
    bool released = false;
    if (r.holds_unresolvable) {
        mb_.release_unresolvable();
        released = true;
    }
    if (r.holds_fill && !completed) released = mb_.drop_ref(line_of(addr)) || released;
    return released;
}

}  // namespace specsim
