#include "specsim/uarch.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

namespace specsim {

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

void set_latency(MicroArchProfile& p, UopKind k, uint32_t v) { p.latency[static_cast<size_t>(k)] = v; }
void set_ports(MicroArchProfile& p, UopKind k, std::vector<uint32_t> v) { p.port_map[static_cast<size_t>(k)] = std::move(v); }

}  // namespace

MicroArchProfile base_profile(std::string name) {
    MicroArchProfile p;
    p.name = std::move(name);
    for (size_t k = 0; k < kUopKindCount; ++k) p.latency[k] = 1;
    set_latency(p, UopKind::AluMul, 3);
    set_latency(p, UopKind::Serialize, 10);

    // 0,1 load; 2 store; 3 multiply; 4,5 general ALU; 6 branch.
    p.ports = 7;
    set_ports(p, UopKind::Load, {0, 1});
    set_ports(p, UopKind::Store, {2});
    set_ports(p, UopKind::FlushLine, {2});
    set_ports(p, UopKind::AluMul, {3});
    for (auto k : {UopKind::AluAddSub, UopKind::AluLogic, UopKind::NopOp, UopKind::Halt, UopKind::Serialize})
        set_ports(p, k, {4, 5});
    set_ports(p, UopKind::ReadTsc, {4});
    set_ports(p, UopKind::BranchCond, {6});
    set_ports(p, UopKind::BranchUncond, {6});
    return p;
}

std::vector<MicroArchProfile> builtin_profiles() {
    std::vector<MicroArchProfile> out;

    auto skylake = base_profile("Skylake");
    skylake.rob_entries = 224;
    skylake.load_buffer_entries = 72;
    skylake.parallel_miss_slots = 40;
    skylake.flush_per_uop_cost = 0;
    out.push_back(skylake);

    auto haswell = base_profile("Haswell");
    haswell.rob_entries = 192;
    haswell.load_buffer_entries = 72;
    haswell.parallel_miss_slots = 32;
    haswell.flush_fault_modifier = -3;
    out.push_back(haswell);

    auto sandy = base_profile("SandyBridge");
    sandy.rob_entries = 168;
    sandy.load_buffer_entries = 64;
    sandy.parallel_miss_slots = 32;
    sandy.flush_fault_modifier = 3;
    out.push_back(sandy);

    auto nehalem = base_profile("Nehalem");
    nehalem.rob_entries = 128;
    nehalem.load_buffer_entries = 48;
    nehalem.parallel_miss_slots = 11;
    nehalem.static_forward = ForwardPrediction::Taken;
    nehalem.pf_behavior = FaultBehavior::ReturnZero;
    // The 128-nop flushing block plus HLT does not fit the ROB, so the
    // per-uop flush charge could never be observed here.
    nehalem.flush_per_uop_cost = 0;
    nehalem.flush_fault_modifier = -3;
    out.push_back(nehalem);

    auto prescott = base_profile("Prescott");
    prescott.rob_entries = 126;
    prescott.load_buffer_entries = std::nullopt;
    prescott.parallel_miss_slots = 19;
    prescott.gpf_behavior = FaultBehavior::Stall;
    prescott.pf_behavior = FaultBehavior::Stall;
    prescott.has_rdtscp = false;
    prescott.flush_per_uop_cost = 0;
    out.push_back(prescott);

    return out;
}

MicroArchProfile builtin_profile(std::string_view name) {
    const std::string want = lower(name);
    for (auto& p : builtin_profiles()) {
        std::string have = lower(p.name);
        if (have == want) return p;
        // Accept "sandy-bridge" / "sandy_bridge" spellings.
        std::string squashed;
        for (char c : want)
            if (c != '-' && c != '_' && c != ' ') squashed += c;
        if (have == squashed) return p;
    }
    throw ConfigError("unknown profile '" + std::string(name) + "'");
}

void validate(const MicroArchProfile& p) {
    auto fail = [&](const std::string& what) { throw ConfigError("profile " + p.name + ": " + what); };
    if (p.name.empty()) fail("empty name");
    if (p.rob_entries == 0) fail("rob_entries must be positive");
    if (p.parallel_miss_slots == 0) fail("parallel_miss_slots must be positive");
    if (p.load_buffer_entries && *p.load_buffer_entries < p.parallel_miss_slots)
        fail("load_buffer_entries must be >= parallel_miss_slots");
    if (p.fetch_width == 0 || p.commit_width == 0) fail("fetch/commit width must be positive");
    if (p.ports == 0 || p.ports > 64) fail("ports must be within 1..64");
    for (size_t k = 0; k < kUopKindCount; ++k) {
        if (p.latency[k] < 1) fail(std::string("latency of ") + std::string(uop_kind_name(UopKind(k))) + " must be >= 1");
        if (p.port_map[k].empty()) fail(std::string("no port for ") + std::string(uop_kind_name(UopKind(k))));
        for (auto port : p.port_map[k])
            if (port >= p.ports) fail("port id out of range");
    }
    if (p.l1_hit_latency < 1 || p.memory_latency < 1) fail("memory latencies must be >= 1");
    if (p.memory_latency <= p.l1_hit_latency) fail("memory_latency must exceed l1_hit_latency");
}

std::string_view to_string(ForwardPrediction p) { return p == ForwardPrediction::Taken ? "Taken" : "NotTaken"; }
std::string_view to_string(FaultBehavior b) { return b == FaultBehavior::Stall ? "Stall" : "ReturnZero"; }

std::string format_profiles(const std::vector<MicroArchProfile>& profiles) {
    std::ostringstream os;
    bool first = true;
    for (const auto& p : profiles) {
        if (!first) os << "\n";
        first = false;
        os << "[" << p.name << "]\n";
        os << "rob_entries = " << p.rob_entries << "\n";
        os << "load_buffer_entries = " << (p.load_buffer_entries ? std::to_string(*p.load_buffer_entries) : "none") << "\n";
        os << "parallel_miss_slots = " << p.parallel_miss_slots << "\n";
        os << "static_forward_prediction = " << to_string(p.static_forward) << "\n";
        os << "gpf_behavior = " << to_string(p.gpf_behavior) << "\n";
        os << "pf_behavior = " << to_string(p.pf_behavior) << "\n";
        os << "has_rdtscp = " << (p.has_rdtscp ? "true" : "false") << "\n";
        os << "fetch_width = " << p.fetch_width << "\n";
        os << "commit_width = " << p.commit_width << "\n";
        os << "l1_hit_latency = " << p.l1_hit_latency << "\n";
        os << "memory_latency = " << p.memory_latency << "\n";
        os << "flush_base_cost = " << p.flush_base_cost << "\n";
        os << "flush_per_uop_cost = " << p.flush_per_uop_cost << "\n";
        os << "flush_fault_modifier = " << p.flush_fault_modifier << "\n";
        os << "ports = " << p.ports << "\n";
        for (size_t k = 0; k < kUopKindCount; ++k)
            os << "latency." << uop_kind_name(UopKind(k)) << " = " << p.latency[k] << "\n";
        for (size_t k = 0; k < kUopKindCount; ++k) {
            os << "port." << uop_kind_name(UopKind(k)) << " = ";
            for (size_t i = 0; i < p.port_map[k].size(); ++i) os << (i ? "," : "") << p.port_map[k][i];
            os << "\n";
        }
    }
    return os.str();
}

namespace {

template <typename T>
T parse_number(std::string_view v, int line) {
    T out{};
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size())
        throw ConfigError("profile line " + std::to_string(line) + ": bad number '" + std::string(v) + "'");
    return out;
}

bool parse_bool(std::string_view v, int line) {
    const auto l = lower(v);
    if (l == "true") return true;
    if (l == "false") return false;
    throw ConfigError("profile line " + std::to_string(line) + ": expected true/false");
}

FaultBehavior parse_fault(std::string_view v, int line) {
    const auto l = lower(v);
    if (l == "returnzero") return FaultBehavior::ReturnZero;
    if (l == "stall") return FaultBehavior::Stall;
    throw ConfigError("profile line " + std::to_string(line) + ": expected ReturnZero or Stall");
}

}  // namespace

std::vector<MicroArchProfile> parse_profiles(std::string_view text) {
    std::vector<MicroArchProfile> out;
    std::set<std::string> seen_keys;
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

        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError("profile line " + std::to_string(line_no) + ": bad section header");
            out.push_back(base_profile(std::string(trim(line.substr(1, line.size() - 2)))));
            seen_keys.clear();
            continue;
        }
        if (out.empty()) throw ConfigError("profile line " + std::to_string(line_no) + ": key outside a [section]");
        auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ConfigError("profile line " + std::to_string(line_no) + ": expected key = value");
        const std::string key(trim(line.substr(0, eq)));
        const std::string_view value = trim(line.substr(eq + 1));
        if (!seen_keys.insert(key).second)
            throw ConfigError("profile line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
        auto& p = out.back();

        if (key == "rob_entries") p.rob_entries = parse_number<uint32_t>(value, line_no);
        else if (key == "load_buffer_entries")
            p.load_buffer_entries = lower(value) == "none" ? std::nullopt
                                                           : std::optional<uint32_t>(parse_number<uint32_t>(value, line_no));
        else if (key == "parallel_miss_slots") p.parallel_miss_slots = parse_number<uint32_t>(value, line_no);
        else if (key == "static_forward_prediction") {
            const auto l = lower(value);
            if (l == "taken") p.static_forward = ForwardPrediction::Taken;
            else if (l == "nottaken") p.static_forward = ForwardPrediction::NotTaken;
            else throw ConfigError("profile line " + std::to_string(line_no) + ": expected Taken or NotTaken");
        } else if (key == "gpf_behavior") p.gpf_behavior = parse_fault(value, line_no);
        else if (key == "pf_behavior") p.pf_behavior = parse_fault(value, line_no);
        else if (key == "has_rdtscp") p.has_rdtscp = parse_bool(value, line_no);
        else if (key == "fetch_width") p.fetch_width = parse_number<uint32_t>(value, line_no);
        else if (key == "commit_width") p.commit_width = parse_number<uint32_t>(value, line_no);
        else if (key == "l1_hit_latency") p.l1_hit_latency = parse_number<uint32_t>(value, line_no);
        else if (key == "memory_latency") p.memory_latency = parse_number<uint32_t>(value, line_no);
        else if (key == "flush_base_cost") p.flush_base_cost = parse_number<uint32_t>(value, line_no);
        else if (key == "flush_per_uop_cost") p.flush_per_uop_cost = parse_number<uint32_t>(value, line_no);
        else if (key == "flush_fault_modifier") p.flush_fault_modifier = parse_number<int32_t>(value, line_no);
        else if (key == "ports") p.ports = parse_number<uint32_t>(value, line_no);
        else if (key.rfind("latency.", 0) == 0) {
            auto kind = parse_uop_kind(std::string_view(key).substr(8));
            if (!kind) throw ConfigError("profile line " + std::to_string(line_no) + ": unknown micro-op kind");
            p.latency[static_cast<size_t>(*kind)] = parse_number<uint32_t>(value, line_no);
        } else if (key.rfind("port.", 0) == 0) {
            auto kind = parse_uop_kind(std::string_view(key).substr(5));
            if (!kind) throw ConfigError("profile line " + std::to_string(line_no) + ": unknown micro-op kind");
            std::vector<uint32_t> ports;
            size_t start = 0;
            while (start <= value.size()) {
                size_t comma = value.find(',', start);
                if (comma == std::string_view::npos) comma = value.size();
                ports.push_back(parse_number<uint32_t>(trim(value.substr(start, comma - start)), line_no));
                start = comma + 1;
            }
            p.port_map[static_cast<size_t>(*kind)] = std::move(ports);
        } else {
            throw ConfigError("profile line " + std::to_string(line_no) + ": unknown key '" + key + "'");
        }
    }
    for (const auto& p : out) validate(p);
    return out;
}

MicroArchProfile load_profile(const std::string& name_or_path) {
    try {
        return builtin_profile(name_or_path);
    } catch (const ConfigError&) {
    }
    std::ifstream in(name_or_path);
    if (!in) throw ConfigError("unknown profile '" + name_or_path + "' (not a built-in and not a readable file)");
    std::stringstream buf;
    buf << in.rdbuf();
    auto profiles = parse_profiles(buf.str());
    if (profiles.size() != 1)
        throw ConfigError("profile file " + name_or_path + " must hold exactly one profile");
    return profiles.front();
}

bool PredictorState::predict(uint64_t address, BranchDirection direction) const {
    auto it = table_.find(address);
    if (it == table_.end()) return static_prediction(direction);
    return it->second >= 2;
}

void PredictorState::train(uint64_t address, BranchDirection direction, bool taken) {
    auto [it, inserted] = table_.try_emplace(address, static_prediction(direction) ? 2 : 1);
    uint8_t& c = it->second;
    if (taken) {
        if (c < 3) ++c;
    } else {
        if (c > 0) --c;
    }
}

std::optional<uint8_t> PredictorState::counter(uint64_t address) const {
    auto it = table_.find(address);
    if (it == table_.end()) return std::nullopt;
    return it->second;
}

}  // namespace specsim
