#include <algorithm>
#include <cctype>
#include <charconv>
#include <set>
#include <sstream>

#include "specsim/isa.hpp"

namespace specsim {

AssemblyError::AssemblyError(int line, const std::string& what)
    : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

bool is_identifier(std::string_view s) {
    if (s.empty()) return false;
    if (!std::isalpha(static_cast<unsigned char>(s[0])) && s[0] != '_' && s[0] != '.') return false;
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isalnum(c) || c == '_' || c == '.'; });
}

std::optional<int64_t> parse_int(std::string_view s) {
    s = trim(s);
    bool negative = false;
    if (!s.empty() && (s[0] == '-' || s[0] == '+')) {
        negative = s[0] == '-';
        s.remove_prefix(1);
    }
    if (s.empty()) return std::nullopt;
    uint64_t value = 0;
    int base = 10;
    if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
        base = 16;
        s.remove_prefix(2);
    }
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value, base);
    if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
    return negative ? static_cast<int64_t>(0 - value) : static_cast<int64_t>(value);
}

struct Operand {
    enum Kind { Reg, Imm, Mem, Label } kind = Imm;
    RegView reg;
    int64_t imm = 0;
    MemOperand mem;
    bool mem_sized = false;
    std::string label;
};

std::vector<std::string_view> split_operands(std::string_view s) {
    std::vector<std::string_view> out;
    int depth = 0;
    size_t start = 0;
    for (size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '[') ++depth;
        if (s[i] == ']') --depth;
        if (s[i] == ',' && depth == 0) {
            out.push_back(trim(s.substr(start, i - start)));
            start = i + 1;
        }
    }
    auto last = trim(s.substr(start));
    if (!last.empty() || !out.empty()) out.push_back(last);
    return out;
}

Operand parse_operand(std::string_view text, int line) {
    Operand op;
    text = trim(text);
    if (text.empty()) throw AssemblyError(line, "empty operand");

    std::string low = lower(text);
    uint8_t size = 0;
    for (auto [prefix, bytes] : {std::pair<std::string_view, uint8_t>{"byte ptr", 1}, {"dword ptr", 4}, {"qword ptr", 8}}) {
        if (low.rfind(prefix, 0) == 0) {
            size = bytes;
            text = trim(text.substr(prefix.size()));
            low = lower(text);
            break;
        }
    }

    if (!text.empty() && text.front() == '[') {
        if (text.back() != ']') throw AssemblyError(line, "unterminated memory operand");
        std::string_view inner = text.substr(1, text.size() - 2);
        op.kind = Operand::Mem;
        op.mem_sized = size != 0;
        op.mem.size = size ? size : 8;
        // Terms separated by + or -, each a register or an integer.
        size_t i = 0;
        bool negative = false;
        while (i <= inner.size()) {
            size_t j = i;
            while (j < inner.size() && inner[j] != '+' && inner[j] != '-') ++j;
            auto term = trim(inner.substr(i, j - i));
            if (term.empty()) {
                if (j >= inner.size()) break;
                if (i != 0 || inner[j] != '-') throw AssemblyError(line, "malformed memory operand");
            } else if (auto reg = parse_register(term)) {
                if (negative) throw AssemblyError(line, "negated register in memory operand");
                if (reg->width != Width::Qword) throw AssemblyError(line, "address registers must be 64-bit");
                if (!op.mem.base) op.mem.base = reg->id;
                else if (!op.mem.index) op.mem.index = reg->id;
                else throw AssemblyError(line, "too many registers in memory operand");
            } else if (auto v = parse_int(term)) {
                op.mem.disp += negative ? -*v : *v;
            } else {
                throw AssemblyError(line, "undeclared register or bad displacement '" + std::string(term) + "'");
            }
            if (j >= inner.size()) break;
            negative = inner[j] == '-';
            i = j + 1;
        }
        return op;
    }
    if (size) throw AssemblyError(line, "size prefix on non-memory operand");
    if (auto reg = parse_register(text)) {
        op.kind = Operand::Reg;
        op.reg = *reg;
        return op;
    }
    if (auto v = parse_int(text)) {
        op.kind = Operand::Imm;
        op.imm = *v;
        return op;
    }
    if (is_identifier(text)) {
        op.kind = Operand::Label;
        op.label = std::string(text);
        return op;
    }
    throw AssemblyError(line, "cannot parse operand '" + std::string(text) + "'");
}

struct MnemonicInfo {
    Opcode opcode;
    std::optional<Condition> cond;
};

std::optional<MnemonicInfo> lookup_mnemonic(const std::string& m) {
    static const std::map<std::string, MnemonicInfo> table = {
        {"imul", {Opcode::Imul, {}}},     {"mov", {Opcode::Mov, {}}},       {"add", {Opcode::Add, {}}},
        {"sub", {Opcode::Sub, {}}},       {"and", {Opcode::And, {}}},       {"or", {Opcode::Or, {}}},
        {"xor", {Opcode::Xor, {}}},       {"cmp", {Opcode::Cmp, {}}},       {"test", {Opcode::Test, {}}},
        {"je", {Opcode::Jcc, Condition::Zero}},     {"jz", {Opcode::Jcc, Condition::Zero}},
        {"jne", {Opcode::Jcc, Condition::NotZero}}, {"jnz", {Opcode::Jcc, Condition::NotZero}},
        {"jmp", {Opcode::Jmp, {}}},       {"clflush", {Opcode::Clflush, {}}}, {"rdtsc", {Opcode::Rdtsc, {}}},
        {"rdtscp", {Opcode::Rdtscp, {}}}, {"cpuid", {Opcode::Cpuid, {}}},   {"hlt", {Opcode::Hlt, {}}},
        {"nop", {Opcode::Nop, {}}},
    };
    auto it = table.find(m);
    if (it == table.end()) return std::nullopt;
    return it->second;
}

uint8_t width_bytes(Width w) { return static_cast<uint8_t>(w); }

MacroOp build_instruction(const MnemonicInfo& info, const std::vector<Operand>& ops, int line) {
    MacroOp m;
    m.opcode = info.opcode;
    m.source_line = line;
    auto expect_count = [&](size_t n) {
        if (ops.size() != n)
            throw AssemblyError(line, std::string(opcode_name(info.opcode)) + " expects " + std::to_string(n) +
                                          " operand(s)");
    };

    switch (info.opcode) {
        case Opcode::Jcc:
        case Opcode::Jmp:
            expect_count(1);
            if (ops[0].kind != Operand::Label) throw AssemblyError(line, "branch target must be a label");
            m.form = OperandForm::Label;
            m.target_label = ops[0].label;
            if (info.cond) m.cond = *info.cond;
            return m;
        case Opcode::Clflush:
            expect_count(1);
            if (ops[0].kind != Operand::Mem) throw AssemblyError(line, "clflush expects a memory operand");
            m.form = OperandForm::Mem;
            m.mem = ops[0].mem;
            m.mem->size = 1;
            return m;
        case Opcode::Rdtsc:
        case Opcode::Rdtscp:
        case Opcode::Cpuid:
        case Opcode::Hlt:
        case Opcode::Nop:
            expect_count(0);
            m.form = OperandForm::None;
            return m;
        default:
            break;
    }

    expect_count(2);
    const Operand& a = ops[0];
    const Operand& b = ops[1];
    if (a.kind == Operand::Reg && b.kind == Operand::Imm) {
        m.form = OperandForm::RegImm;
        m.reg = a.reg;
        m.imm = b.imm;
    } else if (a.kind == Operand::Reg && b.kind == Operand::Reg) {
        if (a.reg.width != b.reg.width) throw AssemblyError(line, "operand width mismatch");
        m.form = OperandForm::RegReg;
        m.reg = a.reg;
        m.reg2 = b.reg;
    } else if (a.kind == Operand::Reg && b.kind == Operand::Mem) {
        m.form = OperandForm::RegMem;
        m.reg = a.reg;
        m.mem = b.mem;
        if (b.mem_sized && b.mem.size != width_bytes(a.reg.width))
            throw AssemblyError(line, "memory operand size does not match register");
        m.mem->size = width_bytes(a.reg.width);
    } else if (a.kind == Operand::Mem && b.kind == Operand::Reg) {
        m.form = OperandForm::MemReg;
        m.mem = a.mem;
        m.reg2 = b.reg;
        if (a.mem_sized && a.mem.size != width_bytes(b.reg.width))
            throw AssemblyError(line, "memory operand size does not match register");
        m.mem->size = width_bytes(b.reg.width);
    } else if (a.kind == Operand::Mem && b.kind == Operand::Imm) {
        m.form = OperandForm::MemImm;
        m.mem = a.mem;
        m.imm = b.imm;
    } else {
        throw AssemblyError(line, "unsupported operand combination for " + std::string(opcode_name(info.opcode)));
    }

    const bool allowed = [&] {
        switch (info.opcode) {
            case Opcode::Imul: return m.form == OperandForm::RegImm || m.form == OperandForm::RegReg;
            case Opcode::Test: return m.form == OperandForm::RegImm || m.form == OperandForm::RegReg;
            case Opcode::Cmp: return m.form != OperandForm::MemReg;
            default: return true;
        }
    }();
    if (!allowed) throw AssemblyError(line, "unsupported operand form for " + std::string(opcode_name(info.opcode)));
    return m;
}

}  // namespace

Program assemble(std::string_view source) {
    Program program;
    std::set<std::string> declared;
    std::optional<std::pair<std::string, int>> entry_label;

    int line_no = 0;
    size_t pos = 0;
    while (pos <= source.size()) {
        size_t end = source.find('\n', pos);
        if (end == std::string_view::npos) end = source.size();
        std::string_view line = source.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;

        if (auto c = line.find(';'); c != std::string_view::npos) line = line.substr(0, c);
        line = trim(line);

        // Leading labels, possibly several and possibly followed by an instruction.
        while (!line.empty()) {
            auto colon = line.find(':');
            if (colon == std::string_view::npos) break;
            auto name = trim(line.substr(0, colon));
            if (!is_identifier(name) || name.find(' ') != std::string_view::npos) break;
            if (!declared.insert(std::string(name)).second)
                throw AssemblyError(line_no, "duplicate label '" + std::string(name) + "'");
            program.labels[std::string(name)] = static_cast<uint32_t>(program.ops.size());
            line = trim(line.substr(colon + 1));
        }
        if (line.empty()) {
            if (end == source.size()) break;
            continue;
        }

        auto space = line.find_first_of(" \t");
        std::string mnemonic = lower(line.substr(0, space));
        std::string_view rest = space == std::string_view::npos ? std::string_view{} : trim(line.substr(space));

        if (mnemonic == ".init") {
            auto parts = split_operands(rest);
            if (parts.size() != 2) throw AssemblyError(line_no, ".init expects <register>, <value>");
            auto reg = parse_register(parts[0]);
            auto value = parse_int(parts[1]);
            if (!reg || reg->width != Width::Qword) throw AssemblyError(line_no, ".init needs a 64-bit register");
            if (!value) throw AssemblyError(line_no, ".init needs an integer value");
            program.initial_registers[reg->id] = static_cast<uint64_t>(*value);
        } else if (mnemonic == ".entry") {
            if (!is_identifier(rest)) throw AssemblyError(line_no, ".entry expects a label");
            entry_label = {std::string(rest), line_no};
        } else {
            auto info = lookup_mnemonic(mnemonic);
            if (!info) throw AssemblyError(line_no, "unknown mnemonic '" + mnemonic + "'");
            std::vector<Operand> operands;
            for (auto text : split_operands(rest)) operands.push_back(parse_operand(text, line_no));
            program.ops.push_back(build_instruction(*info, operands, line_no));
        }
        if (end == source.size()) break;
    }

    for (auto& op : program.ops) {
        if (op.form != OperandForm::Label) continue;
        auto it = program.labels.find(op.target_label);
        if (it == program.labels.end())
            throw AssemblyError(op.source_line, "unresolved label '" + op.target_label + "'");
        op.target = it->second;
    }
    if (entry_label) {
        auto it = program.labels.find(entry_label->first);
        if (it == program.labels.end())
            throw AssemblyError(entry_label->second, "unresolved label '" + entry_label->first + "'");
        program.entry = it->second;
    }
    return program;
}

namespace {

std::string hex(uint64_t v) {
    std::ostringstream os;
    os << "0x" << std::hex << v;
    return os.str();
}

std::string render_imm(int64_t v) {
    if (v < 0) return "-" + hex(0 - static_cast<uint64_t>(v));
    return v < 10 ? std::to_string(v) : hex(static_cast<uint64_t>(v));
}

std::string render_mem(const MemOperand& m, bool sized) {
    std::string out;
    if (sized) {
        if (m.size == 1) out += "BYTE PTR ";
        else if (m.size == 4) out += "DWORD PTR ";
        else out += "QWORD PTR ";
    }
    out += "[";
    bool first = true;
    auto add_reg = [&](RegId id) {
        if (!first) out += "+";
        out += register_name(RegView{id, Width::Qword});
        first = false;
    };
    if (m.base) add_reg(*m.base);
    if (m.index) add_reg(*m.index);
    if (m.disp != 0 || first) {
        if (first) out += render_imm(m.disp);
        else if (m.disp < 0) out += "-" + hex(0 - static_cast<uint64_t>(m.disp));
        else out += "+" + hex(static_cast<uint64_t>(m.disp));
    }
    out += "]";
    return out;
}

std::string render_op(const MacroOp& op) {
    std::string mnem(opcode_name(op.opcode));
    if (op.opcode == Opcode::Jcc) mnem = op.cond == Condition::Zero ? "je" : "jne";
    switch (op.form) {
        case OperandForm::None: return mnem;
        case OperandForm::Label: return mnem + " " + op.target_label;
        case OperandForm::Mem: return mnem + " " + render_mem(*op.mem, false);
        case OperandForm::RegImm: return mnem + " " + register_name(*op.reg) + ", " + render_imm(op.imm);
        case OperandForm::RegReg: return mnem + " " + register_name(*op.reg) + ", " + register_name(*op.reg2);
        case OperandForm::RegMem: return mnem + " " + register_name(*op.reg) + ", " + render_mem(*op.mem, false);
        case OperandForm::MemReg: return mnem + " " + render_mem(*op.mem, false) + ", " + register_name(*op.reg2);
        case OperandForm::MemImm: return mnem + " " + render_mem(*op.mem, op.mem->size != 8) + ", " + render_imm(op.imm);
    }
    return mnem;
}

}  // namespace

std::string render(const Program& program) {
    std::ostringstream os;
    for (const auto& [reg, value] : program.initial_registers)
        os << ".init " << register_name(RegView{reg, Width::Qword}) << ", " << hex(value) << "\n";

    std::multimap<uint32_t, std::string> by_index;
    for (const auto& [name, index] : program.labels) by_index.emplace(index, name);
    std::string entry_name;
    if (program.entry != 0) {
        for (const auto& [name, index] : program.labels)
            if (index == program.entry) entry_name = name;
        os << ".entry " << entry_name << "\n";
    }

    for (uint32_t i = 0; i <= program.ops.size(); ++i) {
        auto [lo, hi] = by_index.equal_range(i);
        for (auto it = lo; it != hi; ++it) os << it->second << ":\n";
        if (i < program.ops.size()) os << "  " << render_op(program.ops[i]) << "\n";
    }
    return os.str();
}

}  // namespace specsim
