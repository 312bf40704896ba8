#include "specsim/isa.hpp"

#include <algorithm>
#include <cctype>
#include <string>

namespace specsim {

namespace {

constexpr std::array<std::string_view, 8> kLegacyQ = {"rax", "rcx", "rdx", "rbx", "rsp", "rbp", "rsi", "rdi"};
constexpr std::array<std::string_view, 8> kLegacyD = {"eax", "ecx", "edx", "ebx", "esp", "ebp", "esi", "edi"};
constexpr std::array<std::string_view, 8> kLegacyB = {"al", "cl", "dl", "bl", "spl", "bpl", "sil", "dil"};

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

uint64_t width_mask(Width w) {
    switch (w) {
        case Width::Byte: return 0xffULL;
        case Width::Dword: return 0xffffffffULL;
        case Width::Qword: return ~0ULL;
    }
    return ~0ULL;
}

}  // namespace

std::optional<RegView> parse_register(std::string_view name) {
    const std::string n = lower(name);
    for (RegId i = 0; i < 8; ++i) {
        if (n == kLegacyQ[i]) return RegView{i, Width::Qword};
        if (n == kLegacyD[i]) return RegView{i, Width::Dword};
        if (n == kLegacyB[i]) return RegView{i, Width::Byte};
    }
    if (n.size() < 2 || n[0] != 'r' || !std::isdigit(static_cast<unsigned char>(n[1]))) return std::nullopt;
    size_t pos = 1;
    unsigned value = 0;
    while (pos < n.size() && std::isdigit(static_cast<unsigned char>(n[pos]))) {
        value = value * 10 + static_cast<unsigned>(n[pos] - '0');
        ++pos;
        if (value >= kNumGpr) return std::nullopt;
    }
    Width width = Width::Qword;
    if (pos < n.size()) {
        if (pos + 1 != n.size()) return std::nullopt;
        if (n[pos] == 'b') width = Width::Byte;
        else if (n[pos] == 'd') width = Width::Dword;
        else return std::nullopt;
    }
    return RegView{static_cast<RegId>(value), width};
}

std::string register_name(RegView reg) {
    if (reg.id == kFlagsReg) return "flags";
    if (reg.id >= kFirstTemp) return "t" + std::to_string(reg.id - kFirstTemp + 1);
    if (reg.id < 8) {
        switch (reg.width) {
            case Width::Qword: return std::string(kLegacyQ[reg.id]);
            case Width::Dword: return std::string(kLegacyD[reg.id]);
            case Width::Byte: return std::string(kLegacyB[reg.id]);
        }
    }
    std::string base = "r" + std::to_string(reg.id);
    if (reg.width == Width::Byte) base += 'b';
    if (reg.width == Width::Dword) base += 'd';
    return base;
}

uint64_t read_view(uint64_t parent, Width width) { return parent & width_mask(width); }

uint64_t write_view(uint64_t parent, Width width, uint64_t value) {
    switch (width) {
        case Width::Byte: return (parent & ~0xffULL) | (value & 0xffULL);
        case Width::Dword: return value & 0xffffffffULL;
        case Width::Qword: return value;
    }
    return value;
}

bool MacroOp::operator==(const MacroOp& o) const {
    return opcode == o.opcode && form == o.form && reg == o.reg && reg2 == o.reg2 && mem == o.mem &&
           imm == o.imm && cond == o.cond && target_label == o.target_label && target == o.target;
}

std::string_view opcode_name(Opcode op) {
    switch (op) {
        case Opcode::Imul: return "imul";
        case Opcode::Mov: return "mov";
        case Opcode::Add: return "add";
        case Opcode::Sub: return "sub";
        case Opcode::And: return "and";
        case Opcode::Or: return "or";
        case Opcode::Xor: return "xor";
        case Opcode::Cmp: return "cmp";
        case Opcode::Test: return "test";
        case Opcode::Jcc: return "jcc";
        case Opcode::Jmp: return "jmp";
        case Opcode::Clflush: return "clflush";
        case Opcode::Rdtsc: return "rdtsc";
        case Opcode::Rdtscp: return "rdtscp";
        case Opcode::Cpuid: return "cpuid";
        case Opcode::Hlt: return "hlt";
        case Opcode::Nop: return "nop";
    }
    return "?";
}

namespace {
constexpr std::array<std::string_view, kUopKindCount> kUopNames = {
    "LOAD", "STORE", "ALU_MUL", "ALU_ADDSUB", "ALU_LOGIC", "BRANCH_COND", "BRANCH_UNCOND",
    "FLUSH_LINE", "READ_TSC", "SERIALIZE", "HALT", "NOP_OP",
};
}  // namespace

std::string_view uop_kind_name(UopKind kind) { return kUopNames[static_cast<size_t>(kind)]; }

std::optional<UopKind> parse_uop_kind(std::string_view name) {
    for (size_t i = 0; i < kUopNames.size(); ++i)
        if (kUopNames[i] == name) return static_cast<UopKind>(i);
    return std::nullopt;
}

std::vector<RegId> MicroOp::sources() const {
    std::vector<RegId> out;
    for (const auto& s : srcs)
        if (s) out.push_back(s->id);
    return out;
}

uint64_t evaluate_alu(AluFn fn, uint64_t lhs, uint64_t rhs, Width width) {
    const uint64_t mask = width_mask(width);
    switch (fn) {
        case AluFn::Mov: return rhs & mask;
        case AluFn::Add: return (lhs + rhs) & mask;
        case AluFn::Sub: return (lhs - rhs) & mask;
        case AluFn::Mul: return (lhs * rhs) & mask;
        case AluFn::And: return lhs & rhs & mask;
        case AluFn::Or: return (lhs | rhs) & mask;
        case AluFn::Xor: return (lhs ^ rhs) & mask;
        case AluFn::Cmp: return ((lhs - rhs) & mask) == 0 ? 1 : 0;
        case AluFn::Test: return (lhs & rhs & mask) == 0 ? 1 : 0;
    }
    return 0;
}

// ---------------------------------------------------------------------------
// Decoder

namespace {

AluFn alu_fn(Opcode op) {
    switch (op) {
        case Opcode::Imul: return AluFn::Mul;
        case Opcode::Mov: return AluFn::Mov;
        case Opcode::Add: return AluFn::Add;
        case Opcode::Sub: return AluFn::Sub;
        case Opcode::And: return AluFn::And;
        case Opcode::Or: return AluFn::Or;
        case Opcode::Xor: return AluFn::Xor;
        case Opcode::Cmp: return AluFn::Cmp;
        case Opcode::Test: return AluFn::Test;
        default: return AluFn::Mov;
    }
}

UopKind alu_kind(AluFn fn) {
    switch (fn) {
        case AluFn::Mul: return UopKind::AluMul;
        case AluFn::Add:
        case AluFn::Sub:
        case AluFn::Cmp: return UopKind::AluAddSub;
        default: return UopKind::AluLogic;
    }
}

bool writes_flags_only(AluFn fn) { return fn == AluFn::Cmp || fn == AluFn::Test; }

const RegView kFlags{kFlagsReg, Width::Qword};

void set_address(MicroOp& u, const MemOperand& m) {
    u.has_mem = true;
    u.disp = m.disp;
    u.mem_size = m.size;
    if (m.base) u.srcs[kSrcBase] = RegView{*m.base, Width::Qword};
    if (m.index) u.srcs[kSrcIndex] = RegView{*m.index, Width::Qword};
}

// Register-form ALU op writing `dst` (or flags) from lhs op rhs/imm.
MicroOp alu_uop(AluFn fn, RegView dst, std::optional<RegView> lhs, std::optional<RegView> rhs,
                std::optional<int64_t> imm) {
    MicroOp u;
    u.kind = alu_kind(fn);
    u.fn = fn;
    if (fn != AluFn::Mov) u.srcs[kSrcLhs] = lhs;
    u.srcs[kSrcRhs] = rhs;
    u.imm = imm;
    if (writes_flags_only(fn)) {
        u.dest = kFlags;
    } else {
        u.dest = dst;
        if (dst.width == Width::Byte) u.srcs[kSrcMerge] = RegView{dst.id, Width::Qword};
    }
    return u;
}

MicroOp load_uop(RegView dst, const MemOperand& m) {
    MicroOp u;
    u.kind = UopKind::Load;
    u.dest = dst;
    set_address(u, m);
    if (dst.width == Width::Byte) u.srcs[kSrcMerge] = RegView{dst.id, Width::Qword};
    return u;
}

MicroOp store_uop(const MemOperand& m, std::optional<RegView> data, std::optional<int64_t> imm) {
    MicroOp u;
    u.kind = UopKind::Store;
    set_address(u, m);
    u.srcs[kSrcRhs] = data;
    u.imm = imm;
    return u;
}

Width mem_width(const MemOperand& m) {
    switch (m.size) {
        case 1: return Width::Byte;
        case 4: return Width::Dword;
        default: return Width::Qword;
    }
}

}  // namespace

std::vector<MicroOp> decode(const MacroOp& op, uint32_t macro_index) {
    std::vector<MicroOp> out;
    const RegView t1{kFirstTemp, Width::Qword};
    const AluFn fn = alu_fn(op.opcode);

    switch (op.opcode) {
        case Opcode::Imul:
        case Opcode::Mov:
        case Opcode::Add:
        case Opcode::Sub:
        case Opcode::And:
        case Opcode::Or:
        case Opcode::Xor:
        case Opcode::Cmp:
        case Opcode::Test:
            switch (op.form) {
                case OperandForm::RegImm:
                    out.push_back(alu_uop(fn, *op.reg, op.reg, std::nullopt, op.imm));
                    break;
                case OperandForm::RegReg:
                    out.push_back(alu_uop(fn, *op.reg, op.reg, op.reg2, std::nullopt));
                    break;
                case OperandForm::RegMem:
                    if (fn == AluFn::Mov) {
                        out.push_back(load_uop(*op.reg, *op.mem));
                    } else {
                        out.push_back(load_uop(t1, *op.mem));
                        RegView tv{t1.id, op.reg->width};
                        out.push_back(alu_uop(fn, *op.reg, op.reg, tv, std::nullopt));
                    }
                    break;
                case OperandForm::MemReg:
                case OperandForm::MemImm: {
                    const bool has_reg = op.form == OperandForm::MemReg;
                    std::optional<RegView> data = has_reg ? op.reg2 : std::nullopt;
                    std::optional<int64_t> imm = has_reg ? std::nullopt : std::optional<int64_t>(op.imm);
                    if (fn == AluFn::Mov) {
                        out.push_back(store_uop(*op.mem, data, imm));
                        break;
                    }
                    // Read-modify-write: load into a temporary, operate, store back.
                    const Width w = mem_width(*op.mem);
                    const RegView tv{t1.id, w};
                    out.push_back(load_uop(t1, *op.mem));
                    if (writes_flags_only(fn)) {
                        out.push_back(alu_uop(fn, tv, tv, data, imm));
                    } else {
                        out.push_back(alu_uop(fn, t1, tv, data, imm));
                        out.push_back(store_uop(*op.mem, tv, std::nullopt));
                    }
                    break;
                }
                default:
                    break;
            }
            break;
        case Opcode::Jcc: {
            MicroOp u;
            u.kind = UopKind::BranchCond;
            u.srcs[kSrcLhs] = kFlags;
            u.cond = op.cond;
            u.target = op.target;
            out.push_back(u);
            break;
        }
        case Opcode::Jmp: {
            MicroOp u;
            u.kind = UopKind::BranchUncond;
            u.target = op.target;
            out.push_back(u);
            break;
        }
        case Opcode::Clflush: {
            MicroOp u;
            u.kind = UopKind::FlushLine;
            set_address(u, *op.mem);
            out.push_back(u);
            break;
        }
        case Opcode::Rdtsc:
        case Opcode::Rdtscp: {
            MicroOp u;
            u.kind = UopKind::ReadTsc;
            u.serializing = op.opcode == Opcode::Rdtscp;
            u.dest = RegView{kRax, Width::Qword};
            out.push_back(u);
            break;
        }
        case Opcode::Cpuid: {
            MicroOp u;
            u.kind = UopKind::Serialize;
            out.push_back(u);
            break;
        }
        case Opcode::Hlt: {
            MicroOp u;
            u.kind = UopKind::Halt;
            out.push_back(u);
            break;
        }
        case Opcode::Nop: {
            MicroOp u;
            u.kind = UopKind::NopOp;
            out.push_back(u);
            break;
        }
    }
    for (auto& u : out) u.macro_index = macro_index;
    return out;
}

Executable::Executable(Program program) : program_(std::move(program)) {
    offsets_.reserve(program_.ops.size() + 1);
    offsets_.push_back(0);
    for (uint32_t pc = 0; pc < program_.ops.size(); ++pc) {
        auto uops = decode(program_.ops[pc], pc);
        uops_.insert(uops_.end(), uops.begin(), uops.end());
        offsets_.push_back(static_cast<uint32_t>(uops_.size()));
    }
}

}  // namespace specsim
