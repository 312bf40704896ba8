#pragma once

// Simulated instruction set: registers, macro-ops, micro-ops, the textual
// assembler and the macro-op -> micro-op decoder.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace specsim {

using RegId = uint16_t;

inline constexpr RegId kNumGpr = 16;
inline constexpr RegId kFlagsReg = 16;
inline constexpr RegId kFirstTemp = 17;
inline constexpr RegId kRax = 0;

enum class Width : uint8_t { Byte = 1, Dword = 4, Qword = 8 };

/// A register operand: a whole 64-bit register or a low byte/dword view of it.
struct RegView {
    RegId id = 0;
    Width width = Width::Qword;
    bool operator==(const RegView&) const = default;
};

std::optional<RegView> parse_register(std::string_view name);
std::string register_name(RegView reg);

uint64_t read_view(uint64_t parent, Width width);
/// Byte writes keep bits 8..63 of the parent; dword writes zero-extend.
uint64_t write_view(uint64_t parent, Width width, uint64_t value);

/// [base + index + disp], `size` bytes wide.
struct MemOperand {
    std::optional<RegId> base;
    std::optional<RegId> index;
    int64_t disp = 0;
    uint8_t size = 8;
    bool operator==(const MemOperand&) const = default;
};

enum class Opcode : uint8_t {
    Imul, Mov, Add, Sub, And, Or, Xor, Cmp, Test,
    Jcc, Jmp, Clflush, Rdtsc, Rdtscp, Cpuid, Hlt, Nop,
};

enum class OperandForm : uint8_t { None, RegImm, RegReg, RegMem, MemReg, MemImm, Mem, Label };

/// Only ZF is modeled: je/jz branch on ZF=1, jne/jnz on ZF=0.
enum class Condition : uint8_t { Zero, NotZero };

struct MacroOp {
    Opcode opcode = Opcode::Nop;
    OperandForm form = OperandForm::None;
    std::optional<RegView> reg;   // first register operand
    std::optional<RegView> reg2;  // second register operand
    std::optional<MemOperand> mem;
    int64_t imm = 0;
    Condition cond = Condition::Zero;
    std::string target_label;
    uint32_t target = 0;
    int source_line = 0;

    /// Structural equality; the diagnostic source line is ignored.
    bool operator==(const MacroOp& other) const;
};

struct Program {
    std::vector<MacroOp> ops;
    std::map<std::string, uint32_t> labels;
    uint32_t entry = 0;
    std::map<RegId, uint64_t> initial_registers;

    bool operator==(const Program&) const = default;
};

class AssemblyError : public std::runtime_error {
public:
    AssemblyError(int line, const std::string& what);
    int line() const { return line_; }

private:
    int line_;
};

/// Parses Intel-syntax assembly. Besides instructions and `label:` lines the
/// text may hold `.init <reg>, <value>` and `.entry <label>` directives.
Program assemble(std::string_view source);

/// Inverse of assemble(): assemble(render(p)) == p.
std::string render(const Program& program);

std::string_view opcode_name(Opcode op);

// ---------------------------------------------------------------------------
// Micro-ops

enum class UopKind : uint8_t {
    Load, Store, AluMul, AluAddSub, AluLogic, BranchCond, BranchUncond,
    FlushLine, ReadTsc, Serialize, Halt, NopOp,
};
inline constexpr size_t kUopKindCount = 12;

std::string_view uop_kind_name(UopKind kind);
std::optional<UopKind> parse_uop_kind(std::string_view name);

enum class AluFn : uint8_t { Mov, Add, Sub, Mul, And, Or, Xor, Cmp, Test };

/// Fixed source slots of a micro-op. Each slot is either absent or a register.
enum SrcSlot : uint8_t { kSrcLhs = 0, kSrcRhs = 1, kSrcBase = 2, kSrcIndex = 3, kSrcMerge = 4 };
inline constexpr size_t kSrcSlots = 5;

struct MicroOp {
    UopKind kind = UopKind::NopOp;
    AluFn fn = AluFn::Mov;
    std::optional<RegView> dest;
    std::array<std::optional<RegView>, kSrcSlots> srcs{};
    std::optional<int64_t> imm;
    // Memory address expression (base/index registers live in srcs).
    bool has_mem = false;
    int64_t disp = 0;
    uint8_t mem_size = 8;
    bool serializing = false;  // READ_TSC only
    Condition cond = Condition::Zero;
    uint32_t target = 0;
    uint32_t macro_index = 0;

    std::vector<RegId> sources() const;
    bool operator==(const MicroOp&) const = default;
};

/// Decodes one macro-op. Temporaries are numbered from kFirstTemp and are
/// local to the returned sequence.
std::vector<MicroOp> decode(const MacroOp& op, uint32_t macro_index = 0);

/// ALU evaluation shared by the pipeline and tests. Operands are already
/// narrowed to `width`; Cmp/Test return the ZF value (0 or 1).
uint64_t evaluate_alu(AluFn fn, uint64_t lhs, uint64_t rhs, Width width);

/// A program together with its decoded micro-ops, flattened per macro-op.
class Executable {
public:
    explicit Executable(Program program);

    const Program& program() const { return program_; }
    size_t size() const { return program_.ops.size(); }
    /// Micro-ops of macro-op `pc`.
    const MicroOp* uops_begin(uint32_t pc) const { return uops_.data() + offsets_[pc]; }
    uint32_t uop_count(uint32_t pc) const { return offsets_[pc + 1] - offsets_[pc]; }
    size_t total_uops() const { return uops_.size(); }

private:
    Program program_;
    std::vector<MicroOp> uops_;
    std::vector<uint32_t> offsets_;
};

}  // namespace specsim
