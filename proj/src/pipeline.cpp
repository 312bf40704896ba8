#include "specsim/pipeline.hpp"

#include <algorithm>
#include <functional>
#include <limits>
#include <queue>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "specsim/error.hpp"

namespace specsim {

std::string_view to_string(Terminal t) {
    switch (t) {
        case Terminal::Exited: return "Exited";
        case Terminal::SegFault: return "SegFault";
        case Terminal::CycleBudgetExceeded: return "CycleBudgetExceeded";
    }
    return "?";
}

std::string_view to_string(EventKind k) {
    switch (k) {
        case EventKind::Fetch: return "fetch";
        case EventKind::Dispatch: return "dispatch";
        case EventKind::Complete: return "complete";
        case EventKind::Commit: return "commit";
        case EventKind::Predict: return "predict";
        case EventKind::Resolve: return "resolve";
        case EventKind::Mispredict: return "mispredict";
        case EventKind::Flush: return "flush";
        case EventKind::Terminate: return "terminate";
    }
    return "?";
}

std::string events_to_jsonl(const std::vector<Event>& events) {
    std::ostringstream os;
    for (const auto& e : events) {
        os << "{\"cycle\":" << e.cycle << ",\"event\":\"" << to_string(e.kind) << "\",\"pc\":" << e.pc
           << ",\"uop\":\"" << uop_kind_name(e.uop) << "\",\"depth\":" << e.depth;
        switch (e.kind) {
            case EventKind::Dispatch:
                if (e.uop == UopKind::Load) os << ",\"access\":\"" << to_string(static_cast<AccessOutcome>(e.aux)) << "\"";
                break;
            case EventKind::Predict: os << ",\"predicted_taken\":" << (e.aux ? "true" : "false"); break;
            case EventKind::Resolve: os << ",\"taken\":" << (e.aux ? "true" : "false"); break;
            case EventKind::Mispredict: os << ",\"penalty\":" << e.aux; break;
            case EventKind::Terminate: os << ",\"terminal\":\"" << to_string(static_cast<Terminal>(e.aux)) << "\""; break;
            default: break;
        }
        if (e.kind == EventKind::Fetch) os << ",\"speculative\":" << (e.depth > 0 ? "true" : "false");
        os << "}\n";
    }
    return os.str();
}

bool RunResult::resident(uint64_t addr) const {
    return std::binary_search(resident_lines.begin(), resident_lines.end(), line_of(addr));
}

namespace {

enum class St : uint8_t { Waiting, Ready, Blocked, Executing, Done, Stalled };

struct Consumer {
    uint64_t seq;
    uint64_t uid;
    uint8_t src;
};

struct Entry {
    uint64_t uid = 0;
    const MicroOp* uop = nullptr;
    uint32_t pc = 0;
    St st = St::Waiting;
    uint8_t pending = 0;
    uint32_t depth = 0;
    std::array<uint64_t, kSrcSlots> src{};
    uint64_t result = 0;
    uint64_t addr = 0;
    bool addr_known = false;
    bool mem_issued = false;
    bool faulted = false;
    AccessResult acc;
    bool predicted_taken = false;
    uint32_t alt_pc = 0;
    std::vector<Consumer> consumers;
};

constexpr size_t kRenameSlots = kFirstTemp + 4;

uint64_t size_mask(uint8_t size) { return size >= 8 ? ~0ull : ((1ull << (8 * size)) - 1); }

Width width_of_size(uint8_t size) {
    switch (size) {
        case 1: return Width::Byte;
        case 4: return Width::Dword;
        default: return Width::Qword;
    }
}

}  // namespace

struct Core::Impl {
    using HeapItem = std::tuple<uint64_t, uint64_t, uint64_t>;  // cycle, seq, uid

    const MicroArchProfile& p;
    const MemoryMap& map;
    std::vector<Entry> rob;
    uint64_t cap;

    // Per-run state.
    const Executable* exe = nullptr;
    const RunOptions* opt = nullptr;
    PredictorState* pred = nullptr;
    std::optional<MemorySystem> mem;
    RunResult res;
    uint64_t head = 0, tail = 0, next_uid = 1, cycle = 0;
    std::array<std::optional<uint64_t>, kRenameSlots> producer{};
    std::array<uint64_t, kRenameSlots> arch{};
    std::vector<uint64_t> ready;  // sorted by age
    std::priority_queue<HeapItem, std::vector<HeapItem>, std::greater<>> completions;
    std::vector<std::pair<uint64_t, uint64_t>> lb_wait, mb_wait, to_resolve;
    std::vector<uint64_t> spec_stack;
    uint64_t port_busy = 0;
    uint64_t inflight_stores = 0;
    uint32_t pc = 0;
    bool quiesced = false;
    std::optional<uint64_t> serialize_block;  // uid of the SERIALIZE gating fetch
    uint64_t fetch_resume = 0;
    bool more_work = false;  // something can progress next cycle without an event
    bool port_blocked = false;
    std::optional<Terminal> terminal;

    uint64_t ring_mask;

    Impl(const MicroArchProfile& profile, const MemoryMap& m) : p(profile), map(m), cap(profile.rob_entries) {
        uint64_t ring = 1;
        while (ring < cap) ring <<= 1;
        rob.resize(ring);
        ring_mask = ring - 1;
    }

    Entry& at(uint64_t seq) { return rob[seq & ring_mask]; }
    bool valid(uint64_t seq, uint64_t uid) { return seq >= head && seq < tail && at(seq).uid == uid; }

    void event(EventKind kind, const Entry& e, int64_t aux = 0) {
        if (!opt->record_events) return;
        res.events.push_back(Event{cycle, kind, e.pc, e.uop ? e.uop->kind : UopKind::NopOp, e.depth, aux});
    }

    void reset(const Executable& x, const RunOptions& o, PredictorState* predictor) {
        exe = &x;
        opt = &o;
        pred = predictor;
        mem.emplace(map, p, o.noise, o.seed);
        res = RunResult{};
        head = tail = 0;
        cycle = 0;
        producer.fill(std::nullopt);
        arch.fill(0);
        ready.clear();
        completions = {};
        lb_wait.clear();
        mb_wait.clear();
        to_resolve.clear();
        spec_stack.clear();
        port_busy = 0;
        inflight_stores = 0;
        pc = x.program().entry;
        quiesced = false;
        serialize_block.reset();
        fetch_resume = 0;
        terminal.reset();

        for (const auto& [reg, v] : x.program().initial_registers) arch.at(reg) = v;
        for (const auto& [reg, v] : o.registers) arch.at(reg) = v;
        for (const auto& [addr, v] : o.preload_qwords) {
            auto page = map.find(addr);
            if (!page || page->entry.kernel) throw ConfigError("preload address is not mapped user memory");
            mem->image().write(addr, 8, v);
        }
        for (auto line : o.warm_lines) mem->cache().insert(line);
    }

    // ------------------------------------------------------------------
    // Wakeup

    void make_ready(uint64_t seq, Entry& e) {
        if (e.uop->kind == UopKind::BranchCond) {
            to_resolve.emplace_back(seq, e.uid);
        } else {
            e.st = St::Ready;
            insert_ready(seq);
        }
    }

    void insert_ready(uint64_t seq) {
        if (ready.empty() || ready.back() < seq) {
            ready.push_back(seq);
            return;
        }
        auto pos = std::lower_bound(ready.begin(), ready.end(), seq);
        if (pos == ready.end() || *pos != seq) ready.insert(pos, seq);
    }

    void wake(std::vector<std::pair<uint64_t, uint64_t>>& waiters) {
        for (auto [seq, uid] : waiters) {
            if (!valid(seq, uid)) continue;
            Entry& e = at(seq);
            if (e.st != St::Blocked) continue;
            e.st = St::Ready;
            insert_ready(seq);
        }
        waiters.clear();
    }

    void complete(Entry& e) {
        if (e.uop->kind == UopKind::Load && mem->complete_load(e.acc, e.addr)) wake(mb_wait);
        e.st = St::Done;
        event(EventKind::Complete, e);
        for (const auto& c : e.consumers) {
            if (!valid(c.seq, c.uid)) continue;
            Entry& ce = at(c.seq);
            ce.src[c.src] = e.result;
            if (--ce.pending == 0) make_ready(c.seq, ce);
        }
        e.consumers.clear();
    }

    // ------------------------------------------------------------------
    // Branches

    static BranchDirection direction(const Entry& e) {
        return e.uop->target <= e.pc ? BranchDirection::Backward : BranchDirection::Forward;
    }

    bool branch_taken(const Entry& e) const {
        const bool zf = e.src[kSrcLhs] & 1;
        return e.uop->cond == Condition::Zero ? zf : !zf;
    }

    void resolve(uint64_t seq) {
        Entry& e = at(seq);
        const bool taken = branch_taken(e);
        pred->train(e.pc, direction(e), taken);
        e.st = St::Done;
        spec_stack.erase(std::find(spec_stack.begin(), spec_stack.end(), seq));
        if (taken == e.predicted_taken) {
            event(EventKind::Resolve, e, taken);
            return;
        }
        ++res.mispredictions;
        const int64_t penalty = flush_after(seq);
        event(EventKind::Mispredict, e, penalty);
        pc = e.alt_pc;
        fetch_resume = cycle + static_cast<uint64_t>(penalty);
    }

    /// Squashes everything younger than `seq`; returns the refetch penalty.
    int64_t flush_after(uint64_t seq) {
        uint64_t counted = 0;
        bool halted = false;
        bool zero_fault = false;
        for (uint64_t s = seq + 1; s < tail; ++s) {
            Entry& e = at(s);
            if (e.uop->kind == UopKind::Halt) halted = true;
            else if (!halted) ++counted;
            if (e.uop->kind == UopKind::Load && e.mem_issued) {
                if (e.acc.outcome == AccessOutcome::GPFZero) zero_fault = true;
                if (mem->retire_load(e.acc, e.addr, e.st == St::Done)) wake(mb_wait);
                if (mem->load_buffer().has_room()) wake(lb_wait);
            }
            if (e.uop->kind == UopKind::Store) --inflight_stores;
            if (serialize_block && *serialize_block == e.uid) serialize_block.reset();
            event(EventKind::Flush, e);
            e.consumers.clear();
            e.uid = 0;
            ++res.flushed;
        }
        tail = seq + 1;
        ready.erase(std::upper_bound(ready.begin(), ready.end(), seq), ready.end());
        spec_stack.erase(std::upper_bound(spec_stack.begin(), spec_stack.end(), seq), spec_stack.end());
        producer.fill(std::nullopt);
        for (uint64_t s = head; s <= seq; ++s) {
            const Entry& e = at(s);
            if (e.uop->dest) producer[e.uop->dest->id] = s;
        }
        quiesced = false;
        int64_t penalty = static_cast<int64_t>(p.flush_base_cost) + static_cast<int64_t>(p.flush_per_uop_cost * counted);
        if (zero_fault) penalty += p.flush_fault_modifier;
        return std::max<int64_t>(penalty, 0);
    }

    void resolve_stage() {
        if (to_resolve.empty()) return;
        std::sort(to_resolve.begin(), to_resolve.end());
        auto list = std::move(to_resolve);
        to_resolve.clear();
        for (auto [seq, uid] : list)
            if (valid(seq, uid)) resolve(seq);
    }

    // ------------------------------------------------------------------
    // Commit

    void commit_stage() {
        uint32_t n = 0;
        for (; n < p.commit_width && head < tail; ++n) {
            Entry& e = at(head);
            if (e.st == St::Stalled || (e.st == St::Done && e.faulted)) {
                res.fault_pc = e.pc;
                terminal = Terminal::SegFault;
                return;
            }
            if (e.st != St::Done) return;
            const MicroOp& u = *e.uop;
            if (u.dest) {
                arch[u.dest->id] = e.result;
                if (producer[u.dest->id] == head) producer[u.dest->id].reset();
            }
            switch (u.kind) {
                case UopKind::Load:
                    if (mem->retire_load(e.acc, e.addr, true)) wake(mb_wait);
                    wake(lb_wait);
                    break;
                case UopKind::Store:
                    mem->image().write(e.addr, u.mem_size, e.result);
                    mem->cache().insert(e.addr);
                    res.stores.push_back(StoreRecord{e.addr, u.mem_size, e.result});
                    --inflight_stores;
                    break;
                case UopKind::Serialize:
                    if (serialize_block && *serialize_block == e.uid) serialize_block.reset();
                    break;
                default:
                    break;
            }
            event(EventKind::Commit, e);
            e.uid = 0;
            ++head;
            ++res.committed;
            if (u.kind == UopKind::Halt) {
                terminal = Terminal::Exited;
                return;
            }
        }
        if (n == p.commit_width && head < tail && at(head).st == St::Done) more_work = true;
    }

    // ------------------------------------------------------------------
    // Dispatch / execute

    uint64_t address(const Entry& e) const {
        uint64_t a = static_cast<uint64_t>(e.uop->disp);
        if (e.uop->srcs[kSrcBase]) a += e.src[kSrcBase];
        if (e.uop->srcs[kSrcIndex]) a += e.src[kSrcIndex];
        return a;
    }

    bool older_store_conflict(uint64_t seq, uint64_t addr, uint8_t size) {
        if (inflight_stores == 0) return false;
        for (uint64_t s = head; s < seq; ++s) {
            const Entry& o = at(s);
            if (o.uop->kind != UopKind::Store) continue;
            if (!o.addr_known) return true;
            if (o.addr < addr + size && addr < o.addr + o.uop->mem_size) return true;
        }
        return false;
    }

    bool older_memory_pending(uint64_t seq) {
        for (uint64_t s = head; s < seq; ++s) {
            const Entry& o = at(s);
            const UopKind k = o.uop->kind;
            if ((k == UopKind::Load || k == UopKind::Store || k == UopKind::FlushLine) && o.st != St::Done) return true;
        }
        return false;
    }

    uint64_t alu_result(const Entry& e) const {
        const MicroOp& u = *e.uop;
        const auto& lhs_v = u.srcs[kSrcLhs];
        const auto& rhs_v = u.srcs[kSrcRhs];
        Width w = u.dest ? u.dest->width : Width::Qword;
        if (lhs_v) w = lhs_v->width;
        else if (rhs_v) w = rhs_v->width;
        const uint64_t lhs = lhs_v ? read_view(e.src[kSrcLhs], lhs_v->width) : 0;
        const uint64_t rhs = rhs_v ? read_view(e.src[kSrcRhs], rhs_v->width) : static_cast<uint64_t>(u.imm.value_or(0));
        const uint64_t r = evaluate_alu(u.fn, lhs, rhs, w);
        if (u.dest->id == kFlagsReg) return r;
        const uint64_t parent = u.srcs[kSrcMerge] ? e.src[kSrcMerge] : 0;
        return write_view(parent, u.dest->width, r);
    }

    void finish_at(uint64_t seq, Entry& e, uint64_t when) {
        e.st = St::Executing;
        completions.emplace(when, seq, e.uid);
    }

    bool user_accessible(uint64_t addr) const {
        auto page = map.find(addr);
        return page && (!page->entry.kernel || opt->privilege == Privilege::Kernel);
    }

    void dispatch_stage() {
        port_busy = 0;
        port_blocked = false;
        if (ready.empty()) return;
        size_t keep = 0;
        for (size_t i = 0; i < ready.size(); ++i) {
            const uint64_t seq = ready[i];
            Entry& e = at(seq);
            const MicroOp& u = *e.uop;

            int port = -1;
            for (auto pid : p.ports_of(u.kind))
                if (!(port_busy >> pid & 1)) {
                    port = static_cast<int>(pid);
                    break;
                }
            if (port < 0) {
                port_blocked = true;
                ready[keep++] = seq;
                continue;
            }
            if (u.kind == UopKind::Serialize && seq != head) {
                ready[keep++] = seq;
                continue;
            }
            if (u.kind == UopKind::ReadTsc && u.serializing && older_memory_pending(seq)) {
                ready[keep++] = seq;
                continue;
            }

            const uint32_t lat = p.latency_of(u.kind);
            switch (u.kind) {
                case UopKind::Load: {
                    const uint64_t addr = address(e);
                    if (older_store_conflict(seq, addr, u.mem_size)) {
                        ready[keep++] = seq;
                        continue;
                    }
                    AccessResult r = mem->access(addr, u.mem_size, opt->privilege, cycle);
                    if (r.outcome == AccessOutcome::LoadBufferFull || r.outcome == AccessOutcome::MissBufferFull) {
                        e.st = St::Blocked;
                        (r.outcome == AccessOutcome::LoadBufferFull ? lb_wait : mb_wait).emplace_back(seq, e.uid);
                        continue;
                    }
                    e.addr = addr;
                    e.addr_known = true;
                    e.mem_issued = true;
                    e.acc = r;
                    e.faulted = r.faulted;
                    const Width w = width_of_size(u.mem_size);
                    const uint64_t parent = u.srcs[kSrcMerge] ? e.src[kSrcMerge] : 0;
                    e.result = write_view(parent, u.dest->width == Width::Byte ? Width::Byte : w, r.value);
                    event(EventKind::Dispatch, e, static_cast<int64_t>(r.outcome));
                    if (r.outcome == AccessOutcome::PFStall) e.st = St::Stalled;
                    else finish_at(seq, e, r.ready_cycle);
                    break;
                }
                case UopKind::Store: {
                    e.addr = address(e);
                    e.addr_known = true;
                    const uint64_t data = u.srcs[kSrcRhs] ? e.src[kSrcRhs] : static_cast<uint64_t>(u.imm.value_or(0));
                    e.result = data & size_mask(u.mem_size);
                    e.faulted = !user_accessible(e.addr);
                    event(EventKind::Dispatch, e);
                    finish_at(seq, e, cycle + lat);
                    break;
                }
                case UopKind::FlushLine:
                    mem->cache().flush(address(e));
                    event(EventKind::Dispatch, e);
                    finish_at(seq, e, cycle + lat);
                    break;
                case UopKind::ReadTsc:
                    e.result = cycle;
                    event(EventKind::Dispatch, e);
                    finish_at(seq, e, cycle + lat);
                    break;
                case UopKind::AluMul:
                case UopKind::AluAddSub:
                case UopKind::AluLogic:
                    e.result = alu_result(e);
                    event(EventKind::Dispatch, e);
                    finish_at(seq, e, cycle + lat);
                    break;
                default:
                    event(EventKind::Dispatch, e);
                    finish_at(seq, e, cycle + lat);
                    break;
            }
            port_busy |= 1ull << port;
        }
        ready.resize(keep);
    }

    // ------------------------------------------------------------------
    // Fetch / rename

    void fetch_stage() {
        if (quiesced || serialize_block || cycle < fetch_resume) return;
        uint32_t budget = p.fetch_width;
        while (budget > 0) {
            if (pc >= exe->size()) {
                quiesced = true;
                return;
            }
            const uint32_t n = exe->uop_count(pc);
            if (n > budget && budget < p.fetch_width) return;
            if (tail - head + n > cap) return;
            const MicroOp* uops = exe->uops_begin(pc);
            uint32_t next_pc = pc + 1;
            bool end_group = false;
            for (uint32_t i = 0; i < n; ++i) {
                const uint64_t seq = tail++;
                Entry& e = at(seq);
                e.uid = next_uid++;
                e.uop = &uops[i];
                e.pc = pc;
                e.st = St::Waiting;
                e.pending = 0;
                e.depth = static_cast<uint32_t>(spec_stack.size());
                e.addr_known = false;
                e.mem_issued = false;
                e.faulted = false;
                e.result = 0;
                e.consumers.clear();
                const MicroOp& u = *e.uop;
                for (uint8_t s = 0; s < kSrcSlots; ++s) {
                    if (!u.srcs[s]) continue;
                    const RegId id = u.srcs[s]->id;
                    if (auto prod = producer[id]) {
                        Entry& pe = at(*prod);
                        if (pe.st == St::Done) {
                            e.src[s] = pe.result;
                        } else {
                            pe.consumers.push_back(Consumer{seq, e.uid, s});
                            ++e.pending;
                        }
                    } else {
                        e.src[s] = arch[id];
                    }
                }
                if (u.dest) producer[u.dest->id] = seq;
                ++res.issued;
                event(EventKind::Fetch, e);

                switch (u.kind) {
                    case UopKind::BranchUncond:
                        e.st = St::Done;
                        next_pc = u.target;
                        break;
                    case UopKind::BranchCond:
                        end_group = true;
                        if (e.pending == 0) {
                            const bool taken = branch_taken(e);
                            pred->train(e.pc, direction(e), taken);
                            e.st = St::Done;
                            event(EventKind::Resolve, e, taken);
                            next_pc = taken ? u.target : pc + 1;
                        } else {
                            e.predicted_taken = pred->predict(e.pc, direction(e));
                            e.alt_pc = e.predicted_taken ? pc + 1 : u.target;
                            next_pc = e.predicted_taken ? u.target : pc + 1;
                            spec_stack.push_back(seq);
                            res.max_speculation_depth =
                                std::max(res.max_speculation_depth, static_cast<uint32_t>(spec_stack.size()));
                            event(EventKind::Predict, e, e.predicted_taken);
                        }
                        break;
                    default:
                        if (u.kind == UopKind::Halt) {
                            quiesced = true;
                            end_group = true;
                        }
                        if (u.kind == UopKind::Serialize) {
                            serialize_block = e.uid;
                            end_group = true;
                        }
                        if (u.kind == UopKind::Store) ++inflight_stores;
                        if (e.pending == 0) make_ready(seq, e);
                        break;
                }
            }
            budget -= std::min(budget, n);
            pc = next_pc;
            if (end_group) {
                if (!quiesced && !serialize_block) more_work = true;
                return;
            }
        }
        more_work = true;
    }

    void check_invariants() {
        if (tail - head > cap) throw std::logic_error("ROB overflow");
        const auto& lb = mem->load_buffer();
        if (lb.capacity() && lb.size() > *lb.capacity()) throw std::logic_error("load buffer overflow");
        const auto& mb = mem->miss_buffer();
        if (mb.size() > mb.capacity()) throw std::logic_error("miss buffer overflow");
    }

    // ------------------------------------------------------------------

    RunResult run(const Executable& x, const RunOptions& o, PredictorState* predictor) {
        PredictorState local(p.static_forward);
        reset(x, o, predictor ? predictor : &local);

        while (!terminal) {
            if (head == tail && pc >= exe->size()) {
                terminal = Terminal::Exited;
                break;
            }
            if (cycle > o.cycle_budget) {
                terminal = Terminal::CycleBudgetExceeded;
                cycle = o.cycle_budget;
                break;
            }
            more_work = false;
            while (!completions.empty() && std::get<0>(completions.top()) <= cycle) {
                auto [when, seq, uid] = completions.top();
                completions.pop();
                if (valid(seq, uid)) complete(at(seq));
            }
            resolve_stage();
            commit_stage();
            if (terminal) break;
            dispatch_stage();
            const size_t ready_before_fetch = ready.size();
            fetch_stage();
            check_invariants();

            if (more_work || port_blocked || ready.size() > ready_before_fetch || !to_resolve.empty()) {
                ++cycle;
                continue;
            }
            uint64_t next = std::numeric_limits<uint64_t>::max();
            if (!completions.empty()) next = std::get<0>(completions.top());
            if (!quiesced && !serialize_block && cycle < fetch_resume) next = std::min(next, fetch_resume);
            // A stalled load at the head faults on the next commit.
            if (head < tail && at(head).st == St::Stalled) next = std::min(next, cycle + 1);
            if (head == tail && pc >= exe->size()) next = std::min(next, cycle + 1);
            if (next == std::numeric_limits<uint64_t>::max()) {
                cycle = o.cycle_budget + 1;
            } else {
                cycle = std::max(cycle + 1, next);
            }
        }

        // Whatever is still in flight never commits.
        res.flushed += tail - head;
        res.terminal = *terminal;
        res.cycles = cycle;
        for (RegId r = 0; r < kNumGpr; ++r) res.registers[r] = arch[r];
        res.flags = arch[kFlagsReg];
        res.resident_lines = mem->cache().lines();
        if (o.record_events) {
            Event t;
            t.cycle = cycle;
            t.kind = EventKind::Terminate;
            t.pc = pc;
            t.aux = static_cast<int64_t>(*terminal);
            res.events.push_back(t);
        }
        RunResult out = std::move(res);
        res = RunResult{};
        mem.reset();
        for (auto& e : rob) {
            e.uid = 0;
            e.consumers.clear();
        }
        return out;
    }
};

Core::Core(const MicroArchProfile& profile, const MemoryMap& map)
    : profile_(profile), map_(&map) {
    validate(profile_);
    impl_ = std::make_unique<Impl>(profile_, *map_);
}

Core::~Core() = default;

RunResult Core::run(const Executable& exe, const RunOptions& options, PredictorState* predictor) {
    return impl_->run(exe, options, predictor);
}

RunResult run(const Executable& exe, const MicroArchProfile& profile, const MemoryMap& map, const RunOptions& options,
              PredictorState* predictor) {
    Core core(profile, map);
    return core.run(exe, options, predictor);
}

}  // namespace specsim
