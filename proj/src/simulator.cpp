#include "warptile/simulator.h"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "warptile/error.h"
#include "warptile/gpu_cost_model.h"

namespace warptile {

namespace {

constexpr int kMaxLanes = 32;
using Lanes = std::array<double, kMaxLanes>;

struct Val {
    Lanes v;
    uint32_t poison = 0;
};

enum class NK {
    Int,
    Float,
    Lane,
    Warp,
    WarpInBlock,
    LoopVar,
    Reg,
    LoadShared,
    LoadGlobal,
    Unary,
    Binary,
    Select,
    Unreachable
};

struct CNode {
    NK kind = NK::Int;
    int64_t ival = 0;
    double fval = 0;
    int slot = -1;  // register / loop var / shared / buffer slot, or dimension
    int a = -1, b = -1, c = -1;
    std::vector<int> coords;
    ir::UnOp uop = ir::UnOp::Neg;
    ir::BinOp bop = ir::BinOp::Add;
    ir::ScalarType type = ir::ScalarType::Index;
    int instr = -1;
};

enum class SK { Assign, Shuffle, StoreShared, StoreGlobal, If, Loop, SyncWarp, SyncBlock };

struct CStmt {
    SK kind = SK::Assign;
    int dst = -1;  // register or loop var or shared/buffer slot
    int src = -1;  // shuffle source register
    int e0 = -1, e1 = -1;
    std::vector<int> coords;
    uint32_t mask = 0;
    int64_t count = 0;
    std::vector<CStmt> body;
};

struct GlobalSlot {
    const ir::BufferDecl *decl = nullptr;
    Buffer *buf = nullptr;
    std::vector<uint8_t> written;
};

struct SharedSlot {
    const ir::SharedDecl *decl = nullptr;
    std::vector<double> data;
    std::vector<int32_t> owner;
};

struct WarpState {
    std::vector<Lanes> regs;
    std::vector<uint32_t> set;
    std::vector<uint32_t> poison;
    std::vector<int64_t> loops;
    std::array<Lanes, 3> lane{};
    std::array<Lanes, 3> warp{};
    Dim3 warp_coord{};
    uint32_t base_mask = 0;
    int64_t warp_in_block = 0;
};

BinaryOp to_stencil_op(ir::BinOp op) {
    switch (op) {
    case ir::BinOp::Add:
        return BinaryOp::Add;
    case ir::BinOp::Sub:
        return BinaryOp::Sub;
    case ir::BinOp::Mul:
        return BinaryOp::Mul;
    case ir::BinOp::Div:
        return BinaryOp::Div;
    case ir::BinOp::Min:
        return BinaryOp::Min;
    default:
        return BinaryOp::Max;
    }
}

class Machine {
public:
    Machine(const ir::Kernel &k, BufferMap &memory, const SimConfig &cfg) : k_(k), cfg_(cfg) {
        if (k.warp_size < 1 || k.warp_size > kMaxLanes) throw SimError("warp size must be in [1, 32]");
        if (k.warp[0] * k.warp[1] * k.warp[2] != k.warp_size)
            throw SimError("warp shape " + to_string(k.warp) + " does not hold " + std::to_string(k.warp_size) +
                           " lanes");
        full_mask_ = k.warp_size == 32 ? 0xffffffffu : ((1u << k.warp_size) - 1u);
        for (const auto &b : k.buffers) {
            auto it = memory.find(b.name);
            if (it == memory.end()) {
                if (!b.output) throw SimError("missing input buffer '" + b.name + "'");
                it = memory.emplace(b.name, Buffer::zeros(b.kind, b.origin, b.extents)).first;
            }
            if (it->second.extents != b.extents || it->second.origin != b.origin)
                throw SimError("buffer '" + b.name + "' does not match its declared shape");
            GlobalSlot gs;
            gs.decl = &b;
            gs.buf = &it->second;
            if (b.output) gs.written.assign(static_cast<size_t>(it->second.volume()), 0);
            globals_.push_back(std::move(gs));
        }
        for (const auto &s : k.shared) {
            if (s.size < 0) throw SimError("negative shared array size");
            SharedSlot ss;
            ss.decl = &s;
            shared_.push_back(std::move(ss));
        }
        body_ = compile_block(k.body, true);
        has_block_sync_ = false;
        for (const auto &s : body_)
            if (s.kind == SK::SyncBlock) has_block_sync_ = true;
    }

    SimResult run() {
        const Dim3 wpb = warps_per_block(k_.block, k_.warp);
        const int64_t nwarps = wpb[0] * wpb[1] * wpb[2];
        std::vector<std::vector<const CStmt *>> segments(1);
        for (const auto &s : body_) {
            if (s.kind == SK::SyncBlock) {
                segments.emplace_back();
                continue;
            }
            segments.back().push_back(&s);
        }
        std::vector<WarpState> warps(static_cast<size_t>(nwarps));
        std::vector<int64_t> order(static_cast<size_t>(nwarps));
        int64_t block_linear = 0;
        for (int64_t bz = 0; bz < k_.grid[2]; ++bz)
            for (int64_t by = 0; by < k_.grid[1]; ++by)
                for (int64_t bx = 0; bx < k_.grid[0]; ++bx, ++block_linear) {
                    for (auto &sh : shared_) {
                        sh.data.assign(static_cast<size_t>(sh.decl->size), 0.0);
                        sh.owner.assign(static_cast<size_t>(sh.decl->size), -1);
                    }
                    for (int64_t w = 0; w < nwarps; ++w) init_warp(warps[w], {bx, by, bz}, w, wpb);
                    std::iota(order.begin(), order.end(), 0);
                    if (cfg_.shuffle_warp_order) {
                        std::mt19937_64 rng(cfg_.order_seed * 1000003u + static_cast<uint64_t>(block_linear));
                        std::shuffle(order.begin(), order.end(), rng);
                    }
                    block_ = block_linear;
                    for (size_t seg = 0; seg < segments.size(); ++seg) {
                        if (seg > 0) ++result_.stats.sync_blocks;
                        for (int64_t w : order) {
                            cur_ = &warps[w];
                            for (const CStmt *s : segments[seg]) exec(*s, cur_->base_mask);
                        }
                    }
                    result_.stats.warps += nwarps;
                }
        return std::move(result_);
    }

private:
    // ---------------------------------------------------------------- compile

    int reg_slot(const std::string &name) {
        auto [it, fresh] = regs_.emplace(name, static_cast<int>(regs_.size()));
        return it->second;
    }

    int loop_slot(const std::string &name) {
        auto [it, fresh] = loops_.emplace(name, static_cast<int>(loops_.size()));
        return it->second;
    }

    int shared_slot(const std::string &name) const {
        for (size_t i = 0; i < shared_.size(); ++i)
            if (shared_[i].decl->name == name) return static_cast<int>(i);
        throw SimError("unknown shared array '" + name + "'");
    }

    int global_slot(const std::string &name) const {
        for (size_t i = 0; i < globals_.size(); ++i)
            if (globals_[i].decl->name == name) return static_cast<int>(i);
        throw SimError("unknown global buffer '" + name + "'");
    }

    int compile_expr(const ir::ExprP &e) {
        if (!e) throw SimError("null expression");
        CNode n;
        std::visit(
            [&](const auto &x) {
                using T = std::decay_t<decltype(x)>;
                if constexpr (std::is_same_v<T, ir::IntConst>) {
                    n.kind = NK::Int;
                    n.ival = x.value;
                } else if constexpr (std::is_same_v<T, ir::FloatConst>) {
                    n.kind = NK::Float;
                    n.fval = x.value;
                } else if constexpr (std::is_same_v<T, ir::LaneId>) {
                    n.kind = NK::Lane;
                    n.slot = check_dim(x.dim);
                } else if constexpr (std::is_same_v<T, ir::WarpId>) {
                    n.kind = NK::Warp;
                    n.slot = check_dim(x.dim);
                } else if constexpr (std::is_same_v<T, ir::WarpInBlock>) {
                    n.kind = NK::WarpInBlock;
                } else if constexpr (std::is_same_v<T, ir::LoopVar>) {
                    n.kind = NK::LoopVar;
                    auto it = loops_.find(x.name);
                    if (it == loops_.end()) throw SimError("loop variable '" + x.name + "' used outside its loop");
                    n.slot = it->second;
                } else if constexpr (std::is_same_v<T, ir::Reg>) {
                    n.kind = NK::Reg;
                    n.slot = reg_slot(x.name);
                } else if constexpr (std::is_same_v<T, ir::LoadShared>) {
                    n.kind = NK::LoadShared;
                    n.slot = shared_slot(x.array);
                    n.a = compile_expr(x.index);
                } else if constexpr (std::is_same_v<T, ir::LoadGlobal>) {
                    n.kind = NK::LoadGlobal;
                    n.slot = global_slot(x.buffer);
                    if (x.coords.size() != globals_[n.slot].decl->extents.size())
                        throw SimError("load from '" + x.buffer + "' has the wrong number of coordinates");
                    for (const auto &c : x.coords) n.coords.push_back(compile_expr(c));
                    n.instr = next_instr_++;
                } else if constexpr (std::is_same_v<T, ir::Unary>) {
                    n.kind = NK::Unary;
                    n.uop = x.op;
                    n.type = x.type;
                    n.a = compile_expr(x.arg);
                } else if constexpr (std::is_same_v<T, ir::Binary>) {
                    n.kind = NK::Binary;
                    n.bop = x.op;
                    n.type = x.type;
                    n.a = compile_expr(x.lhs);
                    n.b = compile_expr(x.rhs);
                } else if constexpr (std::is_same_v<T, ir::Select>) {
                    n.kind = NK::Select;
                    n.a = compile_expr(x.cond);
                    n.b = compile_expr(x.if_true);
                    n.c = compile_expr(x.if_false);
                } else {
                    n.kind = NK::Unreachable;
                }
            },
            e->node);
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    static int check_dim(int d) {
        if (d < 0 || d > 2) throw SimError("dimension out of range");
        return d;
    }

    std::vector<CStmt> compile_block(const ir::Block &b, bool top) {
        std::vector<CStmt> out;
        for (const auto &s : b) out.push_back(compile_stmt(s, top));
        return out;
    }

    CStmt compile_stmt(const ir::Stmt &s, bool top) {
        CStmt c;
        std::visit(
            [&](const auto &x) {
                using T = std::decay_t<decltype(x)>;
                if constexpr (std::is_same_v<T, ir::Assign>) {
                    c.kind = SK::Assign;
                    c.e0 = compile_expr(x.value);
                    c.dst = reg_slot(x.reg);
                } else if constexpr (std::is_same_v<T, ir::Shuffle>) {
                    c.kind = SK::Shuffle;
                    c.src = reg_slot(x.src);
                    c.e0 = compile_expr(x.src_lane);
                    c.dst = reg_slot(x.dst);
                    c.mask = x.mask;
                } else if constexpr (std::is_same_v<T, ir::StoreShared>) {
                    c.kind = SK::StoreShared;
                    c.dst = shared_slot(x.array);
                    c.e0 = compile_expr(x.index);
                    c.e1 = compile_expr(x.value);
                } else if constexpr (std::is_same_v<T, ir::StoreGlobal>) {
                    c.kind = SK::StoreGlobal;
                    c.dst = global_slot(x.buffer);
                    if (!globals_[c.dst].decl->output)
                        throw SimError("store to input buffer '" + x.buffer + "'");
                    if (x.coords.size() != globals_[c.dst].decl->extents.size())
                        throw SimError("store to '" + x.buffer + "' has the wrong number of coordinates");
                    for (const auto &e : x.coords) c.coords.push_back(compile_expr(e));
                    c.e0 = compile_expr(x.value);
                } else if constexpr (std::is_same_v<T, ir::If>) {
                    c.kind = SK::If;
                    c.e0 = compile_expr(x.cond);
                    c.body = compile_block(x.then_body, false);
                } else if constexpr (std::is_same_v<T, ir::Loop>) {
                    c.kind = SK::Loop;
                    if (loops_.count(x.var)) throw SimError("loop variable '" + x.var + "' shadows an outer loop");
                    c.dst = loop_slot(x.var);
                    c.count = x.count;
                    c.body = compile_block(x.body, false);
                    max_loop_depth_ = std::max(max_loop_depth_, static_cast<int>(loops_.size()));
                    loops_.erase(x.var);
                } else if constexpr (std::is_same_v<T, ir::SyncWarp>) {
                    c.kind = SK::SyncWarp;
                } else {
                    if (!top) throw SimError("block barrier must appear at the top level of the kernel");
                    c.kind = SK::SyncBlock;
                }
            },
            s.node);
        return c;
    }

    // ---------------------------------------------------------------- state

    void init_warp(WarpState &w, const Dim3 &bidx, int64_t linear, const Dim3 &wpb) {
        w.regs.assign(regs_.size(), Lanes{});
        w.set.assign(regs_.size(), 0);
        w.poison.assign(regs_.size(), 0);
        w.loops.assign(static_cast<size_t>(max_loop_depth_) + 1, 0);
        w.warp_in_block = linear;
        Dim3 wc{linear % wpb[0], (linear / wpb[0]) % wpb[1], linear / (wpb[0] * wpb[1])};
        w.base_mask = 0;
        for (int l = 0; l < k_.warp_size; ++l) {
            Dim3 lc{l % k_.warp[0], (l / k_.warp[0]) % k_.warp[1], l / (k_.warp[0] * k_.warp[1])};
            bool active = l < k_.warp[0] * k_.warp[1] * k_.warp[2];
            for (int d = 0; d < 3; ++d) {
                int64_t t = wc[d] * k_.warp[d] + lc[d];
                if (t >= k_.block[d]) active = false;
                w.lane[d][l] = static_cast<double>(lc[d]);
                w.warp[d][l] = static_cast<double>((bidx[d] * k_.block[d] + t) / k_.warp[d]);
            }
            if (active) w.base_mask |= 1u << l;
        }
        for (int d = 0; d < 3; ++d) w.warp_coord[d] = (bidx[d] * k_.block[d] + wc[d] * k_.warp[d]) / k_.warp[d];
    }

    // ---------------------------------------------------------------- eval

    template <typename F>
    void for_lanes(uint32_t mask, F &&f) const {
        while (mask) {
            int l = std::countr_zero(mask);
            f(l);
            mask &= mask - 1;
        }
    }

    void require_clean(const Val &v, uint32_t mask, const char *what) const {
        if (v.poison & mask) throw SimError(std::string("poisoned value used in ") + what);
    }

    static int64_t to_index(double v) { return static_cast<int64_t>(v); }

    Val eval(int id, uint32_t mask) {
        const CNode &n = nodes_[id];
        Val out;
        switch (n.kind) {
        case NK::Int:
            out.v.fill(static_cast<double>(n.ival));
            return out;
        case NK::Float:
            out.v.fill(n.fval);
            return out;
        case NK::Lane:
            out.v = cur_->lane[n.slot];
            return out;
        case NK::Warp:
            out.v = cur_->warp[n.slot];
            return out;
        case NK::WarpInBlock:
            out.v.fill(static_cast<double>(cur_->warp_in_block));
            return out;
        case NK::LoopVar:
            out.v.fill(static_cast<double>(cur_->loops[n.slot]));
            return out;
        case NK::Reg: {
            if ((cur_->set[n.slot] & mask) != mask) throw SimError("read of never-written register '" + reg_name(n.slot) + "'");
            out.v = cur_->regs[n.slot];
            out.poison = cur_->poison[n.slot] & mask;
            return out;
        }
        case NK::LoadShared: {
            Val idx = eval(n.a, mask);
            require_clean(idx, mask, "shared index");
            SharedSlot &sh = shared_[n.slot];
            for_lanes(mask, [&](int l) {
                int64_t i = to_index(idx.v[l]);
                if (i < 0 || i >= sh.decl->size)
                    throw SimError("shared access out of bounds: " + sh.decl->name + "[" + std::to_string(i) + "]");
                if (sh.owner[i] < 0)
                    throw SimError("read of unwritten shared memory: " + sh.decl->name + "[" + std::to_string(i) + "]");
                if (!has_block_sync_ && sh.owner[i] != cur_->warp_in_block)
                    throw SimError("cross-warp shared read without a block barrier: " + sh.decl->name);
                out.v[l] = sh.data[i];
            });
            return out;
        }
        case NK::LoadGlobal:
            return load_global(n, mask);
        case NK::Unary: {
            Val a = eval(n.a, mask);
            require_clean(a, mask, "arithmetic");
            for_lanes(mask, [&](int l) { out.v[l] = unary(n, a.v[l]); });
            return out;
        }
        case NK::Binary: {
            Val a = eval(n.a, mask);
            if (n.bop == ir::BinOp::And || n.bop == ir::BinOp::Or) {
                require_clean(a, mask, "condition");
                uint32_t need = 0;
                for_lanes(mask, [&](int l) {
                    bool t = a.v[l] != 0;
                    if (n.bop == ir::BinOp::And ? t : !t) need |= 1u << l;
                    out.v[l] = t ? 1.0 : 0.0;
                });
                if (need) {
                    Val b = eval(n.b, need);
                    require_clean(b, need, "condition");
                    for_lanes(need, [&](int l) { out.v[l] = b.v[l] != 0 ? 1.0 : 0.0; });
                }
                return out;
            }
            Val b = eval(n.b, mask);
            require_clean(a, mask, "arithmetic");
            require_clean(b, mask, "arithmetic");
            for_lanes(mask, [&](int l) { out.v[l] = binary(n, a.v[l], b.v[l]); });
            return out;
        }
        case NK::Select: {
            Val c = eval(n.a, mask);
            require_clean(c, mask, "condition");
            uint32_t tm = 0;
            for_lanes(mask, [&](int l) {
                if (c.v[l] != 0) tm |= 1u << l;
            });
            uint32_t fm = mask & ~tm;
            if (tm) {
                Val t = eval(n.b, tm);
                for_lanes(tm, [&](int l) { out.v[l] = t.v[l]; });
                out.poison |= t.poison & tm;
            }
            if (fm) {
                Val f = eval(n.c, fm);
                for_lanes(fm, [&](int l) { out.v[l] = f.v[l]; });
                out.poison |= f.poison & fm;
            }
            return out;
        }
        case NK::Unreachable:
            if (mask) throw SimError("reached an unreachable expression");
            return out;
        }
        return out;
    }

    double unary(const CNode &n, double a) const {
        switch (n.uop) {
        case ir::UnOp::Not:
            return a == 0 ? 1.0 : 0.0;
        case ir::UnOp::ToF32:
            return arith::to_eval(a, EvalKind::F32);
        case ir::UnOp::ToI32:
            return arith::to_eval(a, EvalKind::I32);
        case ir::UnOp::ToU8:
            return arith::to_storage(a, ElemKind::UInt8);
        default:
            break;
        }
        if (n.type == ir::ScalarType::Index) {
            int64_t x = to_index(a);
            if (n.uop == ir::UnOp::Neg) return static_cast<double>(-x);
            if (n.uop == ir::UnOp::Abs) return static_cast<double>(x < 0 ? -x : x);
            throw SimError("unsupported index operation " + ir::to_string(n.uop));
        }
        UnaryOp op = n.uop == ir::UnOp::Neg   ? UnaryOp::Neg
                     : n.uop == ir::UnOp::Abs ? UnaryOp::Abs
                     : n.uop == ir::UnOp::Sqrt ? UnaryOp::Sqrt
                                               : UnaryOp::Exp;
        return arith::apply(op, n.type == ir::ScalarType::F32 ? EvalKind::F32 : EvalKind::I32, a);
    }

    double binary(const CNode &n, double a, double b) const {
        switch (n.bop) {
        case ir::BinOp::Lt:
            return a < b ? 1.0 : 0.0;
        case ir::BinOp::Le:
            return a <= b ? 1.0 : 0.0;
        case ir::BinOp::Eq:
            return a == b ? 1.0 : 0.0;
        default:
            break;
        }
        if (n.type == ir::ScalarType::Index) {
            int64_t x = to_index(a), y = to_index(b);
            switch (n.bop) {
            case ir::BinOp::Add:
                return static_cast<double>(x + y);
            case ir::BinOp::Sub:
                return static_cast<double>(x - y);
            case ir::BinOp::Mul:
                return static_cast<double>(x * y);
            case ir::BinOp::Min:
                return static_cast<double>(std::min(x, y));
            case ir::BinOp::Max:
                return static_cast<double>(std::max(x, y));
            case ir::BinOp::FloorDiv:
                if (y == 0) throw SimError("index division by zero");
                return static_cast<double>(floor_div(x, y));
            case ir::BinOp::Mod:
                if (y == 0) throw SimError("index division by zero");
                return static_cast<double>(floor_mod(x, y));
            default:
                throw SimError("unsupported index operation " + ir::to_string(n.bop));
            }
        }
        if (n.bop == ir::BinOp::FloorDiv || n.bop == ir::BinOp::Mod)
            throw SimError("floor division is index-only");
        return arith::apply(to_stencil_op(n.bop), n.type == ir::ScalarType::F32 ? EvalKind::F32 : EvalKind::I32, a,
                            b);
    }

    int64_t clamped_linear(const GlobalSlot &g, const std::vector<Val> &coords, int l) const {
        int64_t idx = 0;
        const auto &ext = g.decl->extents;
        const auto &org = g.decl->origin;
        for (int d = static_cast<int>(ext.size()) - 1; d >= 0; --d) {
            int64_t c = to_index(coords[d].v[l]) - org[d];
            c = std::clamp<int64_t>(c, 0, ext[d] - 1);
            idx = idx * ext[d] + c;
        }
        return idx;
    }

    Val load_global(const CNode &n, uint32_t mask) {
        std::vector<Val> coords;
        coords.reserve(n.coords.size());
        for (int c : n.coords) {
            coords.push_back(eval(c, mask));
            require_clean(coords.back(), mask, "global index");
        }
        const GlobalSlot &g = globals_[n.slot];
        const int64_t bytes = static_cast<int64_t>(arith::elem_bytes(g.decl->kind));
        Val out;
        std::vector<int64_t> addrs;
        addrs.reserve(kMaxLanes);
        for_lanes(mask, [&](int l) {
            int64_t i = clamped_linear(g, coords, l);
            out.v[l] = g.buf->data[i];
            addrs.push_back(i * bytes);
        });
        if (!addrs.empty()) {
            int64_t s32 = min_gl_transactions(addrs, 32, bytes);
            int64_t s128 = min_gl_transactions(addrs, 128, bytes);
            result_.trace.loads += 1;
            result_.trace.seg32 += s32;
            result_.trace.seg128 += s128;
            if (cfg_.trace) {
                MemAccess acc;
                acc.block = block_;
                acc.warp_in_block = cur_->warp_in_block;
                acc.warp_coord = cur_->warp_coord;
                acc.instr = n.instr;
                acc.buffer = g.decl->name;
                acc.addresses = std::move(addrs);
                acc.seg32 = s32;
                acc.seg128 = s128;
                result_.trace.accesses.push_back(std::move(acc));
            }
        }
        return out;
    }

    // ---------------------------------------------------------------- exec

    void exec_block(const std::vector<CStmt> &b, uint32_t mask) {
        for (const auto &s : b) exec(s, mask);
    }

    void exec(const CStmt &s, uint32_t mask) {
        switch (s.kind) {
        case SK::Assign: {
            Val v = eval(s.e0, mask);
            for_lanes(mask, [&](int l) { cur_->regs[s.dst][l] = v.v[l]; });
            cur_->set[s.dst] |= mask;
            cur_->poison[s.dst] = (cur_->poison[s.dst] & ~mask) | (v.poison & mask);
            return;
        }
        case SK::Shuffle: {
            if (mask != cur_->base_mask) throw SimError("divergent shuffle: executed under a partial lane mask");
            if ((s.mask & cur_->base_mask) != cur_->base_mask)
                throw SimError("shuffle mask excludes an active lane");
            Val src_lane = eval(s.e0, mask);
            require_clean(src_lane, mask, "shuffle lane");
            ++result_.stats.shuffles;
            Lanes out{};
            uint32_t poison = 0;
            const Lanes &src = cur_->regs[s.src];
            const uint32_t set = cur_->set[s.src];
            const uint32_t src_poison = cur_->poison[s.src];
            for_lanes(mask, [&](int l) {
                int64_t from = floor_mod(to_index(src_lane.v[l]), k_.warp_size);
                bool ok = (set >> from) & 1u;
                if (ok) out[l] = src[from];
                if (!ok || ((src_poison >> from) & 1u)) poison |= 1u << l;
            });
            for_lanes(mask, [&](int l) { cur_->regs[s.dst][l] = out[l]; });
            cur_->set[s.dst] |= mask;
            cur_->poison[s.dst] = (cur_->poison[s.dst] & ~mask) | poison;
            return;
        }
        case SK::StoreShared: {
            Val idx = eval(s.e0, mask);
            Val v = eval(s.e1, mask);
            require_clean(idx, mask, "shared index");
            require_clean(v, mask, "shared store");
            SharedSlot &sh = shared_[s.dst];
            for_lanes(mask, [&](int l) {
                int64_t i = to_index(idx.v[l]);
                if (i < 0 || i >= sh.decl->size)
                    throw SimError("shared access out of bounds: " + sh.decl->name + "[" + std::to_string(i) + "]");
                if (!has_block_sync_ && sh.owner[i] >= 0 && sh.owner[i] != cur_->warp_in_block)
                    throw SimError("cross-warp shared write without a block barrier: " + sh.decl->name);
                sh.data[i] = arith::to_storage(v.v[l], sh.decl->kind);
                sh.owner[i] = static_cast<int32_t>(cur_->warp_in_block);
            });
            return;
        }
        case SK::StoreGlobal: {
            std::vector<Val> coords;
            for (int c : s.coords) {
                coords.push_back(eval(c, mask));
                require_clean(coords.back(), mask, "global index");
            }
            Val v = eval(s.e0, mask);
            require_clean(v, mask, "global store");
            GlobalSlot &g = globals_[s.dst];
            for_lanes(mask, [&](int l) {
                int64_t idx = 0;
                const auto &ext = g.decl->extents;
                for (int d = static_cast<int>(ext.size()) - 1; d >= 0; --d) {
                    int64_t c = to_index(coords[d].v[l]) - g.decl->origin[d];
                    if (c < 0 || c >= ext[d])
                        throw SimError("global store out of bounds in '" + g.decl->name + "'");
                    idx = idx * ext[d] + c;
                }
                if (g.written[idx]) throw SimError("global element of '" + g.decl->name + "' written twice");
                g.written[idx] = 1;
                g.buf->data[idx] = arith::to_storage(v.v[l], g.decl->kind);
            });
            return;
        }
        case SK::If: {
            Val c = eval(s.e0, mask);
            require_clean(c, mask, "condition");
            uint32_t m = 0;
            for_lanes(mask, [&](int l) {
                if (c.v[l] != 0) m |= 1u << l;
            });
            if (m) exec_block(s.body, m);
            return;
        }
        case SK::Loop:
            for (int64_t i = 0; i < s.count; ++i) {
                cur_->loops[s.dst] = i;
                exec_block(s.body, mask);
            }
            return;
        case SK::SyncWarp:
            if (mask != cur_->base_mask) throw SimError("warp barrier reached under a partial lane mask");
            ++result_.stats.sync_warps;
            return;
        case SK::SyncBlock:
            return;
        }
    }

    std::string reg_name(int slot) const {
        for (const auto &[n, s] : regs_)
            if (s == slot) return n;
        return "?";
    }

    const ir::Kernel &k_;
    SimConfig cfg_;
    uint32_t full_mask_ = 0;
    std::vector<GlobalSlot> globals_;
    std::vector<SharedSlot> shared_;
    std::map<std::string, int> regs_;
    std::map<std::string, int> loops_;
    int max_loop_depth_ = 0;
    std::vector<CNode> nodes_;
    std::vector<CStmt> body_;
    bool has_block_sync_ = false;
    int next_instr_ = 0;
    WarpState *cur_ = nullptr;
    int64_t block_ = 0;
    SimResult result_;
};

}  // namespace

SimResult simulate_kernel(const ir::Kernel &kernel, BufferMap &memory, const SimConfig &cfg) {
    Machine m(kernel, memory, cfg);
    return m.run();
}

std::string format_trace(const MemTrace &trace) {
    std::ostringstream os;
    for (const auto &a : trace.accesses) {
        os << "block " << a.block << " warp " << a.warp_in_block << " instr " << a.instr << " " << a.buffer
           << " seg32 " << a.seg32 << " seg128 " << a.seg128 << " addr";
        for (int64_t x : a.addresses) os << " " << x;
        os << "\n";
    }
    os << "total loads " << trace.loads << " seg32 " << trace.seg32 << " seg128 " << trace.seg128 << "\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// Comparison

namespace {

int64_t ulp_distance(double a, double b, ElemKind kind) {
    if (kind != ElemKind::Float32) return static_cast<int64_t>(std::fabs(a - b));
    float fa = static_cast<float>(a), fb = static_cast<float>(b);
    if (std::isnan(fa) || std::isnan(fb)) return (std::isnan(fa) && std::isnan(fb)) ? 0 : INT64_MAX;
    auto ordered = [](float f) {
        int32_t i;
        std::memcpy(&i, &f, sizeof i);
        return i < 0 ? static_cast<int64_t>(INT32_MIN) - i : static_cast<int64_t>(i);
    };
    return std::llabs(ordered(fa) - ordered(fb));
}

bool bit_equal(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

}  // namespace

std::string CompareReport::message() const {
    if (match) return "match";
    std::ostringstream os;
    os << mismatches << " mismatching element(s) in '" << buffer << "'; first at (";
    for (size_t i = 0; i < first_coord.size(); ++i) os << (i ? "," : "") << first_coord[i];
    os.precision(9);
    os << "): expected " << expected << ", got " << actual;
    return os.str();
}

CompareReport compare_outputs(const Buffer &expected, const Buffer &actual, CompareMode mode, int64_t max_ulps,
                              const std::string &name) {
    if (expected.extents != actual.extents || expected.origin != actual.origin)
        throw ValidationError("shape mismatch comparing '" + name + "'");
    CompareReport r;
    r.buffer = name;
    const int nd = expected.dims();
    for (int64_t i = 0; i < expected.volume(); ++i) {
        double a = expected.data[i], b = actual.data[i];
        bool ok = mode == CompareMode::BitExact ? bit_equal(a, b) : ulp_distance(a, b, expected.kind) <= max_ulps;
        if (ok) continue;
        if (r.match) {
            r.match = false;
            r.expected = a;
            r.actual = b;
            int64_t rem = i;
            r.first_coord.assign(nd, 0);
            for (int d = 0; d < nd; ++d) {
                r.first_coord[d] = expected.origin[d] + rem % expected.extents[d];
                rem /= expected.extents[d];
            }
        }
        ++r.mismatches;
    }
    return r;
}

CompareReport compare_outputs(const BufferMap &expected, const BufferMap &actual, CompareMode mode,
                              int64_t max_ulps) {
    for (const auto &[name, buf] : expected) {
        auto it = actual.find(name);
        if (it == actual.end()) throw ValidationError("missing buffer '" + name + "' in comparison");
        CompareReport r = compare_outputs(buf, it->second, mode, max_ulps, name);
        if (!r.match) return r;
    }
    return {};
}

}  // namespace warptile
