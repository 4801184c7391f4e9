#include "warptile/hybrid_codegen.h"

#include <algorithm>
#include <functional>
#include <map>
#include <set>

#include "warptile/error.h"

namespace warptile {

using namespace ir;

std::optional<int> select_split_dimension(const Dim3 &tile, const Dim3 &warp) {
    for (int d = 0; d < 3; ++d)
        if (tile[d] > 1 && warp[d] > 1) return d;
    return std::nullopt;
}

HybridPlan make_hybrid_plan(const Dim3 &tile, const Dim3 &warp, int frac_reg_tenths) {
    if (frac_reg_tenths < 0 || frac_reg_tenths > 10) throw ValidationError("register fraction must be in [0, 1]");
    HybridPlan p;
    p.frac_reg_tenths = frac_reg_tenths;
    p.shared_iters = tile;
    p.reg_iters = tile;
    p.split_dim = select_split_dimension(tile, warp);
    if (p.split_dim) {
        int d = *p.split_dim;
        p.reg_iters[d] = tile[d] * frac_reg_tenths / 10;
        p.shared_iters[d] = tile[d] - p.reg_iters[d];
    }
    return p;
}

int64_t GroupLayout::tile_volume() const {
    int64_t v = 1;
    for (int d = 0; d < 3; ++d) v *= config.tile[d] * warp[d];
    return v;
}

GroupLayout make_layout(const PipelineGraph &g, const GroupGeometry &geom, const KernelConfig &cfg,
                        int64_t warp_size) {
    for (int d = 0; d < 3; ++d) {
        if (cfg.tile[d] < 1) throw ValidationError("tile sizes must be >= 1");
        if (cfg.block[d] < 1) throw ValidationError("block sizes must be >= 1");
    }
    if (cfg.tx_size != 32 && cfg.tx_size != 128) throw ValidationError("transaction size must be 32 or 128");
    GroupLayout L;
    L.geom = geom;
    L.config = cfg;
    L.warp_size = warp_size;
    L.block = pad_block(cfg.block, warp_size);
    L.warp = warp_sizes(L.block, warp_size);
    for (int d = 0; d < 3; ++d)
        if (L.block[d] % L.warp[d] != 0)
            throw ValidationError("warp extent " + std::to_string(L.warp[d]) + " does not divide block extent " +
                                  std::to_string(L.block[d]));
    if (L.warp[0] * L.warp[1] * L.warp[2] != warp_size)
        throw ValidationError("warp shape " + to_string(L.warp) + " does not cover " + std::to_string(warp_size) +
                              " lanes");
    L.warps_per_block = warps_per_block(L.block, L.warp);
    L.warps_in_block = L.warps_per_block[0] * L.warps_per_block[1] * L.warps_per_block[2];
    L.plan = make_hybrid_plan(cfg.tile, L.warp, cfg.frac_reg_tenths);
    const Dim3 tw = warp_tile(cfg.tile, L.warp);
    for (int d = 0; d < 3; ++d) {
        L.box[d] = d < geom.dims ? geom.box[d] : Interval{0, 0};
        L.warp_tiles[d] = ceil_div(L.box[d].extent(), tw[d]);
        L.grid[d] = ceil_div(L.warp_tiles[d], L.warps_per_block[d]);
    }
    const int64_t nreg = L.plan.register_count();
    for (size_t m = 0; m < geom.stages.size(); ++m) {
        MemberLayout ml;
        ml.stage = geom.stages[m];
        ml.name = geom.names[m];
        ml.kind = g.stages()[ml.stage].kind;
        ml.buffered = geom.buffered[m];
        ml.output = std::find(geom.outputs.begin(), geom.outputs.end(), ml.stage) != geom.outputs.end();
        for (int d = 0; d < 3; ++d) {
            ml.left[d] = d < geom.dims ? geom.left[m][d] : 0;
            ml.right[d] = d < geom.dims ? geom.right[m][d] : 0;
            ml.extent[d] = tw[d] + ml.left[d] + ml.right[d];
            ml.phase_a_extent[d] = ml.extent[d];
            ml.phase_b_iters[d] = 1;
        }
        if (nreg > 0) {
            int sd = *L.plan.split_dim;
            ml.phase_a_extent[sd] = ml.left[sd] + L.plan.shared_iters[sd] * L.warp[sd] + ml.right[sd];
            for (int d = 0; d < 3; ++d)
                if (d != sd) ml.phase_b_iters[d] = ceil_div(ml.extent[d], L.warp[d]);
        }
        for (int d = 0; d < 3; ++d) ml.phase_a_iters[d] = ceil_div(ml.phase_a_extent[d], L.warp[d]);
        if (ml.buffered) {
            ml.shared_per_warp = ml.phase_a_extent[0] * ml.phase_a_extent[1] * ml.phase_a_extent[2];
            ml.registers = nreg * ml.phase_b_iters[0] * ml.phase_b_iters[1] * ml.phase_b_iters[2];
        }
        L.members.push_back(ml);
    }
    return L;
}

LoadClassification classify_load(int split_dim, const Dim3 &diff, const Dim3 &lane, const Dim3 &warp,
                                 int64_t reg_iter) {
    LoadClassification c;
    Dim3 src{};
    bool own = true;
    for (int d = 0; d < 3; ++d) {
        int64_t q = lane[d] + diff[d];
        src[d] = floor_mod(q, warp[d]);
        if (d != split_dim) c.other_iter_shift[d] = floor_div(q, warp[d]);
        if (src[d] != lane[d]) own = false;
    }
    const int64_t shift = floor_div(lane[split_dim] + diff[split_dim], warp[split_dim]);
    c.reg_index = reg_iter + shift;
    c.curr_tile_src_lane = linear_lane(src, warp);
    c.prev_tile_src_lane = c.curr_tile_src_lane;
    if (c.reg_index < 0) c.type = LoadType::SharedMemory;
    else if (own) c.type = LoadType::OwnRegister;
    else if (shift == 0) c.type = LoadType::CurrTileShuffle;
    else c.type = LoadType::PrevTileShuffle;
    return c;
}

std::string buffer_name(const std::string &stage) { return stage; }

// ---------------------------------------------------------------------------
// Emission

namespace {

const char *kDimName[3] = {"x", "y", "z"};

ScalarType eval_type(ElemKind k) { return k == ElemKind::Float32 ? ScalarType::F32 : ScalarType::I32; }

ExprP convert_load(ExprP v, ElemKind source, ElemKind consumer) {
    EvalKind want = arith::eval_kind(consumer);
    if (want == EvalKind::F32 && source != ElemKind::Float32) return unary(UnOp::ToF32, ScalarType::F32, v);
    if (want == EvalKind::I32 && source == ElemKind::Float32) return unary(UnOp::ToI32, ScalarType::I32, v);
    return v;
}

ExprP to_storage(ExprP v, ElemKind kind) {
    if (kind == ElemKind::UInt8) return unary(UnOp::ToU8, ScalarType::I32, v);
    return v;
}

BinOp to_ir(BinaryOp op) {
    switch (op) {
    case BinaryOp::Add:
        return BinOp::Add;
    case BinaryOp::Sub:
        return BinOp::Sub;
    case BinaryOp::Mul:
        return BinOp::Mul;
    case BinaryOp::Div:
        return BinOp::Div;
    case BinaryOp::Min:
        return BinOp::Min;
    case BinaryOp::Max:
        return BinOp::Max;
    }
    return BinOp::Add;
}

UnOp to_ir(UnaryOp op) {
    switch (op) {
    case UnaryOp::Neg:
        return UnOp::Neg;
    case UnaryOp::Abs:
        return UnOp::Abs;
    case UnaryOp::Sqrt:
        return UnOp::Sqrt;
    case UnaryOp::Exp:
        return UnOp::Exp;
    }
    return UnOp::Neg;
}

class Emitter {
public:
    Emitter(const PipelineGraph &g, const GroupLayout &L) : g_(g), L_(L) {}

    Kernel kernel(const std::string &name) {
        Kernel k;
        k.name = name;
        k.warp_size = L_.warp_size;
        k.block = L_.block;
        k.grid = L_.grid;
        k.warp = L_.warp;
        declare_buffers(k);
        for (const auto &m : L_.members)
            if (m.buffered && m.shared_per_warp > 0)
                k.shared.push_back({shared_name(m), m.kind, m.shared_per_warp * L_.warps_in_block});

        for (int d = 0; d < 3; ++d)
            k.body.push_back({Assign{"x0_" + std::string(kDimName[d]),
                                     add(int_const(L_.box[d].lo),
                                         mul(warp_id(d), L_.config.tile[d] * L_.warp[d]))}});
        for (size_t m = 0; m < L_.members.size(); ++m) {
            phase_a(static_cast<int>(m), k.body);
            Block b = register_phase(static_cast<int>(m));
            k.body.insert(k.body.end(), b.begin(), b.end());
            if (L_.members[m].buffered) k.body.push_back({SyncWarp{}});
        }
        return k;
    }

    Block register_phase(int m) {
        Block out;
        if (!L_.plan.hybrid()) return out;
        const MemberLayout &ml = L_.members[m];
        const int sd = *L_.plan.split_dim;
        const int64_t nreg = L_.plan.register_count();
        Dim3 it{};
        for (it[2] = 0; it[2] < ml.phase_b_iters[2]; ++it[2])
            for (it[1] = 0; it[1] < ml.phase_b_iters[1]; ++it[1])
                for (it[0] = 0; it[0] < ml.phase_b_iters[0]; ++it[0])
                    for (int64_t r = 0; r < nreg; ++r) {
                        Dim3 rk = it;
                        rk[sd] = r;
                        register_point(m, rk, out);
                    }
        (void)sd;
        return out;
    }

private:
    // ------------------------------------------------------------ naming

    std::string shared_name(const MemberLayout &m) const { return "sh_" + m.name; }

    std::string reg_name(const MemberLayout &m, const Dim3 &rk) const {
        const int sd = *L_.plan.split_dim;
        int64_t k = 0;
        for (int d = 2; d >= 0; --d) {
            if (d == sd) continue;
            k = k * m.phase_b_iters[d] + rk[d];
        }
        return m.name + "_r" + std::to_string(rk[sd]) + "_" + std::to_string(k);
    }

    static std::string slot_reg(int d) { return std::string("s") + kDimName[d]; }
    static std::string point_reg(int d) { return std::string("p") + kDimName[d]; }

    // ------------------------------------------------------------ buffers

    void declare_buffers(Kernel &k) {
        std::vector<std::string> seen;
        auto add_input = [&](const std::string &name, ElemKind kind, std::vector<int64_t> origin,
                             std::vector<int64_t> extents) {
            if (std::find(seen.begin(), seen.end(), name) != seen.end()) return;
            seen.push_back(name);
            k.buffers.push_back({name, kind, std::move(origin), std::move(extents), false});
        };
        for (const auto &m : L_.members) {
            for (const LoadNode *ld : collect_loads(*g_.stages()[m.stage].expr)) {
                if (ld->from_image) {
                    const ImageParam &img = g_.image(ld->source);
                    add_input(ld->source, img.kind, std::vector<int64_t>(img.dims.size(), 0), img.dims);
                } else if (L_.geom.member(*g_.stage_index(ld->source)) < 0) {
                    Buffer b = stage_buffer(g_.stage(ld->source));
                    add_input(buffer_name(ld->source), b.kind, b.origin, b.extents);
                }
            }
        }
        for (const auto &m : L_.members) {
            if (!m.output) continue;
            Buffer b = stage_buffer(g_.stages()[m.stage]);
            k.buffers.push_back({buffer_name(m.name), m.kind, b.origin, b.extents, true});
        }
    }

    // ------------------------------------------------------------ shared index

    ExprP shared_index(const MemberLayout &p, const std::array<ExprP, 3> &slot) const {
        ExprP lin = slot[2];
        lin = add(mul(lin, p.phase_a_extent[1]), slot[1]);
        lin = add(mul(lin, p.phase_a_extent[0]), slot[0]);
        return add(mul(warp_in_block(), p.shared_per_warp), lin);
    }

    // ------------------------------------------------------------ conditions

    ExprP in_domain(const MemberLayout &m) const {
        const Stage &st = g_.stages()[m.stage];
        ExprP c = int_const(1);
        for (int d = 0; d < 3; ++d) {
            Interval iv = d < st.dims() ? st.domain[d] : Interval{0, 0};
            c = logical_and(c, logical_and(ge(reg(point_reg(d)), iv.lo), le(reg(point_reg(d)), int_const(iv.hi))));
        }
        return c;
    }

    ExprP in_core(const MemberLayout &m) const {
        ExprP c = int_const(1);
        for (int d = 0; d < 3; ++d) {
            if (m.left[d] == 0 && m.right[d] == 0) continue;
            int64_t tw = L_.config.tile[d] * L_.warp[d];
            c = logical_and(c, logical_and(ge(reg(slot_reg(d)), m.left[d]), lt(reg(slot_reg(d)), m.left[d] + tw)));
        }
        return c;
    }

    void assign_points(const MemberLayout &m, Block &out) const {
        for (int d = 0; d < 3; ++d)
            out.push_back(
                {Assign{point_reg(d), add(reg("x0_" + std::string(kDimName[d])), add(reg(slot_reg(d)), -m.left[d]))}});
    }

    // ------------------------------------------------------------ expressions

    using StageLoad = std::function<ExprP(const LoadNode &, const MemberLayout &producer)>;

    ExprP lower(const StencilExpr &e, const MemberLayout &c, const StageLoad &stage_load) const {
        const ElemKind ck = c.kind;
        const ScalarType t = eval_type(ck);
        return std::visit(
            [&](const auto &n) -> ExprP {
                using T = std::decay_t<decltype(n)>;
                if constexpr (std::is_same_v<T, ConstNode>) {
                    double v = arith::to_eval(n.value, arith::eval_kind(ck));
                    return t == ScalarType::F32 ? float_const(v) : int_const(static_cast<int64_t>(v));
                } else if constexpr (std::is_same_v<T, LoadNode>) {
                    if (n.from_image) {
                        const ImageParam &img = g_.image(n.source);
                        std::vector<ExprP> coords;
                        for (size_t d = 0; d < n.index.size(); ++d)
                            coords.push_back(add(mul(reg(point_reg(static_cast<int>(d))), n.index[d].coef),
                                                 n.index[d].offset));
                        return convert_load(load_global(n.source, std::move(coords)), img.kind, ck);
                    }
                    int p = *g_.stage_index(n.source);
                    int pm = L_.geom.member(p);
                    const Stage &ps = g_.stages()[p];
                    if (pm < 0) {
                        std::vector<ExprP> coords;
                        for (size_t d = 0; d < n.index.size(); ++d)
                            coords.push_back(add(mul(reg(point_reg(static_cast<int>(d))), n.index[d].coef),
                                                 n.index[d].offset));
                        return convert_load(load_global(buffer_name(n.source), std::move(coords)), ps.kind, ck);
                    }
                    return convert_load(stage_load(n, L_.members[pm]), ps.kind, ck);
                } else if constexpr (std::is_same_v<T, BinaryNode>) {
                    ExprP a = lower(*n.lhs, c, stage_load);
                    ExprP b = lower(*n.rhs, c, stage_load);
                    return binary(to_ir(n.op), t, a, b);
                } else {
                    return unary(to_ir(n.op), t, lower(*n.arg, c, stage_load));
                }
            },
            e.node);
    }

    ExprP zero(const MemberLayout &m) const {
        return m.kind == ElemKind::Float32 ? float_const(0.0) : int_const(0);
    }

    static int64_t offset_of(const LoadNode &ld, int d) {
        return d < static_cast<int>(ld.index.size()) ? ld.index[d].offset : 0;
    }

    // ------------------------------------------------------------ phase A

    void phase_a(int mi, Block &out) {
        const MemberLayout &m = L_.members[mi];
        for (int d = 0; d < 3; ++d)
            if (m.phase_a_extent[d] == 0) return;

        Block body;
        std::array<ExprP, 3> slot;
        ExprP valid = int_const(1);
        for (int d = 0; d < 3; ++d) {
            ExprP iter = m.phase_a_iters[d] > 1 ? loop_var(std::string("i") + kDimName[d]) : int_const(0);
            body.push_back({Assign{slot_reg(d), add(mul(iter, L_.warp[d]), lane_id(d))}});
            slot[d] = reg(slot_reg(d));
            if (m.phase_a_extent[d] % L_.warp[d] != 0) valid = logical_and(valid, lt(slot[d], m.phase_a_extent[d]));
        }
        Block guarded;
        assign_points(m, guarded);
        const Stage &st = g_.stages()[m.stage];
        StageLoad from_shared = [&](const LoadNode &ld, const MemberLayout &p) {
            std::array<ExprP, 3> ps;
            for (int d = 0; d < 3; ++d) ps[d] = add(slot[d], offset_of(ld, d) + p.left[d] - m.left[d]);
            return load_shared(shared_name(p), shared_index(p, ps));
        };
        ExprP value = to_storage(lower(*st.expr, m, from_shared), m.kind);
        std::string v = "v_" + m.name;
        guarded.push_back({Assign{v, select(in_domain(m), value, zero(m))}});
        if (m.buffered) guarded.push_back({StoreShared{shared_name(m), shared_index(m, slot), reg(v)}});
        if (m.output) guarded.push_back({If{logical_and(in_core(m), in_domain(m)), {global_store(m, reg(v))}}});

        if (std::holds_alternative<IntConst>(valid->node)) {
            body.insert(body.end(), guarded.begin(), guarded.end());
        } else {
            body.push_back({If{valid, std::move(guarded)}});
        }
        for (int d = 0; d < 3; ++d) {
            if (m.phase_a_iters[d] <= 1) continue;
            Block loop;
            loop.push_back({Loop{std::string("i") + kDimName[d], m.phase_a_iters[d], std::move(body)}});
            body = std::move(loop);
        }
        out.insert(out.end(), body.begin(), body.end());
    }

    Stmt global_store(const MemberLayout &m, ExprP value) const {
        const Stage &st = g_.stages()[m.stage];
        std::vector<ExprP> coords;
        for (int d = 0; d < st.dims(); ++d) coords.push_back(reg(point_reg(d)));
        return {StoreGlobal{buffer_name(m.name), std::move(coords), std::move(value)}};
    }

    // ------------------------------------------------------------ phase B

    void register_point(int mi, const Dim3 &rk, Block &out) {
        const MemberLayout &m = L_.members[mi];
        const int sd = *L_.plan.split_dim;
        const Dim3 &W = L_.warp;

        ExprP valid = int_const(1);
        for (int d = 0; d < 3; ++d) {
            ExprP s = d == sd ? add(lane_id(d), m.phase_a_extent[d] + rk[d] * W[d]) : add(lane_id(d), rk[d] * W[d]);
            out.push_back({Assign{slot_reg(d), s}});
            if (d != sd && m.extent[d] % W[d] != 0) valid = logical_and(valid, lt(reg(slot_reg(d)), m.extent[d]));
        }
        assign_points(m, out);

        // Which lanes compute something: the rest never read their producer values.
        std::vector<Dim3> lanes;
        for (int64_t l = 0; l < W[0] * W[1] * W[2]; ++l) {
            Dim3 lc{l % W[0], (l / W[0]) % W[1], l / (W[0] * W[1])};
            bool ok = true;
            for (int d = 0; d < 3; ++d)
                if (d != sd && rk[d] * W[d] + lc[d] >= m.extent[d]) ok = false;
            if (ok) lanes.push_back(lc);
        }

        const Stage &st = g_.stages()[m.stage];
        std::map<std::pair<std::string, std::vector<int64_t>>, ExprP> cache;
        StageLoad from_tile = [&](const LoadNode &ld, const MemberLayout &p) -> ExprP {
            std::vector<int64_t> key;
            for (int d = 0; d < 3; ++d) key.push_back(offset_of(ld, d));
            auto ck = std::make_pair(p.name, key);
            if (auto it = cache.find(ck); it != cache.end()) return it->second;
            ExprP v = producer_value(m, p, ld, rk, lanes, out);
            cache.emplace(ck, v);
            return v;
        };
        ExprP value = to_storage(lower(*st.expr, m, from_tile), m.kind);
        std::string dst = m.buffered ? reg_name(m, rk) : "v_" + m.name;
        out.push_back({Assign{dst, select(logical_and(valid, in_domain(m)), value, zero(m))}});
        if (m.output)
            out.push_back({If{logical_and(valid, logical_and(in_core(m), in_domain(m))), {global_store(m, reg(dst))}}});
    }

    /// Emits the hoisted shuffles for one producer load and returns the per-lane selection.
    ExprP producer_value(const MemberLayout &c, const MemberLayout &p, const LoadNode &ld, const Dim3 &rk,
                         const std::vector<Dim3> &lanes, Block &out) {
        const int sd = *L_.plan.split_dim;
        const Dim3 &W = L_.warp;
        Dim3 diff{};
        for (int d = 0; d < 3; ++d) {
            int64_t b = offset_of(ld, d);
            diff[d] = d == sd ? b + c.right[d] - p.right[d] : b + p.left[d] - c.left[d];
        }

        // Leaf of the selection tree per lane: (shift along the split dim, shift per other dim).
        struct Leaf {
            LoadType type;
            int64_t reg_index;
            Dim3 k;
        };
        std::map<Dim3, Leaf> leaves;  // keyed by per-dimension lane shift
        for (const Dim3 &lane : lanes) {
            LoadClassification cls = classify_load(sd, diff, lane, W, rk[sd]);
            Dim3 key{};
            Dim3 k = rk;
            for (int d = 0; d < 3; ++d) {
                key[d] = d == sd ? cls.reg_index - rk[sd] : cls.other_iter_shift[d];
                if (d != sd) k[d] = rk[d] + cls.other_iter_shift[d];
            }
            k[sd] = cls.reg_index;
            leaves.emplace(key, Leaf{cls.type, cls.reg_index, k});
        }

        // Source lane shared by every register leaf.
        ExprP src_lane = int_const(0);
        for (int d = 2; d >= 0; --d)
            src_lane = add(mul(src_lane, W[d]), mod(add(lane_id(d), diff[d]), W[d]));

        std::map<Dim3, ExprP> leaf_expr;
        bool all_own = !leaves.empty();
        for (const auto &[key, leaf] : leaves)
            if (leaf.type != LoadType::OwnRegister) all_own = false;
        for (const auto &[key, leaf] : leaves) {
            if (leaf.type == LoadType::SharedMemory) {
                std::array<ExprP, 3> ps;
                for (int d = 0; d < 3; ++d) {
                    if (d == sd) ps[d] = add(lane_id(d), p.phase_a_extent[d] + rk[d] * W[d] + diff[d]);
                    else ps[d] = add(lane_id(d), rk[d] * W[d] + diff[d]);
                }
                leaf_expr[key] = load_shared(shared_name(p), shared_index(p, ps));
                continue;
            }
            Dim3 prk = leaf.k;
            for (int d = 0; d < 3; ++d)
                if (prk[d] < 0 || prk[d] >= (d == sd ? L_.plan.register_count() : p.phase_b_iters[d]))
                    throw ValidationError("internal: register candidate outside the producer tile");
            std::string src = reg_name(p, prk);
            if (all_own) {
                leaf_expr[key] = reg(src);
                continue;
            }
            std::string dst = "shfl_" + std::to_string(shuffle_counter_++);
            out.push_back({Shuffle{dst, src, src_lane, 0xffffffffu}});
            leaf_expr[key] = reg(dst);
        }

        // Selection tree over the dimensions whose lanes straddle two shifts.
        std::function<ExprP(int, Dim3)> build = [&](int d, Dim3 key) -> ExprP {
            if (d == 3) {
                auto it = leaf_expr.find(key);
                return it == leaf_expr.end() ? unreachable() : it->second;
            }
            int64_t base = floor_div(diff[d], W[d]);
            int64_t rho = diff[d] - base * W[d];
            Dim3 lo = key, hi = key;
            lo[d] = base;
            hi[d] = base + 1;
            if (rho == 0) return build(d + 1, lo);
            ExprP cond = ge(lane_id(d), W[d] - rho);
            return select(cond, build(d + 1, hi), build(d + 1, lo));
        };
        return build(0, Dim3{});
    }

    const PipelineGraph &g_;
    const GroupLayout &L_;
    int64_t shuffle_counter_ = 0;
};

std::string default_kernel_name(const GroupLayout &L) {
    std::string name = "kernel";
    for (const auto &n : L.geom.names) name += "_" + n;
    return name;
}

}  // namespace

Block gen_register_tile(const PipelineGraph &g, const GroupLayout &layout, int member) {
    Emitter e(g, layout);
    return e.register_phase(member);
}

Kernel gen_group_kernel(const PipelineGraph &g, const GroupLayout &layout, const std::string &name) {
    if (layout.members.empty()) throw ValidationError("empty group");
    std::vector<int> idx(layout.geom.stages.begin(), layout.geom.stages.end());
    if (!constant_dependences(g, idx)) throw ValidationError("non-constant dependences in group");
    if (!reads_within_domain(g, idx))
        throw ValidationError("group is not fusable: an intra-group read leaves its producer's domain");
    Emitter e(g, layout);
    return e.kernel(name.empty() ? default_kernel_name(layout) : name);
}

Kernel gen_group_kernel(const PipelineGraph &g, const std::vector<std::string> &group, const KernelConfig &cfg,
                        int64_t warp_size, const std::string &name) {
    GroupGeometry geom = group_geometry(g, group);
    GroupLayout layout = make_layout(g, geom, cfg, warp_size);
    return gen_group_kernel(g, layout, name);
}

}  // namespace warptile
