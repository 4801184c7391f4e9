#include "warptile/kernel_ir.h"

#include <functional>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "warptile/error.h"

namespace warptile::ir {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Builders

namespace {

ExprP make(decltype(Expr::node) node) { return std::make_shared<const Expr>(Expr{std::move(node)}); }

const int64_t *as_int(const ExprP &e) {
    if (auto *c = std::get_if<IntConst>(&e->node)) return &c->value;
    return nullptr;
}

}  // namespace

ExprP int_const(int64_t v) { return make(IntConst{v}); }
ExprP float_const(double v) { return make(FloatConst{v}); }
ExprP lane_id(int dim) { return make(LaneId{dim}); }
ExprP warp_id(int dim) { return make(WarpId{dim}); }
ExprP warp_in_block() { return make(WarpInBlock{}); }
ExprP loop_var(std::string name) { return make(LoopVar{std::move(name)}); }
ExprP reg(std::string name) { return make(Reg{std::move(name)}); }
ExprP load_shared(std::string array, ExprP index) { return make(LoadShared{std::move(array), std::move(index)}); }
ExprP load_global(std::string buffer, std::vector<ExprP> coords) {
    return make(LoadGlobal{std::move(buffer), std::move(coords)});
}
ExprP unary(UnOp op, ScalarType type, ExprP arg) { return make(Unary{op, type, std::move(arg)}); }
ExprP binary(BinOp op, ScalarType type, ExprP lhs, ExprP rhs) {
    return make(Binary{op, type, std::move(lhs), std::move(rhs)});
}
ExprP select(ExprP cond, ExprP if_true, ExprP if_false) {
    if (auto *c = as_int(cond)) return *c ? if_true : if_false;
    return make(Select{std::move(cond), std::move(if_true), std::move(if_false)});
}
ExprP unreachable() { return make(Unreachable{}); }

ExprP add(ExprP a, ExprP b) {
    auto *x = as_int(a);
    auto *y = as_int(b);
    if (x && y) return int_const(*x + *y);
    if (x && *x == 0) return b;
    if (y && *y == 0) return a;
    return binary(BinOp::Add, ScalarType::Index, std::move(a), std::move(b));
}

ExprP sub(ExprP a, ExprP b) {
    auto *x = as_int(a);
    auto *y = as_int(b);
    if (x && y) return int_const(*x - *y);
    if (y && *y == 0) return a;
    return binary(BinOp::Sub, ScalarType::Index, std::move(a), std::move(b));
}

ExprP mul(ExprP a, ExprP b) {
    auto *x = as_int(a);
    auto *y = as_int(b);
    if (x && y) return int_const(*x * *y);
    if ((x && *x == 0) || (y && *y == 0)) return int_const(0);
    if (x && *x == 1) return b;
    if (y && *y == 1) return a;
    return binary(BinOp::Mul, ScalarType::Index, std::move(a), std::move(b));
}

ExprP add(ExprP a, int64_t b) { return add(std::move(a), int_const(b)); }
ExprP mul(ExprP a, int64_t b) { return mul(std::move(a), int_const(b)); }

ExprP floor_div(ExprP a, int64_t b) {
    if (b == 1) return a;
    if (auto *x = as_int(a)) return int_const(warptile::floor_div(*x, b));
    return binary(BinOp::FloorDiv, ScalarType::Index, std::move(a), int_const(b));
}

ExprP mod(ExprP a, int64_t b) {
    if (b == 1) return int_const(0);
    if (auto *x = as_int(a)) return int_const(warptile::floor_mod(*x, b));
    return binary(BinOp::Mod, ScalarType::Index, std::move(a), int_const(b));
}

ExprP lt(ExprP a, ExprP b) {
    auto *x = as_int(a);
    auto *y = as_int(b);
    if (x && y) return int_const(*x < *y ? 1 : 0);
    return binary(BinOp::Lt, ScalarType::Index, std::move(a), std::move(b));
}

ExprP le(ExprP a, ExprP b) {
    auto *x = as_int(a);
    auto *y = as_int(b);
    if (x && y) return int_const(*x <= *y ? 1 : 0);
    return binary(BinOp::Le, ScalarType::Index, std::move(a), std::move(b));
}

ExprP lt(ExprP a, int64_t b) { return lt(std::move(a), int_const(b)); }
ExprP ge(ExprP a, int64_t b) { return le(int_const(b), std::move(a)); }

ExprP logical_and(ExprP a, ExprP b) {
    auto *x = as_int(a);
    auto *y = as_int(b);
    if (x) return *x ? b : int_const(0);
    if (y) return *y ? a : int_const(0);
    return binary(BinOp::And, ScalarType::Index, std::move(a), std::move(b));
}

const BufferDecl *Kernel::find_buffer(const std::string &name) const {
    for (const auto &b : buffers)
        if (b.name == name) return &b;
    return nullptr;
}

const SharedDecl *Kernel::find_shared(const std::string &name) const {
    for (const auto &s : shared)
        if (s.name == name) return &s;
    return nullptr;
}

// ---------------------------------------------------------------------------
// Names

std::string to_string(ScalarType t) {
    switch (t) {
    case ScalarType::Index:
        return "index";
    case ScalarType::F32:
        return "f32";
    case ScalarType::I32:
        return "i32";
    }
    return "?";
}

std::string to_string(UnOp op) {
    static const char *names[] = {"neg", "abs", "sqrt", "exp", "not", "to_f32", "to_i32", "to_u8"};
    return names[static_cast<int>(op)];
}

std::string to_string(BinOp op) {
    static const char *names[] = {"add", "sub", "mul", "div", "min", "max", "floordiv",
                                  "mod", "lt",  "le",  "eq",  "and", "or"};
    return names[static_cast<int>(op)];
}

namespace {

template <typename E>
E parse_enum(const std::string &s, int count, std::string (*name)(E), const char *what) {
    for (int i = 0; i < count; ++i)
        if (name(static_cast<E>(i)) == s) return static_cast<E>(i);
    throw ValidationError(std::string("unknown ") + what + " '" + s + "'");
}

void walk(const Block &b, const std::function<void(const Stmt &, int depth_if)> &fn, int depth_if = 0) {
    for (const auto &s : b) {
        fn(s, depth_if);
        if (auto *i = std::get_if<If>(&s.node)) walk(i->then_body, fn, depth_if + 1);
        if (auto *l = std::get_if<Loop>(&s.node)) walk(l->body, fn, depth_if);
    }
}

}  // namespace

std::vector<std::string> declared_registers(const Kernel &k) {
    std::vector<std::string> out;
    std::set<std::string> seen;
    walk(k.body, [&](const Stmt &s, int) {
        const std::string *name = nullptr;
        if (auto *a = std::get_if<Assign>(&s.node)) name = &a->reg;
        if (auto *sh = std::get_if<Shuffle>(&s.node)) name = &sh->dst;
        if (name && seen.insert(*name).second) out.push_back(*name);
    });
    return out;
}

SyncCensus count_sync_stalls(const Kernel &k) {
    SyncCensus c;
    walk(k.body, [&](const Stmt &s, int) {
        if (std::holds_alternative<SyncWarp>(s.node)) ++c.sync_warp;
        if (std::holds_alternative<SyncBlock>(s.node)) ++c.sync_block;
    });
    return c;
}

int64_t count_guarded_shuffles(const Kernel &k) {
    int64_t n = 0;
    walk(k.body, [&](const Stmt &s, int depth_if) {
        if (std::holds_alternative<Shuffle>(s.node) && depth_if > 0) ++n;
    });
    return n;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

json expr_to_json(const ExprP &e) {
    return std::visit(
        [](const auto &n) -> json {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, IntConst>) {
                return {{"k", "int"}, {"v", n.value}};
            } else if constexpr (std::is_same_v<T, FloatConst>) {
                return {{"k", "float"}, {"v", n.value}};
            } else if constexpr (std::is_same_v<T, LaneId>) {
                return {{"k", "lane"}, {"dim", n.dim}};
            } else if constexpr (std::is_same_v<T, WarpId>) {
                return {{"k", "warp"}, {"dim", n.dim}};
            } else if constexpr (std::is_same_v<T, WarpInBlock>) {
                return {{"k", "warp_in_block"}};
            } else if constexpr (std::is_same_v<T, LoopVar>) {
                return {{"k", "loop_var"}, {"name", n.name}};
            } else if constexpr (std::is_same_v<T, Reg>) {
                return {{"k", "reg"}, {"name", n.name}};
            } else if constexpr (std::is_same_v<T, LoadShared>) {
                return {{"k", "load_shared"}, {"array", n.array}, {"index", expr_to_json(n.index)}};
            } else if constexpr (std::is_same_v<T, LoadGlobal>) {
                json coords = json::array();
                for (const auto &c : n.coords) coords.push_back(expr_to_json(c));
                return {{"k", "load_global"}, {"buffer", n.buffer}, {"coords", coords}};
            } else if constexpr (std::is_same_v<T, Unary>) {
                return {{"k", "unary"}, {"op", to_string(n.op)}, {"type", to_string(n.type)}, {"arg", expr_to_json(n.arg)}};
            } else if constexpr (std::is_same_v<T, Binary>) {
                return {{"k", "binary"},
                        {"op", to_string(n.op)},
                        {"type", to_string(n.type)},
                        {"lhs", expr_to_json(n.lhs)},
                        {"rhs", expr_to_json(n.rhs)}};
            } else if constexpr (std::is_same_v<T, Select>) {
                return {{"k", "select"},
                        {"cond", expr_to_json(n.cond)},
                        {"t", expr_to_json(n.if_true)},
                        {"f", expr_to_json(n.if_false)}};
            } else {
                return {{"k", "unreachable"}};
            }
        },
        e->node);
}

ExprP expr_from_json(const json &j) {
    const std::string k = j.at("k").get<std::string>();
    if (k == "int") return int_const(j.at("v").get<int64_t>());
    if (k == "float") return float_const(j.at("v").get<double>());
    if (k == "lane") return lane_id(j.at("dim").get<int>());
    if (k == "warp") return warp_id(j.at("dim").get<int>());
    if (k == "warp_in_block") return warp_in_block();
    if (k == "loop_var") return loop_var(j.at("name").get<std::string>());
    if (k == "reg") return reg(j.at("name").get<std::string>());
    if (k == "load_shared") return load_shared(j.at("array").get<std::string>(), expr_from_json(j.at("index")));
    if (k == "load_global") {
        std::vector<ExprP> coords;
        for (const auto &c : j.at("coords")) coords.push_back(expr_from_json(c));
        return load_global(j.at("buffer").get<std::string>(), std::move(coords));
    }
    auto type = [&] { return parse_enum<ScalarType>(j.at("type").get<std::string>(), 3, to_string, "type"); };
    if (k == "unary")
        return unary(parse_enum<UnOp>(j.at("op").get<std::string>(), 8, to_string, "unary op"), type(),
                     expr_from_json(j.at("arg")));
    if (k == "binary")
        return binary(parse_enum<BinOp>(j.at("op").get<std::string>(), 13, to_string, "binary op"), type(),
                      expr_from_json(j.at("lhs")), expr_from_json(j.at("rhs")));
    if (k == "select")
        return make(Select{expr_from_json(j.at("cond")), expr_from_json(j.at("t")), expr_from_json(j.at("f"))});
    if (k == "unreachable") return unreachable();
    throw ValidationError("unknown expression kind '" + k + "'");
}

json block_to_json(const Block &b);

json stmt_to_json(const Stmt &s) {
    return std::visit(
        [](const auto &n) -> json {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, Assign>) {
                return {{"s", "assign"}, {"reg", n.reg}, {"value", expr_to_json(n.value)}};
            } else if constexpr (std::is_same_v<T, Shuffle>) {
                return {{"s", "shuffle"},
                        {"dst", n.dst},
                        {"src", n.src},
                        {"src_lane", expr_to_json(n.src_lane)},
                        {"mask", n.mask}};
            } else if constexpr (std::is_same_v<T, StoreShared>) {
                return {{"s", "store_shared"},
                        {"array", n.array},
                        {"index", expr_to_json(n.index)},
                        {"value", expr_to_json(n.value)}};
            } else if constexpr (std::is_same_v<T, StoreGlobal>) {
                json coords = json::array();
                for (const auto &c : n.coords) coords.push_back(expr_to_json(c));
                return {{"s", "store_global"}, {"buffer", n.buffer}, {"coords", coords}, {"value", expr_to_json(n.value)}};
            } else if constexpr (std::is_same_v<T, If>) {
                return {{"s", "if"}, {"cond", expr_to_json(n.cond)}, {"then", block_to_json(n.then_body)}};
            } else if constexpr (std::is_same_v<T, Loop>) {
                return {{"s", "loop"}, {"var", n.var}, {"count", n.count}, {"body", block_to_json(n.body)}};
            } else if constexpr (std::is_same_v<T, SyncWarp>) {
                return {{"s", "sync_warp"}};
            } else {
                return {{"s", "sync_block"}};
            }
        },
        s.node);
}

json block_to_json(const Block &b) {
    json arr = json::array();
    for (const auto &s : b) arr.push_back(stmt_to_json(s));
    return arr;
}

Block block_from_json(const json &j);

Stmt stmt_from_json(const json &j) {
    const std::string s = j.at("s").get<std::string>();
    if (s == "assign") return {Assign{j.at("reg").get<std::string>(), expr_from_json(j.at("value"))}};
    if (s == "shuffle")
        return {Shuffle{j.at("dst").get<std::string>(), j.at("src").get<std::string>(),
                        expr_from_json(j.at("src_lane")), j.at("mask").get<uint32_t>()}};
    if (s == "store_shared")
        return {StoreShared{j.at("array").get<std::string>(), expr_from_json(j.at("index")),
                            expr_from_json(j.at("value"))}};
    if (s == "store_global") {
        std::vector<ExprP> coords;
        for (const auto &c : j.at("coords")) coords.push_back(expr_from_json(c));
        return {StoreGlobal{j.at("buffer").get<std::string>(), std::move(coords), expr_from_json(j.at("value"))}};
    }
    if (s == "if") return {If{expr_from_json(j.at("cond")), block_from_json(j.at("then"))}};
    if (s == "loop")
        return {Loop{j.at("var").get<std::string>(), j.at("count").get<int64_t>(), block_from_json(j.at("body"))}};
    if (s == "sync_warp") return {SyncWarp{}};
    if (s == "sync_block") return {SyncBlock{}};
    throw ValidationError("unknown statement kind '" + s + "'");
}

Block block_from_json(const json &j) {
    Block b;
    for (const auto &s : j) b.push_back(stmt_from_json(s));
    return b;
}

json dim3_json(const Dim3 &d) { return json::array({d[0], d[1], d[2]}); }

Dim3 dim3_from(const json &j) { return {j.at(0).get<int64_t>(), j.at(1).get<int64_t>(), j.at(2).get<int64_t>()}; }

}  // namespace

std::string to_json_text(const Kernel &k) {
    json j;
    j["name"] = k.name;
    j["warp_size"] = k.warp_size;
    j["block"] = dim3_json(k.block);
    j["grid"] = dim3_json(k.grid);
    j["warp"] = dim3_json(k.warp);
    j["buffers"] = json::array();
    for (const auto &b : k.buffers)
        j["buffers"].push_back({{"name", b.name},
                                {"kind", std::string(warptile::to_string(b.kind))},
                                {"origin", b.origin},
                                {"extents", b.extents},
                                {"output", b.output}});
    j["shared"] = json::array();
    for (const auto &s : k.shared)
        j["shared"].push_back({{"name", s.name}, {"kind", std::string(warptile::to_string(s.kind))}, {"size", s.size}});
    j["body"] = block_to_json(k.body);
    return j.dump(1) + "\n";
}

Kernel from_json_text(const std::string &text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception &e) {
        throw ValidationError(std::string("malformed kernel IR: ") + e.what());
    }
    try {
        Kernel k;
        k.name = j.at("name").get<std::string>();
        k.warp_size = j.at("warp_size").get<int64_t>();
        k.block = dim3_from(j.at("block"));
        k.grid = dim3_from(j.at("grid"));
        k.warp = dim3_from(j.at("warp"));
        for (const auto &b : j.at("buffers")) {
            auto kind = parse_elem_kind(b.at("kind").get<std::string>());
            if (!kind) throw ValidationError("unknown element kind in kernel IR");
            k.buffers.push_back({b.at("name").get<std::string>(), *kind, b.at("origin").get<std::vector<int64_t>>(),
                                 b.at("extents").get<std::vector<int64_t>>(), b.at("output").get<bool>()});
        }
        for (const auto &s : j.at("shared")) {
            auto kind = parse_elem_kind(s.at("kind").get<std::string>());
            if (!kind) throw ValidationError("unknown element kind in kernel IR");
            k.shared.push_back({s.at("name").get<std::string>(), *kind, s.at("size").get<int64_t>()});
        }
        k.body = block_from_json(j.at("body"));
        return k;
    } catch (const json::exception &e) {
        throw ValidationError(std::string("malformed kernel IR: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// CUDA rendering

namespace {

const char *dim_suffix(int d) { return d == 0 ? "x" : (d == 1 ? "y" : "z"); }

const char *c_type(ScalarType t) {
    switch (t) {
    case ScalarType::Index:
        return "int";
    case ScalarType::F32:
        return "float";
    case ScalarType::I32:
        return "int";
    }
    return "int";
}

const char *c_elem_type(ElemKind k) {
    switch (k) {
    case ElemKind::Float32:
        return "float";
    case ElemKind::Int32:
        return "int";
    case ElemKind::UInt8:
        return "unsigned char";
    }
    return "float";
}

ScalarType elem_scalar(ElemKind k) { return k == ElemKind::Float32 ? ScalarType::F32 : ScalarType::I32; }

class CudaPrinter {
public:
    explicit CudaPrinter(const Kernel &k) : k_(k) {}

    std::string run() {
        infer_types(k_.body);
        os_ << "// block " << warptile::to_string(k_.block) << ", warp " << warptile::to_string(k_.warp) << ", grid "
            << warptile::to_string(k_.grid) << "\n";
        os_ << "#ifndef WARPTILE_DEVICE_HELPERS\n"
               "#define WARPTILE_DEVICE_HELPERS\n"
               "__device__ __forceinline__ int clampi(int v, int lo, int hi) { return min(max(v, lo), hi); }\n"
               "__device__ __forceinline__ int floordiv(int a, int b) { int q = a / b; return (a % b != 0 && (a < 0) != (b < 0)) ? q - 1 : q; }\n"
               "__device__ __forceinline__ int floormod(int a, int b) { int r = a % b; return (r != 0 && (r < 0) != (b < 0)) ? r + b : r; }\n"
               "__device__ __forceinline__ int f2i_sat(float v) { return isnan(v) ? 0 : (int)fminf(fmaxf(truncf(v), -2147483648.0f), 2147483520.0f); }\n"
               "#endif\n";
        os_ << "__global__ void " << k_.name << "(";
        for (size_t i = 0; i < k_.buffers.size(); ++i) {
            const auto &b = k_.buffers[i];
            os_ << (i ? ", " : "") << (b.output ? "" : "const ") << c_elem_type(b.kind) << " *__restrict__ "
                << b.name;
        }
        os_ << ") {\n";
        indent_ = 1;
        for (const auto &s : k_.shared)
            line() << "__shared__ " << c_elem_type(s.kind) << " " << s.name << "[" << s.size << "];\n";
        for (int d = 0; d < 3; ++d)
            line() << "const int lane_" << dim_suffix(d) << " = threadIdx." << dim_suffix(d) << " % " << k_.warp[d]
                   << ";\n";
        for (int d = 0; d < 3; ++d)
            line() << "const int warp_" << dim_suffix(d) << " = (blockIdx." << dim_suffix(d) << " * "
                   << k_.block[d] << " + threadIdx." << dim_suffix(d) << ") / " << k_.warp[d] << ";\n";
        Dim3 wpb = warps_per_block(k_.block, k_.warp);
        line() << "const int warp_in_block = threadIdx.x / " << k_.warp[0] << " + " << wpb[0] << " * (threadIdx.y / "
               << k_.warp[1] << " + " << wpb[1] << " * (threadIdx.z / " << k_.warp[2] << "));\n";
        for (const auto &r : order_)
            line() << c_type(types_.at(r)) << " " << r << ";\n";
        block(k_.body);
        os_ << "}\n";
        return os_.str();
    }

private:
    std::ostream &line() {
        for (int i = 0; i < indent_; ++i) os_ << "    ";
        return os_;
    }

    ScalarType type_of(const ExprP &e) const {
        return std::visit(
            [&](const auto &n) -> ScalarType {
                using T = std::decay_t<decltype(n)>;
                if constexpr (std::is_same_v<T, FloatConst>) {
                    return ScalarType::F32;
                } else if constexpr (std::is_same_v<T, Reg>) {
                    auto it = types_.find(n.name);
                    return it == types_.end() ? ScalarType::Index : it->second;
                } else if constexpr (std::is_same_v<T, LoadShared>) {
                    auto *s = k_.find_shared(n.array);
                    return s ? elem_scalar(s->kind) : ScalarType::F32;
                } else if constexpr (std::is_same_v<T, LoadGlobal>) {
                    auto *b = k_.find_buffer(n.buffer);
                    return b ? elem_scalar(b->kind) : ScalarType::F32;
                } else if constexpr (std::is_same_v<T, Unary>) {
                    if (n.op == UnOp::ToF32) return ScalarType::F32;
                    if (n.op == UnOp::ToI32 || n.op == UnOp::ToU8) return ScalarType::I32;
                    return n.type;
                } else if constexpr (std::is_same_v<T, Binary>) {
                    switch (n.op) {
                    case BinOp::Lt:
                    case BinOp::Le:
                    case BinOp::Eq:
                    case BinOp::And:
                    case BinOp::Or:
                        return ScalarType::Index;
                    default:
                        return n.type;
                    }
                } else if constexpr (std::is_same_v<T, Select>) {
                    if (std::holds_alternative<Unreachable>(n.if_true->node)) return type_of(n.if_false);
                    return type_of(n.if_true);
                } else {
                    return ScalarType::Index;
                }
            },
            e->node);
    }

    void infer_types(const Block &b) {
        for (const auto &s : b) {
            if (auto *a = std::get_if<Assign>(&s.node)) note(a->reg, type_of(a->value));
            if (auto *sh = std::get_if<Shuffle>(&s.node)) {
                auto it = types_.find(sh->src);
                note(sh->dst, it == types_.end() ? ScalarType::F32 : it->second);
            }
            if (auto *i = std::get_if<If>(&s.node)) infer_types(i->then_body);
            if (auto *l = std::get_if<Loop>(&s.node)) infer_types(l->body);
        }
    }

    void note(const std::string &r, ScalarType t) {
        if (types_.emplace(r, t).second) order_.push_back(r);
    }

    std::string expr(const ExprP &e) const {
        return std::visit(
            [&](const auto &n) -> std::string {
                using T = std::decay_t<decltype(n)>;
                if constexpr (std::is_same_v<T, IntConst>) {
                    return std::to_string(n.value);
                } else if constexpr (std::is_same_v<T, FloatConst>) {
                    std::ostringstream os;
                    os.precision(9);
                    os << std::showpoint << static_cast<float>(n.value) << "f";
                    return os.str();
                } else if constexpr (std::is_same_v<T, LaneId>) {
                    return std::string("lane_") + dim_suffix(n.dim);
                } else if constexpr (std::is_same_v<T, WarpId>) {
                    return std::string("warp_") + dim_suffix(n.dim);
                } else if constexpr (std::is_same_v<T, WarpInBlock>) {
                    return "warp_in_block";
                } else if constexpr (std::is_same_v<T, LoopVar>) {
                    return n.name;
                } else if constexpr (std::is_same_v<T, Reg>) {
                    return n.name;
                } else if constexpr (std::is_same_v<T, LoadShared>) {
                    return n.array + "[" + expr(n.index) + "]";
                } else if constexpr (std::is_same_v<T, LoadGlobal>) {
                    const BufferDecl *b = k_.find_buffer(n.buffer);
                    std::string idx;
                    for (int d = static_cast<int>(n.coords.size()) - 1; d >= 0; --d) {
                        int64_t lo = b ? b->origin[d] : 0;
                        int64_t ext = b ? b->extents[d] : 1;
                        std::string c = "clampi(" + expr(n.coords[d]) + ", " + std::to_string(lo) + ", " +
                                        std::to_string(lo + ext - 1) + ")";
                        if (lo != 0) c = "(" + c + " - " + std::to_string(lo) + ")";
                        idx = idx.empty() ? c : c + " + " + std::to_string(ext) + " * (" + idx + ")";
                    }
                    return n.buffer + "[" + idx + "]";
                } else if constexpr (std::is_same_v<T, Unary>) {
                    std::string a = expr(n.arg);
                    bool f = n.type == ScalarType::F32;
                    switch (n.op) {
                    case UnOp::Neg:
                        return "(-" + a + ")";
                    case UnOp::Abs:
                        return (f ? "fabsf(" : "abs(") + a + ")";
                    case UnOp::Sqrt:
                        return f ? "sqrtf(" + a + ")" : "(int)sqrtf((float)" + a + ")";
                    case UnOp::Exp:
                        return f ? "expf(" + a + ")" : "(int)expf((float)" + a + ")";
                    case UnOp::Not:
                        return "(!" + a + ")";
                    case UnOp::ToF32:
                        return "(float)(" + a + ")";
                    case UnOp::ToI32:
                        return "f2i_sat(" + a + ")";
                    case UnOp::ToU8:
                        return "min(max(" + a + ", 0), 255)";
                    }
                    return a;
                } else if constexpr (std::is_same_v<T, Binary>) {
                    std::string a = expr(n.lhs), b = expr(n.rhs);
                    bool f = n.type == ScalarType::F32;
                    switch (n.op) {
                    case BinOp::Add:
                        return "(" + a + " + " + b + ")";
                    case BinOp::Sub:
                        return "(" + a + " - " + b + ")";
                    case BinOp::Mul:
                        return "(" + a + " * " + b + ")";
                    case BinOp::Div:
                        return "(" + a + " / " + b + ")";
                    case BinOp::Min:
                        return (f ? "fminf(" : "min(") + a + ", " + b + ")";
                    case BinOp::Max:
                        return (f ? "fmaxf(" : "max(") + a + ", " + b + ")";
                    case BinOp::FloorDiv:
                        return "floordiv(" + a + ", " + b + ")";
                    case BinOp::Mod:
                        return "floormod(" + a + ", " + b + ")";
                    case BinOp::Lt:
                        return "(" + a + " < " + b + ")";
                    case BinOp::Le:
                        return "(" + a + " <= " + b + ")";
                    case BinOp::Eq:
                        return "(" + a + " == " + b + ")";
                    case BinOp::And:
                        return "(" + a + " && " + b + ")";
                    case BinOp::Or:
                        return "(" + a + " || " + b + ")";
                    }
                    return a;
                } else if constexpr (std::is_same_v<T, Select>) {
                    return "(" + expr(n.cond) + " ? " + expr(n.if_true) + " : " + expr(n.if_false) + ")";
                } else {
                    return "unreachable()";
                }
            },
            e->node);
    }

    void block(const Block &b) {
        for (const auto &s : b) stmt(s);
    }

    void stmt(const Stmt &s) {
        std::visit(
            [&](const auto &n) {
                using T = std::decay_t<decltype(n)>;
                if constexpr (std::is_same_v<T, Assign>) {
                    line() << n.reg << " = " << expr(n.value) << ";\n";
                } else if constexpr (std::is_same_v<T, Shuffle>) {
                    char mask[16];
                    std::snprintf(mask, sizeof mask, "0x%08x", n.mask);
                    line() << n.dst << " = __shfl_sync(" << mask << ", " << n.src << ", " << expr(n.src_lane) << ", "
                           << k_.warp_size << ");\n";
                } else if constexpr (std::is_same_v<T, StoreShared>) {
                    line() << n.array << "[" << expr(n.index) << "] = " << expr(n.value) << ";\n";
                } else if constexpr (std::is_same_v<T, StoreGlobal>) {
                    const BufferDecl *b = k_.find_buffer(n.buffer);
                    std::string idx;
                    for (int d = static_cast<int>(n.coords.size()) - 1; d >= 0; --d) {
                        int64_t lo = b ? b->origin[d] : 0;
                        int64_t ext = b ? b->extents[d] : 1;
                        std::string c = expr(n.coords[d]);
                        if (lo != 0) c = "(" + c + " - " + std::to_string(lo) + ")";
                        idx = idx.empty() ? c : c + " + " + std::to_string(ext) + " * (" + idx + ")";
                    }
                    line() << n.buffer << "[" << idx << "] = " << expr(n.value) << ";\n";
                } else if constexpr (std::is_same_v<T, If>) {
                    line() << "if (" << expr(n.cond) << ") {\n";
                    ++indent_;
                    block(n.then_body);
                    --indent_;
                    line() << "}\n";
                } else if constexpr (std::is_same_v<T, Loop>) {
                    line() << "for (int " << n.var << " = 0; " << n.var << " < " << n.count << "; ++" << n.var
                           << ") {\n";
                    ++indent_;
                    block(n.body);
                    --indent_;
                    line() << "}\n";
                } else if constexpr (std::is_same_v<T, SyncWarp>) {
                    line() << "__syncwarp();\n";
                } else {
                    line() << "__syncthreads();\n";
                }
            },
            s.node);
    }

    const Kernel &k_;
    std::ostringstream os_;
    int indent_ = 0;
    std::map<std::string, ScalarType> types_;
    std::vector<std::string> order_;
};

}  // namespace

std::string render_cuda(const Kernel &k) { return CudaPrinter(k).run(); }

}  // namespace warptile::ir
