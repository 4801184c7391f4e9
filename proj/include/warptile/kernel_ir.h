#pragma once

// Language-neutral kernel program: per-lane scalar registers, warp-private
// shared-memory slices, shuffles and barriers. Executed by the simulator and
// rendered to CUDA-dialect text.

#include <cstdint>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "warptile/otpw.h"
#include "warptile/pipeline.h"

namespace warptile::ir {

/// Index values are exact 64-bit integers; F32/I32 follow arith semantics.
enum class ScalarType { Index, F32, I32 };

enum class UnOp { Neg, Abs, Sqrt, Exp, Not, ToF32, ToI32, ToU8 };
enum class BinOp { Add, Sub, Mul, Div, Min, Max, FloorDiv, Mod, Lt, Le, Eq, And, Or };

struct Expr;
using ExprP = std::shared_ptr<const Expr>;

struct IntConst {
    int64_t value = 0;
};
struct FloatConst {
    double value = 0;
};
struct LaneId {
    int dim = 0;
};
/// Global warp coordinate: (blockIdx * blockDim + threadIdx) / warpDim per dimension.
struct WarpId {
    int dim = 0;
};
/// Linear index of the warp within its block.
struct WarpInBlock {};
struct LoopVar {
    std::string name;
};
struct Reg {
    std::string name;
};
struct LoadShared {
    std::string array;
    ExprP index;
};
/// Coordinates are clamped into the buffer's box before the access.
struct LoadGlobal {
    std::string buffer;
    std::vector<ExprP> coords;
};
struct Unary {
    UnOp op;
    ScalarType type;
    ExprP arg;
};
struct Binary {
    BinOp op;
    ScalarType type;
    ExprP lhs;
    ExprP rhs;
};
/// Only the chosen branch is evaluated, per lane.
struct Select {
    ExprP cond;
    ExprP if_true;
    ExprP if_false;
};
/// Evaluating this is a simulator fault.
struct Unreachable {};

struct Expr {
    std::variant<IntConst, FloatConst, LaneId, WarpId, WarpInBlock, LoopVar, Reg, LoadShared, LoadGlobal, Unary,
                 Binary, Select, Unreachable>
        node;
};

ExprP int_const(int64_t v);
ExprP float_const(double v);
ExprP lane_id(int dim);
ExprP warp_id(int dim);
ExprP warp_in_block();
ExprP loop_var(std::string name);
ExprP reg(std::string name);
ExprP load_shared(std::string array, ExprP index);
ExprP load_global(std::string buffer, std::vector<ExprP> coords);
ExprP unary(UnOp op, ScalarType type, ExprP arg);
ExprP binary(BinOp op, ScalarType type, ExprP lhs, ExprP rhs);
ExprP select(ExprP cond, ExprP if_true, ExprP if_false);
ExprP unreachable();

// Index-typed shorthands; constant operands are folded.
ExprP add(ExprP a, ExprP b);
ExprP sub(ExprP a, ExprP b);
ExprP mul(ExprP a, ExprP b);
ExprP add(ExprP a, int64_t b);
ExprP mul(ExprP a, int64_t b);
ExprP floor_div(ExprP a, int64_t b);
ExprP mod(ExprP a, int64_t b);
ExprP lt(ExprP a, ExprP b);
ExprP le(ExprP a, ExprP b);
ExprP lt(ExprP a, int64_t b);
ExprP ge(ExprP a, int64_t b);
ExprP logical_and(ExprP a, ExprP b);

struct Stmt;
using Block = std::vector<Stmt>;

struct Assign {
    std::string reg;
    ExprP value;
};
struct Shuffle {
    std::string dst;
    std::string src;
    ExprP src_lane;
    uint32_t mask = 0xffffffffu;
};
struct StoreShared {
    std::string array;
    ExprP index;
    ExprP value;
};
/// Coordinates must lie inside the buffer's box.
struct StoreGlobal {
    std::string buffer;
    std::vector<ExprP> coords;
    ExprP value;
};
struct If {
    ExprP cond;
    Block then_body;
};
struct Loop {
    std::string var;
    int64_t count = 0;
    Block body;
};
struct SyncWarp {};
struct SyncBlock {};

struct Stmt {
    std::variant<Assign, Shuffle, StoreShared, StoreGlobal, If, Loop, SyncWarp, SyncBlock> node;
};

struct SharedDecl {
    std::string name;
    ElemKind kind = ElemKind::Float32;
    /// Elements per block.
    int64_t size = 0;
};

struct BufferDecl {
    std::string name;
    ElemKind kind = ElemKind::Float32;
    std::vector<int64_t> origin;
    std::vector<int64_t> extents;
    bool output = false;
};

struct Kernel {
    std::string name;
    int64_t warp_size = 32;
    Dim3 block{1, 1, 1};
    Dim3 grid{1, 1, 1};
    Dim3 warp{1, 1, 1};
    std::vector<BufferDecl> buffers;
    std::vector<SharedDecl> shared;
    Block body;

    const BufferDecl *find_buffer(const std::string &name) const;
    const SharedDecl *find_shared(const std::string &name) const;
};

std::string to_string(ScalarType t);
std::string to_string(UnOp op);
std::string to_string(BinOp op);

/// Register names in first-assignment order.
std::vector<std::string> declared_registers(const Kernel &k);

struct SyncCensus {
    int64_t sync_warp = 0;
    int64_t sync_block = 0;
};
/// Static count of barrier statements.
SyncCensus count_sync_stalls(const Kernel &k);

/// Shuffle statements nested inside an If (they must all be at loop/top level).
int64_t count_guarded_shuffles(const Kernel &k);

std::string to_json_text(const Kernel &k);
Kernel from_json_text(const std::string &text);

/// Deterministic CUDA-dialect rendering.
std::string render_cuda(const Kernel &k);

}  // namespace warptile::ir
