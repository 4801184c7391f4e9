#pragma once

// Input program representation: a DAG of stencil stages over rectangular
// integer domains, plus the whole-domain reference interpreter.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace warptile {

constexpr int kMaxDims = 3;

enum class ElemKind { Float32, Int32, UInt8 };

/// Arithmetic domain used while evaluating a stage. uint8 stages evaluate in int32.
enum class EvalKind { F32, I32 };

std::string_view to_string(ElemKind kind);
std::optional<ElemKind> parse_elem_kind(std::string_view text);

// ---------------------------------------------------------------------------
// Expressions

enum class BinaryOp { Add, Sub, Mul, Div, Min, Max };
enum class UnaryOp { Neg, Abs, Sqrt, Exp };

/// `coef * var + offset`, where var is the consumer's variable for the same dimension.
struct AffineIndex {
    int64_t coef = 1;
    int64_t offset = 0;

    bool operator==(const AffineIndex &) const = default;
};

struct StencilExpr;
using ExprRef = std::shared_ptr<const StencilExpr>;

struct ConstNode {
    double value = 0;
};

struct LoadNode {
    std::string source;
    bool from_image = false;
    std::vector<AffineIndex> index;
};

struct BinaryNode {
    BinaryOp op;
    ExprRef lhs;
    ExprRef rhs;
};

struct UnaryNode {
    UnaryOp op;
    ExprRef arg;
};

struct StencilExpr {
    std::variant<ConstNode, LoadNode, BinaryNode, UnaryNode> node;
};

ExprRef make_const(double value);
ExprRef make_load(std::string source, bool from_image, std::vector<AffineIndex> index);
ExprRef make_binary(BinaryOp op, ExprRef lhs, ExprRef rhs);
ExprRef make_unary(UnaryOp op, ExprRef arg);

bool structurally_equal(const StencilExpr &a, const StencilExpr &b);

/// Every load node in left-to-right evaluation order.
std::vector<const LoadNode *> collect_loads(const StencilExpr &expr);

// ---------------------------------------------------------------------------
// Program

struct ImageParam {
    std::string name;
    std::vector<int64_t> dims;
    ElemKind kind = ElemKind::Float32;
};

/// Closed integer interval [lo, hi].
struct Interval {
    int64_t lo = 0;
    int64_t hi = 0;

    int64_t extent() const { return hi - lo + 1; }
    bool contains(int64_t v) const { return v >= lo && v <= hi; }
    int64_t clamp(int64_t v) const { return v < lo ? lo : (v > hi ? hi : v); }
    bool operator==(const Interval &) const = default;
};

struct Stage {
    std::string name;
    std::vector<std::string> vars;
    std::vector<Interval> domain;
    ExprRef expr;
    ElemKind kind = ElemKind::Float32;

    int dims() const { return static_cast<int>(domain.size()); }
};

/// Immutable, validated pipeline. Construct with PipelineGraph::create or parse_pipeline.
class PipelineGraph {
public:
    /// Validates and builds a graph. Stage loads with coefficient != 1 are accepted here
    /// (the parser rejects them); fusion treats such accesses as non-constant.
    static PipelineGraph create(std::vector<ImageParam> images, std::vector<Stage> stages,
                                std::vector<std::string> liveouts);

    const std::vector<ImageParam> &images() const { return images_; }
    const std::vector<Stage> &stages() const { return stages_; }
    const std::vector<std::string> &liveouts() const { return liveouts_; }

    int num_stages() const { return static_cast<int>(stages_.size()); }
    std::optional<int> stage_index(std::string_view name) const;
    const Stage &stage(std::string_view name) const;
    const ImageParam &image(std::string_view name) const;
    bool is_liveout(std::string_view name) const;

    /// Distinct stage indices read by stage `s`, ascending.
    const std::vector<int> &producers(int s) const { return producers_[s]; }
    /// Distinct stage indices reading stage `s`, ascending.
    const std::vector<int> &consumers(int s) const { return consumers_[s]; }

private:
    std::vector<ImageParam> images_;
    std::vector<Stage> stages_;
    std::vector<std::string> liveouts_;
    std::vector<std::vector<int>> producers_;
    std::vector<std::vector<int>> consumers_;
};

/// Parses the line-oriented pipeline description. Throws ParseError / ValidationError.
PipelineGraph parse_pipeline(std::string_view text);

/// Canonical text form; parse_pipeline(print_pipeline(g)) reproduces g.
std::string print_pipeline(const PipelineGraph &g);
std::string print_expr(const StencilExpr &expr, const std::vector<std::string> &vars);

/// Stage names with producers before consumers; ties broken by declaration order.
std::vector<std::string> topo_order(const PipelineGraph &g);
std::vector<int> topo_order_indices(const PipelineGraph &g);

// ---------------------------------------------------------------------------
// Scalar semantics shared by every evaluator. Values travel as doubles holding
// either an exact float32 or an exact int32.

namespace arith {

EvalKind eval_kind(ElemKind kind);
size_t elem_bytes(ElemKind kind);
double to_eval(double v, EvalKind kind);
double to_storage(double v, ElemKind kind);
double apply(BinaryOp op, EvalKind kind, double a, double b);
double apply(UnaryOp op, EvalKind kind, double a);

}  // namespace arith

// ---------------------------------------------------------------------------
// Buffers and the reference interpreter

/// Dense buffer over a box; dimension 0 is innermost.
struct Buffer {
    ElemKind kind = ElemKind::Float32;
    std::vector<int64_t> origin;
    std::vector<int64_t> extents;
    std::vector<double> data;

    static Buffer zeros(ElemKind kind, std::vector<int64_t> origin, std::vector<int64_t> extents);

    int dims() const { return static_cast<int>(extents.size()); }
    int64_t volume() const;
    int64_t linear(std::span<const int64_t> coords) const;
    double at(std::span<const int64_t> coords) const { return data[linear(coords)]; }
    double &at(std::span<const int64_t> coords) { return data[linear(coords)]; }
};

using BufferMap = std::map<std::string, Buffer>;

/// Buffer shaped like a stage's domain.
Buffer stage_buffer(const Stage &stage);

/// Fills each image with values from a seeded generator (deterministic per seed).
BufferMap random_inputs(const PipelineGraph &g, uint64_t seed);

struct EvalStats {
    std::map<std::string, int64_t> points_evaluated;
};

/// Whole-domain evaluation in topological order with clamp-to-edge reads.
/// Returns buffers for all liveouts, or for every stage when `all_stages` is set.
BufferMap reference_eval(const PipelineGraph &g, const BufferMap &inputs, bool all_stages = false,
                         EvalStats *stats = nullptr);

}  // namespace warptile
