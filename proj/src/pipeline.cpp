#include "warptile/pipeline.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <queue>
#include <random>
#include <set>
#include <sstream>

#include "warptile/error.h"

namespace warptile {

std::string_view to_string(ElemKind kind) {
    switch (kind) {
    case ElemKind::Float32:
        return "float32";
    case ElemKind::Int32:
        return "int32";
    case ElemKind::UInt8:
        return "uint8";
    }
    return "?";
}

std::optional<ElemKind> parse_elem_kind(std::string_view text) {
    if (text == "float32") return ElemKind::Float32;
    if (text == "int32") return ElemKind::Int32;
    if (text == "uint8") return ElemKind::UInt8;
    return std::nullopt;
}

ExprRef make_const(double value) {
    return std::make_shared<const StencilExpr>(StencilExpr{ConstNode{value}});
}

ExprRef make_load(std::string source, bool from_image, std::vector<AffineIndex> index) {
    return std::make_shared<const StencilExpr>(
        StencilExpr{LoadNode{std::move(source), from_image, std::move(index)}});
}

ExprRef make_binary(BinaryOp op, ExprRef lhs, ExprRef rhs) {
    return std::make_shared<const StencilExpr>(StencilExpr{BinaryNode{op, std::move(lhs), std::move(rhs)}});
}

ExprRef make_unary(UnaryOp op, ExprRef arg) {
    return std::make_shared<const StencilExpr>(StencilExpr{UnaryNode{op, std::move(arg)}});
}

bool structurally_equal(const StencilExpr &a, const StencilExpr &b) {
    if (a.node.index() != b.node.index()) return false;
    if (auto *ca = std::get_if<ConstNode>(&a.node)) {
        const auto &cb = std::get<ConstNode>(b.node);
        return std::memcmp(&ca->value, &cb.value, sizeof(double)) == 0;
    }
    if (auto *la = std::get_if<LoadNode>(&a.node)) {
        const auto &lb = std::get<LoadNode>(b.node);
        return la->source == lb.source && la->from_image == lb.from_image && la->index == lb.index;
    }
    if (auto *ba = std::get_if<BinaryNode>(&a.node)) {
        const auto &bb = std::get<BinaryNode>(b.node);
        return ba->op == bb.op && structurally_equal(*ba->lhs, *bb.lhs) &&
               structurally_equal(*ba->rhs, *bb.rhs);
    }
    const auto &ua = std::get<UnaryNode>(a.node);
    const auto &ub = std::get<UnaryNode>(b.node);
    return ua.op == ub.op && structurally_equal(*ua.arg, *ub.arg);
}

namespace {

void collect_loads_into(const StencilExpr &e, std::vector<const LoadNode *> &out) {
    std::visit(
        [&](const auto &n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, LoadNode>) {
                out.push_back(&n);
            } else if constexpr (std::is_same_v<T, BinaryNode>) {
                collect_loads_into(*n.lhs, out);
                collect_loads_into(*n.rhs, out);
            } else if constexpr (std::is_same_v<T, UnaryNode>) {
                collect_loads_into(*n.arg, out);
            }
        },
        e.node);
}

}  // namespace

std::vector<const LoadNode *> collect_loads(const StencilExpr &expr) {
    std::vector<const LoadNode *> out;
    collect_loads_into(expr, out);
    return out;
}

// ---------------------------------------------------------------------------
// Graph construction

PipelineGraph PipelineGraph::create(std::vector<ImageParam> images, std::vector<Stage> stages,
                                    std::vector<std::string> liveouts) {
    if (stages.empty()) throw ValidationError("no stages");

    std::set<std::string> names;
    for (const auto &img : images) {
        if (img.dims.empty() || img.dims.size() > kMaxDims)
            throw ValidationError("image '" + img.name + "' must have 1 to 3 dimensions");
        for (int64_t e : img.dims)
            if (e < 1) throw ValidationError("image '" + img.name + "' has an extent < 1");
        if (!names.insert(img.name).second) throw ValidationError("duplicate name '" + img.name + "'");
    }
    for (const auto &st : stages) {
        if (st.domain.empty() || st.domain.size() > kMaxDims)
            throw ValidationError("stage '" + st.name + "' must have 1 to 3 dimensions");
        if (st.vars.size() != st.domain.size())
            throw ValidationError("stage '" + st.name + "' declares " + std::to_string(st.vars.size()) +
                                  " variables for a " + std::to_string(st.domain.size()) + "-D domain");
        for (const auto &iv : st.domain)
            if (iv.hi < iv.lo) throw ValidationError("stage '" + st.name + "' has an empty domain interval");
        if (!st.expr) throw ValidationError("stage '" + st.name + "' has no expression");
        if (!names.insert(st.name).second) throw ValidationError("duplicate name '" + st.name + "'");
    }

    PipelineGraph g;
    g.images_ = std::move(images);
    g.stages_ = std::move(stages);
    const int n = g.num_stages();
    g.producers_.assign(n, {});
    g.consumers_.assign(n, {});

    for (int s = 0; s < n; ++s) {
        const Stage &st = g.stages_[s];
        std::set<int> prods;
        for (const LoadNode *ld : collect_loads(*st.expr)) {
            if (ld->from_image) {
                auto it = std::find_if(g.images_.begin(), g.images_.end(),
                                       [&](const ImageParam &i) { return i.name == ld->source; });
                if (it == g.images_.end())
                    throw ValidationError("stage '" + st.name + "' reads undeclared image '" + ld->source + "'");
                if (ld->index.size() != it->dims.size())
                    throw ValidationError("stage '" + st.name + "' indexes image '" + ld->source + "' with " +
                                          std::to_string(ld->index.size()) + " coordinates");
                if (ld->index.size() > st.domain.size())
                    throw ValidationError("stage '" + st.name + "' reads image '" + ld->source +
                                          "' with more dimensions than it iterates");
            } else {
                auto p = g.stage_index(ld->source);
                if (!p) throw ValidationError("stage '" + st.name + "' reads undeclared stage '" + ld->source + "'");
                if (ld->index.size() != st.domain.size() || g.stages_[*p].domain.size() != st.domain.size())
                    throw ValidationError("stage '" + st.name + "' reads stage '" + ld->source +
                                          "' with mismatched dimensionality");
                prods.insert(*p);
            }
        }
        g.producers_[s].assign(prods.begin(), prods.end());
        for (int p : prods) g.consumers_[p].push_back(s);
    }

    // Cycle detection (Kahn); self-loops included.
    {
        std::vector<int> indeg(n, 0);
        for (int s = 0; s < n; ++s) indeg[s] = static_cast<int>(g.producers_[s].size());
        std::vector<int> ready;
        for (int s = 0; s < n; ++s)
            if (indeg[s] == 0) ready.push_back(s);
        int seen = 0;
        while (!ready.empty()) {
            int s = ready.back();
            ready.pop_back();
            ++seen;
            for (int c : g.consumers_[s])
                if (--indeg[c] == 0) ready.push_back(c);
        }
        if (seen != n) throw ValidationError("cyclic reference");
    }

    if (liveouts.empty()) throw ValidationError("no liveouts");
    std::set<std::string> live_set;
    for (const auto &l : liveouts) {
        if (!g.stage_index(l)) throw ValidationError("liveout '" + l + "' is not a stage");
        if (!live_set.insert(l).second) throw ValidationError("duplicate liveout '" + l + "'");
    }
    g.liveouts_ = std::move(liveouts);

    std::vector<bool> reach(n, false);
    std::vector<int> work;
    for (const auto &l : g.liveouts_) {
        int s = *g.stage_index(l);
        reach[s] = true;
        work.push_back(s);
    }
    while (!work.empty()) {
        int s = work.back();
        work.pop_back();
        for (int p : g.producers_[s])
            if (!reach[p]) {
                reach[p] = true;
                work.push_back(p);
            }
    }
    for (int s = 0; s < n; ++s)
        if (!reach[s])
            throw ValidationError("stage '" + g.stages_[s].name + "' is unreachable from any liveout");
    return g;
}

std::optional<int> PipelineGraph::stage_index(std::string_view name) const {
    for (size_t i = 0; i < stages_.size(); ++i)
        if (stages_[i].name == name) return static_cast<int>(i);
    return std::nullopt;
}

const Stage &PipelineGraph::stage(std::string_view name) const {
    auto i = stage_index(name);
    if (!i) throw ValidationError("unknown stage '" + std::string(name) + "'");
    return stages_[*i];
}

const ImageParam &PipelineGraph::image(std::string_view name) const {
    for (const auto &img : images_)
        if (img.name == name) return img;
    throw ValidationError("unknown image '" + std::string(name) + "'");
}

bool PipelineGraph::is_liveout(std::string_view name) const {
    return std::find(liveouts_.begin(), liveouts_.end(), name) != liveouts_.end();
}

std::vector<int> topo_order_indices(const PipelineGraph &g) {
    const int n = g.num_stages();
    std::vector<int> indeg(n);
    for (int s = 0; s < n; ++s) indeg[s] = static_cast<int>(g.producers(s).size());
    std::priority_queue<int, std::vector<int>, std::greater<>> ready;
    for (int s = 0; s < n; ++s)
        if (indeg[s] == 0) ready.push(s);
    std::vector<int> order;
    while (!ready.empty()) {
        int s = ready.top();
        ready.pop();
        order.push_back(s);
        for (int c : g.consumers(s))
            if (--indeg[c] == 0) ready.push(c);
    }
    return order;
}

std::vector<std::string> topo_order(const PipelineGraph &g) {
    std::vector<std::string> names;
    for (int s : topo_order_indices(g)) names.push_back(g.stages()[s].name);
    return names;
}

// ---------------------------------------------------------------------------
// Parser

namespace {

enum class Tok { Ident, Number, Punct, End };

struct Token {
    Tok kind = Tok::End;
    std::string text;
    int col = 1;
};

class Lexer {
public:
    Lexer(std::string_view line, int line_no) : line_no_(line_no) {
        size_t i = 0;
        while (i < line.size()) {
            char c = line[i];
            if (c == '#') break;
            if (std::isspace(static_cast<unsigned char>(c))) {
                ++i;
                continue;
            }
            int col = static_cast<int>(i) + 1;
            if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
                size_t j = i;
                while (j < line.size() && (std::isalnum(static_cast<unsigned char>(line[j])) || line[j] == '_')) ++j;
                toks_.push_back({Tok::Ident, std::string(line.substr(i, j - i)), col});
                i = j;
            } else if (std::isdigit(static_cast<unsigned char>(c))) {
                size_t j = i;
                while (j < line.size() && std::isdigit(static_cast<unsigned char>(line[j]))) ++j;
                if (j + 1 < line.size() && line[j] == '.' && std::isdigit(static_cast<unsigned char>(line[j + 1]))) {
                    ++j;
                    while (j < line.size() && std::isdigit(static_cast<unsigned char>(line[j]))) ++j;
                }
                if (j < line.size() && (line[j] == 'e' || line[j] == 'E')) {
                    size_t k = j + 1;
                    if (k < line.size() && (line[k] == '+' || line[k] == '-')) ++k;
                    if (k < line.size() && std::isdigit(static_cast<unsigned char>(line[k]))) {
                        while (k < line.size() && std::isdigit(static_cast<unsigned char>(line[k]))) ++k;
                        j = k;
                    }
                }
                toks_.push_back({Tok::Number, std::string(line.substr(i, j - i)), col});
                i = j;
            } else if (c == '.' && i + 1 < line.size() && line[i + 1] == '.') {
                toks_.push_back({Tok::Punct, "..", col});
                i += 2;
            } else if (std::strchr("()[],:=+-*/", c)) {
                toks_.push_back({Tok::Punct, std::string(1, c), col});
                ++i;
            } else {
                throw ParseError(line_no_, col, std::string("unexpected character '") + c + "'");
            }
        }
        end_col_ = static_cast<int>(line.size()) + 1;
    }

    bool at_end() const { return pos_ >= toks_.size(); }
    const Token &peek() const {
        static const Token end{};
        return at_end() ? end : toks_[pos_];
    }
    int col() const { return at_end() ? end_col_ : toks_[pos_].col; }
    Token next() {
        if (at_end()) throw error("unexpected end of line");
        return toks_[pos_++];
    }
    bool accept(std::string_view punct) {
        if (!at_end() && toks_[pos_].kind == Tok::Punct && toks_[pos_].text == punct) {
            ++pos_;
            return true;
        }
        return false;
    }
    void expect(std::string_view punct) {
        if (!accept(punct)) throw error("expected '" + std::string(punct) + "'");
    }
    std::string ident() {
        if (at_end() || peek().kind != Tok::Ident) throw error("expected identifier");
        return next().text;
    }
    int64_t integer() {
        bool neg = false;
        if (accept("-")) neg = true;
        else accept("+");
        if (at_end() || peek().kind != Tok::Number) throw error("expected integer");
        Token t = next();
        if (t.text.find_first_not_of("0123456789") != std::string::npos)
            throw ParseError(line_no_, t.col, "expected integer, found '" + t.text + "'");
        int64_t v = std::stoll(t.text);
        return neg ? -v : v;
    }
    ParseError error(const std::string &msg) const { return ParseError(line_no_, col(), msg); }
    int line_no() const { return line_no_; }

private:
    std::vector<Token> toks_;
    size_t pos_ = 0;
    int line_no_;
    int end_col_ = 1;
};

struct DeclScope {
    std::set<std::string> images;
    std::set<std::string> stages;  // every stage name in the file (forward refs resolve at validation)
};

class ExprParser {
public:
    ExprParser(Lexer &lx, const std::vector<std::string> &vars, const DeclScope &scope)
        : lx_(lx), vars_(vars), scope_(scope) {}

    ExprRef parse_expr() {
        ExprRef lhs = parse_term();
        for (;;) {
            if (lx_.accept("+")) lhs = make_binary(BinaryOp::Add, lhs, parse_term());
            else if (lx_.accept("-")) lhs = make_binary(BinaryOp::Sub, lhs, parse_term());
            else return lhs;
        }
    }

private:
    ExprRef parse_term() {
        ExprRef lhs = parse_unary();
        for (;;) {
            if (lx_.accept("*")) lhs = make_binary(BinaryOp::Mul, lhs, parse_unary());
            else if (lx_.accept("/")) lhs = make_binary(BinaryOp::Div, lhs, parse_unary());
            else return lhs;
        }
    }

    ExprRef parse_unary() {
        if (lx_.accept("-")) return make_unary(UnaryOp::Neg, parse_unary());
        return parse_primary();
    }

    ExprRef parse_primary() {
        if (lx_.accept("(")) {
            ExprRef e = parse_expr();
            lx_.expect(")");
            return e;
        }
        if (lx_.at_end()) throw lx_.error("unexpected end of expression");
        const Token &t = lx_.peek();
        if (t.kind == Tok::Number) return make_const(std::stod(lx_.next().text));
        if (t.kind != Tok::Ident) throw lx_.error("unexpected '" + t.text + "'");
        int col = t.col;
        std::string name = lx_.next().text;
        if (lx_.accept("(")) return parse_call(name, col);
        if (lx_.accept("[")) return parse_load(name, col);
        throw ParseError(lx_.line_no(), col, "unexpected identifier '" + name + "'");
    }

    ExprRef parse_call(const std::string &fn, int col) {
        std::vector<ExprRef> args{parse_expr()};
        while (lx_.accept(",")) args.push_back(parse_expr());
        lx_.expect(")");
        auto arity = [&](size_t n) {
            if (args.size() != n)
                throw ParseError(lx_.line_no(), col, fn + " expects " + std::to_string(n) + " argument(s)");
        };
        if (fn == "min" || fn == "max") {
            arity(2);
            return make_binary(fn == "min" ? BinaryOp::Min : BinaryOp::Max, args[0], args[1]);
        }
        if (fn == "abs" || fn == "sqrt" || fn == "exp") {
            arity(1);
            UnaryOp op = fn == "abs" ? UnaryOp::Abs : (fn == "sqrt" ? UnaryOp::Sqrt : UnaryOp::Exp);
            return make_unary(op, args[0]);
        }
        throw ParseError(lx_.line_no(), col, "unknown function '" + fn + "'");
    }

    ExprRef parse_load(const std::string &name, int col) {
        bool is_image = scope_.images.count(name) > 0;
        if (!is_image && !scope_.stages.count(name))
            throw ParseError(lx_.line_no(), col, "reference to undeclared stage or image '" + name + "'");
        std::vector<AffineIndex> index;
        do {
            index.push_back(parse_index(static_cast<int>(index.size())));
        } while (lx_.accept(","));
        lx_.expect("]");
        if (!is_image)
            for (const auto &ix : index)
                if (ix.coef != 1)
                    throw ParseError(lx_.line_no(), col,
                                     "stage load '" + name + "' must use unit coefficients (constant offsets)");
        return make_load(name, is_image, std::move(index));
    }

    // Affine form over the consumer variable of dimension `dim`: sum of int, var, int*var terms.
    AffineIndex parse_index(int dim) {
        int col = lx_.col();
        if (dim >= static_cast<int>(vars_.size()))
            throw ParseError(lx_.line_no(), col, "too many index coordinates");
        const std::string &want = vars_[dim];
        AffineIndex ix{0, 0};
        bool first = true;
        for (;;) {
            int sign = 1;
            if (lx_.accept("-")) sign = -1;
            else if (!lx_.accept("+") && !first) break;
            first = false;
            int term_col = lx_.col();
            int64_t factor = 1;
            bool has_var = false;
            for (bool more = true; more;) {
                const Token &t = lx_.peek();
                if (t.kind == Tok::Number) {
                    Token nt = lx_.next();
                    if (nt.text.find_first_not_of("0123456789") != std::string::npos)
                        throw ParseError(lx_.line_no(), nt.col, "non-affine index (non-integer constant)");
                    factor *= std::stoll(nt.text);
                } else if (t.kind == Tok::Ident) {
                    Token vt = lx_.next();
                    if (std::find(vars_.begin(), vars_.end(), vt.text) == vars_.end())
                        throw ParseError(lx_.line_no(), vt.col, "unknown index variable '" + vt.text + "'");
                    if (has_var) throw ParseError(lx_.line_no(), vt.col, "non-affine index");
                    if (vt.text != want)
                        throw ParseError(lx_.line_no(), vt.col,
                                         "non-affine index: coordinate " + std::to_string(dim) + " must use '" +
                                             want + "'");
                    has_var = true;
                } else if (t.kind == Tok::Punct && t.text == "(") {
                    throw ParseError(lx_.line_no(), t.col, "non-affine index");
                } else {
                    throw ParseError(lx_.line_no(), term_col, "malformed index");
                }
                if (lx_.accept("*")) continue;
                if (!lx_.at_end() && lx_.peek().kind == Tok::Punct && lx_.peek().text == "/")
                    throw ParseError(lx_.line_no(), lx_.col(), "non-affine index");
                more = false;
            }
            if (has_var) ix.coef += sign * factor;
            else ix.offset += sign * factor;
            if (lx_.at_end()) break;
            const Token &t = lx_.peek();
            if (t.kind == Tok::Punct && (t.text == "," || t.text == "]")) break;
            if (!(t.kind == Tok::Punct && (t.text == "+" || t.text == "-")))
                throw ParseError(lx_.line_no(), t.col, "non-affine index");
        }
        return ix;
    }

    Lexer &lx_;
    const std::vector<std::string> &vars_;
    const DeclScope &scope_;
};

std::string trim(std::string_view s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return std::string(s.substr(a, b - a));
}

}  // namespace

PipelineGraph parse_pipeline(std::string_view text) {
    std::vector<std::string> lines;
    {
        size_t start = 0;
        while (start <= text.size()) {
            size_t nl = text.find('\n', start);
            if (nl == std::string_view::npos) nl = text.size();
            std::string_view ln = text.substr(start, nl - start);
            if (!ln.empty() && ln.back() == '\r') ln.remove_suffix(1);
            lines.emplace_back(ln);
            start = nl + 1;
        }
    }

    // Pre-pass collects declared names so that reference errors can be positional.
    DeclScope scope;
    for (const auto &ln : lines) {
        std::string t = trim(ln.substr(0, ln.find('#')));
        std::istringstream is(t);
        std::string kw, rest;
        is >> kw >> rest;
        std::string name = rest.substr(0, rest.find('('));
        if (kw == "image") scope.images.insert(name);
        if (kw == "stage") scope.stages.insert(name);
    }

    std::vector<ImageParam> images;
    std::vector<Stage> stages;
    std::vector<std::string> liveouts;
    enum class Section { Images, Stages, Liveouts } section = Section::Images;

    for (size_t li = 0; li < lines.size(); ++li) {
        int line_no = static_cast<int>(li) + 1;
        Lexer lx(lines[li], line_no);
        if (lx.at_end()) continue;
        int kw_col = lx.col();
        std::string kw = lx.ident();
        if (kw == "image") {
            if (section != Section::Images) throw ParseError(line_no, kw_col, "image declarations must come first");
            ImageParam img;
            img.name = lx.ident();
            lx.expect("(");
            do {
                img.dims.push_back(lx.integer());
            } while (lx.accept(","));
            lx.expect(")");
            lx.expect(":");
            int kcol = lx.col();
            auto kind = parse_elem_kind(lx.ident());
            if (!kind) throw ParseError(line_no, kcol, "unknown element kind");
            img.kind = *kind;
            if (img.dims.size() > kMaxDims) throw ParseError(line_no, kw_col, "more than 3 dimensions");
            for (int64_t e : img.dims)
                if (e < 1) throw ParseError(line_no, kw_col, "image extents must be >= 1");
            images.push_back(std::move(img));
        } else if (kw == "stage") {
            if (section == Section::Liveouts) throw ParseError(line_no, kw_col, "stage after liveout");
            section = Section::Stages;
            Stage st;
            st.name = lx.ident();
            lx.expect("(");
            do {
                st.vars.push_back(lx.ident());
            } while (lx.accept(","));
            lx.expect(")");
            if (st.vars.size() > kMaxDims) throw ParseError(line_no, kw_col, "more than 3 dimensions");
            lx.expect("[");
            do {
                Interval iv;
                iv.lo = lx.integer();
                lx.expect("..");
                iv.hi = lx.integer();
                if (iv.hi < iv.lo) throw ParseError(line_no, lx.col(), "empty domain interval");
                st.domain.push_back(iv);
            } while (lx.accept(","));
            lx.expect("]");
            if (st.domain.size() != st.vars.size())
                throw ParseError(line_no, kw_col, "domain rank does not match variable count");
            if (lx.accept(":")) {
                int kcol = lx.col();
                auto kind = parse_elem_kind(lx.ident());
                if (!kind) throw ParseError(line_no, kcol, "unknown element kind");
                st.kind = *kind;
            }
            lx.expect("=");
            ExprParser ep(lx, st.vars, scope);
            st.expr = ep.parse_expr();
            if (!lx.at_end()) throw lx.error("unexpected '" + lx.peek().text + "'");
            stages.push_back(std::move(st));
        } else if (kw == "liveout") {
            section = Section::Liveouts;
            do {
                liveouts.push_back(lx.ident());
            } while (lx.accept(","));
            if (!lx.at_end()) throw lx.error("unexpected '" + lx.peek().text + "'");
        } else {
            throw ParseError(line_no, kw_col, "unknown statement '" + kw + "'");
        }
    }
    return PipelineGraph::create(std::move(images), std::move(stages), std::move(liveouts));
}

// ---------------------------------------------------------------------------
// Printer

namespace {

std::string format_number(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    std::string s = os.str();
    if (s.find_first_of(".eEn") == std::string::npos) return s;
    return s;
}

std::string print_index(const AffineIndex &ix, const std::string &var) {
    std::string s;
    if (ix.coef == 0) return std::to_string(ix.offset);
    if (ix.coef == 1) s = var;
    else if (ix.coef == -1) s = "-" + var;
    else s = std::to_string(ix.coef) + "*" + var;
    if (ix.offset > 0) s += " + " + std::to_string(ix.offset);
    if (ix.offset < 0) s += " - " + std::to_string(-ix.offset);
    return s;
}

int precedence(const StencilExpr &e) {
    if (auto *b = std::get_if<BinaryNode>(&e.node)) {
        if (b->op == BinaryOp::Add || b->op == BinaryOp::Sub) return 1;
        if (b->op == BinaryOp::Mul || b->op == BinaryOp::Div) return 2;
    }
    if (auto *u = std::get_if<UnaryNode>(&e.node); u && u->op == UnaryOp::Neg) return 3;
    if (auto *c = std::get_if<ConstNode>(&e.node); c && std::signbit(c->value)) return 3;
    return 4;
}

void print_into(std::ostream &os, const StencilExpr &e, const std::vector<std::string> &vars) {
    std::visit(
        [&](const auto &n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, ConstNode>) {
                if (std::signbit(n.value)) os << "(" << format_number(n.value) << ")";
                else os << format_number(n.value);
            } else if constexpr (std::is_same_v<T, LoadNode>) {
                os << n.source << "[";
                for (size_t i = 0; i < n.index.size(); ++i) {
                    if (i) os << ", ";
                    os << print_index(n.index[i], vars[i]);
                }
                os << "]";
            } else if constexpr (std::is_same_v<T, UnaryNode>) {
                switch (n.op) {
                case UnaryOp::Neg:
                    os << "-";
                    if (precedence(*n.arg) < 3) {
                        os << "(";
                        print_into(os, *n.arg, vars);
                        os << ")";
                    } else {
                        print_into(os, *n.arg, vars);
                    }
                    return;
                case UnaryOp::Abs:
                    os << "abs(";
                    break;
                case UnaryOp::Sqrt:
                    os << "sqrt(";
                    break;
                case UnaryOp::Exp:
                    os << "exp(";
                    break;
                }
                print_into(os, *n.arg, vars);
                os << ")";
            } else {
                if (n.op == BinaryOp::Min || n.op == BinaryOp::Max) {
                    os << (n.op == BinaryOp::Min ? "min(" : "max(");
                    print_into(os, *n.lhs, vars);
                    os << ", ";
                    print_into(os, *n.rhs, vars);
                    os << ")";
                    return;
                }
                int p = precedence(e);
                const char *sym = n.op == BinaryOp::Add ? " + " : n.op == BinaryOp::Sub ? " - "
                                                              : n.op == BinaryOp::Mul ? " * "
                                                                                      : " / ";
                // Left-associative: the right operand needs parentheses at equal precedence.
                bool lp = precedence(*n.lhs) < p;
                bool rp = precedence(*n.rhs) <= p;
                if (lp) os << "(";
                print_into(os, *n.lhs, vars);
                if (lp) os << ")";
                os << sym;
                if (rp) os << "(";
                print_into(os, *n.rhs, vars);
                if (rp) os << ")";
            }
        },
        e.node);
}

}  // namespace

std::string print_expr(const StencilExpr &expr, const std::vector<std::string> &vars) {
    std::ostringstream os;
    print_into(os, expr, vars);
    return os.str();
}

std::string print_pipeline(const PipelineGraph &g) {
    std::ostringstream os;
    for (const auto &img : g.images()) {
        os << "image " << img.name << "(";
        for (size_t i = 0; i < img.dims.size(); ++i) os << (i ? ", " : "") << img.dims[i];
        os << "): " << to_string(img.kind) << "\n";
    }
    for (const auto &st : g.stages()) {
        os << "stage " << st.name << "(";
        for (size_t i = 0; i < st.vars.size(); ++i) os << (i ? ", " : "") << st.vars[i];
        os << ") [";
        for (size_t i = 0; i < st.domain.size(); ++i)
            os << (i ? ", " : "") << st.domain[i].lo << ".." << st.domain[i].hi;
        os << "]";
        if (st.kind != ElemKind::Float32) os << ": " << to_string(st.kind);
        os << " = " << print_expr(*st.expr, st.vars) << "\n";
    }
    os << "liveout ";
    for (size_t i = 0; i < g.liveouts().size(); ++i) os << (i ? ", " : "") << g.liveouts()[i];
    os << "\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// Scalar semantics

namespace arith {

EvalKind eval_kind(ElemKind kind) { return kind == ElemKind::Float32 ? EvalKind::F32 : EvalKind::I32; }

size_t elem_bytes(ElemKind kind) { return kind == ElemKind::UInt8 ? 1 : 4; }

namespace {

int32_t to_i32(double v) {
    if (std::isnan(v)) return 0;
    double t = std::trunc(v);
    if (t >= 2147483647.0) return std::numeric_limits<int32_t>::max();
    if (t <= -2147483648.0) return std::numeric_limits<int32_t>::min();
    return static_cast<int32_t>(t);
}

int32_t wrap(int64_t v) { return static_cast<int32_t>(static_cast<uint32_t>(static_cast<uint64_t>(v))); }

}  // namespace

double to_eval(double v, EvalKind kind) {
    if (kind == EvalKind::F32) return static_cast<double>(static_cast<float>(v));
    return static_cast<double>(to_i32(v));
}

double to_storage(double v, ElemKind kind) {
    switch (kind) {
    case ElemKind::Float32:
        return static_cast<double>(static_cast<float>(v));
    case ElemKind::Int32:
        return static_cast<double>(to_i32(v));
    case ElemKind::UInt8: {
        int32_t i = to_i32(v);
        return static_cast<double>(std::clamp(i, 0, 255));
    }
    }
    return v;
}

double apply(BinaryOp op, EvalKind kind, double a, double b) {
    if (kind == EvalKind::F32) {
        float x = static_cast<float>(a), y = static_cast<float>(b), r = 0;
        switch (op) {
        case BinaryOp::Add:
            r = x + y;
            break;
        case BinaryOp::Sub:
            r = x - y;
            break;
        case BinaryOp::Mul:
            r = x * y;
            break;
        case BinaryOp::Div:
            r = x / y;
            break;
        case BinaryOp::Min:
            r = y < x ? y : x;
            break;
        case BinaryOp::Max:
            r = x < y ? y : x;
            break;
        }
        return static_cast<double>(r);
    }
    int64_t x = to_i32(a), y = to_i32(b);
    switch (op) {
    case BinaryOp::Add:
        return wrap(x + y);
    case BinaryOp::Sub:
        return wrap(x - y);
    case BinaryOp::Mul:
        return wrap(x * y);
    case BinaryOp::Div:
        if (y == 0) throw EvalError("division by zero");
        return wrap(x / y);
    case BinaryOp::Min:
        return static_cast<double>(std::min(x, y));
    case BinaryOp::Max:
        return static_cast<double>(std::max(x, y));
    }
    return 0;
}

double apply(UnaryOp op, EvalKind kind, double a) {
    if (kind == EvalKind::F32) {
        float x = static_cast<float>(a);
        switch (op) {
        case UnaryOp::Neg:
            return static_cast<double>(-x);
        case UnaryOp::Abs:
            return static_cast<double>(std::fabs(x));
        case UnaryOp::Sqrt:
            return static_cast<double>(std::sqrt(x));
        case UnaryOp::Exp:
            return static_cast<double>(std::exp(x));
        }
    }
    int64_t x = to_i32(a);
    switch (op) {
    case UnaryOp::Neg:
        return wrap(-x);
    case UnaryOp::Abs:
        return wrap(x < 0 ? -x : x);
    case UnaryOp::Sqrt:
        return to_i32(static_cast<double>(std::sqrt(static_cast<float>(x))));
    case UnaryOp::Exp:
        return to_i32(static_cast<double>(std::exp(static_cast<float>(x))));
    }
    return 0;
}

}  // namespace arith

// ---------------------------------------------------------------------------
// Buffers and reference evaluation

Buffer Buffer::zeros(ElemKind kind, std::vector<int64_t> origin, std::vector<int64_t> extents) {
    Buffer b;
    b.kind = kind;
    b.origin = std::move(origin);
    b.extents = std::move(extents);
    b.data.assign(static_cast<size_t>(b.volume()), 0.0);
    return b;
}

int64_t Buffer::volume() const {
    int64_t v = 1;
    for (int64_t e : extents) v *= e;
    return v;
}

int64_t Buffer::linear(std::span<const int64_t> coords) const {
    int64_t idx = 0;
    for (int d = dims() - 1; d >= 0; --d) idx = idx * extents[d] + (coords[d] - origin[d]);
    return idx;
}

Buffer stage_buffer(const Stage &stage) {
    std::vector<int64_t> origin, extents;
    for (const auto &iv : stage.domain) {
        origin.push_back(iv.lo);
        extents.push_back(iv.extent());
    }
    return Buffer::zeros(stage.kind, std::move(origin), std::move(extents));
}

BufferMap random_inputs(const PipelineGraph &g, uint64_t seed) {
    BufferMap out;
    std::mt19937_64 rng(seed);
    for (const auto &img : g.images()) {
        Buffer b = Buffer::zeros(img.kind, std::vector<int64_t>(img.dims.size(), 0), img.dims);
        for (double &v : b.data) {
            uint64_t r = rng();
            if (img.kind == ElemKind::Float32) v = static_cast<double>(r >> 40) / 16777216.0;
            else v = static_cast<double>(r % 256);
        }
        out.emplace(img.name, std::move(b));
    }
    return out;
}

namespace {

struct RefEvaluator {
    const PipelineGraph &g;
    const BufferMap &inputs;
    const BufferMap &stages;
    EvalKind kind;
    const int64_t *point;

    double eval(const StencilExpr &e) const {
        return std::visit(
            [&](const auto &n) -> double {
                using T = std::decay_t<decltype(n)>;
                if constexpr (std::is_same_v<T, ConstNode>) {
                    return arith::to_eval(n.value, kind);
                } else if constexpr (std::is_same_v<T, LoadNode>) {
                    int64_t c[kMaxDims] = {0, 0, 0};
                    if (n.from_image) {
                        const Buffer &b = inputs.at(n.source);
                        for (size_t d = 0; d < n.index.size(); ++d) {
                            int64_t v = n.index[d].coef * point[d] + n.index[d].offset;
                            c[d] = std::clamp<int64_t>(v, 0, b.extents[d] - 1);
                        }
                        return arith::to_eval(b.at(std::span<const int64_t>(c, n.index.size())), kind);
                    }
                    const Stage &p = g.stage(n.source);
                    const Buffer &b = stages.at(n.source);
                    for (size_t d = 0; d < n.index.size(); ++d)
                        c[d] = p.domain[d].clamp(n.index[d].coef * point[d] + n.index[d].offset);
                    return arith::to_eval(b.at(std::span<const int64_t>(c, n.index.size())), kind);
                } else if constexpr (std::is_same_v<T, BinaryNode>) {
                    double a = eval(*n.lhs);
                    double b = eval(*n.rhs);
                    return arith::apply(n.op, kind, a, b);
                } else {
                    return arith::apply(n.op, kind, eval(*n.arg));
                }
            },
            e.node);
    }
};

}  // namespace

BufferMap reference_eval(const PipelineGraph &g, const BufferMap &inputs, bool all_stages, EvalStats *stats) {
    for (const auto &img : g.images()) {
        auto it = inputs.find(img.name);
        if (it == inputs.end()) throw ValidationError("missing input buffer for image '" + img.name + "'");
        if (it->second.extents != img.dims)
            throw ValidationError("shape mismatch for image '" + img.name + "'");
    }
    BufferMap computed;
    for (int s : topo_order_indices(g)) {
        const Stage &st = g.stages()[s];
        Buffer out = stage_buffer(st);
        RefEvaluator ev{g, inputs, computed, arith::eval_kind(st.kind), nullptr};
        const int nd = st.dims();
        int64_t p[kMaxDims] = {0, 0, 0};
        int64_t count = 0;
        for (int d = 0; d < nd; ++d) p[d] = st.domain[d].lo;
        for (int64_t i = 0; i < out.volume(); ++i) {
            ev.point = p;
            out.data[i] = arith::to_storage(ev.eval(*st.expr), st.kind);
            ++count;
            for (int d = 0; d < nd; ++d) {
                if (++p[d] <= st.domain[d].hi) break;
                p[d] = st.domain[d].lo;
            }
        }
        if (stats) stats->points_evaluated[st.name] += count;
        computed.emplace(st.name, std::move(out));
    }
    if (all_stages) return computed;
    BufferMap result;
    for (const auto &l : g.liveouts()) result.emplace(l, computed.at(l));
    return result;
}

}  // namespace warptile
