#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <flatcheck/error.hpp>

namespace flatcheck::expr {

using NodeId = std::uint32_t;
using SymbolId = std::uint32_t;

// Exact rational with 64-bit numerator/denominator. Arithmetic reports overflow
// through std::nullopt so the caller can fall back to floating point.
struct Rational {
    std::int64_t num = 0;
    std::int64_t den = 1;

    static std::optional<Rational> make(std::int64_t n, std::int64_t d);
    static std::optional<Rational> from_decimal(std::string_view digits);

    double to_double() const { return static_cast<double>(num) / static_cast<double>(den); }
    bool is_zero() const { return num == 0; }
    bool is_one() const { return num == 1 && den == 1; }
    bool is_integer() const { return den == 1; }

    friend bool operator==(const Rational &, const Rational &) = default;
};

std::optional<Rational> add(const Rational &a, const Rational &b);
std::optional<Rational> mul(const Rational &a, const Rational &b);
std::optional<Rational> div(const Rational &a, const Rational &b);

enum class Op : std::uint8_t { Constant, Symbol, Add, Mul, Div, Pow, Neg, Sin, Cos, Tan, SolveComp };

struct Node {
    Op op;
    NodeId lhs = 0;        // first child, or block index for SolveComp
    NodeId rhs = 0;        // second child
    std::int32_t aux = 0;  // constant index, symbol id, integer exponent, or solve component
    std::uint64_t mask = 0; // bit (s % 64) set for every symbol s the node may depend on
};

struct ConstantValue {
    bool exact = true;
    Rational q;
    double value = 0.0;
};

// One linear system M s = b. The matrix is shared between blocks that differ
// only in the right-hand side (derivatives of a solve keep the same matrix).
struct SolveMatrix {
    std::size_t dim = 0;
    std::vector<NodeId> entries; // row-major dim*dim
};

struct SolveBlock {
    std::uint32_t matrix = 0;
    std::vector<NodeId> rhs;
};

class ExprDag;

// Lightweight handle pairing a node with the graph that owns it.
class Expr {
public:
    Expr() = default;
    Expr(ExprDag *dag, NodeId id) : dag_(dag), id_(id) {}

    NodeId id() const { return id_; }
    ExprDag *dag() const { return dag_; }
    bool valid() const { return dag_ != nullptr; }

    bool is_zero() const;
    bool is_one() const;
    bool is_constant() const;

    friend bool operator==(const Expr &a, const Expr &b) { return a.dag_ == b.dag_ && a.id_ == b.id_; }

private:
    ExprDag *dag_ = nullptr;
    NodeId id_ = 0;
};

Expr operator+(Expr a, Expr b);
Expr operator-(Expr a, Expr b);
Expr operator*(Expr a, Expr b);
Expr operator/(Expr a, Expr b);
Expr operator-(Expr a);
Expr operator+(Expr a, double b);
Expr operator+(double a, Expr b);
Expr operator-(Expr a, double b);
Expr operator-(double a, Expr b);
Expr operator*(Expr a, double b);
Expr operator*(double a, Expr b);
Expr operator/(Expr a, double b);
Expr operator/(double a, Expr b);
Expr pow(Expr a, int k);
Expr sin(Expr a);
Expr cos(Expr a);
Expr tan(Expr a);

// Append-only, hash-consed expression graph. Children always have smaller ids
// than their parents, so the table is topologically ordered. Construction is
// not thread-safe; a finished graph may be read (and evaluated) concurrently.
class ExprDag {
public:
    ExprDag();
    ExprDag(const ExprDag &) = delete;
    ExprDag &operator=(const ExprDag &) = delete;

    std::size_t size() const { return nodes_.size(); }
    const Node &node(NodeId id) const { return nodes_[id]; }
    const ConstantValue &constant_of(NodeId id) const { return constants_[static_cast<std::size_t>(nodes_[id].aux)]; }
    const SolveBlock &block(std::uint32_t b) const { return blocks_[b]; }
    const SolveMatrix &matrix(std::uint32_t m) const { return matrices_[m]; }
    std::size_t num_blocks() const { return blocks_.size(); }
    std::size_t num_matrices() const { return matrices_.size(); }

    // Symbols
    Expr symbol(const std::string &name);
    std::optional<Expr> find_symbol(const std::string &name) const;
    const std::string &symbol_name(SymbolId s) const { return symbol_names_[s]; }
    std::size_t num_symbols() const { return symbol_names_.size(); }
    SymbolId symbol_id(Expr e) const;

    // Constructors (all hash-consed, with constant folding and 0/1 identities)
    Expr constant(const Rational &q);
    Expr constant(double v);
    Expr integer(std::int64_t v) { return constant(Rational{v, 1}); }
    Expr zero() { return wrap(zero_); }
    Expr one() { return wrap(one_); }
    Expr add(Expr a, Expr b);
    Expr sub(Expr a, Expr b) { return add(a, neg(b)); }
    Expr mul(Expr a, Expr b);
    Expr div(Expr a, Expr b);
    Expr pow(Expr a, int k);
    Expr neg(Expr a);
    Expr sin(Expr a);
    Expr cos(Expr a);
    Expr tan(Expr a);
    // Balanced sum keeps the graph shallow for long sums.
    Expr sum(std::span<const Expr> terms);

    // Components of M^{-1} b as expressions; M is row-major dim x dim.
    std::vector<Expr> solve(std::span<const Expr> matrix, std::span<const Expr> rhs);

    // Exact partial derivative; memoized per (node, symbol).
    Expr diff(Expr e, Expr symbol);
    Expr diff(Expr e, SymbolId s);

    // Replace symbols by expressions. Unmapped symbols are kept.
    Expr substitute(Expr e, const std::unordered_map<SymbolId, Expr> &map);
    std::vector<Expr> substitute(std::span<const Expr> es, const std::unordered_map<SymbolId, Expr> &map);

    bool may_depend(Expr e, SymbolId s) const { return (nodes_[e.id()].mask >> (s % 64)) & 1u; }
    std::vector<SymbolId> free_symbols(Expr e) const;

    Expr wrap(NodeId id) { return Expr(this, id); }

    // Calls fn(child) for every direct dependency, including solve inputs.
    template <typename Fn> void for_each_child(NodeId id, Fn &&fn) const
    {
        const Node &n = nodes_[id];
        switch (n.op) {
        case Op::Constant:
        case Op::Symbol:
            return;
        case Op::Add:
        case Op::Mul:
        case Op::Div:
            fn(n.lhs);
            fn(n.rhs);
            return;
        case Op::Pow:
        case Op::Neg:
        case Op::Sin:
        case Op::Cos:
        case Op::Tan:
            fn(n.lhs);
            return;
        case Op::SolveComp: {
            const SolveBlock &b = blocks_[n.lhs];
            for (NodeId e : matrices_[b.matrix].entries) fn(e);
            for (NodeId e : b.rhs) fn(e);
            return;
        }
        }
    }

private:
    struct Key {
        Op op;
        NodeId lhs;
        NodeId rhs;
        std::int32_t aux;
        friend bool operator==(const Key &, const Key &) = default;
    };
    struct KeyHash {
        std::size_t operator()(const Key &k) const noexcept;
    };
    struct VecHash {
        std::size_t operator()(const std::vector<NodeId> &v) const noexcept;
    };

    NodeId intern(Op op, NodeId lhs, NodeId rhs, std::int32_t aux, std::uint64_t mask);
    NodeId intern_constant(const ConstantValue &c);
    bool const_value(NodeId id, ConstantValue &out) const;
    std::uint32_t intern_matrix(std::vector<NodeId> entries, std::size_t dim);
    std::uint32_t intern_block(std::uint32_t matrix, std::vector<NodeId> rhs);
    std::uint32_t diff_block(std::uint32_t block, SymbolId s);
    NodeId diff_node(NodeId id, SymbolId s);

    std::vector<Node> nodes_;
    std::vector<ConstantValue> constants_;
    std::unordered_map<Key, NodeId, KeyHash> table_;
    std::map<std::pair<std::int64_t, std::int64_t>, NodeId> exact_constants_;
    std::unordered_map<std::uint64_t, NodeId> float_constants_;
    std::vector<std::string> symbol_names_;
    std::unordered_map<std::string, NodeId> symbols_;
    std::vector<NodeId> symbol_nodes_;
    std::vector<SolveMatrix> matrices_;
    std::unordered_map<std::vector<NodeId>, std::uint32_t, VecHash> matrix_table_;
    std::vector<SolveBlock> blocks_;
    std::unordered_map<std::vector<NodeId>, std::uint32_t, VecHash> block_table_;
    std::unordered_map<std::uint64_t, NodeId> diff_memo_;
    std::unordered_map<std::uint64_t, std::uint32_t> block_diff_memo_;
    NodeId zero_ = 0;
    NodeId one_ = 0;
};

// Assignment of numeric values to symbols, indexed by SymbolId.
class Point {
public:
    Point() = default;
    explicit Point(std::vector<double> values) : values_(std::move(values)) {}
    static Point from_map(const ExprDag &dag, const std::map<std::string, double> &assignment);

    double operator[](SymbolId s) const { return values_[s]; }
    double &operator[](SymbolId s) { return values_[s]; }
    std::size_t size() const { return values_.size(); }
    std::span<const double> values() const { return values_; }

private:
    std::vector<double> values_;
};

// Numeric evaluator bound to one point. Values are memoized for the lifetime of
// the evaluator, so evaluating many expressions that share subgraphs costs one
// pass over the union. LU factorizations are cached per solve matrix.
class Evaluator {
public:
    Evaluator(const ExprDag &dag, Point point);

    double value(NodeId id);
    double value(Expr e) { return value(e.id()); }
    const Point &point() const { return point_; }
    const ExprDag &dag() const { return *dag_; }
    void clear();

    // Solution of the block's system; the block's components must have been
    // evaluated successfully.
    const std::vector<double> &solution(std::uint32_t block) { return block_solution(block, 0); }
    // In-place solve with a matrix whose factorization is cached.
    void solve_in_place(std::uint32_t matrix, std::vector<double> &rhs);

private:
    struct LuCache;
    void compute(NodeId id);
    const std::vector<double> &block_solution(std::uint32_t b, NodeId requester);
    std::shared_ptr<LuCache> factor(std::uint32_t matrix, NodeId requester);

    const ExprDag *dag_;
    Point point_;
    std::vector<double> values_;
    std::vector<std::uint8_t> state_; // 0 unknown, 1 ready, 2 failed
    std::vector<ErrorKind> failure_;
    std::unordered_map<std::uint32_t, std::vector<double>> block_solutions_;
    std::unordered_map<std::uint32_t, std::shared_ptr<LuCache>> lu_;
    std::vector<NodeId> stack_;
};

// Forward-mode gradients with respect to a fixed list of symbols at the point
// of an Evaluator, memoized per node.
class GradientEvaluator {
public:
    GradientEvaluator(Evaluator &values, std::vector<SymbolId> wrt);

    // Throws EvalError where the value cannot be evaluated.
    std::span<const double> gradient(NodeId id);
    std::span<const double> gradient(Expr e) { return gradient(e.id()); }

private:
    void compute(NodeId root);
    double *slot(NodeId id) { return data_.data() + static_cast<std::size_t>(offset_[id] - 1) * width_; }
    const std::vector<double> &block_gradient(std::uint32_t b);

    Evaluator *ev_;
    const ExprDag *dag_;
    std::vector<SymbolId> wrt_;
    std::size_t width_;
    std::unordered_map<SymbolId, std::size_t> column_;
    std::vector<std::uint32_t> offset_; // 0 unknown, else row + 1 in data_
    std::vector<double> data_;
    std::unordered_map<std::uint32_t, std::vector<double>> block_grads_; // dim x width, row-major
    std::vector<NodeId> stack_;
};

// Single-shot evaluation with a fresh memo table.
double evaluate(Expr e, const Point &p);

// Infix rendering that the parser accepts back (solve nodes excepted).
std::string to_string(Expr e);

} // namespace flatcheck::expr
