#include <charconv>
#include <flatcheck/expr.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <sstream>

namespace flatcheck::expr {

namespace {

using i128 = __int128;

constexpr i128 kI64Max = static_cast<i128>(INT64_MAX);
constexpr i128 kI64Min = static_cast<i128>(INT64_MIN);

i128 gcd128(i128 a, i128 b)
{
    if (a < 0) a = -a;
    if (b < 0) b = -b;
    while (b != 0) {
        i128 t = a % b;
        a = b;
        b = t;
    }
    return a;
}

std::optional<Rational> normalize(i128 n, i128 d)
{
    if (d == 0) return std::nullopt;
    if (d < 0) {
        n = -n;
        d = -d;
    }
    i128 g = gcd128(n, d);
    if (g > 1) {
        n /= g;
        d /= g;
    }
    if (n > kI64Max || n < kI64Min || d > kI64Max) return std::nullopt;
    return Rational{static_cast<std::int64_t>(n), static_cast<std::int64_t>(d)};
}

std::uint64_t symbol_bit(SymbolId s) { return std::uint64_t{1} << (s % 64); }

std::uint64_t key_of(NodeId id, SymbolId s) { return (static_cast<std::uint64_t>(id) << 24) | s; }

constexpr std::uint32_t kZeroBlock = UINT32_MAX;

} // namespace

std::optional<Rational> Rational::make(std::int64_t n, std::int64_t d) { return normalize(n, d); }

std::optional<Rational> Rational::from_decimal(std::string_view text)
{
    i128 mant = 0;
    int exp10 = 0;
    bool seen_digit = false;
    bool after_dot = false;
    std::size_t i = 0;
    for (; i < text.size(); ++i) {
        char c = text[i];
        if (c >= '0' && c <= '9') {
            seen_digit = true;
            if (mant > kI64Max) return std::nullopt;
            mant = mant * 10 + (c - '0');
            if (after_dot) --exp10;
        } else if (c == '.' && !after_dot) {
            after_dot = true;
        } else {
            break;
        }
    }
    if (!seen_digit) return std::nullopt;
    if (i < text.size()) {
        if (text[i] != 'e' && text[i] != 'E') return std::nullopt;
        ++i;
        int sign = 1;
        if (i < text.size() && (text[i] == '+' || text[i] == '-')) {
            sign = text[i] == '-' ? -1 : 1;
            ++i;
        }
        if (i >= text.size()) return std::nullopt;
        int e = 0;
        for (; i < text.size(); ++i) {
            if (text[i] < '0' || text[i] > '9') return std::nullopt;
            e = e * 10 + (text[i] - '0');
            if (e > 60) return std::nullopt;
        }
        exp10 += sign * e;
    }
    i128 num = mant;
    i128 den = 1;
    for (; exp10 > 0; --exp10) {
        num *= 10;
        if (num > kI64Max) return std::nullopt;
    }
    for (; exp10 < 0; ++exp10) {
        den *= 10;
        if (den > kI64Max) return std::nullopt;
    }
    return normalize(num, den);
}

std::optional<Rational> add(const Rational &a, const Rational &b)
{
    return normalize(static_cast<i128>(a.num) * b.den + static_cast<i128>(b.num) * a.den, static_cast<i128>(a.den) * b.den);
}

std::optional<Rational> mul(const Rational &a, const Rational &b)
{
    return normalize(static_cast<i128>(a.num) * b.num, static_cast<i128>(a.den) * b.den);
}

std::optional<Rational> div(const Rational &a, const Rational &b)
{
    if (b.num == 0) return std::nullopt;
    return normalize(static_cast<i128>(a.num) * b.den, static_cast<i128>(a.den) * b.num);
}

// ---------------------------------------------------------------------------
// Expr handle

bool Expr::is_zero() const
{
    if (!dag_ || dag_->node(id_).op != Op::Constant) return false;
    const auto &c = dag_->constant_of(id_);
    return c.exact ? c.q.is_zero() : c.value == 0.0;
}

bool Expr::is_one() const
{
    if (!dag_ || dag_->node(id_).op != Op::Constant) return false;
    const auto &c = dag_->constant_of(id_);
    return c.exact ? c.q.is_one() : c.value == 1.0;
}

bool Expr::is_constant() const { return dag_ && dag_->node(id_).op == Op::Constant; }

Expr operator+(Expr a, Expr b) { return a.dag()->add(a, b); }
Expr operator-(Expr a, Expr b) { return a.dag()->sub(a, b); }
Expr operator*(Expr a, Expr b) { return a.dag()->mul(a, b); }
Expr operator/(Expr a, Expr b) { return a.dag()->div(a, b); }
Expr operator-(Expr a) { return a.dag()->neg(a); }
Expr operator+(Expr a, double b) { return a + a.dag()->constant(b); }
Expr operator+(double a, Expr b) { return b.dag()->constant(a) + b; }
Expr operator-(Expr a, double b) { return a - a.dag()->constant(b); }
Expr operator-(double a, Expr b) { return b.dag()->constant(a) - b; }
Expr operator*(Expr a, double b) { return a * a.dag()->constant(b); }
Expr operator*(double a, Expr b) { return b.dag()->constant(a) * b; }
Expr operator/(Expr a, double b) { return a / a.dag()->constant(b); }
Expr operator/(double a, Expr b) { return b.dag()->constant(a) / b; }
Expr pow(Expr a, int k) { return a.dag()->pow(a, k); }
Expr sin(Expr a) { return a.dag()->sin(a); }
Expr cos(Expr a) { return a.dag()->cos(a); }
Expr tan(Expr a) { return a.dag()->tan(a); }

// ---------------------------------------------------------------------------
// ExprDag

std::size_t ExprDag::KeyHash::operator()(const Key &k) const noexcept
{
    std::uint64_t h = static_cast<std::uint64_t>(k.op) * 0x9E3779B97F4A7C15ull;
    h ^= (static_cast<std::uint64_t>(k.lhs) + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2));
    h ^= (static_cast<std::uint64_t>(k.rhs) + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2));
    h ^= (static_cast<std::uint64_t>(static_cast<std::uint32_t>(k.aux)) + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2));
    return static_cast<std::size_t>(h);
}

std::size_t ExprDag::VecHash::operator()(const std::vector<NodeId> &v) const noexcept
{
    std::uint64_t h = v.size();
    for (NodeId x : v) h ^= (static_cast<std::uint64_t>(x) + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2));
    return static_cast<std::size_t>(h);
}

ExprDag::ExprDag()
{
    zero_ = constant(Rational{0, 1}).id();
    one_ = constant(Rational{1, 1}).id();
}

NodeId ExprDag::intern(Op op, NodeId lhs, NodeId rhs, std::int32_t aux, std::uint64_t mask)
{
    Key key{op, lhs, rhs, aux};
    if (auto it = table_.find(key); it != table_.end()) return it->second;
    auto id = static_cast<NodeId>(nodes_.size());
    nodes_.push_back(Node{op, lhs, rhs, aux, mask});
    table_.emplace(key, id);
    return id;
}

NodeId ExprDag::intern_constant(const ConstantValue &c)
{
    if (c.exact) {
        auto key = std::make_pair(c.q.num, c.q.den);
        if (auto it = exact_constants_.find(key); it != exact_constants_.end()) return it->second;
        auto idx = static_cast<std::int32_t>(constants_.size());
        ConstantValue stored = c;
        stored.value = c.q.to_double();
        constants_.push_back(stored);
        auto id = static_cast<NodeId>(nodes_.size());
        nodes_.push_back(Node{Op::Constant, 0, 0, idx, 0});
        exact_constants_.emplace(key, id);
        return id;
    }
    double v = c.value == 0.0 ? 0.0 : c.value; // fold -0.0
    auto bits = std::bit_cast<std::uint64_t>(v);
    if (auto it = float_constants_.find(bits); it != float_constants_.end()) return it->second;
    auto idx = static_cast<std::int32_t>(constants_.size());
    constants_.push_back(ConstantValue{false, Rational{}, v});
    auto id = static_cast<NodeId>(nodes_.size());
    nodes_.push_back(Node{Op::Constant, 0, 0, idx, 0});
    float_constants_.emplace(bits, id);
    return id;
}

Expr ExprDag::constant(const Rational &q) { return wrap(intern_constant(ConstantValue{true, q, q.to_double()})); }

Expr ExprDag::constant(double v)
{
    // Integral doubles are kept exact so that folding stays deterministic.
    if (std::isfinite(v) && v == std::floor(v) && std::fabs(v) < 9.0e15) return constant(Rational{static_cast<std::int64_t>(v), 1});
    return wrap(intern_constant(ConstantValue{false, Rational{}, v}));
}

bool ExprDag::const_value(NodeId id, ConstantValue &out) const
{
    if (nodes_[id].op != Op::Constant) return false;
    out = constants_[static_cast<std::size_t>(nodes_[id].aux)];
    return true;
}

Expr ExprDag::symbol(const std::string &name)
{
    if (auto it = symbols_.find(name); it != symbols_.end()) return wrap(it->second);
    auto s = static_cast<SymbolId>(symbol_names_.size());
    symbol_names_.push_back(name);
    NodeId id = intern(Op::Symbol, 0, 0, static_cast<std::int32_t>(s), symbol_bit(s));
    symbols_.emplace(name, id);
    symbol_nodes_.push_back(id);
    return wrap(id);
}

std::optional<Expr> ExprDag::find_symbol(const std::string &name) const
{
    if (auto it = symbols_.find(name); it != symbols_.end()) return Expr(const_cast<ExprDag *>(this), it->second);
    return std::nullopt;
}

SymbolId ExprDag::symbol_id(Expr e) const
{
    const Node &n = nodes_[e.id()];
    if (n.op != Op::Symbol) throw Error(ErrorKind::UnknownSymbol, "expression is not a symbol");
    return static_cast<SymbolId>(n.aux);
}

namespace {

ConstantValue fold(Op op, const ConstantValue &a, const ConstantValue &b)
{
    if (a.exact && b.exact) {
        std::optional<Rational> r;
        switch (op) {
        case Op::Add: r = add(a.q, b.q); break;
        case Op::Mul: r = mul(a.q, b.q); break;
        case Op::Div: r = div(a.q, b.q); break;
        default: break;
        }
        if (r) return ConstantValue{true, *r, r->to_double()};
    }
    double x = a.exact ? a.q.to_double() : a.value;
    double y = b.exact ? b.q.to_double() : b.value;
    double v = 0.0;
    switch (op) {
    case Op::Add: v = x + y; break;
    case Op::Mul: v = x * y; break;
    case Op::Div: v = x / y; break;
    default: break;
    }
    return ConstantValue{false, Rational{}, v};
}

bool is_zero_constant(const ConstantValue &c) { return c.exact ? c.q.is_zero() : c.value == 0.0; }
bool is_one_constant(const ConstantValue &c) { return c.exact ? c.q.is_one() : c.value == 1.0; }
bool is_minus_one_constant(const ConstantValue &c) { return c.exact ? (c.q.num == -1 && c.q.den == 1) : c.value == -1.0; }

} // namespace

Expr ExprDag::add(Expr a, Expr b)
{
    ConstantValue ca, cb;
    bool ka = const_value(a.id(), ca);
    bool kb = const_value(b.id(), cb);
    if (ka && is_zero_constant(ca)) return b;
    if (kb && is_zero_constant(cb)) return a;
    if (ka && kb) {
        auto r = fold(Op::Add, ca, cb);
        return r.exact ? constant(r.q) : constant(r.value);
    }
    const Node na = nodes_[a.id()];
    const Node nb = nodes_[b.id()];
    if ((na.op == Op::Neg && na.lhs == b.id()) || (nb.op == Op::Neg && nb.lhs == a.id())) return zero();
    NodeId l = std::min(a.id(), b.id());
    NodeId r = std::max(a.id(), b.id());
    return wrap(intern(Op::Add, l, r, 0, na.mask | nb.mask));
}

Expr ExprDag::mul(Expr a, Expr b)
{
    ConstantValue ca, cb;
    bool ka = const_value(a.id(), ca);
    bool kb = const_value(b.id(), cb);
    if ((ka && is_zero_constant(ca)) || (kb && is_zero_constant(cb))) return zero();
    if (ka && is_one_constant(ca)) return b;
    if (kb && is_one_constant(cb)) return a;
    if (ka && kb) {
        auto r = fold(Op::Mul, ca, cb);
        return r.exact ? constant(r.q) : constant(r.value);
    }
    if (ka && is_minus_one_constant(ca)) return neg(b);
    if (kb && is_minus_one_constant(cb)) return neg(a);
    NodeId l = std::min(a.id(), b.id());
    NodeId r = std::max(a.id(), b.id());
    return wrap(intern(Op::Mul, l, r, 0, nodes_[a.id()].mask | nodes_[b.id()].mask));
}

Expr ExprDag::div(Expr a, Expr b)
{
    ConstantValue ca, cb;
    bool ka = const_value(a.id(), ca);
    bool kb = const_value(b.id(), cb);
    if (kb && is_one_constant(cb)) return a;
    if (ka && is_zero_constant(ca) && !(kb && is_zero_constant(cb))) return zero();
    if (ka && kb && !is_zero_constant(cb)) {
        auto r = fold(Op::Div, ca, cb);
        return r.exact ? constant(r.q) : constant(r.value);
    }
    return wrap(intern(Op::Div, a.id(), b.id(), 0, nodes_[a.id()].mask | nodes_[b.id()].mask));
}

Expr ExprDag::pow(Expr a, int k)
{
    if (k == 0) return one();
    if (k == 1) return a;
    ConstantValue ca;
    if (const_value(a.id(), ca)) {
        if (is_zero_constant(ca) && k > 0) return zero();
        if (!is_zero_constant(ca)) {
            Expr base = a;
            Expr acc = one();
            for (int i = 0; i < std::abs(k); ++i) acc = mul(acc, base);
            return k > 0 ? acc : div(one(), acc);
        }
    }
    return wrap(intern(Op::Pow, a.id(), 0, k, nodes_[a.id()].mask));
}

Expr ExprDag::neg(Expr a)
{
    ConstantValue ca;
    if (const_value(a.id(), ca)) {
        if (ca.exact) return constant(Rational{-ca.q.num, ca.q.den});
        return constant(-ca.value);
    }
    const Node na = nodes_[a.id()];
    if (na.op == Op::Neg) return wrap(na.lhs);
    return wrap(intern(Op::Neg, a.id(), 0, 0, na.mask));
}

Expr ExprDag::sin(Expr a)
{
    ConstantValue ca;
    if (const_value(a.id(), ca)) return is_zero_constant(ca) ? zero() : constant(std::sin(ca.value));
    return wrap(intern(Op::Sin, a.id(), 0, 0, nodes_[a.id()].mask));
}

Expr ExprDag::cos(Expr a)
{
    ConstantValue ca;
    if (const_value(a.id(), ca)) return is_zero_constant(ca) ? one() : constant(std::cos(ca.value));
    return wrap(intern(Op::Cos, a.id(), 0, 0, nodes_[a.id()].mask));
}

Expr ExprDag::tan(Expr a)
{
    ConstantValue ca;
    if (const_value(a.id(), ca)) return is_zero_constant(ca) ? zero() : constant(std::tan(ca.value));
    return wrap(intern(Op::Tan, a.id(), 0, 0, nodes_[a.id()].mask));
}

Expr ExprDag::sum(std::span<const Expr> terms)
{
    std::vector<Expr> level;
    level.reserve(terms.size());
    for (const Expr &t : terms)
        if (!t.is_zero()) level.push_back(t);
    if (level.empty()) return zero();
    while (level.size() > 1) {
        std::vector<Expr> next;
        next.reserve((level.size() + 1) / 2);
        for (std::size_t i = 0; i + 1 < level.size(); i += 2) next.push_back(add(level[i], level[i + 1]));
        if (level.size() % 2 == 1) next.push_back(level.back());
        level = std::move(next);
    }
    return level.front();
}

std::uint32_t ExprDag::intern_matrix(std::vector<NodeId> entries, std::size_t dim)
{
    std::vector<NodeId> key = entries;
    key.push_back(static_cast<NodeId>(dim));
    if (auto it = matrix_table_.find(key); it != matrix_table_.end()) return it->second;
    auto idx = static_cast<std::uint32_t>(matrices_.size());
    matrices_.push_back(SolveMatrix{dim, std::move(entries)});
    matrix_table_.emplace(std::move(key), idx);
    return idx;
}

std::uint32_t ExprDag::intern_block(std::uint32_t matrix, std::vector<NodeId> rhs)
{
    std::vector<NodeId> key = rhs;
    key.push_back(matrix);
    if (auto it = block_table_.find(key); it != block_table_.end()) return it->second;
    auto idx = static_cast<std::uint32_t>(blocks_.size());
    blocks_.push_back(SolveBlock{matrix, std::move(rhs)});
    block_table_.emplace(std::move(key), idx);
    return idx;
}

std::vector<Expr> ExprDag::solve(std::span<const Expr> matrix, std::span<const Expr> rhs)
{
    const std::size_t dim = rhs.size();
    if (matrix.size() != dim * dim)
        throw Error(ErrorKind::DimensionMismatch, "solve: matrix has " + std::to_string(matrix.size()) + " entries, expected " +
                                                      std::to_string(dim * dim));
    std::vector<Expr> out;
    out.reserve(dim);
    bool all_zero = std::all_of(rhs.begin(), rhs.end(), [](const Expr &e) { return e.is_zero(); });
    if (all_zero) {
        out.assign(dim, zero());
        return out;
    }
    std::vector<NodeId> entries;
    entries.reserve(matrix.size());
    std::uint64_t mask = 0;
    for (const Expr &e : matrix) {
        entries.push_back(e.id());
        mask |= nodes_[e.id()].mask;
    }
    std::vector<NodeId> b;
    b.reserve(dim);
    for (const Expr &e : rhs) {
        b.push_back(e.id());
        mask |= nodes_[e.id()].mask;
    }
    std::uint32_t m = intern_matrix(std::move(entries), dim);
    std::uint32_t blk = intern_block(m, std::move(b));
    for (std::size_t i = 0; i < dim; ++i) out.push_back(wrap(intern(Op::SolveComp, blk, 0, static_cast<std::int32_t>(i), mask)));
    return out;
}

Expr ExprDag::diff(Expr e, Expr symbol) { return diff(e, symbol_id(symbol)); }

Expr ExprDag::diff(Expr e, SymbolId s) { return wrap(diff_node(e.id(), s)); }

std::uint32_t ExprDag::diff_block(std::uint32_t blk, SymbolId s)
{
    const std::uint64_t key = key_of(blk, s);
    if (auto it = block_diff_memo_.find(key); it != block_diff_memo_.end()) return it->second;
    // d(M^{-1} b) = M^{-1} (db - dM * M^{-1} b)
    const SolveBlock block = blocks_[blk];
    const SolveMatrix mat = matrices_[block.matrix];
    const std::size_t dim = mat.dim;
    std::vector<Expr> sol;
    sol.reserve(dim);
    std::uint64_t mask = 0;
    for (NodeId e : mat.entries) mask |= nodes_[e].mask;
    for (NodeId e : block.rhs) mask |= nodes_[e].mask;
    for (std::size_t i = 0; i < dim; ++i) sol.push_back(wrap(intern(Op::SolveComp, blk, 0, static_cast<std::int32_t>(i), mask)));
    std::vector<Expr> rhs;
    rhs.reserve(dim);
    bool all_zero = true;
    for (std::size_t k = 0; k < dim; ++k) {
        std::vector<Expr> terms;
        terms.push_back(wrap(diff_node(block.rhs[k], s)));
        for (std::size_t l = 0; l < dim; ++l) {
            Expr dm = wrap(diff_node(mat.entries[k * dim + l], s));
            if (!dm.is_zero()) terms.push_back(neg(mul(dm, sol[l])));
        }
        Expr r = sum(terms);
        all_zero = all_zero && r.is_zero();
        rhs.push_back(r);
    }
    std::uint32_t result = kZeroBlock;
    if (!all_zero) {
        std::vector<Expr> m;
        m.reserve(mat.entries.size());
        for (NodeId e : mat.entries) m.push_back(wrap(e));
        auto comps = solve(m, rhs);
        result = nodes_[comps.front().id()].lhs;
    }
    block_diff_memo_.emplace(key, result);
    return result;
}

NodeId ExprDag::diff_node(NodeId root, SymbolId s)
{
    if (auto it = diff_memo_.find(key_of(root, s)); it != diff_memo_.end()) return it->second;
    const std::uint64_t bit = symbol_bit(s);
    struct Frame {
        NodeId id;
        bool expanded;
    };
    std::vector<Frame> stack{{root, false}};
    auto known = [&](NodeId id) {
        if (!(nodes_[id].mask & bit)) return true;
        return diff_memo_.count(key_of(id, s)) > 0;
    };
    auto get = [&](NodeId id) -> Expr {
        if (!(nodes_[id].mask & bit)) return zero();
        return wrap(diff_memo_.at(key_of(id, s)));
    };
    while (!stack.empty()) {
        Frame &top = stack.back();
        const NodeId id = top.id;
        if (known(id)) {
            stack.pop_back();
            continue;
        }
        if (!top.expanded) {
            top.expanded = true;
            // Collect children first: pushing may reallocate the stack.
            std::vector<NodeId> children;
            for_each_child(id, [&](NodeId c) { children.push_back(c); });
            for (NodeId c : children)
                if (!known(c)) stack.push_back(Frame{c, false});
            continue;
        }
        stack.pop_back();
        const Node n = nodes_[id];
        Expr d;
        switch (n.op) {
        case Op::Constant: d = zero(); break;
        case Op::Symbol: d = static_cast<SymbolId>(n.aux) == s ? one() : zero(); break;
        case Op::Add: d = add(get(n.lhs), get(n.rhs)); break;
        case Op::Neg: d = neg(get(n.lhs)); break;
        case Op::Mul: d = add(mul(get(n.lhs), wrap(n.rhs)), mul(wrap(n.lhs), get(n.rhs))); break;
        case Op::Div: {
            // (da - (a/b) db) / b
            Expr da = get(n.lhs);
            Expr db = get(n.rhs);
            d = div(sub(da, mul(wrap(id), db)), wrap(n.rhs));
            break;
        }
        case Op::Pow: {
            Expr da = get(n.lhs);
            Expr k = integer(n.aux);
            d = mul(mul(k, pow(wrap(n.lhs), n.aux - 1)), da);
            break;
        }
        case Op::Sin: d = mul(cos(wrap(n.lhs)), get(n.lhs)); break;
        case Op::Cos: d = neg(mul(sin(wrap(n.lhs)), get(n.lhs))); break;
        case Op::Tan: d = mul(add(one(), mul(wrap(id), wrap(id))), get(n.lhs)); break;
        case Op::SolveComp: {
            std::uint32_t db = diff_block(n.lhs, s);
            if (db == kZeroBlock) {
                d = zero();
            } else {
                const SolveBlock &nb = blocks_[db];
                std::uint64_t mask = 0;
                for (NodeId e : matrices_[nb.matrix].entries) mask |= nodes_[e].mask;
                for (NodeId e : nb.rhs) mask |= nodes_[e].mask;
                d = wrap(intern(Op::SolveComp, db, 0, n.aux, mask));
            }
            break;
        }
        }
        diff_memo_.emplace(key_of(id, s), d.id());
    }
    return get(root).id();
}

Expr ExprDag::substitute(Expr e, const std::unordered_map<SymbolId, Expr> &map)
{
    std::vector<Expr> one{e};
    return substitute(one, map).front();
}

std::vector<Expr> ExprDag::substitute(std::span<const Expr> es, const std::unordered_map<SymbolId, Expr> &map)
{
    std::uint64_t mask = 0;
    for (const auto &[s, _] : map) mask |= symbol_bit(s);
    std::unordered_map<NodeId, NodeId> memo;
    struct Frame {
        NodeId id;
        bool expanded;
    };
    auto known = [&](NodeId id) { return !(nodes_[id].mask & mask) || memo.count(id) > 0; };
    auto get = [&](NodeId id) -> Expr {
        if (!(nodes_[id].mask & mask)) return wrap(id);
        return wrap(memo.at(id));
    };
    std::vector<Expr> out;
    out.reserve(es.size());
    for (const Expr &root : es) {
        std::vector<Frame> stack{{root.id(), false}};
        while (!stack.empty()) {
            Frame &top = stack.back();
            const NodeId id = top.id;
            if (known(id)) {
                stack.pop_back();
                continue;
            }
            if (!top.expanded) {
                top.expanded = true;
                std::vector<NodeId> children;
                for_each_child(id, [&](NodeId c) { children.push_back(c); });
                for (NodeId c : children)
                    if (!known(c)) stack.push_back(Frame{c, false});
                continue;
            }
            stack.pop_back();
            const Node n = nodes_[id];
            Expr r;
            switch (n.op) {
            case Op::Constant: r = wrap(id); break;
            case Op::Symbol: {
                auto it = map.find(static_cast<SymbolId>(n.aux));
                r = it != map.end() ? it->second : wrap(id);
                break;
            }
            case Op::Add: r = add(get(n.lhs), get(n.rhs)); break;
            case Op::Mul: r = mul(get(n.lhs), get(n.rhs)); break;
            case Op::Div: r = div(get(n.lhs), get(n.rhs)); break;
            case Op::Pow: r = pow(get(n.lhs), n.aux); break;
            case Op::Neg: r = neg(get(n.lhs)); break;
            case Op::Sin: r = sin(get(n.lhs)); break;
            case Op::Cos: r = cos(get(n.lhs)); break;
            case Op::Tan: r = tan(get(n.lhs)); break;
            case Op::SolveComp: {
                const SolveBlock b = blocks_[n.lhs];
                const SolveMatrix m = matrices_[b.matrix];
                std::vector<Expr> me, be;
                for (NodeId x : m.entries) me.push_back(get(x));
                for (NodeId x : b.rhs) be.push_back(get(x));
                r = solve(me, be)[static_cast<std::size_t>(n.aux)];
                break;
            }
            }
            memo.emplace(id, r.id());
        }
        out.push_back(get(root.id()));
    }
    return out;
}

std::vector<SymbolId> ExprDag::free_symbols(Expr e) const
{
    std::vector<std::uint8_t> seen(nodes_.size(), 0);
    std::vector<NodeId> stack{e.id()};
    std::vector<SymbolId> out;
    while (!stack.empty()) {
        NodeId id = stack.back();
        stack.pop_back();
        if (seen[id]) continue;
        seen[id] = 1;
        if (nodes_[id].op == Op::Symbol) out.push_back(static_cast<SymbolId>(nodes_[id].aux));
        for_each_child(id, [&](NodeId c) {
            if (!seen[c]) stack.push_back(c);
        });
    }
    std::sort(out.begin(), out.end());
    return out;
}

// ---------------------------------------------------------------------------
// Point / Evaluator

Point Point::from_map(const ExprDag &dag, const std::map<std::string, double> &assignment)
{
    std::vector<double> values(dag.num_symbols(), std::numeric_limits<double>::quiet_NaN());
    for (const auto &[name, v] : assignment) {
        auto s = dag.find_symbol(name);
        if (!s) throw Error(ErrorKind::UnknownSymbol, "unknown symbol '" + name + "'");
        values[dag.symbol_id(*s)] = v;
    }
    return Point(std::move(values));
}

struct Evaluator::LuCache {
    std::size_t dim = 0;
    std::vector<double> lu;
    std::vector<std::size_t> perm;
    bool singular = false;
};

Evaluator::Evaluator(const ExprDag &dag, Point point) : dag_(&dag), point_(std::move(point)) {}

void Evaluator::clear()
{
    values_.clear();
    state_.clear();
    failure_.clear();
    block_solutions_.clear();
    lu_.clear();
}

double Evaluator::value(NodeId id)
{
    if (values_.size() < dag_->size()) {
        values_.resize(dag_->size(), 0.0);
        state_.resize(dag_->size(), 0);
        failure_.resize(dag_->size(), ErrorKind::DivisionByZero);
    }
    if (state_[id] == 0) compute(id);
    if (state_[id] == 2) {
        ErrorKind k = failure_[id];
        throw EvalError(k, id, std::string(to_string(k)) + " while evaluating node " + std::to_string(id));
    }
    return values_[id];
}

std::shared_ptr<Evaluator::LuCache> Evaluator::factor(std::uint32_t matrix, NodeId requester)
{
    if (auto it = lu_.find(matrix); it != lu_.end()) {
        if (it->second->singular)
            throw EvalError(ErrorKind::SingularSolve, requester, "singular linear solve at node " + std::to_string(requester));
        return it->second;
    }
    const SolveMatrix &mat = dag_->matrix(matrix);
    const std::size_t n = mat.dim;
    auto lu = std::make_shared<LuCache>();
    lu->dim = n;
    lu->lu.resize(n * n);
    lu->perm.resize(n);
    double scale = 0.0;
    for (std::size_t i = 0; i < n * n; ++i) {
        lu->lu[i] = values_[mat.entries[i]];
        scale = std::max(scale, std::fabs(lu->lu[i]));
    }
    std::iota(lu->perm.begin(), lu->perm.end(), std::size_t{0});
    auto &a = lu->lu;
    for (std::size_t k = 0; k < n && !lu->singular; ++k) {
        std::size_t piv = k;
        for (std::size_t i = k + 1; i < n; ++i)
            if (std::fabs(a[i * n + k]) > std::fabs(a[piv * n + k])) piv = i;
        if (std::fabs(a[piv * n + k]) <= 1e-14 * scale || scale == 0.0) {
            lu->singular = true;
            break;
        }
        if (piv != k) {
            for (std::size_t j = 0; j < n; ++j) std::swap(a[k * n + j], a[piv * n + j]);
            std::swap(lu->perm[k], lu->perm[piv]);
        }
        for (std::size_t i = k + 1; i < n; ++i) {
            double f = a[i * n + k] / a[k * n + k];
            a[i * n + k] = f;
            for (std::size_t j = k + 1; j < n; ++j) a[i * n + j] -= f * a[k * n + j];
        }
    }
    lu_.emplace(matrix, lu);
    if (lu->singular) throw EvalError(ErrorKind::SingularSolve, requester, "singular linear solve at node " + std::to_string(requester));
    return lu;
}

void Evaluator::solve_in_place(std::uint32_t matrix, std::vector<double> &rhs)
{
    auto lu = factor(matrix, 0);
    const std::size_t n = lu->dim;
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = rhs[lu->perm[i]];
    const auto &a = lu->lu;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < i; ++j) x[i] -= a[i * n + j] * x[j];
    for (std::size_t ii = n; ii-- > 0;) {
        for (std::size_t j = ii + 1; j < n; ++j) x[ii] -= a[ii * n + j] * x[j];
        x[ii] /= a[ii * n + ii];
    }
    rhs = std::move(x);
}

const std::vector<double> &Evaluator::block_solution(std::uint32_t b, NodeId requester)
{
    if (auto it = block_solutions_.find(b); it != block_solutions_.end()) return it->second;
    const SolveBlock &block = dag_->block(b);
    factor(block.matrix, requester);
    std::vector<double> x(block.rhs.size());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = values_[block.rhs[i]];
    solve_in_place(block.matrix, x);
    return block_solutions_.emplace(b, std::move(x)).first->second;
}

void Evaluator::compute(NodeId root)
{
    stack_.clear();
    stack_.push_back(root);
    while (!stack_.empty()) {
        const NodeId id = stack_.back();
        if (state_[id] != 0) {
            stack_.pop_back();
            continue;
        }
        bool ready = true;
        dag_->for_each_child(id, [&](NodeId c) {
            if (state_[c] == 0) {
                stack_.push_back(c);
                ready = false;
            }
        });
        if (!ready) continue;
        stack_.pop_back();
        bool failed = false;
        ErrorKind kind = ErrorKind::DivisionByZero;
        dag_->for_each_child(id, [&](NodeId c) {
            if (state_[c] == 2 && !failed) {
                failed = true;
                kind = failure_[c];
            }
        });
        const Node &n = dag_->node(id);
        double v = 0.0;
        if (!failed) {
            switch (n.op) {
            case Op::Constant: v = dag_->constant_of(id).value; break;
            case Op::Symbol: {
                auto s = static_cast<SymbolId>(n.aux);
                if (s >= point_.size())
                    throw Error(ErrorKind::UnknownSymbol, "symbol '" + dag_->symbol_name(s) + "' has no value at this point");
                v = point_[s];
                if (std::isnan(v)) throw Error(ErrorKind::UnknownSymbol, "symbol '" + dag_->symbol_name(s) + "' is unassigned");
                break;
            }
            case Op::Add: v = values_[n.lhs] + values_[n.rhs]; break;
            case Op::Mul: v = values_[n.lhs] * values_[n.rhs]; break;
            case Op::Div:
                if (values_[n.rhs] == 0.0) {
                    failed = true;
                    kind = ErrorKind::DivisionByZero;
                } else {
                    v = values_[n.lhs] / values_[n.rhs];
                }
                break;
            case Op::Pow:
                if (n.aux < 0 && values_[n.lhs] == 0.0) {
                    failed = true;
                    kind = ErrorKind::DivisionByZero;
                } else {
                    v = std::pow(values_[n.lhs], n.aux);
                }
                break;
            case Op::Neg: v = -values_[n.lhs]; break;
            case Op::Sin: v = std::sin(values_[n.lhs]); break;
            case Op::Cos: v = std::cos(values_[n.lhs]); break;
            case Op::Tan: v = std::tan(values_[n.lhs]); break;
            case Op::SolveComp:
                try {
                    v = block_solution(n.lhs, id)[static_cast<std::size_t>(n.aux)];
                } catch (const EvalError &e) {
                    failed = true;
                    kind = e.kind();
                }
                break;
            }
            if (!failed && !std::isfinite(v)) {
                failed = true;
                kind = ErrorKind::NonFiniteValue;
            }
        }
        values_[id] = v;
        state_[id] = failed ? 2 : 1;
        if (failed) failure_[id] = kind;
    }
}

GradientEvaluator::GradientEvaluator(Evaluator &values, std::vector<SymbolId> wrt)
    : ev_(&values), dag_(&values.dag()), wrt_(std::move(wrt)), width_(wrt_.size())
{
    for (std::size_t i = 0; i < wrt_.size(); ++i) column_[wrt_[i]] = i;
}

std::span<const double> GradientEvaluator::gradient(NodeId id)
{
    ev_->value(id); // throws where the value fails; then every dependency is valid
    if (offset_.size() < dag_->size()) offset_.resize(dag_->size(), 0);
    if (offset_[id] == 0) compute(id);
    return {slot(id), width_};
}

const std::vector<double> &GradientEvaluator::block_gradient(std::uint32_t b)
{
    if (auto it = block_grads_.find(b); it != block_grads_.end()) return it->second;
    const SolveBlock &block = dag_->block(b);
    const SolveMatrix &mat = dag_->matrix(block.matrix);
    const std::size_t dim = mat.dim;
    const std::vector<double> sol = ev_->solution(b);
    // d(M^{-1} b) = M^{-1} (db - dM s), one right-hand side per direction.
    std::vector<double> out(dim * width_);
    std::vector<double> rhs(dim);
    for (std::size_t c = 0; c < width_; ++c) {
        for (std::size_t i = 0; i < dim; ++i) {
            double r = slot(block.rhs[i])[c];
            for (std::size_t l = 0; l < dim; ++l) r -= slot(mat.entries[i * dim + l])[c] * sol[l];
            rhs[i] = r;
        }
        ev_->solve_in_place(block.matrix, rhs);
        for (std::size_t i = 0; i < dim; ++i) out[i * width_ + c] = rhs[i];
    }
    return block_grads_.emplace(b, std::move(out)).first->second;
}

void GradientEvaluator::compute(NodeId root)
{
    stack_.clear();
    stack_.push_back(root);
    std::vector<double> tmp(width_);
    while (!stack_.empty()) {
        const NodeId id = stack_.back();
        if (offset_[id] != 0) {
            stack_.pop_back();
            continue;
        }
        bool ready = true;
        dag_->for_each_child(id, [&](NodeId c) {
            if (offset_[c] == 0) {
                stack_.push_back(c);
                ready = false;
            }
        });
        if (!ready) continue;
        stack_.pop_back();
        const Node &n = dag_->node(id);
        std::fill(tmp.begin(), tmp.end(), 0.0);
        auto unary = [&](double scale) {
            const double *a = slot(n.lhs);
            for (std::size_t c = 0; c < width_; ++c) tmp[c] = scale * a[c];
        };
        switch (n.op) {
        case Op::Constant: break;
        case Op::Symbol:
            if (auto it = column_.find(static_cast<SymbolId>(n.aux)); it != column_.end()) tmp[it->second] = 1.0;
            break;
        case Op::Add: {
            const double *a = slot(n.lhs), *b = slot(n.rhs);
            for (std::size_t c = 0; c < width_; ++c) tmp[c] = a[c] + b[c];
            break;
        }
        case Op::Mul: {
            const double *a = slot(n.lhs), *b = slot(n.rhs);
            const double va = ev_->value(n.lhs), vb = ev_->value(n.rhs);
            for (std::size_t c = 0; c < width_; ++c) tmp[c] = a[c] * vb + va * b[c];
            break;
        }
        case Op::Div: {
            const double *a = slot(n.lhs), *b = slot(n.rhs);
            const double vb = ev_->value(n.rhs), q = ev_->value(id);
            for (std::size_t c = 0; c < width_; ++c) tmp[c] = (a[c] - q * b[c]) / vb;
            break;
        }
        case Op::Pow: {
            const double va = ev_->value(n.lhs);
            unary(n.aux == 0 ? 0.0 : n.aux * std::pow(va, n.aux - 1));
            break;
        }
        case Op::Neg: unary(-1.0); break;
        case Op::Sin: unary(std::cos(ev_->value(n.lhs))); break;
        case Op::Cos: unary(-std::sin(ev_->value(n.lhs))); break;
        case Op::Tan: {
            const double t = ev_->value(id);
            unary(1.0 + t * t);
            break;
        }
        case Op::SolveComp: {
            const auto &g = block_gradient(n.lhs);
            for (std::size_t c = 0; c < width_; ++c) tmp[c] = g[static_cast<std::size_t>(n.aux) * width_ + c];
            break;
        }
        }
        offset_[id] = static_cast<std::uint32_t>(data_.size() / std::max<std::size_t>(width_, 1) + 1);
        if (width_ == 0) offset_[id] = 1;
        data_.insert(data_.end(), tmp.begin(), tmp.end());
    }
}

double evaluate(Expr e, const Point &p)
{
    Evaluator ev(*e.dag(), p);
    return ev.value(e);
}

// ---------------------------------------------------------------------------
// Printing

namespace {

std::string format_double(double v)
{
    // Shortest text that reads back to the same double.
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

// Precedence: 1 sum, 2 product, 3 unary minus, 4 power, 5 atom.
std::pair<std::string, int> render(const ExprDag &dag, NodeId id)
{
    const Node &n = dag.node(id);
    auto wrapped = [&](NodeId c, int min_prec) {
        auto [s, p] = render(dag, c);
        return p < min_prec ? "(" + s + ")" : s;
    };
    switch (n.op) {
    case Op::Constant: {
        const auto &c = dag.constant_of(id);
        if (c.exact) {
            std::string s = std::to_string(c.q.num);
            if (c.q.den != 1) return {s + "/" + std::to_string(c.q.den), c.q.num < 0 ? 1 : 2};
            return {s, c.q.num < 0 ? 3 : 5};
        }
        return {format_double(c.value), c.value < 0 ? 3 : 5};
    }
    case Op::Symbol: return {dag.symbol_name(static_cast<SymbolId>(n.aux)), 5};
    case Op::Add: {
        std::string l = wrapped(n.lhs, 1);
        const Node &r = dag.node(n.rhs);
        if (r.op == Op::Neg) return {l + " - " + wrapped(r.lhs, 2), 1};
        return {l + " + " + wrapped(n.rhs, 1), 1};
    }
    case Op::Mul: return {wrapped(n.lhs, 2) + "*" + wrapped(n.rhs, 3), 2};
    case Op::Div: return {wrapped(n.lhs, 2) + "/" + wrapped(n.rhs, 3), 2};
    case Op::Pow: {
        std::string e = n.aux < 0 ? "(" + std::to_string(n.aux) + ")" : std::to_string(n.aux);
        return {wrapped(n.lhs, 5) + "^" + e, 4};
    }
    case Op::Neg: return {"-" + wrapped(n.lhs, 3), 3};
    case Op::Sin: return {"sin(" + render(dag, n.lhs).first + ")", 5};
    case Op::Cos: return {"cos(" + render(dag, n.lhs).first + ")", 5};
    case Op::Tan: return {"tan(" + render(dag, n.lhs).first + ")", 5};
    case Op::SolveComp: return {"solve#" + std::to_string(n.lhs) + "[" + std::to_string(n.aux) + "]", 5};
    }
    return {"?", 5};
}

} // namespace

std::string to_string(Expr e) { return render(*e.dag(), e.id()).first; }

} // namespace flatcheck::expr
