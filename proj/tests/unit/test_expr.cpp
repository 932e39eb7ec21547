#include "oracles.hpp"

#include <flatcheck/parser.hpp>

#include <doctest.h>

#include <cmath>
#include <random>

using namespace flatcheck;
using namespace flatcheck::expr;

namespace {

Scope scope_of(std::initializer_list<const char *> names)
{
    Scope s;
    for (auto n : names) s.symbols.insert(n);
    return s;
}

Point at(ExprDag &dag, std::map<std::string, double> vals) { return Point::from_map(dag, vals); }

} // namespace

TEST_CASE("hash-consing yields identical nodes")
{
    ExprDag dag;
    auto x = dag.symbol("x"), y = dag.symbol("y");
    CHECK((sin(x * y) + x) == (sin(x * y) + x));
    CHECK(dag.symbol("x") == x);
    std::size_t before = dag.size();
    (void)(cos(x) * y);
    std::size_t after = dag.size();
    (void)(cos(x) * y);
    CHECK(dag.size() == after);
    CHECK(after > before);
}

TEST_CASE("constant folding and identities")
{
    ExprDag dag;
    auto x = dag.symbol("x");
    CHECK((dag.integer(2) + dag.integer(3)).is_constant());
    CHECK(dag.constant_of((dag.integer(1) / dag.integer(3) + dag.integer(1) / dag.integer(6)).id()).q == Rational{1, 2});
    CHECK(x * dag.one() == x);
    CHECK((x * dag.zero()).is_zero());
    CHECK(x + dag.zero() == x);
}

TEST_CASE("parser structure and errors")
{
    ExprDag dag;
    auto sc = scope_of({"q3", "v1", "q1", "q4"});
    Expr e = parse_expr(dag, "sin(q3)*v1", sc);
    CHECK(e == sin(dag.symbol("q3")) * dag.symbol("v1"));

    // No merging of like terms.
    Expr s = parse_expr(dag, "q1 + q1", sc);
    CHECK(dag.node(s.id()).op == Op::Add);

    try {
        parse_expr(dag, "cos(q4", sc);
        FAIL("expected a syntax error");
    } catch (const SyntaxError &err) {
        CHECK(err.position() == 7);
    }
    CHECK_THROWS_AS(parse_expr(dag, "q1 +", sc), SyntaxError);
    CHECK_THROWS_AS(parse_expr(dag, "q1 * * q3", sc), SyntaxError);
    CHECK_THROWS_AS(parse_expr(dag, "q1^x", sc), SyntaxError);
    try {
        parse_expr(dag, "q1 + zz", sc);
        FAIL("expected an unknown symbol");
    } catch (const Error &err) {
        CHECK(err.kind() == ErrorKind::UnknownSymbol);
    }
}

TEST_CASE("rational literals stay exact")
{
    ExprDag dag;
    Scope sc;
    Expr e = parse_expr(dag, "0.1 + 1/5", sc);
    REQUIRE(e.is_constant());
    const auto &c = dag.constant_of(e.id());
    CHECK(c.exact);
    CHECK(c.q == Rational{3, 10});
}

TEST_CASE("printing round-trips through the parser")
{
    ExprDag dag;
    auto sc = scope_of({"x", "y"});
    for (const char *text : {"x*(y - 2)/(1 + x^2)", "-sin(x)^3 + cos(-y)", "tan(x/3) - 0.25*y", "x^-2 + 1e-3"}) {
        Expr e = parse_expr(dag, text, sc);
        Expr back = parse_expr(dag, to_string(e), sc);
        Point p = at(dag, {{"x", 0.7}, {"y", -1.3}});
        CHECK(evaluate(back, p) == doctest::Approx(evaluate(e, p)).epsilon(1e-15));
    }
}

TEST_CASE("evaluation examples")
{
    ExprDag dag;
    auto q3 = dag.symbol("q3");
    CHECK(evaluate(sin(q3), at(dag, {{"q3", 0.0}})) == 0.0);

    std::vector<Expr> m{dag.integer(2), dag.zero(), dag.zero(), dag.integer(4)};
    std::vector<Expr> b{dag.integer(2), dag.integer(8)};
    auto s = dag.solve(m, b);
    Point p = at(dag, {{"q3", 1.0}});
    CHECK(evaluate(s[0], p) == doctest::Approx(1.0));
    CHECK(evaluate(s[1], p) == doctest::Approx(2.0));

    try {
        evaluate(1 / q3, at(dag, {{"q3", 0.0}}));
        FAIL("expected division by zero");
    } catch (const EvalError &err) {
        CHECK(err.kind() == ErrorKind::DivisionByZero);
    }
    std::vector<Expr> sing{q3, q3, q3, q3};
    auto z = dag.solve(sing, b);
    try {
        evaluate(z[0], at(dag, {{"q3", 1.0}}));
        FAIL("expected a singular solve");
    } catch (const EvalError &err) {
        CHECK(err.kind() == ErrorKind::SingularSolve);
    }
}

TEST_CASE("derivative rules")
{
    ExprDag dag;
    auto x = dag.symbol("x"), y = dag.symbol("y");
    CHECK(dag.diff(x * y, x) == y);
    CHECK(dag.diff(sin(x), x) == cos(x));
    CHECK(dag.diff(sin(y), x).is_zero());

    // d/dx of M^{-1} b against the implicit rule evaluated by hand.
    std::vector<Expr> m{2 + x, y, x * y, 3.0 + x * x};
    std::vector<Expr> b{sin(x), y};
    auto s = dag.solve(m, b);
    Point p = at(dag, {{"x", 0.4}, {"y", -0.8}});
    Eigen::Matrix2d M;
    M << 2.4, -0.8, 0.4 * -0.8, 3.16;
    Eigen::Vector2d bv(std::sin(0.4), -0.8);
    Eigen::Vector2d sv = M.lu().solve(bv);
    Eigen::Matrix2d dM;
    dM << 1, 0, -0.8, 0.8;
    Eigen::Vector2d db(std::cos(0.4), 0.0);
    Eigen::Vector2d ds = M.lu().solve(db - dM * sv);
    CHECK(evaluate(dag.diff(s[0], x), p) == doctest::Approx(ds(0)).epsilon(1e-12));
    CHECK(evaluate(dag.diff(s[1], x), p) == doctest::Approx(ds(1)).epsilon(1e-12));
}

TEST_CASE("differentiation is linear")
{
    ExprDag dag;
    auto x = dag.symbol("x"), y = dag.symbol("y"), z = dag.symbol("z");
    std::vector<SymbolId> ids{dag.symbol_id(x), dag.symbol_id(y), dag.symbol_id(z)};
    std::mt19937_64 rng(11);
    oracle::RandomExpr gen{dag, {x, y, z}, rng, true};
    for (int t = 0; t < 50; ++t) {
        Expr a = gen.make(3), b = gen.make(3);
        Point p = oracle::random_point(dag, ids, rng);
        double lhs = evaluate(dag.diff(a + b, x), p);
        double rhs = evaluate(dag.diff(a, x), p) + evaluate(dag.diff(b, x), p);
        CHECK(std::abs(lhs - rhs) <= 1e-12 * (1 + std::abs(lhs)));
    }
}

TEST_CASE("symbolic derivatives agree with central differences")
{
    ExprDag dag;
    auto x = dag.symbol("x"), y = dag.symbol("y"), z = dag.symbol("z");
    std::vector<SymbolId> ids{dag.symbol_id(x), dag.symbol_id(y), dag.symbol_id(z)};
    std::mt19937_64 rng(5);
    oracle::RandomExpr gen{dag, {x, y, z}, rng, true};
    for (int t = 0; t < 500; ++t) {
        Expr e = gen.make(3);
        Point p = oracle::random_point(dag, ids, rng);
        SymbolId s = ids[static_cast<std::size_t>(t % 3)];
        double d = evaluate(dag.diff(e, s), p);
        double fd = oracle::central_diff(e, p, s);
        CHECK(std::abs(d - fd) <= 1e-6 * (1 + std::abs(d)));
    }
    CHECK(dag.num_blocks() > 0);
}

TEST_CASE("forward-mode gradients agree with symbolic derivatives")
{
    ExprDag dag;
    auto x = dag.symbol("x"), y = dag.symbol("y"), z = dag.symbol("z");
    std::vector<SymbolId> ids{dag.symbol_id(x), dag.symbol_id(y), dag.symbol_id(z)};
    std::mt19937_64 rng(6);
    oracle::RandomExpr gen{dag, {x, y, z}, rng, true};
    for (int t = 0; t < 100; ++t) {
        Expr e = gen.make(3);
        Point p = oracle::random_point(dag, ids, rng);
        Evaluator ev(dag, p);
        GradientEvaluator ge(ev, ids);
        auto g = ge.gradient(e);
        for (std::size_t i = 0; i < 3; ++i) {
            double d = evaluate(dag.diff(e, ids[i]), p);
            CHECK(std::abs(g[i] - d) <= 1e-10 * (1 + std::abs(d)));
        }
    }
}
