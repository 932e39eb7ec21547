#include "oracles.hpp"

#include <flatcheck/normalforms.hpp>

#include <doctest.h>

#include <cmath>
#include <random>

using namespace flatcheck;
using namespace flatcheck::model;
using expr::Point;

namespace {

std::string crane_path() { return std::string(FLATCHECK_SOURCE_DIR) + "/models/crane.model"; }

double field_difference(const SystemModel &a, const SystemModel &b, int points)
{
    linalg::CheckConfig cfg;
    cfg.n_points = points;
    double worst = 0.0;
    for (const auto &p : sample_points(a, cfg, {})) {
        std::vector<double> x;
        for (const auto &s : a.state_ids()) x.push_back(p[s]);
        Point pb = b.point_from_state(x);
        for (std::size_t i = 0; i < a.n(); ++i) {
            worst = std::max(worst, std::abs(expr::evaluate(a.drift[i], p) - expr::evaluate(b.drift[i], pb)));
            for (std::size_t j = 0; j < a.num_inputs(); ++j)
                worst = std::max(worst, std::abs(expr::evaluate(a.inputs[j][i], p) - expr::evaluate(b.inputs[j][i], pb)));
        }
    }
    return worst;
}

} // namespace

TEST_CASE("crane model file")
{
    auto m = load_model(crane_path());
    CHECK(m.n() == 10);
    CHECK(m.num_inputs() == 3);
    CHECK(m.ansatz.size() == 2);
    // Same vector fields as the built-in crane.
    CHECK(field_difference(m, normal::crane_model(), 25) < 1e-12);
}

TEST_CASE("single mass point from a Lagrangian")
{
    auto m = parse_model(R"(
[params]
g = 9.81
[lagrangian]
q = x
v = v
T = v^2/2
V = g*x
force 0 = 1
)");
    REQUIRE(m.n() == 2);
    Point p = m.point_from_state(std::vector<double>{0.3, -0.7});
    CHECK(expr::evaluate(m.drift[0], p) == doctest::Approx(-0.7));
    CHECK(expr::evaluate(m.drift[1], p) == doctest::Approx(-9.81));
    CHECK(expr::evaluate(m.inputs[0][0], p) == 0.0);
    CHECK(expr::evaluate(m.inputs[0][1], p) == doctest::Approx(1.0));
}

TEST_CASE("Lagrangian checks")
{
    CHECK_THROWS_WITH_AS(parse_model("[lagrangian]\nq = x\nT = v1^3\nV = 0\nforce 0 = 1\n"), doctest::Contains("quadratic"), Error);
    try {
        parse_model("[lagrangian]\nq = x y\nT = v1^2\nV = 0\nforce 0 = 1, 0\n");
        FAIL("expected a singular mass matrix");
    } catch (const Error &e) {
        CHECK(e.kind() == ErrorKind::SingularMass);
    }
}

TEST_CASE("direct model sections and errors")
{
    const char *chained = R"(
# chained form, two chains of length 2
[states]
z0 z1_1 z2_1 z1_2 z2_2
[input 0]
1
z2_1
0
z2_2
0
[input 1]
0
0
1
0
0
[input 2]
0
0
0
0
1
)";
    auto m = parse_model(chained);
    CHECK(m.n() == 5);
    CHECK(m.num_inputs() == 3);
    CHECK_NOTHROW(validate(m, {}));

    try {
        parse_model("[states]\nx y\n[input 0]\n1\n");
        FAIL("expected a dimension mismatch");
    } catch (const Error &e) {
        CHECK(e.kind() == ErrorKind::DimensionMismatch);
    }
    try {
        parse_model("[states]\nx y\n[input 0]\n1\nx +\n");
        FAIL("expected a syntax error");
    } catch (const Error &e) {
        CHECK(e.kind() == ErrorKind::SyntaxError);
        CHECK(std::string(e.what()).find("line 5") != std::string::npos);
    }
    try {
        parse_model("[states]\nx y\n[input 0]\n1\nw\n");
        FAIL("expected an unknown symbol");
    } catch (const Error &e) {
        CHECK(e.kind() == ErrorKind::UnknownSymbol);
    }
}

TEST_CASE("dependent inputs are rejected")
{
    auto m = parse_model("[states]\nx y z\n[input 0]\n1\nx\n0\n[input 1]\n2\n2*x\n0\n[input 2]\n0\n0\n1\n");
    try {
        validate(m, {});
        FAIL("expected DependentInputs");
    } catch (const Error &e) {
        CHECK(e.kind() == ErrorKind::DependentInputs);
    }
}

TEST_CASE("writer output parses back to the same fields")
{
    StructureIndices idx{2, 1, 1, 2, {1, 0, 1}};
    auto [scr, info] = normal::scramble(normal::generate_tf(idx, 4, 1), 8);
    auto back = parse_model(write_model(scr));
    CHECK(back.states == scr.states);
    CHECK(field_difference(back, scr, 10) < 1e-12);

    auto crane = normal::crane_model();
    auto crane_back = parse_model(write_model(crane));
    CHECK(field_difference(crane_back, crane, 10) < 1e-12);
    CHECK(crane_back.ansatz.size() == 2);
}

TEST_CASE("expression lists")
{
    auto m = load_model(crane_path());
    auto phi = load_expression_list(m, std::string(FLATCHECK_SOURCE_DIR) + "/models/load_pos.txt");
    REQUIRE(phi.size() == 3);
    auto list = parse_expression_list(m, "# comment\nlet r = R*q3\nq1 + r*sin(q5)\n\nr*cos(q4)*cos(q5)\n");
    REQUIRE(list.size() == 2);
    Point p = m.point_from_state(std::vector<double>{0.1, 0.2, 1.3, 0.3, -0.2, 0, 0, 0, 0, 0});
    CHECK(expr::evaluate(list[0], p) == doctest::Approx(expr::evaluate(phi[0], p)));
    CHECK(expr::evaluate(list[1], p) == doctest::Approx(expr::evaluate(phi[2], p)));
}

// M(q) dv/dt = d_q T - d_q V - (d_q p) v + F u with p = d_v T, every derivative
// taken by central differences of T and V alone. The differences are nested,
// so the step is large enough to keep round-off below truncation error.
TEST_CASE("crane dynamics satisfy the Euler-Lagrange equations")
{
    auto m = normal::crane_model();
    REQUIRE(m.lagrangian);
    const auto &L = *m.lagrangian;
    auto &dag = *m.dag;
    std::vector<expr::SymbolId> q, v;
    for (const auto &s : L.q) q.push_back(dag.symbol_id(dag.symbol(s)));
    for (const auto &s : L.v) v.push_back(dag.symbol_id(dag.symbol(s)));
    const double h = 1e-3;
    auto dT_dv = [&](Point p, std::size_t i) { return oracle::central_diff(L.T, p, v[i], h); };

    linalg::CheckConfig cfg;
    double worst = 0.0;
    for (const auto &p : sample_points(m, cfg, {})) {
        Eigen::MatrixXd M(5, 5), dp(5, 5);
        Eigen::VectorXd rhs(5), vel(5);
        for (std::size_t i = 0; i < 5; ++i) vel(static_cast<Eigen::Index>(i)) = p[v[i]];
        for (std::size_t i = 0; i < 5; ++i) {
            for (std::size_t j = 0; j < 5; ++j) {
                Point a = p, b = p;
                a[v[j]] += h;
                b[v[j]] -= h;
                M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = (dT_dv(a, i) - dT_dv(b, i)) / (2 * h);
                a = p;
                b = p;
                a[q[j]] += h;
                b[q[j]] -= h;
                dp(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = (dT_dv(a, i) - dT_dv(b, i)) / (2 * h);
            }
            rhs(static_cast<Eigen::Index>(i)) = oracle::central_diff(L.T, p, q[i], h) - oracle::central_diff(L.V, p, q[i], h);
        }
        rhs -= dp * vel;
        Eigen::VectorXd acc = M.lu().solve(rhs);
        Eigen::MatrixXd F(5, 3);
        for (std::size_t j = 0; j < 3; ++j)
            for (std::size_t i = 0; i < 5; ++i)
                F(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = expr::evaluate(L.force[j][i], p);
        Eigen::MatrixXd G = M.lu().solve(F);
        for (std::size_t i = 0; i < 5; ++i) {
            CHECK(expr::evaluate(m.drift[i], p) == doctest::Approx(vel(static_cast<Eigen::Index>(i))));
            worst = std::max(worst, std::abs(expr::evaluate(m.drift[5 + i], p) - acc(static_cast<Eigen::Index>(i))) /
                                         (1 + std::abs(acc(static_cast<Eigen::Index>(i)))));
            for (std::size_t j = 0; j < 3; ++j) {
                worst = std::max(worst, std::abs(expr::evaluate(m.inputs[j][5 + i], p) -
                                                 G(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))));
                CHECK(expr::evaluate(m.inputs[j][i], p) == 0.0);
            }
        }
    }
    CHECK(worst < 1e-5);
}

TEST_CASE("crane fields depend on the documented coordinates only")
{
    auto m = normal::crane_model();
    auto &dag = *m.dag;
    // Drift acceleration rows use q3, q4, q5, v3, v4, v5 (and v1, v2 never);
    // input fields use q3, q4, q5 only.
    for (const char *s : {"q1", "q2", "v1", "v2"}) {
        auto id = dag.symbol_id(dag.symbol(s));
        for (std::size_t i = 5; i < 10; ++i) {
            linalg::CheckConfig cfg;
            for (const auto &p : sample_points(m, cfg, {})) CHECK(std::abs(expr::evaluate(dag.diff(m.drift[i], id), p)) < 1e-12);
        }
    }
    linalg::CheckConfig cfg;
    cfg.n_points = 5;
    auto pts = sample_points(m, cfg, {});
    for (const char *s : {"q1", "q2", "v1", "v2", "v3", "v4", "v5"}) {
        auto id = dag.symbol_id(dag.symbol(s));
        for (std::size_t j = 0; j < 3; ++j)
            for (std::size_t i = 0; i < 10; ++i)
                for (const auto &p : pts) CHECK(std::abs(expr::evaluate(dag.diff(m.inputs[j][i], id), p)) < 1e-12);
    }
}

TEST_CASE("crane load position and ansatz values")
{
    auto m = normal::crane_model();
    auto pos = normal::crane_load_position(m);
    Point p = m.point_from_state(std::vector<double>{0, 0, 1, 0, 0, 0, 0, 0, 0, 0});
    CHECK(expr::evaluate(pos[0], p) == 0.0);
    CHECK(expr::evaluate(pos[1], p) == 0.0);
    CHECK(expr::evaluate(pos[2], p) == doctest::Approx(0.1));

    Point r = m.point_from_state(std::vector<double>{0.2, -0.1, 1.4, 0.3, -0.25, 0, 0, 0, 0, 0});
    const double expect = -0.1 * 1.4 * std::cos(0.3) * std::cos(-0.25) * 2.0;
    CHECK(expr::evaluate(m.ansatz[0][0], r) == doctest::Approx(expect).epsilon(1e-14));
}

// Same equations with exact derivatives of T and V: the solve node must
// reproduce them to rounding.
TEST_CASE("crane accelerations solve the mass-matrix system")
{
    auto m = normal::crane_model();
    const auto &L = *m.lagrangian;
    auto &dag = *m.dag;
    std::vector<expr::SymbolId> q, v;
    for (const auto &s : L.q) q.push_back(dag.symbol_id(dag.symbol(s)));
    for (const auto &s : L.v) v.push_back(dag.symbol_id(dag.symbol(s)));
    std::vector<expr::Expr> p(5);
    for (std::size_t i = 0; i < 5; ++i) p[i] = dag.diff(L.T, v[i]);

    linalg::CheckConfig cfg;
    double worst = 0.0;
    for (const auto &pt : sample_points(m, cfg, {})) {
        Eigen::MatrixXd M(5, 5);
        Eigen::VectorXd res(5);
        for (std::size_t i = 0; i < 5; ++i) {
            double r = expr::evaluate(dag.diff(L.T, q[i]), pt) - expr::evaluate(dag.diff(L.V, q[i]), pt);
            for (std::size_t j = 0; j < 5; ++j) {
                M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = expr::evaluate(dag.diff(p[i], v[j]), pt);
                r -= expr::evaluate(dag.diff(p[i], q[j]), pt) * pt[v[j]];
            }
            res(static_cast<Eigen::Index>(i)) = r;
        }
        Eigen::VectorXd fv(5);
        for (std::size_t i = 0; i < 5; ++i) fv(static_cast<Eigen::Index>(i)) = expr::evaluate(m.drift[5 + i], pt);
        worst = std::max(worst, (M * fv - res).cwiseAbs().maxCoeff() / (1 + res.cwiseAbs().maxCoeff()));
    }
    CHECK(worst <= 1e-10);
}
