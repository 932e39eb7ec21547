#include "oracles.hpp"

#include <flatcheck/normalforms.hpp>
#include <flatcheck/parser.hpp>
#include <flatcheck/sfechk.hpp>
#include <flatcheck/subdist.hpp>

#include <doctest.h>

#include <random>

using namespace flatcheck;
using namespace flatcheck::sfe;
using geom::Distribution;
using geom::FieldId;

namespace {

std::string source(const std::string &rel) { return std::string(FLATCHECK_SOURCE_DIR) + "/" + rel; }

CheckOptions options(std::uint64_t seed = 1, int points = 25)
{
    CheckOptions o;
    o.cfg.seed = seed;
    o.cfg.n_points = points;
    return o;
}

model::SystemModel brunovsky(int chains, int length)
{
    std::string text = "[states]\n";
    for (int j = 0; j < chains; ++j)
        for (int i = 1; i <= length; ++i) text += "x" + std::to_string(i) + "_" + std::to_string(j) + " ";
    text += "\n[drift]\n";
    for (int j = 0; j < chains; ++j)
        for (int i = 1; i <= length; ++i) text += i < length ? "x" + std::to_string(i + 1) + "_" + std::to_string(j) + "\n" : "0\n";
    for (int c = 0; c < chains; ++c) {
        text += "[input " + std::to_string(c) + "]\n";
        for (int j = 0; j < chains; ++j)
            for (int i = 1; i <= length; ++i) text += (j == c && i == length) ? "1\n" : "0\n";
    }
    return model::parse_model(text, "brunovsky");
}

} // namespace

TEST_CASE("crane against both triangular forms")
{
    auto crane = model::load_model(source("models/crane.model"));
    auto tf0 = check_tf0(crane, options());
    CHECK(tf0.verdict() == "Fail(2)");
    CHECK(tf0.exit_code() == 1);
    CHECK(tf0.ranks.D == std::vector<int>{3, 6});

    auto tf1 = check_tf1(crane, options());
    CHECK(tf1.verdict() == "TF1");
    CHECK(tf1.exit_code() == 0);
    CHECK(tf1.indices == StructureIndices{2, 1, 1, 2, {1, 1, 1}});
    CHECK(tf1.ranks.D == std::vector<int>{3, 6});
    CHECK(tf1.ranks.E_flag == std::vector<int>{5, 7});
    CHECK(tf1.ranks.L == 4);
    CHECK(tf1.ranks.F == std::vector<int>{7, 10});
    CHECK(tf1.indices.state_count() == 10);

    CHECK(check(crane, Form::Auto, options()).verdict() == "TF1");
}

TEST_CASE("first failing condition is stable under reseeding")
{
    auto crane = normal::crane_model();
    auto tf1_instance = normal::scramble(normal::generate_tf({2, 1, 1, 2, {0, 1, 0}}, 5, 1), 6).first;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        CHECK(check_tf0(crane, options(seed)).verdict() == "Fail(2)");
        CHECK(check_tf0(tf1_instance, options(seed, 10)).verdict() == "Fail(2)");
    }
}

TEST_CASE("all-conditions mode keeps evaluating")
{
    auto crane = normal::crane_model();
    auto o = options();
    o.all_conditions = true;
    auto rep = check_tf0(crane, o);
    CHECK(rep.verdict() == "Fail(2)");
    CHECK(rep.conditions.size() > 2);
}

TEST_CASE("Brunovsky chains never become non-involutive")
{
    auto m = brunovsky(3, 3);
    auto rep = check_tf0(m, options(1, 10));
    CHECK(rep.verdict() == "Fail(0)");
    geom::Workspace ws(m, options(1, 10).cfg);
    auto seq = drift_sequence(ws);
    CHECK(seq.never_non_involutive);
}

TEST_CASE("dependent brackets violate the rank condition")
{
    // [f, g2] = 0, so rank D_2 = 5 instead of 6.
    auto m = model::parse_model(R"(
[states]
a b c d e h
[drift]
0
0
0
a
b
d*e
[input 0]
1
0
0
0
0
0
[input 1]
0
1
0
0
0
0
[input 2]
0
0
1
0
0
0
)");
    auto rep = check_tf0(m, options(1, 10));
    CHECK(rep.verdict() == "Fail(1)");
    CHECK(check_tf1(m, options(1, 10)).verdict() == "Fail(1)");
}

TEST_CASE("two-input systems are rejected")
{
    auto m = model::parse_model("[states]\nx y\n[input 0]\n1\n0\n[input 1]\n0\n1\n");
    try {
        check_tf0(m, options());
        FAIL("expected HypothesisViolated");
    } catch (const Error &e) {
        CHECK(e.kind() == ErrorKind::HypothesisViolated);
    }
}

TEST_CASE("control-affine reducibility")
{
    linalg::CheckConfig cfg;
    cfg.n_points = 10;
    {
        auto m = normal::generate_tf({2, 0, 1, 2, {1, 0, 1}}, 2, 1);
        auto ext = extend_with_inputs(m);
        std::vector<std::size_t> sel;
        for (std::size_t j = 0; j < m.num_inputs(); ++j) sel.push_back(m.n() + j);
        CHECK(check_affine_reduction(ext, sel, cfg));
    }
    {
        // Bottom states of the lower chains of a TF0 instance as inputs: the
        // rest of the drift is affine in them.
        StructureIndices idx{2, 0, 1, 2, {1, 1, 1}};
        auto m = normal::generate_tf(idx, 6, 1);
        std::vector<std::size_t> sel;
        for (int j = 0; j <= idx.m; ++j)
            sel.push_back(static_cast<std::size_t>(std::find(m.states.begin(), m.states.end(), "zeta1_" + std::to_string(j)) - m.states.begin()));
        CHECK(check_affine_reduction(m, sel, cfg));
    }
    {
        // x1' = u, x2' = u^2 with u a state of the extended system.
        auto dag = std::make_shared<expr::ExprDag>();
        auto u = dag->symbol("u");
        auto m = oracle::field_model(dag, {"x1", "x2", "u"}, {});
        m.drift = {u, u * u, dag->zero()};
        std::vector<std::size_t> sel{2};
        CHECK_FALSE(check_affine_reduction(m, sel, cfg));
    }
}

TEST_CASE("crane flat output")
{
    auto crane = model::load_model(source("models/crane.model"));
    auto phi = model::load_expression_list(crane, source("models/load_pos.txt"));
    auto res = verify_flat_output(crane, phi, Form::TF1, options());
    CHECK(res.target == "F0");
    CHECK(res.check.ok);
    CHECK(res.check.independent);
    CHECK(res.check.residual <= 1e-8);
    REQUIRE(res.report.flat_output);
    CHECK(res.report.flat_output->status == "verified");

    auto q = model::parse_expression_list(crane, "q1\nq2\nq3\n");
    CHECK_FALSE(verify_flat_output(crane, q, Form::TF1, options()).check.ok);

    auto two = model::parse_expression_list(crane, "q1\nq2\n");
    try {
        verify_flat_output(crane, two, Form::TF1, options());
        FAIL("expected DimensionMismatch");
    } catch (const Error &e) {
        CHECK(e.kind() == ErrorKind::DimensionMismatch);
    }
}

TEST_CASE("flat output is invariant under recombination")
{
    auto crane = model::load_model(source("models/crane.model"));
    auto phi = model::load_expression_list(crane, source("models/load_pos.txt"));
    auto &dag = *crane.dag;
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> c(-1, 1);
    for (int t = 0; t < 5; ++t) {
        // psi = A phi + small nonlinear terms; the Jacobian stays close to A.
        Eigen::Matrix3d a = Eigen::Matrix3d::Identity() * 2 + Eigen::Matrix3d::NullaryExpr([&] { return c(rng) * 0.5; });
        REQUIRE(std::abs(a.determinant()) > 0.1);
        std::vector<expr::Expr> psi;
        for (int i = 0; i < 3; ++i) {
            expr::Expr e = dag.constant(0.1 * c(rng)) * expr::sin(phi[static_cast<std::size_t>((i + 1) % 3)]);
            for (int j = 0; j < 3; ++j) e = e + dag.constant(a(i, j)) * phi[static_cast<std::size_t>(j)];
            psi.push_back(e);
        }
        auto res = verify_flat_output(crane, psi, Form::TF1, options());
        CHECK(res.check.ok);
        CHECK(res.check.residual <= 1e-8);
    }
}

TEST_CASE("top variables of normal forms are flat outputs")
{
    {
        StructureIndices idx{2, 0, 1, 2, {1, 1, 1}};
        auto m = normal::generate_tf(idx, 3, 1);
        auto phi = model::parse_expression_list(m, "xi1_0\nxi1_1\nxi1_2\n");
        auto res = verify_flat_output(m, phi, Form::TF0, options(1, 10));
        CHECK(res.report.verdict() == "TF0");
        CHECK(res.target == "F0");
        CHECK(res.check.ok);
    }
    {
        StructureIndices idx{2, 0, 1, 2, {0, 0, 0}};
        auto m = normal::generate_tf(idx, 3, 1);
        auto phi = model::parse_expression_list(m, "chi0\nchi1_1\nchi1_2\n");
        auto res = verify_flat_output(m, phi, Form::TF0, options(1, 10));
        CHECK(res.target == "L");
        CHECK(res.check.ok);
    }
}

TEST_CASE("crane F0 annihilator")
{
    linalg::CheckConfig cfg;
    auto crane = normal::crane_model();
    geom::Workspace ws(crane, cfg);
    auto seq = drift_sequence(ws);
    std::vector<FieldId> c;
    for (const auto &col : crane.ansatz) c.push_back(ws.combine(col, ws.inputs()));
    auto cc = subdist::verify_c_fields(ws, c, ws.drift(), seq.D.at(0), Distribution{});
    REQUIRE(cc.ok);
    auto f0 = geom::involutive_closure(ws, cc.e);
    CHECK(f0.rank == 7);
    for (std::size_t k = 0; k < ws.num_points(); ++k) {
        auto ann = geom::annihilator_at(ws, f0, k);
        CHECK(ann.rows() == 3);
        auto cols = ws.samples(f0.gens, k);
        REQUIRE(cols);
        Eigen::MatrixXd normalized = cols->colwise().normalized();
        CHECK((ann * normalized).cwiseAbs().maxCoeff() <= 1e-9);
    }
}

TEST_CASE("crane transformation onto the triangular form")
{
    auto crane = model::load_model(source("models/crane.model"));
    StructureIndices idx{2, 1, 1, 2, {1, 1, 1}};
    auto text = model::read_file(source("models/crane_tf1.txf"));
    auto tr = parse_transformation(crane, text, idx);
    auto rep = verify_transformation(crane, tr, idx, {});
    CHECK(rep.ok);
    CHECK(rep.max_residual <= 1e-8);

    // Swapping the two direction ratios breaks the contact structure.
    std::string swapped = text;
    swapped.replace(swapped.find("chi2_1 = tan(q5)/cos(q4)"), 24, "chi2_1 = tan(q4)/cos(q5)");
    auto bad = verify_transformation(crane, parse_transformation(crane, swapped, idx), idx, {});
    CHECK_FALSE(bad.ok);
    CHECK(bad.max_residual > 1e-3);

    StructureIndices wrong{2, 1, 1, 3, {1, 1, 1}};
    try {
        verify_transformation(crane, tr, wrong, {});
        FAIL("expected DimensionMismatch");
    } catch (const Error &e) {
        CHECK(e.kind() == ErrorKind::DimensionMismatch);
    }
}

TEST_CASE("identity and scramble transformations")
{
    StructureIndices idx{2, 1, 1, 2, {1, 0, 1}};
    auto m = normal::generate_tf(idx, 9, 1);
    auto &dag = *m.dag;
    Transformation id;
    id.phi = m.state_exprs();
    id.alpha.assign(3, dag.zero());
    id.beta.assign(9, dag.zero());
    for (std::size_t j = 0; j < 3; ++j) id.beta[j * 4] = dag.one();
    auto rep = verify_transformation(m, id, idx, {});
    CHECK(rep.ok);
    CHECK(rep.max_residual <= 1e-12);

    auto [scr, info] = normal::scramble(m, 10);
    Transformation back{info.diffeo, info.alpha, info.beta};
    auto rep2 = verify_transformation(scr, back, idx, {});
    CHECK(rep2.ok);
    CHECK(rep2.max_residual <= 1e-8);
}

TEST_CASE("report serialization")
{
    auto crane = normal::crane_model();
    auto rep = check_tf1(crane, options());
    auto j = rep.to_json();
    std::vector<std::string> keys;
    for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
    CHECK(keys == std::vector<std::string>{"verdict", "indices", "ranks", "conditions", "flat_output"});
    CHECK(j["indices"].contains("k_xi"));
    CHECK(j["ranks"]["L"] == 4);
    for (const auto &c : j["conditions"]) {
        CHECK(c.contains("id"));
        CHECK(c.contains("status"));
        CHECK(c.contains("residual"));
        CHECK(c.contains("witness_point"));
    }
    CHECK(j["flat_output"].contains("status"));
    CHECK(j["flat_output"].contains("basis_residual"));
    CHECK(rep.to_json().dump() == check_tf1(crane, options()).to_json().dump());
    CHECK(rep.to_table().find("TF1") != std::string::npos);
}
