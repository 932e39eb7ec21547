// One line per acceptance criterion; exit status is the number of failures.

#include "../unit/oracles.hpp"

#include <flatcheck/normalforms.hpp>
#include <flatcheck/sfechk.hpp>
#include <flatcheck/subdist.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>

using namespace flatcheck;
using geom::Distribution;
using geom::FieldId;
using geom::Workspace;

namespace {

std::string source(const std::string &rel) { return std::string(FLATCHECK_SOURCE_DIR) + "/" + rel; }

struct Result {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string &what)
    {
        if (!ok) {
            pass = false;
            detail += (detail.empty() ? "" : "; ") + what;
        }
    }
};

std::string fmt(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

std::string ints(const std::vector<int> &v)
{
    std::string s = "[";
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s + "]";
}

sfe::CheckOptions options(int points, double tol, std::uint64_t seed = 1)
{
    sfe::CheckOptions o;
    o.cfg.n_points = points;
    o.cfg.tol_rel = tol;
    o.cfg.seed = seed;
    return o;
}

const sfe::ConditionResult *condition(const sfe::CheckReport &r, const std::string &id)
{
    for (const auto &c : r.conditions)
        if (c.id == id) return &c;
    return nullptr;
}

Result crane_regression()
{
    Result r;
    auto t0 = std::chrono::steady_clock::now();
    auto rep = sfe::check_tf1(model::load_model(source("models/crane.model")), options(25, 1e-8));
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.require(rep.verdict() == "TF1", "verdict " + rep.verdict());
    r.require(rep.ranks.D == std::vector<int>{3, 6}, "D ranks " + ints(rep.ranks.D));
    r.require(rep.indices.k_zeta == 1, "k_zeta");
    auto c2 = condition(rep, "2");
    r.require(c2 && c2->status == sfe::Status::Pass, "C(D2) != D1");
    r.require(!rep.ranks.E_flag.empty() && rep.ranks.E_flag.front() == 5, "rank E");
    r.require(rep.ranks.L == 4, "rank L");
    r.require(!rep.ranks.E_flag.empty() && rep.ranks.E_flag.back() == 7, "rank of the closure of E");
    r.require(rep.indices.k_chi == 2, "k_chi");
    r.require(rep.ranks.F.size() == 2 && rep.ranks.F[1] == 10 && rep.ranks.F[1] - rep.ranks.F[0] == 3, "F ranks " + ints(rep.ranks.F));
    r.require(rep.indices == StructureIndices{2, 1, 1, 2, {1, 1, 1}}, "indices " + rep.indices.to_string());
    r.require(secs <= 60.0, "runtime " + fmt(secs) + " s");
    if (r.pass)
        r.detail = "TF1, D=" + ints(rep.ranks.D) + " E_flag=" + ints(rep.ranks.E_flag) + " L=4 F=" + ints(rep.ranks.F) + ", " +
                   rep.indices.to_string() + ", " + fmt(secs) + " s";
    return r;
}

Result ansatz_residuals()
{
    Result r;
    linalg::CheckConfig cfg;
    auto crane = normal::crane_model();
    Workspace ws(crane, cfg);
    auto seq = sfe::drift_sequence(ws);
    auto l2 = subdist::c_field_system(ws, Distribution{}, ws.inputs(), seq.D.at(1), ws.drift());
    double worst = 0.0;
    for (std::size_t k = 0; k < ws.num_points(); ++k) {
        auto res = subdist::c_field_residuals(ws, l2, crane.ansatz, k);
        if (!res) {
            r.require(false, "residuals not evaluable at point " + std::to_string(k));
            continue;
        }
        worst = std::max(worst, res->cwiseAbs().maxCoeff());
    }
    r.require(worst <= 1e-9, "ansatz residual " + fmt(worst));

    std::mt19937_64 rng(17);
    std::normal_distribution<double> g(0, 1);
    double weakest = 1e300;
    for (int t = 0; t < 5; ++t) {
        subdist::Matrix alpha(3, 2);
        for (Eigen::Index i = 0; i < 3; ++i)
            for (Eigen::Index j = 0; j < 2; ++j) alpha(i, j) = g(rng);
        double v = 0.0;
        for (std::size_t k = 0; k < ws.num_points(); ++k) v = std::max(v, subdist::c_field_residuals(ws, l2, alpha, k)->cwiseAbs().maxCoeff());
        weakest = std::min(weakest, v);
    }
    r.require(weakest > 1e-3, "random alpha residual only " + fmt(weakest));
    if (r.pass) r.detail = "ansatz residual " + fmt(worst) + ", smallest random-alpha violation " + fmt(weakest);
    return r;
}

Result flat_output()
{
    Result r;
    auto crane = model::load_model(source("models/crane.model"));
    auto phi = model::load_expression_list(crane, source("models/load_pos.txt"));
    auto opts = options(25, 1e-9);
    auto res = sfe::verify_flat_output(crane, phi, sfe::Form::TF1, opts);
    r.require(res.target == "F0", "target " + res.target);
    r.require(res.check.ok && res.check.residual <= 1e-8, "load position residual " + fmt(res.check.residual));

    auto &dag = *crane.dag;
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> c(-1, 1);
    double worst = 0.0;
    for (int t = 0; t < 5; ++t) {
        Eigen::Matrix3d a = Eigen::Matrix3d::Identity() * 2 + Eigen::Matrix3d::NullaryExpr([&] { return c(rng) * 0.5; });
        std::vector<expr::Expr> psi;
        for (int i = 0; i < 3; ++i) {
            expr::Expr e = dag.constant(0.1 * c(rng)) * expr::sin(phi[static_cast<std::size_t>((i + 1) % 3)]);
            for (int j = 0; j < 3; ++j) e = e + dag.constant(a(i, j)) * phi[static_cast<std::size_t>(j)];
            psi.push_back(e);
        }
        auto rr = sfe::verify_flat_output(crane, psi, sfe::Form::TF1, opts);
        r.require(rr.check.ok, "recombination " + std::to_string(t) + " rejected");
        worst = std::max(worst, rr.check.residual);
    }
    if (r.pass) r.detail = "load position residual " + fmt(res.check.residual) + ", 5 recombinations worst " + fmt(worst);
    return r;
}

// Index sets in the order they are cycled through; k_xi is compared as a
// sorted multiset because the chains of a triangular form can be relabeled.
const std::vector<StructureIndices> &tf_sets(int s)
{
    static const std::vector<StructureIndices> tf0{{2, 0, 1, 2, {1, 1, 1}}, {2, 0, 2, 2, {0, 1, 0}}, {2, 0, 1, 3, {1, 0, 2}},
                                                   {3, 0, 1, 2, {0, 1, 0, 1}}, {2, 0, 0, 2, {1, 1, 1}}};
    static const std::vector<StructureIndices> tf1{{2, 1, 1, 2, {1, 1, 1}}, {2, 1, 2, 2, {1, 0, 0}}, {2, 1, 1, 3, {0, 1, 1}},
                                                   {3, 1, 1, 2, {1, 0, 1, 0}}, {2, 1, 2, 3, {0, 0, 0}}};
    return s == 0 ? tf0 : tf1;
}

bool same_indices(StructureIndices a, StructureIndices b)
{
    std::sort(a.k_xi.rbegin(), a.k_xi.rend());
    std::sort(b.k_xi.rbegin(), b.k_xi.rend());
    return a == b;
}

Result oracle_round_trip()
{
    Result r;
    const int per_form = 20;
    int correct[2] = {0, 0}, cross[2] = {0, 0};
    int max_n = 0;
    auto opts = options(10, 1e-9);
    for (int s : {0, 1}) {
        const auto &sets = tf_sets(s);
        for (int i = 0; i < per_form; ++i) {
            const auto &idx = sets[static_cast<std::size_t>(i) % sets.size()];
            const std::uint64_t seed = 1000 * static_cast<std::uint64_t>(s + 1) + static_cast<std::uint64_t>(i);
            auto m = normal::scramble(normal::generate_tf(idx, seed, 1), seed + 7).first;
            max_n = std::max(max_n, static_cast<int>(m.n()));
            const std::string label = "s=" + std::to_string(s) + " " + idx.to_string() + " seed " + std::to_string(seed);
            auto own = s == 0 ? sfe::check_tf0(m, opts) : sfe::check_tf1(m, opts);
            const bool ok = own.verdict() == (s == 0 ? "TF0" : "TF1") && same_indices(own.indices, idx);
            r.require(ok, label + ": " + own.verdict() + " " + own.indices.to_string());
            correct[s] += ok;
            auto other = s == 0 ? sfe::check_tf1(m, opts) : sfe::check_tf0(m, opts);
            const bool c2 = other.verdict() == "Fail(2)";
            r.require(c2, label + " under the other form: " + other.verdict());
            cross[s] += c2;
        }
    }
    r.require(max_n <= 25, "instance with n = " + std::to_string(max_n));
    std::string summary = "TF0 " + std::to_string(correct[0]) + "/" + std::to_string(per_form) + ", TF1 " + std::to_string(correct[1]) +
                          "/" + std::to_string(per_form) + ", cross-form Fail(2) " + std::to_string(cross[0] + cross[1]) + "/" +
                          std::to_string(2 * per_form) + ", max n " + std::to_string(max_n);
    r.detail = r.pass ? summary : summary + "; " + r.detail;
    return r;
}

Result geometry_suite()
{
    Result r;
    // Bracket identities on random polynomial fields.
    {
        auto dag = std::make_shared<expr::ExprDag>();
        std::vector<expr::Expr> vars;
        std::vector<expr::SymbolId> ids;
        for (const char *s : {"x1", "x2", "x3", "x4"}) {
            vars.push_back(dag->symbol(s));
            ids.push_back(dag->symbol_id(vars.back()));
        }
        std::mt19937_64 rng(2024);
        double anti = 0.0, jacobi = 0.0;
        for (int t = 0; t < 100; ++t) {
            auto u = oracle::random_field(*dag, vars, rng);
            auto v = oracle::random_field(*dag, vars, rng);
            auto w = oracle::random_field(*dag, vars, rng);
            auto uv = geom::lie_bracket(*dag, ids, u, v);
            auto vu = geom::lie_bracket(*dag, ids, v, u);
            auto j1 = geom::lie_bracket(*dag, ids, u, geom::lie_bracket(*dag, ids, v, w));
            auto j2 = geom::lie_bracket(*dag, ids, v, geom::lie_bracket(*dag, ids, w, u));
            auto j3 = geom::lie_bracket(*dag, ids, w, uv);
            auto p = oracle::random_point(*dag, ids, rng);
            auto a = oracle::eval_field(uv, p), b = oracle::eval_field(vu, p);
            anti = std::max(anti, (a + b).norm() / (1 + a.norm()));
            auto x1 = oracle::eval_field(j1, p), x2 = oracle::eval_field(j2, p), x3 = oracle::eval_field(j3, p);
            jacobi = std::max(jacobi, (x1 + x2 + x3).norm() / (1 + x1.norm() + x2.norm() + x3.norm()));
        }
        r.require(anti <= 1e-9, "antisymmetry " + fmt(anti));
        r.require(jacobi <= 1e-9, "Jacobi " + fmt(jacobi));
    }
    linalg::CheckConfig cfg;
    cfg.n_points = 10;
    // Flags: ranks non-decreasing and the last member involutive.
    int flags = 0;
    for (int m : {2, 3})
        for (int k : {3, 4}) {
            auto model = normal::scramble(normal::contact_form(m, k, 7, true), 11).first;
            Workspace ws(model, cfg);
            auto flag = geom::derived_flag(ws, geom::span(ws, ws.inputs()));
            bool mono = true;
            for (std::size_t i = 1; i < flag.size(); ++i) mono = mono && flag[i].rank >= flag[i - 1].rank;
            r.require(mono && geom::is_involutive(ws, flag.back()), "flag of contact form m=" + std::to_string(m) + " k=" + std::to_string(k));
            ++flags;
        }
    // Cauchy characteristics on 20 generated distributions.
    int cauchy = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const int m = 2 + static_cast<int>(seed % 2);
        auto model = normal::scramble(normal::contact_form(m, 3, seed, true), 100 + seed).first;
        Workspace ws(model, cfg);
        auto flag = geom::derived_flag(ws, geom::span(ws, ws.inputs()));
        for (std::size_t i = 0; i < 2; ++i) {
            auto c = geom::cauchy_characteristic(ws, flag[i]);
            const bool ok = geom::contains(ws, flag[i], c.gens) && geom::is_involutive(ws, c);
            r.require(ok, "Cauchy characteristic, seed " + std::to_string(seed) + " member " + std::to_string(i));
            cauchy += ok;
        }
    }
    // Uniqueness of the corank-one involutive subdistribution.
    int unique = 0;
    for (int m : {2, 3})
        for (int k : {3, 4}) {
            auto model = normal::scramble(normal::contact_form(m, k, 3, true), 21).first;
            Workspace ws(model, cfg);
            auto flag = geom::derived_flag(ws, geom::span(ws, ws.inputs()));
            subdist::LConstruction lc(ws, flag.at(static_cast<std::size_t>(k - 2)));
            std::optional<Distribution> first;
            bool same = true;
            int admissible = 0;
            for (int i = 0; i < lc.r(); ++i)
                for (int j = i + 1; j < lc.r(); ++j) {
                    auto cand = lc.candidate(i, j);
                    if (!cand.corank_one || !cand.involutive) continue;
                    ++admissible;
                    if (!first) first = cand.L;
                    else same = same && geom::equal(ws, *first, cand.L);
                }
            const bool ok = same && admissible == m * (m - 1) / 2;
            r.require(ok, "L construction m=" + std::to_string(m) + " k=" + std::to_string(k));
            unique += ok;
        }
    if (r.pass)
        r.detail = "100 bracket triples, " + std::to_string(flags) + " flags, " + std::to_string(cauchy) + " Cauchy characteristics, " +
                   std::to_string(unique) + " L uniqueness cases";
    return r;
}

Result differentiation()
{
    Result r;
    expr::ExprDag dag;
    auto x = dag.symbol("x"), y = dag.symbol("y"), z = dag.symbol("z");
    std::vector<expr::SymbolId> ids{dag.symbol_id(x), dag.symbol_id(y), dag.symbol_id(z)};
    std::mt19937_64 rng(5);
    oracle::RandomExpr gen{dag, {x, y, z}, rng, true};
    double worst = 0.0;
    for (int t = 0; t < 500; ++t) {
        auto e = gen.make(3);
        auto p = oracle::random_point(dag, ids, rng);
        auto s = ids[static_cast<std::size_t>(t % 3)];
        const double d = expr::evaluate(dag.diff(e, s), p);
        worst = std::max(worst, std::abs(d - oracle::central_diff(e, p, s)) / (1 + std::abs(d)));
    }
    r.require(worst <= 1e-6, "worst relative error " + fmt(worst));
    r.require(dag.num_blocks() > 0, "no solve nodes were generated");
    if (r.pass) r.detail = "500 pairs, " + std::to_string(dag.num_blocks()) + " solve blocks, worst relative error " + fmt(worst);
    return r;
}

Result transformation()
{
    Result r;
    auto crane = model::load_model(source("models/crane.model"));
    StructureIndices idx{2, 1, 1, 2, {1, 1, 1}};
    auto tr = sfe::parse_transformation(crane, model::read_file(source("models/crane_tf1.txf")), idx);
    linalg::CheckConfig cfg;
    auto rep = sfe::verify_transformation(crane, tr, idx, cfg);
    r.require(rep.ok && rep.max_residual <= 1e-8, "max residual " + fmt(rep.max_residual));
    if (r.pass) r.detail = "max structural residual " + fmt(rep.max_residual) + " at " + std::to_string(cfg.n_points) + " points";
    return r;
}

} // namespace

int main()
{
    const std::vector<std::pair<const char *, std::function<Result()>>> criteria{
        {"AC1 crane regression", crane_regression}, {"AC2 c-field ansatz", ansatz_residuals},
        {"AC3 flat output", flat_output},           {"AC4 oracle round trip", oracle_round_trip},
        {"AC5 geometry invariants", geometry_suite}, {"AC6 differentiation", differentiation},
        {"AC7 crane transformation", transformation}};
    int failed = 0;
    for (const auto &[name, fn] : criteria) {
        Result res;
        try {
            res = fn();
        } catch (const std::exception &e) {
            res.pass = false;
            res.detail = std::string("exception: ") + e.what();
        }
        failed += !res.pass;
        std::printf("%s: %s  %s\n", name, res.pass ? "PASS" : "FAIL", res.detail.c_str());
        std::fflush(stdout);
    }
    return failed;
}
