#pragma once

// Independent numeric references for the unit tests: finite differences of
// plain evaluations only, no symbolic differentiation.

#include <flatcheck/expr.hpp>
#include <flatcheck/geom.hpp>
#include <flatcheck/model.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <memory>
#include <random>
#include <vector>

namespace oracle {

using flatcheck::expr::Expr;
using flatcheck::expr::Point;
using flatcheck::expr::SymbolId;

inline double central_diff(Expr e, const Point &p, SymbolId s, double h = 1e-5)
{
    Point a = p, b = p;
    a[s] += h;
    b[s] -= h;
    return (flatcheck::expr::evaluate(e, a) - flatcheck::expr::evaluate(e, b)) / (2 * h);
}

inline Eigen::VectorXd eval_field(const std::vector<Expr> &v, const Point &p)
{
    Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Eigen::Index>(i)) = flatcheck::expr::evaluate(v[i], p);
    return out;
}

// d v / d x by central differences.
inline Eigen::MatrixXd fd_jacobian(const std::vector<Expr> &v, const Point &p, const std::vector<SymbolId> &x, double h = 1e-5)
{
    Eigen::MatrixXd J(static_cast<Eigen::Index>(v.size()), static_cast<Eigen::Index>(x.size()));
    for (std::size_t j = 0; j < x.size(); ++j) {
        Point a = p, b = p;
        a[x[j]] += h;
        b[x[j]] -= h;
        J.col(static_cast<Eigen::Index>(j)) = (eval_field(v, a) - eval_field(v, b)) / (2 * h);
    }
    return J;
}

// [v, w] = Dw v - Dv w.
inline Eigen::VectorXd fd_bracket(const std::vector<Expr> &v, const std::vector<Expr> &w, const Point &p,
                                  const std::vector<SymbolId> &x)
{
    return fd_jacobian(w, p, x) * eval_field(v, p) - fd_jacobian(v, p, x) * eval_field(w, p);
}

// Random polynomial of total degree <= deg with coefficients in [-1, 1].
inline Expr random_poly(flatcheck::expr::ExprDag &dag, const std::vector<Expr> &vars, int deg, int terms, std::mt19937_64 &rng)
{
    std::uniform_real_distribution<double> coef(-1.0, 1.0);
    std::uniform_int_distribution<int> pick(0, static_cast<int>(vars.size()) - 1);
    std::uniform_int_distribution<int> degree(0, deg);
    std::vector<Expr> out;
    for (int t = 0; t < terms; ++t) {
        Expr mono = dag.constant(coef(rng));
        for (int d = degree(rng); d > 0; --d) mono = mono * vars[static_cast<std::size_t>(pick(rng))];
        out.push_back(mono);
    }
    return dag.sum(out);
}

inline std::vector<Expr> random_field(flatcheck::expr::ExprDag &dag, const std::vector<Expr> &vars, std::mt19937_64 &rng)
{
    std::vector<Expr> v;
    for (std::size_t i = 0; i < vars.size(); ++i) v.push_back(random_poly(dag, vars, 3, 4, rng));
    return v;
}

inline Point random_point(const flatcheck::expr::ExprDag &dag, const std::vector<SymbolId> &x, std::mt19937_64 &rng)
{
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Point p(std::vector<double>(dag.num_symbols(), 0.0));
    for (auto s : x) p[s] = u(rng);
    return p;
}

inline int numeric_rank(const Eigen::MatrixXd &a, double tol = 1e-8)
{
    if (a.cols() == 0 || a.rows() == 0) return 0;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
    const auto &sv = svd.singularValues();
    const double floor = std::max(tol * sv(0), 1e-8);
    int r = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i)
        if (sv(i) > floor) ++r;
    return r;
}


// Driftless model whose input fields are the given generators.
inline flatcheck::model::SystemModel field_model(std::shared_ptr<flatcheck::expr::ExprDag> dag, std::vector<std::string> states,
                                                 std::vector<std::vector<Expr>> fields)
{
    flatcheck::model::SystemModel m;
    m.dag = std::move(dag);
    m.name = "fields";
    m.states = std::move(states);
    m.domain.assign(m.states.size(), {});
    m.drift.assign(m.states.size(), m.dag->zero());
    m.inputs = std::move(fields);
    return m;
}

// Dimension of {l : sum_j l_j [w_j, w_k] in span W for all k} at a point,
// with W independent and brackets by finite differences.
inline int cauchy_rank(const std::vector<std::vector<Expr>> &w, const Point &p, const std::vector<SymbolId> &x)
{
    const auto d = static_cast<Eigen::Index>(w.size());
    const auto n = static_cast<Eigen::Index>(x.size());
    Eigen::MatrixXd W(n, d);
    for (Eigen::Index j = 0; j < d; ++j) W.col(j) = eval_field(w[static_cast<std::size_t>(j)], p);
    Eigen::MatrixXd P = Eigen::MatrixXd::Identity(n, n) - W * W.completeOrthogonalDecomposition().pseudoInverse();
    Eigen::MatrixXd sys(n * d, d);
    for (Eigen::Index k = 0; k < d; ++k)
        for (Eigen::Index j = 0; j < d; ++j)
            sys.block(k * n, j, n, 1) = P * fd_bracket(w[static_cast<std::size_t>(j)], w[static_cast<std::size_t>(k)], p, x);
    return static_cast<int>(d) - numeric_rank(sys, 1e-6);
}

// Random composition over three symbols. Denominators are kept away from zero
// and tan arguments inside (-1, 1).
struct RandomExpr {
    flatcheck::expr::ExprDag &dag;
    std::vector<Expr> vars;
    std::mt19937_64 &rng;
    bool with_solve;

    Expr leaf()
    {
        std::uniform_int_distribution<int> pick(0, static_cast<int>(vars.size()));
        int i = pick(rng);
        if (i == static_cast<int>(vars.size())) return dag.constant(std::uniform_real_distribution<double>(-2, 2)(rng));
        return vars[static_cast<std::size_t>(i)];
    }

    Expr positive(Expr e) { return 1.5 + flatcheck::expr::pow(e, 2); }

    Expr make(int depth)
    {
        if (depth == 0) return leaf();
        std::uniform_int_distribution<int> op(0, with_solve ? 9 : 8);
        switch (op(rng)) {
        case 0: return make(depth - 1) + make(depth - 1);
        case 1: return make(depth - 1) - make(depth - 1);
        case 2:
        case 3: return make(depth - 1) * make(depth - 1);
        case 4: return make(depth - 1) / positive(make(depth - 1));
        case 5: return sin(make(depth - 1));
        case 6: return cos(make(depth - 1));
        case 7: return tan(0.5 * sin(make(depth - 1)));
        case 8: {
            std::uniform_int_distribution<int> k(-2, 3);
            int e = k(rng);
            return e < 0 ? pow(positive(make(depth - 1)), e) : pow(make(depth - 1), e);
        }
        default: {
            // Diagonally dominant 2x2 system.
            Expr a = make(depth - 1), b = make(depth - 1);
            std::vector<Expr> m{3.0 + pow(a, 2), sin(b), cos(a), 3.0 + pow(b, 2)};
            std::vector<Expr> rhs{make(depth - 1), a * b};
            auto s = dag.solve(m, rhs);
            return s[std::uniform_int_distribution<int>(0, 1)(rng) ? 1u : 0u];
        }
        }
    }
};

} // namespace oracle
