#include <flatcheck/normalforms.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <random>
#include <unordered_map>

namespace flatcheck::normal {

using expr::ExprDag;
using expr::SymbolId;

namespace {

// Coefficients are multiples of 1/8 so generated models print exactly.
Expr random_coefficient(ExprDag &dag, std::mt19937_64 &rng, double scale)
{
    std::uniform_int_distribution<int> d(1, 8);
    std::bernoulli_distribution sign(0.5);
    int k = d(rng) * (sign(rng) ? -1 : 1);
    Expr c = dag.constant(*expr::Rational::make(k, 8));
    return scale == 1.0 ? c : dag.mul(dag.constant(scale), c);
}

Expr random_poly(ExprDag &dag, std::span<const Expr> vars, int terms, int max_degree, double scale, std::mt19937_64 &rng)
{
    if (vars.empty() || terms <= 0 || max_degree <= 0 || scale == 0.0) return dag.zero();
    std::uniform_int_distribution<std::size_t> pick(0, vars.size() - 1);
    std::uniform_int_distribution<int> deg(1, max_degree);
    std::vector<Expr> out;
    for (int t = 0; t < terms; ++t) {
        Expr mono = random_coefficient(dag, rng, scale);
        int d = deg(rng);
        for (int i = 0; i < d; ++i) mono = dag.mul(mono, vars[pick(rng)]);
        out.push_back(mono);
    }
    return dag.sum(out);
}

struct Builder {
    std::shared_ptr<ExprDag> dag = std::make_shared<ExprDag>();
    SystemModel model;
    std::unordered_map<std::string, std::size_t> index;

    explicit Builder(std::vector<std::string> names, std::size_t inputs, std::string name)
    {
        model.dag = dag;
        model.name = std::move(name);
        model.states = std::move(names);
        for (std::size_t i = 0; i < model.states.size(); ++i) {
            dag->symbol(model.states[i]);
            index[model.states[i]] = i;
        }
        model.domain.assign(model.states.size(), model::Interval{});
        model.drift.assign(model.states.size(), dag->zero());
        model.inputs.assign(inputs, std::vector<Expr>(model.states.size(), dag->zero()));
    }

    Expr s(const std::string &name) { return dag->symbol(name); }
    std::size_t row(const std::string &name) const { return index.at(name); }
};

std::string nm(const char *base, int level, int chain) { return std::string(base) + std::to_string(level) + "_" + std::to_string(chain); }

} // namespace

SystemModel generate_tf(const StructureIndices &idx, std::uint64_t seed, int drift_complexity)
{
    idx.validate();
    if (drift_complexity < 0) throw Error(ErrorKind::BadIndices, "drift complexity must be non-negative");
    const int m = idx.m;
    const int kchi = idx.k_chi;
    const int len0 = idx.k_zeta - idx.s;
    Builder b(tf_state_names(idx), static_cast<std::size_t>(m + 1),
              "tf" + std::to_string(idx.s) + "_" + std::to_string(seed));
    ExprDag &dag = *b.dag;
    std::mt19937_64 rng(seed);
    const int terms = 2 * drift_complexity;
    const int degree = drift_complexity == 0 ? 0 : drift_complexity + 1;

    std::vector<Expr> xi_all;
    for (int j = 0; j <= m; ++j)
        for (int l = 1; l <= idx.k_xi[static_cast<std::size_t>(j)]; ++l) xi_all.push_back(b.s(nm("xi", l, j)));

    // Upper chains.
    for (int j = 0; j <= m; ++j) {
        const int kx = idx.k_xi[static_cast<std::size_t>(j)];
        for (int l = 1; l <= kx; ++l) {
            Expr next = l < kx ? b.s(nm("xi", l + 1, j)) : (j == 0 ? b.s("chi0") : b.s(nm("chi", 1, j)));
            b.model.drift[b.row(nm("xi", l, j))] = next;
        }
    }
    // Contact block: zeta^1_0 is a state when the distinguished chain is
    // nonempty, otherwise w^0 acts directly.
    const bool z0_state = len0 > 0;
    const Expr z0 = z0_state ? b.s(nm("zeta", 1, 0)) : dag.one();
    auto put = [&](std::size_t row, Expr coeff) {
        if (z0_state) b.model.drift[row] = dag.add(b.model.drift[row], dag.mul(coeff, z0));
        else b.model.inputs[0][row] = dag.add(b.model.inputs[0][row], coeff);
    };
    put(b.row("chi0"), dag.one());
    for (int i = 1; i <= kchi; ++i)
        for (int j = 1; j <= m; ++j) {
            const std::size_t row = b.row(nm("chi", i, j));
            if (i < kchi) {
                // a^i_j(xi, chi^0, chi levels 1..i+1)
                std::vector<Expr> args = xi_all;
                args.push_back(b.s("chi0"));
                for (int l = 1; l <= i + 1; ++l)
                    for (int c = 1; c <= m; ++c) args.push_back(b.s(nm("chi", l, c)));
                b.model.drift[row] = random_poly(dag, args, terms, degree, 1.0, rng);
                put(row, b.s(nm("chi", i + 1, j)));
            } else {
                std::vector<Expr> args = xi_all;
                args.push_back(b.s("chi0"));
                for (int l = 1; l <= kchi; ++l)
                    for (int c = 1; c <= m; ++c) args.push_back(b.s(nm("chi", l, c)));
                if (idx.k_zeta > 0) b.model.drift[row] = b.s(nm("zeta", 1, j));
                else b.model.inputs[static_cast<std::size_t>(j)][row] = dag.one();
                Expr bj = random_poly(dag, args, terms, degree, 1.0, rng);
                if (!bj.is_zero()) put(row, bj);
            }
        }
    // Lower chains.
    for (int j = 0; j <= m; ++j) {
        const int len = j == 0 ? len0 : idx.k_zeta;
        for (int l = 1; l <= len; ++l) {
            const std::size_t row = b.row(nm("zeta", l, j));
            if (l < len) b.model.drift[row] = b.s(nm("zeta", l + 1, j));
            else b.model.inputs[static_cast<std::size_t>(j)][row] = dag.one();
        }
    }
    if (idx.s == 1) {
        // c_i = v_i in these coordinates.
        for (int i = 1; i <= m; ++i) {
            std::vector<Expr> col(static_cast<std::size_t>(m + 1), dag.zero());
            col[static_cast<std::size_t>(i)] = dag.one();
            b.model.ansatz.push_back(col);
        }
    }
    return b.model;
}

std::pair<SystemModel, Scramble> scramble(const SystemModel &in, std::uint64_t seed, double coupling)
{
    const std::size_t n = in.n();
    const std::size_t mp1 = in.num_inputs();
    ExprDag &dag = *in.dag;
    std::mt19937_64 rng(seed);
    Scramble sc;
    sc.seed = seed;

    SystemModel out;
    out.dag = in.dag;
    out.name = in.name + "_scrambled";
    out.params = in.params;
    std::string prefix = "x";
    for (const char *cand : {"x", "y", "w", "s"}) {
        prefix = cand;
        bool clash = false;
        for (std::size_t i = 0; i < n && !clash; ++i) {
            std::string nmx = prefix + std::to_string(i + 1);
            clash = std::find(in.states.begin(), in.states.end(), nmx) != in.states.end() || in.param(nmx).has_value();
        }
        if (!clash) break;
    }
    for (std::size_t i = 0; i < n; ++i) out.states.push_back(prefix + std::to_string(i + 1));
    out.domain.assign(n, model::Interval{});
    const auto z = in.state_exprs();
    const auto x = out.state_exprs();
    const auto zid = in.state_ids();

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);

    // z_{perm[i]} = x_i + p_i(x_0..x_{i-1})
    std::vector<Expr> p(n, dag.zero());
    for (std::size_t i = 1; i < n; ++i) {
        std::span<const Expr> prev(x.data(), i);
        p[i] = random_poly(dag, prev, 2, 2, coupling, rng);
    }
    sc.diffeo.assign(n, dag.zero());
    for (std::size_t i = 0; i < n; ++i) sc.diffeo[perm[i]] = dag.add(x[i], p[i]);
    // x_i = z_{perm[i]} - p_i(x_<i), with x_<i already expressed in z.
    sc.inverse.assign(n, dag.zero());
    std::unordered_map<SymbolId, Expr> x_in_z;
    for (std::size_t i = 0; i < n; ++i) {
        Expr pi = dag.substitute(p[i], x_in_z);
        sc.inverse[i] = dag.sub(z[perm[i]], pi);
        x_in_z[dag.symbol_id(x[i])] = sc.inverse[i];
    }
    std::unordered_map<SymbolId, Expr> z_of_x;
    for (std::size_t r = 0; r < n; ++r) z_of_x[zid[r]] = sc.diffeo[r];

    // Feedback in z coordinates: w = gamma + M u with M = L U unit triangular.
    std::vector<Expr> gamma(mp1);
    for (auto &g : gamma) g = random_poly(dag, z, 2, 2, coupling, rng);
    auto at = [mp1](std::size_t i, std::size_t j) { return i * mp1 + j; };
    std::vector<Expr> lo(mp1 * mp1, dag.zero()), up(mp1 * mp1, dag.zero());
    for (std::size_t i = 0; i < mp1; ++i) {
        lo[at(i, i)] = up[at(i, i)] = dag.one();
        for (std::size_t j = 0; j < i; ++j) {
            lo[at(i, j)] = random_poly(dag, z, 1, 1, coupling, rng);
            up[at(j, i)] = random_poly(dag, z, 1, 1, coupling, rng);
        }
    }
    auto matmul = [&](const std::vector<Expr> &a, const std::vector<Expr> &bm) {
        std::vector<Expr> c(mp1 * mp1);
        for (std::size_t i = 0; i < mp1; ++i)
            for (std::size_t j = 0; j < mp1; ++j) {
                std::vector<Expr> terms;
                for (std::size_t k = 0; k < mp1; ++k) terms.push_back(dag.mul(a[at(i, k)], bm[at(k, j)]));
                c[at(i, j)] = dag.sum(terms);
            }
        return c;
    };
    const auto mmat = matmul(lo, up);
    // Inverses of unit triangular factors by substitution.
    std::vector<Expr> lo_inv(mp1 * mp1, dag.zero()), up_inv(mp1 * mp1, dag.zero());
    for (std::size_t j = 0; j < mp1; ++j) {
        lo_inv[at(j, j)] = up_inv[at(j, j)] = dag.one();
        for (std::size_t i = j + 1; i < mp1; ++i) {
            std::vector<Expr> terms;
            for (std::size_t k = j; k < i; ++k) terms.push_back(dag.mul(lo[at(i, k)], lo_inv[at(k, j)]));
            lo_inv[at(i, j)] = dag.neg(dag.sum(terms));
        }
    }
    for (std::size_t i = mp1; i-- > 0;)
        for (std::size_t j = i + 1; j < mp1; ++j) {
            std::vector<Expr> terms;
            for (std::size_t k = i + 1; k <= j; ++k) terms.push_back(dag.mul(up[at(i, k)], up_inv[at(k, j)]));
            up_inv[at(i, j)] = dag.neg(dag.sum(terms));
        }
    const auto minv = matmul(up_inv, lo_inv);

    // Fields in z after feedback.
    std::vector<Expr> fz(n);
    std::vector<std::vector<Expr>> gz(mp1, std::vector<Expr>(n));
    for (std::size_t r = 0; r < n; ++r) {
        std::vector<Expr> terms{in.drift[r]};
        for (std::size_t j = 0; j < mp1; ++j) terms.push_back(dag.mul(in.inputs[j][r], gamma[j]));
        fz[r] = dag.sum(terms);
        for (std::size_t k = 0; k < mp1; ++k) {
            std::vector<Expr> t2;
            for (std::size_t j = 0; j < mp1; ++j) t2.push_back(dag.mul(in.inputs[j][r], mmat[at(j, k)]));
            gz[k][r] = dag.sum(t2);
        }
    }
    // Push forward: (dPhi) y = v(Phi(x)). Row perm[i] of dPhi is e_i + grad p_i
    // with p_i depending on x_<i only, so y follows by forward substitution.
    std::vector<std::vector<Expr>> dp(n);
    for (std::size_t i = 0; i < n; ++i) {
        dp[i].resize(i);
        for (std::size_t j = 0; j < i; ++j) dp[i][j] = dag.may_depend(p[i], dag.symbol_id(x[j])) ? dag.diff(p[i], x[j]) : dag.zero();
    }
    auto push = [&](const std::vector<Expr> &v) {
        std::vector<Expr> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<Expr> terms{dag.substitute(v[perm[i]], z_of_x)};
            for (std::size_t j = 0; j < i; ++j)
                if (!dp[i][j].is_zero() && !y[j].is_zero()) terms.push_back(dag.neg(dag.mul(dp[i][j], y[j])));
            y[i] = dag.sum(terms);
        }
        return y;
    };
    out.drift = push(fz);
    for (std::size_t k = 0; k < mp1; ++k) out.inputs.push_back(push(gz[k]));

    // c_i = sum_k a_ik w-fields = sum_l (sum_k Minv_lk a_ik) u-fields
    for (const auto &col : in.ansatz) {
        std::vector<Expr> nc(mp1);
        for (std::size_t l = 0; l < mp1; ++l) {
            std::vector<Expr> terms;
            for (std::size_t k = 0; k < mp1; ++k) terms.push_back(dag.mul(minv[at(l, k)], col[k]));
            nc[l] = dag.substitute(dag.sum(terms), z_of_x);
        }
        out.ansatz.push_back(std::move(nc));
    }
    for (auto &g : gamma) sc.alpha.push_back(dag.substitute(g, z_of_x));
    for (auto &e : mmat) sc.beta.push_back(dag.substitute(e, z_of_x));
    return {std::move(out), std::move(sc)};
}

SystemModel contact_form(int m, int k, std::uint64_t seed, bool with_drift)
{
    if (m < 1 || k < 2) throw Error(ErrorKind::BadIndices, "contact form needs m >= 1 and k >= 2");
    std::vector<std::string> names{"z0"};
    for (int i = 1; i <= k; ++i)
        for (int j = 1; j <= m; ++j) names.push_back(nm("z", i, j));
    Builder b(names, static_cast<std::size_t>(m + 1), "contact_m" + std::to_string(m) + "_k" + std::to_string(k));
    ExprDag &dag = *b.dag;
    std::mt19937_64 rng(seed);
    b.model.inputs[0][0] = dag.one();
    for (int i = 1; i <= k; ++i)
        for (int j = 1; j <= m; ++j) {
            const std::size_t row = b.row(nm("z", i, j));
            if (i < k) {
                b.model.inputs[0][row] = b.s(nm("z", i + 1, j));
                if (with_drift) {
                    std::vector<Expr> args{b.s("z0")};
                    for (int l = 1; l <= std::min(i + 1, k); ++l)
                        for (int c = 1; c <= m; ++c) args.push_back(b.s(nm("z", l, c)));
                    b.model.drift[row] = random_poly(dag, args, 2, 2, 1.0, rng);
                }
            } else {
                b.model.inputs[static_cast<std::size_t>(j)][row] = dag.one();
            }
        }
    return b.model;
}

SystemModel chained_form(std::span<const int> k)
{
    if (k.empty()) throw Error(ErrorKind::BadIndices, "chained form needs at least one chain");
    const int m = static_cast<int>(k.size());
    std::vector<std::string> names{"z0"};
    for (int j = 1; j <= m; ++j) {
        if (k[static_cast<std::size_t>(j - 1)] < 1) throw Error(ErrorKind::BadIndices, "chain lengths must be positive");
        for (int i = 1; i <= k[static_cast<std::size_t>(j - 1)]; ++i) names.push_back(nm("z", i, j));
    }
    Builder b(names, static_cast<std::size_t>(m + 1), "chained");
    b.model.inputs[0][0] = b.dag->one();
    for (int j = 1; j <= m; ++j) {
        const int kj = k[static_cast<std::size_t>(j - 1)];
        for (int i = 1; i <= kj; ++i) {
            const std::size_t row = b.row(nm("z", i, j));
            if (i < kj) b.model.inputs[0][row] = b.s(nm("z", i + 1, j));
            else b.model.inputs[static_cast<std::size_t>(j)][row] = b.dag->one();
        }
    }
    return b.model;
}

namespace {

struct CraneSymbols {
    Expr q[5], v[5], mL, mT, mB, J, R, g;

    explicit CraneSymbols(ExprDag &dag)
    {
        for (int i = 0; i < 5; ++i) {
            q[i] = dag.symbol("q" + std::to_string(i + 1));
            v[i] = dag.symbol("v" + std::to_string(i + 1));
        }
        mL = dag.symbol("mL");
        mT = dag.symbol("mT");
        mB = dag.symbol("mB");
        J = dag.symbol("J");
        R = dag.symbol("R");
        g = dag.symbol("g");
    }
};

std::vector<Expr> load_position(ExprDag &dag, const CraneSymbols &c)
{
    using expr::cos;
    using expr::sin;
    Expr xl = c.q[0] + c.R * c.q[2] * sin(c.q[4]);
    Expr yl = c.q[1] + c.R * c.q[2] * sin(c.q[3]) * cos(c.q[4]);
    Expr zl = c.R * c.q[2] * cos(c.q[3]) * cos(c.q[4]);
    (void)dag;
    return {xl, yl, zl};
}

} // namespace

SystemModel crane_model()
{
    auto dag = std::make_shared<ExprDag>();
    CraneSymbols c(*dag);
    using expr::cos;
    using expr::sin;
    auto pos = load_position(*dag, c);
    std::vector<Expr> qs(c.q, c.q + 5);
    auto vel = [&](Expr e) {
        std::vector<Expr> terms;
        for (int i = 0; i < 5; ++i)
            if (dag->may_depend(e, dag->symbol_id(c.q[i]))) terms.push_back(dag->mul(dag->diff(e, c.q[i]), c.v[i]));
        return dag->sum(terms);
    };
    Expr xd = vel(pos[0]), yd = vel(pos[1]), zd = vel(pos[2]);
    Expr half = dag->constant(*expr::Rational::make(1, 2));
    Expr t = half * c.mL * (xd * xd + yd * yd + zd * zd) + half * c.J * c.v[2] * c.v[2] +
             half * (c.mB + c.mT) * c.v[1] * c.v[1] + half * c.mT * c.v[0] * c.v[0];
    Expr pot = -(c.mL * c.g * pos[2]);

    model::LagrangianSpec spec;
    for (int i = 0; i < 5; ++i) {
        spec.q.push_back("q" + std::to_string(i + 1));
        spec.v.push_back("v" + std::to_string(i + 1));
    }
    spec.T = t;
    spec.V = pot;
    // Forces on the trolley coordinates and the drum torque.
    for (int j = 0; j < 3; ++j) {
        std::vector<Expr> col(5, dag->zero());
        col[static_cast<std::size_t>(j)] = dag->one();
        spec.force.push_back(col);
    }
    std::vector<std::pair<std::string, double>> params{{"mL", 1.0}, {"mT", 2.0}, {"mB", 3.0}, {"J", 0.1}, {"R", 0.1}, {"g", 9.81}};
    std::vector<model::Interval> domain(10, model::Interval{});
    domain[2] = {0.5, 2.0};
    domain[3] = {-0.4, 0.4};
    domain[4] = {-0.4, 0.4};
    SystemModel out = model::euler_lagrange(dag, spec, "crane", params, domain);

    Expr c4 = cos(c.q[3]), c5 = cos(c.q[4]);
    Expr two = dag->integer(2);
    out.ansatz = {
        {-(c.R * c.q[2] * c4 * c5 * c.mT), dag->zero(), half * c.J * c.q[2] * sin(two * c.q[4]) * c4},
        {dag->zero(), -((c.mB + c.mT) * c.R * c.q[2] * c5 * c4), half * c.J * c.q[2] * sin(two * c.q[3]) * c5 * c5},
    };
    return out;
}

std::vector<Expr> crane_load_position(const SystemModel &crane)
{
    CraneSymbols c(*crane.dag);
    return load_position(*crane.dag, c);
}

Trajectory integrate(const SystemModel &model, std::span<const Expr> inputs, std::span<const double> x0, double horizon,
                     double step)
{
    if (!(step > 0.0) || !(horizon >= 0.0)) throw Error(ErrorKind::InvalidConfig, "step must be positive and horizon non-negative");
    if (inputs.size() != model.num_inputs()) throw Error(ErrorKind::DimensionMismatch, "one input expression per input field is required");
    if (x0.size() != model.n()) throw Error(ErrorKind::DimensionMismatch, "initial state has wrong length");
    ExprDag &dag = *model.dag;
    const SymbolId tid = dag.symbol_id(dag.symbol("t"));
    const std::size_t n = model.n();
    // xdot = f + sum g_j u_j as one expression per row
    std::vector<Expr> rhs(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<Expr> terms{model.drift[i]};
        for (std::size_t j = 0; j < inputs.size(); ++j) terms.push_back(dag.mul(model.inputs[j][i], inputs[j]));
        rhs[i] = dag.sum(terms);
    }
    const auto ids = model.state_ids();
    auto eval = [&](double t, const std::vector<double> &x) {
        expr::Point p = model.base_point();
        p[tid] = t;
        for (std::size_t i = 0; i < n; ++i) p[ids[i]] = x[i];
        expr::Evaluator ev(dag, p);
        std::vector<double> out(n);
        try {
            for (std::size_t i = 0; i < n; ++i) out[i] = ev.value(rhs[i]);
        } catch (const EvalError &e) {
            throw Error(ErrorKind::NonFiniteState, std::string("right-hand side cannot be evaluated at t = ") + std::to_string(t) + ": " + e.what());
        }
        return out;
    };
    Trajectory traj;
    std::vector<double> x(x0.begin(), x0.end());
    const auto steps = static_cast<long>(std::llround(std::ceil(horizon / step - 1e-12)));
    traj.t.push_back(0.0);
    traj.x.push_back(x);
    std::vector<double> tmp(n);
    for (long k = 0; k < steps; ++k) {
        const double t = static_cast<double>(k) * step;
        const double h = std::min(step, horizon - t);
        auto k1 = eval(t, x);
        for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + 0.5 * h * k1[i];
        auto k2 = eval(t + 0.5 * h, tmp);
        for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + 0.5 * h * k2[i];
        auto k3 = eval(t + 0.5 * h, tmp);
        for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + h * k3[i];
        auto k4 = eval(t + h, tmp);
        for (std::size_t i = 0; i < n; ++i) {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            if (!std::isfinite(x[i])) throw Error(ErrorKind::NonFiniteState, "state became non-finite at t = " + std::to_string(t + h));
        }
        traj.t.push_back(t + h);
        traj.x.push_back(x);
    }
    return traj;
}

std::string to_csv(const SystemModel &model, const Trajectory &traj)
{
    std::string out = "t";
    for (const auto &s : model.states) out += "," + s;
    out += '\n';
    char buf[64];
    auto put = [&](double v) {
        auto res = std::to_chars(buf, buf + sizeof buf, v);
        out.append(buf, res.ptr);
    };
    for (std::size_t k = 0; k < traj.t.size(); ++k) {
        put(traj.t[k]);
        for (double v : traj.x[k]) {
            out += ',';
            put(v);
        }
        out += '\n';
    }
    return out;
}

} // namespace flatcheck::normal
