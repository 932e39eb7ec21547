#include <flatcheck/subdist.hpp>

#include <algorithm>
#include <cmath>
#include <random>

namespace flatcheck::subdist {

using expr::Expr;
using linalg::Vector;

LConstruction::LConstruction(Workspace &ws, const Distribution &d) : ws_(ws), d_(d)
{
    auto flag = geom::derived_flag(ws, d, 1);
    d1_ = flag.back();
    const int r = d1_.rank - d.rank;
    if (r < 2)
        throw Error(ErrorKind::HypothesisViolated,
                    "corank-one construction needs rank D^(1) - rank D >= 2, got " + std::to_string(r));
    ann_ = geom::symbolic_annihilator(ws, d);

    const std::size_t dd = d.gens.size();
    std::vector<FieldId> probe = d.gens;
    for (std::size_t a = 0; a < dd; ++a)
        for (std::size_t b = a + 1; b < dd; ++b) probe.push_back(ws.bracket(d.gens[a], d.gens[b]));
    const std::size_t ref = geom::reference_point(ws, probe);

    // Greedy choice of forms with independent restricted differentials at the
    // reference point.
    Matrix chosen_cols(static_cast<Eigen::Index>(dd * dd), 0);
    for (std::size_t t = 0; t < ann_.forms.size() && static_cast<int>(chosen_.size()) < r; ++t) {
        Vector om(static_cast<Eigen::Index>(ws.n()));
        bool ok = true;
        for (std::size_t i = 0; i < ws.n() && ok; ++i) {
            auto v = ws.value(ann_.forms[t][i], ref);
            if (!v) ok = false;
            else om(static_cast<Eigen::Index>(i)) = *v;
        }
        if (!ok) continue;
        Vector vec = Vector::Zero(static_cast<Eigen::Index>(dd * dd));
        for (std::size_t a = 0; a < dd; ++a)
            for (std::size_t b = a + 1; b < dd; ++b) {
                const Vector *br = ws.sample(ws.bracket(d.gens[a], d.gens[b]), ref);
                double val = om.dot(*br);
                vec(static_cast<Eigen::Index>(a * dd + b)) = val;
                vec(static_cast<Eigen::Index>(b * dd + a)) = -val;
            }
        if (vec.norm() == 0.0) continue;
        Matrix trial(chosen_cols.rows(), chosen_cols.cols() + 1);
        trial << chosen_cols, vec;
        if (linalg::rank_at(trial, ws.tol()) == trial.cols()) {
            chosen_cols = std::move(trial);
            chosen_.push_back(t);
        }
    }
    if (static_cast<int>(chosen_.size()) < r)
        throw Error(ErrorKind::PivotDegenerate, "could not choose annihilator forms spanning P modulo P^(1)");
    w_.resize(chosen_.size());
}

const Distribution &LConstruction::w(int i)
{
    auto &slot = w_[static_cast<std::size_t>(i)];
    if (slot) return *slot;
    auto &dag = ws_.dag();
    const geom::OneForm &omega = ann_.forms[chosen_[static_cast<std::size_t>(i)]];
    const std::size_t dd = d_.gens.size();
    // Rows k, columns j: omega([w_j, w_k]); v = sum lambda_j w_j lies in W_i iff
    // the row sums vanish for every k.
    std::vector<std::vector<Expr>> a(dd, std::vector<Expr>(dd, dag.zero()));
    for (std::size_t k = 0; k < dd; ++k)
        for (std::size_t j = 0; j < dd; ++j)
            if (j != k) a[k][j] = geom::pair(dag, omega, ws_.field(ws_.bracket(d_.gens[j], d_.gens[k])));
    auto kernel = geom::symbolic_kernel(ws_, a);
    std::vector<FieldId> cs;
    for (const auto &lam : kernel) cs.push_back(ws_.combine(lam, d_.gens));
    slot = cs.empty() ? Distribution{} : geom::span(ws_, cs);
    return *slot;
}

LConstruction::Candidate LConstruction::candidate(int i, int j)
{
    Candidate c;
    c.i = i;
    c.j = j;
    const Distribution &wi = w(i);
    const Distribution &wj = w(j);
    c.L = geom::sum(ws_, wi, wj);
    c.corank_one = c.L.rank == d_.rank - 1;
    c.involutive = c.corank_one && geom::is_involutive(ws_, c.L);
    return c;
}

LResult construct_L(Workspace &ws, const Distribution &d)
{
    LConstruction lc(ws, d);
    LResult out;
    out.r = lc.r();
    for (int i = 0; i < lc.r(); ++i)
        for (int j = i + 1; j < lc.r(); ++j) {
            auto c = lc.candidate(i, j);
            if (!c.corank_one) continue;
            out.i = i;
            out.j = j;
            // A corank-one pair that is not involutive rules out every
            // involutive corank-one subdistribution.
            if (c.involutive) out.L = std::move(c.L);
            return out;
        }
    return out;
}

// ---------------------------------------------------------------------------

CFieldSystem c_field_system(Workspace &ws, const Distribution &d0, std::span<const FieldId> v, const Distribution &d2, FieldId f)
{
    CFieldSystem l;
    l.d0 = d0;
    l.d2 = d2;
    l.f = f;
    l.v.assign(v.begin(), v.end());
    const int mp1 = static_cast<int>(v.size());
    l.d1 = geom::sum(ws, d0, v);
    if (l.d1.rank != d0.rank + mp1)
        throw Error(ErrorKind::HypothesisViolated, "v fields are not independent modulo D0");
    if (d2.rank != l.d1.rank + mp1) throw Error(ErrorKind::HypothesisViolated, "D2 does not have corank m+1 over D1");
    if (!geom::contains(ws, d2, l.d1.gens)) throw Error(ErrorKind::HypothesisViolated, "D1 is not contained in D2");
    if (!geom::is_involutive(ws, l.d1)) throw Error(ErrorKind::HypothesisViolated, "D1 is not involutive");
    if (geom::is_involutive(ws, d2)) throw Error(ErrorKind::HypothesisViolated, "D2 is involutive");
    std::vector<FieldId> fd0;
    for (auto g : d0.gens) fd0.push_back(ws.bracket(f, g));
    if (!geom::contains(ws, l.d1, fd0)) throw Error(ErrorKind::HypothesisViolated, "[f, D0] is not contained in D1");
    l.t.assign(static_cast<std::size_t>(mp1 * mp1), 0);
    for (int k = 0; k < mp1; ++k)
        for (int p = k; p < mp1; ++p) {
            FieldId id = ws.bracket(l.v[static_cast<std::size_t>(k)], ws.bracket(l.v[static_cast<std::size_t>(p)], f));
            l.t[static_cast<std::size_t>(k * mp1 + p)] = id;
            l.t[static_cast<std::size_t>(p * mp1 + k)] = id;
        }
    return l;
}

namespace {

// Numeric second brackets and the orthonormal complement of D2 at a point.
struct Sampled {
    std::vector<Vector> t; // (m+1)^2
    Matrix q;              // range of D2
    Matrix comp;           // complement of D2
};

std::optional<Sampled> sample_c_system(Workspace &ws, const CFieldSystem &l, std::size_t k)
{
    Sampled s;
    auto d2 = ws.samples(l.d2.gens, k);
    if (!d2) return std::nullopt;
    s.q = linalg::range_at(*d2, ws.tol());
    s.comp = linalg::nullspace_at(s.q.transpose(), ws.tol());
    for (auto id : l.t) {
        const Vector *v = ws.sample(id, k);
        if (!v) return std::nullopt;
        s.t.push_back(*v);
    }
    return s;
}

Matrix residual_matrix(const Sampled &s, const Matrix &alpha)
{
    const auto mp1 = alpha.rows();
    const auto m = alpha.cols();
    Matrix out(m, m);
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = i; j < m; ++j) {
            Vector r = Vector::Zero(s.t.front().size());
            for (Eigen::Index a = 0; a < mp1; ++a)
                for (Eigen::Index b = 0; b < mp1; ++b) r += alpha(a, i) * alpha(b, j) * s.t[static_cast<std::size_t>(a * mp1 + b)];
            Vector perp = r - s.q * (s.q.transpose() * r);
            out(i, j) = out(j, i) = perp.norm() / (1.0 + r.norm());
        }
    return out;
}

} // namespace

std::optional<Matrix> c_field_residuals(Workspace &ws, const CFieldSystem &l2, const Matrix &alpha, std::size_t k)
{
    const auto mp1 = static_cast<Eigen::Index>(l2.v.size());
    if (alpha.rows() != mp1 || alpha.cols() != mp1 - 1)
        throw Error(ErrorKind::DimensionMismatch, "coefficient matrix must be (m+1) x m");
    auto s = sample_c_system(ws, l2, k);
    if (!s) return std::nullopt;
    return residual_matrix(*s, alpha);
}

std::optional<Matrix> c_field_residuals(Workspace &ws, const CFieldSystem &l2, const std::vector<std::vector<Expr>> &ansatz,
                                       std::size_t k)
{
    const std::size_t mp1 = l2.v.size();
    if (ansatz.size() != mp1 - 1) throw Error(ErrorKind::DimensionMismatch, "ansatz must have m columns");
    Matrix alpha(static_cast<Eigen::Index>(mp1), static_cast<Eigen::Index>(mp1 - 1));
    for (std::size_t i = 0; i < ansatz.size(); ++i) {
        if (ansatz[i].size() != mp1) throw Error(ErrorKind::DimensionMismatch, "ansatz column must have m+1 entries");
        for (std::size_t kk = 0; kk < mp1; ++kk) {
            auto v = ws.value(ansatz[i][kk], k);
            if (!v) return std::nullopt;
            alpha(static_cast<Eigen::Index>(kk), static_cast<Eigen::Index>(i)) = *v;
        }
    }
    return c_field_residuals(ws, l2, alpha, k);
}

namespace {

Vector normal_of(const Matrix &alpha)
{
    Eigen::JacobiSVD<Matrix> svd(alpha.transpose(), Eigen::ComputeFullV);
    Vector nv = svd.matrixV().col(alpha.rows() - 1);
    Eigen::Index idx = 0;
    nv.cwiseAbs().maxCoeff(&idx);
    if (nv(idx) < 0) nv = -nv;
    return nv;
}

} // namespace

bool same_recombination(const Matrix &a, const Matrix &b, double tol)
{
    return (normal_of(a) - normal_of(b)).norm() <= tol;
}

PointwiseSolutions solve_c_pointwise(Workspace &ws, const CFieldSystem &l2, std::size_t k, int n_starts, std::uint64_t seed)
{
    PointwiseSolutions out;
    auto s = sample_c_system(ws, l2, k);
    if (!s) return out;
    const int mp1 = static_cast<int>(l2.v.size());
    const int m = mp1 - 1;
    // Projected brackets p[a][b] = N^T T_ab.
    std::vector<Vector> p;
    double scale = 0.0;
    for (const auto &t : s->t) {
        p.push_back(s->comp.transpose() * t);
        scale = std::max(scale, t.norm());
    }
    double pmax = 0.0;
    for (const auto &v : p) pmax = std::max(pmax, v.norm());
    if (pmax <= 1e-9 * (1.0 + scale)) {
        out.degenerate = true;
        return out;
    }
    const Eigen::Index nc = s->comp.cols();
    const int neq = m * (m + 1) / 2;
    auto P = [&](int a, int b) -> const Vector & { return p[static_cast<std::size_t>(a * mp1 + b)]; };

    std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ull * (k + 1)));
    std::uniform_real_distribution<double> unif(-2.0, 2.0);

    for (int free_row = 0; free_row < mp1; ++free_row) {
        auto build = [&](const Vector &x) {
            Matrix alpha = Matrix::Zero(mp1, m);
            int c = 0;
            for (int r = 0; r < mp1; ++r) {
                if (r == free_row) alpha.row(r) = x.transpose();
                else alpha(r, c++) = 1.0;
            }
            return alpha;
        };
        auto residual = [&](const Matrix &alpha, Vector &r, Matrix *jac) {
            r.setZero(neq * nc);
            if (jac) jac->setZero(neq * nc, m);
            int e = 0;
            for (int i = 0; i < m; ++i)
                for (int j = i; j < m; ++j, ++e) {
                    Vector acc = Vector::Zero(nc);
                    for (int a = 0; a < mp1; ++a)
                        for (int b = 0; b < mp1; ++b) acc += alpha(a, i) * alpha(b, j) * P(a, b);
                    r.segment(e * nc, nc) = acc;
                    if (!jac) continue;
                    // d alpha(free_row, c) / d x_c = 1
                    Vector di = Vector::Zero(nc), dj = Vector::Zero(nc);
                    for (int b = 0; b < mp1; ++b) di += alpha(b, j) * P(free_row, b);
                    for (int a = 0; a < mp1; ++a) dj += alpha(a, i) * P(a, free_row);
                    jac->block(e * nc, i, nc, 1) += di;
                    jac->block(e * nc, j, nc, 1) += dj;
                }
        };
        for (int start = 0; start < n_starts; ++start) {
            Vector x(m);
            for (int c = 0; c < m; ++c) x(c) = unif(rng);
            double lambda = 1e-3;
            Vector r;
            Matrix jac;
            Matrix alpha = build(x);
            residual(alpha, r, &jac);
            double cost = r.squaredNorm();
            bool converged = false;
            for (int it = 0; it < 200; ++it) {
                double tol = 1e-10 * std::max(scale, 1e-300) * (1.0 + x.squaredNorm());
                if (std::sqrt(cost) <= tol) {
                    converged = true;
                    break;
                }
                Matrix jtj = jac.transpose() * jac;
                Vector g = jac.transpose() * r;
                Matrix damped = jtj;
                damped.diagonal().array() += lambda * (1.0 + jtj.diagonal().array());
                Vector step = damped.ldlt().solve(-g);
                Vector xn = x + step;
                Matrix an = build(xn);
                Vector rn;
                residual(an, rn, nullptr);
                double cn = rn.squaredNorm();
                if (std::isfinite(cn) && cn < cost) {
                    x = xn;
                    alpha = an;
                    residual(alpha, r, &jac);
                    cost = cn;
                    lambda = std::max(lambda * 0.3, 1e-12);
                } else {
                    lambda *= 10.0;
                    if (lambda > 1e12) break;
                }
            }
            if (!converged) {
                double tol = 1e-10 * std::max(scale, 1e-300) * (1.0 + x.squaredNorm());
                converged = std::sqrt(cost) <= tol;
            }
            if (!converged) continue;
            bool dup = false;
            for (const auto &a : out.alphas)
                if (same_recombination(a, alpha)) dup = true;
            if (!dup) out.alphas.push_back(alpha);
        }
    }
    return out;
}

CFieldCheck verify_c_fields(Workspace &ws, std::span<const FieldId> c, FieldId f, const Distribution &d_k,
                            const Distribution &d_km1)
{
    CFieldCheck out;
    std::vector<FieldId> base = d_km1.gens;
    base.insert(base.end(), c.begin(), c.end());
    out.independent = geom::contains(ws, d_k, c) && geom::modal_rank(ws, base) == d_km1.rank + static_cast<int>(c.size());
    std::vector<FieldId> fc;
    for (auto ci : c) fc.push_back(ws.bracket(f, ci));
    out.e = geom::sum(ws, d_k, fc);
    if (!out.independent) return out;
    auto sub = geom::cauchy_pointwise(ws, out.e);
    out.cauchy_rank = sub.rank;
    out.ok = geom::pointwise_equal(ws, sub, base);
    return out;
}

} // namespace flatcheck::subdist
