#include <flatcheck/geom.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace flatcheck::geom {

using expr::ExprDag;
using expr::SymbolId;

namespace {

bool depends_on(const ExprDag &dag, Expr e, SymbolId s) { return !e.is_constant() && dag.may_depend(e, s); }

// Threshold for pointwise verification of symbolic constructions, relative to
// the size of the quantities involved.
double verify_tol(double tol_rel) { return std::max(tol_rel * 1e2, 1e-8); }

} // namespace

VectorField lie_bracket(ExprDag &dag, std::span<const SymbolId> x, const VectorField &v, const VectorField &w)
{
    const std::size_t n = x.size();
    if (v.size() != n || w.size() != n) throw Error(ErrorKind::DimensionMismatch, "lie_bracket: field length differs from state count");
    VectorField out(n);
    std::vector<Expr> terms;
    for (std::size_t i = 0; i < n; ++i) {
        terms.clear();
        for (std::size_t j = 0; j < n; ++j) {
            if (!v[j].is_zero() && depends_on(dag, w[i], x[j])) terms.push_back(dag.mul(v[j], dag.diff(w[i], x[j])));
            if (!w[j].is_zero() && depends_on(dag, v[i], x[j])) terms.push_back(dag.neg(dag.mul(w[j], dag.diff(v[i], x[j]))));
        }
        out[i] = dag.sum(terms);
    }
    return out;
}

Expr lie_derivative(ExprDag &dag, std::span<const SymbolId> x, const VectorField &v, Expr h)
{
    std::vector<Expr> terms;
    for (std::size_t j = 0; j < x.size(); ++j)
        if (!v[j].is_zero() && depends_on(dag, h, x[j])) terms.push_back(dag.mul(v[j], dag.diff(h, x[j])));
    return dag.sum(terms);
}

OneForm differential(ExprDag &dag, std::span<const SymbolId> x, Expr h)
{
    OneForm out(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) out[j] = depends_on(dag, h, x[j]) ? dag.diff(h, x[j]) : dag.zero();
    return out;
}

OneForm contract_domega(ExprDag &dag, std::span<const SymbolId> x, const VectorField &v, const OneForm &omega)
{
    const std::size_t n = x.size();
    if (v.size() != n || omega.size() != n) throw Error(ErrorKind::DimensionMismatch, "contract_domega: length differs from state count");
    OneForm out(n);
    std::vector<Expr> terms;
    for (std::size_t j = 0; j < n; ++j) {
        terms.clear();
        for (std::size_t i = 0; i < n; ++i) {
            if (v[i].is_zero() || i == j) continue;
            Expr a = depends_on(dag, omega[j], x[i]) ? dag.diff(omega[j], x[i]) : dag.zero();
            Expr b = depends_on(dag, omega[i], x[j]) ? dag.diff(omega[i], x[j]) : dag.zero();
            Expr c = dag.sub(a, b);
            if (!c.is_zero()) terms.push_back(dag.mul(v[i], c));
        }
        out[j] = dag.sum(terms);
    }
    return out;
}

Expr pair(ExprDag &dag, const OneForm &w, const VectorField &v)
{
    std::vector<Expr> terms;
    for (std::size_t i = 0; i < w.size(); ++i)
        if (!w[i].is_zero() && !v[i].is_zero()) terms.push_back(dag.mul(w[i], v[i]));
    return dag.sum(terms);
}

// ---------------------------------------------------------------------------
// Workspace

std::size_t Workspace::VecHash::operator()(const std::vector<expr::NodeId> &v) const noexcept
{
    std::uint64_t h = v.size();
    for (auto x : v) h ^= (static_cast<std::uint64_t>(x) + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2));
    return static_cast<std::size_t>(h);
}

Workspace::Workspace(const model::SystemModel &model, const linalg::CheckConfig &cfg) : model_(model), cfg_(cfg)
{
    cfg_.validate();
    states_ = model_.state_ids();
    std::vector<Expr> probe = model_.drift;
    for (const auto &g : model_.inputs) probe.insert(probe.end(), g.begin(), g.end());
    points_ = model::sample_points(model_, cfg_, probe);
    evals_.reserve(points_.size());
    for (const auto &p : points_) evals_.emplace_back(*model_.dag, p);
    drift_ = add(model_.drift);
    for (const auto &g : model_.inputs) inputs_.push_back(add(g));
}

std::vector<double> Workspace::state_values(std::size_t k) const
{
    std::vector<double> out;
    out.reserve(states_.size());
    for (auto s : states_) out.push_back(points_[k][s]);
    return out;
}

FieldId Workspace::add(const VectorField &v)
{
    if (v.size() != n()) throw Error(ErrorKind::DimensionMismatch, "vector field has wrong length");
    std::vector<expr::NodeId> key;
    key.reserve(v.size());
    for (const auto &e : v) key.push_back(e.id());
    if (auto it = field_index_.find(key); it != field_index_.end()) return it->second;
    auto id = static_cast<FieldId>(fields_.size());
    fields_.push_back(v);
    cache_.emplace_back(points_.size());
    field_index_.emplace(std::move(key), id);
    return id;
}

FieldId Workspace::bracket(FieldId a, FieldId b)
{
    if (auto it = brackets_.find({a, b}); it != brackets_.end()) return it->second;
    VectorField v = lie_bracket(dag(), states_, fields_[a], fields_[b]);
    FieldId id = add(v);
    brackets_.emplace(std::make_pair(a, b), id);
    return id;
}

FieldId Workspace::combine(std::span<const Expr> coeffs, std::span<const FieldId> ids)
{
    if (coeffs.size() != ids.size()) throw Error(ErrorKind::DimensionMismatch, "combine: coefficient count mismatch");
    VectorField out(n());
    std::vector<Expr> terms;
    for (std::size_t i = 0; i < n(); ++i) {
        terms.clear();
        for (std::size_t j = 0; j < ids.size(); ++j) {
            const Expr &c = fields_[ids[j]][i];
            if (!c.is_zero() && !coeffs[j].is_zero()) terms.push_back(dag().mul(coeffs[j], c));
        }
        out[i] = dag().sum(terms);
    }
    return add(out);
}

const Vector *Workspace::sample(FieldId id, std::size_t k)
{
    Slot &slot = cache_[id][k];
    if (slot.state == 0) {
        const VectorField &v = fields_[id];
        slot.value.resize(static_cast<Eigen::Index>(v.size()));
        try {
            for (std::size_t i = 0; i < v.size(); ++i) slot.value(static_cast<Eigen::Index>(i)) = evals_[k].value(v[i]);
            slot.state = 1;
        } catch (const EvalError &) {
            slot.state = 2;
        }
    }
    return slot.state == 1 ? &slot.value : nullptr;
}

std::optional<Matrix> Workspace::samples(std::span<const FieldId> ids, std::size_t k)
{
    Matrix m(static_cast<Eigen::Index>(n()), static_cast<Eigen::Index>(ids.size()));
    for (std::size_t j = 0; j < ids.size(); ++j) {
        const Vector *s = sample(ids[j], k);
        if (!s) return std::nullopt;
        m.col(static_cast<Eigen::Index>(j)) = *s;
    }
    return m;
}

std::optional<Matrix> Workspace::jacobian(FieldId id, std::size_t k)
{
    if (auto it = jacobians_.find({id, k}); it != jacobians_.end()) return it->second;
    if (!grad_ || grad_point_ != k) {
        grad_ = std::make_unique<expr::GradientEvaluator>(evals_[k], states_);
        grad_point_ = k;
    }
    std::optional<Matrix> out;
    try {
        Matrix j(static_cast<Eigen::Index>(n()), static_cast<Eigen::Index>(n()));
        const VectorField &v = fields_[id];
        for (std::size_t i = 0; i < n(); ++i) {
            auto g = grad_->gradient(v[i]);
            for (std::size_t c = 0; c < n(); ++c) j(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = g[c];
        }
        out = std::move(j);
    } catch (const EvalError &) {
    }
    jacobians_.emplace(std::make_pair(id, k), out);
    return out;
}

std::optional<Vector> Workspace::bracket_sample(FieldId a, FieldId b, std::size_t k)
{
    if (auto it = brackets_.find({a, b}); it != brackets_.end()) {
        const Vector *s = sample(it->second, k);
        return s ? std::optional<Vector>(*s) : std::nullopt;
    }
    if (auto it = brackets_.find({b, a}); it != brackets_.end()) {
        const Vector *s = sample(it->second, k);
        return s ? std::optional<Vector>(-*s) : std::nullopt;
    }
    const Vector *va = sample(a, k);
    const Vector *vb = sample(b, k);
    if (!va || !vb) return std::nullopt;
    auto ja = jacobian(a, k);
    auto jb = jacobian(b, k);
    if (!ja || !jb) return std::nullopt;
    return Vector(*jb * *va - *ja * *vb);
}

std::optional<double> Workspace::value(Expr e, std::size_t k)
{
    try {
        return evals_[k].value(e);
    } catch (const EvalError &) {
        return std::nullopt;
    }
}

std::size_t reference_point(Workspace &ws, std::span<const FieldId> ids)
{
    for (std::size_t k = 0; k < ws.num_points(); ++k)
        if (ws.samples(ids, k)) return k;
    throw Error(ErrorKind::PivotDegenerate, "no sample point where all generators can be evaluated");
}

// ---------------------------------------------------------------------------
// Distributions

int modal_rank(Workspace &ws, std::span<const FieldId> gens)
{
    if (gens.empty()) return 0;
    std::vector<std::optional<int>> ranks(ws.num_points());
    for (std::size_t k = 0; k < ws.num_points(); ++k)
        if (auto m = ws.samples(gens, k)) ranks[k] = linalg::rank_at(*m, ws.tol());
    return linalg::modal(ranks, "distribution rank").value;
}

namespace {

// Modal rank of the columns and a column selection attaining it at the modal
// points. mats[k] is empty where the point is unusable.
std::pair<int, std::vector<std::size_t>> select_columns(Workspace &ws, const std::vector<std::optional<Matrix>> &mats)
{
    std::vector<std::optional<int>> ranks(ws.num_points());
    for (std::size_t k = 0; k < ws.num_points(); ++k)
        if (mats[k]) ranks[k] = linalg::rank_at(*mats[k], ws.tol());
    const int rank = linalg::modal(ranks, "distribution rank").value;
    // Greedy selection at reference points that attain the modal rank; the
    // selection is accepted once it attains the rank at the modal points too.
    for (std::size_t ref = 0; ref < ws.num_points(); ++ref) {
        if (!ranks[ref] || *ranks[ref] != rank) continue;
        const Matrix &mr = *mats[ref];
        std::vector<std::size_t> chosen;
        Matrix cur(mr.rows(), 0);
        int cur_rank = 0;
        for (Eigen::Index j = 0; j < mr.cols() && cur_rank < rank; ++j) {
            Matrix trial(cur.rows(), cur.cols() + 1);
            trial << cur, mr.col(j);
            int r = linalg::rank_at(trial, ws.tol());
            if (r > cur_rank) {
                cur = std::move(trial);
                cur_rank = r;
                chosen.push_back(static_cast<std::size_t>(j));
            }
        }
        int agree = 0;
        for (std::size_t k = 0; k < ws.num_points(); ++k) {
            if (!ranks[k] || *ranks[k] != rank) continue;
            Matrix sub(mats[k]->rows(), static_cast<Eigen::Index>(chosen.size()));
            for (std::size_t c = 0; c < chosen.size(); ++c) sub.col(static_cast<Eigen::Index>(c)) = mats[k]->col(static_cast<Eigen::Index>(chosen[c]));
            if (linalg::rank_at(sub, ws.tol()) == rank) ++agree;
        }
        if (agree >= linalg::kModalFraction * static_cast<double>(ws.num_points())) return {rank, chosen};
    }
    throw Error(ErrorKind::PivotDegenerate, "could not select generators attaining the modal rank");
}

} // namespace

Distribution span(Workspace &ws, std::span<const FieldId> gens)
{
    Distribution d;
    if (gens.empty()) return d;
    // Drop duplicates while keeping the order.
    std::vector<FieldId> uniq;
    for (auto g : gens)
        if (std::find(uniq.begin(), uniq.end(), g) == uniq.end()) uniq.push_back(g);
    std::vector<std::optional<Matrix>> mats(ws.num_points());
    for (std::size_t k = 0; k < ws.num_points(); ++k) mats[k] = ws.samples(uniq, k);
    auto [rank, chosen] = select_columns(ws, mats);
    for (auto j : chosen) d.gens.push_back(uniq[j]);
    d.rank = rank;
    return d;
}

Distribution extend_by_brackets(Workspace &ws, const Distribution &base, std::span<const std::pair<FieldId, FieldId>> pairs)
{
    std::vector<std::optional<Matrix>> mats(ws.num_points());
    const auto nb = static_cast<Eigen::Index>(base.gens.size());
    for (std::size_t k = 0; k < ws.num_points(); ++k) {
        auto w = ws.samples(base.gens, k);
        if (!w) continue;
        Matrix all(static_cast<Eigen::Index>(ws.n()), nb + static_cast<Eigen::Index>(pairs.size()));
        all.leftCols(nb) = *w;
        bool ok = true;
        for (std::size_t p = 0; p < pairs.size() && ok; ++p) {
            auto br = ws.bracket_sample(pairs[p].first, pairs[p].second, k);
            if (!br) ok = false;
            else all.col(nb + static_cast<Eigen::Index>(p)) = *br;
        }
        if (ok) mats[k] = std::move(all);
    }
    auto [rank, chosen] = select_columns(ws, mats);
    Distribution d;
    d.rank = rank;
    for (auto j : chosen) {
        if (j < base.gens.size()) d.gens.push_back(base.gens[j]);
        else d.gens.push_back(ws.bracket(pairs[j - base.gens.size()].first, pairs[j - base.gens.size()].second));
    }
    return d;
}

Distribution sum(Workspace &ws, const Distribution &a, std::span<const FieldId> extra)
{
    std::vector<FieldId> all = a.gens;
    all.insert(all.end(), extra.begin(), extra.end());
    return span(ws, all);
}

Distribution sum(Workspace &ws, const Distribution &a, const Distribution &b) { return sum(ws, a, b.gens); }

int modal_excess(Workspace &ws, const Distribution &d, std::span<const FieldId> extra)
{
    if (extra.empty()) return 0;
    std::vector<FieldId> all = d.gens;
    all.insert(all.end(), extra.begin(), extra.end());
    std::vector<std::optional<int>> diff(ws.num_points());
    for (std::size_t k = 0; k < ws.num_points(); ++k) {
        auto base = ws.samples(d.gens, k);
        auto full = ws.samples(all, k);
        if (!base || !full) continue;
        diff[k] = linalg::rank_at(*full, ws.tol()) - (d.gens.empty() ? 0 : linalg::rank_at(*base, ws.tol()));
    }
    return linalg::modal(diff, "inclusion test").value;
}

bool contains(Workspace &ws, const Distribution &d, std::span<const FieldId> extra) { return modal_excess(ws, d, extra) == 0; }

double inclusion_residual(Workspace &ws, const Distribution &d, std::span<const FieldId> extra)
{
    double worst = 0.0;
    for (std::size_t k = 0; k < ws.num_points(); ++k) {
        auto base = ws.samples(d.gens, k);
        auto ext = ws.samples(extra, k);
        if (!base || !ext) continue;
        for (Eigen::Index j = 0; j < ext->cols(); ++j) {
            double nrm = ext->col(j).norm();
            if (nrm == 0.0) continue;
            Vector v = ext->col(j) / nrm;
            worst = std::max(worst, linalg::span_residual(v, *base, ws.tol()) * 2.0);
        }
    }
    return worst;
}

bool equal(Workspace &ws, const Distribution &a, const Distribution &b)
{
    return a.rank == b.rank && contains(ws, a, b.gens) && contains(ws, b, a.gens);
}

std::vector<BracketInclusion> bracket_inclusion(Workspace &ws, const Distribution &d, std::span<const std::pair<FieldId, FieldId>> pairs)
{
    std::vector<BracketInclusion> out(pairs.size());
    std::vector<std::vector<std::optional<int>>> excess(pairs.size(), std::vector<std::optional<int>>(ws.num_points()));
    for (std::size_t k = 0; k < ws.num_points(); ++k) {
        auto base = ws.samples(d.gens, k);
        if (!base) continue;
        const int rb = d.gens.empty() ? 0 : linalg::rank_at(*base, ws.tol());
        for (std::size_t p = 0; p < pairs.size(); ++p) {
            auto br = ws.bracket_sample(pairs[p].first, pairs[p].second, k);
            if (!br) continue;
            Matrix both(base->rows(), base->cols() + 1);
            both << *base, *br;
            excess[p][k] = linalg::rank_at(both, ws.tol()) - rb;
            const double nrm = br->norm();
            if (nrm > 0.0) {
                const double r = 2.0 * linalg::span_residual(*br / nrm, *base, ws.tol());
                if (!out[p].point || r > out[p].residual) {
                    out[p].residual = r;
                    out[p].point = k;
                }
            }
        }
    }
    for (std::size_t p = 0; p < pairs.size(); ++p) out[p].inside = linalg::modal(excess[p], "bracket inclusion").value == 0;
    return out;
}

std::optional<EscapingPair> first_escaping_pair(Workspace &ws, const Distribution &d)
{
    if (d.rank >= static_cast<int>(ws.n())) return std::nullopt;
    std::vector<std::pair<FieldId, FieldId>> pairs;
    for (std::size_t a = 0; a < d.gens.size(); ++a)
        for (std::size_t b = a + 1; b < d.gens.size(); ++b) pairs.emplace_back(d.gens[a], d.gens[b]);
    auto inc = bracket_inclusion(ws, d, pairs);
    for (std::size_t p = 0; p < pairs.size(); ++p)
        if (!inc[p].inside) return EscapingPair{pairs[p].first, pairs[p].second, inc[p].residual, inc[p].point};
    return std::nullopt;
}

bool is_involutive(Workspace &ws, const Distribution &d) { return !first_escaping_pair(ws, d).has_value(); }

std::vector<Distribution> derived_flag(Workspace &ws, const Distribution &d, int max_steps)
{
    std::vector<Distribution> flag{d};
    std::vector<FieldId> fresh = d.gens;
    for (int step = 0; step < max_steps; ++step) {
        const Distribution &cur = flag.back();
        if (cur.rank >= static_cast<int>(ws.n())) break;
        std::vector<std::pair<FieldId, FieldId>> pairs;
        for (std::size_t a = 0; a < cur.gens.size(); ++a)
            for (std::size_t b = a + 1; b < cur.gens.size(); ++b) {
                bool na = std::find(fresh.begin(), fresh.end(), cur.gens[a]) != fresh.end();
                bool nb = std::find(fresh.begin(), fresh.end(), cur.gens[b]) != fresh.end();
                if (na || nb) pairs.emplace_back(cur.gens[a], cur.gens[b]);
            }
        Distribution next = extend_by_brackets(ws, cur, pairs);
        if (next.rank == cur.rank) break;
        fresh.clear();
        for (auto g : next.gens)
            if (std::find(cur.gens.begin(), cur.gens.end(), g) == cur.gens.end()) fresh.push_back(g);
        flag.push_back(std::move(next));
    }
    return flag;
}

Distribution involutive_closure(Workspace &ws, const Distribution &d) { return derived_flag(ws, d).back(); }

// ---------------------------------------------------------------------------
// Cauchy characteristics

std::optional<Matrix> PointwiseSub::basis(Workspace &ws, std::size_t k) const
{
    if (!coeffs[k]) return std::nullopt;
    auto w = ws.samples(base.gens, k);
    if (!w) return std::nullopt;
    return Matrix(*w * *coeffs[k]);
}

PointwiseSub cauchy_pointwise(Workspace &ws, const Distribution &d)
{
    PointwiseSub out;
    out.base = d;
    out.coeffs.assign(ws.num_points(), std::nullopt);
    const std::size_t m = d.gens.size();
    const auto n = static_cast<Eigen::Index>(ws.n());
    std::vector<std::optional<int>> ranks(ws.num_points());
    for (std::size_t k = 0; k < ws.num_points(); ++k) {
        auto w = ws.samples(d.gens, k);
        if (!w) continue;
        Matrix q = linalg::range_at(*w, ws.tol());
        if (q.cols() != static_cast<Eigen::Index>(m)) continue;
        // Complement basis of D at the point.
        Matrix comp = linalg::nullspace_at(q.transpose(), ws.tol());
        Vector scale(static_cast<Eigen::Index>(m));
        for (std::size_t j = 0; j < m; ++j) scale(static_cast<Eigen::Index>(j)) = 1.0 / w->col(static_cast<Eigen::Index>(j)).norm();
        // Rows: (complement component, k); columns: lambda_j. Generators are
        // rescaled, which is legitimate modulo D.
        Matrix a = Matrix::Zero(comp.cols() * static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
        bool ok = true;
        for (std::size_t kk = 0; kk < m && ok; ++kk)
            for (std::size_t j = 0; j < m && ok; ++j) {
                if (j == kk) continue;
                auto s = j < kk ? ws.bracket_sample(d.gens[j], d.gens[kk], k) : ws.bracket_sample(d.gens[kk], d.gens[j], k);
                if (!s) {
                    ok = false;
                    break;
                }
                double sign = j < kk ? 1.0 : -1.0;
                Vector col = comp.transpose() * (*s) * (sign * scale(static_cast<Eigen::Index>(j)) * scale(static_cast<Eigen::Index>(kk)));
                a.block(static_cast<Eigen::Index>(kk) * comp.cols(), static_cast<Eigen::Index>(j), comp.cols(), 1) = col;
            }
        if (!ok) continue;
        Matrix ker = a.rows() == 0 ? Matrix(Matrix::Identity(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m)))
                                   : linalg::nullspace_at(a, ws.tol());
        for (std::size_t j = 0; j < m; ++j) ker.row(static_cast<Eigen::Index>(j)) *= scale(static_cast<Eigen::Index>(j));
        ranks[k] = static_cast<int>(ker.cols());
        out.coeffs[k] = std::move(ker);
    }
    out.rank = linalg::modal(ranks, "Cauchy characteristic rank").value;
    for (std::size_t k = 0; k < ws.num_points(); ++k)
        if (ranks[k] && *ranks[k] != out.rank) out.coeffs[k].reset();
    (void)n;
    return out;
}

bool pointwise_equal(Workspace &ws, const PointwiseSub &a, std::span<const FieldId> b)
{
    std::vector<std::optional<int>> same(ws.num_points());
    for (std::size_t k = 0; k < ws.num_points(); ++k) {
        auto ba = a.basis(ws, k);
        auto bb = ws.samples(b, k);
        if (!ba || !bb) continue;
        int ra = linalg::rank_at(*ba, ws.tol());
        int rb = linalg::rank_at(*bb, ws.tol());
        Matrix both(ba->rows(), ba->cols() + bb->cols());
        both << *ba, *bb;
        int rab = linalg::rank_at(both, ws.tol());
        same[k] = (ra == rb && rab == ra) ? 1 : 0;
    }
    return linalg::modal(same, "pointwise span equality").value == 1;
}

bool drift_preserves(Workspace &ws, FieldId f, const PointwiseSub &sub, const Distribution &d, double *residual)
{
    std::vector<std::optional<int>> ok(ws.num_points());
    double worst = 0.0;
    for (std::size_t k = 0; k < ws.num_points(); ++k) {
        if (!sub.coeffs[k]) continue;
        auto dm = ws.samples(d.gens, k);
        if (!dm) continue;
        std::optional<Matrix> img = Matrix(dm->rows(), static_cast<Eigen::Index>(sub.base.gens.size()));
        for (std::size_t j = 0; j < sub.base.gens.size() && img; ++j) {
            auto b = ws.bracket_sample(f, sub.base.gens[j], k);
            if (!b) img.reset();
            else img->col(static_cast<Eigen::Index>(j)) = *b;
        }
        if (!img) continue;
        Matrix cols = *img * *sub.coeffs[k];
        int rd = linalg::rank_at(*dm, ws.tol());
        Matrix both(dm->rows(), dm->cols() + cols.cols());
        both << *dm, cols;
        ok[k] = linalg::rank_at(both, ws.tol()) == rd ? 1 : 0;
        for (Eigen::Index j = 0; j < cols.cols(); ++j) {
            double nrm = cols.col(j).norm();
            if (nrm > 0) worst = std::max(worst, 2.0 * linalg::span_residual(cols.col(j) / nrm, *dm, ws.tol()));
        }
    }
    if (residual) *residual = worst;
    return linalg::modal(ok, "drift compatibility").value == 1;
}

Matrix annihilator_at(Workspace &ws, const Distribution &d, std::size_t k)
{
    auto w = ws.samples(d.gens, k);
    if (!w) throw Error(ErrorKind::NonFiniteValue, "distribution cannot be evaluated at this point");
    if (w->cols() == 0) return Matrix::Identity(static_cast<Eigen::Index>(ws.n()), static_cast<Eigen::Index>(ws.n()));
    return linalg::nullspace_at(w->transpose(), ws.tol()).transpose();
}

Annihilator symbolic_annihilator(Workspace &ws, const Distribution &d)
{
    Annihilator out;
    const std::size_t n = ws.n();
    const std::size_t m = d.gens.size();
    std::size_t ref = reference_point(ws, d.gens);
    // Prefer a point where the modal rank is attained.
    for (std::size_t k = 0; k < ws.num_points(); ++k) {
        auto w = ws.samples(d.gens, k);
        if (w && linalg::rank_at(*w, ws.tol()) == static_cast<int>(m)) {
            ref = k;
            break;
        }
    }
    Matrix w = *ws.samples(d.gens, ref);
    for (Eigen::Index j = 0; j < w.cols(); ++j) w.col(j).normalize();
    Eigen::ColPivHouseholderQR<Matrix> qr(w.transpose());
    std::vector<bool> is_pivot(n, false);
    for (std::size_t i = 0; i < m; ++i) {
        auto r = static_cast<std::size_t>(qr.colsPermutation().indices()(static_cast<Eigen::Index>(i)));
        out.pivots.push_back(r);
        is_pivot[r] = true;
    }
    for (std::size_t i = 0; i < n; ++i)
        if (!is_pivot[i]) out.others.push_back(i);
    ExprDag &dag = ws.dag();
    // (W_R)^T K_t^T = W[t, :]^T
    std::vector<Expr> wrt(m * m);
    for (std::size_t j = 0; j < m; ++j)
        for (std::size_t a = 0; a < m; ++a) wrt[j * m + a] = ws.field(d.gens[j])[out.pivots[a]];
    for (std::size_t t : out.others) {
        std::vector<Expr> rhs(m);
        for (std::size_t j = 0; j < m; ++j) rhs[j] = ws.field(d.gens[j])[t];
        OneForm w1(n, dag.zero());
        w1[t] = dag.one();
        if (m > 0) {
            auto k = dag.solve(wrt, rhs);
            for (std::size_t a = 0; a < m; ++a) w1[out.pivots[a]] = dag.neg(k[a]);
        }
        out.forms.push_back(std::move(w1));
    }
    return out;
}

std::vector<std::vector<Expr>> symbolic_kernel(Workspace &ws, const std::vector<std::vector<Expr>> &a)
{
    const std::size_t rows = a.size();
    if (rows == 0) return {};
    const std::size_t cols = a.front().size();
    ExprDag &dag = ws.dag();
    auto eval = [&](std::size_t k) -> std::optional<Matrix> {
        Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j) {
                auto v = ws.value(a[i][j], k);
                if (!v) return std::nullopt;
                m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = *v;
            }
        return m;
    };
    std::vector<std::optional<Matrix>> mats(ws.num_points());
    std::vector<std::optional<int>> ranks(ws.num_points());
    for (std::size_t k = 0; k < ws.num_points(); ++k) {
        mats[k] = eval(k);
        if (mats[k]) ranks[k] = cols - static_cast<int>(linalg::nullspace_at(*mats[k], ws.tol()).cols());
    }
    const int rank = linalg::modal(ranks, "kernel rank").value;
    std::vector<std::size_t> refs;
    for (std::size_t k = 0; k < ws.num_points(); ++k)
        if (ranks[k] && *ranks[k] == rank) refs.push_back(k);
    const double vt = verify_tol(ws.tol());
    for (std::size_t attempt = 0; attempt < refs.size() && static_cast<int>(attempt) <= ws.config().max_resample; ++attempt) {
        const Matrix &m = *mats[refs[attempt]];
        std::vector<std::size_t> pc, pr;
        if (rank > 0) {
            Eigen::ColPivHouseholderQR<Matrix> qc(m);
            for (int i = 0; i < rank; ++i) pc.push_back(static_cast<std::size_t>(qc.colsPermutation().indices()(i)));
            Matrix sub(static_cast<Eigen::Index>(rows), rank);
            for (int i = 0; i < rank; ++i) sub.col(i) = m.col(static_cast<Eigen::Index>(pc[static_cast<std::size_t>(i)]));
            Eigen::ColPivHouseholderQR<Matrix> qr(Matrix(sub.transpose()));
            for (int i = 0; i < rank; ++i) pr.push_back(static_cast<std::size_t>(qr.colsPermutation().indices()(i)));
        }
        std::vector<bool> pivot_col(cols, false);
        for (auto c : pc) pivot_col[c] = true;
        std::vector<Expr> block;
        for (auto r : pr)
            for (auto c : pc) block.push_back(a[r][c]);
        std::vector<std::vector<Expr>> kernel;
        for (std::size_t l = 0; l < cols; ++l) {
            if (pivot_col[l]) continue;
            std::vector<Expr> v(cols, dag.zero());
            v[l] = dag.one();
            if (rank > 0) {
                std::vector<Expr> rhs;
                for (auto r : pr) rhs.push_back(dag.neg(a[r][l]));
                auto sol = dag.solve(block, rhs);
                for (std::size_t i = 0; i < pc.size(); ++i) v[pc[i]] = sol[i];
            }
            kernel.push_back(std::move(v));
        }
        // Pointwise verification of the full system A v = 0.
        std::vector<std::optional<int>> good(ws.num_points());
        for (std::size_t k = 0; k < ws.num_points(); ++k) {
            if (!mats[k]) continue;
            bool all = true;
            for (const auto &v : kernel) {
                Vector x(static_cast<Eigen::Index>(cols));
                bool ok = true;
                for (std::size_t j = 0; j < cols && ok; ++j) {
                    auto val = ws.value(v[j], k);
                    if (!val) ok = false;
                    else x(static_cast<Eigen::Index>(j)) = *val;
                }
                if (!ok) {
                    all = false;
                    break;
                }
                double scale = mats[k]->norm() * x.norm();
                if ((*mats[k] * x).norm() > vt * std::max(scale, 1e-300)) all = false;
            }
            good[k] = all ? 1 : 0;
        }
        int agree = 0;
        for (const auto &g : good)
            if (g && *g == 1) ++agree;
        if (agree >= linalg::kModalFraction * static_cast<double>(ws.num_points())) return kernel;
    }
    throw Error(ErrorKind::PivotDegenerate, "no pivot pattern yields a kernel basis valid at the sample points");
}

Distribution cauchy_characteristic(Workspace &ws, const Distribution &d)
{
    const std::size_t m = d.gens.size();
    if (m == 0) return d;
    if (is_involutive(ws, d)) return d;
    Annihilator ann = symbolic_annihilator(ws, d);
    ExprDag &dag = ws.dag();
    // A[(t, k)][j] = omega^t([w_j, w_k])
    std::vector<std::vector<Expr>> a;
    for (const auto &omega : ann.forms)
        for (std::size_t k = 0; k < m; ++k) {
            std::vector<Expr> row(m, dag.zero());
            for (std::size_t j = 0; j < m; ++j) {
                if (j == k) continue;
                row[j] = pair(dag, omega, ws.field(ws.bracket(d.gens[j], d.gens[k])));
            }
            a.push_back(std::move(row));
        }
    auto kernel = symbolic_kernel(ws, a);
    std::vector<FieldId> cs;
    for (const auto &lam : kernel) cs.push_back(ws.combine(lam, d.gens));
    Distribution c = cs.empty() ? Distribution{} : span(ws, cs);
    // Mandatory check of the defining property with actual brackets.
    std::vector<std::pair<FieldId, FieldId>> pairs;
    for (auto ci : c.gens)
        for (auto w : d.gens) pairs.emplace_back(ci, w);
    for (const auto &inc : bracket_inclusion(ws, d, pairs))
        if (!inc.inside) throw Error(ErrorKind::VerificationFailed, "Cauchy characteristic basis fails [c, D] in D");
    return c;
}

} // namespace flatcheck::geom
