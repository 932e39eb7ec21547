#include <flatcheck/sfechk.hpp>
#include <flatcheck/parser.hpp>
#include <flatcheck/subdist.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <sstream>
#include <unordered_map>

namespace flatcheck::sfe {

using expr::Expr;
using expr::ExprDag;
using linalg::Matrix;
using linalg::Vector;

std::string_view to_string(Status s)
{
    switch (s) {
    case Status::Pass: return "pass";
    case Status::Fail: return "fail";
    case Status::Inconclusive: return "inconclusive";
    case Status::Skipped: return "skipped";
    }
    return "skipped";
}

std::string CheckReport::verdict() const
{
    switch (outcome) {
    case Outcome::TF0: return "TF0";
    case Outcome::TF1: return "TF1";
    case Outcome::Fail: return "Fail(" + failed_condition + ")";
    case Outcome::Inconclusive: return "Inconclusive(" + reason + ")";
    }
    return "Inconclusive";
}

int CheckReport::exit_code() const
{
    switch (outcome) {
    case Outcome::TF0:
    case Outcome::TF1: return 0;
    case Outcome::Fail: return 1;
    case Outcome::Inconclusive: return 2;
    }
    return 2;
}

nlohmann::ordered_json CheckReport::to_json() const
{
    using json = nlohmann::ordered_json;
    json j;
    j["verdict"] = verdict();
    j["indices"] = {{"m", indices.m}, {"s", indices.s}, {"k_zeta", indices.k_zeta}, {"k_chi", indices.k_chi}, {"k_xi", indices.k_xi}};
    json r;
    r["D"] = ranks.D;
    r["E_flag"] = ranks.E_flag;
    r["L"] = ranks.L ? json(*ranks.L) : json(nullptr);
    r["F"] = ranks.F;
    j["ranks"] = r;
    json conds = json::array();
    for (const auto &c : conditions) {
        json e;
        e["id"] = c.id;
        e["status"] = std::string(to_string(c.status));
        e["residual"] = c.residual;
        e["witness_point"] = c.witness_point ? json(*c.witness_point) : json(nullptr);
        conds.push_back(e);
    }
    j["conditions"] = conds;
    if (flat_output) j["flat_output"] = {{"status", flat_output->status}, {"basis_residual", flat_output->basis_residual}};
    else j["flat_output"] = nullptr;
    return j;
}

std::string CheckReport::to_table() const
{
    std::ostringstream os;
    auto list = [](const std::vector<int> &v) {
        std::string s = "[";
        for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
        return s + "]";
    };
    os << "form:    " << (form == Form::TF0 ? "TF0" : "TF1") << "\n";
    os << "verdict: " << verdict() << "\n";
    os << "indices: " << indices.to_string() << "\n";
    os << "ranks:   D=" << list(ranks.D) << " E_flag=" << list(ranks.E_flag) << " L=" << (ranks.L ? std::to_string(*ranks.L) : "-")
       << " F=" << list(ranks.F) << "\n";
    os << std::left << std::setw(6) << "cond" << std::setw(14) << "status" << std::setw(14) << "residual" << "detail\n";
    for (const auto &c : conditions) {
        std::ostringstream res;
        res << std::setprecision(3) << c.residual;
        os << std::setw(6) << c.id << std::setw(14) << to_string(c.status) << std::setw(14) << res.str() << c.detail << "\n";
    }
    if (flat_output) {
        os << "flat output: " << flat_output->status << " (basis residual " << std::setprecision(3) << flat_output->basis_residual
           << ")\n";
    }
    return os.str();
}

// ---------------------------------------------------------------------------

DriftSequence drift_sequence(Workspace &ws)
{
    DriftSequence out;
    const int mp1 = static_cast<int>(ws.inputs().size());
    const FieldId f = ws.drift();
    Distribution d = geom::span(ws, ws.inputs());
    for (int i = 1;; ++i) {
        out.D.push_back(d);
        if (d.rank != mp1 * i) {
            out.rank_failure = true;
            return out;
        }
        if (!geom::is_involutive(ws, d)) {
            out.k_zeta = i - 1;
            return out;
        }
        if (d.rank >= static_cast<int>(ws.n())) break;
        std::vector<std::pair<FieldId, FieldId>> fb;
        for (auto g : d.gens) fb.emplace_back(f, g);
        Distribution next = geom::extend_by_brackets(ws, d, fb);
        if (next.rank == d.rank) break;
        d = std::move(next);
    }
    out.never_non_involutive = true;
    return out;
}

namespace {

struct Artifacts {
    DriftSequence seq;
    std::optional<Distribution> e;
    std::vector<Distribution> flag;
    std::optional<Distribution> L;
    std::vector<Distribution> F;
};

class Runner {
public:
    Runner(Workspace &ws, const CheckOptions &opts, Form form, CheckReport &rep, Artifacts &art)
        : ws_(ws), opts_(opts), rep_(rep), art_(art)
    {
        rep_.form = form;
        rep_.indices.m = static_cast<int>(ws.inputs().size()) - 1;
        rep_.indices.s = form == Form::TF1 ? 1 : 0;
    }

    // Records a condition. Returns false when evaluation should stop.
    bool record(std::string id, Status st, double residual, std::optional<std::size_t> witness, std::string detail = {})
    {
        ConditionResult c;
        c.id = std::move(id);
        c.status = st;
        c.residual = residual;
        if (witness) c.witness_point = ws_.state_values(*witness);
        c.detail = std::move(detail);
        if (st == Status::Fail && !failed_) {
            failed_ = true;
            rep_.outcome = Outcome::Fail;
            rep_.failed_condition = c.id;
        }
        if (st == Status::Inconclusive && !failed_ && !inconclusive_) {
            inconclusive_ = true;
            rep_.outcome = Outcome::Inconclusive;
            rep_.reason = c.detail.empty() ? c.id : c.detail;
        }
        rep_.conditions.push_back(std::move(c));
        return !(failed_ || inconclusive_) || opts_.all_conditions;
    }
    void skip(std::string id, std::string detail) { rep_.conditions.push_back({std::move(id), Status::Skipped, 0.0, std::nullopt, std::move(detail)}); }

    bool done() const { return failed_ || inconclusive_; }
    bool failed() const { return failed_; }

    Workspace &ws_;
    const CheckOptions &opts_;
    CheckReport &rep_;
    Artifacts &art_;
    bool failed_ = false;
    bool inconclusive_ = false;
};

// First point where the generators of `d` have a rank different from `expected`.
std::optional<std::size_t> rank_witness(Workspace &ws, const Distribution &d, int expected)
{
    for (std::size_t k = 0; k < ws.num_points(); ++k) {
        auto m = ws.samples(d.gens, k);
        if (!m || linalg::rank_at(*m, ws.tol()) != expected) return k;
    }
    return ws.num_points() ? std::optional<std::size_t>(0) : std::nullopt;
}

// Pointwise coefficients of `sub` generators with respect to `base` generators.
geom::PointwiseSub as_pointwise(Workspace &ws, const Distribution &sub, const Distribution &base)
{
    geom::PointwiseSub out;
    out.base = base;
    out.rank = sub.rank;
    out.coeffs.assign(ws.num_points(), std::nullopt);
    for (std::size_t k = 0; k < ws.num_points(); ++k) {
        auto w = ws.samples(base.gens, k);
        auto l = ws.samples(sub.gens, k);
        if (!w || !l) continue;
        out.coeffs[k] = w->colPivHouseholderQr().solve(*l);
    }
    return out;
}

// Condition 1 (ranks of the drift sequence). Returns false when the sequence
// does not provide a k_zeta.
bool sequence_conditions(Runner &run)
{
    Workspace &ws = run.ws_;
    auto &seq = run.art_.seq;
    seq = drift_sequence(ws);
    for (const auto &d : seq.D) run.rep_.ranks.D.push_back(d.rank);
    const int mp1 = run.rep_.indices.m + 1;
    if (seq.rank_failure) {
        const std::size_t i = seq.D.size();
        run.record("1", Status::Fail, std::abs(seq.D.back().rank - mp1 * static_cast<int>(i)),
                   rank_witness(ws, seq.D.back(), mp1 * static_cast<int>(i)),
                   "rank D_" + std::to_string(i) + " = " + std::to_string(seq.D.back().rank) + ", expected " +
                       std::to_string(mp1 * static_cast<int>(i)));
        return false;
    }
    if (seq.never_non_involutive) {
        run.record("0", Status::Fail, 0.0, std::nullopt,
                   "NeverNonInvolutive: the drift sequence stays involutive (rank " + std::to_string(seq.D.back().rank) + " of " +
                       std::to_string(ws.n()) + ")");
        return false;
    }
    run.rep_.indices.k_zeta = seq.k_zeta;
    run.record("1", Status::Pass, 0.0, std::nullopt);
    return true;
}

// Condition 2: C(D_{k+1}) versus D_k. Returns whether they are equal.
bool cauchy_equals_previous(Runner &run, double &residual, std::optional<std::size_t> &witness)
{
    Workspace &ws = run.ws_;
    const auto &seq = run.art_.seq;
    const int kz = seq.k_zeta;
    const Distribution &e = seq.D[static_cast<std::size_t>(kz)];
    Distribution dk = kz >= 1 ? seq.D[static_cast<std::size_t>(kz - 1)] : Distribution{};
    auto sub = geom::cauchy_pointwise(ws, e);
    residual = std::abs(sub.rank - dk.rank);
    witness = std::nullopt;
    if (sub.rank != dk.rank) {
        witness = 0;
        return false;
    }
    if (dk.gens.empty()) return true;
    bool eq = geom::pointwise_equal(ws, sub, dk.gens);
    if (!eq) witness = 0;
    return eq;
}

// Contact block (conditions on E, its derived flag and L) followed by
// the upper F-sequence. ids: {rank, L, drift, F}.
void contact_and_upper(Runner &run, const Distribution &e, const std::array<std::string, 4> &ids)
{
    Workspace &ws = run.ws_;
    auto &art = run.art_;
    auto &rep = run.rep_;
    const int m = rep.indices.m;
    const int s = rep.indices.s;
    const int kz = rep.indices.k_zeta;
    const FieldId f = ws.drift();

    art.e = e;
    art.flag = geom::derived_flag(ws, e);
    for (const auto &d : art.flag) rep.ranks.E_flag.push_back(d.rank);
    const int kchi = static_cast<int>(art.flag.size());
    rep.indices.k_chi = kchi;
    const Distribution &ebar = art.flag.back();
    const int expected = (m + 1) * kz + m * kchi + 1 - s;
    if (kchi < 2) {
        if (!run.record(ids[0], Status::Fail, 0.0, std::nullopt, "E is involutive (k_chi < 2)")) return;
    } else if (ebar.rank != expected) {
        if (!run.record(ids[0], Status::Fail, std::abs(ebar.rank - expected), rank_witness(ws, ebar, expected),
                        "rank of the involutive closure is " + std::to_string(ebar.rank) + ", expected " + std::to_string(expected)))
            return;
    } else {
        run.record(ids[0], Status::Pass, 0.0, std::nullopt);
    }
    if (kchi < 2) {
        run.skip(ids[1], "needs k_chi >= 2");
        run.skip(ids[2], "needs k_chi >= 2");
        run.skip(ids[3], "needs k_chi >= 2");
        return;
    }

    // L inside E^(k_chi - 2)
    const Distribution &top = art.flag[static_cast<std::size_t>(kchi - 2)];
    bool have_l = false;
    if (top.rank != ebar.rank - m) {
        if (!run.record(ids[1], Status::Fail, std::abs(top.rank - (ebar.rank - m)), rank_witness(ws, top, ebar.rank - m),
                        "rank E^(k_chi-2) = " + std::to_string(top.rank) + ", expected " + std::to_string(ebar.rank - m)))
            return;
    } else {
        try {
            auto lr = subdist::construct_L(ws, top);
            if (lr.L) {
                art.L = lr.L;
                rep.ranks.L = lr.L->rank;
                have_l = true;
                run.record(ids[1], Status::Pass, 0.0, std::nullopt);
            } else if (!run.record(ids[1], Status::Fail, 1.0, std::nullopt, "no involutive corank-one subdistribution")) {
                return;
            }
        } catch (const Error &err) {
            if (err.kind() != ErrorKind::HypothesisViolated && err.kind() != ErrorKind::PivotDegenerate &&
                err.kind() != ErrorKind::VerificationFailed)
                throw;
            if (!run.record(ids[1], Status::Fail, 1.0, std::nullopt, std::string(flatcheck::to_string(err.kind())) + ": " + err.what()))
                return;
        }
    }

    // Drift compatibility.
    {
        double worst = 0.0;
        std::optional<std::size_t> witness;
        bool ok = true;
        std::string detail;
        for (int i = 1; i <= kchi - 2 && ok; ++i) {
            const Distribution &di = art.flag[static_cast<std::size_t>(i)];
            auto sub = geom::cauchy_pointwise(ws, di);
            double r = 0.0;
            if (!geom::drift_preserves(ws, f, sub, di, &r)) {
                ok = false;
                witness = 0;
                detail = "[f, C(E^(" + std::to_string(i) + "))] leaves E^(" + std::to_string(i) + ")";
            }
            worst = std::max(worst, r);
        }
        if (ok && have_l) {
            auto sub = as_pointwise(ws, *art.L, top);
            double r = 0.0;
            if (!geom::drift_preserves(ws, f, sub, ebar, &r)) {
                ok = false;
                witness = 0;
                detail = "[f, L] leaves the involutive closure of E";
            }
            worst = std::max(worst, r);
        }
        if (!have_l && ok) {
            run.skip(ids[2], "L unavailable");
        } else if (!run.record(ids[2], ok ? Status::Pass : Status::Fail, worst, witness, detail)) {
            return;
        }
    }

    // Upper chains: F_0 = Ebar, F_{i+1} = F_i + [f, F_i], all involutive.
    art.F.push_back(ebar);
    rep.ranks.F.push_back(ebar.rank);
    std::vector<int> delta;
    bool ok = true;
    std::string detail;
    std::optional<std::size_t> witness;
    while (art.F.back().rank < static_cast<int>(ws.n())) {
        const Distribution &cur = art.F.back();
        std::vector<std::pair<FieldId, FieldId>> fb;
        for (auto g : cur.gens) fb.emplace_back(f, g);
        Distribution next = geom::extend_by_brackets(ws, cur, fb);
        if (next.rank == cur.rank) {
            ok = false;
            detail = "F-sequence stalls at rank " + std::to_string(cur.rank);
            break;
        }
        delta.push_back(next.rank - cur.rank);
        art.F.push_back(next);
        rep.ranks.F.push_back(next.rank);
        if (auto esc = geom::first_escaping_pair(ws, art.F.back())) {
            ok = false;
            witness = esc->point;
            detail = "F_" + std::to_string(art.F.size() - 1) + " is not involutive";
            break;
        }
    }
    if (ok) {
        // Number of chains of length >= i is delta[i-1]; it cannot grow and is
        // bounded by the number of inputs.
        for (std::size_t i = 0; i < delta.size() && ok; ++i)
            if (delta[i] > m + 1 || (i > 0 && delta[i] > delta[i - 1])) {
                ok = false;
                detail = "rank increments of the F-sequence do not describe m+1 chains";
            }
    }
    if (ok) {
        std::vector<int> kxi;
        int prev = m + 1;
        for (std::size_t i = 0; i <= delta.size(); ++i) {
            int cnt = i < delta.size() ? delta[i] : 0;
            for (int c = 0; c < prev - cnt; ++c) kxi.push_back(static_cast<int>(i));
            prev = cnt;
        }
        std::sort(kxi.rbegin(), kxi.rend());
        rep.indices.k_xi = kxi;
        if (rep.indices.state_count() != static_cast<int>(ws.n())) {
            ok = false;
            detail = "state count bookkeeping mismatch";
        }
    }
    run.record(ids[3], ok ? Status::Pass : Status::Fail, ok ? 0.0 : 1.0, witness, detail);
}

void flat_output_summary(Workspace &ws, CheckReport &rep, const Artifacts &art)
{
    const int mp1 = rep.indices.m + 1;
    std::vector<const Distribution *> chain;
    if (art.L) chain.push_back(&*art.L);
    for (const auto &d : art.F) chain.push_back(&d);
    for (const Distribution *d : chain) {
        if (static_cast<int>(ws.n()) - d->rank != mp1) continue;
        double worst = 0.0;
        for (std::size_t k = 0; k < ws.num_points(); ++k) {
            auto w = ws.samples(d->gens, k);
            if (!w) continue;
            Matrix ann = geom::annihilator_at(ws, *d, k);
            Matrix wn = *w;
            for (Eigen::Index j = 0; j < wn.cols(); ++j) wn.col(j).normalize();
            worst = std::max(worst, (ann * wn).norm());
        }
        rep.flat_output = FlatOutputStatus{"codistribution_available", worst};
        return;
    }
    rep.flat_output = FlatOutputStatus{"unsupported", 0.0};
}

void run_tf0(Workspace &ws, const CheckOptions &opts, CheckReport &rep, Artifacts &art)
{
    Runner run(ws, opts, Form::TF0, rep, art);
    if (!sequence_conditions(run)) return;
    double res = 0.0;
    std::optional<std::size_t> wit;
    bool eq = cauchy_equals_previous(run, res, wit);
    if (!run.record("2", eq ? Status::Pass : Status::Fail, res, wit, eq ? "" : "C(D_{k_zeta+1}) != D_{k_zeta}") && !eq) return;
    const Distribution e = art.seq.D[static_cast<std::size_t>(art.seq.k_zeta)];
    contact_and_upper(run, e, {"3a", "3b", "3c", "4"});
    if (!run.done()) {
        rep.outcome = Outcome::TF0;
        flat_output_summary(ws, rep, art);
    }
}

// v_k = ad_f^{k-1} g_k with ad_f X = [f, X].
std::vector<FieldId> top_fields(Workspace &ws, int kz)
{
    std::vector<FieldId> v = ws.inputs();
    for (int i = 1; i < kz; ++i)
        for (auto &x : v) x = ws.bracket(ws.drift(), x);
    return v;
}

void run_tf1(Workspace &ws, const CheckOptions &opts, CheckReport &rep, Artifacts &art)
{
    Runner run(ws, opts, Form::TF1, rep, art);
    if (!sequence_conditions(run)) return;
    const int kz = art.seq.k_zeta;
    double res = 0.0;
    std::optional<std::size_t> wit;
    bool eq = kz >= 1 && cauchy_equals_previous(run, res, wit);
    if (kz < 1) {
        run.record("2", Status::Fail, 0.0, std::nullopt, "D_1 is already non-involutive (k_zeta = 0)");
        return;
    }
    if (eq) {
        if (!run.record("2", Status::Fail, 0.0, std::nullopt, "C(D_{k_zeta+1}) = D_{k_zeta}")) return;
    } else {
        run.record("2", Status::Pass, 0.0, std::nullopt);
    }

    // Condition 3: c-fields.
    const Distribution &dk = art.seq.D[static_cast<std::size_t>(kz - 1)];
    const Distribution &d2 = art.seq.D[static_cast<std::size_t>(kz)];
    const Distribution dkm1 = kz >= 2 ? art.seq.D[static_cast<std::size_t>(kz - 2)] : Distribution{};
    const auto v = top_fields(ws, kz);
    const FieldId f = ws.drift();
    const auto &model = ws.model();

    std::optional<subdist::CFieldSystem> l2;
    std::string l2_error;
    try {
        l2 = subdist::c_field_system(ws, dkm1, v, d2, f);
    } catch (const Error &err) {
        if (err.kind() != ErrorKind::HypothesisViolated) throw;
        l2_error = err.what();
    }
    // Pointwise evidence: points where the quadratic conditions have a
    // solution (or are void).
    auto pointwise_evidence = [&](int &solvable, int &total, bool &degenerate) {
        solvable = total = 0;
        degenerate = false;
        if (!l2) return;
        for (std::size_t k = 0; k < ws.num_points(); ++k) {
            auto sol = subdist::solve_c_pointwise(ws, *l2, k, opts.newton_starts, opts.cfg.seed);
            ++total;
            if (sol.degenerate) degenerate = true;
            if (sol.degenerate || !sol.alphas.empty()) ++solvable;
        }
    };

    std::optional<Distribution> e;
    if (!model.ansatz.empty()) {
        std::vector<FieldId> c;
        for (const auto &col : model.ansatz) c.push_back(ws.combine(col, v));
        double lres = 0.0;
        std::optional<std::size_t> lwit;
        if (l2) {
            for (std::size_t k = 0; k < ws.num_points(); ++k) {
                auto r = subdist::c_field_residuals(ws, *l2, model.ansatz, k);
                if (r && r->maxCoeff() > lres) {
                    lres = r->maxCoeff();
                    lwit = k;
                }
            }
        }
        auto cc = subdist::verify_c_fields(ws, c, f, dk, dkm1);
        if (cc.ok) {
            e = cc.e;
            run.record("3", Status::Pass, lres, std::nullopt);
        } else {
            int solvable = 0, total = 0;
            bool degenerate = false;
            pointwise_evidence(solvable, total, degenerate);
            std::string why = cc.independent ? "ansatz fails C(E) = D_{k_zeta-1} + span{c}" : "DegenerateAnsatz";
            if (l2 && solvable < (1.0 - linalg::kModalFraction) * total) {
                run.record("3", Status::Fail, lres, lwit, why + "; quadratic conditions unsolvable at sample points");
                return;
            }
            run.record("3", Status::Inconclusive, lres, lwit, "AnsatzRejected");
            if (!opts.all_conditions) return;
        }
    } else {
        int solvable = 0, total = 0;
        bool degenerate = false;
        pointwise_evidence(solvable, total, degenerate);
        if (!l2) {
            run.record("3", Status::Fail, 0.0, std::nullopt, "c-field construction not applicable: " + l2_error);
            return;
        }
        if (solvable < (1.0 - linalg::kModalFraction) * total) {
            run.record("3", Status::Fail, 0.0, std::nullopt, "quadratic conditions unsolvable at sample points");
            return;
        }
        run.record("3", Status::Inconclusive, 0.0, std::nullopt, "NoSymbolicAnsatz");
        if (!opts.all_conditions) return;
    }
    if (!e) {
        run.skip("4a", "E unavailable");
        run.skip("4b", "E unavailable");
        run.skip("4c", "E unavailable");
        run.skip("5", "E unavailable");
        return;
    }
    contact_and_upper(run, *e, {"4a", "4b", "4c", "5"});
    if (!run.done()) {
        rep.outcome = Outcome::TF1;
        flat_output_summary(ws, rep, art);
    }
}

void require_inputs(const SystemModel &model)
{
    if (model.num_inputs() < 3) throw Error(ErrorKind::HypothesisViolated, "the triangular forms need at least three inputs");
}

CheckReport run_form(Workspace &ws, Form form, const CheckOptions &opts, Artifacts &art)
{
    CheckReport rep;
    if (form == Form::TF1) run_tf1(ws, opts, rep, art);
    else run_tf0(ws, opts, rep, art);
    return rep;
}

CheckReport run_auto(Workspace &ws, Form form, const CheckOptions &opts, Artifacts &art)
{
    if (form != Form::Auto) return run_form(ws, form, opts, art);
    Artifacts a0;
    CheckReport r0 = run_form(ws, Form::TF0, opts, a0);
    if (r0.outcome == Outcome::Fail && r0.failed_condition == "2") return run_form(ws, Form::TF1, opts, art);
    art = std::move(a0);
    return r0;
}

} // namespace

CheckReport check_tf0(const SystemModel &model, const CheckOptions &opts)
{
    return check(model, Form::TF0, opts);
}

CheckReport check_tf1(const SystemModel &model, const CheckOptions &opts)
{
    return check(model, Form::TF1, opts);
}

CheckReport check(const SystemModel &model, Form form, const CheckOptions &opts)
{
    require_inputs(model);
    Workspace ws(model, opts.cfg);
    Artifacts art;
    return run_auto(ws, form, opts, art);
}

// ---------------------------------------------------------------------------

SystemModel extend_with_inputs(const SystemModel &model)
{
    SystemModel out;
    out.dag = model.dag;
    out.name = model.name + "_extended";
    out.params = model.params;
    out.states = model.states;
    out.domain = model.domain;
    ExprDag &dag = *model.dag;
    std::string prefix = "u";
    auto clash = [&](const std::string &p) {
        for (std::size_t j = 0; j < model.num_inputs(); ++j) {
            std::string nm = p + std::to_string(j);
            if (std::find(model.states.begin(), model.states.end(), nm) != model.states.end() || model.param(nm)) return true;
        }
        return false;
    };
    while (clash(prefix)) prefix = "_" + prefix;
    std::vector<Expr> u;
    for (std::size_t j = 0; j < model.num_inputs(); ++j) {
        out.states.push_back(prefix + std::to_string(j));
        out.domain.push_back(model::Interval{});
        u.push_back(dag.symbol(out.states.back()));
    }
    for (std::size_t i = 0; i < model.n(); ++i) {
        std::vector<Expr> terms{model.drift[i]};
        for (std::size_t j = 0; j < u.size(); ++j) terms.push_back(dag.mul(model.inputs[j][i], u[j]));
        out.drift.push_back(dag.sum(terms));
    }
    for (std::size_t j = 0; j < u.size(); ++j) out.drift.push_back(dag.zero());
    return out;
}

bool check_affine_reduction(const SystemModel &extended, std::span<const std::size_t> selected, const linalg::CheckConfig &cfg)
{
    Workspace ws(extended, cfg);
    ExprDag &dag = ws.dag();
    std::vector<FieldId> d0;
    for (auto idx : selected) {
        if (idx >= ws.n()) throw Error(ErrorKind::DimensionMismatch, "selected input index out of range");
        geom::VectorField e(ws.n(), dag.zero());
        e[idx] = dag.one();
        d0.push_back(ws.add(e));
    }
    Distribution dist0 = geom::span(ws, d0);
    std::vector<FieldId> fb;
    for (auto g : d0) fb.push_back(ws.bracket(ws.drift(), g));
    Distribution d1 = geom::sum(ws, dist0, fb);
    auto sub = geom::cauchy_pointwise(ws, d1);
    std::vector<std::optional<int>> inside(ws.num_points());
    for (std::size_t k = 0; k < ws.num_points(); ++k) {
        auto c = sub.basis(ws, k);
        auto e = ws.samples(d0, k);
        if (!c || !e) continue;
        int rc = c->cols() ? linalg::rank_at(*c, ws.tol()) : 0;
        Matrix both(c->rows(), c->cols() + e->cols());
        both << *c, *e;
        inside[k] = linalg::rank_at(both, ws.tol()) == rc ? 1 : 0;
    }
    return linalg::modal(inside, "affine reduction").value == 1;
}

// ---------------------------------------------------------------------------

namespace {
constexpr double kFlatOutputTol = 1e-8;
}

FlatOutputCheck verify_flat_output(Workspace &ws, std::span<const Expr> phi, const Distribution &delta)
{
    const std::size_t n = ws.n();
    if (phi.size() + static_cast<std::size_t>(delta.rank) != n)
        throw Error(ErrorKind::DimensionMismatch, "expected " + std::to_string(n - static_cast<std::size_t>(delta.rank)) +
                                                      " output functions, got " + std::to_string(phi.size()));
    ExprDag &dag = ws.dag();
    std::vector<geom::OneForm> dphi;
    for (const auto &p : phi) dphi.push_back(geom::differential(dag, ws.states(), p));
    FlatOutputCheck out;
    std::vector<std::optional<int>> indep(ws.num_points());
    double worst = 0.0;
    for (std::size_t k = 0; k < ws.num_points(); ++k) {
        Matrix rows(static_cast<Eigen::Index>(phi.size()), static_cast<Eigen::Index>(n));
        bool ok = true;
        for (std::size_t i = 0; i < phi.size() && ok; ++i)
            for (std::size_t j = 0; j < n && ok; ++j) {
                auto v = ws.value(dphi[i][j], k);
                if (!v) ok = false;
                else rows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = *v;
            }
        if (!ok || !ws.samples(delta.gens, k)) continue;
        const int r = linalg::rank_at(rows.transpose(), ws.tol());
        indep[k] = r == static_cast<int>(phi.size()) ? 1 : 0;
        if (r != static_cast<int>(phi.size())) continue;
        Matrix ann = geom::annihilator_at(ws, delta, k);
        double dist = linalg::subspace_distance(rows.transpose(), ann.transpose());
        if (!out.witness_point || dist > worst) {
            worst = dist;
            out.witness_point = ws.state_values(k);
        }
    }
    out.independent = linalg::modal(indep, "output differential rank").value == 1;
    out.residual = worst;
    out.ok = out.independent && worst <= kFlatOutputTol;
    return out;
}

FlatOutputVerification verify_flat_output(const SystemModel &model, std::span<const Expr> phi, Form form, const CheckOptions &opts)
{
    require_inputs(model);
    Workspace ws(model, opts.cfg);
    Artifacts art;
    FlatOutputVerification out;
    out.report = run_auto(ws, form, opts, art);
    if (out.report.outcome != Outcome::TF0 && out.report.outcome != Outcome::TF1) return out;
    const int mp1 = out.report.indices.m + 1;
    const Distribution *target = nullptr;
    if (art.L && static_cast<int>(ws.n()) - art.L->rank == mp1) {
        target = &*art.L;
        out.target = "L";
    }
    for (std::size_t i = 0; i < art.F.size() && !target; ++i)
        if (static_cast<int>(ws.n()) - art.F[i].rank == mp1) {
            target = &art.F[i];
            out.target = "F" + std::to_string(i);
        }
    if (!target) {
        out.report.flat_output = FlatOutputStatus{"unsupported", 0.0};
        return out;
    }
    out.check = verify_flat_output(ws, phi, *target);
    out.report.flat_output = FlatOutputStatus{out.check.ok ? "verified" : "failed", out.check.residual};
    return out;
}

// ---------------------------------------------------------------------------
// Transformations

namespace {

struct Mono {
    double c = 1.0;
    std::vector<int> vars;
};
using Poly = std::vector<Mono>;

double eval_poly(const Poly &p, const Vector &z)
{
    double s = 0.0;
    for (const auto &m : p) {
        double t = m.c;
        for (int v : m.vars) t *= z(v);
        s += t;
    }
    return s;
}

double dpoly(const Poly &p, const Vector &z, int var)
{
    double s = 0.0;
    for (const auto &m : p)
        for (std::size_t i = 0; i < m.vars.size(); ++i) {
            if (m.vars[i] != var) continue;
            double t = m.c;
            for (std::size_t j = 0; j < m.vars.size(); ++j)
                if (j != i) t *= z(m.vars[j]);
            s += t;
        }
    return s;
}

// Expected shape of one entry of the transformed system: entry = fixed +
// mult * free(allowed variables), mult being 1 or the variable `mult_var`.
struct Slot {
    Poly fixed;
    bool has_free = false;
    int mult_var = -1;
    std::vector<bool> allowed;
};

struct Template {
    std::vector<std::string> names;
    // slots[row][0] is the drift entry, slots[row][1 + j] input j.
    std::vector<std::vector<Slot>> slots;
};

Template make_template(const StructureIndices &idx)
{
    Template t;
    t.names = tf_state_names(idx);
    const int n = static_cast<int>(t.names.size());
    const int m = idx.m;
    std::unordered_map<std::string, int> at;
    for (int i = 0; i < n; ++i) at[t.names[static_cast<std::size_t>(i)]] = i;
    auto nm = [](const char *b, int l, int c) { return std::string(b) + std::to_string(l) + "_" + std::to_string(c); };
    t.slots.assign(static_cast<std::size_t>(n), std::vector<Slot>(static_cast<std::size_t>(m + 2)));
    auto var = [&](const std::string &s) { return Poly{Mono{1.0, {at.at(s)}}}; };
    const int len0 = idx.k_zeta - idx.s;
    const bool z0_state = len0 > 0;
    const int z0 = z0_state ? at.at(nm("zeta", 1, 0)) : -1;
    std::vector<bool> xi_mask(static_cast<std::size_t>(n), false);
    for (int j = 0; j <= m; ++j)
        for (int l = 1; l <= idx.k_xi[static_cast<std::size_t>(j)]; ++l) xi_mask[static_cast<std::size_t>(at.at(nm("xi", l, j)))] = true;

    for (int j = 0; j <= m; ++j) {
        const int kx = idx.k_xi[static_cast<std::size_t>(j)];
        for (int l = 1; l <= kx; ++l) {
            std::string next = l < kx ? nm("xi", l + 1, j) : (j == 0 ? "chi0" : nm("chi", 1, j));
            t.slots[static_cast<std::size_t>(at.at(nm("xi", l, j)))][0].fixed = var(next);
        }
    }
    // entries multiplying w^0 (or zeta^1_0)
    auto w0_slot = [&](int row) -> Slot & { return z0_state ? t.slots[static_cast<std::size_t>(row)][0] : t.slots[static_cast<std::size_t>(row)][1]; };
    auto w0_term = [&](Poly p) {
        if (!z0_state) return p;
        for (auto &mo : p) mo.vars.push_back(z0);
        return p;
    };
    {
        Slot &s = w0_slot(at.at("chi0"));
        auto add = w0_term(Poly{Mono{1.0, {}}});
        s.fixed.insert(s.fixed.end(), add.begin(), add.end());
    }
    for (int i = 1; i <= idx.k_chi; ++i)
        for (int j = 1; j <= m; ++j) {
            const int row = at.at(nm("chi", i, j));
            std::vector<bool> allowed = xi_mask;
            allowed[static_cast<std::size_t>(at.at("chi0"))] = true;
            const int upto = i < idx.k_chi ? i + 1 : idx.k_chi;
            for (int l = 1; l <= upto; ++l)
                for (int c = 1; c <= m; ++c) allowed[static_cast<std::size_t>(at.at(nm("chi", l, c)))] = true;
            if (i < idx.k_chi) {
                Slot &w = w0_slot(row);
                auto add = w0_term(var(nm("chi", i + 1, j)));
                w.fixed.insert(w.fixed.end(), add.begin(), add.end());
                Slot &d = t.slots[static_cast<std::size_t>(row)][0];
                d.has_free = true;
                d.allowed = allowed;
            } else {
                Slot &d = t.slots[static_cast<std::size_t>(row)][0];
                if (idx.k_zeta >= 1) d.fixed = var(nm("zeta", 1, j));
                else t.slots[static_cast<std::size_t>(row)][static_cast<std::size_t>(1 + j)].fixed = Poly{Mono{1.0, {}}};
                Slot &w = w0_slot(row);
                w.has_free = true;
                w.allowed = allowed;
                if (z0_state) w.mult_var = z0;
            }
        }
    for (int j = 0; j <= m; ++j) {
        const int len = j == 0 ? len0 : idx.k_zeta;
        for (int l = 1; l <= len; ++l) {
            const int row = at.at(nm("zeta", l, j));
            if (l < len) t.slots[static_cast<std::size_t>(row)][0].fixed = var(nm("zeta", l + 1, j));
            else t.slots[static_cast<std::size_t>(row)][static_cast<std::size_t>(1 + j)].fixed = Poly{Mono{1.0, {}}};
        }
    }
    return t;
}

std::vector<std::string> logical_lines(std::string_view text)
{
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
        while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
        bool cont = !line.empty() && line.back() == '\\';
        if (cont) line.pop_back();
        cur += line;
        if (cont) continue;
        std::size_t b = cur.find_first_not_of(" \t");
        if (b != std::string::npos) out.push_back(cur.substr(b));
        cur.clear();
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

std::string trim(std::string s)
{
    std::size_t b = s.find_first_not_of(" \t");
    std::size_t e = s.find_last_not_of(" \t");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

} // namespace

Transformation parse_transformation(const SystemModel &model, std::string_view text, const StructureIndices &target)
{
    target.validate();
    ExprDag &dag = *model.dag;
    const auto names = tf_state_names(target);
    const std::size_t mp1 = model.num_inputs();
    if (static_cast<int>(mp1) != target.m + 1) throw Error(ErrorKind::DimensionMismatch, "target index m does not match the model's inputs");
    if (names.size() != model.n())
        throw Error(ErrorKind::DimensionMismatch, "target indices describe " + std::to_string(names.size()) + " states, model has " +
                                                      std::to_string(model.n()));
    expr::Scope scope;
    for (const auto &s : model.states) scope.symbols.insert(s);
    for (const auto &[k, v] : model.params) scope.symbols.insert(k);
    for (const auto &[k, v] : model.defs) scope.macros.emplace(k, v);
    expr::Scope fb_scope = scope;
    std::vector<Expr> u;
    for (std::size_t j = 0; j < mp1; ++j) {
        std::string nm = "u" + std::to_string(j);
        if (scope.knows(nm)) throw Error(ErrorKind::SyntaxError, "input name '" + nm + "' clashes with a model name");
        fb_scope.symbols.insert(nm);
        u.push_back(dag.symbol(nm));
    }
    const auto x = model.state_ids();
    auto lie = [&](const std::vector<Expr> &field, Expr h) { return geom::lie_derivative(dag, x, field, h); };
    auto rate_target = [](const std::string &rhs) -> std::optional<std::string> {
        if (rhs.rfind("rate(", 0) != 0 || rhs.back() != ')') return std::nullopt;
        return trim(rhs.substr(5, rhs.size() - 6));
    };

    Transformation t;
    t.phi.assign(names.size(), Expr{});
    t.alpha.assign(mp1, Expr{});
    t.beta.assign(mp1 * mp1, Expr{});
    std::unordered_map<std::string, std::size_t> slot;
    for (std::size_t i = 0; i < names.size(); ++i) slot[names[i]] = i;
    enum { None, Map, Feedback } section = None;
    for (const auto &line : logical_lines(text)) {
        if (line == "[map]") {
            section = Map;
            continue;
        }
        if (line == "[feedback]") {
            section = Feedback;
            continue;
        }
        if (line.front() == '[') throw Error(ErrorKind::SyntaxError, "unknown section " + line);
        const bool helper = line.rfind("let ", 0) == 0;
        std::string body = helper ? line.substr(4) : line;
        auto eq = body.find('=');
        if (eq == std::string::npos) throw Error(ErrorKind::SyntaxError, "expected 'name = expression' in: " + line);
        std::string key = trim(body.substr(0, eq));
        std::string rhs = trim(body.substr(eq + 1));
        if (section == None) throw Error(ErrorKind::SyntaxError, "entry outside of [map] or [feedback]: " + line);
        if (section == Map) {
            Expr e;
            if (auto r = rate_target(rhs)) {
                if (!scope.macros.count(*r)) throw Error(ErrorKind::UnknownSymbol, "rate() of undefined coordinate '" + *r + "'");
                e = lie(model.drift, scope.macros.at(*r));
            } else {
                e = expr::parse_expr(dag, rhs, scope);
            }
            if (scope.knows(key)) throw Error(ErrorKind::SyntaxError, "name '" + key + "' already defined");
            scope.macros.emplace(key, e);
            fb_scope.macros.emplace(key, e);
            if (helper) continue;
            auto it = slot.find(key);
            if (it == slot.end()) throw Error(ErrorKind::SyntaxError, "'" + key + "' is not a coordinate of the target form");
            t.phi[it->second] = e;
        } else {
            if (key.size() < 2 || key[0] != 'w') throw Error(ErrorKind::SyntaxError, "feedback entries are named w0..wm");
            std::size_t j = static_cast<std::size_t>(std::stoul(key.substr(1)));
            if (j >= mp1) throw Error(ErrorKind::DimensionMismatch, "feedback entry " + key + " out of range");
            if (auto r = rate_target(rhs)) {
                if (!scope.macros.count(*r)) throw Error(ErrorKind::UnknownSymbol, "rate() of undefined coordinate '" + *r + "'");
                Expr h = scope.macros.at(*r);
                t.alpha[j] = lie(model.drift, h);
                for (std::size_t k = 0; k < mp1; ++k) t.beta[j * mp1 + k] = lie(model.inputs[k], h);
            } else {
                Expr e = expr::parse_expr(dag, rhs, fb_scope);
                std::unordered_map<expr::SymbolId, Expr> zero_u;
                for (auto &ui : u) zero_u[dag.symbol_id(ui)] = dag.zero();
                t.alpha[j] = dag.substitute(e, zero_u);
                for (std::size_t k = 0; k < mp1; ++k) {
                    Expr d = dag.diff(e, u[k]);
                    for (std::size_t l = 0; l < mp1; ++l)
                        if (dag.may_depend(d, dag.symbol_id(u[l])))
                            throw Error(ErrorKind::SyntaxError, "feedback entry " + key + " is not affine in the inputs");
                    t.beta[j * mp1 + k] = d;
                }
            }
        }
    }
    for (std::size_t i = 0; i < names.size(); ++i)
        if (!t.phi[i].valid()) throw Error(ErrorKind::DimensionMismatch, "map entry for '" + names[i] + "' is missing");
    for (std::size_t j = 0; j < mp1; ++j)
        if (!t.alpha[j].valid()) throw Error(ErrorKind::DimensionMismatch, "feedback entry w" + std::to_string(j) + " is missing");
    return t;
}

TransformationReport verify_transformation(const SystemModel &model, const Transformation &tr, const StructureIndices &target,
                                           const linalg::CheckConfig &cfg, double tol)
{
    target.validate();
    const std::size_t n = model.n();
    const std::size_t mp1 = model.num_inputs();
    if (static_cast<int>(mp1) != target.m + 1 || static_cast<std::size_t>(target.state_count()) != n)
        throw Error(ErrorKind::DimensionMismatch, "target indices " + target.to_string() + " do not fit a model with " + std::to_string(n) +
                                                      " states and " + std::to_string(mp1) + " inputs");
    if (tr.phi.size() != n || tr.alpha.size() != mp1 || tr.beta.size() != mp1 * mp1)
        throw Error(ErrorKind::DimensionMismatch, "transformation has the wrong number of entries");
    const Template tpl = make_template(target);
    Workspace ws(model, cfg);
    ExprDag &dag = ws.dag();
    const auto x = model.state_ids();

    // Transformed fields in x: a = dPhi (f - g betahat alpha), b = dPhi g betahat.
    std::vector<Expr> jac(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t l = 0; l < n; ++l) jac[i * n + l] = dag.may_depend(tr.phi[i], x[l]) ? dag.diff(tr.phi[i], x[l]) : dag.zero();
    std::vector<Expr> bh_alpha = dag.solve(tr.beta, tr.alpha);
    std::vector<std::vector<Expr>> bh_cols(mp1);
    for (std::size_t j = 0; j < mp1; ++j) {
        std::vector<Expr> e(mp1, dag.zero());
        e[j] = dag.one();
        bh_cols[j] = dag.solve(tr.beta, e);
    }
    std::vector<Expr> fx(n);
    std::vector<std::vector<Expr>> gx(mp1, std::vector<Expr>(n));
    for (std::size_t l = 0; l < n; ++l) {
        std::vector<Expr> terms{model.drift[l]};
        for (std::size_t k = 0; k < mp1; ++k) terms.push_back(dag.neg(dag.mul(model.inputs[k][l], bh_alpha[k])));
        fx[l] = dag.sum(terms);
        for (std::size_t j = 0; j < mp1; ++j) {
            std::vector<Expr> t2;
            for (std::size_t k = 0; k < mp1; ++k) t2.push_back(dag.mul(model.inputs[k][l], bh_cols[j][k]));
            gx[j][l] = dag.sum(t2);
        }
    }
    auto push = [&](const std::vector<Expr> &v) {
        std::vector<Expr> out(n);
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<Expr> terms;
            for (std::size_t l = 0; l < n; ++l)
                if (!jac[i * n + l].is_zero() && !v[l].is_zero()) terms.push_back(dag.mul(jac[i * n + l], v[l]));
            out[i] = dag.sum(terms);
        }
        return out;
    };
    std::vector<std::vector<Expr>> entries(n, std::vector<Expr>(mp1 + 1));
    {
        auto a = push(fx);
        for (std::size_t i = 0; i < n; ++i) entries[i][0] = a[i];
        for (std::size_t j = 0; j < mp1; ++j) {
            auto b = push(gx[j]);
            for (std::size_t i = 0; i < n; ++i) entries[i][j + 1] = b[i];
        }
    }
    // x-gradients of entries with free parts.
    std::vector<std::vector<std::vector<Expr>>> grads(n, std::vector<std::vector<Expr>>(mp1 + 1));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c <= mp1; ++c)
            if (tpl.slots[i][c].has_free) {
                grads[i][c].resize(n);
                for (std::size_t l = 0; l < n; ++l)
                    grads[i][c][l] = dag.may_depend(entries[i][c], x[l]) ? dag.diff(entries[i][c], x[l]) : dag.zero();
            }

    TransformationReport rep;
    rep.rows.resize(n);
    for (std::size_t i = 0; i < n; ++i) rep.rows[i].state = tpl.names[i];
    std::vector<std::optional<int>> jac_ok(ws.num_points()), beta_ok(ws.num_points());
    for (std::size_t k = 0; k < ws.num_points(); ++k) {
        auto val = [&](Expr e) { return ws.value(e, k); };
        Matrix jm(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        Matrix bm(static_cast<Eigen::Index>(mp1), static_cast<Eigen::Index>(mp1));
        Vector z(static_cast<Eigen::Index>(n));
        bool ok = true;
        for (std::size_t i = 0; i < n && ok; ++i) {
            auto zi = val(tr.phi[i]);
            if (!zi) ok = false;
            else z(static_cast<Eigen::Index>(i)) = *zi;
            for (std::size_t l = 0; l < n && ok; ++l) {
                auto v = val(jac[i * n + l]);
                if (!v) ok = false;
                else jm(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(l)) = *v;
            }
        }
        for (std::size_t j = 0; j < mp1 * mp1 && ok; ++j) {
            auto v = val(tr.beta[j]);
            if (!v) ok = false;
            else bm(static_cast<Eigen::Index>(j / mp1), static_cast<Eigen::Index>(j % mp1)) = *v;
        }
        if (!ok) continue;
        jac_ok[k] = linalg::rank_at(jm, cfg.tol_rel) == static_cast<int>(n) ? 1 : 0;
        beta_ok[k] = linalg::rank_at(bm, cfg.tol_rel) == static_cast<int>(mp1) ? 1 : 0;
        if (!*jac_ok[k] || !*beta_ok[k]) continue;
        Matrix jinv = jm.inverse();
        double point_worst = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c <= mp1; ++c) {
                const Slot &s = tpl.slots[i][c];
                auto ev = val(entries[i][c]);
                if (!ev) continue;
                const double fixed = eval_poly(s.fixed, z);
                double r = 0.0;
                if (!s.has_free) {
                    r = std::abs(*ev - fixed) / (1.0 + std::abs(fixed));
                } else {
                    Vector gx_(static_cast<Eigen::Index>(n));
                    bool gok = true;
                    for (std::size_t l = 0; l < n && gok; ++l) {
                        auto g = val(grads[i][c][l]);
                        if (!g) gok = false;
                        else gx_(static_cast<Eigen::Index>(l)) = *g;
                    }
                    if (!gok) continue;
                    Vector gz = jinv.transpose() * gx_; // d entry / dz
                    const double scale = 1.0 + gz.norm();
                    for (std::size_t v = 0; v < n; ++v) {
                        if (s.allowed[v] || static_cast<int>(v) == s.mult_var) continue;
                        r = std::max(r, std::abs(gz(static_cast<Eigen::Index>(v)) - dpoly(s.fixed, z, static_cast<int>(v))) / scale);
                    }
                    if (s.mult_var >= 0) {
                        // entry - fixed is linear in the multiplier with no constant part
                        const double mv = z(s.mult_var);
                        const double slope = gz(s.mult_var) - dpoly(s.fixed, z, s.mult_var);
                        r = std::max(r, std::abs((*ev - fixed) - mv * slope) / (1.0 + std::abs(*ev)));
                    }
                }
                rep.rows[i].value = std::max(rep.rows[i].value, r);
                point_worst = std::max(point_worst, r);
            }
        if (!rep.witness_point || point_worst > rep.max_residual) {
            if (point_worst >= rep.max_residual) rep.witness_point = ws.state_values(k);
            rep.max_residual = std::max(rep.max_residual, point_worst);
        }
    }
    if (linalg::modal(jac_ok, "transformation Jacobian rank").value != 1)
        throw Error(ErrorKind::SingularJacobian, "the state map is not a local diffeomorphism at the sample points");
    if (linalg::modal(beta_ok, "feedback matrix rank").value != 1)
        throw Error(ErrorKind::SingularBeta, "the feedback matrix is singular at the sample points");
    rep.ok = rep.max_residual <= tol;
    return rep;
}

} // namespace flatcheck::sfe
