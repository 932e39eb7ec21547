#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <flatcheck/geom.hpp>

namespace flatcheck::subdist {

using geom::Distribution;
using geom::FieldId;
using geom::Workspace;
using linalg::Matrix;

// Candidate distributions W_i of the corank-one construction. The one-forms
// omega^1..omega^r are annihilator forms of D whose restricted differentials
// are independent, i.e. they span P modulo P^(1).
class LConstruction {
public:
    // Throws HypothesisViolated when rank D^(1) - rank D < 2.
    LConstruction(Workspace &ws, const Distribution &d);

    int r() const { return static_cast<int>(chosen_.size()); }
    const Distribution &base() const { return d_; }
    const Distribution &derived() const { return d1_; }
    // W_i = {v in D : v -| d omega^i in D^perp}, 0 <= i < r.
    const Distribution &w(int i);

    struct Candidate {
        int i = 0;
        int j = 0;
        Distribution L;
        bool corank_one = false;
        bool involutive = false;
    };
    Candidate candidate(int i, int j);

private:
    Workspace &ws_;
    Distribution d_;
    Distribution d1_;
    geom::Annihilator ann_;
    std::vector<std::size_t> chosen_; // indices into ann_.forms
    std::vector<std::optional<Distribution>> w_;
};

struct LResult {
    std::optional<Distribution> L; // nullopt: no involutive corank-one subdistribution
    int i = -1;
    int j = -1;
    int r = 0;
};

LResult construct_L(Workspace &ws, const Distribution &d);

// Setting of the quadratic conditions on the c-field coefficients:
// D0 c D1 c D2 with D1 = D0 + span{v_0..v_m}.
struct CFieldSystem {
    Distribution d0;
    Distribution d1;
    Distribution d2;
    FieldId f = 0;
    std::vector<FieldId> v;
    // t[k * (m+1) + l] = [v_min, [v_max, f]], symmetric in (k, l).
    std::vector<FieldId> t;

    int m() const { return static_cast<int>(v.size()) - 1; }
};

// Checks the stated hypotheses (coranks, involutivity of D1, non-involutivity
// of D2, [f, D0] in D1) and builds the second brackets. Throws
// HypothesisViolated.
CFieldSystem c_field_system(Workspace &ws, const Distribution &d0, std::span<const FieldId> v, const Distribution &d2, FieldId f);

// Residual (m x m, symmetric) of the conditions at sample point k for numeric
// coefficients alpha ((m+1) x m, column i holds alpha^k_i). Each entry is the
// distance of the combined second bracket from D2, relative to 1 + its norm.
// nullopt if the point cannot be evaluated.
std::optional<Matrix> c_field_residuals(Workspace &ws, const CFieldSystem &l2, const Matrix &alpha, std::size_t k);

// Residual of symbolic coefficients (ansatz[i][k] = alpha^k_i) at point k.
std::optional<Matrix> c_field_residuals(Workspace &ws, const CFieldSystem &l2, const std::vector<std::vector<expr::Expr>> &ansatz,
                                       std::size_t k);

struct PointwiseSolutions {
    std::vector<Matrix> alphas; // (m+1) x m each, deduplicated up to recombination
    bool degenerate = false;    // every alpha satisfies the conditions
};

PointwiseSolutions solve_c_pointwise(Workspace &ws, const CFieldSystem &l2, std::size_t k, int n_starts, std::uint64_t seed);

// Column spaces of two (m+1) x m coefficient matrices agree.
bool same_recombination(const Matrix &a, const Matrix &b, double tol = 1e-7);

struct CFieldCheck {
    bool ok = false;
    bool independent = false;   // c_i independent modulo D_{k-1} and inside D_k
    Distribution e;             // D_k + span{[f, c_i]}
    int cauchy_rank = 0;
};

// C(E) = D_{k-1} + span{c}, pointwise, for E = D_k + span{[f, c_i]}.
CFieldCheck verify_c_fields(Workspace &ws, std::span<const FieldId> c, FieldId f, const Distribution &d_k,
                            const Distribution &d_km1);

} // namespace flatcheck::subdist
