#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include <flatcheck/expr.hpp>
#include <flatcheck/linalg.hpp>
#include <flatcheck/model.hpp>

namespace flatcheck::geom {

using expr::Expr;
using linalg::Matrix;
using linalg::Vector;

using VectorField = std::vector<Expr>;
using OneForm = std::vector<Expr>;
using FieldId = std::uint32_t;

// Coordinate formulas over the given state symbols.
VectorField lie_bracket(expr::ExprDag &dag, std::span<const expr::SymbolId> x, const VectorField &v, const VectorField &w);
Expr lie_derivative(expr::ExprDag &dag, std::span<const expr::SymbolId> x, const VectorField &v, Expr h);
OneForm differential(expr::ExprDag &dag, std::span<const expr::SymbolId> x, Expr h);
// (v -| d omega)_j = sum_i v^i (d_i omega_j - d_j omega_i)
OneForm contract_domega(expr::ExprDag &dag, std::span<const expr::SymbolId> x, const VectorField &v, const OneForm &omega);

// Sample points, their evaluators and a registry of vector fields with cached
// numeric values. All distributions of one check live in one workspace so that
// brackets and evaluations are shared.
class Workspace {
public:
    Workspace(const model::SystemModel &model, const linalg::CheckConfig &cfg);

    const model::SystemModel &model() const { return model_; }
    const linalg::CheckConfig &config() const { return cfg_; }
    expr::ExprDag &dag() { return *model_.dag; }
    std::size_t n() const { return model_.n(); }
    std::span<const expr::SymbolId> states() const { return states_; }
    std::size_t num_points() const { return points_.size(); }
    const expr::Point &point(std::size_t k) const { return points_[k]; }
    std::vector<double> state_values(std::size_t k) const;
    double tol() const { return cfg_.tol_rel; }

    FieldId add(const VectorField &v);
    const VectorField &field(FieldId id) const { return fields_[id]; }
    FieldId drift() const { return drift_; }
    const std::vector<FieldId> &inputs() const { return inputs_; }
    FieldId bracket(FieldId a, FieldId b);
    // sum_i coeffs[i] * fields[i]
    FieldId combine(std::span<const Expr> coeffs, std::span<const FieldId> fields);

    // nullptr when the field cannot be evaluated at point k.
    const Vector *sample(FieldId id, std::size_t k);
    std::optional<Matrix> samples(std::span<const FieldId> ids, std::size_t k);
    std::optional<double> value(Expr e, std::size_t k);
    // d field / d x at point k (forward mode, no new graph nodes).
    std::optional<Matrix> jacobian(FieldId id, std::size_t k);
    // [a, b] at point k; uses the symbolic bracket when it already exists.
    std::optional<Vector> bracket_sample(FieldId a, FieldId b, std::size_t k);

private:
    struct VecHash {
        std::size_t operator()(const std::vector<expr::NodeId> &v) const noexcept;
    };

    model::SystemModel model_;
    linalg::CheckConfig cfg_;
    std::vector<expr::SymbolId> states_;
    std::vector<expr::Point> points_;
    std::vector<expr::Evaluator> evals_;
    std::vector<VectorField> fields_;
    std::unordered_map<std::vector<expr::NodeId>, FieldId, VecHash> field_index_;
    struct Slot {
        Vector value;
        std::uint8_t state = 0; // 0 unknown, 1 ready, 2 failed
    };
    std::vector<std::vector<Slot>> cache_; // [field][point]
    std::map<std::pair<FieldId, FieldId>, FieldId> brackets_;
    // Gradients are kept for one point at a time.
    std::unique_ptr<expr::GradientEvaluator> grad_;
    std::size_t grad_point_ = 0;
    std::map<std::pair<FieldId, std::size_t>, std::optional<Matrix>> jacobians_;
    FieldId drift_ = 0;
    std::vector<FieldId> inputs_;
};

// Finitely generated distribution. Generators are pruned so that they are
// pointwise independent at generic points; rank is the modal rank.
struct Distribution {
    std::vector<FieldId> gens;
    int rank = 0;
};

Distribution span(Workspace &ws, std::span<const FieldId> gens);
Distribution sum(Workspace &ws, const Distribution &a, std::span<const FieldId> extra);
Distribution sum(Workspace &ws, const Distribution &a, const Distribution &b);
int modal_rank(Workspace &ws, std::span<const FieldId> gens);
// base + span of the brackets of the given pairs. Brackets are evaluated at
// the sample points first; only the selected ones become symbolic fields.
Distribution extend_by_brackets(Workspace &ws, const Distribution &base, std::span<const std::pair<FieldId, FieldId>> pairs);

// Modal rank increase when `extra` is added to D; 0 means inclusion.
int modal_excess(Workspace &ws, const Distribution &d, std::span<const FieldId> extra);
bool contains(Workspace &ws, const Distribution &d, std::span<const FieldId> extra);
// Largest distance of a normalized extra field from D over the points.
double inclusion_residual(Workspace &ws, const Distribution &d, std::span<const FieldId> extra);
bool equal(Workspace &ws, const Distribution &a, const Distribution &b);

// Brackets are evaluated at the sample points only; no new fields are created.
struct BracketInclusion {
    bool inside = true;   // modal verdict
    double residual = 0.0; // worst distance of the normalized bracket from D
    std::optional<std::size_t> point;
};
std::vector<BracketInclusion> bracket_inclusion(Workspace &ws, const Distribution &d, std::span<const std::pair<FieldId, FieldId>> pairs);

struct EscapingPair {
    FieldId a = 0;
    FieldId b = 0;
    double residual = 0.0;
    std::optional<std::size_t> point;
};
bool is_involutive(Workspace &ws, const Distribution &d);
// First pair of generators whose bracket leaves D, if any.
std::optional<EscapingPair> first_escaping_pair(Workspace &ws, const Distribution &d);

// D^(0) = D, D^(i+1) = D^(i) + [D^(i), D^(i)], up to stabilization or
// max_steps additional members.
std::vector<Distribution> derived_flag(Workspace &ws, const Distribution &d, int max_steps = 64);
Distribution involutive_closure(Workspace &ws, const Distribution &d);

// Pointwise subspace of a distribution: for each sample point, coefficients
// (d x r) with respect to the generators of `base`, or nullopt when the point
// is unusable. rank is modal.
struct PointwiseSub {
    Distribution base;
    std::vector<std::optional<Matrix>> coeffs;
    int rank = 0;

    // Basis vectors (n x r) at point k.
    std::optional<Matrix> basis(Workspace &ws, std::size_t k) const;
};

PointwiseSub cauchy_pointwise(Workspace &ws, const Distribution &d);
// Symbolic generators (with solve-node coefficients) and mandatory pointwise
// verification. Throws PivotDegenerate or VerificationFailed.
Distribution cauchy_characteristic(Workspace &ws, const Distribution &d);

// Modal test of pointwise span equality between a pointwise subspace and a
// distribution (or explicit fields).
bool pointwise_equal(Workspace &ws, const PointwiseSub &a, std::span<const FieldId> b);
// [f, v] in D for every v in the pointwise subspace of D, using
// [f, sum l_j w_j] = sum l_j [f, w_j] mod D.
bool drift_preserves(Workspace &ws, FieldId f, const PointwiseSub &sub, const Distribution &d, double *residual = nullptr);

// Orthonormal covectors (rows) annihilating D at point k.
Matrix annihilator_at(Workspace &ws, const Distribution &d, std::size_t k);

// Symbolic annihilator: with pivot rows R of the generator matrix fixed at a
// reference point, omega^t = e_t - sum_r K_tr e_r for every other row t.
struct Annihilator {
    std::vector<std::size_t> pivots;
    std::vector<std::size_t> others;
    std::vector<OneForm> forms; // one per entry of `others`
};
Annihilator symbolic_annihilator(Workspace &ws, const Distribution &d);

Expr pair(expr::ExprDag &dag, const OneForm &w, const VectorField &v);

// Kernel of a symbolic matrix (rows of expressions) with the pivot pattern
// fixed at a point where the modal rank is attained. Returns kernel vectors.
std::vector<std::vector<Expr>> symbolic_kernel(Workspace &ws, const std::vector<std::vector<Expr>> &a);

// Index of the first sample point where every field evaluates; throws when
// there is none.
std::size_t reference_point(Workspace &ws, std::span<const FieldId> ids);

} // namespace flatcheck::geom
