#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include <flatcheck/geom.hpp>
#include <flatcheck/indices.hpp>
#include <flatcheck/model.hpp>

namespace flatcheck::sfe {

using geom::Distribution;
using geom::FieldId;
using geom::Workspace;
using model::SystemModel;

enum class Form { Auto, TF0, TF1 };
enum class Status { Pass, Fail, Inconclusive, Skipped };
enum class Outcome { TF0, TF1, Fail, Inconclusive };

std::string_view to_string(Status s);

struct ConditionResult {
    std::string id;
    Status status = Status::Skipped;
    double residual = 0.0;
    std::optional<std::vector<double>> witness_point;
    std::string detail;
};

struct RankTable {
    std::vector<int> D;
    std::vector<int> E_flag;
    std::optional<int> L;
    std::vector<int> F;
};

struct FlatOutputStatus {
    // check: "codistribution_available" or "unsupported";
    // verify_flat_output: "verified", "failed" or "unsupported".
    std::string status;
    double basis_residual = 0.0;
};

struct CheckReport {
    Form form = Form::TF0;
    Outcome outcome = Outcome::Inconclusive;
    std::string failed_condition; // set for Outcome::Fail
    std::string reason;           // set for Outcome::Inconclusive
    StructureIndices indices;
    RankTable ranks;
    std::vector<ConditionResult> conditions;
    std::optional<FlatOutputStatus> flat_output;

    // "TF0", "TF1", "Fail(<id>)", "Inconclusive(<reason>)"
    std::string verdict() const;
    int exit_code() const;
    nlohmann::ordered_json to_json() const;
    std::string to_table() const;
};

struct CheckOptions {
    linalg::CheckConfig cfg;
    // Keep evaluating after the first failing condition (diagnostics only;
    // the verdict still names the first failure).
    bool all_conditions = false;
    // Starts of the pointwise c-field solver when the model has no ansatz.
    int newton_starts = 8;
};

struct DriftSequence {
    std::vector<Distribution> D; // D[0] = D_1
    int k_zeta = 0;              // 0 when no member is non-involutive
    bool never_non_involutive = false;
    bool rank_failure = false;   // rank D_i != (m+1) i before k_zeta was found
};

DriftSequence drift_sequence(Workspace &ws);

CheckReport check_tf0(const SystemModel &model, const CheckOptions &opts);
CheckReport check_tf1(const SystemModel &model, const CheckOptions &opts);
// Auto: TF0 first, TF1 when TF0 fails at condition 2.
CheckReport check(const SystemModel &model, Form form, const CheckOptions &opts);

// States `selected` of the (extended) model play the role of inputs; true iff
// D0 is contained in C(D0 + [f, D0]) at generic points.
bool check_affine_reduction(const SystemModel &extended, std::span<const std::size_t> selected, const linalg::CheckConfig &cfg);
// Control-affine model as a system on (x, u) with inputs as states.
SystemModel extend_with_inputs(const SystemModel &model);

struct FlatOutputCheck {
    bool ok = false;
    bool independent = false;
    double residual = 0.0; // mutual-inclusion residual, worst over points
    std::optional<std::vector<double>> witness_point;
};

// span{d phi} = Delta^perp at the sample points, with independent d phi.
// Throws DimensionMismatch when |phi| != n - rank Delta.
FlatOutputCheck verify_flat_output(Workspace &ws, std::span<const expr::Expr> phi, const Distribution &delta);

// Runs the checker and verifies phi against the member of L c F_0 c F_1 c ...
// whose corank equals m+1.
struct FlatOutputVerification {
    CheckReport report;
    FlatOutputCheck check;
    std::string target; // "F0", "F1", ..., "L" or empty when unsupported
};
FlatOutputVerification verify_flat_output(const SystemModel &model, std::span<const expr::Expr> phi, Form form,
                                          const CheckOptions &opts);

// Feedback transformation z = Phi(x), w = alpha(x) + beta(x) u into a
// triangular form with the given indices. Phi is given in template order
// (tf_state_names).
struct Transformation {
    std::vector<expr::Expr> phi;
    std::vector<expr::Expr> alpha;
    std::vector<expr::Expr> beta; // row-major (m+1) x (m+1)
};

struct RowResidual {
    std::string state;
    double value = 0.0;
};

struct TransformationReport {
    bool ok = false;
    double max_residual = 0.0;
    std::vector<RowResidual> rows; // worst residual per template row
    std::optional<std::vector<double>> witness_point;
};

// Throws DimensionMismatch, SingularJacobian, SingularBeta.
TransformationReport verify_transformation(const SystemModel &model, const Transformation &t, const StructureIndices &target,
                                           const linalg::CheckConfig &cfg, double tol = 1e-8);

// Transformation file: [map] lines "<template name> = expr", [feedback] lines
// "w<j> = expr" (affine in u0..um) or "w<j> = rate(<template name>)".
Transformation parse_transformation(const SystemModel &model, std::string_view text, const StructureIndices &target);

} // namespace flatcheck::sfe
