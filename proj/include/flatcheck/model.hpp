#pragma once

#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <flatcheck/expr.hpp>
#include <flatcheck/linalg.hpp>

namespace flatcheck::model {

using expr::Expr;

struct Interval {
    double lo = -1.0;
    double hi = 1.0;
};

struct LagrangianSpec;

// dx/dt = f(x) + sum_j g_j(x) u^j. Parameters stay symbolic in the graph and
// receive their values through sample points.
struct SystemModel {
    std::shared_ptr<expr::ExprDag> dag;
    std::string name;
    std::vector<std::string> states;
    std::vector<std::pair<std::string, double>> params;
    std::vector<Interval> domain;
    std::vector<Expr> drift;
    std::vector<std::vector<Expr>> inputs;
    // Optional coefficients of the c-fields of the s = 1 test: ansatz[i][k]
    // multiplies the k-th base field in c_i.
    std::vector<std::vector<Expr>> ansatz;
    // Named subexpressions kept for printing.
    std::vector<std::pair<std::string, Expr>> defs;
    // Set when the model was derived from a Lagrangian; the writer then emits
    // the Lagrangian instead of the (solve-based) vector fields.
    std::shared_ptr<const LagrangianSpec> lagrangian;

    std::size_t n() const { return states.size(); }
    std::size_t num_inputs() const { return inputs.size(); }
    // m as in "m + 1 inputs".
    int m() const { return static_cast<int>(inputs.size()) - 1; }

    Expr state(std::size_t i) const { return dag->symbol(states[i]); }
    std::vector<Expr> state_exprs() const;
    std::vector<expr::SymbolId> state_ids() const;
    std::optional<double> param(const std::string &name) const;
    // Assignment of all parameters; states set to NaN.
    expr::Point base_point() const;
    expr::Point point_from_state(std::span<const double> x) const;
};

struct LagrangianSpec {
    std::vector<std::string> q;
    std::vector<std::string> v;
    Expr T;
    Expr V;
    // force[j][i]: generalized force of input j on coordinate q^i.
    std::vector<std::vector<Expr>> force;
};

// Builds the state space form (q, v) with M(q) dv/dt = rhs via solve nodes.
// Throws NotQuadratic and SingularMass (the latter at the domain midpoint).
SystemModel euler_lagrange(std::shared_ptr<expr::ExprDag> dag, const LagrangianSpec &spec, std::string name,
                           std::vector<std::pair<std::string, double>> params, std::vector<Interval> domain);

// Parses the text format of docs/dsl.md. Does not sample; see validate_inputs.
SystemModel parse_model(std::string_view text, const std::string &name = "model");
SystemModel load_model(const std::string &path, const linalg::CheckConfig &cfg = {});

// Structural checks plus pointwise independence of the input fields.
// Throws DimensionMismatch or DependentInputs.
void validate(const SystemModel &model, const linalg::CheckConfig &cfg);

std::string write_model(const SystemModel &model);
void save_model(const SystemModel &model, const std::string &path);

// Reads one expression per non-empty, non-comment line, in the scope of the
// model's states and parameters.
std::vector<Expr> parse_expression_list(const SystemModel &model, std::string_view text);
std::vector<Expr> load_expression_list(const SystemModel &model, const std::string &path);

// Uniform samples from the state domain; parameters fixed. Points where any of
// `probe` fails to evaluate are redrawn (up to cfg.max_resample extra draws).
std::vector<expr::Point> sample_points(const SystemModel &model, const linalg::CheckConfig &cfg,
                                       std::span<const Expr> probe);

std::string read_file(const std::string &path);

} // namespace flatcheck::model
