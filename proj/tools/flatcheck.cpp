#include <flatcheck/normalforms.hpp>
#include <flatcheck/parser.hpp>
#include <flatcheck/sfechk.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

using namespace flatcheck;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFail = 1;
constexpr int kExitInconclusive = 2;
constexpr int kExitInput = 3;

struct CommonFlags {
    std::string form = "auto";
    int points = 25;
    double tol = 1e-9;
    std::optional<std::uint64_t> seed;
    std::string json_path;
    bool all_conditions = false;
};

void add_common(CLI::App *cmd, CommonFlags &f)
{
    cmd->add_option("--form", f.form, "Target form")->check(CLI::IsMember({"auto", "tf0", "tf1"}));
    cmd->add_option("--points", f.points, "Sample points per test")->check(CLI::Range(1, 100000));
    cmd->add_option("--tol", f.tol, "Relative tolerance")->check(CLI::PositiveNumber);
    cmd->add_option("--seed", f.seed, "Sampler seed (default: $FLATCHECK_SEED, then 1)");
    cmd->add_option("--json", f.json_path, "Write the JSON report to this file");
    cmd->add_flag("--all-conditions", f.all_conditions, "Evaluate every condition after the first failure");
}

sfe::Form form_of(const std::string &s)
{
    if (s == "tf0") return sfe::Form::TF0;
    if (s == "tf1") return sfe::Form::TF1;
    return sfe::Form::Auto;
}

std::uint64_t resolve_seed(const std::optional<std::uint64_t> &flag)
{
    if (flag) return *flag;
    if (const char *env = std::getenv("FLATCHECK_SEED")) {
        std::string s(env);
        std::size_t used = 0;
        unsigned long long v = 0;
        try {
            v = std::stoull(s, &used);
        } catch (const std::exception &) {
            used = 0;
        }
        if (s.empty() || used != s.size()) throw Error(ErrorKind::InvalidConfig, "FLATCHECK_SEED is not an unsigned integer: '" + s + "'");
        return v;
    }
    return 1;
}

sfe::CheckOptions options_of(const CommonFlags &f)
{
    sfe::CheckOptions o;
    o.cfg.n_points = f.points;
    o.cfg.tol_rel = f.tol;
    o.cfg.seed = resolve_seed(f.seed);
    o.all_conditions = f.all_conditions;
    o.cfg.validate();
    return o;
}

void write_json(const std::string &path, const nlohmann::ordered_json &j)
{
    if (path.empty()) return;
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
    out << j.dump(2) << '\n';
}

std::vector<int> int_list(const std::string &s)
{
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stoi(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception &) {
            throw Error(ErrorKind::BadIndices, "expected a comma separated integer list, got '" + s + "'");
        }
    }
    return out;
}

std::vector<double> double_list(const std::string &s)
{
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception &) {
            throw Error(ErrorKind::SyntaxError, "expected a comma separated number list, got '" + s + "'");
        }
    }
    return out;
}

// "m,s,k_zeta,k_chi,kxi_0,...,kxi_m"
StructureIndices indices_of(const std::string &s)
{
    auto v = int_list(s);
    if (v.size() < 4) throw Error(ErrorKind::BadIndices, "indices are m,s,k_zeta,k_chi,k_xi_0..k_xi_m");
    StructureIndices idx{v[0], v[1], v[2], v[3], std::vector<int>(v.begin() + 4, v.end())};
    idx.validate();
    return idx;
}

model::SystemModel load(const std::string &path, const sfe::CheckOptions &o)
{
    return model::load_model(path, o.cfg);
}

bool is_input_error(ErrorKind k)
{
    switch (k) {
    case ErrorKind::SyntaxError:
    case ErrorKind::UnknownSymbol:
    case ErrorKind::DimensionMismatch:
    case ErrorKind::DependentInputs:
    case ErrorKind::SingularMass:
    case ErrorKind::NotQuadratic:
    case ErrorKind::BadIndices:
    case ErrorKind::InvalidConfig:
    case ErrorKind::Io:
    case ErrorKind::HypothesisViolated: return true;
    default: return false;
    }
}

int cmd_check(const std::string &path, const CommonFlags &f)
{
    auto o = options_of(f);
    auto m = load(path, o);
    auto rep = sfe::check(m, form_of(f.form), o);
    std::cout << rep.to_table();
    write_json(f.json_path, rep.to_json());
    return rep.exit_code();
}

int cmd_verify_output(const std::string &path, const std::string &phi_file, const CommonFlags &f)
{
    auto o = options_of(f);
    auto m = load(path, o);
    auto phi = model::load_expression_list(m, phi_file);
    auto res = sfe::verify_flat_output(m, phi, form_of(f.form), o);
    std::cout << res.report.to_table();
    write_json(f.json_path, res.report.to_json());
    if (res.report.exit_code() != kExitOk) return res.report.exit_code();
    if (res.target.empty()) {
        std::cout << "flat output: no member of the sequence has corank m+1\n";
        return kExitInconclusive;
    }
    std::cout << "flat output against " << res.target << ": " << (res.check.ok ? "verified" : "failed")
              << " (residual " << res.check.residual << (res.check.independent ? "" : ", differentials dependent") << ")\n";
    return res.check.ok ? kExitOk : kExitFail;
}

int cmd_verify_transformation(const std::string &path, const std::string &map_file, const std::string &indices,
                              const CommonFlags &f, double tol)
{
    auto o = options_of(f);
    auto m = load(path, o);
    StructureIndices target;
    if (!indices.empty()) {
        target = indices_of(indices);
    } else {
        auto rep = sfe::check(m, form_of(f.form), o);
        if (rep.outcome != sfe::Outcome::TF0 && rep.outcome != sfe::Outcome::TF1) {
            std::cout << "no target indices given and the check returned " << rep.verdict() << "\n";
            return rep.exit_code();
        }
        target = rep.indices;
    }
    auto tr = sfe::parse_transformation(m, model::read_file(map_file), target);
    nlohmann::ordered_json j;
    j["indices"] = {{"m", target.m}, {"s", target.s}, {"k_zeta", target.k_zeta}, {"k_chi", target.k_chi}, {"k_xi", target.k_xi}};
    int code = kExitOk;
    try {
        auto rep = sfe::verify_transformation(m, tr, target, o.cfg, tol);
        std::cout << "target:  " << target.to_string() << "\n";
        std::cout << "result:  " << (rep.ok ? "verified" : "failed") << " (max residual " << rep.max_residual << ")\n";
        for (const auto &r : rep.rows) std::cout << "  " << r.state << "  " << r.value << "\n";
        j["status"] = rep.ok ? "verified" : "failed";
        j["max_residual"] = rep.max_residual;
        auto rows = nlohmann::ordered_json::array();
        for (const auto &r : rep.rows) rows.push_back({{"state", r.state}, {"residual", r.value}});
        j["rows"] = rows;
        j["witness_point"] = rep.witness_point ? nlohmann::ordered_json(*rep.witness_point) : nlohmann::ordered_json(nullptr);
        code = rep.ok ? kExitOk : kExitFail;
    } catch (const Error &e) {
        if (e.kind() != ErrorKind::SingularJacobian && e.kind() != ErrorKind::SingularBeta) throw;
        std::cout << "result:  failed (" << to_string(e.kind()) << ": " << e.what() << ")\n";
        j["status"] = std::string(to_string(e.kind()));
        code = kExitFail;
    }
    write_json(f.json_path, j);
    return code;
}

struct GenerateFlags {
    std::string kind = "tf";
    std::string indices = "2,0,1,2,1,1,1";
    std::uint64_t seed = 1;
    int complexity = 1;
    std::optional<std::uint64_t> scramble;
    double coupling = 0.5;
    int contact_m = 2;
    int contact_k = 3;
    std::string chains = "2,2,2";
    std::string out;
};

int cmd_generate(const GenerateFlags &g)
{
    model::SystemModel m;
    if (g.kind == "tf") {
        m = normal::generate_tf(indices_of(g.indices), g.seed, g.complexity);
    } else if (g.kind == "contact") {
        m = normal::contact_form(g.contact_m, g.contact_k, g.seed, g.complexity > 0);
    } else if (g.kind == "chained") {
        auto k = int_list(g.chains);
        m = normal::chained_form(k);
    } else {
        m = normal::crane_model();
    }
    if (g.scramble) m = normal::scramble(m, *g.scramble, g.coupling).first;
    std::string text = model::write_model(m);
    if (g.out.empty()) {
        std::cout << text;
    } else {
        std::ofstream out(g.out);
        if (!out) throw Error(ErrorKind::Io, "cannot write " + g.out);
        out << text;
    }
    return kExitOk;
}

struct SimulateFlags {
    std::vector<std::string> inputs;
    std::string x0;
    double horizon = 1.0;
    double step = 1e-3;
    std::string out;
};

int cmd_simulate(const std::string &path, const SimulateFlags &s)
{
    auto m = model::load_model(path);
    expr::Scope scope;
    for (const auto &st : m.states) scope.symbols.insert(st);
    for (const auto &[k, v] : m.params) scope.symbols.insert(k);
    for (const auto &[k, v] : m.defs) scope.macros.emplace(k, v);
    if (!scope.knows("t")) scope.symbols.insert("t");
    std::vector<expr::Expr> u;
    for (const auto &text : s.inputs) u.push_back(expr::parse_expr(*m.dag, text, scope));
    if (s.inputs.empty()) u.assign(m.num_inputs(), m.dag->zero());
    std::vector<double> x0;
    if (s.x0.empty()) {
        for (const auto &iv : m.domain) x0.push_back(0.5 * (iv.lo + iv.hi));
    } else {
        x0 = double_list(s.x0);
    }
    auto traj = normal::integrate(m, u, x0, s.horizon, s.step);
    std::string csv = normal::to_csv(m, traj);
    if (s.out.empty()) {
        std::cout << csv;
    } else {
        std::ofstream out(s.out);
        if (!out) throw Error(ErrorKind::Io, "cannot write " + s.out);
        out << csv;
    }
    return kExitOk;
}

} // namespace

int main(int argc, char **argv)
{
    CLI::App app{"Static feedback equivalence to triangular flat forms"};
    app.require_subcommand(1);

    std::string model_path;
    CommonFlags common;

    auto *check = app.add_subcommand("check", "Decide equivalence to TF0/TF1 and print the condition table");
    check->add_option("model", model_path, "Model file")->required();
    add_common(check, common);

    std::string phi_file;
    auto *vout = app.add_subcommand("verify-output", "Verify a candidate flat output");
    vout->add_option("model", model_path, "Model file")->required();
    vout->add_option("--phi-file", phi_file, "One expression per line")->required();
    add_common(vout, common);

    std::string map_file, target_indices;
    double tr_tol = 1e-8;
    auto *vtr = app.add_subcommand("verify-transformation", "Verify a state and feedback transformation onto a triangular form");
    vtr->add_option("model", model_path, "Model file")->required();
    vtr->add_option("--map", map_file, "Transformation file ([map] and [feedback])")->required();
    vtr->add_option("--indices", target_indices, "m,s,k_zeta,k_chi,k_xi_0..k_xi_m (default: from the check)");
    vtr->add_option("--residual-tol", tr_tol, "Structural residual bound")->check(CLI::PositiveNumber);
    add_common(vtr, common);

    GenerateFlags gen;
    auto *generate = app.add_subcommand("generate", "Emit a normal-form instance as a model file");
    generate->add_option("--kind", gen.kind)->check(CLI::IsMember({"tf", "contact", "chained", "crane"}));
    generate->add_option("--indices", gen.indices, "m,s,k_zeta,k_chi,k_xi_0..k_xi_m");
    generate->add_option("--seed", gen.seed);
    generate->add_option("--complexity", gen.complexity, "Drift complexity (0: no drift terms)")->check(CLI::Range(0, 8));
    generate->add_option("--scramble", gen.scramble, "Scramble with this seed");
    generate->add_option("--coupling", gen.coupling, "Scramble coefficient scale");
    generate->add_option("--contact-m", gen.contact_m);
    generate->add_option("--contact-k", gen.contact_k);
    generate->add_option("--chains", gen.chains, "Chain lengths for --kind chained");
    generate->add_option("-o,--output", gen.out);

    SimulateFlags sim;
    auto *simulate = app.add_subcommand("simulate", "Integrate a model with RK4 and print CSV");
    simulate->add_option("model", model_path, "Model file")->required();
    simulate->add_option("--input", sim.inputs, "Input expression in states and t, once per input");
    simulate->add_option("--x0", sim.x0, "Comma separated initial state (default: domain midpoint)");
    simulate->add_option("--horizon", sim.horizon)->check(CLI::NonNegativeNumber);
    simulate->add_option("--step", sim.step)->check(CLI::PositiveNumber);
    simulate->add_option("-o,--output", sim.out);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp &e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp &e) {
        return app.exit(e);
    } catch (const CLI::ParseError &e) {
        app.exit(e);
        return kExitInput;
    }

    try {
        if (*check) return cmd_check(model_path, common);
        if (*vout) return cmd_verify_output(model_path, phi_file, common);
        if (*vtr) return cmd_verify_transformation(model_path, map_file, target_indices, common, tr_tol);
        if (*generate) return cmd_generate(gen);
        if (*simulate) return cmd_simulate(model_path, sim);
    } catch (const Error &e) {
        std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
        return is_input_error(e.kind()) ? kExitInput : kExitInconclusive;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    }
    return kExitInput;
}
