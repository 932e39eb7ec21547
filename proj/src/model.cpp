#include <charconv>
#include <flatcheck/model.hpp>
#include <flatcheck/parser.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace flatcheck::model {

using expr::ExprDag;
using expr::Point;

std::vector<Expr> SystemModel::state_exprs() const
{
    std::vector<Expr> out;
    out.reserve(states.size());
    for (const auto &s : states) out.push_back(dag->symbol(s));
    return out;
}

std::vector<expr::SymbolId> SystemModel::state_ids() const
{
    std::vector<expr::SymbolId> out;
    out.reserve(states.size());
    for (const auto &s : states) out.push_back(dag->symbol_id(dag->symbol(s)));
    return out;
}

std::optional<double> SystemModel::param(const std::string &pname) const
{
    for (const auto &[k, v] : params)
        if (k == pname) return v;
    return std::nullopt;
}

Point SystemModel::base_point() const
{
    std::vector<double> values(dag->num_symbols(), std::numeric_limits<double>::quiet_NaN());
    for (const auto &[k, v] : params)
        if (auto s = dag->find_symbol(k)) values[dag->symbol_id(*s)] = v;
    return Point(std::move(values));
}

Point SystemModel::point_from_state(std::span<const double> x) const
{
    if (x.size() != states.size()) throw Error(ErrorKind::DimensionMismatch, "state vector has wrong length");
    Point p = base_point();
    auto ids = state_ids();
    for (std::size_t i = 0; i < ids.size(); ++i) p[ids[i]] = x[i];
    return p;
}

std::string read_file(const std::string &path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

namespace {

struct Line {
    std::size_t number;
    std::string text;
};

std::string trim(std::string_view s)
{
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return std::string(s.substr(a, b - a));
}

// Comment stripping and backslash continuation.
std::vector<Line> logical_lines(std::string_view text)
{
    std::vector<Line> out;
    std::size_t number = 0;
    std::string pending;
    std::size_t pending_start = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view raw = text.substr(pos, end - pos);
        ++number;
        pos = end + 1;
        if (auto hash = raw.find('#'); hash != std::string_view::npos) raw = raw.substr(0, hash);
        std::string t = trim(raw);
        bool cont = !t.empty() && t.back() == '\\';
        if (cont) t.pop_back();
        if (pending.empty()) pending_start = number;
        if (!pending.empty() && !t.empty()) pending += ' ';
        pending += t;
        if (cont) continue;
        if (!trim(pending).empty()) out.push_back(Line{pending_start, trim(pending)});
        pending.clear();
        if (end == text.size()) break;
    }
    if (!trim(pending).empty()) out.push_back(Line{pending_start, trim(pending)});
    return out;
}

[[noreturn]] void fail_at(const Line &line, ErrorKind kind, const std::string &msg)
{
    throw Error(kind, "line " + std::to_string(line.number) + ": " + msg);
}

Expr parse_at(ExprDag &dag, const Line &line, std::string_view text, const expr::Scope &scope)
{
    try {
        return expr::parse_expr(dag, text, scope);
    } catch (const SyntaxError &e) {
        fail_at(line, ErrorKind::SyntaxError, e.what());
    } catch (const Error &e) {
        fail_at(line, e.kind(), e.what());
    }
}

std::vector<std::string> split_names(std::string_view s)
{
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c)) || c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

// Splits "key = value" at the first '='.
bool split_assignment(const std::string &text, std::string &key, std::string &value)
{
    auto eq = text.find('=');
    if (eq == std::string::npos) return false;
    key = trim(std::string_view(text).substr(0, eq));
    value = trim(std::string_view(text).substr(eq + 1));
    return true;
}

// Splits at commas that are not nested inside parentheses.
std::vector<std::string> split_top_level(const std::string &s)
{
    std::vector<std::string> out;
    int depth = 0;
    std::string cur;
    for (char c : s) {
        if (c == '(') ++depth;
        if (c == ')') --depth;
        if (c == ',' && depth == 0) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(trim(cur));
    return out;
}

double constant_value(ExprDag &dag, const Line &line, const std::string &text)
{
    expr::Scope empty;
    Expr e = parse_at(dag, line, text, empty);
    if (!e.is_constant()) fail_at(line, ErrorKind::SyntaxError, "expected a numeric constant");
    return dag.constant_of(e.id()).value;
}

struct Section {
    std::string kind; // states, params, domain, defs, drift, input, lagrangian, ansatz
    int index = -1;
    Line header;
    std::vector<Line> body;
};

Section parse_header(const Line &line)
{
    std::string inner = trim(std::string_view(line.text).substr(1, line.text.size() - 2));
    auto words = split_names(inner);
    Section s;
    s.header = line;
    if (words.empty()) fail_at(line, ErrorKind::SyntaxError, "empty section header");
    s.kind = words[0];
    static const std::unordered_set<std::string> plain = {"states", "params", "domain", "defs", "drift", "lagrangian"};
    if (plain.count(s.kind)) {
        if (words.size() != 1) fail_at(line, ErrorKind::SyntaxError, "unexpected text after section name");
        return s;
    }
    auto parse_index = [&](const std::string &w) {
        try {
            std::size_t used = 0;
            int v = std::stoi(w, &used);
            if (used != w.size() || v < 0) throw std::invalid_argument(w);
            return v;
        } catch (const std::exception &) {
            fail_at(line, ErrorKind::SyntaxError, "expected a non-negative index, got '" + w + "'");
        }
    };
    if (s.kind == "input" && words.size() == 2) {
        s.index = parse_index(words[1]);
        return s;
    }
    if (s.kind == "ansatz" && (words.size() == 2 || (words.size() == 3 && words[1] == "c"))) {
        s.index = parse_index(words.back());
        if (s.index < 1) fail_at(line, ErrorKind::SyntaxError, "ansatz fields are numbered from 1");
        return s;
    }
    fail_at(line, ErrorKind::SyntaxError, "unknown section '" + inner + "'");
}

} // namespace

SystemModel parse_model(std::string_view text, const std::string &name)
{
    auto lines = logical_lines(text);
    std::vector<Section> sections;
    for (const auto &line : lines) {
        if (line.text.front() == '[') {
            if (line.text.back() != ']') fail_at(line, ErrorKind::SyntaxError, "expected ']' closing the section header");
            sections.push_back(parse_header(line));
        } else {
            if (sections.empty()) fail_at(line, ErrorKind::SyntaxError, "content before the first section");
            sections.back().body.push_back(line);
        }
    }

    SystemModel model;
    model.dag = std::make_shared<ExprDag>();
    model.name = name;
    ExprDag &dag = *model.dag;
    expr::Scope scope;
    std::unordered_set<std::string> taken;
    auto declare = [&](const Line &line, const std::string &n) {
        if (!expr::is_identifier(n)) fail_at(line, ErrorKind::SyntaxError, "invalid name '" + n + "'");
        if (!taken.insert(n).second) fail_at(line, ErrorKind::SyntaxError, "name '" + n + "' declared twice");
    };

    auto find_all = [&](const std::string &kind) {
        std::vector<const Section *> out;
        for (const auto &s : sections)
            if (s.kind == kind) out.push_back(&s);
        return out;
    };
    auto find_one = [&](const std::string &kind) -> const Section * {
        auto all = find_all(kind);
        if (all.size() > 1) fail_at(all[1]->header, ErrorKind::SyntaxError, "section [" + kind + "] appears twice");
        return all.empty() ? nullptr : all.front();
    };

    const Section *lag = find_one("lagrangian");
    const Section *states_sec = find_one("states");
    if (lag && states_sec) fail_at(states_sec->header, ErrorKind::SyntaxError, "[states] is implied by [lagrangian]");
    if (!lag && !states_sec) throw Error(ErrorKind::SyntaxError, "model has neither [states] nor [lagrangian]");

    if (const Section *p = find_one("params")) {
        for (const auto &line : p->body) {
            std::string key, value;
            if (!split_assignment(line.text, key, value)) fail_at(line, ErrorKind::SyntaxError, "expected 'name = value'");
            declare(line, key);
            model.params.emplace_back(key, constant_value(dag, line, value));
            scope.symbols.insert(key);
            dag.symbol(key);
        }
    }

    // Lagrangian coordinates are needed before definitions so that [defs] may
    // use them; the remaining keys are read after [defs].
    LagrangianSpec spec;
    std::map<std::string, const Line *> lag_keys;
    std::map<int, const Line *> force_lines;
    if (lag) {
        for (const auto &line : lag->body) {
            std::string key, value;
            if (!split_assignment(line.text, key, value)) fail_at(line, ErrorKind::SyntaxError, "expected 'key = value'");
            auto words = split_names(key);
            if (words.size() == 2 && words[0] == "force") {
                int j = 0;
                try {
                    j = std::stoi(words[1]);
                } catch (const std::exception &) {
                    fail_at(line, ErrorKind::SyntaxError, "expected 'force <index>'");
                }
                if (!force_lines.emplace(j, &line).second) fail_at(line, ErrorKind::SyntaxError, "force given twice");
            } else if (key == "q" || key == "v" || key == "T" || key == "V") {
                if (!lag_keys.emplace(key, &line).second) fail_at(line, ErrorKind::SyntaxError, "key '" + key + "' given twice");
            } else {
                fail_at(line, ErrorKind::SyntaxError, "unknown key '" + key + "' (expected q, v, T, V, force <j>)");
            }
        }
        for (const char *k : {"q", "T", "V"})
            if (!lag_keys.count(k)) fail_at(lag->header, ErrorKind::SyntaxError, std::string("missing key '") + k + "'");
        auto value_of = [](const Line &line) {
            std::string k, v;
            split_assignment(line.text, k, v);
            return v;
        };
        spec.q = split_names(value_of(*lag_keys["q"]));
        if (lag_keys.count("v")) {
            spec.v = split_names(value_of(*lag_keys["v"]));
        } else {
            for (std::size_t i = 0; i < spec.q.size(); ++i) spec.v.push_back("v" + std::to_string(i + 1));
        }
        if (spec.v.size() != spec.q.size())
            fail_at(*lag_keys["v"], ErrorKind::DimensionMismatch, "q and v have different lengths");
        for (const auto &n : spec.q) declare(*lag_keys["q"], n);
        for (const auto &n : spec.v) declare(lag_keys.count("v") ? *lag_keys["v"] : *lag_keys["q"], n);
        for (const auto &n : spec.q) {
            scope.symbols.insert(n);
            model.states.push_back(n);
        }
        for (const auto &n : spec.v) {
            scope.symbols.insert(n);
            model.states.push_back(n);
        }
    } else {
        for (const auto &line : states_sec->body)
            for (const auto &n : split_names(line.text)) {
                declare(line, n);
                scope.symbols.insert(n);
                model.states.push_back(n);
            }
        if (model.states.empty()) fail_at(states_sec->header, ErrorKind::DimensionMismatch, "no states declared");
    }
    for (const auto &s : model.states) dag.symbol(s);
    const std::size_t n = model.states.size();

    if (const Section *d = find_one("defs")) {
        for (const auto &line : d->body) {
            std::string key, value;
            if (!split_assignment(line.text, key, value)) fail_at(line, ErrorKind::SyntaxError, "expected 'name = expression'");
            declare(line, key);
            Expr e = parse_at(dag, line, value, scope);
            scope.macros.emplace(key, e);
            model.defs.emplace_back(key, e);
        }
    }

    model.domain.assign(n, Interval{});
    if (const Section *d = find_one("domain")) {
        for (const auto &line : d->body) {
            std::string key, value;
            if (!split_assignment(line.text, key, value)) fail_at(line, ErrorKind::SyntaxError, "expected 'name = lo hi'");
            auto parts = split_names(value);
            if (parts.size() != 2) fail_at(line, ErrorKind::SyntaxError, "expected two bounds");
            Interval iv{constant_value(dag, line, parts[0]), constant_value(dag, line, parts[1])};
            if (!(iv.lo < iv.hi)) fail_at(line, ErrorKind::SyntaxError, "empty interval");
            if (key == "default") {
                for (auto &x : model.domain) x = iv;
                continue;
            }
            auto it = std::find(model.states.begin(), model.states.end(), key);
            if (it == model.states.end()) fail_at(line, ErrorKind::UnknownSymbol, "'" + key + "' is not a state");
        }
        // Explicit entries win over 'default' regardless of order.
        for (const auto &line : d->body) {
            std::string key, value;
            split_assignment(line.text, key, value);
            if (key == "default") continue;
            auto parts = split_names(value);
            auto it = std::find(model.states.begin(), model.states.end(), key);
            model.domain[static_cast<std::size_t>(it - model.states.begin())] =
                Interval{constant_value(dag, line, parts[0]), constant_value(dag, line, parts[1])};
        }
    }

    auto read_column = [&](const Section &s, std::size_t rows) {
        if (s.body.size() != rows)
            fail_at(s.header, ErrorKind::DimensionMismatch,
                    "expected " + std::to_string(rows) + " rows, found " + std::to_string(s.body.size()));
        std::vector<Expr> col;
        for (const auto &line : s.body) col.push_back(parse_at(dag, line, line.text, scope));
        return col;
    };

    if (lag) {
        if (find_one("drift") || !find_all("input").empty())
            fail_at(lag->header, ErrorKind::SyntaxError, "[drift]/[input] cannot be combined with [lagrangian]");
        auto value_of = [](const Line &line) {
            std::string k, v;
            split_assignment(line.text, k, v);
            return v;
        };
        spec.T = parse_at(dag, *lag_keys["T"], value_of(*lag_keys["T"]), scope);
        spec.V = parse_at(dag, *lag_keys["V"], value_of(*lag_keys["V"]), scope);
        if (force_lines.empty()) fail_at(lag->header, ErrorKind::SyntaxError, "no 'force <j>' entries");
        int expect = 0;
        for (const auto &[j, line] : force_lines) {
            if (j != expect) fail_at(*line, ErrorKind::SyntaxError, "forces must be numbered 0, 1, 2, ...");
            ++expect;
            auto parts = split_top_level(value_of(*line));
            if (parts.size() != spec.q.size())
                fail_at(*line, ErrorKind::DimensionMismatch,
                        "force has " + std::to_string(parts.size()) + " entries, expected " + std::to_string(spec.q.size()));
            std::vector<Expr> col;
            for (const auto &p : parts) col.push_back(parse_at(dag, *line, p, scope));
            spec.force.push_back(std::move(col));
        }
        auto built = euler_lagrange(model.dag, spec, model.name, model.params, model.domain);
        model.drift = std::move(built.drift);
        model.inputs = std::move(built.inputs);
        model.lagrangian = built.lagrangian;
    } else {
        const Section *d = find_one("drift");
        if (d) {
            model.drift = read_column(*d, n);
        } else {
            model.drift.assign(n, dag.zero());
        }
        std::map<int, const Section *> inputs;
        for (const Section *s : find_all("input"))
            if (!inputs.emplace(s->index, s).second) fail_at(s->header, ErrorKind::SyntaxError, "input given twice");
        int expect = 0;
        for (const auto &[j, s] : inputs) {
            if (j != expect) fail_at(s->header, ErrorKind::SyntaxError, "inputs must be numbered 0, 1, 2, ...");
            ++expect;
            model.inputs.push_back(read_column(*s, n));
        }
        if (model.inputs.empty()) throw Error(ErrorKind::DimensionMismatch, "model has no [input j] sections");
    }

    std::map<int, const Section *> ansatz;
    for (const Section *s : find_all("ansatz"))
        if (!ansatz.emplace(s->index, s).second) fail_at(s->header, ErrorKind::SyntaxError, "ansatz given twice");
    if (!ansatz.empty()) {
        int expect = 1;
        for (const auto &[i, s] : ansatz) {
            if (i != expect) fail_at(s->header, ErrorKind::SyntaxError, "ansatz fields must be numbered 1..m");
            ++expect;
            model.ansatz.push_back(read_column(*s, model.num_inputs()));
        }
        if (static_cast<int>(model.ansatz.size()) != model.m())
            throw Error(ErrorKind::DimensionMismatch, "ansatz needs exactly m = " + std::to_string(model.m()) + " fields");
    }
    return model;
}

SystemModel load_model(const std::string &path, const linalg::CheckConfig &cfg)
{
    std::string base = path;
    if (auto slash = base.find_last_of('/'); slash != std::string::npos) base = base.substr(slash + 1);
    if (auto dot = base.find_last_of('.'); dot != std::string::npos) base = base.substr(0, dot);
    SystemModel model = parse_model(read_file(path), base);
    validate(model, cfg);
    return model;
}

std::vector<Point> sample_points(const SystemModel &model, const linalg::CheckConfig &cfg, std::span<const Expr> probe)
{
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    const auto ids = model.state_ids();
    const Point base = model.base_point();
    std::vector<Point> out;
    int rejected = 0;
    while (static_cast<int>(out.size()) < cfg.n_points) {
        Point p = base;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            std::uniform_real_distribution<double> u(model.domain[i].lo, model.domain[i].hi);
            p[ids[i]] = u(rng);
        }
        bool ok = true;
        if (!probe.empty()) {
            expr::Evaluator ev(*model.dag, p);
            try {
                for (const Expr &e : probe) ev.value(e);
            } catch (const EvalError &) {
                ok = false;
            }
        }
        if (ok) {
            out.push_back(std::move(p));
        } else if (++rejected > cfg.max_resample) {
            throw Error(ErrorKind::RankNotLocallyConstant, "too many sample points where the model cannot be evaluated");
        }
    }
    return out;
}

void validate(const SystemModel &model, const linalg::CheckConfig &cfg)
{
    const std::size_t n = model.n();
    if (model.drift.size() != n) throw Error(ErrorKind::DimensionMismatch, "drift has " + std::to_string(model.drift.size()) + " rows, expected " + std::to_string(n));
    for (std::size_t j = 0; j < model.inputs.size(); ++j)
        if (model.inputs[j].size() != n)
            throw Error(ErrorKind::DimensionMismatch, "input " + std::to_string(j) + " has " + std::to_string(model.inputs[j].size()) +
                                                          " rows, expected " + std::to_string(n));
    if (model.domain.size() != n) throw Error(ErrorKind::DimensionMismatch, "domain does not cover every state");
    for (const auto &col : model.ansatz)
        if (col.size() != model.num_inputs()) throw Error(ErrorKind::DimensionMismatch, "ansatz column has wrong length");

    std::vector<Expr> probe = model.drift;
    for (const auto &g : model.inputs) probe.insert(probe.end(), g.begin(), g.end());
    auto points = sample_points(model, cfg, probe);
    std::vector<std::optional<int>> ranks;
    int full = 0;
    const auto m1 = static_cast<Eigen::Index>(model.num_inputs());
    for (const auto &p : points) {
        expr::Evaluator ev(*model.dag, p);
        linalg::Matrix g(static_cast<Eigen::Index>(n), m1);
        for (Eigen::Index j = 0; j < m1; ++j)
            for (std::size_t i = 0; i < n; ++i) g(static_cast<Eigen::Index>(i), j) = ev.value(model.inputs[static_cast<std::size_t>(j)][i]);
        if (linalg::rank_at(g, cfg.tol_rel) == m1) ++full;
    }
    if (full < linalg::kModalFraction * static_cast<double>(points.size()))
        throw Error(ErrorKind::DependentInputs, "input fields are linearly dependent at " + std::to_string(points.size() - static_cast<std::size_t>(full)) +
                                                    " of " + std::to_string(points.size()) + " sample points");
}

// ---------------------------------------------------------------------------
// Lagrangian mechanics

SystemModel euler_lagrange(std::shared_ptr<ExprDag> dagp, const LagrangianSpec &spec, std::string name,
                           std::vector<std::pair<std::string, double>> params, std::vector<Interval> domain)
{
    ExprDag &dag = *dagp;
    const std::size_t k = spec.q.size();
    if (spec.v.size() != k) throw Error(ErrorKind::DimensionMismatch, "q and v have different lengths");
    for (const auto &col : spec.force)
        if (col.size() != k) throw Error(ErrorKind::DimensionMismatch, "force column has wrong length");
    std::vector<Expr> q, v;
    for (const auto &s : spec.q) q.push_back(dag.symbol(s));
    for (const auto &s : spec.v) v.push_back(dag.symbol(s));

    SystemModel model;
    model.dag = dagp;
    model.name = std::move(name);
    model.params = std::move(params);
    for (const auto &s : spec.q) model.states.push_back(s);
    for (const auto &s : spec.v) model.states.push_back(s);
    if (domain.size() != 2 * k) domain.assign(2 * k, Interval{});
    model.domain = std::move(domain);

    std::vector<Expr> dT_dv(k);
    for (std::size_t i = 0; i < k; ++i) dT_dv[i] = dag.diff(spec.T, v[i]);
    std::vector<Expr> mass(k * k);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) mass[i * k + j] = dag.diff(dT_dv[i], v[j]);

    // Quadratic in v: every third velocity derivative vanishes. Structural
    // zeros settle most cases; the rest are checked numerically below.
    std::vector<Expr> third;
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = i; j < k; ++j)
            for (std::size_t l = j; l < k; ++l) {
                Expr d = dag.diff(mass[i * k + j], v[l]);
                if (!d.is_zero()) third.push_back(d);
            }
    // A quadratic form has no terms of lower degree in v either.
    Point mid = model.base_point();
    {
        auto ids = model.state_ids();
        for (std::size_t i = 0; i < ids.size(); ++i) mid[ids[i]] = 0.5 * (model.domain[i].lo + model.domain[i].hi);
    }
    if (!third.empty()) {
        std::mt19937_64 rng(7);
        auto ids = model.state_ids();
        for (int trial = 0; trial < 5; ++trial) {
            Point p = mid;
            for (std::size_t i = 0; i < ids.size(); ++i) {
                std::uniform_real_distribution<double> u(model.domain[i].lo, model.domain[i].hi);
                p[ids[i]] = u(rng);
            }
            expr::Evaluator ev(dag, p);
            for (const Expr &d : third)
                if (std::fabs(ev.value(d)) > 1e-9) throw Error(ErrorKind::NotQuadratic, "kinetic energy is not quadratic in the velocities");
        }
    }

    {
        expr::Evaluator ev(dag, mid);
        linalg::Matrix m(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < k; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = ev.value(mass[i * k + j]);
        if (linalg::rank_at(m, 1e-12) < static_cast<int>(k)) throw Error(ErrorKind::SingularMass, "mass matrix is singular at the reference point");
    }

    // M dv/dt = dT/dq - dV/dq - (d^2 T / dv dq) v + F u
    std::vector<Expr> rhs(k);
    for (std::size_t i = 0; i < k; ++i) {
        std::vector<Expr> terms;
        terms.push_back(dag.diff(spec.T, q[i]));
        terms.push_back(dag.neg(dag.diff(spec.V, q[i])));
        for (std::size_t j = 0; j < k; ++j) {
            Expr c = dag.diff(dT_dv[i], q[j]);
            if (!c.is_zero()) terms.push_back(dag.neg(dag.mul(c, v[j])));
        }
        rhs[i] = dag.sum(terms);
    }
    auto acc = dag.solve(mass, rhs);
    model.drift = v;
    model.drift.insert(model.drift.end(), acc.begin(), acc.end());
    for (const auto &force : spec.force) {
        std::vector<Expr> col(k, dag.zero());
        auto a = dag.solve(mass, force);
        col.insert(col.end(), a.begin(), a.end());
        model.inputs.push_back(std::move(col));
    }
    model.lagrangian = std::make_shared<LagrangianSpec>(spec);
    return model;
}

// ---------------------------------------------------------------------------
// Writing

namespace {

std::string format_number(double v)
{
    // Shortest text that reads back to the same double.
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

// Prints a set of expressions, hoisting shared subexpressions into
// definitions so that the output stays linear in the graph size.
class Printer {
public:
    Printer(const ExprDag &dag, std::unordered_set<std::string> reserved) : dag_(dag), reserved_(std::move(reserved)) {}

    void count(Expr root)
    {
        std::vector<expr::NodeId> stack{root.id()};
        while (!stack.empty()) {
            auto id = stack.back();
            stack.pop_back();
            if (++uses_[id] > 1) continue;
            if (dag_.node(id).op == expr::Op::SolveComp)
                throw Error(ErrorKind::SyntaxError, "expression contains a linear solve and cannot be written as text");
            dag_.for_each_child(id, [&](expr::NodeId c) { stack.push_back(c); });
        }
    }

    std::string print(Expr e) { return render(e.id()).first; }

    const std::vector<std::pair<std::string, std::string>> &defs() const { return defs_; }

    void name(expr::NodeId id, const std::string &label) { names_[id] = label; }

private:
    bool atomic(expr::NodeId id) const
    {
        auto op = dag_.node(id).op;
        return op == expr::Op::Constant || op == expr::Op::Symbol;
    }

    std::pair<std::string, int> render(expr::NodeId id)
    {
        if (auto it = names_.find(id); it != names_.end()) return {it->second, 5};
        auto r = render_node(id);
        if (!atomic(id) && uses_[id] > 1 && r.first.size() > 12) {
            std::string label;
            do {
                label = "_e" + std::to_string(next_++);
            } while (reserved_.count(label));
            defs_.emplace_back(label, r.first);
            names_[id] = label;
            return {label, 5};
        }
        return r;
    }

    std::string wrapped(expr::NodeId c, int min_prec)
    {
        auto [s, p] = render(c);
        return p < min_prec ? "(" + s + ")" : s;
    }

    std::pair<std::string, int> render_node(expr::NodeId id)
    {
        using expr::Op;
        const auto &n = dag_.node(id);
        switch (n.op) {
        case Op::Constant: {
            const auto &c = dag_.constant_of(id);
            if (c.exact) {
                std::string s = std::to_string(c.q.num);
                if (c.q.den != 1) return {s + "/" + std::to_string(c.q.den), c.q.num < 0 ? 1 : 2};
                return {s, c.q.num < 0 ? 3 : 5};
            }
            std::string s = format_number(c.value);
            return {s, c.value < 0 ? 3 : (s.find('e') != std::string::npos ? 4 : 5)};
        }
        case Op::Symbol: return {dag_.symbol_name(static_cast<expr::SymbolId>(n.aux)), 5};
        case Op::Add: {
            std::string l = wrapped(n.lhs, 1);
            const auto &r = dag_.node(n.rhs);
            if (r.op == Op::Neg && !names_.count(n.rhs) && uses_[n.rhs] <= 1) return {l + " - " + wrapped(r.lhs, 2), 1};
            return {l + " + " + wrapped(n.rhs, 1), 1};
        }
        case Op::Mul: return {wrapped(n.lhs, 2) + "*" + wrapped(n.rhs, 3), 2};
        case Op::Div: return {wrapped(n.lhs, 2) + "/" + wrapped(n.rhs, 3), 2};
        case Op::Pow: {
            std::string e = n.aux < 0 ? "(" + std::to_string(n.aux) + ")" : std::to_string(n.aux);
            return {wrapped(n.lhs, 5) + "^" + e, 4};
        }
        case Op::Neg: return {"-" + wrapped(n.lhs, 3), 3};
        case Op::Sin: return {"sin(" + render(n.lhs).first + ")", 5};
        case Op::Cos: return {"cos(" + render(n.lhs).first + ")", 5};
        case Op::Tan: return {"tan(" + render(n.lhs).first + ")", 5};
        case Op::SolveComp: break;
        }
        throw Error(ErrorKind::SyntaxError, "expression contains a linear solve and cannot be written as text");
    }

    const ExprDag &dag_;
    std::unordered_set<std::string> reserved_;
    std::unordered_map<expr::NodeId, int> uses_;
    std::unordered_map<expr::NodeId, std::string> names_;
    std::vector<std::pair<std::string, std::string>> defs_;
    int next_ = 0;
};

} // namespace

std::string write_model(const SystemModel &model)
{
    std::unordered_set<std::string> reserved(model.states.begin(), model.states.end());
    for (const auto &[k, v] : model.params) reserved.insert(k);
    for (const auto &[k, v] : model.defs) reserved.insert(k);
    Printer printer(*model.dag, reserved);

    std::vector<Expr> all;
    if (model.lagrangian) {
        all.push_back(model.lagrangian->T);
        all.push_back(model.lagrangian->V);
        for (const auto &col : model.lagrangian->force) all.insert(all.end(), col.begin(), col.end());
    } else {
        all.insert(all.end(), model.drift.begin(), model.drift.end());
        for (const auto &col : model.inputs) all.insert(all.end(), col.begin(), col.end());
    }
    for (const auto &col : model.ansatz) all.insert(all.end(), col.begin(), col.end());
    for (const Expr &e : all) printer.count(e);

    std::vector<std::string> body;
    auto emit = [&](const std::string &s) { body.push_back(s); };
    auto column = [&](const std::vector<Expr> &col) {
        for (const Expr &e : col) emit(printer.print(e));
    };
    if (model.lagrangian) {
        const auto &l = *model.lagrangian;
        emit("[lagrangian]");
        std::string q = "q =", v = "v =";
        for (const auto &s : l.q) q += " " + s;
        for (const auto &s : l.v) v += " " + s;
        emit(q);
        emit(v);
        emit("T = " + printer.print(l.T));
        emit("V = " + printer.print(l.V));
        for (std::size_t j = 0; j < l.force.size(); ++j) {
            std::string line = "force " + std::to_string(j) + " =";
            for (std::size_t i = 0; i < l.force[j].size(); ++i) line += (i ? ", " : " ") + printer.print(l.force[j][i]);
            emit(line);
        }
    } else {
        emit("[drift]");
        column(model.drift);
        for (std::size_t j = 0; j < model.inputs.size(); ++j) {
            emit("");
            emit("[input " + std::to_string(j) + "]");
            column(model.inputs[j]);
        }
    }
    for (std::size_t i = 0; i < model.ansatz.size(); ++i) {
        emit("");
        emit("[ansatz c " + std::to_string(i + 1) + "]");
        column(model.ansatz[i]);
    }

    std::ostringstream out;
    out << "# " << model.name << "\n";
    if (!model.lagrangian) {
        out << "[states]\n";
        for (std::size_t i = 0; i < model.states.size(); ++i) out << model.states[i] << ((i + 1) % 10 == 0 || i + 1 == model.states.size() ? "\n" : " ");
    }
    if (!model.params.empty()) {
        out << "\n[params]\n";
        for (const auto &[k, v] : model.params) out << k << " = " << format_number(v) << "\n";
    }
    out << "\n[domain]\n";
    for (std::size_t i = 0; i < model.states.size(); ++i)
        out << model.states[i] << " = " << format_number(model.domain[i].lo) << " " << format_number(model.domain[i].hi) << "\n";
    if (!printer.defs().empty()) {
        out << "\n[defs]\n";
        for (const auto &[k, v] : printer.defs()) out << k << " = " << v << "\n";
    }
    out << "\n";
    for (const auto &line : body) out << line << "\n";
    return out.str();
}

void save_model(const SystemModel &model, const std::string &path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::Io, "cannot write '" + path + "'");
    out << write_model(model);
}

std::vector<Expr> parse_expression_list(const SystemModel &model, std::string_view text)
{
    expr::Scope scope;
    for (const auto &s : model.states) scope.symbols.insert(s);
    for (const auto &[k, v] : model.params) scope.symbols.insert(k);
    for (const auto &[k, v] : model.defs) scope.macros.emplace(k, v);
    std::vector<Expr> out;
    for (const auto &line : logical_lines(text)) {
        // "let name = expr" defines a helper; "name = expr" is an entry that
        // later lines may refer to; a bare expression is an anonymous entry.
        std::string k, v;
        bool helper = line.text.rfind("let ", 0) == 0;
        std::string body = helper ? trim(std::string_view(line.text).substr(4)) : line.text;
        if (split_assignment(body, k, v) && expr::is_identifier(k)) {
            if (scope.knows(k)) fail_at(line, ErrorKind::SyntaxError, "name '" + k + "' already defined");
            Expr e = parse_at(*model.dag, line, v, scope);
            scope.macros.emplace(k, e);
            if (!helper) out.push_back(e);
            continue;
        }
        if (helper) fail_at(line, ErrorKind::SyntaxError, "expected 'let name = expression'");
        out.push_back(parse_at(*model.dag, line, body, scope));
    }
    return out;
}

std::vector<Expr> load_expression_list(const SystemModel &model, const std::string &path)
{
    return parse_expression_list(model, read_file(path));
}

} // namespace flatcheck::model
