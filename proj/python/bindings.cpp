#include <flatcheck/normalforms.hpp>
#include <flatcheck/parser.hpp>
#include <flatcheck/sfechk.hpp>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <json.hpp>

namespace py = pybind11;
using namespace flatcheck;

namespace {

py::object to_python(const nlohmann::ordered_json &j) { return py::module_::import("json").attr("loads")(j.dump()); }

sfe::Form form_of(const std::string &s)
{
    if (s == "auto") return sfe::Form::Auto;
    if (s == "tf0") return sfe::Form::TF0;
    if (s == "tf1") return sfe::Form::TF1;
    throw Error(ErrorKind::InvalidConfig, "form must be auto, tf0 or tf1");
}

sfe::CheckOptions options_of(int points, double tol, std::uint64_t seed, bool all_conditions)
{
    sfe::CheckOptions o;
    o.cfg.n_points = points;
    o.cfg.tol_rel = tol;
    o.cfg.seed = seed;
    o.all_conditions = all_conditions;
    o.cfg.validate();
    return o;
}

StructureIndices indices_of(const std::vector<int> &v)
{
    if (v.size() < 4) throw Error(ErrorKind::BadIndices, "indices are m, s, k_zeta, k_chi, k_xi_0..k_xi_m");
    StructureIndices idx{v[0], v[1], v[2], v[3], std::vector<int>(v.begin() + 4, v.end())};
    idx.validate();
    return idx;
}

} // namespace

PYBIND11_MODULE(_core, m)
{
    m.doc() = "Static feedback equivalence to triangular forms for control-affine systems";

    static py::exception<Error> error(m, "FlatcheckError", PyExc_ValueError);
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error &e) {
            PyErr_SetString(error.ptr(), (std::string(to_string(e.kind())) + ": " + e.what()).c_str());
        }
    });

    py::class_<model::SystemModel>(m, "Model")
        .def_property_readonly("name", [](const model::SystemModel &s) { return s.name; })
        .def_property_readonly("states", [](const model::SystemModel &s) { return s.states; })
        .def_property_readonly("n", &model::SystemModel::n)
        .def_property_readonly("num_inputs", &model::SystemModel::num_inputs)
        .def("to_text", [](const model::SystemModel &s) { return model::write_model(s); })
        .def("__repr__", [](const model::SystemModel &s) {
            return "<Model " + s.name + ": " + std::to_string(s.n()) + " states, " + std::to_string(s.num_inputs()) + " inputs>";
        });

    m.def("load_model", [](const std::string &path) { return model::load_model(path); }, py::arg("path"));
    m.def("parse_model", [](const std::string &text, const std::string &name) { return model::parse_model(text, name); },
          py::arg("text"), py::arg("name") = "model");
    m.def("crane_model", &normal::crane_model);
    m.def("generate_tf",
          [](const std::vector<int> &indices, std::uint64_t seed, int complexity) {
              return normal::generate_tf(indices_of(indices), seed, complexity);
          },
          py::arg("indices"), py::arg("seed") = 1, py::arg("complexity") = 1,
          "indices = (m, s, k_zeta, k_chi, k_xi_0, ..., k_xi_m)");
    m.def("scramble",
          [](const model::SystemModel &s, std::uint64_t seed, double coupling) { return normal::scramble(s, seed, coupling).first; },
          py::arg("model"), py::arg("seed"), py::arg("coupling") = 0.5);

    m.def("check",
          [](const model::SystemModel &s, const std::string &form, int points, double tol, std::uint64_t seed, bool all_conditions) {
              auto rep = sfe::check(s, form_of(form), options_of(points, tol, seed, all_conditions));
              auto d = to_python(rep.to_json());
              d["exit_code"] = rep.exit_code();
              return d;
          },
          py::arg("model"), py::arg("form") = "auto", py::arg("points") = 25, py::arg("tol") = 1e-9, py::arg("seed") = 1,
          py::arg("all_conditions") = false);

    m.def("verify_output",
          [](const model::SystemModel &s, const std::string &phi, const std::string &form, int points, double tol, std::uint64_t seed) {
              auto list = model::parse_expression_list(s, phi);
              auto res = sfe::verify_flat_output(s, list, form_of(form), options_of(points, tol, seed, false));
              py::dict d;
              d["target"] = res.target;
              d["ok"] = res.check.ok;
              d["independent"] = res.check.independent;
              d["residual"] = res.check.residual;
              d["report"] = to_python(res.report.to_json());
              return d;
          },
          py::arg("model"), py::arg("phi"), py::arg("form") = "auto", py::arg("points") = 25, py::arg("tol") = 1e-9,
          py::arg("seed") = 1, "phi is an expression list, one output per line");

    m.def("verify_transformation",
          [](const model::SystemModel &s, const std::string &text, const std::vector<int> &indices, int points, std::uint64_t seed,
             double residual_tol) {
              auto idx = indices_of(indices);
              auto tr = sfe::parse_transformation(s, text, idx);
              auto rep = sfe::verify_transformation(s, tr, idx, options_of(points, 1e-9, seed, false).cfg, residual_tol);
              py::dict d;
              d["ok"] = rep.ok;
              d["max_residual"] = rep.max_residual;
              py::list rows;
              for (const auto &r : rep.rows) rows.append(py::make_tuple(r.state, r.value));
              d["rows"] = rows;
              return d;
          },
          py::arg("model"), py::arg("text"), py::arg("indices"), py::arg("points") = 25, py::arg("seed") = 1,
          py::arg("residual_tol") = 1e-8);

    m.def("simulate",
          [](const model::SystemModel &s, const std::vector<std::string> &inputs, const std::vector<double> &x0, double horizon,
             double step) {
              expr::Scope scope;
              for (const auto &st : s.states) scope.symbols.insert(st);
              for (const auto &[k, v] : s.params) scope.symbols.insert(k);
              for (const auto &[k, v] : s.defs) scope.macros.emplace(k, v);
              if (!scope.knows("t")) scope.symbols.insert("t");
              std::vector<expr::Expr> u;
              for (const auto &text : inputs) u.push_back(expr::parse_expr(*s.dag, text, scope));
              auto traj = normal::integrate(s, u, x0, horizon, step);
              return py::make_tuple(traj.t, traj.x);
          },
          py::arg("model"), py::arg("inputs"), py::arg("x0"), py::arg("horizon"), py::arg("step"));

    m.def("state_count", [](const std::vector<int> &indices) { return indices_of(indices).state_count(); }, py::arg("indices"));
    m.def("template_states", [](const std::vector<int> &indices) { return tf_state_names(indices_of(indices)); }, py::arg("indices"));
}
