#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <flatcheck/indices.hpp>
#include <flatcheck/model.hpp>

namespace flatcheck::normal {

using expr::Expr;
using model::SystemModel;

// Triangular form with the given indices in its own coordinates (named by
// tf_state_names). drift_complexity 0 gives a = b = 0; larger values raise the
// degree of the random polynomials a^i_j and b_j. For s = 1 the model carries
// the c-field ansatz of the normal form.
SystemModel generate_tf(const StructureIndices &idx, std::uint64_t seed, int drift_complexity = 1);

// z = Phi(x) and the static feedback w = alpha(x) + beta(x) u that relate a
// scrambled model (states x, inputs u) to the original one (states z, inputs w).
struct Scramble {
    std::vector<Expr> diffeo;  // Phi, n expressions in x
    std::vector<Expr> inverse; // x as expressions in z
    std::vector<Expr> alpha;   // m+1 expressions in x
    std::vector<Expr> beta;    // (m+1)^2, row-major, in x
    std::uint64_t seed = 0;
};

// Random unit-triangular polynomial diffeomorphism (after a permutation) plus
// unit-triangular polynomial feedback. coupling scales the random
// coefficients; coupling 0 gives a pure relabeling. New states are x1..xn.
std::pair<SystemModel, Scramble> scramble(const SystemModel &model, std::uint64_t seed, double coupling = 0.5);

// Contact form with compatible drift (random a^i_j when with_drift), states
// z0, z<level>_<chain>.
SystemModel contact_form(int m, int k, std::uint64_t seed, bool with_drift);
// Driftless extended Goursat form with chain lengths k[j].
SystemModel chained_form(std::span<const int> k);

// Gantry crane from its Lagrangian, states q1..q5, v1..v5, with the c-field
// ansatz attached.
SystemModel crane_model();
// x_L, y_L, z_L in the model's graph.
std::vector<Expr> crane_load_position(const SystemModel &crane);

struct Trajectory {
    std::vector<double> t;
    std::vector<std::vector<double>> x;
};

// Fixed-step RK4. Inputs are expressions in the states, the parameters and
// the symbol `t`. Throws NonFiniteState.
Trajectory integrate(const SystemModel &model, std::span<const Expr> inputs, std::span<const double> x0, double horizon,
                     double step);
std::string to_csv(const SystemModel &model, const Trajectory &traj);

} // namespace flatcheck::normal
