#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include <flatcheck/error.hpp>

namespace flatcheck::linalg {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct CheckConfig {
    int n_points = 25;
    double tol_rel = 1e-9;
    std::uint64_t seed = 1;
    int max_resample = 50;

    // Throws InvalidConfig.
    void validate() const;
};

// Numerical rank by singular-value thresholding. Columns are normalized first,
// so the result does not depend on column scaling.
int rank_at(const Matrix &cols, double tol_rel);

// Distance of v from the column span, relative to 1 + |v|.
double span_residual(const Vector &v, const Matrix &cols, double tol_rel);
bool in_span_at(const Vector &v, const Matrix &cols, double tol_rel);

// Orthonormal basis (as columns) of the kernel of a rows x cols matrix.
Matrix nullspace_at(const Matrix &a, double tol_rel);

// Orthonormal basis of the column span.
Matrix range_at(const Matrix &cols, double tol_rel);

// Smallest principal-angle based distance between two column spans of equal
// dimension; 0 when they coincide.
double subspace_distance(const Matrix &a, const Matrix &b);

std::vector<std::vector<double>> to_rows(const Matrix &m);
Matrix from_columns(const std::vector<std::vector<double>> &cols);

// Generic-point protocol: the locally constant value is the one attained at
// a qualified majority of the points. Points where the computation failed
// (nullopt) count as disagreeing.
struct Modal {
    int value = 0;
    int agree = 0;
    int total = 0;
};

inline constexpr double kModalFraction = 0.8;

// Throws RankNotLocallyConstant when no value reaches kModalFraction.
Modal modal(std::span<const std::optional<int>> values, const char *what);

} // namespace flatcheck::linalg
