#include <flatcheck/linalg.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>

namespace flatcheck::linalg {

namespace {

constexpr double kAbsZero = 1e-12;
constexpr double kEps = std::numeric_limits<double>::epsilon();

Matrix normalized(const Matrix &cols)
{
    Matrix out(cols.rows(), 0);
    std::vector<Eigen::Index> keep;
    for (Eigen::Index j = 0; j < cols.cols(); ++j)
        if (cols.col(j).norm() > kAbsZero) keep.push_back(j);
    out.resize(cols.rows(), static_cast<Eigen::Index>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = cols.col(keep[k]).normalized();
    return out;
}

struct Range {
    Matrix basis;
    double kappa = 1.0;
};

Range range_with_condition(const Matrix &cols, double tol_rel)
{
    Matrix a = normalized(cols);
    Range r;
    if (a.cols() == 0 || a.rows() == 0) {
        r.basis = Matrix(cols.rows(), 0);
        return r;
    }
    Eigen::JacobiSVD<Matrix> svd(a, Eigen::ComputeThinU);
    const auto &s = svd.singularValues();
    const double smax = s.size() ? s(0) : 0.0;
    int rank = 0;
    if (smax > kAbsZero)
        for (Eigen::Index i = 0; i < s.size(); ++i)
            if (s(i) > tol_rel * smax) ++rank;
    r.basis = svd.matrixU().leftCols(rank);
    if (rank > 0) r.kappa = smax / s(rank - 1);
    return r;
}

} // namespace

void CheckConfig::validate() const
{
    if (n_points < 5) throw Error(ErrorKind::InvalidConfig, "n_points must be at least 5");
    if (!(tol_rel > 0.0 && tol_rel < 1e-3)) throw Error(ErrorKind::InvalidConfig, "tol_rel must lie in (0, 1e-3)");
    if (max_resample < 0) throw Error(ErrorKind::InvalidConfig, "max_resample must be non-negative");
}

int rank_at(const Matrix &cols, double tol_rel) { return static_cast<int>(range_with_condition(cols, tol_rel).basis.cols()); }

Matrix range_at(const Matrix &cols, double tol_rel) { return range_with_condition(cols, tol_rel).basis; }

double span_residual(const Vector &v, const Matrix &cols, double tol_rel)
{
    Range r = range_with_condition(cols, tol_rel);
    Vector res = v - r.basis * (r.basis.transpose() * v);
    // Round-off in an ill-conditioned basis leaks into the residual; scale it
    // back so that the comparison against tol_rel stays meaningful.
    const double guard = 1.0 + r.kappa * kEps / tol_rel;
    return res.norm() / ((1.0 + v.norm()) * guard);
}

bool in_span_at(const Vector &v, const Matrix &cols, double tol_rel) { return span_residual(v, cols, tol_rel) <= tol_rel; }

Matrix nullspace_at(const Matrix &a, double tol_rel)
{
    const Eigen::Index n = a.cols();
    if (n == 0) return Matrix(0, 0);
    if (a.rows() == 0) return Matrix::Identity(n, n);
    Eigen::JacobiSVD<Matrix> svd(a, Eigen::ComputeFullV);
    const auto &s = svd.singularValues();
    const double smax = s.size() ? s(0) : 0.0;
    Eigen::Index rank = 0;
    if (smax > kAbsZero)
        for (Eigen::Index i = 0; i < s.size(); ++i)
            if (s(i) > tol_rel * smax) ++rank;
    return svd.matrixV().rightCols(n - rank);
}

double subspace_distance(const Matrix &a, const Matrix &b)
{
    if (a.cols() == 0 && b.cols() == 0) return 0.0;
    if (a.cols() != b.cols()) return 1.0;
    Eigen::HouseholderQR<Matrix> qa(a), qb(b);
    Matrix ua = qa.householderQ() * Matrix::Identity(a.rows(), a.cols());
    Matrix ub = qb.householderQ() * Matrix::Identity(b.rows(), b.cols());
    Matrix res = ub - ua * (ua.transpose() * ub);
    return res.norm();
}

std::vector<std::vector<double>> to_rows(const Matrix &m)
{
    std::vector<std::vector<double>> out(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) out[static_cast<std::size_t>(i)].push_back(m(i, j));
    return out;
}

Matrix from_columns(const std::vector<std::vector<double>> &cols)
{
    if (cols.empty()) return Matrix(0, 0);
    const std::size_t n = cols.front().size();
    Matrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) {
        if (cols[j].size() != n) throw Error(ErrorKind::DimensionMismatch, "columns have different lengths");
        for (std::size_t i = 0; i < n; ++i) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = cols[j][i];
    }
    return m;
}

Modal modal(std::span<const std::optional<int>> values, const char *what)
{
    std::map<int, int> counts;
    for (const auto &v : values)
        if (v) ++counts[*v];
    Modal out;
    out.total = static_cast<int>(values.size());
    for (const auto &[v, c] : counts)
        if (c > out.agree) {
            out.value = v;
            out.agree = c;
        }
    if (out.total == 0 || out.agree < kModalFraction * out.total)
        throw Error(ErrorKind::RankNotLocallyConstant, std::string(what) + ": no value is attained at " +
                                                           std::to_string(static_cast<int>(kModalFraction * 100)) +
                                                           "% of the sample points (best " + std::to_string(out.agree) + "/" +
                                                           std::to_string(out.total) + ")");
    return out;
}

} // namespace flatcheck::linalg
