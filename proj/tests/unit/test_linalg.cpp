#include <flatcheck/linalg.hpp>

#include <doctest.h>

#include <random>

using namespace flatcheck;
using namespace flatcheck::linalg;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64 &rng)
{
    std::normal_distribution<double> g(0, 1);
    Matrix a(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) a(i, j) = g(rng);
    return a;
}

} // namespace

TEST_CASE("rank examples")
{
    Matrix a(2, 2);
    a << 1, 0, 0, 1;
    CHECK(rank_at(a, 1e-9) == 2);
    a << 1, 2, 0, 0;
    CHECK(rank_at(a, 1e-9) == 1);
    CHECK(rank_at(Matrix::Zero(3, 2), 1e-9) == 0);
    CHECK(rank_at(Matrix(3, 0), 1e-9) == 0);
}

TEST_CASE("rank of constructed low-rank products")
{
    std::mt19937_64 rng(3);
    for (int t = 0; t < 50; ++t) {
        int n = 3 + t % 8, m = 2 + t % 7;
        int r = 1 + t % std::min(n, m);
        Matrix a = random_matrix(n, r, rng) * random_matrix(r, m, rng);
        CHECK(rank_at(a, 1e-9) == r);
    }
}

TEST_CASE("rank is invariant under column permutation and scaling")
{
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> scale(0.1, 10.0);
    for (int t = 0; t < 30; ++t) {
        Matrix a = random_matrix(8, 3, rng) * random_matrix(3, 6, rng);
        Matrix b = a;
        std::vector<int> perm{0, 1, 2, 3, 4, 5};
        std::shuffle(perm.begin(), perm.end(), rng);
        for (int j = 0; j < 6; ++j) b.col(j) = scale(rng) * a.col(perm[static_cast<std::size_t>(j)]);
        CHECK(rank_at(b, 1e-9) == rank_at(a, 1e-9));
    }
}

TEST_CASE("span membership")
{
    Matrix e(2, 2);
    e << 1, 0, 0, 1;
    Vector v(2);
    v << 1, 1;
    CHECK(in_span_at(v, e, 1e-9));
    Matrix e1(3, 1);
    e1 << 1, 0, 0;
    Vector w(3);
    w << 0, 0, 1;
    CHECK_FALSE(in_span_at(w, e1, 1e-9));
    CHECK(span_residual(w, e1, 1e-9) > 0.1);
}

TEST_CASE("nullspace basis")
{
    Matrix a(1, 2);
    a << 1, 0;
    Matrix k = nullspace_at(a, 1e-9);
    REQUIRE(k.cols() == 1);
    CHECK(std::abs(k(0, 0)) < 1e-14);
    CHECK(std::abs(std::abs(k(1, 0)) - 1.0) < 1e-14);
    CHECK(nullspace_at(Matrix::Identity(3, 3), 1e-9).cols() == 0);

    std::mt19937_64 rng(9);
    for (int t = 0; t < 20; ++t) {
        Matrix b = random_matrix(4, 2, rng) * random_matrix(2, 7, rng);
        Matrix n = nullspace_at(b, 1e-9);
        CHECK(n.cols() == 7 - rank_at(b, 1e-9));
        CHECK((n.transpose() * n - Matrix::Identity(n.cols(), n.cols())).norm() < 1e-12);
        CHECK((b * n).norm() < 1e-10 * b.norm());
    }
}

TEST_CASE("modal values")
{
    std::vector<std::optional<int>> v(10, 3);
    v[0] = 2;
    v[1] = std::nullopt;
    auto m = modal(v, "test");
    CHECK(m.value == 3);
    CHECK(m.agree == 8);
    v[2] = 2;
    CHECK_THROWS_AS(modal(v, "test"), Error);
}

TEST_CASE("config validation")
{
    CheckConfig c;
    CHECK_NOTHROW(c.validate());
    c.n_points = 2;
    CHECK_THROWS_AS(c.validate(), Error);
    c = {};
    c.tol_rel = 1e-2;
    CHECK_THROWS_AS(c.validate(), Error);
}
