#include <doctest.h>

#include <random>
#include <vector>

#include "mvol/banded.hpp"

using namespace mvol;

namespace {
// dense reference solve via Gaussian elimination with partial pivoting
std::vector<double> dense_solve(std::vector<std::vector<double>> a, std::vector<double> b) {
    int n = static_cast<int>(b.size());
    for (int col = 0; col < n; ++col) {
        int piv = col;
        for (int r = col + 1; r < n; ++r)
            if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
        std::swap(a[col], a[piv]);
        std::swap(b[col], b[piv]);
        for (int r = col + 1; r < n; ++r) {
            double f = a[r][col] / a[col][col];
            for (int j = col; j < n; ++j) a[r][j] -= f * a[col][j];
            b[r] -= f * b[col];
        }
    }
    std::vector<double> x(b.size());
    for (int r = n - 1; r >= 0; --r) {
        double s = b[r];
        for (int j = r + 1; j < n; ++j) s -= a[r][j] * x[j];
        x[r] = s / a[r][r];
    }
    return x;
}
} // namespace

TEST_CASE("BandedLU matches dense solve on random pentadiagonal systems") {
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 30; ++trial) {
        int n = 5 + static_cast<int>(rng() % 40);
        int kl = 2, ku = 2;
        std::vector<std::vector<double>> dense(n, std::vector<double>(n, 0.0));
        BandedLU lu(n, kl, ku);
        for (int i = 0; i < n; ++i)
            for (int j = std::max(0, i - kl); j <= std::min(n - 1, i + ku); ++j) {
                double v = u(rng) + (i == j ? 3.0 : 0.0);
                dense[i][j] = v;
                lu.set(i, j, v);
            }
        std::vector<double> b(n);
        for (auto& x : b) x = u(rng);
        auto expect = dense_solve(dense, b);
        lu.factor();
        auto got = b;
        lu.solve(got);
        for (int i = 0; i < n; ++i) CHECK(got[i] == doctest::Approx(expect[i]).epsilon(1e-9));
    }
}

TEST_CASE("BandedLU pivots on zero diagonals") {
    // needs a row swap to factor
    BandedLU lu(3, 1, 1);
    lu.set(0, 0, 0.0);
    lu.set(0, 1, 2.0);
    lu.set(1, 0, 1.0);
    lu.set(1, 1, 1.0);
    lu.set(1, 2, 1.0);
    lu.set(2, 1, 4.0);
    lu.set(2, 2, 1.0);
    lu.factor();
    std::vector<double> b{2.0, 3.0, 5.0};
    lu.solve(b);
    // x solves: [0 2 0; 1 1 1; 0 4 1] x = [2,3,5] -> x2=1 -> x3=1 -> x1=1
    CHECK(b[0] == doctest::Approx(1.0));
    CHECK(b[1] == doctest::Approx(1.0));
    CHECK(b[2] == doctest::Approx(1.0));
}

TEST_CASE("BorderedBandSolver handles the rank-one last-columns block") {
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        int n = 12 + static_cast<int>(rng() % 30);
        int kl = 2, ku = 2;
        std::vector<std::vector<double>> dense(n, std::vector<double>(n, 0.0));
        BandedLU lu(n, kl, ku);
        for (int i = 0; i < n; ++i)
            for (int j = std::max(0, i - kl); j <= std::min(n - 1, i + ku); ++j) {
                double v = u(rng) + (i == j ? 4.0 : 0.0);
                dense[i][j] = v;
                lu.set(i, j, v);
            }
        // rank-one border u * v^T with v supported on the last 5 columns
        std::vector<double> uvec(n);
        for (auto& x : uvec) x = 0.3 * u(rng);
        std::vector<int> vidx;
        std::vector<double> vval;
        for (int k = 0; k < 5; ++k) {
            vidx.push_back(n - 5 + k);
            vval.push_back(u(rng));
        }
        for (int i = 0; i < n; ++i)
            for (std::size_t k = 0; k < vidx.size(); ++k) dense[i][vidx[k]] += uvec[i] * vval[k];

        std::vector<double> b(n);
        for (auto& x : b) x = u(rng);
        auto expect = dense_solve(dense, b);

        lu.factor();
        BorderedBandSolver solver(std::move(lu), uvec, vidx, vval);
        auto got = b;
        solver.solve(got);
        for (int i = 0; i < n; ++i) CHECK(got[i] == doctest::Approx(expect[i]).epsilon(1e-8));
    }
}
