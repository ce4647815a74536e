#include <doctest.h>

#include <cmath>
#include <random>

#include "mvol/grids.hpp"

using namespace mvol;

TEST_CASE("fd_weights reproduces classical stencils") {
    double h = 0.37;
    auto w2 = fd_weights(2, {-h, 0.0, h});
    CHECK(w2.weights[0] == doctest::Approx(1.0 / (h * h)).epsilon(1e-12));
    CHECK(w2.weights[1] == doctest::Approx(-2.0 / (h * h)).epsilon(1e-12));
    CHECK(w2.weights[2] == doctest::Approx(1.0 / (h * h)).epsilon(1e-12));

    auto w1 = fd_weights(1, {-h, 0.0, h});
    CHECK(w1.weights[0] == doctest::Approx(-0.5 / h).epsilon(1e-12));
    CHECK(w1.weights[1] == doctest::Approx(0.0));
    CHECK(w1.weights[2] == doctest::Approx(0.5 / h).epsilon(1e-12));
}

TEST_CASE("fd_weights left-biased third derivative matches the 5-point row") {
    double h = 0.25;
    auto w = fd_weights(3, {-4 * h, -3 * h, -2 * h, -h, 0.0});
    double s = 2.0 * h * h * h;
    CHECK(w.weights[0] * s == doctest::Approx(3.0).epsilon(1e-10));
    CHECK(w.weights[1] * s == doctest::Approx(-14.0).epsilon(1e-10));
    CHECK(w.weights[2] * s == doctest::Approx(24.0).epsilon(1e-10));
    CHECK(w.weights[3] * s == doctest::Approx(-18.0).epsilon(1e-10));
    CHECK(w.weights[4] * s == doctest::Approx(5.0).epsilon(1e-10));
}

TEST_CASE("fd_weights exact on monomials on random nodes") {
    std::mt19937_64 rng(1234);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> off(6);
        for (auto& o : off) o = u(rng);
        std::sort(off.begin(), off.end());
        bool dup = false;
        for (std::size_t i = 1; i < off.size(); ++i)
            if (off[i] - off[i - 1] < 1e-3) dup = true;
        if (dup) continue;
        for (int order = 1; order <= 3; ++order) {
            auto w = fd_weights(order, off);
            double wmag = 0.0;
            for (double wv : w.weights) wmag += std::abs(wv);
            for (int p = 0; p <= 5; ++p) {
                std::vector<double> vals(off.size());
                for (std::size_t k = 0; k < off.size(); ++k) vals[k] = std::pow(off[k], p);
                // derivative of x^p at 0: p! when p == order, else 0 (exact up to degree 5)
                double expect = (p == order) ? std::tgamma(p + 1.0) : 0.0;
                CHECK(std::abs(w.apply(vals.data()) - expect) < 1e-10 * std::max(1.0, wmag));
            }
        }
    }
}

TEST_CASE("fd_weights rejects duplicates and short stencils") {
    CHECK_THROWS_AS(fd_weights(2, {0.0, 0.0, 1.0}), error);
    CHECK_THROWS_AS(fd_weights(3, {0.0, 1.0}), error);
}

TEST_CASE("hyperbolic mesh contains s0 and refines around it") {
    double s0 = 1.2837;
    auto x = build_hyperbolic_mesh(s0, 0.0, 3.0 * s0, 50, 0.05);
    REQUIRE(x.size() == 51u);
    bool found = false;
    std::size_t i0 = 0;
    for (std::size_t i = 0; i < x.size(); ++i)
        if (x[i] == s0) { found = true; i0 = i; }
    CHECK(found);
    // minimal step adjacent to s0, growing monotonically outward
    double step_at_s0 = std::min(x[i0 + 1] - x[i0], x[i0] - x[i0 - 1]);
    for (std::size_t i = 1; i < x.size(); ++i)
        CHECK(x[i] - x[i - 1] >= step_at_s0 * (1.0 - 1e-12));
    for (std::size_t i = i0 + 1; i + 1 < x.size(); ++i)
        CHECK(x[i + 1] - x[i] >= x[i] - x[i - 1]);
    for (std::size_t i = 1; i < i0; ++i)
        CHECK(x[i] - x[i - 1] >= x[i + 1] - x[i]);
    // smooth step variation
    for (std::size_t i = 2; i < x.size(); ++i) {
        double r = (x[i] - x[i - 1]) / (x[i - 1] - x[i - 2]);
        CHECK(r > 0.5);
        CHECK(r < 2.0);
    }
}

TEST_CASE("hyperbolic mesh degenerates to uniform for large eta") {
    auto x = build_hyperbolic_mesh(1.0, 0.0, 2.0, 40, 1e9);
    double h = 2.0 / 40;
    for (std::size_t i = 0; i < x.size(); ++i)
        CHECK(std::abs(x[i] - i * h) < 1e-10);
}

TEST_CASE("hyperbolic mesh rejects s0 outside domain") {
    CHECK_THROWS_AS(build_hyperbolic_mesh(3.0, 0.0, 2.0, 40, 0.05), error);
}

TEST_CASE("build_mesh satisfies the coupled-step rule and row lengths") {
    double s0 = 1.2837;
    MeshParams mp;
    mp.n_strikes = 120;
    mp.k_max = 3.0 * s0;
    mp.b_last = 1.6 * s0;
    TimeGridParams tp;
    tp.steps_per_interval = 40;
    auto mesh = build_mesh(s0, {0.25, 0.5}, mp, tp);

    CHECK(mesh.strikes[static_cast<std::size_t>(mesh.n0)] == s0);
    CHECK(mesh.barrier(0) == s0);
    for (int j = 0; j < mesh.n_rows; ++j) {
        CHECK(mesh.row_len(j) == mesh.n0 + j + 1);
        // last node of row j is B_j
        CHECK(mesh.strikes[static_cast<std::size_t>(mesh.row_len(j) - 1)] == mesh.barrier(j));
    }
    // coupled steps: Delta_K(n0 + j) = Delta_B(j)
    for (int j = 0; j + 1 < mesh.n_rows; ++j) {
        double dk = mesh.strikes[static_cast<std::size_t>(mesh.n0 + j + 1)] - mesh.strikes[static_cast<std::size_t>(mesh.n0 + j)];
        double db = mesh.barrier(j + 1) - mesh.barrier(j);
        CHECK(dk == doctest::Approx(db).epsilon(1e-15));
    }
    CHECK(mesh.b_last() >= mp.b_last);
    CHECK(mesh.blank_layers == 4);

    // 3M + 6M pillars at 40 steps each -> 80 interior steps containing both
    CHECK(mesh.times.size() == 81u);
    CHECK(mesh.times[40] == 0.25);
    CHECK(mesh.times[80] == 0.5);
    CHECK(mesh.maturity_steps == std::vector<int>({40, 80}));
}

TEST_CASE("build_mesh time-step ratios within the BDF2 bound") {
    double s0 = 1.2837;
    MeshParams mp;
    mp.n_strikes = 80;
    mp.k_max = 3.0 * s0;
    mp.b_last = 1.5 * s0;
    TimeGridParams tp;
    tp.steps_per_interval = 10;
    auto mesh = build_mesh(s0, {0.25, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0}, mp, tp);
    double cap = 1.0 + std::sqrt(2.0);
    for (std::size_t m = 2; m < mesh.times.size(); ++m) {
        double r = (mesh.times[m] - mesh.times[m - 1]) / (mesh.times[m - 1] - mesh.times[m - 2]);
        CHECK(r < cap);
    }
}
