#include <doctest.h>

#include <cmath>
#include <random>

#include "mvol/surfaces.hpp"
#include "support/oracles.hpp"

using namespace mvol;

namespace {
const double S0 = 1.2837;

VolSurface::SliceSpec smile_slice(double t, double flat_lo, double flat_hi) {
    VolSurface::SliceSpec sp;
    sp.t = t;
    sp.xs = {0.9 * S0, 1.05 * S0, 1.2 * S0, 1.4 * S0};
    sp.ys = {1.04 * S0, 1.15 * S0, 1.3 * S0, 1.5 * S0};
    sp.flat_lo = flat_lo;
    sp.flat_hi = flat_hi;
    sp.values.assign(sp.xs.size(), std::vector<double>(sp.ys.size(), 0.0));
    for (std::size_t j = 0; j < sp.xs.size(); ++j)
        for (std::size_t k = 0; k < sp.ys.size(); ++k)
            sp.values[j][k] = 0.10 + 0.03 * (sp.xs[j] / S0 - 1.0) + 0.05 * (sp.ys[k] / S0 - 1.0);
    return sp;
}
} // namespace

TEST_CASE("smooth_coordinate saturates and is faithful inside") {
    SmoothClamp c{0.9 * S0, 1.6 * S0, 0.0, S0 / 10.0};
    CHECK(c.map(1e9) == doctest::Approx(1.6 * S0).epsilon(1e-9));
    CHECK(c.map(-1e9) == doctest::Approx(0.9 * S0).epsilon(1e-9));
    double mid = 0.5 * (0.9 + 1.6) * S0;
    CHECK(std::abs(c.map(mid) - mid) < 0.01 * mid);
    // strictly increasing on the interior
    double prev = c.map(0.9 * S0);
    for (double x = 0.905 * S0; x < 1.6 * S0; x += 0.005 * S0) {
        double v = c.map(x);
        CHECK(v > prev);
        prev = v;
    }
    // tanh saturation outside; the transition dips past the bound by at most
    // max_d d*exp(-4d/eps) = eps/(4e) before settling on the constant
    double tail_tol = 0.1 * (S0 / 10.0);
    for (double x = 0.3 * S0; x < 2.4 * S0; x += 0.01 * S0) {
        double v = c.map(x);
        CHECK(v > 0.9 * S0 - tail_tol);
        CHECK(v < 1.6 * S0 + tail_tol);
    }
    CHECK(std::abs(c.map(0.4 * S0) - 0.9 * S0) < 1e-6);
    CHECK(std::abs(c.map(2.3 * S0) - 1.6 * S0) < 1e-6);
    // analytic derivative vs finite differences
    for (double x : {0.7 * S0, 0.95 * S0, 1.2 * S0, 1.58 * S0, 1.9 * S0}) {
        double h = 1e-6;
        double fd = (c.map(x + h) - c.map(x - h)) / (2 * h);
        CHECK(c.dmap(x) == doctest::Approx(fd).epsilon(1e-5));
    }
}

TEST_CASE("constant surface evaluates to the constant everywhere") {
    auto surf = constant_surface(S0, 0.1, 4.0 * S0);
    for (double s : {0.01, 0.5, 1.2837, 3.0, 50.0})
        for (double m : {1.2837, 2.0, 100.0})
            if (m >= std::max(s, S0))
                CHECK(surf.eval(s, m, 0.7) == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(surf.dsig2_dm(1.0, 1.5, 0.3) == 0.0);
}

TEST_CASE("surface interpolates node values and is flat in the clamp zones") {
    auto sp = smile_slice(1.0, 1.02 * S0, 1.55 * S0);
    VolSurface surf(S0, {sp});
    for (std::size_t j = 0; j < sp.xs.size(); ++j)
        for (std::size_t k = 0; k < sp.ys.size(); ++k) {
            if (sp.ys[k] < sp.xs[j]) continue;
            CHECK(surf.eval(sp.xs[j], sp.ys[k], 0.5) == doctest::Approx(sp.values[j][k]).epsilon(5e-3));
        }
    // hard flat zones in m
    for (double s : {0.5 * S0, S0}) {
        CHECK(surf.dsig2_dm(s, S0, 1.0) == 0.0);
        CHECK(surf.dsig2_dm(s, 1.01 * S0, 1.0) == 0.0);
        CHECK(surf.eval(s, S0, 1.0) == doctest::Approx(surf.eval(s, 1.02 * S0, 1.0)).epsilon(1e-14));
        CHECK(surf.dsig2_dm(s, 1.6 * S0, 1.0) == 0.0);
        CHECK(surf.eval(s, 1.55 * S0, 1.0) == doctest::Approx(surf.eval(s, 9.0 * S0, 1.0)).epsilon(1e-14));
    }
}

TEST_CASE("eval_vol is continuous and far-field flat") {
    auto sp = smile_slice(1.0, 1.02 * S0, 1.55 * S0);
    VolSurface surf(S0, {sp});
    // continuity across node-rectangle boundaries (C1 via the smooth clamps)
    for (double edge : {sp.xs.front(), sp.xs.back()}) {
        double h = 1e-7;
        double a = surf.eval(edge - h, 1.3 * S0, 0.5);
        double b = surf.eval(edge + h, 1.3 * S0, 0.5);
        CHECK(a == doctest::Approx(b).epsilon(1e-6));
        double da = (surf.eval(edge, 1.3 * S0, 0.5) - surf.eval(edge - 2 * h, 1.3 * S0, 0.5)) / (2 * h);
        double db = (surf.eval(edge + 2 * h, 1.3 * S0, 0.5) - surf.eval(edge, 1.3 * S0, 0.5)) / (2 * h);
        CHECK(da == doctest::Approx(db).epsilon(1e-2).scale(1.0));
    }
    // far-field flatness in s
    double xmax = sp.xs.back();
    CHECK(std::abs(surf.eval(10.0 * xmax, 20.0 * xmax, 0.5) - surf.eval(20.0 * xmax, 40.0 * xmax, 0.5)) < 1e-6);
}

TEST_CASE("dsig2_dm matches finite differences of eval^2") {
    auto sp = smile_slice(1.0, 1.02 * S0, 1.55 * S0);
    VolSurface surf(S0, {sp});
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> us(0.6 * S0, 1.5 * S0);
    std::uniform_real_distribution<double> um(1.03 * S0, 1.54 * S0);
    int checked = 0;
    for (int it = 0; it < 1000; ++it) {
        double s = us(rng);
        double m = um(rng);
        if (m < s) continue;
        double h = 1e-5 * S0;
        if (m - h < std::max(s, S0) || m - h < 1.02 * S0 || m + h > 1.55 * S0) continue;
        double f1 = surf.eval(s, m + h, 0.5);
        double f0 = surf.eval(s, m - h, 0.5);
        double fd = (f1 * f1 - f0 * f0) / (2 * h);
        double an = surf.dsig2_dm(s, m, 0.5);
        CHECK(an == doctest::Approx(fd).epsilon(1e-5).scale(0.01));
        ++checked;
    }
    CHECK(checked > 500);
}

TEST_CASE("geometric-mean test surface matches the closed form at interior nodes") {
    // sigma_lv as an M-independent surface with a smile shape
    VolSurface::SliceSpec lv;
    lv.t = 1.0;
    lv.ys = {S0};
    for (int i = 0; i <= 12; ++i) lv.xs.push_back(0.5 * S0 + 1.5 * S0 * i / 12.0);
    lv.values.assign(lv.xs.size(), std::vector<double>(1, 0.0));
    for (std::size_t i = 0; i < lv.xs.size(); ++i) {
        double y = std::log(lv.xs[i] / S0);
        lv.values[i][0] = 0.10 + 0.06 * y * y;
    }
    VolSurface sigma_lv(S0, {lv});

    // wide node box so interior nodes are many transition-widths (eps = S0/10)
    // away from every clamp edge, where the coordinate maps are identity to
    // machine precision
    std::vector<double> xs, ys;
    for (int i = 0; i <= 16; ++i) xs.push_back(0.3 * S0 + 2.9 * S0 * i / 16.0);
    for (int i = 0; i <= 10; ++i) ys.push_back(1.04 * S0 + (3.0 * S0 - 1.04 * S0) * i / 10.0);
    auto surf = geometric_mean_surface(sigma_lv, S0, xs, ys, {1.0}, 1.02 * S0, 3.1 * S0);
    double margin = 0.85 * S0;
    int checked = 0;
    for (double s : xs)
        for (double m : ys) {
            if (m < s) continue;
            if (s < xs.front() + margin || s > xs.back() - margin) continue;
            if (m < ys.front() + margin || m > ys.back() - margin) continue;
            double expect = std::sqrt(sigma_lv.eval(s, std::max(s, S0), 1.0) * sigma_lv.eval(m, m, 1.0));
            CHECK(surf.eval(s, m, 1.0) == doctest::Approx(expect).epsilon(1e-10));
            ++checked;
        }
    CHECK(checked >= 5);
}

TEST_CASE("surface serialisation round-trips bit-exactly") {
    auto sp1 = smile_slice(0.5, 1.02 * S0, 1.55 * S0);
    auto sp2 = smile_slice(1.0, 1.02 * S0, 1.55 * S0);
    sp2.values[1][2] = 0.1234567890123456789;
    VolSurface surf(S0, {sp1, sp2});
    std::string s1 = surf.serialize();
    VolSurface back = VolSurface::parse(s1);
    CHECK(back.serialize() == s1);
    CHECK(back.eval(1.1 * S0, 1.2 * S0, 0.7) == surf.eval(1.1 * S0, 1.2 * S0, 0.7));
}

TEST_CASE("time slicing is left-continuous and constant beyond the last slice") {
    auto sp1 = smile_slice(0.5, 1.02 * S0, 1.55 * S0);
    auto sp2 = smile_slice(1.0, 1.02 * S0, 1.55 * S0);
    for (auto& row : sp2.values)
        for (auto& v : row) v += 0.05;
    VolSurface surf(S0, {sp1, sp2});
    double a = surf.eval(1.1 * S0, 1.2 * S0, 0.5);     // slice 1 boundary belongs to slice 1
    double b = surf.eval(1.1 * S0, 1.2 * S0, 0.500001);
    CHECK(b > a + 0.049);
    CHECK(surf.eval(1.1 * S0, 1.2 * S0, 5.0) == surf.eval(1.1 * S0, 1.2 * S0, 1.0));
}

TEST_CASE("dupire: flat implied vol recovers flat local vol") {
    MarketSnapshot snap;
    snap.spot = S0;
    snap.dom_curve = RateCurve({1.0}, {0.02});
    snap.for_curve = RateCurve({1.0}, {0.01});
    for (double t : {0.25, 0.5, 1.0, 2.0}) {
        double f = snap.forward(t);
        for (double k : {0.9, 0.95, 1.0, 1.05, 1.1}) {
            VanillaQuote q;
            q.maturity = t;
            q.strike = k * f;
            q.implied_vol = 0.10;
            snap.vanillas.push_back(q);
        }
        NoTouchQuote n;
        n.maturity = t;
        n.barrier = 1.3 * S0;
        n.fnt_price = 0.5 * S0;
        snap.no_touches.push_back(n);
    }
    snap.validate();
    DupireReport rep;
    auto lv = dupire_local_vol(snap, {}, &rep);
    CHECK(rep.floored_nodes == 0);
    for (double t : {0.2, 0.7, 1.4})
        for (double s : {0.9 * S0, S0, 1.2 * S0})
            CHECK(lv.eval(s, std::max(s, S0), t) == doctest::Approx(0.10).epsilon(1e-6));
}

TEST_CASE("dupire: decreasing total variance flags the floor") {
    MarketSnapshot snap;
    snap.spot = S0;
    snap.dom_curve = RateCurve({1.0}, {0.0});
    snap.for_curve = RateCurve({1.0}, {0.0});
    for (double t : {0.5, 1.0}) {
        double vol = t == 0.5 ? 0.20 : 0.10;   // calendar arbitrage
        for (double k : {0.9, 1.0, 1.1}) {
            VanillaQuote q;
            q.maturity = t;
            q.strike = k * S0;
            q.implied_vol = vol;
            snap.vanillas.push_back(q);
        }
        NoTouchQuote n;
        n.maturity = t;
        n.barrier = 1.3 * S0;
        n.fnt_price = 0.5 * S0;
        snap.no_touches.push_back(n);
    }
    DupireReport rep;
    auto lv = dupire_local_vol(snap, {}, &rep);
    CHECK(rep.floored_nodes > 0);
    CHECK(!rep.warnings.empty());
}
