#include <doctest.h>

#include <cmath>

#include "mvol/market_data.hpp"

using namespace mvol;

namespace {
std::string fixture_text() {
    return R"(# synthetic test snapshot
[spot]
1.2837
[curve.domestic]
1.0, 0.01
2.0, 0.03
[curve.foreign]
1.0, 0.005
2.0, 0.015
[vanillas]
0.25, 1.20, 0.11, 0.002
0.25, 1.2837, 0.10
0.25, 1.35, 0.105
0.5, 1.18, 0.115
0.5, 1.2837, 0.102
0.5, 1.40, 0.108
[no_touches]
0.25, 1.32, 1.15, 0.004
0.25, 1.40, 1.25
0.5, 1.35, 1.10
0.5, 1.50, 1.22
)";
}
} // namespace

TEST_CASE("discount_factor flat and degenerate cases") {
    RateCurve flat({1.0, 2.0}, {0.02, 0.02});
    CHECK(flat.discount(1.0) == doctest::Approx(std::exp(-0.02)).epsilon(1e-12));
    CHECK(flat.discount(0.0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK_THROWS_AS(flat.discount(-0.5), error);
}

TEST_CASE("discount matches trapezoid quadrature of the interpolated short rate") {
    RateCurve c({1.0, 2.0}, {0.01, 0.03});
    // oracle: quadrature of the piecewise-linear rate at 1e4 subintervals
    auto quad = [&](double t) {
        int n = 10000;
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
            double a = t * i / n, b = t * (i + 1) / n;
            acc += 0.5 * (c.rate(a) + c.rate(b)) * (b - a);
        }
        return std::exp(-acc);
    };
    for (double t : {0.4, 1.0, 1.5, 2.0, 3.2})
        CHECK(c.discount(t) == doctest::Approx(quad(t)).epsilon(1e-9));
}

TEST_CASE("discount multiplicative over abutting intervals") {
    RateCurve c({0.5, 1.0, 3.0}, {0.01, 0.02, 0.025});
    for (auto [t1, t2] : {std::pair{0.3, 0.9}, {0.5, 2.0}, {1.0, 4.0}}) {
        double lhs = c.discount(t1) * std::exp(-c.forward_integral(t1, t2));
        CHECK(std::abs(lhs - c.discount(t2)) < 1e-12);
    }
}

TEST_CASE("fnt/fot conversion") {
    CHECK(fnt_from_fot(0.3, 1.2837, 1.0) == doctest::Approx(0.89859).epsilon(1e-10));
    CHECK(fnt_from_fot(0.7, 1.2837, 0.7) == doctest::Approx(0.0));       // certain touch
    CHECK(fnt_from_fot(0.0, 1.2837, 0.97) == doctest::Approx(1.2837 * 0.97));
    CHECK_THROWS_AS(fnt_from_fot(1.2, 1.2837, 1.0), error);
    // round trip to machine precision
    for (double fot : {0.0, 0.123456, 0.5, 0.93}) {
        double fnt = fnt_from_fot(fot, 1.2837, 0.93);
        CHECK(fot_from_fnt(fnt, 1.2837, 0.93) == doctest::Approx(fot).epsilon(1e-15));
    }
}

TEST_CASE("snapshot parsing, validation, canonical round trip") {
    auto snap = parse_snapshot(fixture_text());
    CHECK(snap.spot == doctest::Approx(1.2837));
    CHECK(snap.maturities() == std::vector<double>({0.25, 0.5}));
    CHECK(snap.vanillas_at(0.25).size() == 3);
    CHECK(snap.no_touches_at(0.5).size() == 2);
    CHECK(snap.heston_params.v0 == doctest::Approx(0.00827));   // defaults apply
    CHECK(snap.vanillas[0].bid_ask_vol.value() == doctest::Approx(0.002));

    // loading then re-serialising is idempotent byte-for-byte
    std::string s1 = serialize_snapshot(snap);
    std::string s2 = serialize_snapshot(parse_snapshot(s1));
    CHECK(s1 == s2);
}

TEST_CASE("snapshot rejects bad quotes with context") {
    // barrier below spot
    std::string bad = fixture_text();
    auto pos = bad.find("0.25, 1.32");
    bad.replace(pos, 10, "0.25, 1.20");
    CHECK_THROWS_WITH_AS(parse_snapshot(bad), doctest::Contains("barrier"), error);

    // empty quote list
    std::string empty = R"([spot]
1.0
[curve.domestic]
1.0, 0.0
[curve.foreign]
1.0, 0.0
[vanillas]
[no_touches]
)";
    CHECK_THROWS_AS(parse_snapshot(empty), error);

    // parse failure carries the line number
    std::string junk = fixture_text();
    junk.replace(junk.find("1.2837"), 6, "oops");
    CHECK_THROWS_WITH_AS(parse_snapshot(junk), doctest::Contains(":3"), error);
}

TEST_CASE("smile interpolation hits quotes and stays sane between pillars") {
    auto snap = parse_snapshot(fixture_text());
    CHECK(snap.smile_vol(1.2837, 0.25) == doctest::Approx(0.10).epsilon(1e-10));
    double v = snap.smile_vol(1.2837, 0.4);
    CHECK(v > 0.09);
    CHECK(v < 0.12);
    CHECK(snap.atm_vol(0.25) == doctest::Approx(snap.smile_vol(snap.forward(0.25), 0.25)));
}
