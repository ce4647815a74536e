#pragma once

#include <cmath>

#include "mvol/common.hpp"

namespace mvol {

inline double norm_pdf(double x) {
    static const double inv_sqrt_2pi = 0.39894228040143267794;
    return inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

inline double norm_cdf(double x) {
    return 0.5 * std::erfc(-x * 0.70710678118654752440);
}

/// Undiscounted Black call on forward: E[(F_T - K)^+] under lognormal F_T.
inline double black_call(double fwd, double strike, double vol, double t) {
    if (t <= 0.0 || vol <= 0.0) return std::max(fwd - strike, 0.0);
    if (strike <= 0.0) return fwd - strike;
    double sd = vol * std::sqrt(t);
    double d1 = std::log(fwd / strike) / sd + 0.5 * sd;
    return fwd * norm_cdf(d1) - strike * norm_cdf(d1 - sd);
}

/// dBlack/dvol (undiscounted).
inline double black_vega(double fwd, double strike, double vol, double t) {
    if (t <= 0.0 || vol <= 0.0 || strike <= 0.0) return 0.0;
    double sd = vol * std::sqrt(t);
    double d1 = std::log(fwd / strike) / sd + 0.5 * sd;
    return fwd * norm_pdf(d1) * std::sqrt(t);
}

/// Implied Black volatility by bisection bracketing + Newton polish.
/// `price` is the undiscounted forward call value. Tolerance 1e-10 in vol.
inline double implied_vol_black(double price, double fwd, double strike, double t) {
    require(t > 0.0 && fwd > 0.0 && strike > 0.0, "implied_vol_black: bad inputs t=", t);
    const double intrinsic = std::max(fwd - strike, 0.0);
    require(price >= intrinsic - 1e-14 * fwd && price <= fwd,
            "implied_vol_black: price ", price, " outside no-arbitrage bounds [",
            intrinsic, ", ", fwd, "] at K=", strike, " T=", t);
    if (price <= intrinsic + 1e-16 * fwd)
        fail("implied_vol_black: price at intrinsic, vol not identifiable (K=", strike, ")");

    double lo = 1e-8, hi = 5.0;
    while (black_call(fwd, strike, hi, t) < price) {
        hi *= 2.0;
        if (hi > 100.0) fail("implied_vol_black: no bracket up to vol=100");
    }
    double v = 0.5 * (lo + hi);
    for (int it = 0; it < 200; ++it) {
        double f = black_call(fwd, strike, v, t) - price;
        if (f > 0.0) hi = v; else lo = v;
        double vega = black_vega(fwd, strike, v, t);
        double step = (vega > 1e-14) ? f / vega : 0.0;
        double vn = v - step;
        if (!(vn > lo && vn < hi)) vn = 0.5 * (lo + hi);
        if (std::abs(vn - v) < 1e-10) return vn;
        v = vn;
    }
    return v;
}

} // namespace mvol
