#pragma once

// Closed-form references used as independent oracles in tests. These depend
// only on <cmath> and deliberately share no code with the solver paths they
// check.

#include <cmath>
#include <limits>

namespace oracles {

inline double ncdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// int_a^b e^x phi((x-m)/s) dx / s
inline double exp_gauss_integral(double a, double b, double m, double s) {
    double hi = (b >= 1e300) ? 1.0 : ncdf((b - m) / s - s);
    double lo = (a <= -1e300) ? 0.0 : ncdf((a - m) / s - s);
    return std::exp(m + 0.5 * s * s) * (hi - lo);
}

// int_a^b phi((x-m)/s) dx / s
inline double gauss_integral(double a, double b, double m, double s) {
    double hi = (b >= 1e300) ? 1.0 : ncdf((b - m) / s);
    double lo = (a <= -1e300) ? 0.0 : ncdf((a - m) / s);
    return hi - lo;
}

/// Reflection-principle up-and-out call under GBM with carry rd - rf:
/// D^d(T) E[(S_T - K)^+ 1_{max S < B}].
inline double uoc_price(double s0, double strike, double barrier, double t, double sigma,
                        double rd, double rf) {
    if (barrier <= s0) return 0.0;
    if (strike >= barrier) return 0.0;
    double s = sigma * std::sqrt(t);
    double mu = (rd - rf - 0.5 * sigma * sigma) * t;
    double l = std::log(barrier / s0);
    double k = strike > 0.0 ? std::log(strike / s0) : -std::numeric_limits<double>::infinity();
    double refl = std::exp(2.0 * (rd - rf - 0.5 * sigma * sigma) * l / (sigma * sigma));
    double es = s0 * (exp_gauss_integral(k, l, mu, s) - refl * exp_gauss_integral(k, l, 2.0 * l + mu, s));
    double ek = strike > 0.0
                    ? strike * (gauss_integral(k, l, mu, s) - refl * gauss_integral(k, l, 2.0 * l + mu, s))
                    : 0.0;
    return std::exp(-rd * t) * (es - ek);
}

/// Foreign no-touch in domestic numeraire: D^d(T) E[S_T 1_{max S < B}].
inline double fnt_price(double s0, double barrier, double t, double sigma, double rd, double rf) {
    return uoc_price(s0, 0.0, barrier, t, sigma, rd, rf);
}

/// Discounted Black-Scholes call with carry rd - rf.
inline double bs_call(double s0, double strike, double t, double sigma, double rd, double rf) {
    double f = s0 * std::exp((rd - rf) * t);
    double sd = sigma * std::sqrt(t);
    double d1 = std::log(f / strike) / sd + 0.5 * sd;
    return std::exp(-rd * t) * (f * ncdf(d1) - strike * ncdf(d1 - sd));
}

/// Joint density of (S_T, M_T) under GBM at the diagonal point (b, b):
/// f_{X,M}(x,m) = 2(2m-x)/(sigma^3 T^{3/2}) phi((2m-x)/(sigma sqrt(T)))
///               exp(nu x / sigma^2 - nu^2 T / (2 sigma^2)), at x = m = ln(b/s0),
/// mapped to (S, M) coordinates by the Jacobian 1/b^2.
inline double gbm_max_diag_density(double s0, double b, double t, double sigma, double rd, double rf) {
    double nu = rd - rf - 0.5 * sigma * sigma;
    double l = std::log(b / s0);
    if (l <= 0.0) return 0.0;
    double st = sigma * std::sqrt(t);
    double z = l / st;
    double phi = std::exp(-0.5 * z * z) / std::sqrt(2.0 * 3.14159265358979323846);
    double f = (2.0 * l / (st * st * st)) * phi *
               std::exp(nu * l / (sigma * sigma) - nu * nu * t / (2.0 * sigma * sigma));
    return f / (b * b);
}

/// P(max of a Brownian bridge from a to b over dt with volatility v <= m).
inline double bridge_max_cdf(double m, double a, double b, double v, double dt) {
    if (m < std::max(a, b)) return 0.0;
    return 1.0 - std::exp(-2.0 * (m - a) * (m - b) / (v * v * dt));
}

/// Conditional mean/variance of the CIR step V_{t+dt} | V_t = v.
struct CirMoments {
    double mean;
    double var;
};
inline CirMoments cir_moments(double v, double kappa, double theta, double xi, double dt) {
    double e = std::exp(-kappa * dt);
    double mean = theta + (v - theta) * e;
    double var;
    if (kappa > 1e-12)
        var = v * xi * xi * e * (1.0 - e) / kappa + theta * xi * xi * (1.0 - e) * (1.0 - e) / (2.0 * kappa);
    else
        var = v * xi * xi * dt;
    return {mean, var};
}

} // namespace oracles
