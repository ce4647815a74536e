#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mvol/common.hpp"

namespace mvol {

/// Instantaneous short-rate curve: piecewise-linear rate between pillars,
/// flat outside. Discount integrals are closed-form per segment.
class RateCurve {
public:
    RateCurve() = default;
    RateCurve(std::vector<double> pillar_times, std::vector<double> zero_rates);

    double rate(double t) const;
    double integral(double t) const;                 // int_0^t r(u) du
    double discount(double t) const;                 // exp(-integral)
    double forward_integral(double t1, double t2) const { return integral(t2) - integral(t1); }

    const std::vector<double>& pillar_times() const { return times_; }
    const std::vector<double>& zero_rates() const { return rates_; }

private:
    std::vector<double> times_, rates_;
    std::vector<double> cum_;   // integral up to each pillar
};

struct VanillaQuote {
    double maturity = 0.0;
    double strike = 0.0;
    double implied_vol = 0.0;
    std::optional<double> bid_ask_vol;   // half-spread, reporting only
};

struct NoTouchQuote {
    double maturity = 0.0;
    double barrier = 0.0;
    double fnt_price = 0.0;              // domestic-numeraire foreign no-touch value
    std::optional<double> bid_ask;       // half-spread, reporting only
};

/// CIR variance parameters plus the mixing factor; Table-1 style defaults
/// are applied by load_snapshot when the file carries no [heston] section.
struct HestonParams {
    double v0 = 0.00827;
    double theta = 0.01564;
    double kappa = 0.7147;
    double rho = -0.4429;
    double xi = 0.0947;          // vol-of-vol actually used in the V process
    double xi_vanilla = 0.1894;  // vanilla-calibrated vol-of-vol before the beta=0.5 halving
    double beta = 1.0;

    void validate() const;
};

struct MarketSnapshot {
    double spot = 0.0;
    RateCurve dom_curve, for_curve;
    std::vector<VanillaQuote> vanillas;      // grouped by maturity, ascending
    std::vector<NoTouchQuote> no_touches;    // grouped by maturity, ascending
    HestonParams heston_params;

    std::vector<double> maturities() const;  // common ascending pillar list
    std::vector<const VanillaQuote*> vanillas_at(double t) const;
    std::vector<const NoTouchQuote*> no_touches_at(double t) const;
    double forward(double t) const;
    /// ATM-forward implied vol, smile-interpolated (linear in total variance across pillars).
    double atm_vol(double t) const;
    /// Smile interpolation at arbitrary (strike, t): quadratic spline across
    /// quoted strikes per pillar, linear total variance in time at fixed moneyness.
    double smile_vol(double strike, double t) const;

    void validate() const;
};

double fnt_from_fot(double fot, double s0, double dd_t);
double fot_from_fnt(double fnt, double s0, double dd_t);

MarketSnapshot load_snapshot(const std::string& path);
MarketSnapshot parse_snapshot(const std::string& text, const std::string& origin = "<memory>");
std::string serialize_snapshot(const MarketSnapshot& snap);
void save_snapshot(const MarketSnapshot& snap, const std::string& path);

} // namespace mvol
