#pragma once

#include <limits>
#include <string>
#include <vector>

#include "mvol/interp.hpp"
#include "mvol/market_data.hpp"

namespace mvol {

/// Smooth, asymptotically constant coordinate transition onto [lo, hi]:
/// identity-like in the interior, tanh-saturating outside, controlled by
/// eta0 (0 = the balanced trade-off) and eps (transition width).
struct SmoothClamp {
    double lo = 0.0, hi = 1.0;
    double eta0 = 0.0;
    double eps = 0.1;

    double map(double x) const;
    double dmap(double x) const;
};

/// Time-sliced sigma(S, M, t): per slice a bivariate quadratic spline on a
/// node rectangle, composed with smooth coordinate clamps, plus hard flat
/// zones in M ([.., flat_lo] and [flat_hi, ..)) so the PIDE blank-layer and
/// vanilla-layer exactness assumptions hold. Piecewise constant in time,
/// left-continuous, constant beyond the last slice. Immutable once built.
class VolSurface {
public:
    struct SliceSpec {
        double t = 0.0;
        std::vector<double> xs;                      // spot nodes
        std::vector<double> ys;                      // maximum nodes (>= s0); size 1 = M-independent
        std::vector<std::vector<double>> values;     // [xs][ys], strictly positive
        double flat_lo = -std::numeric_limits<double>::infinity();
        double flat_hi = std::numeric_limits<double>::infinity();
    };

    struct Slice {
        double t = 0.0;
        std::vector<double> xs, ys;
        std::vector<std::vector<double>> values;
        double flat_lo = 0.0, flat_hi = 0.0;
        TensorQuadSpline spline;
        SmoothClamp cx, cy;
        bool m_independent = false;

        double eval_with(const TensorQuadSpline& sp, double s, double m) const;
        double dm_with(const TensorQuadSpline& sp, double s, double m) const;
        double eval(double s, double m) const { return eval_with(spline, s, m); }
        double dm(double s, double m) const { return dm_with(spline, s, m); }
    };

    VolSurface() = default;
    VolSurface(double s0, std::vector<SliceSpec> slices, double eta0 = 0.0);

    double s0() const { return s0_; }
    double eta0() const { return eta0_; }
    std::size_t n_slices() const { return slices_.size(); }
    const Slice& slice(std::size_t i) const { return slices_[i]; }
    std::size_t slice_index(double t) const;

    /// sigma(s, m, t); m below the diagonal max(s, s0) is clamped up to it.
    double eval(double s, double m, double t) const;
    /// d sigma^2 / d m (analytic; identically 0 inside the flat zones)
    double dsig2_dm(double s, double m, double t) const;
    /// d sigma / d m
    double dsig_dm(double s, double m, double t) const;

    /// New surface with one slice's node values replaced (spline rebuilt).
    VolSurface with_slice_values(std::size_t i, const std::vector<std::vector<double>>& values) const;
    /// New surface with an extra slice appended (t beyond the last slice).
    VolSurface with_appended_slice(const SliceSpec& spec) const;

    /// Unit-coefficient splines of a slice, for analytic parameter gradients.
    static TensorQuadSpline basis_spline(const Slice& s, std::size_t node_x, std::size_t node_y);

    std::string serialize() const;
    static VolSurface parse(const std::string& text);
    static VolSurface load(const std::string& path);
    void save(const std::string& path) const;

private:
    static Slice build_slice(double s0, double eta0, const SliceSpec& spec);
    double s0_ = 0.0;
    double eta0_ = 0.0;
    std::vector<Slice> slices_;
};

/// sigma(s,m,t) = sqrt(sigma_lv(s,t) * sigma_lv(m,t)) sampled on the given
/// node grid; the numerical-test construction for the PIDE scheme.
VolSurface geometric_mean_surface(const VolSurface& lv, double s0,
                                  const std::vector<double>& xs, const std::vector<double>& ys,
                                  const std::vector<double>& slice_times,
                                  double flat_lo, double flat_hi);

/// Constant-volatility surface (handy for oracles and degenerate cases).
VolSurface constant_surface(double s0, double vol, double domain_hi);

struct DupireGridSpec {
    int n_strikes = 25;
    double width_sds = 3.5;   // log-strike half-width in ATM standard deviations
};

struct DupireReport {
    int floored_nodes = 0;
    std::vector<std::string> warnings;
};

/// Local volatility from the snapshot's implied smile via Dupire's formula
/// on a smooth total-variance interpolant (quadratic splines across strikes,
/// linear total variance in time). Values floored at 1e-4 and capped at 5.
VolSurface dupire_local_vol(const MarketSnapshot& snap, const DupireGridSpec& grid = {},
                            DupireReport* report = nullptr);

} // namespace mvol
