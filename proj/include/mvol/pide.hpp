#pragma once

#include <memory>
#include <vector>

#include "mvol/grids.hpp"
#include "mvol/market_data.hpp"
#include "mvol/surfaces.hpp"

namespace mvol {

enum class TimeScheme { Bdf2, CrankNicolson, Implicit };

struct PideConfig {
    TimeScheme scheme = TimeScheme::Bdf2;
    bool rannacher = true;       // four fully implicit quarter-steps inside the first step
    bool check_surface = true;   // verify the blank-layer / B_last flatness preconditions
};

/// One stored time level of the solution.
struct PideLayer {
    double t = 0.0;
    int step = 0;
    double dd = 1.0;       // domestic discount D^d(t)
    double forward = 0.0;  // S0 * exp(int (rd - rf))
    std::vector<std::vector<double>> rows;   // per barrier row j; skipped rows empty
    std::vector<double> vanilla;             // vanilla layer values
};

/// Up-and-out call prices C(K, B, T) on the jagged mesh at stored times,
/// with spline-based queries; extraction follows the row/vanilla-layer
/// structure (cubic in K and B, constant extrapolation for large barriers,
/// vanilla-layer value in the B -> infinity limit).
class PriceSurface {
public:
    PriceSurface() = default;
    PriceSurface(std::shared_ptr<const StrikeBarrierMesh> mesh, int first_row);

    const StrikeBarrierMesh& mesh() const { return *mesh_; }
    int first_row() const { return first_row_; }

    void add_layer(PideLayer layer);
    bool has_time(double t) const;
    const PideLayer& layer_at(double t) const;
    const std::vector<PideLayer>& layers() const { return layers_; }

    double price(double strike, double barrier, double t) const;
    double no_touch(double barrier, double t) const;
    double vanilla_price(double strike, double t) const;
    double implied_vol(double strike, double t) const;
    /// phi(B_j, B_j, t) over solved rows; returns (barrier, density) pairs.
    std::vector<std::pair<double, double>> density_diagonal(double t) const;

private:
    std::shared_ptr<const StrikeBarrierMesh> mesh_;
    int first_row_ = 5;
    std::vector<PideLayer> layers_;
};

/// Descriptor of one volatility parameter: a node of one surface slice.
struct ParamDesc {
    std::size_t slice = 0;
    std::size_t node_x = 0;
    std::size_t node_y = 0;
};

/// PriceSurface-shaped gradients d C / d sigma_p at stored times.
class GradientSurface {
public:
    GradientSurface() = default;
    GradientSurface(std::shared_ptr<const StrikeBarrierMesh> mesh, int first_row,
                    std::vector<ParamDesc> params);

    std::size_t n_params() const { return params_.size(); }
    const std::vector<ParamDesc>& params() const { return params_; }
    const PideLayer& layer_at(std::size_t p, double t) const;
    void add_layer(std::size_t p, PideLayer layer);

    double no_touch_grad(std::size_t p, double barrier, double t) const;
    double vanilla_grad(std::size_t p, double strike, double t) const;

private:
    std::shared_ptr<const StrikeBarrierMesh> mesh_;
    int first_row_ = 5;
    std::vector<ParamDesc> params_;
    std::vector<std::vector<PideLayer>> layers_;   // [param][stored time]
};

/// Coefficient diagonals of one row's spatial operator
/// L = rf I + A D + B D2 + C Phi.
struct RowOperator {
    int j = 0;
    double t = 0.0;
    double rf = 0.0;
    std::vector<double> a_diag;   // (rd - rf) K_i
    std::vector<double> b_diag;   // -1/2 (sigma^2 - 1/2 dsigma^2/dB dB_j) K_i^2
    std::vector<double> c_diag;   // -1/2 sigma^2(B,B) B^2 (B - K_i)^+
};

RowOperator assemble_row_operator(const StrikeBarrierMesh& mesh, const VolSurface& surf,
                                  const RateCurve& dom, const RateCurve& forr, int j, double t);

/// L u for diagnostics/tests (finite differences rebuilt on the fly).
std::vector<double> apply_row_operator(const StrikeBarrierMesh& mesh, const RowOperator& op,
                                       const std::vector<double>& u);

/// Variable-step BDF2: (I + alpha L) u^m = c1 u^{m-1} - c2 u^{m-2} + alpha f.
struct Bdf2Coeffs {
    double alpha = 0.0;
    double c1 = 1.0;
    double c2 = 0.0;
};
Bdf2Coeffs bdf2_coefficients(double dt, double dt_prev);

/// Running value of the barrier-direction integral per strike, updated row
/// by row with the trapezoid induction.
struct IntegralAccumulator {
    std::vector<double> f;
    explicit IntegralAccumulator(std::size_t n_strikes = 0) : f(n_strikes, 0.0) {}
    void reset(std::size_t n) { f.assign(n, 0.0); }
    /// gbar of the just-solved row j; dB_next = 0 completes the trapezoid
    /// into the vanilla layer at the last row.
    void advance(const std::vector<double>& gbar, double db, double db_next) {
        double w = 0.5 * (db + db_next);
        for (std::size_t i = 0; i < gbar.size(); ++i) f[i] += w * gbar[i];
    }
};

/// Stepping engine for the forward Volterra PIDE: rows in ascending barrier
/// order with the inductive integral source, rank-one boundary-derivative
/// coupling, the vanilla layer, and BDF2 (or CN / implicit) time stepping.
/// Supports checkpoint/restore and a swappable surface for calibration loops,
/// plus interleaved linearised solves for parameter gradients that reuse each
/// row factorisation.
class ForwardPide {
public:
    ForwardPide(std::shared_ptr<const StrikeBarrierMesh> mesh, RateCurve dom, RateCurve forr,
                PideConfig cfg = {});

    void set_surface(const VolSurface* surf);
    void reset();                  // back to the t = 0 payoff
    void step();                   // advance one grid step
    void advance_to_step(int m);
    int step_index() const { return m_; }
    double current_time() const { return mesh_->times[static_cast<std::size_t>(m_)]; }
    int n_steps() const { return static_cast<int>(mesh_->times.size()) - 1; }
    int first_row() const { return first_row_; }

    PideLayer snapshot_layer() const;

    struct Checkpoint {
        int m = 0;
        std::vector<std::vector<double>> u, u_prev;
        std::vector<double> van, van_prev;
        std::vector<std::vector<std::vector<double>>> gu, gu_prev;   // per param
        std::vector<std::vector<double>> gvan, gvan_prev;
    };
    Checkpoint checkpoint() const;
    void restore(const Checkpoint& c);

    /// Enable interleaved gradient solves for the given parameters of `surf`.
    void enable_gradients(std::vector<ParamDesc> params);
    bool gradients_enabled() const { return !params_.empty(); }
    const std::vector<ParamDesc>& params() const { return params_; }
    PideLayer snapshot_gradient_layer(std::size_t p) const;

    const RateCurve& dom_curve() const { return dom_; }
    const RateCurve& for_curve() const { return for_; }

private:
    struct RowGeom;   // cached finite-difference weights per row
    void ensure_geometry();
    void check_surface_preconditions() const;
    void do_substep(double t_new, double dt, double dt_prev, TimeScheme scheme, bool have_two_levels);
    void roll_history();

    std::shared_ptr<const StrikeBarrierMesh> mesh_;
    RateCurve dom_, for_;
    PideConfig cfg_;
    const VolSurface* surf_ = nullptr;
    int first_row_ = 5;
    int m_ = 0;

    std::vector<std::vector<double>> u_, u_prev_;
    std::vector<double> van_, van_prev_;

    // gradient state
    std::vector<ParamDesc> params_;
    std::vector<std::vector<std::vector<double>>> gu_, gu_prev_;    // [param][row]
    std::vector<std::vector<double>> gvan_, gvan_prev_;

    struct GradCache;
    std::unique_ptr<RowGeom> geom_;
    std::unique_ptr<GradCache> gcache_;
    bool surface_checked_ = false;
};

/// Solve to the last time point, storing layers at t = 0, every quoted
/// maturity, and any extra times (which must lie on the grid).
PriceSurface solve_forward_pide(std::shared_ptr<const StrikeBarrierMesh> mesh,
                                const RateCurve& dom, const RateCurve& forr,
                                const VolSurface& surf, PideConfig cfg = {},
                                const std::vector<double>& extra_store_times = {});

} // namespace mvol
