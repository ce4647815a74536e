#pragma once

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "mvol/common.hpp"
#include "mvol/kdtree.hpp"

namespace mvol {

/// N joint states (S^i, M^i, V^i) at a common time, with the seeded RNG that
/// drives them. Copyable for checkpoint/restore in calibration loops.
struct ParticleEnsemble {
    std::vector<double> s, m, v;
    double t = 0.0;
    std::mt19937_64 rng;

    std::size_t size() const { return s.size(); }

    static ParticleEnsemble init(std::size_t n, double s0, double v0, std::uint64_t seed) {
        require(n >= 1, "ParticleEnsemble: need at least one particle");
        ParticleEnsemble e;
        e.s.assign(n, s0);
        e.m.assign(n, s0);
        e.v.assign(n, v0);
        e.rng.seed(seed);
        return e;
    }
};

/// Anisotropic bivariate Gaussian kernel parameters plus the projection
/// regularisers. gamma is the kernel normalisation 2 pi hx hy sqrt(1-rho^2).
struct KernelSpec {
    double hx = 0.0, hy = 0.0;
    double rho_xy = 0.0;
    double eps = 1e-4;      // regulariser
    double eps0 = 0.0;      // significance cutoff (xi * eps / 10)
    double theta = 0.0, xi = 0.0;

    double gamma() const { return 2.0 * 3.14159265358979323846 * hx * hy * std::sqrt(1.0 - rho_xy * rho_xy); }

    double eval(double x, double y) const {
        double zeta = x * x / (hx * hx) + y * y / (hy * hy) - 2.0 * rho_xy * x * y / (hx * hy);
        return std::exp(-0.5 * zeta / (1.0 - rho_xy * rho_xy)) / gamma();
    }
    double eval_1d(double x) const {
        return std::exp(-0.5 * x * x / (hx * hx)) / (std::sqrt(2.0 * 3.14159265358979323846) * hx);
    }
};

/// Silverman-style bandwidth h_x = eta S0 vol sqrt(max(T, T_min)) N^{-1/6}.
double bandwidth(double t, std::size_t n, double s0, double base_vol, double eta = 1.5,
                 double t_min = 0.25);

/// rho_xy(T) = (rho_max - rho_hat) exp(-k N_T / T_max) + rho_hat,
/// k = 2 T_max ln2 / N0.
double kernel_correlation(double rho_hat, double steps_per_year, double t_max,
                          double rho_max = 0.98, double n0 = 180.0);

KernelSpec make_kernel(double t, std::size_t n, double s0, double base_vol, double rho_hat,
                       double steps_per_year, double t_max, double theta, double xi,
                       double eps = 1e-4);

/// QE variance step (Andersen), exact first two conditional CIR moments,
/// switching threshold psi_c = 1.5. xi = 0 collapses to the deterministic mean.
double qe_variance_step(double v, double kappa, double theta, double xi, double dt, double z,
                        double u);

/// Brownian-bridge running-maximum update with frozen effective volatility.
double bridge_max_step(double s_t, double s_next, double sigma_eff, double dt, double u, double m_t);

/// Significance query: particles within the Euclidean ball of radius
/// R = sqrt(H / (1 - rho)), H = -2 hx^2 ln(gamma eps0), a superset of the
/// kernel-significance ellipse. eps0 <= 0 means every particle; H <= 0 none.
std::vector<int> query_significant(const SpatialIndex& index, double k, double b,
                                   const KernelSpec& spec);

/// 1D Markovian projection (V onto S): full-sum kernel ratio with the
/// 2 theta xi eps / xi eps regularisers.
double project_1d(const ParticleEnsemble& ens, double k, const KernelSpec& spec);

/// 2D Markovian projection (V onto S, M), kernel sum restricted to the
/// significant set; falls back to the nearest particle's V when the
/// regularisers vanish and the set is empty (logged by the caller).
double project_2d(const ParticleEnsemble& ens, const SpatialIndex& index, double k, double b,
                  const KernelSpec& spec, bool* degenerate = nullptr);

/// Pearson correlation of (S, M) over the ensemble.
double sample_correlation(const ParticleEnsemble& ens);

/// One Euler/QE/bridge step of the 2-factor 3-state system. SigmaFn is
/// sigma(s, m) frozen over the step; XiFn is the per-particle vol-of-vol.
/// drift = int (rd - rf) over [t, t+dt]. rho correlates the spot and variance
/// normals. Draws are generated in a fixed order from the ensemble RNG, so
/// results are bit-identical for a given seed regardless of thread count.
template <class SigmaFn, class XiFn>
void evolve_step(ParticleEnsemble& ens, SigmaFn&& sigma, XiFn&& xi_of, double drift, double kappa,
                 double theta, double rho, double dt) {
    const std::size_t n = ens.size();
    require(dt > 0.0, "evolve_step: dt must be positive");
    require(std::abs(rho) <= 1.0, "evolve_step: |rho| must be <= 1");
    static thread_local std::vector<double> z, zv, uv, umax;
    z.resize(n);
    zv.resize(n);
    uv.resize(n);
    umax.resize(n);
    {
        std::normal_distribution<double> nd(0.0, 1.0);
        std::uniform_real_distribution<double> ud(std::numeric_limits<double>::min(), 1.0);
        for (std::size_t i = 0; i < n; ++i) z[i] = nd(ens.rng);
        for (std::size_t i = 0; i < n; ++i) zv[i] = nd(ens.rng);
        for (std::size_t i = 0; i < n; ++i) uv[i] = ud(ens.rng);
        for (std::size_t i = 0; i < n; ++i) umax[i] = ud(ens.rng);
    }
    const double rho_c = std::sqrt(1.0 - rho * rho);
    const double sdt = std::sqrt(dt);
    parallel_for_chunks(n, [&](std::size_t lo, std::size_t hi, int) {
        for (std::size_t i = lo; i < hi; ++i) {
            double vp = std::max(ens.v[i], 0.0);
            double sig = sigma(ens.s[i], ens.m[i]);
            double sig_eff = sig * std::sqrt(vp);
            double zs = rho * zv[i] + rho_c * z[i];
            double s_next = ens.s[i] * std::exp(drift - 0.5 * sig_eff * sig_eff * dt + sig_eff * sdt * zs);
            double m_next = bridge_max_step(ens.s[i], s_next, sig_eff, dt, umax[i], ens.m[i]);
            ens.v[i] = qe_variance_step(ens.v[i], kappa, theta, xi_of(ens.s[i]), dt, zv[i], uv[i]);
            ens.s[i] = s_next;
            ens.m[i] = m_next;
        }
    });
    ens.t += dt;
}

} // namespace mvol
