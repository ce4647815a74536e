#include "mvol/grids.hpp"

#include <algorithm>
#include <cmath>

namespace mvol {

FdWeights fd_weights(int order, const std::vector<double>& offsets, double eval_point) {
    const int n = static_cast<int>(offsets.size()) - 1;
    require(order >= 0, "fd_weights: negative derivative order");
    require(n + 1 >= order + 1, "fd_weights: need at least order+1 nodes, got ", n + 1);
    for (int i = 0; i <= n; ++i)
        for (int j = i + 1; j <= n; ++j)
            require(offsets[i] != offsets[j], "fd_weights: duplicate offset ", offsets[i]);

    // Fornberg (1988), weights for derivative orders 0..m at eval_point.
    const int m = order;
    std::vector<std::vector<double>> c(static_cast<std::size_t>(n + 1),
                                       std::vector<double>(static_cast<std::size_t>(m + 1), 0.0));
    double c1 = 1.0;
    double c4 = offsets[0] - eval_point;
    c[0][0] = 1.0;
    for (int i = 1; i <= n; ++i) {
        int mn = std::min(i, m);
        double c2 = 1.0;
        double c5 = c4;
        c4 = offsets[static_cast<std::size_t>(i)] - eval_point;
        for (int j = 0; j < i; ++j) {
            double c3 = offsets[static_cast<std::size_t>(i)] - offsets[static_cast<std::size_t>(j)];
            c2 *= c3;
            if (j == i - 1) {
                for (int k = mn; k >= 1; --k)
                    c[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] =
                        c1 * (k * c[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(k - 1)] -
                              c5 * c[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(k)]) / c2;
                c[static_cast<std::size_t>(i)][0] = -c1 * c5 * c[static_cast<std::size_t>(i - 1)][0] / c2;
            }
            for (int k = mn; k >= 1; --k)
                c[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)] =
                    (c4 * c[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)] -
                     k * c[static_cast<std::size_t>(j)][static_cast<std::size_t>(k - 1)]) / c3;
            c[static_cast<std::size_t>(j)][0] = c4 * c[static_cast<std::size_t>(j)][0] / c3;
        }
        c1 = c2;
    }

    FdWeights w;
    w.order = order;
    w.offsets = offsets;
    w.weights.resize(offsets.size());
    for (int i = 0; i <= n; ++i)
        w.weights[static_cast<std::size_t>(i)] = c[static_cast<std::size_t>(i)][static_cast<std::size_t>(m)];
    return w;
}

std::vector<double> build_hyperbolic_mesh(double s0, double low, double high, int n, double eta) {
    require(low < s0 && s0 < high, "hyperbolic_mesh: s0=", s0, " outside (", low, ", ", high, ")");
    require(n >= 8, "hyperbolic_mesh: need n >= 8");
    require(eta > 0.0, "hyperbolic_mesh: eta must be positive");

    const double a = eta * (high - low);
    const double xi_lo = std::asinh((low - s0) / a);
    const double xi_hi = std::asinh((high - s0) / a);

    // Split the xi-range at 0 so s0 is a node; pick the split count so the
    // two uniform xi-steps stay close (keeps adjacent x-step ratios smooth).
    int n_lo = static_cast<int>(std::lround(n * (-xi_lo) / (xi_hi - xi_lo)));
    n_lo = std::clamp(n_lo, 1, n - 1);
    auto dxi_imbalance = [&](int k) {
        double r = (xi_hi / (n - k)) / (-xi_lo / k);
        return std::abs(std::log(r));
    };
    for (int cand : {n_lo - 1, n_lo + 1})
        if (cand >= 1 && cand <= n - 1 && dxi_imbalance(cand) < dxi_imbalance(n_lo)) n_lo = cand;

    std::vector<double> x(static_cast<std::size_t>(n + 1));
    for (int i = 0; i <= n_lo; ++i) {
        double xi = xi_lo * (1.0 - static_cast<double>(i) / n_lo);
        x[static_cast<std::size_t>(i)] = s0 + a * std::sinh(xi);
    }
    for (int i = n_lo + 1; i <= n; ++i) {
        double xi = xi_hi * static_cast<double>(i - n_lo) / (n - n_lo);
        x[static_cast<std::size_t>(i)] = s0 + a * std::sinh(xi);
    }
    x[0] = low;
    x[static_cast<std::size_t>(n_lo)] = s0;
    x[static_cast<std::size_t>(n)] = high;
    for (int i = 0; i < n; ++i)
        require(x[static_cast<std::size_t>(i)] < x[static_cast<std::size_t>(i + 1)],
                "hyperbolic_mesh: nodes not strictly increasing at i=", i);
    return x;
}

StrikeBarrierMesh build_mesh(double s0, const std::vector<double>& maturities,
                             const MeshParams& mp, const TimeGridParams& tp) {
    require(s0 > 0.0, "build_mesh: s0 must be positive");
    require(mp.b_last > s0, "build_mesh: b_last=", mp.b_last, " must exceed s0=", s0);
    require(mp.k_max > s0, "build_mesh: k_max must exceed s0");
    require(!maturities.empty(), "build_mesh: no maturities");

    StrikeBarrierMesh mesh;
    mesh.s0 = s0;
    mesh.blank_layers = mp.blank_layers;

    const double top = std::max(mp.k_max, mp.b_last);
    mesh.strikes = build_hyperbolic_mesh(s0, 0.0, top, mp.n_strikes, mp.eta);

    auto it = std::lower_bound(mesh.strikes.begin(), mesh.strikes.end(), s0);
    mesh.n0 = static_cast<int>(it - mesh.strikes.begin());
    require(mesh.strikes[static_cast<std::size_t>(mesh.n0)] == s0, "build_mesh: s0 not a node");

    const int n_total = static_cast<int>(mesh.strikes.size());
    int j_last = mesh.n0;
    while (j_last + 1 < n_total && mesh.strikes[static_cast<std::size_t>(j_last)] < mp.b_last) ++j_last;
    mesh.n_rows = j_last - mesh.n0 + 1;
    require(mesh.n_rows > mp.blank_layers + 2,
            "build_mesh: too few barrier rows (", mesh.n_rows, ") above s0; raise n_strikes");

    int vk = mesh.n0;
    while (vk + 1 < n_total && mesh.strikes[static_cast<std::size_t>(vk)] < mp.k_max) ++vk;
    mesh.vanilla_len = vk + 1;

    // Time grid: uniform sub-steps per quoted interval.
    require((tp.steps_per_interval > 0) != (tp.steps_per_year > 0),
            "build_mesh: set exactly one of steps_per_interval / steps_per_year");
    mesh.times.push_back(0.0);
    double prev = 0.0;
    for (double t : maturities) {
        require(t > prev, "build_mesh: maturities must be ascending and positive, got ", t);
        int steps = tp.steps_per_interval > 0
                        ? tp.steps_per_interval
                        : std::max(1, static_cast<int>(std::lround((t - prev) * tp.steps_per_year)));
        for (int k = 1; k <= steps; ++k)
            mesh.times.push_back(k == steps ? t : prev + (t - prev) * k / steps);
        mesh.maturity_steps.push_back(static_cast<int>(mesh.times.size()) - 1);
        prev = t;
    }
    const double ratio_cap = 1.0 + std::sqrt(2.0);
    for (std::size_t m = 2; m < mesh.times.size(); ++m) {
        double r = (mesh.times[m] - mesh.times[m - 1]) / (mesh.times[m - 1] - mesh.times[m - 2]);
        require(r < ratio_cap, "build_mesh: time-step ratio ", r, " breaches BDF2 bound at step ", m);
    }
    return mesh;
}

} // namespace mvol
