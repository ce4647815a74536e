#pragma once

#include <vector>

#include "mvol/common.hpp"

namespace mvol {

/// Finite-difference weights on an arbitrary node set, exact on polynomials
/// up to degree len(offsets)-1 (Fornberg's recursion).
struct FdWeights {
    int order = 0;                 // derivative order
    std::vector<double> offsets;   // node positions relative to the evaluation point
    std::vector<double> weights;

    double apply(const double* values) const {
        double acc = 0.0;
        for (std::size_t k = 0; k < weights.size(); ++k) acc += weights[k] * values[k];
        return acc;
    }
};

FdWeights fd_weights(int order, const std::vector<double>& offsets, double eval_point = 0.0);

/// Sinh-concentrated mesh on [low, high] with maximal density at s0.
/// s0 lands exactly on a node; returns n+1 ascending nodes.
std::vector<double> build_hyperbolic_mesh(double s0, double low, double high, int n, double eta);

/// Joint strike/barrier mesh with the coupled-step rule: barrier nodes are
/// the strike nodes at and above s0, B_j = strikes[n0 + j].
struct StrikeBarrierMesh {
    double s0 = 0.0;
    std::vector<double> strikes;   // K_0 = 0 .. K_N ascending, strikes[n0] == s0
    int n0 = 0;
    int n_rows = 0;                // barrier rows j = 0..n_rows-1, last row at b_last
    int blank_layers = 4;
    int vanilla_len = 0;           // vanilla layer solves strikes[0..vanilla_len-1]

    std::vector<double> times;             // T_0 = 0 .. T_M
    std::vector<int> maturity_steps;       // indices into times for each quoted maturity

    int row_len(int j) const { return n0 + j + 1; }
    double barrier(int j) const { return strikes[static_cast<std::size_t>(n0 + j)]; }
    double b_last() const { return barrier(n_rows - 1); }
    double k_max() const { return strikes[static_cast<std::size_t>(vanilla_len - 1)]; }
    int first_solved_row() const { return blank_layers > 0 ? blank_layers + 1 : 1; }
};

struct MeshParams {
    int n_strikes = 700;        // node count of the 1D mesh
    double k_max = 0.0;         // vanilla-layer strike cap (required)
    double b_last = 0.0;        // top barrier row level (required)
    double eta = 0.05;
    int blank_layers = 4;       // 0 disables blank layers (diagnostics only)
};

/// Time grid: each quoted-maturity interval subdivided uniformly. Exactly one
/// of steps_per_interval / steps_per_year must be positive.
struct TimeGridParams {
    int steps_per_interval = 0;
    int steps_per_year = 0;
};

StrikeBarrierMesh build_mesh(double s0, const std::vector<double>& maturities,
                             const MeshParams& mp, const TimeGridParams& tp);

} // namespace mvol
