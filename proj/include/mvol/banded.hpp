#pragma once

#include <vector>

#include "mvol/common.hpp"

namespace mvol {

/// LU factorisation of a band matrix (kl lower / ku upper diagonals) with
/// partial pivoting. Rows are stored as dense windows of width 2*kl+ku+1
/// anchored at column i-kl, which leaves room for pivot fill-in.
class BandedLU {
public:
    BandedLU() = default;
    BandedLU(int n, int kl, int ku);

    void set(int i, int j, double v);
    double get(int i, int j) const;

    /// Factor in place. Throws on a (numerically) singular pivot.
    void factor();

    /// Solve A x = b with the stored factors; b is overwritten by x.
    void solve(double* b) const;
    void solve(std::vector<double>& b) const { solve(b.data()); }

    int size() const { return n_; }

private:
    int idx(int i, int j) const { return j - (i - kl_); }
    int n_ = 0, kl_ = 0, ku_ = 0, width_ = 0;
    bool factored_ = false;
    std::vector<double> rows_;            // n_ x width_
    std::vector<int> piv_;                // pivot row per column
    std::vector<double> lfac_;            // multipliers, kl_ per column
};

/// Solves (B + u v^T) x = b where B is banded and v is sparse (the dense
/// last-columns block of the PIDE row operator is rank one). Factors B once;
/// each extra right-hand side costs one banded solve plus O(n).
class BorderedBandSolver {
public:
    BorderedBandSolver() = default;

    /// u: dense column vector; v_idx/v_val: sparse row vector entries.
    BorderedBandSolver(BandedLU lu, const std::vector<double>& u,
                       const std::vector<int>& v_idx, const std::vector<double>& v_val);

    void solve(std::vector<double>& b) const;

private:
    BandedLU lu_;
    std::vector<double> z_;
    std::vector<int> v_idx_;
    std::vector<double> v_val_;
    double denom_ = 1.0;
    bool has_border_ = false;
};

} // namespace mvol
