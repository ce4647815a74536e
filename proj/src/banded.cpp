#include "mvol/banded.hpp"

#include <algorithm>
#include <cmath>

namespace mvol {

BandedLU::BandedLU(int n, int kl, int ku)
    : n_(n), kl_(kl), ku_(ku), width_(2 * kl + ku + 1),
      rows_(static_cast<std::size_t>(n) * (2 * kl + ku + 1), 0.0),
      piv_(static_cast<std::size_t>(n), 0),
      lfac_(static_cast<std::size_t>(n) * kl, 0.0) {
    require(n > 0 && kl >= 0 && ku >= 0, "BandedLU: bad shape");
}

void BandedLU::set(int i, int j, double v) {
    require(!factored_, "BandedLU: set after factor");
    require(j >= i - kl_ && j <= i + ku_, "BandedLU: (", i, ",", j, ") outside band");
    rows_[static_cast<std::size_t>(i) * width_ + idx(i, j)] = v;
}

double BandedLU::get(int i, int j) const {
    if (j < i - kl_ || j > i - kl_ + width_ - 1) return 0.0;
    return rows_[static_cast<std::size_t>(i) * width_ + idx(i, j)];
}

void BandedLU::factor() {
    require(!factored_, "BandedLU: already factored");
    auto at = [&](int i, int j) -> double& {
        return rows_[static_cast<std::size_t>(i) * width_ + (j - (i - kl_))];
    };
    for (int col = 0; col < n_; ++col) {
        int last_row = std::min(n_ - 1, col + kl_);
        int piv = col;
        double best = std::abs(at(col, col));
        for (int r = col + 1; r <= last_row; ++r) {
            double v = (col >= r - kl_) ? std::abs(at(r, col)) : 0.0;
            if (v > best) { best = v; piv = r; }
        }
        require(best > 0.0, "BandedLU: singular at column ", col);
        piv_[static_cast<std::size_t>(col)] = piv;
        if (piv != col) {
            // swap the two row windows entry-by-entry over their column union
            int lo = col;                                  // earlier columns already eliminated
            int hi = std::min(n_ - 1, piv - kl_ + width_ - 1);
            for (int j = lo; j <= hi; ++j) {
                double a = (j <= col - kl_ + width_ - 1) ? at(col, j) : 0.0;
                double b = (j >= piv - kl_) ? at(piv, j) : 0.0;
                if (j <= col - kl_ + width_ - 1) at(col, j) = b;
                if (j >= piv - kl_) at(piv, j) = a;
            }
        }
        double pivot = at(col, col);
        int jhi = std::min(n_ - 1, col - kl_ + width_ - 1);
        for (int r = col + 1; r <= last_row; ++r) {
            double l = at(r, col) / pivot;
            lfac_[static_cast<std::size_t>(col) * kl_ + (r - col - 1)] = l;
            if (l != 0.0)
                for (int j = col + 1; j <= std::min(jhi, r - kl_ + width_ - 1); ++j)
                    at(r, j) -= l * at(col, j);
            at(r, col) = 0.0;
        }
    }
    factored_ = true;
}

void BandedLU::solve(double* b) const {
    require(factored_, "BandedLU: solve before factor");
    const double* rows = rows_.data();
    for (int col = 0; col < n_; ++col) {
        int piv = piv_[static_cast<std::size_t>(col)];
        if (piv != col) std::swap(b[col], b[piv]);
        int last_row = std::min(n_ - 1, col + kl_);
        for (int r = col + 1; r <= last_row; ++r)
            b[r] -= lfac_[static_cast<std::size_t>(col) * kl_ + (r - col - 1)] * b[col];
    }
    for (int r = n_ - 1; r >= 0; --r) {
        const double* row = rows + static_cast<std::size_t>(r) * width_;
        double s = b[r];
        int jhi = std::min(n_ - 1, r - kl_ + width_ - 1);
        for (int j = r + 1; j <= jhi; ++j) s -= row[j - (r - kl_)] * b[j];
        b[r] = s / row[kl_];
    }
}

BorderedBandSolver::BorderedBandSolver(BandedLU lu, const std::vector<double>& u,
                                       const std::vector<int>& v_idx, const std::vector<double>& v_val)
    : lu_(std::move(lu)), v_idx_(v_idx), v_val_(v_val) {
    require(v_idx.size() == v_val.size(), "BorderedBandSolver: v index/value mismatch");
    has_border_ = false;
    for (double x : u)
        if (x != 0.0) { has_border_ = true; break; }
    if (!has_border_) return;
    z_ = u;
    lu_.solve(z_);
    double vz = 0.0;
    for (std::size_t k = 0; k < v_idx_.size(); ++k) vz += v_val_[k] * z_[static_cast<std::size_t>(v_idx_[k])];
    denom_ = 1.0 + vz;
    require(std::abs(denom_) > 1e-14, "BorderedBandSolver: singular bordered system (1+v.z=", denom_, ")");
}

void BorderedBandSolver::solve(std::vector<double>& b) const {
    lu_.solve(b);
    if (!has_border_) return;
    double vy = 0.0;
    for (std::size_t k = 0; k < v_idx_.size(); ++k) vy += v_val_[k] * b[static_cast<std::size_t>(v_idx_[k])];
    double scale = vy / denom_;
    if (scale == 0.0) return;
    for (std::size_t i = 0; i < b.size(); ++i) b[i] -= scale * z_[i];
}

} // namespace mvol
