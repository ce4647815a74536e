#include "mvol/interp.hpp"

#include <algorithm>
#include <cmath>

namespace mvol {

namespace {
int locate(const std::vector<double>& x, double s) {
    int n = static_cast<int>(x.size());
    if (n <= 2) return 0;
    auto it = std::upper_bound(x.begin(), x.end(), s);
    int j = static_cast<int>(it - x.begin()) - 1;
    return std::clamp(j, 0, n - 2);
}

void check_nodes(const std::vector<double>& x, std::size_t ny, const char* who) {
    require(!x.empty(), who, ": empty node vector");
    require(x.size() == ny, who, ": ", x.size(), " nodes vs ", ny, " values");
    for (std::size_t i = 1; i < x.size(); ++i)
        require(x[i] > x[i - 1], who, ": nodes not strictly increasing at ", x[i]);
}

// Quadratic not-a-knot coefficients: piece j is y_j + b_j u + c_j u^2,
// u = s - x_j. Recurrence b_{j+1} = 2 d_j - b_j with b_0 from c_0 = c_1.
void quad_coeffs(const std::vector<double>& x, const std::vector<double>& y,
                 std::vector<double>& b, std::vector<double>& c) {
    const int n = static_cast<int>(x.size());
    if (n == 1) { b = {0.0}; c = {0.0}; return; }
    const int m = n - 1;
    std::vector<double> d(static_cast<std::size_t>(m));
    for (int j = 0; j < m; ++j)
        d[static_cast<std::size_t>(j)] = (y[static_cast<std::size_t>(j + 1)] - y[static_cast<std::size_t>(j)]) /
                                         (x[static_cast<std::size_t>(j + 1)] - x[static_cast<std::size_t>(j)]);
    b.assign(static_cast<std::size_t>(m), 0.0);
    c.assign(static_cast<std::size_t>(m), 0.0);
    if (n == 2) { b[0] = d[0]; return; }
    double h0 = x[1] - x[0], h1 = x[2] - x[1];
    b[0] = (d[0] * (h1 + 2.0 * h0) - d[1] * h0) / (h0 + h1);
    for (int j = 0; j + 1 < m; ++j)
        b[static_cast<std::size_t>(j + 1)] = 2.0 * d[static_cast<std::size_t>(j)] - b[static_cast<std::size_t>(j)];
    for (int j = 0; j < m; ++j)
        c[static_cast<std::size_t>(j)] = (d[static_cast<std::size_t>(j)] - b[static_cast<std::size_t>(j)]) /
                                         (x[static_cast<std::size_t>(j + 1)] - x[static_cast<std::size_t>(j)]);
}
} // namespace

QuadSpline::QuadSpline(std::vector<double> x, const std::vector<double>& y) : x_(std::move(x)), y_(y) {
    check_nodes(x_, y.size(), "QuadSpline");
    quad_coeffs(x_, y_, b_, c_);
}

int QuadSpline::cell(double s) const { return locate(x_, s); }

double QuadSpline::eval(double s) const {
    if (x_.size() == 1) return y_[0];
    int j = cell(s);
    double u = s - x_[static_cast<std::size_t>(j)];
    return y_[static_cast<std::size_t>(j)] + u * (b_[static_cast<std::size_t>(j)] + u * c_[static_cast<std::size_t>(j)]);
}

double QuadSpline::deriv(double s) const {
    if (x_.size() == 1) return 0.0;
    int j = cell(s);
    double u = s - x_[static_cast<std::size_t>(j)];
    return b_[static_cast<std::size_t>(j)] + 2.0 * u * c_[static_cast<std::size_t>(j)];
}

double QuadSpline::deriv2(double s) const {
    if (x_.size() == 1) return 0.0;
    return 2.0 * c_[static_cast<std::size_t>(cell(s))];
}

CubicSpline::CubicSpline(std::vector<double> x, std::vector<double> y) : x_(std::move(x)), y_(std::move(y)) {
    check_nodes(x_, y_.size(), "CubicSpline");
    const int n = static_cast<int>(x_.size());
    const int m = std::max(1, n - 1);
    b_.assign(static_cast<std::size_t>(m), 0.0);
    c_.assign(static_cast<std::size_t>(m), 0.0);
    d_.assign(static_cast<std::size_t>(m), 0.0);
    if (n == 1) return;
    if (n == 2) { b_[0] = (y_[1] - y_[0]) / (x_[1] - x_[0]); return; }

    std::vector<double> h(static_cast<std::size_t>(n - 1));
    for (int i = 0; i + 1 < n; ++i) h[static_cast<std::size_t>(i)] = x_[static_cast<std::size_t>(i + 1)] - x_[static_cast<std::size_t>(i)];

    // Solve for node curvatures cc[0..n-1] (s'' / 2) with not-a-knot ends.
    std::vector<double> cc(static_cast<std::size_t>(n), 0.0);
    if (n == 3) {
        // single parabola through three points
        double d0 = (y_[1] - y_[0]) / h[0], d1 = (y_[2] - y_[1]) / h[1];
        double c2 = (d1 - d0) / (h[0] + h[1]);
        cc[0] = cc[1] = cc[2] = c2;
    } else {
        // tridiagonal-with-corners system, small dense Gaussian elimination
        // on a (n x 4)-band is enough here (n is modest for row splines).
        std::vector<std::vector<double>> A(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(n), 0.0));
        std::vector<double> rhs(static_cast<std::size_t>(n), 0.0);
        A[0][0] = h[1]; A[0][1] = -(h[0] + h[1]); A[0][2] = h[0];
        for (int i = 1; i + 1 < n; ++i) {
            A[static_cast<std::size_t>(i)][static_cast<std::size_t>(i - 1)] = h[static_cast<std::size_t>(i - 1)];
            A[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] = 2.0 * (h[static_cast<std::size_t>(i - 1)] + h[static_cast<std::size_t>(i)]);
            A[static_cast<std::size_t>(i)][static_cast<std::size_t>(i + 1)] = h[static_cast<std::size_t>(i)];
            rhs[static_cast<std::size_t>(i)] = 3.0 * ((y_[static_cast<std::size_t>(i + 1)] - y_[static_cast<std::size_t>(i)]) / h[static_cast<std::size_t>(i)] -
                                                      (y_[static_cast<std::size_t>(i)] - y_[static_cast<std::size_t>(i - 1)]) / h[static_cast<std::size_t>(i - 1)]);
        }
        A[static_cast<std::size_t>(n - 1)][static_cast<std::size_t>(n - 3)] = h[static_cast<std::size_t>(n - 2)];
        A[static_cast<std::size_t>(n - 1)][static_cast<std::size_t>(n - 2)] = -(h[static_cast<std::size_t>(n - 3)] + h[static_cast<std::size_t>(n - 2)]);
        A[static_cast<std::size_t>(n - 1)][static_cast<std::size_t>(n - 1)] = h[static_cast<std::size_t>(n - 3)];
        // Gaussian elimination with partial pivoting
        std::vector<int> perm(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
        for (int col = 0; col < n; ++col) {
            int piv = col;
            for (int r = col + 1; r < n && r <= col + 3; ++r)
                if (std::abs(A[static_cast<std::size_t>(r)][static_cast<std::size_t>(col)]) > std::abs(A[static_cast<std::size_t>(piv)][static_cast<std::size_t>(col)])) piv = r;
            std::swap(A[static_cast<std::size_t>(col)], A[static_cast<std::size_t>(piv)]);
            std::swap(rhs[static_cast<std::size_t>(col)], rhs[static_cast<std::size_t>(piv)]);
            require(A[static_cast<std::size_t>(col)][static_cast<std::size_t>(col)] != 0.0, "CubicSpline: singular system");
            for (int r = col + 1; r < n; ++r) {
                double f = A[static_cast<std::size_t>(r)][static_cast<std::size_t>(col)];
                if (f == 0.0) continue;
                f /= A[static_cast<std::size_t>(col)][static_cast<std::size_t>(col)];
                for (int cidx = col; cidx < n; ++cidx)
                    A[static_cast<std::size_t>(r)][static_cast<std::size_t>(cidx)] -= f * A[static_cast<std::size_t>(col)][static_cast<std::size_t>(cidx)];
                rhs[static_cast<std::size_t>(r)] -= f * rhs[static_cast<std::size_t>(col)];
            }
        }
        for (int r = n - 1; r >= 0; --r) {
            double s = rhs[static_cast<std::size_t>(r)];
            for (int cidx = r + 1; cidx < n; ++cidx) s -= A[static_cast<std::size_t>(r)][static_cast<std::size_t>(cidx)] * cc[static_cast<std::size_t>(cidx)];
            cc[static_cast<std::size_t>(r)] = s / A[static_cast<std::size_t>(r)][static_cast<std::size_t>(r)];
        }
    }
    for (int i = 0; i + 1 < n; ++i) {
        double hi = h[static_cast<std::size_t>(i)];
        b_[static_cast<std::size_t>(i)] = (y_[static_cast<std::size_t>(i + 1)] - y_[static_cast<std::size_t>(i)]) / hi -
                                          hi * (2.0 * cc[static_cast<std::size_t>(i)] + cc[static_cast<std::size_t>(i + 1)]) / 3.0;
        c_[static_cast<std::size_t>(i)] = cc[static_cast<std::size_t>(i)];
        d_[static_cast<std::size_t>(i)] = (cc[static_cast<std::size_t>(i + 1)] - cc[static_cast<std::size_t>(i)]) / (3.0 * hi);
    }
}

int CubicSpline::cell(double s) const { return locate(x_, s); }

double CubicSpline::eval(double s) const {
    if (x_.size() == 1) return y_[0];
    int j = cell(s);
    double u = s - x_[static_cast<std::size_t>(j)];
    return y_[static_cast<std::size_t>(j)] +
           u * (b_[static_cast<std::size_t>(j)] + u * (c_[static_cast<std::size_t>(j)] + u * d_[static_cast<std::size_t>(j)]));
}

double CubicSpline::deriv(double s) const {
    if (x_.size() == 1) return 0.0;
    int j = cell(s);
    double u = s - x_[static_cast<std::size_t>(j)];
    return b_[static_cast<std::size_t>(j)] + u * (2.0 * c_[static_cast<std::size_t>(j)] + 3.0 * u * d_[static_cast<std::size_t>(j)]);
}

TensorQuadSpline::TensorQuadSpline(std::vector<double> xs, std::vector<double> ys,
                                   const std::vector<std::vector<double>>& values)
    : xs_(std::move(xs)), ys_(std::move(ys)) {
    require(values.size() == xs_.size(), "TensorQuadSpline: row count mismatch");
    for (const auto& row : values)
        require(row.size() == ys_.size(), "TensorQuadSpline: column count mismatch");
    check_nodes(xs_, values.size(), "TensorQuadSpline/x");
    {
        std::vector<double> dummy(ys_.size(), 0.0);
        check_nodes(ys_, dummy.size(), "TensorQuadSpline/y");
    }
    const int nx = static_cast<int>(xs_.size());
    const int ny = static_cast<int>(ys_.size());
    ncx_ = std::max(1, nx - 1);
    ncy_ = std::max(1, ny - 1);

    // y-direction first: per x-node, piecewise coefficients A[j][cy][q]
    std::vector<double> A(static_cast<std::size_t>(nx) * ncy_ * 3, 0.0);
    auto a_at = [&](int j, int cy, int q) -> double& {
        return A[(static_cast<std::size_t>(j) * ncy_ + cy) * 3 + q];
    };
    for (int j = 0; j < nx; ++j) {
        if (ny == 1) { a_at(j, 0, 0) = values[static_cast<std::size_t>(j)][0]; continue; }
        std::vector<double> b, c;
        quad_coeffs(ys_, values[static_cast<std::size_t>(j)], b, c);
        for (int cy = 0; cy < ncy_; ++cy) {
            a_at(j, cy, 0) = values[static_cast<std::size_t>(j)][static_cast<std::size_t>(cy)];
            a_at(j, cy, 1) = b[static_cast<std::size_t>(cy)];
            a_at(j, cy, 2) = c[static_cast<std::size_t>(cy)];
        }
    }
    // x-direction: for each (cy, q) interpolate A[.][cy][q] over xs
    coef_.assign(static_cast<std::size_t>(ncx_) * ncy_ * 9, 0.0);
    auto c_at = [&](int cx, int cy, int p, int q) -> double& {
        return coef_[((static_cast<std::size_t>(cx) * ncy_ + cy) * 3 + p) * 3 + q];
    };
    std::vector<double> col(static_cast<std::size_t>(nx));
    for (int cy = 0; cy < ncy_; ++cy) {
        for (int q = 0; q < 3; ++q) {
            for (int j = 0; j < nx; ++j) col[static_cast<std::size_t>(j)] = a_at(j, cy, q);
            if (nx == 1) { c_at(0, cy, 0, q) = col[0]; continue; }
            std::vector<double> b, c;
            quad_coeffs(xs_, col, b, c);
            for (int cx = 0; cx < ncx_; ++cx) {
                c_at(cx, cy, 0, q) = col[static_cast<std::size_t>(cx)];
                c_at(cx, cy, 1, q) = b[static_cast<std::size_t>(cx)];
                c_at(cx, cy, 2, q) = c[static_cast<std::size_t>(cx)];
            }
        }
    }
}

int TensorQuadSpline::cell_x(double x) const { return xs_.size() <= 1 ? 0 : locate(xs_, x); }
int TensorQuadSpline::cell_y(double y) const { return ys_.size() <= 1 ? 0 : locate(ys_, y); }

double TensorQuadSpline::poly(int cx, int cy, double ux, double uy, int dpx, int dpy) const {
    const double* c = &coef_[((static_cast<std::size_t>(cx) * ncy_ + cy) * 3) * 3];
    // c[p*3+q] * ux^p * uy^q with requested derivatives
    double acc = 0.0;
    for (int p = dpx; p < 3; ++p) {
        double fx = 1.0;
        for (int k = 0; k < dpx; ++k) fx *= (p - k);
        double xpow = 1.0;
        for (int k = 0; k < p - dpx; ++k) xpow *= ux;
        double inner = 0.0;
        for (int q = dpy; q < 3; ++q) {
            double fy = 1.0;
            for (int k = 0; k < dpy; ++k) fy *= (q - k);
            double ypow = 1.0;
            for (int k = 0; k < q - dpy; ++k) ypow *= uy;
            inner += fy * ypow * c[p * 3 + q];
        }
        acc += fx * xpow * inner;
    }
    return acc;
}

double TensorQuadSpline::eval(double x, double y) const {
    int cx = cell_x(x), cy = cell_y(y);
    return poly(cx, cy, x - xs_[static_cast<std::size_t>(cx)], y - ys_[static_cast<std::size_t>(cy)], 0, 0);
}
double TensorQuadSpline::dx(double x, double y) const {
    int cx = cell_x(x), cy = cell_y(y);
    return poly(cx, cy, x - xs_[static_cast<std::size_t>(cx)], y - ys_[static_cast<std::size_t>(cy)], 1, 0);
}
double TensorQuadSpline::dy(double x, double y) const {
    int cx = cell_x(x), cy = cell_y(y);
    return poly(cx, cy, x - xs_[static_cast<std::size_t>(cx)], y - ys_[static_cast<std::size_t>(cy)], 0, 1);
}
double TensorQuadSpline::dxx(double x, double y) const {
    int cx = cell_x(x), cy = cell_y(y);
    return poly(cx, cy, x - xs_[static_cast<std::size_t>(cx)], y - ys_[static_cast<std::size_t>(cy)], 2, 0);
}

} // namespace mvol
