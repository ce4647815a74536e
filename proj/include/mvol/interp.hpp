#pragma once

#include <vector>

#include "mvol/common.hpp"

namespace mvol {

/// C1 piecewise-quadratic interpolant with a not-a-knot condition at the
/// first interior node (the single free condition of a quadratic spline).
/// Degenerates to linear (2 nodes) / constant (1 node).
class QuadSpline {
public:
    QuadSpline() = default;
    QuadSpline(std::vector<double> x, const std::vector<double>& y);

    double eval(double s) const;
    double deriv(double s) const;
    double deriv2(double s) const;   // piecewise constant, right-continuous in the cell index

    const std::vector<double>& nodes() const { return x_; }

private:
    int cell(double s) const;
    std::vector<double> x_, y_, b_, c_;
};

/// Not-a-knot cubic spline (both ends); linear for 2 nodes, parabola for 3.
class CubicSpline {
public:
    CubicSpline() = default;
    CubicSpline(std::vector<double> x, std::vector<double> y);

    double eval(double s) const;
    double deriv(double s) const;

private:
    int cell(double s) const;
    std::vector<double> x_, y_, b_, c_, d_;
};

/// Tensor-product quadratic spline on a rectangle of nodes; evaluation is
/// linear in the node values. Handles degenerate single-node directions.
class TensorQuadSpline {
public:
    TensorQuadSpline() = default;
    /// values[j][k] at (xs[j], ys[k])
    TensorQuadSpline(std::vector<double> xs, std::vector<double> ys,
                     const std::vector<std::vector<double>>& values);

    double eval(double x, double y) const;
    double dx(double x, double y) const;
    double dy(double x, double y) const;
    double dxx(double x, double y) const;

    const std::vector<double>& xs() const { return xs_; }
    const std::vector<double>& ys() const { return ys_; }

private:
    int cell_x(double x) const;
    int cell_y(double y) const;
    double poly(int cx, int cy, double ux, double uy, int dpx, int dpy) const;

    std::vector<double> xs_, ys_;
    int ncx_ = 0, ncy_ = 0;
    std::vector<double> coef_;   // [cx][cy][p][q] flattened
};

} // namespace mvol
