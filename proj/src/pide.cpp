#include "mvol/pide.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "mvol/banded.hpp"
#include "mvol/interp.hpp"
#include "mvol/math.hpp"

namespace mvol {

// ---------------------------------------------------------------------------
// PriceSurface

PriceSurface::PriceSurface(std::shared_ptr<const StrikeBarrierMesh> mesh, int first_row)
    : mesh_(std::move(mesh)), first_row_(first_row) {}

void PriceSurface::add_layer(PideLayer layer) { layers_.push_back(std::move(layer)); }

bool PriceSurface::has_time(double t) const {
    for (const auto& l : layers_)
        if (std::abs(l.t - t) < 1e-12) return true;
    return false;
}

const PideLayer& PriceSurface::layer_at(double t) const {
    for (const auto& l : layers_)
        if (std::abs(l.t - t) < 1e-12) return l;
    fail("PriceSurface: no stored layer at t=", t, " (no time interpolation is performed)");
}

namespace {

// C(K=0, .) across barrier rows: [s0 -> 0] plus solved rows, cubic spline,
// constant beyond the last row, vanilla-layer value for very large barriers.
double no_touch_from_layer(const StrikeBarrierMesh& mesh, int first_row, const PideLayer& layer,
                           double barrier) {
    require(barrier >= mesh.s0, "no_touch: barrier below spot");
    std::vector<double> bs{mesh.s0}, vs{0.0};
    for (int j = first_row; j < mesh.n_rows; ++j) {
        bs.push_back(mesh.barrier(j));
        vs.push_back(layer.rows[static_cast<std::size_t>(j)][0]);
    }
    double b_big = 10.0 * bs.back();
    if (barrier >= b_big) return layer.vanilla[0];
    double v = barrier >= bs.back() ? vs.back() : CubicSpline(bs, vs).eval(barrier);
    return std::clamp(v, 0.0, layer.dd * mesh.s0);
}

double row_price(const StrikeBarrierMesh& mesh, int j, const PideLayer& layer, double strike) {
    const auto& row = layer.rows[static_cast<std::size_t>(j)];
    std::vector<double> ks(mesh.strikes.begin(), mesh.strikes.begin() + static_cast<long>(row.size()));
    return CubicSpline(ks, std::vector<double>(row.begin(), row.end())).eval(strike);
}

} // namespace

double PriceSurface::no_touch(double barrier, double t) const {
    return no_touch_from_layer(*mesh_, first_row_, layer_at(t), barrier);
}

double PriceSurface::vanilla_price(double strike, double t) const {
    const auto& layer = layer_at(t);
    require(strike >= 0.0 && strike <= mesh_->k_max(), "vanilla_price: strike outside mesh");
    std::vector<double> ks(mesh_->strikes.begin(), mesh_->strikes.begin() + mesh_->vanilla_len);
    return CubicSpline(ks, layer.vanilla).eval(strike);
}

double PriceSurface::implied_vol(double strike, double t) const {
    const auto& layer = layer_at(t);
    double undisc = vanilla_price(strike, t) / layer.dd;
    return implied_vol_black(undisc, layer.forward, strike, t);
}

double PriceSurface::price(double strike, double barrier, double t) const {
    const auto& layer = layer_at(t);
    double b0 = std::max(mesh_->s0, strike);
    if (barrier <= b0) return 0.0;
    std::vector<double> bs{b0}, vs{0.0};
    for (int j = first_row_; j < mesh_->n_rows; ++j) {
        if (mesh_->barrier(j) <= b0) continue;
        bs.push_back(mesh_->barrier(j));
        vs.push_back(row_price(*mesh_, j, layer, strike));
    }
    require(bs.size() >= 2, "price: no rows above the requested barrier level");
    if (barrier >= 10.0 * bs.back()) return vanilla_price(strike, t);
    if (barrier >= bs.back()) return vs.back();
    return std::max(0.0, CubicSpline(bs, vs).eval(barrier));
}

std::vector<std::pair<double, double>> PriceSurface::density_diagonal(double t) const {
    const auto& layer = layer_at(t);
    std::vector<std::pair<double, double>> out;
    for (int j = first_row_; j < mesh_->n_rows; ++j) {
        const auto& row = layer.rows[static_cast<std::size_t>(j)];
        int n = static_cast<int>(row.size());
        if (n < 5) continue;
        std::vector<double> off(5), vals(5);
        double e = mesh_->strikes[static_cast<std::size_t>(n - 1)];
        for (int k = 0; k < 5; ++k) {
            off[static_cast<std::size_t>(k)] = mesh_->strikes[static_cast<std::size_t>(n - 5 + k)] - e;
            vals[static_cast<std::size_t>(k)] = row[static_cast<std::size_t>(n - 5 + k)];
        }
        auto w = fd_weights(3, off);
        out.emplace_back(mesh_->barrier(j), -w.apply(vals.data()) / layer.dd);
    }
    return out;
}

// ---------------------------------------------------------------------------
// GradientSurface

GradientSurface::GradientSurface(std::shared_ptr<const StrikeBarrierMesh> mesh, int first_row,
                                 std::vector<ParamDesc> params)
    : mesh_(std::move(mesh)), first_row_(first_row), params_(std::move(params)),
      layers_(params_.size()) {}

const PideLayer& GradientSurface::layer_at(std::size_t p, double t) const {
    require(p < params_.size(), "GradientSurface: bad param index");
    for (const auto& l : layers_[p])
        if (std::abs(l.t - t) < 1e-12) return l;
    fail("GradientSurface: no stored layer at t=", t);
}

void GradientSurface::add_layer(std::size_t p, PideLayer layer) {
    layers_[p].push_back(std::move(layer));
}

double GradientSurface::no_touch_grad(std::size_t p, double barrier, double t) const {
    const auto& layer = layer_at(p, t);
    std::vector<double> bs{mesh_->s0}, vs{0.0};
    for (int j = first_row_; j < mesh_->n_rows; ++j) {
        bs.push_back(mesh_->barrier(j));
        vs.push_back(layer.rows[static_cast<std::size_t>(j)][0]);
    }
    if (barrier >= bs.back()) return vs.back();
    return CubicSpline(bs, vs).eval(barrier);
}

double GradientSurface::vanilla_grad(std::size_t p, double strike, double t) const {
    const auto& layer = layer_at(p, t);
    std::vector<double> ks(mesh_->strikes.begin(), mesh_->strikes.begin() + mesh_->vanilla_len);
    return CubicSpline(ks, layer.vanilla).eval(strike);
}

// ---------------------------------------------------------------------------
// ForwardPide geometry caches

struct ForwardPide::RowGeom {
    // 3-point derivative weights per interior strike node (global node index)
    std::vector<double> d1l, d1c, d1r, d2l, d2c, d2r;
    std::array<double, 3> first_d1{}, first_d2{};
    std::vector<std::array<double, 5>> phi;   // per barrier row, at the row end
    std::array<double, 3> van_end_d2{};
};

struct ForwardPide::GradCache {
    // per param: basis value / m-derivative at every row node, basis at the
    // row diagonal (B_j, B_j), and basis on the vanilla layer
    std::vector<bool> ready;
    std::vector<std::vector<std::vector<double>>> b, bm;   // [p][row][i]
    std::vector<std::vector<double>> b_diag;               // [p][row]
    std::vector<std::vector<double>> b_van;                // [p][i]
};

void ForwardPide::ensure_geometry() {
    if (geom_) return;
    geom_ = std::make_unique<RowGeom>();
    const auto& K = mesh_->strikes;
    const int n_total = static_cast<int>(K.size());
    geom_->d1l.assign(static_cast<std::size_t>(n_total), 0.0);
    geom_->d1c.assign(static_cast<std::size_t>(n_total), 0.0);
    geom_->d1r.assign(static_cast<std::size_t>(n_total), 0.0);
    geom_->d2l.assign(static_cast<std::size_t>(n_total), 0.0);
    geom_->d2c.assign(static_cast<std::size_t>(n_total), 0.0);
    geom_->d2r.assign(static_cast<std::size_t>(n_total), 0.0);
    for (int i = 1; i + 1 < n_total; ++i) {
        std::vector<double> off{K[static_cast<std::size_t>(i - 1)] - K[static_cast<std::size_t>(i)], 0.0,
                                K[static_cast<std::size_t>(i + 1)] - K[static_cast<std::size_t>(i)]};
        auto w1 = fd_weights(1, off);
        auto w2 = fd_weights(2, off);
        geom_->d1l[static_cast<std::size_t>(i)] = w1.weights[0];
        geom_->d1c[static_cast<std::size_t>(i)] = w1.weights[1];
        geom_->d1r[static_cast<std::size_t>(i)] = w1.weights[2];
        geom_->d2l[static_cast<std::size_t>(i)] = w2.weights[0];
        geom_->d2c[static_cast<std::size_t>(i)] = w2.weights[1];
        geom_->d2r[static_cast<std::size_t>(i)] = w2.weights[2];
    }
    {
        std::vector<double> off{0.0, K[1] - K[0], K[2] - K[0]};
        auto w1 = fd_weights(1, off);
        auto w2 = fd_weights(2, off);
        for (int k = 0; k < 3; ++k) {
            geom_->first_d1[static_cast<std::size_t>(k)] = w1.weights[static_cast<std::size_t>(k)];
            geom_->first_d2[static_cast<std::size_t>(k)] = w2.weights[static_cast<std::size_t>(k)];
        }
    }
    geom_->phi.resize(static_cast<std::size_t>(mesh_->n_rows));
    for (int j = first_row_; j < mesh_->n_rows; ++j) {
        int e = mesh_->row_len(j) - 1;
        require(e >= 4, "ForwardPide: row ", j, " too short for the 5-point boundary stencil");
        std::vector<double> off(5);
        for (int k = 0; k < 5; ++k)
            off[static_cast<std::size_t>(k)] = K[static_cast<std::size_t>(e - 4 + k)] - K[static_cast<std::size_t>(e)];
        auto w = fd_weights(3, off);
        for (int k = 0; k < 5; ++k) geom_->phi[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)] = w.weights[static_cast<std::size_t>(k)];
    }
    {
        int e = mesh_->vanilla_len - 1;
        std::vector<double> off{K[static_cast<std::size_t>(e - 2)] - K[static_cast<std::size_t>(e)],
                                K[static_cast<std::size_t>(e - 1)] - K[static_cast<std::size_t>(e)], 0.0};
        auto w = fd_weights(2, off);
        for (int k = 0; k < 3; ++k) geom_->van_end_d2[static_cast<std::size_t>(k)] = w.weights[static_cast<std::size_t>(k)];
    }
}

// ---------------------------------------------------------------------------
// ForwardPide

ForwardPide::ForwardPide(std::shared_ptr<const StrikeBarrierMesh> mesh, RateCurve dom, RateCurve forr,
                         PideConfig cfg)
    : mesh_(std::move(mesh)), dom_(std::move(dom)), for_(std::move(forr)), cfg_(cfg) {
    first_row_ = mesh_->first_solved_row();
    ensure_geometry();
    reset();
}

void ForwardPide::set_surface(const VolSurface* surf) {
    surf_ = surf;
    surface_checked_ = false;
}

void ForwardPide::check_surface_preconditions() const {
    if (!cfg_.check_surface || mesh_->blank_layers == 0) return;
    const double s0 = mesh_->s0;
    const double b_blank = mesh_->barrier(std::min(mesh_->blank_layers + 1, mesh_->n_rows - 1));
    const double b_last = mesh_->b_last();
    for (std::size_t isl = 0; isl < surf_->n_slices(); ++isl) {
        double t = surf_->slice(isl).t;
        for (double s : {0.0, 0.5 * s0, s0}) {
            for (int k = 0; k <= 8; ++k) {
                double m = s0 + (b_blank - s0) * k / 8.0;
                require(std::abs(surf_->dsig2_dm(s, m, t)) < 1e-10,
                        "ForwardPide: blank-layer zone violation: d(sigma^2)/db != 0 at m=", m,
                        " t=", t, " (blank zone is [", s0, ", ", b_blank, "])");
            }
            for (double m : {b_last, 1.5 * b_last, 3.0 * b_last})
                require(std::abs(surf_->dsig2_dm(s, m, t)) < 1e-10,
                        "ForwardPide: surface not flat at/above B_last=", b_last, " (m=", m, ", t=", t, ")");
        }
    }
}

void ForwardPide::reset() {
    m_ = 0;
    const auto& K = mesh_->strikes;
    u_.assign(static_cast<std::size_t>(mesh_->n_rows), {});
    for (int j = 0; j < mesh_->n_rows; ++j) {
        if (j != 0 && j < first_row_) continue;   // blank layers hold no values
        std::vector<double> row(static_cast<std::size_t>(mesh_->row_len(j)), 0.0);
        if (j > 0)
            for (int i = 0; i < mesh_->row_len(j); ++i)
                row[static_cast<std::size_t>(i)] = std::max(mesh_->s0 - K[static_cast<std::size_t>(i)], 0.0);
        // row 0 sits at B = S0 where the knock-out is immediate
        u_[static_cast<std::size_t>(j)] = std::move(row);
    }
    van_.assign(static_cast<std::size_t>(mesh_->vanilla_len), 0.0);
    for (int i = 0; i < mesh_->vanilla_len; ++i)
        van_[static_cast<std::size_t>(i)] = std::max(mesh_->s0 - K[static_cast<std::size_t>(i)], 0.0);
    u_prev_ = u_;
    van_prev_ = van_;
    if (!params_.empty()) {
        gu_.assign(params_.size(), u_);
        for (auto& rows : gu_)
            for (auto& r : rows) std::fill(r.begin(), r.end(), 0.0);
        gu_prev_ = gu_;
        gvan_.assign(params_.size(), std::vector<double>(van_.size(), 0.0));
        gvan_prev_ = gvan_;
    }
}

void ForwardPide::enable_gradients(std::vector<ParamDesc> params) {
    params_ = std::move(params);
    gcache_ = std::make_unique<GradCache>();
    gcache_->ready.assign(params_.size(), false);
    gcache_->b.resize(params_.size());
    gcache_->bm.resize(params_.size());
    gcache_->b_diag.resize(params_.size());
    gcache_->b_van.resize(params_.size());
    gu_.assign(params_.size(), u_);
    for (auto& rows : gu_)
        for (auto& r : rows) std::fill(r.begin(), r.end(), 0.0);
    gu_prev_ = gu_;
    gvan_.assign(params_.size(), std::vector<double>(van_.size(), 0.0));
    gvan_prev_ = gvan_;
}

Bdf2Coeffs bdf2_coefficients(double dt, double dt_prev) {
    require(dt > 0.0 && dt_prev > 0.0, "bdf2_coefficients: steps must be positive");
    require(dt / dt_prev < 1.0 + std::sqrt(2.0), "bdf2_coefficients: step ratio ", dt / dt_prev,
            " breaches the stability bound 1+sqrt(2)");
    double gamma = dt / (dt + dt_prev);
    Bdf2Coeffs c;
    c.alpha = dt / (1.0 + gamma);
    c.c2 = (dt / dt_prev) * gamma / (1.0 + gamma);
    c.c1 = 1.0 + c.c2;
    return c;
}

RowOperator assemble_row_operator(const StrikeBarrierMesh& mesh, const VolSurface& surf,
                                  const RateCurve& dom, const RateCurve& forr, int j, double t) {
    require(j == 0 || j >= mesh.first_solved_row(), "assemble_row_operator: row ", j,
            " is a blank layer");
    require(j >= 0 && j < mesh.n_rows, "assemble_row_operator: row out of range");
    const int n = mesh.row_len(j);
    const double B = mesh.barrier(j);
    const double dB = j > 0 ? B - mesh.barrier(j - 1) : 0.0;
    RowOperator op;
    op.j = j;
    op.t = t;
    op.rf = forr.rate(t);
    double carry = dom.rate(t) - op.rf;
    op.a_diag.resize(static_cast<std::size_t>(n));
    op.b_diag.resize(static_cast<std::size_t>(n));
    op.c_diag.resize(static_cast<std::size_t>(n));
    double sig_diag = surf.eval(B, B, t);
    for (int i = 0; i < n; ++i) {
        double k = mesh.strikes[static_cast<std::size_t>(i)];
        double s = surf.eval(k, B, t);
        require(s > 0.0, "assemble_row_operator: sigma nonpositive at K=", k, " B=", B);
        double ds2 = surf.dsig2_dm(k, B, t);
        op.a_diag[static_cast<std::size_t>(i)] = carry * k;
        op.b_diag[static_cast<std::size_t>(i)] = -0.5 * (s * s - 0.5 * ds2 * dB) * k * k;
        op.c_diag[static_cast<std::size_t>(i)] = (j == 0) ? 0.0
                                                          : -0.5 * sig_diag * sig_diag * B * B * std::max(B - k, 0.0);
    }
    return op;
}

std::vector<double> apply_row_operator(const StrikeBarrierMesh& mesh, const RowOperator& op,
                                       const std::vector<double>& u) {
    const int n = static_cast<int>(u.size());
    require(n == mesh.row_len(op.j), "apply_row_operator: size mismatch");
    require(n >= 5, "apply_row_operator: row too short");
    const auto& K = mesh.strikes;
    std::vector<double> out(u.size(), 0.0);
    std::vector<double> off5(5), vals5(5);
    for (int k = 0; k < 5; ++k) {
        off5[static_cast<std::size_t>(k)] = K[static_cast<std::size_t>(n - 5 + k)] - K[static_cast<std::size_t>(n - 1)];
        vals5[static_cast<std::size_t>(k)] = u[static_cast<std::size_t>(n - 5 + k)];
    }
    double phiu = fd_weights(3, off5).apply(vals5.data());
    for (int i = 0; i < n; ++i) {
        int lo = std::clamp(i - 1, 0, n - 3);
        std::vector<double> off{K[static_cast<std::size_t>(lo)] - K[static_cast<std::size_t>(i)],
                                K[static_cast<std::size_t>(lo + 1)] - K[static_cast<std::size_t>(i)],
                                K[static_cast<std::size_t>(lo + 2)] - K[static_cast<std::size_t>(i)]};
        double d1 = fd_weights(1, off).apply(&u[static_cast<std::size_t>(lo)]);
        double d2 = fd_weights(2, off).apply(&u[static_cast<std::size_t>(lo)]);
        out[static_cast<std::size_t>(i)] = op.rf * u[static_cast<std::size_t>(i)] +
                                           op.a_diag[static_cast<std::size_t>(i)] * d1 +
                                           op.b_diag[static_cast<std::size_t>(i)] * d2 +
                                           op.c_diag[static_cast<std::size_t>(i)] * phiu;
    }
    return out;
}

namespace {
struct RhsScheme {
    double alpha = 0.0;   // coefficient of L and f in the implicit system
    double c1 = 1.0;      // u^{m-1} weight
    double c2 = 0.0;      // u^{m-2} weight
    bool cn = false;
    double dt = 0.0;
};
} // namespace

void ForwardPide::do_substep(double t_new, double dt, double dt_prev, TimeScheme scheme,
                             bool have_two_levels) {
    require(surf_, "ForwardPide: no surface set");
    if (!surface_checked_) {
        check_surface_preconditions();
        surface_checked_ = true;
    }
    const auto& K = mesh_->strikes;
    const double rd = dom_.rate(t_new);
    const double rf = for_.rate(t_new);
    const double carry = rd - rf;
    const int n_params = static_cast<int>(params_.size());
    require(!(n_params > 0 && scheme == TimeScheme::CrankNicolson),
            "ForwardPide: gradients are not supported with Crank-Nicolson stepping");

    RhsScheme rs;
    rs.dt = dt;
    switch (scheme) {
        case TimeScheme::Implicit:
            rs.alpha = dt;
            rs.c1 = 1.0;
            rs.c2 = 0.0;
            break;
        case TimeScheme::Bdf2: {
            require(have_two_levels, "ForwardPide: BDF2 needs two history levels");
            Bdf2Coeffs c = bdf2_coefficients(dt, dt_prev);
            rs.alpha = c.alpha;
            rs.c1 = c.c1;
            rs.c2 = c.c2;
            break;
        }
        case TimeScheme::CrankNicolson:
            rs.alpha = 0.5 * dt;
            rs.cn = true;
            break;
    }

    const int n_total = static_cast<int>(K.size());
    std::vector<double> f_acc(static_cast<std::size_t>(n_total), 0.0);
    std::vector<std::vector<double>> gf_acc(static_cast<std::size_t>(n_params),
                                            std::vector<double>(static_cast<std::size_t>(n_total), 0.0));

    // which slice supplies each parameter's basis right now
    std::vector<char> active(static_cast<std::size_t>(n_params), 0);
    std::size_t cur_slice = surf_->slice_index(t_new);
    for (int p = 0; p < n_params; ++p) {
        active[static_cast<std::size_t>(p)] = (params_[static_cast<std::size_t>(p)].slice == cur_slice) ? 1 : 0;
        if (active[static_cast<std::size_t>(p)] && !gcache_->ready[static_cast<std::size_t>(p)]) {
            // fill the basis caches for this parameter once
            const auto& d = params_[static_cast<std::size_t>(p)];
            const auto& sl = surf_->slice(d.slice);
            auto basis = VolSurface::basis_spline(sl, d.node_x, d.node_y);
            auto& bp = gcache_->b[static_cast<std::size_t>(p)];
            auto& bmp = gcache_->bm[static_cast<std::size_t>(p)];
            auto& bd = gcache_->b_diag[static_cast<std::size_t>(p)];
            bp.assign(static_cast<std::size_t>(mesh_->n_rows), {});
            bmp.assign(static_cast<std::size_t>(mesh_->n_rows), {});
            bd.assign(static_cast<std::size_t>(mesh_->n_rows), 0.0);
            for (int j = first_row_; j < mesh_->n_rows; ++j) {
                int n = mesh_->row_len(j);
                double B = mesh_->barrier(j);
                auto& bj = bp[static_cast<std::size_t>(j)];
                auto& bmj = bmp[static_cast<std::size_t>(j)];
                bj.resize(static_cast<std::size_t>(n));
                bmj.resize(static_cast<std::size_t>(n));
                for (int i = 0; i < n; ++i) {
                    bj[static_cast<std::size_t>(i)] = sl.eval_with(basis, K[static_cast<std::size_t>(i)], B);
                    bmj[static_cast<std::size_t>(i)] = sl.dm_with(basis, K[static_cast<std::size_t>(i)], B);
                }
                bd[static_cast<std::size_t>(j)] = sl.eval_with(basis, B, B);
            }
            auto& bv = gcache_->b_van[static_cast<std::size_t>(p)];
            bv.resize(static_cast<std::size_t>(mesh_->vanilla_len));
            double m_big = 1e6 * mesh_->s0;
            for (int i = 0; i < mesh_->vanilla_len; ++i)
                bv[static_cast<std::size_t>(i)] = sl.eval_with(basis, K[static_cast<std::size_t>(i)], m_big);
            gcache_->ready[static_cast<std::size_t>(p)] = true;
        }
    }

    // row 0 (B = S0) is identically zero for t > 0
    std::fill(u_prev_[0].begin(), u_prev_[0].end(), 0.0);
    std::fill(u_[0].begin(), u_[0].end(), 0.0);
    for (int p = 0; p < n_params; ++p) {
        std::fill(gu_prev_[static_cast<std::size_t>(p)][0].begin(), gu_prev_[static_cast<std::size_t>(p)][0].end(), 0.0);
        std::fill(gu_[static_cast<std::size_t>(p)][0].begin(), gu_[static_cast<std::size_t>(p)][0].end(), 0.0);
    }

    // scratch buffers
    std::vector<double> sig, dsig2dm, bcoef, ccoef, rhs, d2u, newrow;
    std::vector<double> gbar_scale;   // -(1/2) K_i^2 * d(sigma^2)/dB, reused for gradient sources

    auto d2_apply = [&](const std::vector<double>& v, int i, int n) -> double {
        if (i == 0)
            return geom_->first_d2[0] * v[0] + geom_->first_d2[1] * v[1] + geom_->first_d2[2] * v[2];
        if (i == n - 1) return 0.0;   // unused (Dirichlet / handled separately)
        return geom_->d2l[static_cast<std::size_t>(i)] * v[static_cast<std::size_t>(i - 1)] +
               geom_->d2c[static_cast<std::size_t>(i)] * v[static_cast<std::size_t>(i)] +
               geom_->d2r[static_cast<std::size_t>(i)] * v[static_cast<std::size_t>(i + 1)];
    };

    for (int j = first_row_; j < mesh_->n_rows; ++j) {
        const int n = mesh_->row_len(j);
        const double B = mesh_->barrier(j);
        const double dB = B - mesh_->strikes[static_cast<std::size_t>(mesh_->n0 + j - 1)];
        const double dB_next = (j + 1 < mesh_->n_rows) ? mesh_->barrier(j + 1) - B : 0.0;
        const auto& phi = geom_->phi[static_cast<std::size_t>(j)];

        sig.resize(static_cast<std::size_t>(n));
        dsig2dm.resize(static_cast<std::size_t>(n));
        bcoef.resize(static_cast<std::size_t>(n));
        ccoef.resize(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            double s = surf_->eval(K[static_cast<std::size_t>(i)], B, t_new);
            require(s > 0.0, "ForwardPide: sigma nonpositive at K=", K[static_cast<std::size_t>(i)],
                    " B=", B, " t=", t_new);
            sig[static_cast<std::size_t>(i)] = s;
            dsig2dm[static_cast<std::size_t>(i)] = surf_->dsig2_dm(K[static_cast<std::size_t>(i)], B, t_new);
        }
        const double sig_diag = sig[static_cast<std::size_t>(n - 1)];
        for (int i = 0; i < n; ++i) {
            double k = K[static_cast<std::size_t>(i)];
            bcoef[static_cast<std::size_t>(i)] =
                -0.5 * (sig[static_cast<std::size_t>(i)] * sig[static_cast<std::size_t>(i)] -
                        0.5 * dsig2dm[static_cast<std::size_t>(i)] * dB) * k * k;
            ccoef[static_cast<std::size_t>(i)] = -0.5 * sig_diag * sig_diag * B * B * std::max(B - k, 0.0);
        }

        // assemble I + alpha * (rf I + A D + B D2); Dirichlet at the row end
        BandedLU lu(n, 2, 2);
        {
            double a0 = carry * K[0];
            for (int c = 0; c < 3; ++c)
                lu.set(0, c, (c == 0 ? 1.0 : 0.0) +
                                 rs.alpha * ((c == 0 ? rf : 0.0) + a0 * geom_->first_d1[static_cast<std::size_t>(c)] +
                                             bcoef[0] * geom_->first_d2[static_cast<std::size_t>(c)]));
        }
        for (int i = 1; i < n - 1; ++i) {
            double a = carry * K[static_cast<std::size_t>(i)];
            double b = bcoef[static_cast<std::size_t>(i)];
            lu.set(i, i - 1, rs.alpha * (a * geom_->d1l[static_cast<std::size_t>(i)] + b * geom_->d2l[static_cast<std::size_t>(i)]));
            lu.set(i, i, 1.0 + rs.alpha * (rf + a * geom_->d1c[static_cast<std::size_t>(i)] + b * geom_->d2c[static_cast<std::size_t>(i)]));
            lu.set(i, i + 1, rs.alpha * (a * geom_->d1r[static_cast<std::size_t>(i)] + b * geom_->d2r[static_cast<std::size_t>(i)]));
        }
        lu.set(n - 1, n - 1, 1.0);

        // rhs
        const auto& uc = u_[static_cast<std::size_t>(j)];
        const auto& up = u_prev_[static_cast<std::size_t>(j)];
        rhs.assign(static_cast<std::size_t>(n), 0.0);
        if (rs.cn) {
            // (I - dt/2 L) u_old + dt f
            double phiu_old = 0.0;
            for (int k = 0; k < 5; ++k)
                phiu_old += phi[static_cast<std::size_t>(k)] * uc[static_cast<std::size_t>(n - 5 + k)];
            for (int i = 0; i < n - 1; ++i) {
                double a = carry * K[static_cast<std::size_t>(i)];
                double d1, d2v;
                if (i == 0) {
                    d1 = geom_->first_d1[0] * uc[0] + geom_->first_d1[1] * uc[1] + geom_->first_d1[2] * uc[2];
                    d2v = geom_->first_d2[0] * uc[0] + geom_->first_d2[1] * uc[1] + geom_->first_d2[2] * uc[2];
                } else {
                    d1 = geom_->d1l[static_cast<std::size_t>(i)] * uc[static_cast<std::size_t>(i - 1)] +
                         geom_->d1c[static_cast<std::size_t>(i)] * uc[static_cast<std::size_t>(i)] +
                         geom_->d1r[static_cast<std::size_t>(i)] * uc[static_cast<std::size_t>(i + 1)];
                    d2v = d2_apply(uc, i, n);
                }
                double lu_old = rf * uc[static_cast<std::size_t>(i)] + a * d1 +
                                bcoef[static_cast<std::size_t>(i)] * d2v +
                                ccoef[static_cast<std::size_t>(i)] * phiu_old;
                rhs[static_cast<std::size_t>(i)] = uc[static_cast<std::size_t>(i)] - rs.alpha * lu_old +
                                                   dt * f_acc[static_cast<std::size_t>(i)];
            }
        } else {
            for (int i = 0; i < n - 1; ++i)
                rhs[static_cast<std::size_t>(i)] = rs.c1 * uc[static_cast<std::size_t>(i)] -
                                                   rs.c2 * up[static_cast<std::size_t>(i)] +
                                                   rs.alpha * f_acc[static_cast<std::size_t>(i)];
        }
        rhs[static_cast<std::size_t>(n - 1)] = 0.0;

        // factor once, reuse for every gradient right-hand side
        std::vector<double> border(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) border[static_cast<std::size_t>(i)] = rs.alpha * ccoef[static_cast<std::size_t>(i)];
        std::vector<int> vidx(5);
        std::vector<double> vval(5);
        for (int k = 0; k < 5; ++k) {
            vidx[static_cast<std::size_t>(k)] = n - 5 + k;
            vval[static_cast<std::size_t>(k)] = phi[static_cast<std::size_t>(k)];
        }
        try {
            lu.factor();
        } catch (const error& e) {
            fail("ForwardPide: singular row system at row j=", j, ", t=", t_new, ": ", e.what());
        }
        BorderedBandSolver solver(std::move(lu), border, vidx, vval);
        newrow = rhs;
        solver.solve(newrow);

        // shared pieces for gradients and the integral induction
        d2u.resize(static_cast<std::size_t>(n));
        for (int i = 0; i < n - 1; ++i) d2u[static_cast<std::size_t>(i)] = d2_apply(newrow, i, n);
        d2u[static_cast<std::size_t>(n - 1)] = 0.0;   // d2C/dK2 = 0 at K = B
        double phiu_new = 0.0;
        for (int k = 0; k < 5; ++k)
            phiu_new += phi[static_cast<std::size_t>(k)] * newrow[static_cast<std::size_t>(n - 5 + k)];

        gbar_scale.resize(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i)
            gbar_scale[static_cast<std::size_t>(i)] =
                -0.5 * K[static_cast<std::size_t>(i)] * K[static_cast<std::size_t>(i)];

        if (n_params > 0) {
            auto grad_one = [&](int p) {
                const auto& gc_b = gcache_->b[static_cast<std::size_t>(p)];
                const auto& gc_bm = gcache_->bm[static_cast<std::size_t>(p)];
                bool act = active[static_cast<std::size_t>(p)] != 0;
                const auto& gc = gu_[static_cast<std::size_t>(p)][static_cast<std::size_t>(j)];
                const auto& gp = gu_prev_[static_cast<std::size_t>(p)][static_cast<std::size_t>(j)];
                std::vector<double> grhs(static_cast<std::size_t>(n), 0.0);
                for (int i = 0; i < n - 1; ++i)
                    grhs[static_cast<std::size_t>(i)] = rs.c1 * gc[static_cast<std::size_t>(i)] -
                                                        rs.c2 * gp[static_cast<std::size_t>(i)] +
                                                        rs.alpha * gf_acc[static_cast<std::size_t>(p)][static_cast<std::size_t>(i)];
                if (act) {
                    const auto& bj = gc_b[static_cast<std::size_t>(j)];
                    const auto& bmj = gc_bm[static_cast<std::size_t>(j)];
                    double bdiag = gcache_->b_diag[static_cast<std::size_t>(p)][static_cast<std::size_t>(j)];
                    for (int i = 0; i < n - 1; ++i) {
                        double k = K[static_cast<std::size_t>(i)];
                        double dB_p = -(sig[static_cast<std::size_t>(i)] * bj[static_cast<std::size_t>(i)] -
                                        0.5 * (bj[static_cast<std::size_t>(i)] * 0.5 * dsig2dm[static_cast<std::size_t>(i)] / sig[static_cast<std::size_t>(i)] +
                                               sig[static_cast<std::size_t>(i)] * bmj[static_cast<std::size_t>(i)]) * dB) * k * k;
                        double dC_p = -sig_diag * bdiag * B * B * std::max(B - k, 0.0);
                        grhs[static_cast<std::size_t>(i)] -= rs.alpha * (dB_p * d2u[static_cast<std::size_t>(i)] + dC_p * phiu_new);
                    }
                }
                grhs[static_cast<std::size_t>(n - 1)] = 0.0;
                solver.solve(grhs);
                // gradient of the integral induction
                auto& gfp = gf_acc[static_cast<std::size_t>(p)];
                double w = (j + 1 < mesh_->n_rows) ? 0.5 * (dB + dB_next) : 0.5 * dB;
                for (int i = 0; i < n - 1; ++i) {
                    double gd2 = d2_apply(grhs, i, n);
                    double term = gd2 * dsig2dm[static_cast<std::size_t>(i)];
                    if (act) {
                        double ddsig2_p = 2.0 * (gcache_->b[static_cast<std::size_t>(p)][static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] *
                                                     0.5 * dsig2dm[static_cast<std::size_t>(i)] / sig[static_cast<std::size_t>(i)] +
                                                 sig[static_cast<std::size_t>(i)] *
                                                     gcache_->bm[static_cast<std::size_t>(p)][static_cast<std::size_t>(j)][static_cast<std::size_t>(i)]);
                        term += d2u[static_cast<std::size_t>(i)] * ddsig2_p;
                    }
                    gfp[static_cast<std::size_t>(i)] += w * gbar_scale[static_cast<std::size_t>(i)] * term;
                }
                gu_prev_[static_cast<std::size_t>(p)][static_cast<std::size_t>(j)] = std::move(gu_[static_cast<std::size_t>(p)][static_cast<std::size_t>(j)]);
                gu_[static_cast<std::size_t>(p)][static_cast<std::size_t>(j)] = std::move(grhs);
            };
            parallel_for_chunks(static_cast<std::size_t>(n_params),
                                [&](std::size_t lo, std::size_t hi, int) {
                                    for (std::size_t p = lo; p < hi; ++p) grad_one(static_cast<int>(p));
                                },
                                2);
        }

        // integral induction for the next row (trapezoid; the endpoint term of
        // this row is absorbed in the diffusion correction)
        {
            double w = (j + 1 < mesh_->n_rows) ? 0.5 * (dB + dB_next) : 0.5 * dB;
            for (int i = 0; i < n - 1; ++i)
                f_acc[static_cast<std::size_t>(i)] += w * gbar_scale[static_cast<std::size_t>(i)] *
                                                      d2u[static_cast<std::size_t>(i)] * dsig2dm[static_cast<std::size_t>(i)];
        }

        u_prev_[static_cast<std::size_t>(j)] = std::move(u_[static_cast<std::size_t>(j)]);
        u_[static_cast<std::size_t>(j)] = newrow;
    }

    // vanilla layer: plain forward equation with the completed integral and
    // a zero-gamma condition at K_max
    {
        const int n = mesh_->vanilla_len;
        const double m_big = 1e6 * mesh_->s0;
        sig.resize(static_cast<std::size_t>(n));
        bcoef.resize(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            double s = surf_->eval(K[static_cast<std::size_t>(i)], m_big, t_new);
            require(s > 0.0, "ForwardPide: sigma nonpositive on the vanilla layer at K=",
                    K[static_cast<std::size_t>(i)]);
            sig[static_cast<std::size_t>(i)] = s;
            bcoef[static_cast<std::size_t>(i)] = -0.5 * s * s * K[static_cast<std::size_t>(i)] * K[static_cast<std::size_t>(i)];
        }
        BandedLU lu(n, 2, 2);
        {
            double a0 = carry * K[0];
            for (int c = 0; c < 3; ++c)
                lu.set(0, c, (c == 0 ? 1.0 : 0.0) +
                                 rs.alpha * ((c == 0 ? rf : 0.0) + a0 * geom_->first_d1[static_cast<std::size_t>(c)] +
                                             bcoef[0] * geom_->first_d2[static_cast<std::size_t>(c)]));
        }
        for (int i = 1; i < n - 1; ++i) {
            double a = carry * K[static_cast<std::size_t>(i)];
            double b = bcoef[static_cast<std::size_t>(i)];
            lu.set(i, i - 1, rs.alpha * (a * geom_->d1l[static_cast<std::size_t>(i)] + b * geom_->d2l[static_cast<std::size_t>(i)]));
            lu.set(i, i, 1.0 + rs.alpha * (rf + a * geom_->d1c[static_cast<std::size_t>(i)] + b * geom_->d2c[static_cast<std::size_t>(i)]));
            lu.set(i, i + 1, rs.alpha * (a * geom_->d1r[static_cast<std::size_t>(i)] + b * geom_->d2r[static_cast<std::size_t>(i)]));
        }
        for (int c = 0; c < 3; ++c) lu.set(n - 1, n - 3 + c, geom_->van_end_d2[static_cast<std::size_t>(c)]);

        rhs.assign(static_cast<std::size_t>(n), 0.0);
        if (rs.cn) {
            for (int i = 0; i < n - 1; ++i) {
                double a = carry * K[static_cast<std::size_t>(i)];
                double d1, d2v;
                if (i == 0) {
                    d1 = geom_->first_d1[0] * van_[0] + geom_->first_d1[1] * van_[1] + geom_->first_d1[2] * van_[2];
                    d2v = geom_->first_d2[0] * van_[0] + geom_->first_d2[1] * van_[1] + geom_->first_d2[2] * van_[2];
                } else {
                    d1 = geom_->d1l[static_cast<std::size_t>(i)] * van_[static_cast<std::size_t>(i - 1)] +
                         geom_->d1c[static_cast<std::size_t>(i)] * van_[static_cast<std::size_t>(i)] +
                         geom_->d1r[static_cast<std::size_t>(i)] * van_[static_cast<std::size_t>(i + 1)];
                    d2v = d2_apply(van_, i, n);
                }
                double lu_old = rf * van_[static_cast<std::size_t>(i)] + a * d1 + bcoef[static_cast<std::size_t>(i)] * d2v;
                rhs[static_cast<std::size_t>(i)] = van_[static_cast<std::size_t>(i)] - rs.alpha * lu_old +
                                                   dt * f_acc[static_cast<std::size_t>(i)];
            }
        } else {
            for (int i = 0; i < n - 1; ++i)
                rhs[static_cast<std::size_t>(i)] = rs.c1 * van_[static_cast<std::size_t>(i)] -
                                                   rs.c2 * van_prev_[static_cast<std::size_t>(i)] +
                                                   rs.alpha * f_acc[static_cast<std::size_t>(i)];
        }
        rhs[static_cast<std::size_t>(n - 1)] = 0.0;
        try {
            lu.factor();
        } catch (const error& e) {
            fail("ForwardPide: singular vanilla-layer system at t=", t_new, ": ", e.what());
        }
        newrow = rhs;
        lu.solve(newrow);

        if (n_params > 0) {
            d2u.resize(static_cast<std::size_t>(n));
            for (int i = 0; i < n - 1; ++i) d2u[static_cast<std::size_t>(i)] = d2_apply(newrow, i, n);
            auto grad_one = [&](int p) {
                bool act = active[static_cast<std::size_t>(p)] != 0;
                const auto& gc = gvan_[static_cast<std::size_t>(p)];
                const auto& gp = gvan_prev_[static_cast<std::size_t>(p)];
                std::vector<double> grhs(static_cast<std::size_t>(n), 0.0);
                for (int i = 0; i < n - 1; ++i)
                    grhs[static_cast<std::size_t>(i)] = rs.c1 * gc[static_cast<std::size_t>(i)] -
                                                        rs.c2 * gp[static_cast<std::size_t>(i)] +
                                                        rs.alpha * gf_acc[static_cast<std::size_t>(p)][static_cast<std::size_t>(i)];
                if (act) {
                    const auto& bv = gcache_->b_van[static_cast<std::size_t>(p)];
                    for (int i = 0; i < n - 1; ++i) {
                        double dB_p = -sig[static_cast<std::size_t>(i)] * bv[static_cast<std::size_t>(i)] *
                                      K[static_cast<std::size_t>(i)] * K[static_cast<std::size_t>(i)];
                        grhs[static_cast<std::size_t>(i)] -= rs.alpha * dB_p * d2u[static_cast<std::size_t>(i)];
                    }
                }
                grhs[static_cast<std::size_t>(n - 1)] = 0.0;
                lu.solve(grhs);
                gvan_prev_[static_cast<std::size_t>(p)] = std::move(gvan_[static_cast<std::size_t>(p)]);
                gvan_[static_cast<std::size_t>(p)] = std::move(grhs);
            };
            parallel_for_chunks(static_cast<std::size_t>(n_params),
                                [&](std::size_t lo, std::size_t hi, int) {
                                    for (std::size_t p = lo; p < hi; ++p) grad_one(static_cast<int>(p));
                                },
                                2);
        }

        van_prev_ = std::move(van_);
        van_ = newrow;
    }
}

void ForwardPide::step() {
    require(m_ + 1 < static_cast<int>(mesh_->times.size()), "ForwardPide: already at the final time");
    double t0 = mesh_->times[static_cast<std::size_t>(m_)];
    double t1 = mesh_->times[static_cast<std::size_t>(m_ + 1)];
    double dt = t1 - t0;
    if (m_ == 0) {
        auto u0 = u_;
        auto van0 = van_;
        auto gu0 = gu_;
        auto gvan0 = gvan_;
        if (cfg_.rannacher) {
            for (int k = 1; k <= 4; ++k)
                do_substep(t0 + dt * k / 4.0, dt / 4.0, 0.0, TimeScheme::Implicit, false);
        } else {
            do_substep(t1, dt, 0.0, TimeScheme::Implicit, false);
        }
        // the startup counts as one macro step for the multistep history
        u_prev_ = std::move(u0);
        van_prev_ = std::move(van0);
        gu_prev_ = std::move(gu0);
        gvan_prev_ = std::move(gvan0);
    } else {
        double dt_prev = t0 - mesh_->times[static_cast<std::size_t>(m_ - 1)];
        do_substep(t1, dt, dt_prev, cfg_.scheme == TimeScheme::Bdf2 ? TimeScheme::Bdf2 : cfg_.scheme,
                   true);
    }
    ++m_;
}

void ForwardPide::advance_to_step(int m) {
    require(m >= m_, "ForwardPide: cannot step backwards (restore a checkpoint instead)");
    while (m_ < m) step();
}

PideLayer ForwardPide::snapshot_layer() const {
    PideLayer layer;
    layer.t = mesh_->times[static_cast<std::size_t>(m_)];
    layer.step = m_;
    layer.dd = dom_.discount(layer.t);
    layer.forward = mesh_->s0 * std::exp(dom_.integral(layer.t) - for_.integral(layer.t));
    layer.rows = u_;
    layer.vanilla = van_;
    return layer;
}

PideLayer ForwardPide::snapshot_gradient_layer(std::size_t p) const {
    require(p < params_.size(), "snapshot_gradient_layer: bad param index");
    PideLayer layer;
    layer.t = mesh_->times[static_cast<std::size_t>(m_)];
    layer.step = m_;
    layer.dd = dom_.discount(layer.t);
    layer.forward = mesh_->s0 * std::exp(dom_.integral(layer.t) - for_.integral(layer.t));
    layer.rows = gu_[p];
    layer.vanilla = gvan_[p];
    return layer;
}

ForwardPide::Checkpoint ForwardPide::checkpoint() const {
    return Checkpoint{m_, u_, u_prev_, van_, van_prev_, gu_, gu_prev_, gvan_, gvan_prev_};
}

void ForwardPide::restore(const Checkpoint& c) {
    m_ = c.m;
    u_ = c.u;
    u_prev_ = c.u_prev;
    van_ = c.van;
    van_prev_ = c.van_prev;
    if (!params_.empty()) {
        require(!c.gu.empty(), "ForwardPide::restore: checkpoint lacks gradient state");
        gu_ = c.gu;
        gu_prev_ = c.gu_prev;
        gvan_ = c.gvan;
        gvan_prev_ = c.gvan_prev;
    }
}

PriceSurface solve_forward_pide(std::shared_ptr<const StrikeBarrierMesh> mesh,
                                const RateCurve& dom, const RateCurve& forr,
                                const VolSurface& surf, PideConfig cfg,
                                const std::vector<double>& extra_store_times) {
    ForwardPide engine(mesh, dom, forr, cfg);
    engine.set_surface(&surf);
    std::vector<int> store_steps{0};
    for (int s : mesh->maturity_steps) store_steps.push_back(s);
    for (double t : extra_store_times) {
        bool found = false;
        for (std::size_t m = 0; m < mesh->times.size(); ++m)
            if (std::abs(mesh->times[m] - t) < 1e-12) {
                store_steps.push_back(static_cast<int>(m));
                found = true;
                break;
            }
        require(found, "solve_forward_pide: store time ", t, " is not on the time grid");
    }
    std::sort(store_steps.begin(), store_steps.end());
    store_steps.erase(std::unique(store_steps.begin(), store_steps.end()), store_steps.end());

    PriceSurface out(mesh, engine.first_row());
    for (int target : store_steps) {
        engine.advance_to_step(target);
        out.add_layer(engine.snapshot_layer());
    }
    return out;
}

} // namespace mvol
