#include "mvol/surfaces.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace mvol {

namespace {
double w_fn(double x, double x0, double eta0, double eps, double* dw) {
    double xb = 2.0 * x0 * x0 / (2.0 * x0 + eps * std::atanh(eta0 * (1.0 - eps / 2.0)));
    double u = (2.0 * x0 / eps) * (x - xb) / xb;
    double th = std::tanh(u);
    if (dw) {
        double sech2 = 1.0 - th * th;
        *dw = 0.5 * sech2 * (2.0 * x0 / (eps * xb));
    }
    return 0.5 * (1.0 + th);
}
} // namespace

double SmoothClamp::map(double x) const {
    double wmax = w_fn(x, hi, eta0, eps, nullptr);
    double wmin = w_fn(x, lo, -eta0, eps, nullptr);
    return hi * wmax + (1.0 - wmax) * (lo * (1.0 - wmin) + x * wmin);
}

double SmoothClamp::dmap(double x) const {
    double dwmax, dwmin;
    double wmax = w_fn(x, hi, eta0, eps, &dwmax);
    double wmin = w_fn(x, lo, -eta0, eps, &dwmin);
    double inner = lo * (1.0 - wmin) + x * wmin;
    double dinner = -lo * dwmin + wmin + x * dwmin;
    return hi * dwmax - dwmax * inner + (1.0 - wmax) * dinner;
}

namespace {
// Linear extension of the spline outside its node rectangle (A.4's sigma-bar);
// the smooth clamps keep arguments inside, so the extension terms are inert
// there, but the composite is implemented as written.
double sigma_bar(const TensorQuadSpline& sp, const std::vector<double>& xs,
                 const std::vector<double>& ys, double x, double y, bool dy_wanted, double* dy_out) {
    double xq = std::clamp(x, xs.front(), xs.back());
    double yq = std::clamp(y, ys.front(), ys.back());
    double v = sp.eval(xq, yq);
    if (x > xs.back()) v += sp.dx(xs.back(), yq) * (x - xs.back());
    if (x < xs.front()) v += sp.dx(xs.front(), yq) * (x - xs.front());
    if (y > ys.back()) v += sp.dy(xq, ys.back()) * (y - ys.back());
    if (y < ys.front()) v += sp.dy(xq, ys.front()) * (y - ys.front());
    if (dy_wanted) {
        if (y > ys.back() || y < ys.front())
            *dy_out = sp.dy(xq, std::clamp(y, ys.front(), ys.back()));
        else
            *dy_out = sp.dy(xq, yq);
    }
    return v;
}
} // namespace

double VolSurface::Slice::eval_with(const TensorQuadSpline& sp, double s, double m) const {
    double x = cx.map(s);
    if (m_independent) return sigma_bar(sp, xs, ys, x, ys.front(), false, nullptr);
    double mm = std::clamp(m, flat_lo, flat_hi);
    double y = cy.map(mm);
    return sigma_bar(sp, xs, ys, x, y, false, nullptr);
}

double VolSurface::Slice::dm_with(const TensorQuadSpline& sp, double s, double m) const {
    if (m_independent) return 0.0;
    if (m <= flat_lo || m >= flat_hi) return 0.0;
    double x = cx.map(s);
    double y = cy.map(m);
    double dy;
    sigma_bar(sp, xs, ys, x, y, true, &dy);
    return dy * cy.dmap(m);
}

VolSurface::Slice VolSurface::build_slice(double s0, double eta0, const SliceSpec& spec) {
    require(spec.xs.size() >= 2, "VolSurface: need at least 2 spot nodes");
    require(!spec.ys.empty(), "VolSurface: need at least 1 maximum node");
    require(spec.xs.front() > 0.0, "VolSurface: spot nodes must be positive");
    for (const auto& row : spec.values)
        for (double v : row)
            require(v > 0.0 && v < 100.0, "VolSurface: node vols must be in (0, 100), got ", v);
    Slice sl;
    sl.t = spec.t;
    sl.xs = spec.xs;
    sl.ys = spec.ys;
    sl.values = spec.values;
    sl.flat_lo = spec.flat_lo;
    sl.flat_hi = spec.flat_hi;
    sl.m_independent = spec.ys.size() == 1;
    if (!sl.m_independent)
        require(spec.ys.front() >= s0 - 1e-12, "VolSurface: maximum nodes must sit at or above s0");
    sl.spline = TensorQuadSpline(spec.xs, spec.ys, spec.values);
    double eps = s0 / 10.0;
    sl.cx = SmoothClamp{spec.xs.front(), spec.xs.back(), eta0, eps};
    sl.cy = sl.m_independent ? SmoothClamp{0.0, 1.0, 0.0, eps}
                             : SmoothClamp{spec.ys.front(), spec.ys.back(), eta0, eps};
    return sl;
}

VolSurface::VolSurface(double s0, std::vector<SliceSpec> slices, double eta0) : s0_(s0), eta0_(eta0) {
    require(s0 > 0.0, "VolSurface: s0 must be positive");
    require(!slices.empty(), "VolSurface: no slices");
    for (std::size_t i = 1; i < slices.size(); ++i)
        require(slices[i].t > slices[i - 1].t, "VolSurface: slice times must be strictly increasing");
    slices_.reserve(slices.size());
    for (const auto& spec : slices) slices_.push_back(build_slice(s0, eta0, spec));
}

std::size_t VolSurface::slice_index(double t) const {
    // left-continuous in t: slice i covers (t_{i-1}, t_i]; constant beyond the end
    for (std::size_t i = 0; i < slices_.size(); ++i)
        if (t <= slices_[i].t + 1e-14) return i;
    return slices_.size() - 1;
}

double VolSurface::eval(double s, double m, double t) const {
    assert(m >= std::max(s, s0_) - 1e-9 * s0_ && "eval_vol: m below the (s, s0) diagonal");
    double mm = std::max(m, std::max(s, s0_));
    return slices_[slice_index(t)].eval(s, mm);
}

double VolSurface::dsig_dm(double s, double m, double t) const {
    double mm = std::max(m, std::max(s, s0_));
    return slices_[slice_index(t)].dm(s, mm);
}

double VolSurface::dsig2_dm(double s, double m, double t) const {
    const Slice& sl = slices_[slice_index(t)];
    double mm = std::max(m, std::max(s, s0_));
    double d = sl.dm(s, mm);
    if (d == 0.0) return 0.0;
    return 2.0 * sl.eval(s, mm) * d;
}

VolSurface VolSurface::with_slice_values(std::size_t i, const std::vector<std::vector<double>>& values) const {
    require(i < slices_.size(), "with_slice_values: slice index out of range");
    VolSurface out(*this);
    SliceSpec spec;
    const Slice& sl = slices_[i];
    spec.t = sl.t;
    spec.xs = sl.xs;
    spec.ys = sl.ys;
    spec.values = values;
    spec.flat_lo = sl.flat_lo;
    spec.flat_hi = sl.flat_hi;
    out.slices_[i] = build_slice(s0_, eta0_, spec);
    return out;
}

VolSurface VolSurface::with_appended_slice(const SliceSpec& spec) const {
    require(spec.t > slices_.back().t, "with_appended_slice: time must extend the surface");
    VolSurface out(*this);
    out.slices_.push_back(build_slice(s0_, eta0_, spec));
    return out;
}

TensorQuadSpline VolSurface::basis_spline(const Slice& s, std::size_t node_x, std::size_t node_y) {
    std::vector<std::vector<double>> unit(s.xs.size(), std::vector<double>(s.ys.size(), 0.0));
    unit[node_x][node_y] = 1.0;
    return TensorQuadSpline(s.xs, s.ys, unit);
}

namespace {
std::string g17(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}
double parse_g17(const std::string& s) {
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    return std::stod(s);
}
} // namespace

std::string VolSurface::serialize() const {
    std::ostringstream os;
    os << "mvol_surface v1\n";
    os << "s0 " << g17(s0_) << "\n";
    os << "eta0 " << g17(eta0_) << "\n";
    os << "slices " << slices_.size() << "\n";
    for (const auto& sl : slices_) {
        os << "slice " << g17(sl.t) << "\n";
        os << "flat " << g17(sl.flat_lo) << " " << g17(sl.flat_hi) << "\n";
        os << "xs";
        for (double x : sl.xs) os << " " << g17(x);
        os << "\nys";
        for (double y : sl.ys) os << " " << g17(y);
        os << "\n";
        for (const auto& row : sl.values) {
            os << "v";
            for (double v : row) os << " " << g17(v);
            os << "\n";
        }
    }
    return os.str();
}

VolSurface VolSurface::parse(const std::string& text) {
    std::istringstream is(text);
    std::string tok;
    auto next = [&]() {
        require(static_cast<bool>(is >> tok), "VolSurface::parse: unexpected end of input");
        return tok;
    };
    require(next() == "mvol_surface" && next() == "v1", "VolSurface::parse: bad header");
    require(next() == "s0", "VolSurface::parse: expected s0");
    double s0 = parse_g17(next());
    require(next() == "eta0", "VolSurface::parse: expected eta0");
    double eta0 = parse_g17(next());
    require(next() == "slices", "VolSurface::parse: expected slices");
    std::size_t n = std::stoul(next());
    std::vector<SliceSpec> specs;
    for (std::size_t i = 0; i < n; ++i) {
        SliceSpec sp;
        require(next() == "slice", "VolSurface::parse: expected slice");
        sp.t = parse_g17(next());
        require(next() == "flat", "VolSurface::parse: expected flat");
        sp.flat_lo = parse_g17(next());
        sp.flat_hi = parse_g17(next());
        require(next() == "xs", "VolSurface::parse: expected xs");
        std::string line;
        std::getline(is, line);
        {
            std::istringstream ls(line);
            double v;
            while (ls >> v) sp.xs.push_back(v);
        }
        require(next() == "ys", "VolSurface::parse: expected ys");
        std::getline(is, line);
        {
            std::istringstream ls(line);
            double v;
            while (ls >> v) sp.ys.push_back(v);
        }
        sp.values.resize(sp.xs.size());
        for (std::size_t j = 0; j < sp.xs.size(); ++j) {
            require(next() == "v", "VolSurface::parse: expected value row");
            std::getline(is, line);
            std::istringstream ls(line);
            std::string f;
            while (ls >> f) sp.values[j].push_back(parse_g17(f));
            require(sp.values[j].size() == sp.ys.size(), "VolSurface::parse: row length mismatch");
        }
        specs.push_back(std::move(sp));
    }
    return VolSurface(s0, std::move(specs), eta0);
}

VolSurface VolSurface::load(const std::string& path) {
    std::ifstream f(path);
    require(f.good(), "VolSurface::load: cannot open '", path, "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse(ss.str());
}

void VolSurface::save(const std::string& path) const {
    std::ofstream f(path);
    require(f.good(), "VolSurface::save: cannot open '", path, "'");
    f << serialize();
}

VolSurface geometric_mean_surface(const VolSurface& lv, double s0,
                                  const std::vector<double>& xs, const std::vector<double>& ys,
                                  const std::vector<double>& slice_times,
                                  double flat_lo, double flat_hi) {
    std::vector<VolSurface::SliceSpec> specs;
    for (double t : slice_times) {
        VolSurface::SliceSpec sp;
        sp.t = t;
        sp.xs = xs;
        sp.ys = ys;
        sp.flat_lo = flat_lo;
        sp.flat_hi = flat_hi;
        sp.values.assign(xs.size(), std::vector<double>(ys.size(), 0.0));
        for (std::size_t j = 0; j < xs.size(); ++j)
            for (std::size_t k = 0; k < ys.size(); ++k)
                sp.values[j][k] = std::sqrt(lv.eval(xs[j], std::max({ys[k], xs[j], s0}), t) *
                                            lv.eval(ys[k], std::max(ys[k], s0), t));
        specs.push_back(std::move(sp));
    }
    return VolSurface(s0, std::move(specs));
}

VolSurface constant_surface(double s0, double vol, double domain_hi) {
    VolSurface::SliceSpec sp;
    sp.t = 1.0;
    sp.xs = {0.25 * s0, s0, domain_hi};
    sp.ys = {s0};
    sp.values.assign(3, std::vector<double>(1, vol));
    return VolSurface(s0, {sp});
}

VolSurface dupire_local_vol(const MarketSnapshot& snap, const DupireGridSpec& grid, DupireReport* report) {
    DupireReport local;
    DupireReport& rep = report ? *report : local;
    const auto mats = snap.maturities();
    const double s0 = snap.spot;

    // total variance per pillar as a function of log-moneyness y = ln(K/F)
    struct PillarSmile {
        double t;
        QuadSpline vol_of_y;
        double y_lo, y_hi;
        double w(double y) const {
            double v = vol_of_y.eval(std::clamp(y, y_lo, y_hi));
            return v * v * t;
        }
        double dw(double y) const {
            if (y < y_lo || y > y_hi) return 0.0;
            double v = vol_of_y.eval(y);
            return 2.0 * v * vol_of_y.deriv(y) * t;
        }
        double d2w(double y) const {
            if (y < y_lo || y > y_hi) return 0.0;
            double v = vol_of_y.eval(y);
            double dv = vol_of_y.deriv(y);
            return 2.0 * (dv * dv + v * vol_of_y.deriv2(y)) * t;
        }
    };
    std::vector<PillarSmile> pillars;
    for (double t : mats) {
        auto qs = snap.vanillas_at(t);
        double f = snap.forward(t);
        std::vector<double> ys, vols;
        for (const auto* q : qs) {
            ys.push_back(std::log(q->strike / f));
            vols.push_back(q->implied_vol);
        }
        // quotes are sorted by strike, so ys ascending
        pillars.push_back({t, QuadSpline(ys, vols), ys.front(), ys.back()});
    }

    auto w_at = [&](double y, double t) -> double {
        if (t <= pillars.front().t) return pillars.front().w(y) * (t / pillars.front().t);
        if (t >= pillars.back().t) return pillars.back().w(y) * (t / pillars.back().t);
        std::size_t i = 1;
        while (pillars[i].t < t) ++i;
        double ta = pillars[i - 1].t, tb = pillars[i].t;
        double lam = (t - ta) / (tb - ta);
        return (1.0 - lam) * pillars[i - 1].w(y) + lam * pillars[i].w(y);
    };
    auto dy_at = [&](double y, double t, bool second) -> double {
        auto pick = [&](const PillarSmile& p) { return second ? p.d2w(y) : p.dw(y); };
        if (t <= pillars.front().t) return pick(pillars.front()) * (t / pillars.front().t);
        if (t >= pillars.back().t) return pick(pillars.back()) * (t / pillars.back().t);
        std::size_t i = 1;
        while (pillars[i].t < t) ++i;
        double ta = pillars[i - 1].t, tb = pillars[i].t;
        double lam = (t - ta) / (tb - ta);
        return (1.0 - lam) * pick(pillars[i - 1]) + lam * pick(pillars[i]);
    };

    std::vector<VolSurface::SliceSpec> specs;
    for (std::size_t i = 0; i < mats.size(); ++i) {
        double t_hi = mats[i];
        double t_lo = i == 0 ? 0.0 : mats[i - 1];
        double tbar = 0.5 * (t_lo + t_hi);
        double f = snap.forward(tbar);
        double sd = snap.atm_vol(t_hi) * std::sqrt(t_hi);
        VolSurface::SliceSpec sp;
        sp.t = t_hi;
        sp.ys = {s0};
        int n = std::max(5, grid.n_strikes);
        for (int j = 0; j < n; ++j) {
            double y = -grid.width_sds * sd + 2.0 * grid.width_sds * sd * j / (n - 1);
            sp.xs.push_back(f * std::exp(y));
        }
        sp.values.assign(sp.xs.size(), std::vector<double>(1, 0.0));
        for (std::size_t j = 0; j < sp.xs.size(); ++j) {
            double y = std::log(sp.xs[j] / f);
            double w = std::max(w_at(y, tbar), 1e-12);
            double dwdt = (w_at(y, t_hi) - w_at(y, t_lo)) / (t_hi - t_lo);
            double dw = dy_at(y, tbar, false);
            double d2w = dy_at(y, tbar, true);
            double denom = 1.0 - y / w * dw +
                           0.25 * (-0.25 - 1.0 / w + y * y / (w * w)) * dw * dw + 0.5 * d2w;
            double var = (denom > 1e-10) ? dwdt / denom : -1.0;
            double vol = var > 0.0 ? std::sqrt(var) : -1.0;
            if (vol < 1e-4 || vol > 5.0 || !std::isfinite(vol)) {
                ++rep.floored_nodes;
                if (rep.warnings.size() < 20) {
                    std::ostringstream os;
                    os << "dupire: floor/cap at K=" << sp.xs[j] << " T=" << t_hi
                       << " (denom=" << denom << ", dw/dt=" << dwdt << ")";
                    rep.warnings.push_back(os.str());
                }
                vol = std::clamp(vol > 0.0 ? vol : 1e-4, 1e-4, 5.0);
            }
            sp.values[j][0] = vol;
        }
        specs.push_back(std::move(sp));
    }
    return VolSurface(s0, std::move(specs));
}

} // namespace mvol
