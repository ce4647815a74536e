#include "mvol/market_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "mvol/interp.hpp"

namespace mvol {

RateCurve::RateCurve(std::vector<double> pillar_times, std::vector<double> zero_rates)
    : times_(std::move(pillar_times)), rates_(std::move(zero_rates)) {
    require(!times_.empty(), "RateCurve: no pillars");
    require(times_.size() == rates_.size(), "RateCurve: pillar/rate size mismatch");
    require(times_.front() > 0.0, "RateCurve: pillar times must be positive");
    for (std::size_t i = 1; i < times_.size(); ++i)
        require(times_[i] > times_[i - 1], "RateCurve: pillar times not strictly increasing at ", times_[i]);
    cum_.resize(times_.size());
    // r is flat at rates_[0] on [0, t_0], linear between pillars
    cum_[0] = rates_[0] * times_[0];
    for (std::size_t i = 1; i < times_.size(); ++i)
        cum_[i] = cum_[i - 1] + 0.5 * (rates_[i] + rates_[i - 1]) * (times_[i] - times_[i - 1]);
}

double RateCurve::rate(double t) const {
    require(t >= 0.0, "RateCurve: negative time ", t);
    if (t <= times_.front()) return rates_.front();
    if (t >= times_.back()) return rates_.back();
    auto it = std::upper_bound(times_.begin(), times_.end(), t);
    std::size_t i = static_cast<std::size_t>(it - times_.begin());
    double w = (t - times_[i - 1]) / (times_[i] - times_[i - 1]);
    return rates_[i - 1] + w * (rates_[i] - rates_[i - 1]);
}

double RateCurve::integral(double t) const {
    require(t >= 0.0, "RateCurve: negative time ", t);
    if (t <= times_.front()) return rates_.front() * t;
    if (t >= times_.back()) return cum_.back() + rates_.back() * (t - times_.back());
    auto it = std::upper_bound(times_.begin(), times_.end(), t);
    std::size_t i = static_cast<std::size_t>(it - times_.begin());
    return cum_[i - 1] + 0.5 * (rate(t) + rates_[i - 1]) * (t - times_[i - 1]);
}

double RateCurve::discount(double t) const { return std::exp(-integral(t)); }

void HestonParams::validate() const {
    require(v0 >= 0.0 && theta >= 0.0 && kappa >= 0.0 && xi >= 0.0,
            "HestonParams: v0, theta, kappa, xi must be non-negative");
    require(std::abs(rho) <= 1.0, "HestonParams: |rho| must be <= 1, got ", rho);
    require(beta >= 0.0 && beta <= 1.0, "HestonParams: beta must be in [0,1], got ", beta);
}

std::vector<double> MarketSnapshot::maturities() const {
    std::vector<double> out;
    for (const auto& q : vanillas)
        if (out.empty() || q.maturity != out.back()) out.push_back(q.maturity);
    return out;
}

std::vector<const VanillaQuote*> MarketSnapshot::vanillas_at(double t) const {
    std::vector<const VanillaQuote*> out;
    for (const auto& q : vanillas)
        if (q.maturity == t) out.push_back(&q);
    return out;
}

std::vector<const NoTouchQuote*> MarketSnapshot::no_touches_at(double t) const {
    std::vector<const NoTouchQuote*> out;
    for (const auto& q : no_touches)
        if (q.maturity == t) out.push_back(&q);
    return out;
}

double MarketSnapshot::forward(double t) const {
    return spot * std::exp(dom_curve.integral(t) - for_curve.integral(t));
}

double MarketSnapshot::smile_vol(double strike, double t) const {
    require(t > 0.0, "smile_vol: need t > 0");
    auto mats = maturities();
    auto pillar_vol = [&](double tm) {
        auto qs = vanillas_at(tm);
        std::vector<double> ks, vs;
        for (const auto* q : qs) {
            ks.push_back(q->strike);
            vs.push_back(q->implied_vol);
        }
        double k = std::clamp(strike, ks.front(), ks.back());
        if (ks.size() == 1) return vs[0];
        return QuadSpline(ks, vs).eval(k);
    };
    if (t <= mats.front()) return pillar_vol(mats.front());
    if (t >= mats.back()) return pillar_vol(mats.back());
    auto it = std::upper_bound(mats.begin(), mats.end(), t);
    double tb = *it, ta = *(it - 1);
    double wa = pillar_vol(ta), wb = pillar_vol(tb);
    double w = (wa * wa * ta) + (wb * wb * tb - wa * wa * ta) * (t - ta) / (tb - ta);
    return std::sqrt(std::max(w, 1e-12) / t);
}

double MarketSnapshot::atm_vol(double t) const { return smile_vol(forward(t), t); }

void MarketSnapshot::validate() const {
    require(spot > 0.0, "snapshot: spot must be positive, got ", spot);
    require(!vanillas.empty(), "snapshot: empty vanilla quote list");
    require(!no_touches.empty(), "snapshot: empty no-touch quote list");
    heston_params.validate();

    std::vector<double> vm, nm;
    for (const auto& q : vanillas) {
        require(q.maturity > 0.0, "snapshot: vanilla maturity must be positive, got ", q.maturity);
        require(q.strike > 0.0, "snapshot: vanilla strike must be positive (T=", q.maturity, ")");
        require(q.implied_vol > 0.0, "snapshot: implied vol must be positive (T=", q.maturity,
                ", K=", q.strike, ")");
        if (vm.empty() || q.maturity != vm.back()) vm.push_back(q.maturity);
    }
    for (const auto& q : no_touches) {
        require(q.maturity > 0.0, "snapshot: no-touch maturity must be positive, got ", q.maturity);
        require(q.barrier > spot, "snapshot: no-touch barrier ", q.barrier,
                " must exceed spot ", spot, " (T=", q.maturity, ")");
        double cap = spot * dom_curve.discount(q.maturity);
        require(q.fnt_price >= 0.0 && q.fnt_price <= cap, "snapshot: FNT price ", q.fnt_price,
                " outside [0, S0*Dd] = [0, ", cap, "] (T=", q.maturity, ", B=", q.barrier, ")");
        if (nm.empty() || q.maturity != nm.back()) nm.push_back(q.maturity);
    }
    require(std::is_sorted(vm.begin(), vm.end()), "snapshot: vanilla maturities not ascending");
    require(vm == nm, "snapshot: vanilla and no-touch maturity pillars differ");
    for (double t : vm)
        require(vanillas_at(t).size() >= 3, "snapshot: need at least 3 strikes per maturity (T=", t, ")");
}

double fnt_from_fot(double fot, double s0, double dd_t) {
    require(fot >= 0.0 && fot <= dd_t, "fnt_from_fot: FOT ", fot, " outside [0, ", dd_t, "]");
    return s0 * (dd_t - fot);
}

double fot_from_fnt(double fnt, double s0, double dd_t) {
    require(s0 > 0.0, "fot_from_fnt: bad spot");
    double fot = dd_t - fnt / s0;
    require(fot >= -1e-12 && fot <= dd_t + 1e-12, "fot_from_fnt: FNT ", fnt, " outside [0, S0*Dd]");
    return std::clamp(fot, 0.0, dd_t);
}

namespace {

struct Line {
    int no;
    std::string text;
};

std::vector<double> split_fields(const Line& ln, const std::string& origin,
                                 std::size_t min_n, std::size_t max_n) {
    std::vector<double> out;
    std::stringstream ss(ln.text);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        std::size_t pos = 0;
        double v = 0.0;
        try {
            v = std::stod(tok, &pos);
        } catch (const std::exception&) {
            fail(origin, ":", ln.no, ": cannot parse number '", tok, "'");
        }
        while (pos < tok.size() && std::isspace(static_cast<unsigned char>(tok[pos]))) ++pos;
        require(pos == tok.size(), origin, ":", ln.no, ": trailing junk in field '", tok, "'");
        out.push_back(v);
    }
    require(out.size() >= min_n && out.size() <= max_n, origin, ":", ln.no, ": expected ",
            min_n == max_n ? std::to_string(min_n) : std::to_string(min_n) + "-" + std::to_string(max_n),
            " fields, got ", out.size());
    return out;
}

std::string fmt_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

MarketSnapshot parse_snapshot(const std::string& text, const std::string& origin) {
    MarketSnapshot snap;
    std::map<std::string, std::vector<Line>> sections;
    std::string current;
    std::istringstream is(text);
    std::string raw;
    int lineno = 0;
    while (std::getline(is, raw)) {
        ++lineno;
        std::string s = raw;
        auto hash = s.find('#');
        if (hash != std::string::npos) s.erase(hash);
        auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) continue;
        auto e = s.find_last_not_of(" \t\r");
        s = s.substr(b, e - b + 1);
        if (s.front() == '[') {
            require(s.back() == ']', origin, ":", lineno, ": malformed section header '", s, "'");
            current = s.substr(1, s.size() - 2);
            sections[current];
            continue;
        }
        require(!current.empty(), origin, ":", lineno, ": data before any section header");
        sections[current].push_back({lineno, s});
    }

    for (const char* required : {"spot", "curve.domestic", "curve.foreign", "vanillas", "no_touches"})
        require(sections.count(required), origin, ": missing section [", required, "]");

    {
        const auto& lines = sections["spot"];
        require(lines.size() == 1, origin, ": [spot] must hold exactly one line");
        snap.spot = split_fields(lines[0], origin, 1, 1)[0];
    }
    auto parse_curve = [&](const char* name) {
        std::vector<double> ts, rs;
        for (const auto& ln : sections[name]) {
            auto f = split_fields(ln, origin, 2, 2);
            ts.push_back(f[0]);
            rs.push_back(f[1]);
        }
        require(!ts.empty(), origin, ": empty section [", name, "]");
        try {
            return RateCurve(ts, rs);
        } catch (const error& e) {
            fail(origin, ": [", name, "]: ", e.what());
        }
    };
    snap.dom_curve = parse_curve("curve.domestic");
    snap.for_curve = parse_curve("curve.foreign");

    for (const auto& ln : sections["vanillas"]) {
        auto f = split_fields(ln, origin, 3, 4);
        VanillaQuote q;
        q.maturity = f[0];
        q.strike = f[1];
        q.implied_vol = f[2];
        if (f.size() == 4) q.bid_ask_vol = f[3];
        snap.vanillas.push_back(q);
    }
    for (const auto& ln : sections["no_touches"]) {
        auto f = split_fields(ln, origin, 3, 4);
        NoTouchQuote q;
        q.maturity = f[0];
        q.barrier = f[1];
        q.fnt_price = f[2];
        if (f.size() == 4) q.bid_ask = f[3];
        snap.no_touches.push_back(q);
    }
    if (sections.count("heston")) {
        for (const auto& ln : sections["heston"]) {
            auto comma = ln.text.find(',');
            require(comma != std::string::npos, origin, ":", ln.no, ": expected 'name, value'");
            std::string key = ln.text.substr(0, comma);
            key.erase(key.find_last_not_of(" \t") + 1);
            Line vline{ln.no, ln.text.substr(comma + 1)};
            double v = split_fields(vline, origin, 1, 1)[0];
            if (key == "v0") snap.heston_params.v0 = v;
            else if (key == "theta") snap.heston_params.theta = v;
            else if (key == "kappa") snap.heston_params.kappa = v;
            else if (key == "rho") snap.heston_params.rho = v;
            else if (key == "xi") snap.heston_params.xi = v;
            else if (key == "xi_vanilla") snap.heston_params.xi_vanilla = v;
            else if (key == "beta") snap.heston_params.beta = v;
            else fail(origin, ":", ln.no, ": unknown heston parameter '", key, "'");
        }
    }

    std::stable_sort(snap.vanillas.begin(), snap.vanillas.end(), [](const auto& a, const auto& b) {
        return a.maturity != b.maturity ? a.maturity < b.maturity : a.strike < b.strike;
    });
    std::stable_sort(snap.no_touches.begin(), snap.no_touches.end(), [](const auto& a, const auto& b) {
        return a.maturity != b.maturity ? a.maturity < b.maturity : a.barrier < b.barrier;
    });
    snap.validate();
    return snap;
}

MarketSnapshot load_snapshot(const std::string& path) {
    std::ifstream f(path);
    require(f.good(), "load_snapshot: cannot open '", path, "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_snapshot(ss.str(), path);
}

std::string serialize_snapshot(const MarketSnapshot& snap) {
    std::ostringstream os;
    os << "[spot]\n" << fmt_g17(snap.spot) << "\n";
    auto dump_curve = [&](const char* name, const RateCurve& c) {
        os << "[" << name << "]\n";
        for (std::size_t i = 0; i < c.pillar_times().size(); ++i)
            os << fmt_g17(c.pillar_times()[i]) << ", " << fmt_g17(c.zero_rates()[i]) << "\n";
    };
    dump_curve("curve.domestic", snap.dom_curve);
    dump_curve("curve.foreign", snap.for_curve);
    os << "[heston]\n";
    os << "v0, " << fmt_g17(snap.heston_params.v0) << "\n";
    os << "theta, " << fmt_g17(snap.heston_params.theta) << "\n";
    os << "kappa, " << fmt_g17(snap.heston_params.kappa) << "\n";
    os << "rho, " << fmt_g17(snap.heston_params.rho) << "\n";
    os << "xi, " << fmt_g17(snap.heston_params.xi) << "\n";
    os << "xi_vanilla, " << fmt_g17(snap.heston_params.xi_vanilla) << "\n";
    os << "beta, " << fmt_g17(snap.heston_params.beta) << "\n";
    os << "[vanillas]\n";
    for (const auto& q : snap.vanillas) {
        os << fmt_g17(q.maturity) << ", " << fmt_g17(q.strike) << ", " << fmt_g17(q.implied_vol);
        if (q.bid_ask_vol) os << ", " << fmt_g17(*q.bid_ask_vol);
        os << "\n";
    }
    os << "[no_touches]\n";
    for (const auto& q : snap.no_touches) {
        os << fmt_g17(q.maturity) << ", " << fmt_g17(q.barrier) << ", " << fmt_g17(q.fnt_price);
        if (q.bid_ask) os << ", " << fmt_g17(*q.bid_ask);
        os << "\n";
    }
    return os.str();
}

void save_snapshot(const MarketSnapshot& snap, const std::string& path) {
    std::ofstream f(path);
    require(f.good(), "save_snapshot: cannot open '", path, "' for writing");
    f << serialize_snapshot(snap);
}

} // namespace mvol
