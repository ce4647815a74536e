#include "mvol/kdtree.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mvol {

SpatialIndex::SpatialIndex(const std::vector<double>& xs, const std::vector<double>& ys)
    : xs_(xs), ys_(ys) {
    require(xs.size() == ys.size(), "SpatialIndex: coordinate size mismatch");
    order_.resize(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) order_[i] = static_cast<int>(i);
    if (!order_.empty()) build(0, static_cast<int>(order_.size()), 0);
}

void SpatialIndex::build(int lo, int hi, int depth) {
    if (hi - lo <= 1) return;
    int mid = (lo + hi) / 2;
    const auto& coord = (depth % 2 == 0) ? xs_ : ys_;
    std::nth_element(order_.begin() + lo, order_.begin() + mid, order_.begin() + hi,
                     [&](int a, int b) {
                         double ca = coord[static_cast<std::size_t>(a)], cb = coord[static_cast<std::size_t>(b)];
                         return ca != cb ? ca < cb : a < b;
                     });
    build(lo, mid, depth + 1);
    build(mid + 1, hi, depth + 1);
}

void SpatialIndex::query_radius(double cx, double cy, double r, std::vector<int>& out) const {
    out.clear();
    if (order_.empty() || r < 0.0) return;
    double r2 = r * r;
    // explicit stack of (lo, hi, depth)
    struct Seg {
        int lo, hi, depth;
    };
    std::vector<Seg> stack{{0, static_cast<int>(order_.size()), 0}};
    while (!stack.empty()) {
        auto [lo, hi, depth] = stack.back();
        stack.pop_back();
        if (hi <= lo) continue;
        int mid = (lo + hi) / 2;
        int idx = order_[static_cast<std::size_t>(mid)];
        double dx = xs_[static_cast<std::size_t>(idx)] - cx;
        double dy = ys_[static_cast<std::size_t>(idx)] - cy;
        if (dx * dx + dy * dy <= r2) out.push_back(idx);
        double split = (depth % 2 == 0) ? xs_[static_cast<std::size_t>(idx)] : ys_[static_cast<std::size_t>(idx)];
        double c = (depth % 2 == 0) ? cx : cy;
        if (c - r <= split) stack.push_back({lo, mid, depth + 1});
        if (c + r >= split) stack.push_back({mid + 1, hi, depth + 1});
    }
}

int SpatialIndex::nearest(double cx, double cy) const {
    require(!order_.empty(), "SpatialIndex::nearest: empty index");
    int best = -1;
    double best2 = std::numeric_limits<double>::infinity();
    struct Seg {
        int lo, hi, depth;
    };
    std::vector<Seg> stack{{0, static_cast<int>(order_.size()), 0}};
    while (!stack.empty()) {
        auto [lo, hi, depth] = stack.back();
        stack.pop_back();
        if (hi <= lo) continue;
        int mid = (lo + hi) / 2;
        int idx = order_[static_cast<std::size_t>(mid)];
        double dx = xs_[static_cast<std::size_t>(idx)] - cx;
        double dy = ys_[static_cast<std::size_t>(idx)] - cy;
        double d2 = dx * dx + dy * dy;
        if (d2 < best2 || (d2 == best2 && idx < best)) {
            best2 = d2;
            best = idx;
        }
        double split = (depth % 2 == 0) ? xs_[static_cast<std::size_t>(idx)] : ys_[static_cast<std::size_t>(idx)];
        double c = (depth % 2 == 0) ? cx : cy;
        double diff = c - split;
        // search the near side first, far side only if it can still win
        Seg near{lo, mid, depth + 1}, far{mid + 1, hi, depth + 1};
        if (diff > 0) std::swap(near, far);
        if (diff * diff <= best2) stack.push_back(far);
        stack.push_back(near);
    }
    return best;
}

} // namespace mvol
