#pragma once

#include <vector>

#include "mvol/common.hpp"

namespace mvol {

/// Balanced 2-d tree over fixed points, immutable after construction.
/// Median splits alternate between the two coordinates.
class SpatialIndex {
public:
    SpatialIndex() = default;
    SpatialIndex(const std::vector<double>& xs, const std::vector<double>& ys);

    std::size_t size() const { return xs_.size(); }

    /// All point indices within Euclidean distance r of (cx, cy).
    void query_radius(double cx, double cy, double r, std::vector<int>& out) const;
    std::vector<int> query_radius(double cx, double cy, double r) const {
        std::vector<int> out;
        query_radius(cx, cy, r, out);
        return out;
    }

    /// Index of the closest point (tree descent with pruning).
    int nearest(double cx, double cy) const;

private:
    void build(int lo, int hi, int depth);
    std::vector<double> xs_, ys_;
    std::vector<int> order_;
};

} // namespace mvol
