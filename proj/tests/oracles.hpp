#pragma once
// Independent reference computations used by the tests. Nothing here calls the
// library routine it is meant to check.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "ppinet/geometry.hpp"

namespace oracle {

// O(n*m) chamfer with hypot, no shared code with the library loop.
inline double chamfer(const ppinet::PointSet& a, const ppinet::PointSet& b) {
    auto one_way = [](const ppinet::PointSet& from, const ppinet::PointSet& to) {
        double s = 0.0;
        for (const auto& p : from) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& q : to) best = std::min(best, std::hypot(p.x - q.x, p.y - q.y));
            s += best;
        }
        return s / static_cast<double>(from.size());
    };
    return 0.5 * (one_way(a, b) + one_way(b, a));
}

struct BruteAssignment {
    double total = std::numeric_limits<double>::infinity();
    std::vector<int> cols;  // lexicographically smallest optimal column vector
};

// Enumerates every injective row -> column map in lexicographic order, summing in row
// order. Ties keep the first map found, which is the lexicographically smallest.
inline BruteAssignment exhaustive_assignment(const Eigen::MatrixXd& c) {
    const int k = static_cast<int>(c.rows()), n = static_cast<int>(c.cols());
    BruteAssignment best;
    std::vector<int> cur(k);
    std::vector<bool> used(n, false);
    auto rec = [&](auto&& self, int row) -> void {
        if (row == k) {
            double t = 0.0;
            for (int j = 0; j < k; ++j) t += c(j, cur[j]);
            if (t < best.total) {
                best.total = t;
                best.cols = cur;
            }
            return;
        }
        for (int col = 0; col < n; ++col) {
            if (used[col]) continue;
            used[col] = true;
            cur[row] = col;
            self(self, row + 1);
            used[col] = false;
        }
    };
    if (k == 0) {
        best.total = 0.0;
        return best;
    }
    rec(rec, 0);
    return best;
}

// Sigmoid focal matching cost written from its closed form.
inline double focal_cost(double p) {
    const double a = 0.25;
    return a * (1 - p) * (1 - p) * -std::log(p) - (1 - a) * p * p * -std::log(1 - p);
}

// Binary focal loss of one probability against a 0/1 target.
inline double focal_loss(double p, double t) {
    const double a = 0.25;
    if (t > 0.5) return a * (1 - p) * (1 - p) * -std::log(p);
    return (1 - a) * p * p * -std::log(1 - p);
}

inline double matern32(double r, double l, double var) {
    const double s = std::sqrt(3.0) * r / l;
    return var * (1.0 + s) * std::exp(-s);
}

inline ppinet::PointSet random_points(std::mt19937_64& rng, int n) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ppinet::PointSet s(n);
    for (auto& p : s) p = {u(rng), u(rng)};
    return s;
}

// A valid random primitive of the given kind inside the unit square.
inline ppinet::Primitive random_primitive(std::mt19937_64& rng, ppinet::PrimitiveKind kind) {
    using ppinet::PrimitiveKind;
    std::uniform_real_distribution<double> u(0.1, 0.9);
    switch (kind) {
        case PrimitiveKind::Line: return {kind, {u(rng), u(rng), u(rng), u(rng), 0, 0}};
        case PrimitiveKind::Circle: {
            const double x = u(rng), y = u(rng);
            const double r = std::uniform_real_distribution<double>(0.02, std::min({x, y, 1 - x, 1 - y}))(rng);
            return {kind, {x, y, r, 0, 0, 0}};
        }
        case PrimitiveKind::Arc: {
            // three points on a circle at increasing angles, well away from collinear
            const double cx = 0.5, cy = 0.5, r = std::uniform_real_distribution<double>(0.1, 0.4)(rng);
            const double a0 = std::uniform_real_distribution<double>(0.0, 6.28)(rng);
            const double sweep = std::uniform_real_distribution<double>(1.0, 5.0)(rng);
            auto at = [&](double t) { return std::pair{cx + r * std::cos(t), cy + r * std::sin(t)}; };
            const auto [sx, sy] = at(a0);
            const auto [mx, my] = at(a0 + 0.5 * sweep);
            const auto [ex, ey] = at(a0 + sweep);
            return {kind, {sx, sy, mx, my, ex, ey}};
        }
        case PrimitiveKind::Point: return {kind, {u(rng), u(rng), 0, 0, 0, 0}};
    }
    return {};
}

inline ppinet::Primitive random_primitive(std::mt19937_64& rng) {
    return random_primitive(rng, ppinet::kind_from_index(std::uniform_int_distribution<int>(0, 3)(rng)));
}

}  // namespace oracle
