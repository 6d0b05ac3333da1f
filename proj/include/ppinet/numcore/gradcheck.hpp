#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "ppinet/numcore/autodiff.hpp"

namespace ppinet::nc {

inline double relative_error(double ad, double fd) {
    return std::abs(ad - fd) / std::max(1e-8, std::abs(ad) + std::abs(fd));
}

using ScalarFn = std::function<Var<double>(Graph<double>&, const std::vector<Var<double>>&)>;

/// Max relative error between reverse-mode gradients and central finite differences,
/// over every coordinate of every input.
inline double grad_check(const ScalarFn& f, const std::vector<Matrix<double>>& point,
                         double eps = 1e-4) {
    std::vector<Matrix<double>> grads;
    {
        Graph<double> g;
        std::vector<Var<double>> in;
        for (const auto& p : point) in.push_back(g.leaf(p));
        g.backward(f(g, in));
        for (const auto& v : in) grads.push_back(g.leaf_grad(v));
    }
    auto eval = [&](const std::vector<Matrix<double>>& pt) {
        Graph<double> g(false);
        std::vector<Var<double>> in;
        for (const auto& p : pt) in.push_back(g.constant(p));
        return f(g, in).scalar();
    };
    double worst = 0.0;
    std::vector<Matrix<double>> pt = point;
    for (std::size_t a = 0; a < pt.size(); ++a) {
        for (Eigen::Index i = 0; i < pt[a].size(); ++i) {
            const double x0 = pt[a].data()[i];
            pt[a].data()[i] = x0 + eps;
            const double fp = eval(pt);
            pt[a].data()[i] = x0 - eps;
            const double fm = eval(pt);
            pt[a].data()[i] = x0;
            worst = std::max(worst, relative_error(grads[a].data()[i], (fp - fm) / (2.0 * eps)));
        }
    }
    return worst;
}

struct StoreGradCheck {
    double max_rel_error = 0.0;
    std::size_t coordinates = 0;
    std::string worst;  // "name[index]" of the worst coordinate
};

/// Same check over the parameters of a store, on a deterministic subset of at most
/// `per_param` coordinates of each parameter (every coordinate when 0).
///
/// The branch decisions of the reference evaluation are recorded and replayed in every
/// perturbed one, so kinks (relu, nearest-neighbour picks, clamps) near the point do not
/// show up as gradient errors. Each coordinate is differenced at every step in `steps`
/// and scored by the best one; `floor` bounds the denominator of the relative error.
inline StoreGradCheck grad_check_store(
    ParameterStore<double>& store,
    const std::function<Var<double>(Graph<double>&, ParameterStore<double>&)>& loss,
    const std::vector<double>& steps = {1e-4}, int per_param = 0, std::uint64_t seed = 0,
    double floor = 1e-8) {
    store.zero_grad();
    {
        PieceScope record(PieceTape::Mode::Record);
        Graph<double> g;
        g.backward(loss(g, store));
    }
    std::mt19937_64 rng(seed);
    StoreGradCheck out;
    auto eval = [&] {
        PieceScope replay(PieceTape::Mode::Replay);
        Graph<double> g(false);
        return loss(g, store).scalar();
    };
    for (std::size_t pi = 0; pi < store.size(); ++pi) {
        auto& p = store[pi];
        std::vector<Eigen::Index> coords;
        if (per_param <= 0 || p.size() <= per_param) {
            for (Eigen::Index i = 0; i < p.size(); ++i) coords.push_back(i);
        } else {
            std::uniform_int_distribution<Eigen::Index> pick(0, p.size() - 1);
            for (int c = 0; c < per_param; ++c) coords.push_back(pick(rng));
        }
        for (Eigen::Index i : coords) {
            const double x0 = p.value.data()[i];
            const double ad = p.grad.data()[i];
            double best = std::numeric_limits<double>::infinity();
            for (double eps : steps) {
                p.value.data()[i] = x0 + eps;
                const double fp = eval();
                p.value.data()[i] = x0 - eps;
                const double fm = eval();
                p.value.data()[i] = x0;
                const double fd = (fp - fm) / (2.0 * eps);
                best = std::min(best, std::abs(ad - fd) / std::max(floor, std::abs(ad) + std::abs(fd)));
            }
            if (out.worst.empty() || best > out.max_rel_error) {
                out.max_rel_error = best;
                out.worst = p.name + "[" + std::to_string(i) + "]";
            }
            ++out.coordinates;
        }
    }
    return out;
}

}  // namespace ppinet::nc
