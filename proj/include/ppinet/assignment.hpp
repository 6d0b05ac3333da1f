#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include "ppinet/denoise.hpp"
#include "ppinet/errors.hpp"
#include "ppinet/geometry.hpp"
#include "ppinet/model.hpp"
#include "ppinet/numcore/autodiff.hpp"
#include "ppinet/numcore/dual.hpp"
#include "ppinet/numcore/pieces.hpp"

namespace ppinet {

struct CostWeights {
    double cls = 2.0;
    double param = 2.0;
    double cd = 5.0;
};

inline constexpr double kFocalAlpha = 0.25;
inline constexpr double kFocalGamma = 2.0;
inline constexpr double kProbClamp = 1e-8;
inline constexpr double kLossSampleMin = -1.0;
inline constexpr double kLossSampleMax = 2.0;

// ---------------------------------------------------------------------------
// matching costs

inline double classification_cost(const std::array<double, kNumKinds>& probs, PrimitiveKind gt) {
    const double p = std::clamp(probs[kind_index(gt)], kProbClamp, 1.0 - kProbClamp);
    const double pos = kFocalAlpha * std::pow(1.0 - p, kFocalGamma) * -std::log(p);
    const double neg = (1.0 - kFocalAlpha) * std::pow(p, kFocalGamma) * -std::log(1.0 - p);
    return pos - neg;
}

inline double l1_cost(const ParamVector& pred, const ParamVector& gt) {
    double s = 0.0;
    for (int i = 0; i < kNumParams; ++i) s += std::abs(pred[i] - gt[i]);
    return s;
}

/// Smallest chamfer between the GT and the prediction read as any of the four kinds.
inline double chamfer_cost(const ParamVector& pred, const Primitive& gt) {
    const auto g = sample_points(gt);
    double best = std::numeric_limits<double>::infinity();
    for (auto k : kAllKinds) best = std::min(best, chamfer(sample_points<double>(k, pred), g));
    return best;
}

/// K x N matrix; entry (j, i) is the cost of giving GT j to query i.
inline Eigen::MatrixXd cost_matrix(const DecoderOutput& preds, const std::vector<Primitive>& gts,
                                   const CostWeights& w = {}) {
    const auto n = static_cast<Eigen::Index>(preds.size());
    const auto k = static_cast<Eigen::Index>(gts.size());
    if (k > n) throw SizeError("more ground-truth primitives than queries");
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(k, n);
    if (k == 0) return c;
    std::vector<std::array<PointSet, kNumKinds>> pred_samples(n);
    if (w.cd != 0.0)
        for (Eigen::Index i = 0; i < n; ++i)
            for (auto kind : kAllKinds)
                pred_samples[i][kind_index(kind)] = sample_points<double>(kind, preds[i].params);
    for (Eigen::Index j = 0; j < k; ++j) {
        const auto g = w.cd != 0.0 ? sample_points(gts[j]) : PointSet{};
        for (Eigen::Index i = 0; i < n; ++i) {
            double v = 0.0;
            if (w.cls != 0.0) v += w.cls * classification_cost(preds[i].probs, gts[j].kind);
            if (w.param != 0.0) v += w.param * l1_cost(preds[i].params, gts[j].params);
            if (w.cd != 0.0) {
                double best = std::numeric_limits<double>::infinity();
                for (const auto& s : pred_samples[i]) best = std::min(best, chamfer(s, g));
                v += w.cd * best;
            }
            c(j, i) = v;
        }
    }
    return c;
}

// ---------------------------------------------------------------------------
// Hungarian matching

/// gt j -> query query_of[j].
struct Assignment {
    std::vector<int> query_of;
    double total = 0.0;
};

namespace detail {

struct LapSolution {
    std::vector<int> col_of_row;
    std::vector<double> u, v;  // row and column potentials, u_r + v_c <= cost
    double total = 0.0;
};

// Shortest augmenting path with potentials on a rows <= cols problem.
inline LapSolution solve_lap(const Eigen::MatrixXd& a, const std::vector<int>& rows,
                             const std::vector<int>& cols) {
    const int n = static_cast<int>(rows.size()), m = static_cast<int>(cols.size());
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0), minv(m + 1);
    std::vector<int> p(m + 1, 0), way(m + 1, 0);
    std::vector<char> used(m + 1);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::fill(minv.begin(), minv.end(), inf);
        std::fill(used.begin(), used.end(), 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            double delta = inf;
            int j1 = 0;
            for (int j = 1; j <= m; ++j) {
                if (used[j]) continue;
                const double cur = a(rows[i0 - 1], cols[j - 1]) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    LapSolution s;
    s.col_of_row.assign(n, -1);
    for (int j = 1; j <= m; ++j)
        if (p[j]) s.col_of_row[p[j] - 1] = j - 1;
    s.u.assign(u.begin() + 1, u.end());
    s.v.assign(v.begin() + 1, v.end());
    for (int r = 0; r < n; ++r) s.total += a(rows[r], cols[s.col_of_row[r]]);
    return s;
}

}  // namespace detail

/// Minimum-cost injective map rows -> columns. Among optimal maps (within a relative
/// 1e-10) the lexicographically smallest vector of column indices is returned.
inline Assignment hungarian(const Eigen::MatrixXd& costs) {
    const int k = static_cast<int>(costs.rows()), n = static_cast<int>(costs.cols());
    if (k > n) throw SizeError("hungarian: more rows than columns");
    if (!costs.allFinite()) throw NonFiniteCostError("hungarian: cost matrix has non-finite entries");
    Assignment out;
    out.query_of.assign(k, -1);
    if (k == 0) return out;

    std::vector<int> rows(k), cols(n);
    std::iota(rows.begin(), rows.end(), 0);
    std::iota(cols.begin(), cols.end(), 0);
    auto sol = detail::solve_lap(costs, rows, cols);
    const double tol = 1e-10 * std::max(1.0, std::abs(sol.total) + costs.cwiseAbs().maxCoeff());

    // Fix rows in order, each to the smallest column that still admits an optimal completion.
    std::vector<int> free_cols = cols;
    for (int j = 0; j < k; ++j) {
        const int chosen_col = free_cols[sol.col_of_row[0]];
        int pick = chosen_col;
        for (std::size_t ci = 0; ci < free_cols.size(); ++ci) {
            const int c = free_cols[ci];
            if (c >= chosen_col) break;
            // reduced cost bounds any completion containing (j, c) from below
            if (costs(j, c) - sol.u[0] - sol.v[ci] > tol) continue;
            std::vector<int> rest_cols;
            for (int fc : free_cols)
                if (fc != c) rest_cols.push_back(fc);
            const std::vector<int> rest_rows(rows.begin() + j + 1, rows.end());
            double total = costs(j, c);
            detail::LapSolution rest;
            if (!rest_rows.empty()) {
                rest = detail::solve_lap(costs, rest_rows, rest_cols);
                total += rest.total;
            }
            if (total <= sol.total + tol) {
                pick = c;
                break;
            }
        }
        out.query_of[j] = pick;
        free_cols.erase(std::find(free_cols.begin(), free_cols.end(), pick));
        if (j + 1 < k) {
            const std::vector<int> rest_rows(rows.begin() + j + 1, rows.end());
            sol = detail::solve_lap(costs, rest_rows, free_cols);
        }
    }
    for (int j = 0; j < k; ++j) out.total += costs(j, out.query_of[j]);
    return out;
}

// ---------------------------------------------------------------------------
// differentiable loss terms

namespace detail {

inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

/// Sigmoid focal loss of one logit against a binary target, and its derivative.
inline std::pair<double, double> focal_term(double x, double t) {
    const double p = nc::stable_sigmoid(x);
    const double cap = -std::log(kProbClamp);
    double value = 0.0, slope = 0.0;
    if (t > 0.0) {
        const double sp = softplus(-x);  // -log p
        const bool open = nc::PieceTape::current().decide(sp < cap);
        const double nl = open ? sp : cap;
        const double w = kFocalAlpha * std::pow(1.0 - p, kFocalGamma);
        value += t * w * nl;
        // d/dx [a (1-p)^g nl] = -a (1-p)^g [g p nl + (1-p) * 1{unclamped}]
        slope += -t * w * (kFocalGamma * p * nl + (open ? (1.0 - p) : 0.0));
    }
    if (t < 1.0) {
        const double sp = softplus(x);  // -log(1-p)
        const bool open = nc::PieceTape::current().decide(sp < cap);
        const double nl = open ? sp : cap;
        const double w = (1.0 - kFocalAlpha) * std::pow(p, kFocalGamma);
        value += (1.0 - t) * w * nl;
        slope += (1.0 - t) * w * (kFocalGamma * (1.0 - p) * nl + (open ? p : 0.0));
    }
    return {value, slope};
}

}  // namespace detail

/// Sum of per-channel focal losses of the chosen logit rows against `targets` (rows x 4).
template <class T>
nc::Var<T> focal_loss_rows(nc::Var<T> logits, const std::vector<int>& rows, const Eigen::MatrixXd& targets) {
    auto* g = logits.graph;
    nc::Matrix<T> out(1, 1);
    Eigen::MatrixXd slope(static_cast<Eigen::Index>(rows.size()), logits.cols());
    double total = 0.0;
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (Eigen::Index c = 0; c < logits.cols(); ++c) {
            const auto [v, d] = detail::focal_term(static_cast<double>(logits.value()(rows[r], c)),
                                                   targets(static_cast<Eigen::Index>(r), c));
            total += v;
            slope(static_cast<Eigen::Index>(r), c) = d;
        }
    out(0, 0) = static_cast<T>(total);
    const bool rg = logits.requires_grad();
    const int self = static_cast<int>(g->size());
    return g->node(std::move(out), rg, !rg ? std::function<void()>{} : [g, logits, rows, slope, self] {
        const T go = g->grad(self)(0, 0);
        auto& gl = g->grad(logits.id);
        for (std::size_t r = 0; r < rows.size(); ++r)
            for (Eigen::Index c = 0; c < gl.cols(); ++c)
                gl(rows[r], c) += go * static_cast<T>(slope(static_cast<Eigen::Index>(r), c));
    });
}

/// Sum over rows of |pred - gt| restricted to the GT kind's slots.
template <class T>
nc::Var<T> masked_l1_rows(nc::Var<T> params, const std::vector<int>& rows, const std::vector<Primitive>& gts) {
    auto* g = params.graph;
    Eigen::MatrixXd sign = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()), kNumParams);
    double total = 0.0;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto m = param_mask(gts[r].kind);
        for (int c = 0; c < kNumParams; ++c) {
            if (!m[c]) continue;
            const double d = static_cast<double>(params.value()(rows[r], c)) - gts[r].params[c];
            const int sg = nc::PieceTape::current().decide(d > 0.0 ? 1 : (d < 0.0 ? -1 : 0));
            total += sg * d;
            sign(static_cast<Eigen::Index>(r), c) = sg;
        }
    }
    nc::Matrix<T> out(1, 1);
    out(0, 0) = static_cast<T>(total);
    const bool rg = params.requires_grad();
    const int self = static_cast<int>(g->size());
    return g->node(std::move(out), rg, !rg ? std::function<void()>{} : [g, params, rows, sign, self] {
        const T go = g->grad(self)(0, 0);
        auto& gp = g->grad(params.id);
        for (std::size_t r = 0; r < rows.size(); ++r)
            for (int c = 0; c < kNumParams; ++c)
                gp(rows[r], c) += go * static_cast<T>(sign(static_cast<Eigen::Index>(r), c));
    });
}

namespace detail {

/// Chamfer value with the nearest-neighbour pairs taken as given.
inline double chamfer_from_pairs(const PointSet& a, const PointSet& b, const ChamferDetail& det) {
    double sa = 0.0, sb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sa += std::hypot(a[i].x - b[det.a_to_b[i]].x, a[i].y - b[det.a_to_b[i]].y);
    for (std::size_t j = 0; j < b.size(); ++j) sb += std::hypot(a[det.b_to_a[j]].x - b[j].x, a[det.b_to_a[j]].y - b[j].y);
    return 0.5 * (sa / static_cast<double>(a.size()) + sb / static_cast<double>(b.size()));
}

/// Chamfer between pred (sampled under `kind`) and the GT, with d/d(pred params).
inline double chamfer_with_grad(PrimitiveKind kind, const ParamVector& pred, const Primitive& gt,
                                std::array<double, kNumParams>& grad) {
    using D = nc::Dual<kNumParams>;
    std::array<D, kNumParams> dp;
    for (int i = 0; i < kNumParams; ++i) dp[i] = D::variable(pred[i], i);
    auto a = sample_points<D>(kind, dp);
    auto& tape = nc::PieceTape::current();
    // near-collinear arcs have enormous radii; keep their samples (and the loss) bounded
    for (auto& q : a)
        for (D* c : {&q.x, &q.y}) {
            const int side = tape.decide(c->v < kLossSampleMin ? -1 : (c->v > kLossSampleMax ? 1 : 0));
            if (side != 0) *c = D(side < 0 ? kLossSampleMin : kLossSampleMax);
        }
    PointSet av(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) av[i] = {a[i].x.v, a[i].y.v};
    const auto b = sample_points(gt);
    auto det = chamfer_detail(av, b);
    if (tape.active()) {
        for (auto& j : det.a_to_b) j = tape.decide(j);
        for (auto& i : det.b_to_a) i = tape.decide(i);
        if (tape.mode() == nc::PieceTape::Mode::Replay) det.value = chamfer_from_pairs(av, b, det);
    }
    grad.fill(0.0);
    auto accumulate = [&](std::size_t ia, std::size_t jb, double w) {
        const double dx = av[ia].x - b[jb].x, dy = av[ia].y - b[jb].y;
        const double d = std::sqrt(dx * dx + dy * dy);
        if (d <= 0.0) return;
        for (int c = 0; c < kNumParams; ++c)
            grad[c] += w * (dx * a[ia].x.d[c] + dy * a[ia].y.d[c]) / d;
    };
    const double wa = 0.5 / static_cast<double>(av.size()), wb = 0.5 / static_cast<double>(b.size());
    for (std::size_t i = 0; i < av.size(); ++i) accumulate(i, det.a_to_b[i], wa);
    for (std::size_t j = 0; j < b.size(); ++j) accumulate(det.b_to_a[j], j, wb);
    return det.value;
}

}  // namespace detail

/// Sum over rows of chamfer(prediction sampled under the GT kind, GT).
template <class T>
nc::Var<T> chamfer_rows(nc::Var<T> params, const std::vector<int>& rows, const std::vector<Primitive>& gts) {
    auto* g = params.graph;
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()), kNumParams);
    double total = 0.0;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        ParamVector pv;
        for (int c = 0; c < kNumParams; ++c) pv[c] = static_cast<double>(params.value()(rows[r], c));
        std::array<double, kNumParams> gr;
        total += detail::chamfer_with_grad(gts[r].kind, pv, gts[r], gr);
        for (int c = 0; c < kNumParams; ++c) jac(static_cast<Eigen::Index>(r), c) = gr[c];
    }
    nc::Matrix<T> out(1, 1);
    out(0, 0) = static_cast<T>(total);
    const bool rg = params.requires_grad();
    const int self = static_cast<int>(g->size());
    return g->node(std::move(out), rg, !rg ? std::function<void()>{} : [g, params, rows, jac, self] {
        const T go = g->grad(self)(0, 0);
        auto& gp = g->grad(params.id);
        for (std::size_t r = 0; r < rows.size(); ++r)
            for (int c = 0; c < kNumParams; ++c)
                gp(rows[r], c) += go * static_cast<T>(jac(static_cast<Eigen::Index>(r), c));
    });
}

// ---------------------------------------------------------------------------
// set losses

/// The three loss terms of one part (matching or denoise), already normalized.
template <class T>
struct PartLoss {
    nc::Var<T> cls, param, cd;
};

template <class T>
struct LossBreakdown {
    PartLoss<T> match;
    std::optional<PartLoss<T>> denoise;
    nc::Var<T> total;
};

/// Matching assignment of one image from the current predictions.
template <class T>
Assignment match_predictions(const ForwardOutput<T>& f, const std::vector<Primitive>& gts,
                             const CostWeights& w = {}) {
    return hungarian(cost_matrix(matching_rows(f), gts, w));
}

/// Matching part: focal over all N queries (matched -> one-hot GT kind, others all zero),
/// masked L1 and GT-kind chamfer over matched pairs; each divided by `norm`.
template <class T>
PartLoss<T> matching_loss(const ForwardOutput<T>& f, const std::vector<Primitive>& gts, const Assignment& a,
                          double norm) {
    const int n = f.n_queries, off = f.denoise_rows;
    std::vector<int> all(n);
    std::iota(all.begin(), all.end(), off);
    Eigen::MatrixXd targets = Eigen::MatrixXd::Zero(n, kNumKinds);
    std::vector<int> matched;
    for (std::size_t j = 0; j < gts.size(); ++j) {
        targets(a.query_of[j], kind_index(gts[j].kind)) = 1.0;
        matched.push_back(off + a.query_of[j]);
    }
    const T s = static_cast<T>(1.0 / norm);
    return {nc::scale(focal_loss_rows(f.logits, all, targets), s),
            nc::scale(masked_l1_rows(f.params, matched, gts), s),
            nc::scale(chamfer_rows(f.params, matched, gts), s)};
}

/// Denoise part: every non-padding slot is compared with its own GT object, no matching.
template <class T>
PartLoss<T> denoise_loss(const ForwardOutput<T>& f, const std::vector<Primitive>& gts, const DenoiseGroups& dn,
                         double norm) {
    std::vector<int> rows;
    std::vector<Primitive> targets_prim;
    for (int i = 0; i < static_cast<int>(dn.slots.size()); ++i) {
        if (dn.slots[i].padding()) continue;
        rows.push_back(i);
        targets_prim.push_back(gts.at(dn.slots[i].gt_index));
    }
    Eigen::MatrixXd targets = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()), kNumKinds);
    for (std::size_t r = 0; r < rows.size(); ++r)
        targets(static_cast<Eigen::Index>(r), kind_index(targets_prim[r].kind)) = 1.0;
    const T s = static_cast<T>(1.0 / norm);
    return {nc::scale(focal_loss_rows(f.logits, rows, targets), s),
            nc::scale(masked_l1_rows(f.params, rows, targets_prim), s),
            nc::scale(chamfer_rows(f.params, rows, targets_prim), s)};
}

/// Weighted sum of both parts. `k_norm` is the GT count used for normalization
/// (per image K, or the batch total when images share one optimizer step).
template <class T>
LossBreakdown<T> set_loss(const ForwardOutput<T>& f, const std::vector<Primitive>& gts, const Assignment& a,
                          const DenoiseGroups* dn, const CostWeights& w, double k_norm) {
    const double kn = std::max(1.0, k_norm);
    LossBreakdown<T> out;
    out.match = matching_loss(f, gts, a, kn);
    std::vector<nc::Var<T>> terms{out.match.cls, out.match.param, out.match.cd};
    std::vector<T> weights{static_cast<T>(w.cls), static_cast<T>(w.param), static_cast<T>(w.cd)};
    if (dn && dn->groups > 0 && f.denoise_rows > 0) {
        out.denoise = denoise_loss(f, gts, *dn, kn * dn->groups);
        terms.insert(terms.end(), {out.denoise->cls, out.denoise->param, out.denoise->cd});
        weights.insert(weights.end(), {static_cast<T>(w.cls), static_cast<T>(w.param), static_cast<T>(w.cd)});
    }
    out.total = nc::weighted_sum(terms, weights);
    return out;
}

}  // namespace ppinet
