#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "ppinet/errors.hpp"
#include "ppinet/numcore/pieces.hpp"
#include "ppinet/numcore/tensor.hpp"

namespace ppinet::nc {

template <class T>
class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while its graph lives.
template <class T>
struct Var {
    Graph<T>* graph = nullptr;
    int id = -1;

    const Matrix<T>& value() const { return graph->value(id); }
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    T scalar() const { return value()(0, 0); }
    bool requires_grad() const { return graph->requires_grad(id); }
};

/// Reverse-mode tape over dense row-major matrices. Nodes are appended in evaluation
/// order, so reverse creation order is a valid topological order for backward().
/// A non-recording graph evaluates values only.
template <class T>
class Graph {
public:
    explicit Graph(bool record = true) : record_(record) { nodes_.reserve(512); }
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    bool recording() const { return record_; }

    Var<T> constant(Matrix<T> v) { return push(std::move(v), false, nullptr, nullptr); }

    /// Differentiable input that is not a stored parameter (used by grad checks).
    Var<T> leaf(Matrix<T> v) { return push(std::move(v), record_, nullptr, nullptr); }

    /// Leaf bound to a parameter; created once per graph and accumulated into
    /// `p.grad` by backward().
    Var<T> param(Parameter<T>& p) {
        for (const auto& [ptr, id] : param_leaves_)
            if (ptr == &p) return {this, id};
        Var<T> v = push(p.value, record_, nullptr, &p);
        param_leaves_.emplace_back(&p, v.id);
        return v;
    }

    Var<T> node(Matrix<T> v, bool requires_grad, std::function<void()> backward) {
#ifdef PPINET_CHECK_FINITE
        if (!v.allFinite()) throw NonFiniteError("non-finite value produced in graph");
#endif
        return push(std::move(v), requires_grad && record_, std::move(backward), nullptr);
    }

    const Matrix<T>& value(int id) const { return nodes_[id].value; }
    bool requires_grad(int id) const { return nodes_[id].requires_grad; }

    /// Gradient buffer of a node, zero-allocated on first use.
    Matrix<T>& grad(int id) {
        auto& n = nodes_[id];
        if (n.grad.size() == 0) n.grad = Matrix<T>::Zero(n.value.rows(), n.value.cols());
        return n.grad;
    }
    bool has_grad(int id) const { return nodes_[id].grad.size() != 0; }

    /// Propagates d(out)/d(node) to every reachable node and adds parameter gradients
    /// into their Parameter::grad. The tape is released afterwards.
    void backward(Var<T> out) {
        if (freed_) throw GraphFreedError("backward() called on a released graph");
        if (out.rows() != 1 || out.cols() != 1) throw NotScalarError("backward() needs a 1x1 output");
        freed_ = true;
        if (!nodes_[out.id].requires_grad) return;
        grad(out.id)(0, 0) += T(1);
        for (int i = out.id; i >= 0; --i) {
            auto& n = nodes_[i];
            if (n.backward && n.grad.size() != 0) n.backward();
            n.backward = nullptr;
        }
        for (auto& n : nodes_) n.backward = nullptr;
        for (const auto& [p, id] : param_leaves_)
            if (has_grad(id)) p->grad += nodes_[id].grad;
    }

    bool freed() const { return freed_; }

    /// Gradient of a leaf after backward(); zeros when unreachable.
    Matrix<T> leaf_grad(Var<T> v) const {
        const auto& n = nodes_[v.id];
        if (n.grad.size() == 0) return Matrix<T>::Zero(n.value.rows(), n.value.cols());
        return n.grad;
    }

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Matrix<T> value;
        Matrix<T> grad;
        bool requires_grad = false;
        std::function<void()> backward;
    };

    Var<T> push(Matrix<T> v, bool rg, std::function<void()> bw, Parameter<T>*) {
        nodes_.push_back(Node{std::move(v), {}, rg, std::move(bw)});
        return {this, static_cast<int>(nodes_.size() - 1)};
    }

    std::vector<Node> nodes_;
    std::vector<std::pair<Parameter<T>*, int>> param_leaves_;
    bool record_;
    bool freed_ = false;
};

// ---------------------------------------------------------------------------
// helpers

namespace detail {

template <class T>
bool any_rg(std::initializer_list<Var<T>> vs) {
    for (const auto& v : vs)
        if (v.requires_grad()) return true;
    return false;
}

template <class T>
void check_same_graph(const Var<T>& a, const Var<T>& b) {
    if (a.graph != b.graph) throw Error("vars belong to different graphs");
}

template <class T>
void check_shape(bool ok, const char* op) {
    if (!ok) throw ShapeMismatchError(std::string(op) + ": shape mismatch");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// linear algebra

/// a * b
template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
    detail::check_same_graph(a, b);
    detail::check_shape<T>(a.cols() == b.rows(), "matmul");
    Graph<T>* g = a.graph;
    Matrix<T> out = a.value() * b.value();
    const bool rg = detail::any_rg<T>({a, b});
    int self = static_cast<int>(g->size());
    return g->node(std::move(out), rg, !rg ? std::function<void()>{} : [g, a, b, self] {
        const auto& go = g->grad(self);
        if (a.requires_grad()) g->grad(a.id).noalias() += go * b.value().transpose();
        if (b.requires_grad()) g->grad(b.id).noalias() += a.value().transpose() * go;
    });
}

/// x * w + bias (bias is 1 x n, broadcast over rows).
template <class T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> bias) {
    detail::check_shape<T>(x.cols() == w.rows() && bias.rows() == 1 && bias.cols() == w.cols(),
                           "linear");
    Graph<T>* g = x.graph;
    Matrix<T> out = x.value() * w.value();
    out.rowwise() += bias.value().row(0);
    const bool rg = detail::any_rg<T>({x, w, bias});
    int self = static_cast<int>(g->size());
    return g->node(std::move(out), rg, !rg ? std::function<void()>{} : [g, x, w, bias, self] {
        const auto& go = g->grad(self);
        if (x.requires_grad()) g->grad(x.id).noalias() += go * w.value().transpose();
        if (w.requires_grad()) g->grad(w.id).noalias() += x.value().transpose() * go;
        if (bias.requires_grad()) g->grad(bias.id) += go.colwise().sum();
    });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
    detail::check_same_graph(a, b);
    detail::check_shape<T>(a.rows() == b.rows() && a.cols() == b.cols(), "add");
    Graph<T>* g = a.graph;
    const bool rg = detail::any_rg<T>({a, b});
    int self = static_cast<int>(g->size());
    return g->node(a.value() + b.value(), rg, !rg ? std::function<void()>{} : [g, a, b, self] {
        const auto& go = g->grad(self);
        if (a.requires_grad()) g->grad(a.id) += go;
        if (b.requires_grad()) g->grad(b.id) += go;
    });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
    detail::check_same_graph(a, b);
    detail::check_shape<T>(a.rows() == b.rows() && a.cols() == b.cols(), "sub");
    Graph<T>* g = a.graph;
    const bool rg = detail::any_rg<T>({a, b});
    int self = static_cast<int>(g->size());
    return g->node(a.value() - b.value(), rg, !rg ? std::function<void()>{} : [g, a, b, self] {
        const auto& go = g->grad(self);
        if (a.requires_grad()) g->grad(a.id) += go;
        if (b.requires_grad()) g->grad(b.id) -= go;
    });
}

/// Element-wise product.
template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
    detail::check_same_graph(a, b);
    detail::check_shape<T>(a.rows() == b.rows() && a.cols() == b.cols(), "mul");
    Graph<T>* g = a.graph;
    const bool rg = detail::any_rg<T>({a, b});
    int self = static_cast<int>(g->size());
    Matrix<T> out = a.value().cwiseProduct(b.value());
    return g->node(std::move(out), rg, !rg ? std::function<void()>{} : [g, a, b, self] {
        const auto& go = g->grad(self);
        if (a.requires_grad()) g->grad(a.id) += go.cwiseProduct(b.value());
        if (b.requires_grad()) g->grad(b.id) += go.cwiseProduct(a.value());
    });
}

template <class T>
Var<T> scale(Var<T> a, T s) {
    Graph<T>* g = a.graph;
    const bool rg = a.requires_grad();
    int self = static_cast<int>(g->size());
    return g->node(a.value() * s, rg, !rg ? std::function<void()>{} : [g, a, s, self] {
        g->grad(a.id) += g->grad(self) * s;
    });
}

/// Sum of all elements as a 1x1 node.
template <class T>
Var<T> sum(Var<T> a) {
    Graph<T>* g = a.graph;
    Matrix<T> out(1, 1);
    out(0, 0) = a.value().sum();
    const bool rg = a.requires_grad();
    int self = static_cast<int>(g->size());
    return g->node(std::move(out), rg, !rg ? std::function<void()>{} : [g, a, self] {
        g->grad(a.id).array() += g->grad(self)(0, 0);
    });
}

/// Weighted sum of 1x1 nodes.
template <class T>
Var<T> weighted_sum(const std::vector<Var<T>>& terms, const std::vector<T>& weights) {
    if (terms.empty() || terms.size() != weights.size()) throw ShapeMismatchError("weighted_sum");
    Graph<T>* g = terms.front().graph;
    Matrix<T> out = Matrix<T>::Zero(1, 1);
    bool rg = false;
    for (std::size_t i = 0; i < terms.size(); ++i) {
        detail::check_shape<T>(terms[i].rows() == 1 && terms[i].cols() == 1, "weighted_sum");
        out(0, 0) += weights[i] * terms[i].scalar();
        rg = rg || terms[i].requires_grad();
    }
    int self = static_cast<int>(g->size());
    return g->node(std::move(out), rg, !rg ? std::function<void()>{} : [g, terms, weights, self] {
        const T go = g->grad(self)(0, 0);
        for (std::size_t i = 0; i < terms.size(); ++i)
            if (terms[i].requires_grad()) g->grad(terms[i].id)(0, 0) += weights[i] * go;
    });
}

// ---------------------------------------------------------------------------
// element-wise nonlinearities

template <class T>
Var<T> relu(Var<T> a) {
    Graph<T>* g = a.graph;
    const bool rg = a.requires_grad();
    int self = static_cast<int>(g->size());
    auto& tape = PieceTape::current();
    if (tape.active()) {
        // replayable mask; under replay the op stays linear on the recorded piece
        Matrix<T> on(a.rows(), a.cols());
        for (Eigen::Index i = 0; i < on.size(); ++i) on.data()[i] = T(tape.decide(a.value().data()[i] > T(0)));
        Matrix<T> out = a.value().cwiseProduct(on);
        return g->node(std::move(out), rg, !rg ? std::function<void()>{} : [g, a, self, on] {
            g->grad(a.id).array() += g->grad(self).array() * on.array();
        });
    }
    Matrix<T> out = a.value().cwiseMax(T(0));
    return g->node(std::move(out), rg, !rg ? std::function<void()>{} : [g, a, self] {
        g->grad(a.id).array() +=
            g->grad(self).array() * (a.value().array() > T(0)).template cast<T>();
    });
}

template <class T>
T stable_sigmoid(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

template <class T>
Var<T> sigmoid(Var<T> a) {
    Graph<T>* g = a.graph;
    Matrix<T> out = a.value().unaryExpr([](T x) { return stable_sigmoid(x); });
    const bool rg = a.requires_grad();
    int self = static_cast<int>(g->size());
    return g->node(std::move(out), rg, !rg ? std::function<void()>{} : [g, a, self] {
        const auto& y = g->value(self);
        g->grad(a.id).array() += g->grad(self).array() * y.array() * (T(1) - y.array());
    });
}

// ---------------------------------------------------------------------------
// layout

template <class T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw ShapeMismatchError("concat_rows: no inputs");
    Graph<T>* g = parts.front().graph;
    Eigen::Index rows = 0;
    const Eigen::Index cols = parts.front().cols();
    bool rg = false;
    for (const auto& p : parts) {
        detail::check_shape<T>(p.cols() == cols, "concat_rows");
        rows += p.rows();
        rg = rg || p.requires_grad();
    }
    Matrix<T> out(rows, cols);
    Eigen::Index r = 0;
    for (const auto& p : parts) {
        out.middleRows(r, p.rows()) = p.value();
        r += p.rows();
    }
    int self = static_cast<int>(g->size());
    return g->node(std::move(out), rg, !rg ? std::function<void()>{} : [g, parts, self] {
        const auto& go = g->grad(self);
        Eigen::Index r0 = 0;
        for (const auto& p : parts) {
            if (p.requires_grad()) g->grad(p.id) += go.middleRows(r0, p.rows());
            r0 += p.rows();
        }
    });
}

template <class T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw ShapeMismatchError("concat_cols: no inputs");
    Graph<T>* g = parts.front().graph;
    Eigen::Index cols = 0;
    const Eigen::Index rows = parts.front().rows();
    bool rg = false;
    for (const auto& p : parts) {
        detail::check_shape<T>(p.rows() == rows, "concat_cols");
        cols += p.cols();
        rg = rg || p.requires_grad();
    }
    Matrix<T> out(rows, cols);
    Eigen::Index c = 0;
    for (const auto& p : parts) {
        out.middleCols(c, p.cols()) = p.value();
        c += p.cols();
    }
    int self = static_cast<int>(g->size());
    return g->node(std::move(out), rg, !rg ? std::function<void()>{} : [g, parts, self] {
        const auto& go = g->grad(self);
        Eigen::Index c0 = 0;
        for (const auto& p : parts) {
            if (p.requires_grad()) g->grad(p.id) += go.middleCols(c0, p.cols());
            c0 += p.cols();
        }
    });
}

template <class T>
Var<T> slice_rows(Var<T> a, Eigen::Index start, Eigen::Index count) {
    detail::check_shape<T>(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows");
    Graph<T>* g = a.graph;
    const bool rg = a.requires_grad();
    int self = static_cast<int>(g->size());
    return g->node(a.value().middleRows(start, count), rg,
                   !rg ? std::function<void()>{} : [g, a, start, count, self] {
                       g->grad(a.id).middleRows(start, count) += g->grad(self);
                   });
}

/// Rows of `a` picked by index (repeats allowed).
template <class T>
Var<T> gather_rows(Var<T> a, std::vector<int> idx) {
    Graph<T>* g = a.graph;
    Matrix<T> out(static_cast<Eigen::Index>(idx.size()), a.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        detail::check_shape<T>(idx[i] >= 0 && idx[i] < a.rows(), "gather_rows");
        out.row(static_cast<Eigen::Index>(i)) = a.value().row(idx[i]);
    }
    const bool rg = a.requires_grad();
    int self = static_cast<int>(g->size());
    return g->node(std::move(out), rg, !rg ? std::function<void()>{} : [g, a, idx, self] {
        const auto& go = g->grad(self);
        auto& ga = g->grad(a.id);
        for (std::size_t i = 0; i < idx.size(); ++i) ga.row(idx[i]) += go.row(static_cast<Eigen::Index>(i));
    });
}

// ---------------------------------------------------------------------------
// normalization and attention

/// Row-wise layer normalization with learned gain and bias (both 1 x n).
template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps = T(1e-5)) {
    detail::check_shape<T>(gain.cols() == x.cols() && bias.cols() == x.cols(), "layer_norm");
    Graph<T>* g = x.graph;
    const Eigen::Index n = x.cols();
    Matrix<T> xhat(x.rows(), n);
    Eigen::Matrix<T, Eigen::Dynamic, 1> rstd(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const auto row = x.value().row(r);
        const T mu = row.mean();
        const T var = (row.array() - mu).square().mean();
        rstd[r] = T(1) / std::sqrt(var + eps);
        xhat.row(r) = (row.array() - mu) * rstd[r];
    }
    Matrix<T> out = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
    out.rowwise() += bias.value().row(0);
    const bool rg = detail::any_rg<T>({x, gain, bias});
    int self = static_cast<int>(g->size());
    if (!rg) return g->node(std::move(out), false, {});
    return g->node(std::move(out), true, [g, x, gain, bias, self, xhat = std::move(xhat),
                                          rstd = std::move(rstd), n] {
        const auto& go = g->grad(self);
        if (gain.requires_grad()) g->grad(gain.id) += go.cwiseProduct(xhat).colwise().sum();
        if (bias.requires_grad()) g->grad(bias.id) += go.colwise().sum();
        if (x.requires_grad()) {
            auto& gx = g->grad(x.id);
            for (Eigen::Index r = 0; r < go.rows(); ++r) {
                const auto dxhat = (go.row(r).array() * gain.value().row(0).array()).eval();
                const T m1 = dxhat.sum() / T(n);
                const T m2 = (dxhat * xhat.row(r).array()).sum() / T(n);
                gx.row(r).array() += rstd[r] * (dxhat - m1 - xhat.row(r).array() * m2);
            }
        }
    });
}

/// Scaled dot-product attention over `heads` column blocks of q (M x D), k and v (L x D).
/// `blocked` (M x L, optional) removes keys; a row with every key blocked outputs zeros.
template <class T>
Var<T> multi_head_attention(Var<T> q, Var<T> k, Var<T> v, int heads, const MaskMatrix* blocked) {
    detail::check_shape<T>(q.cols() == k.cols() && k.cols() == v.cols() && k.rows() == v.rows() &&
                               q.cols() % heads == 0,
                           "attention");
    if (blocked && (blocked->rows() != q.rows() || blocked->cols() != k.rows()))
        throw MaskShapeMismatchError("attention mask shape does not match queries x keys");
    Graph<T>* g = q.graph;
    const Eigen::Index M = q.rows(), L = k.rows(), dh = q.cols() / heads;
    const T sc = T(1) / std::sqrt(T(dh));
    std::vector<Matrix<T>> probs(heads);
    Matrix<T> out(M, q.cols());
    for (int h = 0; h < heads; ++h) {
        Matrix<T> s = (q.value().middleCols(h * dh, dh) * k.value().middleCols(h * dh, dh).transpose()) * sc;
        for (Eigen::Index i = 0; i < M; ++i) {
            T mx = -std::numeric_limits<T>::infinity();
            for (Eigen::Index j = 0; j < L; ++j)
                if (!blocked || !(*blocked)(i, j)) mx = std::max(mx, s(i, j));
            if (mx == -std::numeric_limits<T>::infinity()) {
                s.row(i).setZero();
                continue;
            }
            T total = 0;
            for (Eigen::Index j = 0; j < L; ++j) {
                if (blocked && (*blocked)(i, j)) {
                    s(i, j) = T(0);
                } else {
                    s(i, j) = std::exp(s(i, j) - mx);
                    total += s(i, j);
                }
            }
            s.row(i) /= total;
        }
        out.middleCols(h * dh, dh).noalias() = s * v.value().middleCols(h * dh, dh);
        probs[h] = std::move(s);
    }
    const bool rg = detail::any_rg<T>({q, k, v});
    int self = static_cast<int>(g->size());
    if (!rg) return g->node(std::move(out), false, {});
    return g->node(std::move(out), true, [g, q, k, v, heads, dh, sc, self, probs = std::move(probs)] {
        const auto& go = g->grad(self);
        for (int h = 0; h < heads; ++h) {
            const auto& p = probs[h];
            const auto goh = go.middleCols(h * dh, dh);
            if (v.requires_grad())
                g->grad(v.id).middleCols(h * dh, dh).noalias() += p.transpose() * goh;
            if (!q.requires_grad() && !k.requires_grad()) continue;
            Matrix<T> dp = goh * v.value().middleCols(h * dh, dh).transpose();
            const Eigen::Matrix<T, Eigen::Dynamic, 1> rowdot = dp.cwiseProduct(p).rowwise().sum();
            Matrix<T> ds = (p.array() * (dp.array().colwise() - rowdot.array())).matrix() * sc;
            if (q.requires_grad())
                g->grad(q.id).middleCols(h * dh, dh).noalias() += ds * k.value().middleCols(h * dh, dh);
            if (k.requires_grad())
                g->grad(k.id).middleCols(h * dh, dh).noalias() += ds.transpose() * q.value().middleCols(h * dh, dh);
        }
    });
}

/// log-softmax over each row (used for verification of shift invariance).
template <class T>
Var<T> log_softmax_rows(Var<T> a) {
    Graph<T>* g = a.graph;
    Matrix<T> out(a.rows(), a.cols());
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
        const T mx = a.value().row(r).maxCoeff();
        const T lse = mx + std::log((a.value().row(r).array() - mx).exp().sum());
        out.row(r) = a.value().row(r).array() - lse;
    }
    const bool rg = a.requires_grad();
    int self = static_cast<int>(g->size());
    return g->node(std::move(out), rg, !rg ? std::function<void()>{} : [g, a, self] {
        const auto& go = g->grad(self);
        const auto& y = g->value(self);
        auto& ga = g->grad(a.id);
        for (Eigen::Index r = 0; r < go.rows(); ++r)
            ga.row(r).array() += go.row(r).array() - y.row(r).array().exp() * go.row(r).sum();
    });
}

}  // namespace ppinet::nc
