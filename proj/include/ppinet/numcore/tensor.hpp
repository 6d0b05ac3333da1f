#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ppinet/errors.hpp"

namespace ppinet::nc {

template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Boolean attention mask; a nonzero entry (i, j) means query i cannot see key j.
using MaskMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// A named trainable array plus its optimizer state. Rank-1 arrays are stored as 1 x n.
template <class T>
struct Parameter {
    std::string name;
    std::vector<int> extents;
    Matrix<T> value;
    Matrix<T> grad;
    Matrix<T> m;  // first moment
    Matrix<T> v;  // second moment

    Eigen::Index size() const { return value.size(); }
};

inline std::pair<Eigen::Index, Eigen::Index> matrix_shape(const std::vector<int>& extents) {
    if (extents.empty() || extents.size() > 2) throw ShapeMismatchError("parameters must be rank 1 or 2");
    if (extents.size() == 1) return {1, extents[0]};
    return {extents[0], extents[1]};
}

/// Ordered collection of parameters with unique names; insertion order is the
/// serialization order.
template <class T>
class ParameterStore {
public:
    ParameterStore() = default;
    ParameterStore(const ParameterStore&) = delete;
    ParameterStore& operator=(const ParameterStore&) = delete;
    ParameterStore(ParameterStore&&) noexcept = default;
    ParameterStore& operator=(ParameterStore&&) noexcept = default;

    Parameter<T>& add(const std::string& name, std::vector<int> extents, Matrix<T> init) {
        if (index_.count(name)) throw Error("duplicate parameter name '" + name + "'");
        const auto [r, c] = matrix_shape(extents);
        if (init.rows() != r || init.cols() != c)
            throw ShapeMismatchError("initial value shape mismatch for '" + name + "'");
        auto p = std::make_unique<Parameter<T>>();
        p->name = name;
        p->extents = std::move(extents);
        p->value = std::move(init);
        p->grad = Matrix<T>::Zero(r, c);
        p->m = Matrix<T>::Zero(r, c);
        p->v = Matrix<T>::Zero(r, c);
        index_[name] = params_.size();
        params_.push_back(std::move(p));
        return *params_.back();
    }

    Parameter<T>& get(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw Error("unknown parameter '" + name + "'");
        return *params_[it->second];
    }
    const Parameter<T>& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw Error("unknown parameter '" + name + "'");
        return *params_[it->second];
    }
    bool contains(const std::string& name) const { return index_.count(name) > 0; }

    std::size_t size() const { return params_.size(); }
    Parameter<T>& operator[](std::size_t i) { return *params_[i]; }
    const Parameter<T>& operator[](std::size_t i) const { return *params_[i]; }

    std::size_t num_scalars() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += static_cast<std::size_t>(p->size());
        return n;
    }

    void zero_grad() {
        for (auto& p : params_) p->grad.setZero();
    }

    long step() const { return step_; }
    void set_step(long s) { step_ = s; }

    /// Copy of values (and optimizer state) at another precision.
    template <class U>
    ParameterStore<U> cast() const {
        ParameterStore<U> out;
        for (const auto& p : params_) {
            auto& q = out.add(p->name, p->extents, p->value.template cast<U>());
            q.m = p->m.template cast<U>();
            q.v = p->v.template cast<U>();
        }
        out.set_step(step_);
        return out;
    }

private:
    std::vector<std::unique_ptr<Parameter<T>>> params_;
    std::map<std::string, std::size_t> index_;
    long step_ = 0;
};

}  // namespace ppinet::nc
