#pragma once

#include <cmath>
#include <numbers>

#include "ppinet/errors.hpp"
#include "ppinet/numcore/tensor.hpp"

namespace ppinet::nc {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
};

/// One AdamW update over every parameter of the store, using the gradients held in it.
/// Weight decay is applied directly to the weights (decoupled), before the moment step.
template <class T>
void adamw_step(ParameterStore<T>& store, double lr, const AdamWConfig& cfg = {}) {
    for (std::size_t i = 0; i < store.size(); ++i) {
        const auto& p = store[i];
        if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols())
            throw ShapeMismatchError("adamw_step: gradient shape mismatch for '" + p.name + "'");
    }
    const long t = store.step() + 1;
    store.set_step(t);
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    const T b1 = T(cfg.beta1), b2 = T(cfg.beta2);
    const T decay = T(1.0 - lr * cfg.weight_decay);
    const T step = T(lr / bc1);
    const T inv_sqrt_bc2 = T(1.0 / std::sqrt(bc2));
    const T eps = T(cfg.eps);
    for (std::size_t i = 0; i < store.size(); ++i) {
        auto& p = store[i];
        p.m = b1 * p.m + (T(1) - b1) * p.grad;
        p.v = b2 * p.v + (T(1) - b2) * p.grad.cwiseAbs2();
        p.value *= decay;
        p.value.array() -= step * p.m.array() / (p.v.array().sqrt() * inv_sqrt_bc2 + eps);
    }
}

/// Global L2 norm of all gradients.
template <class T>
double grad_norm(const ParameterStore<T>& store) {
    double s = 0.0;
    for (std::size_t i = 0; i < store.size(); ++i) s += store[i].grad.template cast<double>().squaredNorm();
    return std::sqrt(s);
}

/// Rescales gradients so their global norm is at most `max_norm`; returns the pre-clip norm.
template <class T>
double clip_grad_norm(ParameterStore<T>& store, double max_norm) {
    const double n = grad_norm(store);
    if (max_norm > 0.0 && n > max_norm) {
        const T s = T(max_norm / (n + 1e-12));
        for (std::size_t i = 0; i < store.size(); ++i) store[i].grad *= s;
    }
    return n;
}

struct OneCycleConfig {
    double peak_lr = 3e-5;
    long total_steps = 1000;
    double warmup_fraction = 0.3;
    double div_factor = 25.0;
    double final_div = 1e4;

    /// Peak rate for a batch size, scaled linearly from the reference batch of 128.
    static double scaled_peak(double reference_peak, int batch_size) {
        return reference_peak * static_cast<double>(batch_size) / 128.0;
    }
};

/// Cosine warm-up from peak/div_factor to peak, then cosine annealing to peak/final_div.
inline double onecycle_lr(long step, const OneCycleConfig& c) {
    if (c.total_steps <= 0 || !(c.warmup_fraction > 0.0 && c.warmup_fraction < 1.0) ||
        !(c.div_factor > 0.0) || !(c.final_div > 0.0))
        throw Error("onecycle_lr: invalid configuration");
    if (step < 0 || step > c.total_steps) throw StepOutOfRangeError("onecycle_lr: step out of range");
    const double start = c.peak_lr / c.div_factor;
    const double end = c.peak_lr / c.final_div;
    const double warm = c.warmup_fraction * static_cast<double>(c.total_steps);
    const double s = static_cast<double>(step);
    auto cosine = [](double from, double to, double frac) {
        return to + (from - to) * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
    };
    if (s <= warm) return cosine(start, c.peak_lr, s / warm);
    return cosine(c.peak_lr, end, (s - warm) / (static_cast<double>(c.total_steps) - warm));
}

}  // namespace ppinet::nc
