#pragma once

// AdamW with decoupled weight decay.

#include <cmath>
#include <vector>

#include "evfi/checkpoint.hpp"

namespace evfi {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
};

struct AdamWState {
    std::vector<std::vector<double>> m, v;
    std::uint64_t step = 0;
};

/// One update of every tensor in `params` from the matching entry of `grads`.
/// p <- p - lr * wd * p - lr * m_hat / (sqrt(v_hat) + eps).
inline void adamw_step(const std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamWState& state,
                       double lr, const AdamWConfig& cfg = {}) {
    if (params.size() != grads.size()) throw ShapeError("adamw_step: parameter and gradient counts differ");
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].numel(), 0.0);
            state.v[i].assign(params[i].numel(), 0.0);
        }
    }
    if (state.m.size() != params.size()) throw ShapeError("adamw_step: optimizer state does not match parameters");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads[i].shape() != params[i].shape() || state.m[i].size() != params[i].numel()) {
            throw ShapeError("adamw_step: shape mismatch for parameter " + std::to_string(i) + ": " +
                             shape_str(params[i].shape()) + " vs gradient " + shape_str(grads[i].shape()));
        }
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor p = params[i];
        auto pd = p.mutable_data();
        const auto g = grads[i].data();
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t k = 0; k < pd.size(); ++k) {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
            const double mhat = m[k] / bc1, vhat = v[k] / bc2;
            pd[k] -= lr * cfg.weight_decay * pd[k];
            pd[k] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

/// Gradients for every parameter of `store`, zeros where none reached it.
inline std::vector<Tensor> collect_gradients(const ParamStore& store, const Gradients& grads) {
    std::vector<Tensor> out;
    out.reserve(store.size());
    for (const Tensor& p : store.tensors()) out.push_back(grads.get_or_zeros(p));
    return out;
}

}  // namespace evfi
