#pragma once

// Central finite differences against tape gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "evfi/ops.hpp"
#include "evfi/rng.hpp"

namespace evfi {

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

struct GradCheckOptions {
    double eps = 1e-6;
    double abs_floor = 1e-8;
    // 0 checks every coordinate; otherwise a seeded sample of this many per input.
    std::size_t max_coords_per_input = 0;
    std::uint64_t seed = 0;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t coords_checked = 0;
    std::size_t worst_input = 0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

inline double relative_error(double analytic, double numeric, double floor) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Checks d f / d inputs for a scalar-valued f. Inputs are perturbed in place
/// and restored.
inline GradCheckResult grad_check(const ScalarFn& f, std::vector<Tensor> inputs,
                                  const GradCheckOptions& opt = {}) {
    if (!(opt.eps >= 1e-7 && opt.eps <= 1e-3)) {
        throw std::invalid_argument("grad_check: eps must lie in [1e-7, 1e-3]");
    }
    std::vector<bool> saved(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        saved[i] = inputs[i].requires_grad();
        inputs[i].set_requires_grad(true);
    }
    Gradients grads;
    {
        Tape tape;
        TapeScope scope(tape);
        const Tensor out = f(inputs);
        if (out.numel() != 1) throw ShapeError("grad_check: function must return a scalar");
        if (!all_finite(out)) throw NumericalError("grad_check: non-finite function value");
        grads = backward(out);
    }

    auto eval = [&]() {
        NoGradScope ng;
        const double v = f(inputs).item();
        if (!std::isfinite(v)) throw NumericalError("grad_check: non-finite function value under perturbation");
        return v;
    };

    GradCheckResult res;
    Rng rng(opt.seed);
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        Tensor& x = inputs[k];
        const Tensor analytic = grads.get_or_zeros(x);
        std::vector<std::size_t> coords(x.numel());
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        if (opt.max_coords_per_input != 0 && opt.max_coords_per_input < coords.size()) {
            for (std::size_t i = 0; i < opt.max_coords_per_input; ++i) {
                std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
            }
            coords.resize(opt.max_coords_per_input);
        }
        auto data = x.mutable_data();
        for (std::size_t idx : coords) {
            const double orig = data[idx];
            data[idx] = orig + opt.eps;
            const double fp = eval();
            data[idx] = orig - opt.eps;
            const double fm = eval();
            data[idx] = orig;
            const double numeric = (fp - fm) / (2.0 * opt.eps);
            const double err = relative_error(analytic[idx], numeric, opt.abs_floor);
            ++res.coords_checked;
            if (err > res.max_rel_error || res.coords_checked == 1) {
                res.max_rel_error = std::max(res.max_rel_error, err);
                if (err >= res.max_rel_error) {
                    res.worst_input = k;
                    res.worst_index = idx;
                    res.worst_analytic = analytic[idx];
                    res.worst_numeric = numeric;
                }
            }
        }
    }
    for (std::size_t i = 0; i < inputs.size(); ++i) inputs[i].set_requires_grad(saved[i]);
    return res;
}

inline GradCheckResult grad_check(const ScalarFn& f, std::vector<Tensor> inputs, double eps) {
    GradCheckOptions opt;
    opt.eps = eps;
    return grad_check(f, std::move(inputs), opt);
}

/// Random tensor with entries uniform in [lo, hi).
inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor(std::move(shape), std::move(v));
}

}  // namespace evfi
