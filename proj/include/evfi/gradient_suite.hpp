#pragma once

// Finite-difference checks of every differentiable primitive and of the two
// composite networks on small random instances.

#include <functional>
#include <string>
#include <vector>

#include "evfi/flow_ops.hpp"
#include "evfi/grad_check.hpp"
#include "evfi/synthesis_net.hpp"

namespace evfi {

struct GradSuiteEntry {
    std::string op;
    double max_rel_error = 0.0;
    double tolerance = 0.0;
    std::size_t coords = 0;

    bool pass() const { return max_rel_error < tolerance; }
};

inline constexpr double kPrimitiveTolerance = 1e-4;
inline constexpr double kCompositeTolerance = 1e-3;

namespace detail {

/// Random projection to a scalar so every output coordinate contributes.
inline Tensor project(const Tensor& x, std::uint64_t seed) {
    Rng rng(seed);
    return sum(mul(x, random_tensor(x.shape(), rng)));
}

/// Flow values whose fractional parts stay in [0.2, 0.8], away from the
/// piecewise-linear kinks of bilinear sampling.
inline Tensor fractional_flow(Rng& rng, Shape shape, double mag) {
    Tensor t = random_tensor(std::move(shape), rng, -mag, mag);
    for (double& v : t.mutable_data()) v = std::floor(v) + 0.2 + 0.6 * rng.uniform();
    return t;
}

/// Flow that keeps every sample point at least one pixel inside the image.
inline Tensor interior_flow(Rng& rng, std::size_t h, std::size_t w) {
    std::vector<double> d(2 * h * w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const double lo_x = 1.0 - static_cast<double>(x), hi_x = static_cast<double>(w) - 2.0 - static_cast<double>(x);
            const double lo_y = 1.0 - static_cast<double>(y), hi_y = static_cast<double>(h) - 2.0 - static_cast<double>(y);
            auto pick = [&](double lo, double hi) {
                double v = rng.uniform(lo, hi);
                v = std::floor(v) + 0.2 + 0.6 * rng.uniform();
                return std::clamp(v, lo + 0.2, hi - 0.2);
            };
            d[y * w + x] = pick(lo_x, hi_x);
            d[h * w + y * w + x] = pick(lo_y, hi_y);
        }
    return Tensor({1, 2, h, w}, std::move(d));
}

inline GradSuiteEntry run_entry(const std::string& op, const ScalarFn& f, std::vector<Tensor> inputs, double tol,
                                const GradCheckOptions& opt = {}) {
    const GradCheckResult r = grad_check(f, std::move(inputs), opt);
    return {op, r.max_rel_error, tol, r.coords_checked};
}

}  // namespace detail

/// Runs every check; the names are stable and used in reports.
inline std::vector<GradSuiteEntry> run_gradient_suite(std::uint64_t seed = 2024) {
    using detail::project;
    std::vector<GradSuiteEntry> out;
    Rng rng(seed);
    const double tol = kPrimitiveTolerance;

    {
        Tensor x = random_tensor({1, 4, 5, 5}, rng), w = random_tensor({6, 2, 3, 3}, rng), b = random_tensor({6}, rng);
        out.push_back(detail::run_entry("conv2d", [&](const std::vector<Tensor>& in) {
            return add(project(conv2d(in[0], in[1], in[2], 1, 1, 2), 1), project(conv2d(in[0], in[1], {}, 2, 1, 2), 2));
        }, {x, w, b}, tol));
    }
    {
        Tensor x = random_tensor({2, 5, 3, 2}, rng), g = random_tensor({5}, rng), b = random_tensor({5}, rng);
        out.push_back(detail::run_entry("layer_norm", [&](const std::vector<Tensor>& in) {
            return project(layer_norm(in[0], 1, in[1], in[2]), 3);
        }, {x, g, b}, tol));
    }
    {
        Tensor x = random_tensor({3, 4, 5}, rng, -2, 2);
        out.push_back(detail::run_entry("softmax", [&](const std::vector<Tensor>& in) {
            return add(project(softmax(in[0], 2), 4), project(softmax(in[0], 1), 5));
        }, {x}, tol));
    }
    {
        Tensor a = random_tensor({2, 3, 4}, rng), b = random_tensor({2, 4, 5}, rng);
        out.push_back(detail::run_entry("matmul", [&](const std::vector<Tensor>& in) {
            return project(matmul(in[0], in[1]), 6);
        }, {a, b}, tol));
    }
    {
        Tensor x = random_tensor({1, 2, 4, 5}, rng);
        out.push_back(detail::run_entry("bilinear_resize", [&](const std::vector<Tensor>& in) {
            return add(project(bilinear_resize(in[0], 8, 10), 7), project(bilinear_resize(in[0], 3, 7), 8));
        }, {x}, tol));
    }
    {
        Tensor src = random_tensor({1, 2, 7, 7}, rng), flow = detail::interior_flow(rng, 7, 7);
        out.push_back(detail::run_entry("backward_warp", [&](const std::vector<Tensor>& in) {
            return project(backward_warp(in[0], in[1]).warped, 9);
        }, {src, flow}, tol));
    }
    {
        Tensor r = random_tensor({1, 3, 4, 4}, rng);
        out.push_back(detail::run_entry("charbonnier", [&](const std::vector<Tensor>& in) {
            return add(charbonnier(in[0]), charbonnier(in[0], 0.1, 0.45));
        }, {r}, tol));
    }
    {
        Tensor flow = detail::fractional_flow(rng, {1, 2, 6, 6}, 2.0), img = random_tensor({1, 3, 6, 6}, rng, 0, 1);
        out.push_back(detail::run_entry("smoothness", [&](const std::vector<Tensor>& in) {
            return edge_aware_smoothness(in[0], img);
        }, {flow}, tol));
    }
    {
        Tensor a = random_tensor({1, 3, 5, 5}, rng), b = random_tensor({1, 3, 5, 5}, rng);
        out.push_back(detail::run_entry("correlation", [&](const std::vector<Tensor>& in) {
            return add(project(local_correlation(in[0], in[1], 1, true), 10),
                       project(local_correlation(in[0], in[1], 2, false), 11));
        }, {a, b}, tol));
    }
    {
        ParamStore store;
        SynthConfig cfg;
        const auto p = make_interactive_attention(store, rng, "ia", 4, cfg);
        Tensor q = random_tensor({1, 4, 3, 3}, rng), fw = random_tensor({1, 4, 3, 3}, rng),
               fs = random_tensor({1, 4, 3, 3}, rng);
        std::vector<Tensor> inputs{q, fw, fs};
        for (const Tensor& t : store.tensors()) inputs.push_back(t);
        out.push_back(detail::run_entry("interactive_attention", [&](const std::vector<Tensor>& in) {
            return project(interactive_attention(p, in[0], in[1], in[2], 2), 12);
        }, inputs, tol));
    }
    {
        ParamStore store;
        SynthConfig cfg;
        const auto p = make_self_attention(store, rng, "sa", 4, cfg);
        Tensor x = random_tensor({1, 4, 3, 3}, rng);
        std::vector<Tensor> inputs{x};
        for (const Tensor& t : store.tensors()) inputs.push_back(t);
        out.push_back(detail::run_entry("self_attention_refine", [&](const std::vector<Tensor>& in) {
            return project(self_attention_refine(p, in[0], 2), 13);
        }, inputs, tol));
    }

    // Composite passes: the loss is O(1) while individual parameter gradients
    // can be tiny, so a larger step keeps round-off below them.
    GradCheckOptions comp;
    comp.eps = 1e-5;
    comp.max_coords_per_input = 2;
    comp.seed = seed;
    {
        PyramidConfig cfg;
        cfg.base_channels = 2;
        cfg.image_channels = 1;
        cfg.event_bins = 2;
        cfg.corr_radius = 1;
        BiOFNet net(cfg, seed);
        for (auto t : net.params.tensors())
            for (double& v : t.mutable_data()) v = rng.uniform(-0.4, 0.4);
        const BiOFInputs in{random_tensor({1, 1, 8, 8}, rng, 0, 1), random_tensor({1, 1, 8, 8}, rng, 0, 1),
                            random_tensor({1, 2, 8, 8}, rng, -1, 1), random_tensor({1, 2, 8, 8}, rng, -1, 1),
                            random_tensor({1, 2, 8, 8}, rng, -1, 1)};
        const Tensor gt = random_tensor({1, 1, 8, 8}, rng, 0, 1);
        out.push_back(detail::run_entry("eif_biofnet_forward", [&](const std::vector<Tensor>&) {
            const auto [v0, v1] = full_resolution_flows(eif_biofnet_forward(net, in));
            return flow_loss(gt, in.i0, in.i1, v0, v1);
        }, net.params.tensors(), kCompositeTolerance, comp));
    }
    {
        SynthConfig cfg;
        cfg.base_channels = 4;
        cfg.image_channels = 1;
        cfg.event_bins = 2;
        cfg.heads = 1;
        SynthNet net(cfg, seed);
        for (auto t : net.params.tensors())
            for (double& v : t.mutable_data()) v += rng.uniform(-0.3, 0.3);
        const SynthInputs in{random_tensor({1, 1, 8, 8}, rng, 0.1, 0.9), random_tensor({1, 1, 8, 8}, rng, 0.1, 0.9),
                             random_tensor({1, 2, 8, 8}, rng, -1, 1), random_tensor({1, 2, 8, 8}, rng, -1, 1)};
        SynthFlows flows;
        for (std::size_t s = 0; s < kScales; ++s) {
            const std::size_t r = 8 / SynthConfig::downsample(s);
            flows.v_t0[s] = detail::fractional_flow(rng, {1, 2, r, r}, 1.5);
            flows.v_t1[s] = detail::fractional_flow(rng, {1, 2, r, r}, 1.5);
        }
        const Tensor gt = random_tensor({1, 1, 8, 8}, rng, 0, 1);
        std::vector<Tensor> inputs = net.params.tensors();
        inputs.push_back(flows.v_t0[2]);
        inputs.push_back(flows.v_t1[2]);
        out.push_back(detail::run_entry("synthesis_forward", [&](const std::vector<Tensor>&) {
            return charbonnier(sub(synthesis_forward(net, in, flows).frames[2], gt));
        }, inputs, kCompositeTolerance, comp));
    }
    return out;
}

}  // namespace evfi
