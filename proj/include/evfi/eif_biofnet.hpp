#pragma once

// Cascaded bidirectional flow estimator over a three-level pyramid.
//
// Scale s = 0 is the coarsest. Image-level features and flows at scale s live
// at 1/8, 1/4, 1/2 of the input resolution; event-flow features live at twice
// that resolution. Every flow is expressed in pixels of the grid it lives on.
//
// The two flow directions (t->0 and t->1) share weights everywhere. The
// forward pass stacks them along the batch axis: rows [0, N) are t->0 and rows
// [N, 2N) are t->1.

#include <array>
#include <optional>

#include "evfi/flow_ops.hpp"
#include "evfi/layers.hpp"

namespace evfi {

inline constexpr std::size_t kScales = 3;

struct PyramidConfig {
    std::size_t base_channels = 16;
    std::size_t image_channels = 3;
    std::size_t event_bins = 16;
    std::size_t corr_radius = 3;
    std::size_t block_depth = 3;
    // Module toggles; turning both off leaves the event-only cascade.
    bool use_fbiof = true;
    bool use_ibiof = true;

    static constexpr std::size_t downsample(std::size_t s) { return std::size_t{8} >> s; }
    static constexpr std::size_t event_flow_scale_multiplier = 2;
    std::size_t channels(std::size_t s) const { return base_channels << (kScales - 1 - s); }
    std::array<std::size_t, kScales> channel_list() const { return {channels(0), channels(1), channels(2)}; }
};

/// Strided-conv feature pyramid. Level outputs are ordered coarse to fine
/// (index = scale); each level is a downsampling conv followed by a conv.
struct PyramidEncoder {
    std::array<Conv2d, kScales> down, conv;

    std::array<Tensor, kScales> operator()(const Tensor& x) const {
        std::array<Tensor, kScales> out;
        Tensor h = x;
        for (std::size_t i = 0; i < kScales; ++i) {
            const std::size_t s = kScales - 1 - i;
            h = leaky_relu(down[s](h));
            h = leaky_relu(conv[s](h));
            out[s] = h;
        }
        return out;
    }
};

inline PyramidEncoder make_pyramid_encoder(ParamStore& store, Rng& rng, const std::string& name, std::size_t in,
                                           const std::array<std::size_t, kScales>& channels, std::size_t first_stride) {
    PyramidEncoder e;
    std::size_t prev = in;
    for (std::size_t i = 0; i < kScales; ++i) {
        const std::size_t s = kScales - 1 - i;
        const std::size_t ch = channels[s];
        const std::string lvl = name + ".s" + std::to_string(s);
        e.down[s] = make_conv(store, rng, lvl + ".down", prev, ch, 3, i == 0 ? first_stride : 2);
        e.conv[s] = make_conv(store, rng, lvl + ".conv", ch, ch, 3);
        prev = ch;
    }
    return e;
}

struct FBiOFParams {
    ConvBlock refine_k, refine_t, mask_head;
};

struct BiOFNet {
    PyramidConfig cfg;
    ParamStore params;
    PyramidEncoder frame_enc, event_flow_enc, event_syn_enc;
    std::array<ConvBlock, kScales> anchor, ebiof, ibiof;
    std::array<FBiOFParams, kScales> fbiof;  // index 0 unused: the coarsest scale bypasses fusion

    BiOFNet(const PyramidConfig& config, std::uint64_t seed) : cfg(config) {
        Rng rng(seed);
        const std::size_t d = cfg.block_depth;
        frame_enc = make_pyramid_encoder(params, rng, "biof.frame_enc", cfg.image_channels, cfg.channel_list(), 2);
        event_flow_enc = make_pyramid_encoder(params, rng, "biof.event_flow_enc", cfg.event_bins, cfg.channel_list(), 1);
        event_syn_enc = make_pyramid_encoder(params, rng, "biof.event_syn_enc", cfg.event_bins, cfg.channel_list(), 2);
        const std::size_t corr_ch = (2 * cfg.corr_radius + 1) * (2 * cfg.corr_radius + 1);
        for (std::size_t s = 0; s < kScales; ++s) {
            const std::size_t ch = cfg.channels(s);
            const std::string p = "biof.s" + std::to_string(s);
            anchor[s] = make_block(params, rng, p + ".anchor", 6 * ch, ch, ch, d);
            ebiof[s] = make_block(params, rng, p + ".ebiof", 2 * ch + 2, ch, 2, d, Init::zero);
            if (s > 0) {
                fbiof[s].refine_k = make_block(params, rng, p + ".fbiof.refine_k", ch, ch, ch, d);
                fbiof[s].refine_t = make_block(params, rng, p + ".fbiof.refine_t", ch, ch, ch, d);
                fbiof[s].mask_head = make_block(params, rng, p + ".fbiof.mask", 3 * ch + 4, ch, 1, d);
            }
            ibiof[s] = make_block(params, rng, p + ".ibiof", corr_ch + ch + 2, ch, 2, d, Init::zero);
        }
    }
};

/// Batched (N x C x H x W) network inputs at full resolution.
struct BiOFInputs {
    Tensor i0, i1;         // N x image_channels x H x W
    Tensor g_0t, g_t0, g_t1;  // N x bins x H x W
};

struct PyramidFeatures {
    std::array<Tensor, kScales> c0, c1;        // frame features at image-flow resolution
    std::array<Tensor, kScales> ef_t0, ef_t1;  // event-flow features at 2x resolution
    std::array<Tensor, kScales> es_0t, es_t1;  // event-synthesis features at image-flow resolution
};

namespace detail {

inline Tensor upsample2(const Tensor& x) { return bilinear_resize(x, 2 * x.size(2), 2 * x.size(3)); }

inline std::pair<Tensor, Tensor> split_batch(const Tensor& x) {
    const std::size_t n = x.size(0) / 2;
    return {slice(x, 0, 0, n), slice(x, 0, n, 2 * n)};
}

inline Tensor stack_batch(const Tensor& a, const Tensor& b) { return concat({a, b}, 0); }

inline void require_4d(const Tensor& x, const char* what) {
    if (x.dim() != 4) throw ShapeError(std::string(what) + " must be N x C x H x W, got " + shape_str(x.shape()));
}

}  // namespace detail

inline PyramidFeatures extract_pyramids(const BiOFNet& net, const BiOFInputs& in) {
    for (const Tensor* t : {&in.i0, &in.i1, &in.g_0t, &in.g_t0, &in.g_t1}) detail::require_4d(*t, "pyramid input");
    const std::size_t n = in.i0.size(0), h = in.i0.size(2), w = in.i0.size(3);
    const std::size_t f = PyramidConfig::downsample(0);
    if (h % f != 0 || w % f != 0 || h == 0 || w == 0) {
        throw ShapeError("input resolution " + std::to_string(h) + "x" + std::to_string(w) + " is not divisible by " +
                         std::to_string(f));
    }
    for (const Tensor* t : {&in.i1, &in.g_0t, &in.g_t0, &in.g_t1}) {
        if (t->size(0) != n || t->size(2) != h || t->size(3) != w) {
            throw ShapeError("pyramid input geometry mismatch: " + shape_str(t->shape()) + " vs " +
                             shape_str(in.i0.shape()));
        }
    }
    if (in.i0.size(1) != net.cfg.image_channels || in.i1.size(1) != net.cfg.image_channels) {
        throw ShapeError("frames must have " + std::to_string(net.cfg.image_channels) + " channels");
    }
    for (const Tensor* g : {&in.g_0t, &in.g_t0, &in.g_t1}) {
        if (g->size(1) != net.cfg.event_bins) {
            throw ShapeError("voxel grids must have " + std::to_string(net.cfg.event_bins) + " bins");
        }
    }
    PyramidFeatures out;
    // Shared encoders run once on both inputs stacked along the batch axis.
    const auto frames = net.frame_enc(detail::stack_batch(in.i0, in.i1));
    const auto flows = net.event_flow_enc(detail::stack_batch(in.g_t0, in.g_t1));
    const auto syn = net.event_syn_enc(detail::stack_batch(in.g_0t, in.g_t1));
    for (std::size_t s = 0; s < kScales; ++s) {
        std::tie(out.c0[s], out.c1[s]) = detail::split_batch(frames[s]);
        std::tie(out.ef_t0[s], out.ef_t1[s]) = detail::split_batch(flows[s]);
        std::tie(out.es_0t[s], out.es_t1[s]) = detail::split_batch(syn[s]);
    }
    return out;
}

/// C_t = (C0 + C1) / 2 + A^s(C0, C1, left, right, prev); a zero tensor with
/// twice C0's channels stands in for `prev` at the coarsest scale.
inline Tensor synthesize_anchor(const ConvBlock& block, const Tensor& c0, const Tensor& c1, const Tensor& fe_left,
                                const Tensor& fe_right, const std::optional<Tensor>& prev_anchor) {
    for (const Tensor* t : {&c0, &c1, &fe_left, &fe_right}) detail::require_4d(*t, "anchor input");
    if (c1.shape() != c0.shape() || fe_left.shape() != c0.shape() || fe_right.shape() != c0.shape()) {
        throw ShapeError("anchor inputs must share C0's shape " + shape_str(c0.shape()));
    }
    const std::size_t n = c0.size(0), ch = c0.size(1), h = c0.size(2), w = c0.size(3);
    const Tensor prev = prev_anchor ? *prev_anchor : Tensor::zeros({n, 2 * ch, h, w});
    if (prev.shape() != Shape{n, 2 * ch, h, w}) {
        throw ShapeError("previous anchor must be " + shape_str({n, 2 * ch, h, w}) + ", got " + shape_str(prev.shape()));
    }
    return add(scale(add(c0, c1), 0.5), block(concat({c0, c1, fe_left, fe_right, prev}, 1)));
}

struct EBiOFResult {
    Tensor native_t0, native_t1;  // at the event-flow resolution
    Tensor v_t0, v_t1;            // rescaled by 0.5 to the image-flow resolution
};

/// Event-only residual flows. Each direction's decoder sees its own features
/// first, then the other direction's, then its own upsampled previous flow.
inline EBiOFResult ebiof_forward(const ConvBlock& decoder, const Tensor& fe_t0, const Tensor& fe_t1,
                                 const std::optional<std::pair<Tensor, Tensor>>& prev_native) {
    detail::require_4d(fe_t0, "E-BiOF feature");
    if (fe_t1.shape() != fe_t0.shape()) throw ShapeError("E-BiOF feature shapes differ");
    const std::size_t n = fe_t0.size(0), h = fe_t0.size(2), w = fe_t0.size(3);
    Tensor base_t0 = Tensor::zeros({n, 2, h, w}), base_t1 = Tensor::zeros({n, 2, h, w});
    if (prev_native) {
        base_t0 = rescale_flow(prev_native->first, 2.0);
        base_t1 = rescale_flow(prev_native->second, 2.0);
        if (base_t0.shape() != Shape{n, 2, h, w} || base_t1.shape() != base_t0.shape()) {
            throw ShapeError("E-BiOF previous flow resolution mismatch: " + shape_str(base_t0.shape()) +
                             " upsampled vs features " + shape_str(fe_t0.shape()));
        }
    }
    const Tensor x = detail::stack_batch(concat({fe_t0, fe_t1, base_t0}, 1), concat({fe_t1, fe_t0, base_t1}, 1));
    const Tensor native = add(detail::stack_batch(base_t0, base_t1), decoder(x));
    EBiOFResult r;
    std::tie(r.native_t0, r.native_t1) = detail::split_batch(native);
    const Tensor delivered = rescale_flow(native, 0.5);
    std::tie(r.v_t0, r.v_t1) = detail::split_batch(delivered);
    return r;
}

struct FBiOFResult {
    Tensor flow, mask;
};

struct FBiOFHooks {
    bool force_mask_ones = false;
};

/// Confidence-mask fusion of the upsampled image-level flow and the event
/// flow for one direction k. Without a previous image flow (coarsest scale)
/// the event flow passes through and the mask is reported as zeros.
inline FBiOFResult fbiof_forward(const FBiOFParams& p, const std::optional<Tensor>& v_img_prev, const Tensor& v_evt,
                                 const Tensor& c_k, const Tensor& c_t, const FBiOFHooks& hooks = {}) {
    detail::require_4d(v_evt, "F-BiOF event flow");
    const std::size_t n = v_evt.size(0), h = v_evt.size(2), w = v_evt.size(3);
    if (c_k.shape() != c_t.shape() || c_k.size(0) != n || c_k.size(2) != h || c_k.size(3) != w) {
        throw ShapeError("F-BiOF geometry mismatch: flow " + shape_str(v_evt.shape()) + ", C_k " +
                         shape_str(c_k.shape()) + ", C_t " + shape_str(c_t.shape()));
    }
    if (!v_img_prev) return {v_evt, Tensor::zeros({n, 1, h, w})};
    const Tensor v_img = rescale_flow(*v_img_prev, 2.0);
    if (v_img.shape() != v_evt.shape()) {
        throw ShapeError("F-BiOF upsampled image flow " + shape_str(v_img.shape()) + " does not match event flow " +
                         shape_str(v_evt.shape()));
    }
    const Tensor rk = p.refine_k(c_k);
    const Tensor rt = p.refine_t(c_t);
    const Tensor w_img = backward_warp(rk, v_img).warped;
    const Tensor w_evt = backward_warp(rk, v_evt).warped;
    Tensor mask = hooks.force_mask_ones ? Tensor::ones({n, 1, h, w})
                                        : sigmoid(p.mask_head(concat({rt, w_img, w_evt, v_img, v_evt}, 1)));
    return {blend_flows(v_img, v_evt, mask), mask};
}

/// Warp C_k by v_f, correlate with C_t, and add a decoded residual to v_f.
inline Tensor ibiof_forward(const ConvBlock& decoder, const Tensor& v_f, const Tensor& c_k, const Tensor& c_t,
                            std::size_t radius) {
    detail::require_4d(v_f, "I-BiOF flow");
    if (c_k.shape() != c_t.shape() || c_k.size(0) != v_f.size(0) || c_k.size(2) != v_f.size(2) ||
        c_k.size(3) != v_f.size(3) || v_f.size(1) != 2) {
        throw ShapeError("I-BiOF geometry mismatch: flow " + shape_str(v_f.shape()) + ", C_k " +
                         shape_str(c_k.shape()) + ", C_t " + shape_str(c_t.shape()));
    }
    const Tensor warped = backward_warp(c_k, v_f).warped;
    const Tensor corr = local_correlation(c_t, warped, radius, true);
    return add(v_f, decoder(concat({corr, c_t, v_f}, 1)));
}

struct FlowPyramids {
    std::array<Tensor, kScales> v_t0, v_t1;    // final flows per scale
    std::array<Tensor, kScales> ve_t0, ve_t1;  // E-BiOF flows delivered to the image-flow resolution
    std::array<Tensor, kScales> vf_t0, vf_t1;  // F-BiOF flows
    std::array<Tensor, kScales> m_t0, m_t1;    // F-BiOF masks
    std::array<Tensor, kScales> anchor;        // C_t per scale
};

struct BiOFHooks {
    FBiOFHooks fbiof;
};

inline FlowPyramids eif_biofnet_forward(const BiOFNet& net, const BiOFInputs& in, const BiOFHooks& hooks = {}) {
    const PyramidFeatures f = extract_pyramids(net, in);
    FlowPyramids out;
    std::optional<Tensor> prev_anchor;
    std::optional<std::pair<Tensor, Tensor>> prev_native;
    std::optional<Tensor> prev_img;  // stacked [t->0; t->1] final flows of the previous scale
    for (std::size_t s = 0; s < kScales; ++s) {
        const Tensor c_t = synthesize_anchor(net.anchor[s], f.c0[s], f.c1[s], f.es_0t[s], f.es_t1[s], prev_anchor);
        out.anchor[s] = c_t;
        const EBiOFResult e = ebiof_forward(net.ebiof[s], f.ef_t0[s], f.ef_t1[s], prev_native);
        out.ve_t0[s] = e.v_t0;
        out.ve_t1[s] = e.v_t1;
        const Tensor v_evt = detail::stack_batch(e.v_t0, e.v_t1);
        const Tensor c_k = detail::stack_batch(f.c0[s], f.c1[s]);
        const Tensor c_tt = detail::stack_batch(c_t, c_t);
        Tensor v_f = v_evt;
        Tensor mask = Tensor::zeros({v_evt.size(0), 1, v_evt.size(2), v_evt.size(3)});
        if (net.cfg.use_fbiof) {
            auto r = fbiof_forward(net.fbiof[s], s == 0 ? std::nullopt : prev_img, v_evt, c_k, c_tt, hooks.fbiof);
            v_f = r.flow;
            mask = r.mask;
        }
        std::tie(out.vf_t0[s], out.vf_t1[s]) = detail::split_batch(v_f);
        std::tie(out.m_t0[s], out.m_t1[s]) = detail::split_batch(mask);
        const Tensor v = net.cfg.use_ibiof ? ibiof_forward(net.ibiof[s], v_f, c_k, c_tt, net.cfg.corr_radius) : v_f;
        std::tie(out.v_t0[s], out.v_t1[s]) = detail::split_batch(v);
        prev_img = v;
        prev_native = std::make_pair(e.native_t0, e.native_t1);
        if (s + 1 < kScales) prev_anchor = detail::upsample2(c_t);
    }
    return out;
}

/// Finest-scale flows brought to the input resolution (values doubled).
inline std::pair<Tensor, Tensor> full_resolution_flows(const FlowPyramids& p) {
    return {rescale_flow(p.v_t0[kScales - 1], 2.0), rescale_flow(p.v_t1[kScales - 1], 2.0)};
}

}  // namespace evfi
