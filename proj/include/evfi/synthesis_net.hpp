#pragma once

// Frame synthesis with interactive (dual cross) attention over channels.
//
// Scales s = 0, 1, 2 run at 1/4, 1/2 and full resolution. Flow pyramids from
// the flow network (1/8, 1/4, 1/2) are upsampled by 2 to meet them.

#include <array>

#include "evfi/eif_biofnet.hpp"

namespace evfi {

struct SynthConfig {
    std::size_t base_channels = 8;
    std::size_t image_channels = 3;
    std::size_t event_bins = 16;
    std::size_t heads = 2;
    std::size_t dw_kernel = 3;
    double alpha_init = 1.0;

    static constexpr std::size_t downsample(std::size_t s) { return std::size_t{4} >> s; }
    std::size_t channels(std::size_t s) const { return base_channels << (kScales - 1 - s); }
    std::array<std::size_t, kScales> channel_list() const { return {channels(0), channels(1), channels(2)}; }
};

/// Layer norm over channels followed by a depthwise and a pointwise conv.
struct Projection {
    Conv2d depthwise, pointwise;
    Tensor operator()(const Tensor& normed) const { return pointwise(depthwise(normed)); }
};

inline Projection make_projection(ParamStore& store, Rng& rng, const std::string& name, std::size_t ch,
                                  std::size_t kernel) {
    return {make_conv(store, rng, name + ".dw", ch, ch, kernel, 1, Init::fan_in, ch),
            make_conv(store, rng, name + ".pw", ch, ch, 1)};
}

struct InteractiveAttentionParams {
    LayerNorm2d norm_q, norm_s, norm_w;
    Projection q_s, q_w, k_s, v_s, k_w, v_w;
    Tensor log_alpha_s, log_alpha_w;  // alpha = exp(log_alpha) > 0
    Conv2d fuse;                      // 1x1, 2C -> C
};

struct SelfAttentionParams {
    LayerNorm2d norm;
    Projection q, k, v;
    Tensor log_alpha;
    Conv2d out;  // 1x1, C -> C
};

inline InteractiveAttentionParams make_interactive_attention(ParamStore& store, Rng& rng, const std::string& name,
                                                             std::size_t ch, const SynthConfig& cfg) {
    InteractiveAttentionParams p;
    p.norm_q = make_layer_norm(store, name + ".norm_q", ch);
    p.norm_s = make_layer_norm(store, name + ".norm_s", ch);
    p.norm_w = make_layer_norm(store, name + ".norm_w", ch);
    p.q_s = make_projection(store, rng, name + ".q_s", ch, cfg.dw_kernel);
    p.q_w = make_projection(store, rng, name + ".q_w", ch, cfg.dw_kernel);
    p.k_s = make_projection(store, rng, name + ".k_s", ch, cfg.dw_kernel);
    p.v_s = make_projection(store, rng, name + ".v_s", ch, cfg.dw_kernel);
    p.k_w = make_projection(store, rng, name + ".k_w", ch, cfg.dw_kernel);
    p.v_w = make_projection(store, rng, name + ".v_w", ch, cfg.dw_kernel);
    const double la = std::log(cfg.alpha_init);
    p.log_alpha_s = store.add(name + ".log_alpha_s", Tensor::full({1}, la));
    p.log_alpha_w = store.add(name + ".log_alpha_w", Tensor::full({1}, la));
    p.fuse = make_conv(store, rng, name + ".fuse", 2 * ch, ch, 1);
    return p;
}

inline SelfAttentionParams make_self_attention(ParamStore& store, Rng& rng, const std::string& name, std::size_t ch,
                                               const SynthConfig& cfg) {
    SelfAttentionParams p;
    p.norm = make_layer_norm(store, name + ".norm", ch);
    p.q = make_projection(store, rng, name + ".q", ch, cfg.dw_kernel);
    p.k = make_projection(store, rng, name + ".k", ch, cfg.dw_kernel);
    p.v = make_projection(store, rng, name + ".v", ch, cfg.dw_kernel);
    p.log_alpha = store.add(name + ".log_alpha", Tensor::full({1}, std::log(cfg.alpha_init)));
    p.out = make_conv(store, rng, name + ".out", ch, ch, 1);
    return p;
}

/// Attention weights softmax(Q K^T / alpha) per head, shape N x heads x C/h x C/h.
/// Q and K are L2-normalized along the spatial axis first, so logits are
/// cosine similarities between channel responses.
inline Tensor channel_attention_weights(const Tensor& q, const Tensor& k, const Tensor& log_alpha, std::size_t heads) {
    const std::size_t n = q.size(0), c = q.size(1), hw = q.size(2) * q.size(3);
    if (c % heads != 0) {
        throw ShapeError("attention: " + std::to_string(c) + " channels not divisible by " + std::to_string(heads) +
                         " heads");
    }
    const Shape split{n, heads, c / heads, hw};
    const Tensor qh = l2_normalize(reshape(q, split), 3);
    const Tensor kh = l2_normalize(reshape(k, split), 3);
    const Tensor logits = matmul(qh, transpose_last2(kh));
    const Tensor inv_alpha = expand(reshape(exp(neg(log_alpha)), {1, 1, 1, 1}), logits.shape());
    return softmax(mul(logits, inv_alpha), 3);
}

inline Tensor channel_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& log_alpha,
                                std::size_t heads) {
    const Tensor a = channel_attention_weights(q, k, log_alpha, heads);
    const std::size_t n = v.size(0), c = v.size(1), hw = v.size(2) * v.size(3);
    return reshape(matmul(a, reshape(v, {n, heads, c / heads, hw})), v.shape());
}

/// X = Q + Conv_p([Att(Q_s, K_s, V_s), Att(Q_w, K_w, V_w)]).
inline Tensor interactive_attention(const InteractiveAttentionParams& p, const Tensor& q, const Tensor& f_w,
                                    const Tensor& f_s, std::size_t heads) {
    detail::require_4d(q, "attention query");
    if (f_w.shape() != q.shape() || f_s.shape() != q.shape()) {
        throw ShapeError("interactive_attention: inputs must share shape " + shape_str(q.shape()) + ", got " +
                         shape_str(f_w.shape()) + " and " + shape_str(f_s.shape()));
    }
    const Tensor qn = p.norm_q(q), sn = p.norm_s(f_s), wn = p.norm_w(f_w);
    const Tensor att_s = channel_attention(p.q_s(qn), p.k_s(sn), p.v_s(sn), p.log_alpha_s, heads);
    const Tensor att_w = channel_attention(p.q_w(qn), p.k_w(wn), p.v_w(wn), p.log_alpha_w, heads);
    return add(q, p.fuse(concat({att_s, att_w}, 1)));
}

inline Tensor self_attention_refine(const SelfAttentionParams& p, const Tensor& x, std::size_t heads) {
    detail::require_4d(x, "self-attention input");
    const Tensor xn = p.norm(x);
    return add(x, p.out(channel_attention(p.q(xn), p.k(xn), p.v(xn), p.log_alpha, heads)));
}

struct SynthScaleParams {
    ConvBlock warp_enc, synth_enc, query_enc;
    Conv2d query_merge;  // 1x1 over [Q_in, upsampled decoder state]
    InteractiveAttentionParams attention;
    SelfAttentionParams refine;
    Conv2d head;  // zero-initialized residual on the logit of the warped-frame blend
};

struct SynthNet {
    SynthConfig cfg;
    ParamStore params;
    PyramidEncoder frame_enc, event_enc;
    std::array<SynthScaleParams, kScales> scales;

    SynthNet(const SynthConfig& config, std::uint64_t seed) : cfg(config) {
        Rng rng(seed);
        frame_enc = make_pyramid_encoder(params, rng, "synth.frame_enc", cfg.image_channels, cfg.channel_list(), 1);
        event_enc = make_pyramid_encoder(params, rng, "synth.event_enc", cfg.event_bins, cfg.channel_list(), 1);
        const std::size_t ic = cfg.image_channels;
        for (std::size_t s = 0; s < kScales; ++s) {
            const std::size_t ch = cfg.channels(s);
            const std::string p = "synth.s" + std::to_string(s);
            auto& sp = scales[s];
            sp.warp_enc = make_block(params, rng, p + ".warp_enc", 2 * ic + 4 * ch, ch, ch, 2);
            sp.synth_enc = make_block(params, rng, p + ".synth_enc", 4 * ch, ch, ch, 2);
            sp.query_enc = make_block(params, rng, p + ".query_enc", 2 * ic + 4 * ch, ch, ch, 2);
            sp.query_merge = make_conv(params, rng, p + ".query_merge", 3 * ch, ch, 1);
            sp.attention = make_interactive_attention(params, rng, p + ".attn", ch, cfg);
            sp.refine = make_self_attention(params, rng, p + ".refine", ch, cfg);
            sp.head = make_conv(params, rng, p + ".head", ch, ic, 3, 1, Init::zero);
        }
    }
};

struct SynthInputs {
    Tensor i0, i1;     // N x C x H x W
    Tensor g_0t, g_t1;  // N x bins x H x W
};

/// Per-scale flows for the synthesis levels (already upsampled from the
/// flow network's pyramid).
struct SynthFlows {
    std::array<Tensor, kScales> v_t0, v_t1;
};

inline SynthFlows synthesis_flows(const FlowPyramids& p) {
    SynthFlows f;
    for (std::size_t s = 0; s < kScales; ++s) {
        f.v_t0[s] = rescale_flow(p.v_t0[s], 2.0);
        f.v_t1[s] = rescale_flow(p.v_t1[s], 2.0);
    }
    return f;
}

struct SynthFeatures {
    std::array<Tensor, kScales> phi0, phi1, e_0t, e_t1;  // encoder pyramids
    std::array<Tensor, kScales> i0, i1;                 // area-downscaled frames
};

inline SynthFeatures encode_synthesis_inputs(const SynthNet& net, const SynthInputs& in) {
    for (const Tensor* t : {&in.i0, &in.i1, &in.g_0t, &in.g_t1}) detail::require_4d(*t, "synthesis input");
    const std::size_t h = in.i0.size(2), w = in.i0.size(3);
    if (h % 4 != 0 || w % 4 != 0) throw ShapeError("synthesis input resolution must be divisible by 4");
    for (const Tensor* t : {&in.i1, &in.g_0t, &in.g_t1}) {
        if (t->size(0) != in.i0.size(0) || t->size(2) != h || t->size(3) != w) {
            throw ShapeError("synthesis input geometry mismatch: " + shape_str(t->shape()) + " vs " +
                             shape_str(in.i0.shape()));
        }
    }
    if (in.i0.size(1) != net.cfg.image_channels || in.i1.size(1) != net.cfg.image_channels ||
        in.g_0t.size(1) != net.cfg.event_bins || in.g_t1.size(1) != net.cfg.event_bins) {
        throw ShapeError("synthesis input channel counts do not match the configuration");
    }
    SynthFeatures f;
    const auto phi = net.frame_enc(detail::stack_batch(in.i0, in.i1));
    const auto ev = net.event_enc(detail::stack_batch(in.g_0t, in.g_t1));
    for (std::size_t s = 0; s < kScales; ++s) {
        std::tie(f.phi0[s], f.phi1[s]) = detail::split_batch(phi[s]);
        std::tie(f.e_0t[s], f.e_t1[s]) = detail::split_batch(ev[s]);
        const std::size_t ds = SynthConfig::downsample(s);
        f.i0[s] = ds == 1 ? in.i0 : area_downsample(in.i0, ds);
        f.i1[s] = ds == 1 ? in.i1 : area_downsample(in.i1, ds);
    }
    return f;
}

namespace detail {

inline void require_flow_at(const Tensor& flow, const Tensor& feat, const char* what) {
    if (flow.dim() != 4 || flow.size(1) != 2 || flow.size(0) != feat.size(0) || flow.size(2) != feat.size(2) ||
        flow.size(3) != feat.size(3)) {
        throw ShapeError(std::string(what) + ": flow " + shape_str(flow.shape()) + " does not match features " +
                         shape_str(feat.shape()));
    }
}

}  // namespace detail

struct WarpedInputs {
    Tensor i0, i1, phi0, phi1;
    Tensor valid0, valid1;  // N x 1 x H x W, constant
};

inline WarpedInputs warp_inputs(const SynthFeatures& f, const SynthFlows& flows, std::size_t s) {
    detail::require_flow_at(flows.v_t0[s], f.phi0[s], "warp features");
    detail::require_flow_at(flows.v_t1[s], f.phi1[s], "warp features");
    // Frames and features share each flow, so one warp covers both.
    const auto w0 = backward_warp(concat({f.i0[s], f.phi0[s]}, 1), flows.v_t0[s]);
    const auto w1 = backward_warp(concat({f.i1[s], f.phi1[s]}, 1), flows.v_t1[s]);
    const std::size_t ic = f.i0[s].size(1), c = w0.warped.size(1);
    return {slice(w0.warped, 1, 0, ic), slice(w1.warped, 1, 0, ic), slice(w0.warped, 1, ic, c),
            slice(w1.warped, 1, ic, c),  w0.validity,                 w1.validity};
}

/// Warp features F(W)^s from the warped frames and frame features plus both event features.
inline Tensor build_warp_features(const SynthScaleParams& p, const WarpedInputs& w, const SynthFeatures& f,
                                  std::size_t s) {
    return p.warp_enc(concat({w.i0, w.i1, w.phi0, w.phi1, f.e_0t[s], f.e_t1[s]}, 1));
}

/// Synthesis features F(S)^s from unwarped frame and event features; no flow dependence.
inline Tensor build_synthesis_features(const SynthScaleParams& p, const SynthFeatures& f, std::size_t s) {
    return p.synth_enc(concat({f.phi0[s], f.phi1[s], f.e_0t[s], f.e_t1[s]}, 1));
}

inline Tensor build_query_input(const SynthScaleParams& p, const WarpedInputs& w, const SynthFeatures& f,
                                std::size_t s) {
    return p.query_enc(concat({f.phi0[s], f.phi1[s], f.e_0t[s], f.e_t1[s], w.i0, w.i1}, 1));
}

/// Validity-weighted average of the two warped frames; where neither warp is
/// valid the unwarped average takes over.
inline Tensor warped_blend(const WarpedInputs& w, const SynthFeatures& f, std::size_t s) {
    constexpr double kFallback = 1e-3;
    const Shape img = w.i0.shape();
    const Tensor m0 = expand(w.valid0, img), m1 = expand(w.valid1, img);
    const Tensor num = add(add(mul(m0, w.i0), mul(m1, w.i1)), scale(add(f.i0[s], f.i1[s]), 0.5 * kFallback));
    std::vector<double> inv(shape_numel(img));
    for (std::size_t i = 0; i < inv.size(); ++i) inv[i] = 1.0 / (m0[i] + m1[i] + kFallback);
    return mul(num, Tensor(img, std::move(inv)));
}

struct SynthOutputs {
    std::array<Tensor, kScales> frames;  // I_t^s in [0, 1]
    std::array<Tensor, kScales> base;    // warped-frame blend per scale
};

struct SynthHooks {
    bool skip_base = false;  // head output alone through the sigmoid
};

inline SynthOutputs synthesis_forward(const SynthNet& net, const SynthInputs& in, const SynthFlows& flows,
                                      const SynthHooks& hooks = {}) {
    const SynthFeatures f = encode_synthesis_inputs(net, in);
    SynthOutputs out;
    Tensor state;
    for (std::size_t s = 0; s < kScales; ++s) {
        const auto& p = net.scales[s];
        const WarpedInputs w = warp_inputs(f, flows, s);
        const Tensor f_w = build_warp_features(p, w, f, s);
        const Tensor f_s = build_synthesis_features(p, f, s);
        const Tensor q_in = build_query_input(p, w, f, s);
        const std::size_t ch = q_in.size(1);
        const Tensor prev = s == 0 ? Tensor::zeros({q_in.size(0), 2 * ch, q_in.size(2), q_in.size(3)})
                                   : detail::upsample2(state);
        const Tensor q = p.query_merge(concat({q_in, prev}, 1));
        state = self_attention_refine(p.refine, interactive_attention(p.attention, q, f_w, f_s, net.cfg.heads),
                                      net.cfg.heads);
        const Tensor base = warped_blend(w, f, s);
        out.base[s] = base;
        // The head predicts a residual in logit space around the warped-frame blend.
        Tensor z = p.head(state);
        if (!hooks.skip_base) z = add(z, logit(clamp(base, 1e-3, 1.0 - 1e-3)));
        out.frames[s] = sigmoid(z);
    }
    return out;
}

}  // namespace evfi
