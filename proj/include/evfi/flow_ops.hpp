#pragma once

// Differentiable geometry and loss operators shared by the flow and
// synthesis networks. Tensors are NCHW; unbatched (C, H, W) inputs are
// accepted and returned unbatched.

#include <cmath>
#include <string>

#include "evfi/frame.hpp"
#include "evfi/nn_ops.hpp"

namespace evfi {

namespace detail {

inline Tensor as_batched(const Tensor& t, const char* op) {
    if (t.dim() == 4) return t;
    if (t.dim() == 3) return reshape(t, {1, t.size(0), t.size(1), t.size(2)});
    throw ShapeError(std::string(op) + ": expected (C,H,W) or (N,C,H,W), got " + shape_str(t.shape()));
}

inline Tensor like_input(const Tensor& out, const Tensor& ref) {
    if (ref.dim() == 3) return reshape(out, {out.size(1), out.size(2), out.size(3)});
    return out;
}

inline void require_same_hw(const Tensor& a, const Tensor& b, const char* op) {
    if (a.size(0) != b.size(0) || a.size(2) != b.size(2) || a.size(3) != b.size(3)) {
        throw ShapeError(std::string(op) + ": size mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

}  // namespace detail

struct WarpResult {
    Tensor warped;    // same shape as the source
    Tensor validity;  // (N,1,H,W) or (1,H,W); constant w.r.t. gradients
};

/// Bilinear sample of `source` at (x + u, y + v). Corners outside the image
/// read as zero; samples with no corner inside get validity 0.
inline WarpResult backward_warp(const Tensor& source_in, const Tensor& flow_in) {
    const Tensor src = detail::as_batched(source_in, "backward_warp");
    const Tensor flow = detail::as_batched(flow_in, "backward_warp");
    if (flow.size(1) != 2) throw ShapeError("backward_warp: flow must have 2 channels, got " + shape_str(flow.shape()));
    detail::require_same_hw(src, flow, "backward_warp");
    const std::size_t n = src.size(0), c = src.size(1), h = src.size(2), w = src.size(3);
    const std::size_t hw = h * w;
    std::vector<double> out(n * c * hw, 0.0), valid(n * hw, 0.0);
    const auto& sv = src.vec();
    const auto& fv = flow.vec();
    const long lh = static_cast<long>(h), lw = static_cast<long>(w);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                const std::size_t p = y * w + x;
                const double sx = static_cast<double>(x) + fv[(b * 2) * hw + p];
                const double sy = static_cast<double>(y) + fv[(b * 2 + 1) * hw + p];
                if (!(sx > -1.0 && sx < static_cast<double>(w) && sy > -1.0 && sy < static_cast<double>(h))) continue;
                valid[b * hw + p] = 1.0;
                const double fx0 = std::floor(sx), fy0 = std::floor(sy);
                const long x0 = static_cast<long>(fx0), y0 = static_cast<long>(fy0);
                const double ax = sx - fx0, ay = sy - fy0;
                const long xs[2] = {x0, x0 + 1}, ys[2] = {y0, y0 + 1};
                const double wx[2] = {1 - ax, ax}, wy[2] = {1 - ay, ay};
                for (int j = 0; j < 2; ++j) {
                    if (ys[j] < 0 || ys[j] >= lh) continue;
                    for (int i = 0; i < 2; ++i) {
                        if (xs[i] < 0 || xs[i] >= lw) continue;
                        const double wt = wy[j] * wx[i];
                        const std::size_t q = static_cast<std::size_t>(ys[j]) * w + static_cast<std::size_t>(xs[i]);
                        for (std::size_t ch = 0; ch < c; ++ch) out[(b * c + ch) * hw + p] += wt * sv[(b * c + ch) * hw + q];
                    }
                }
            }
    Tensor warped = make_result(
        src.shape(), std::move(out), {src, flow},
        [n, c, h, w, hw, lh, lw](const OpRecord& rec, std::span<const double> g, std::span<double* const> gin) {
            const auto& sv = rec.in(0);
            const auto& fv = rec.in(1);
            for (std::size_t b = 0; b < n; ++b)
                for (std::size_t y = 0; y < h; ++y)
                    for (std::size_t x = 0; x < w; ++x) {
                        const std::size_t p = y * w + x;
                        const double sx = static_cast<double>(x) + fv[(b * 2) * hw + p];
                        const double sy = static_cast<double>(y) + fv[(b * 2 + 1) * hw + p];
                        if (!(sx > -1.0 && sx < static_cast<double>(w) && sy > -1.0 && sy < static_cast<double>(h)))
                            continue;
                        const double fx0 = std::floor(sx), fy0 = std::floor(sy);
                        const long x0 = static_cast<long>(fx0), y0 = static_cast<long>(fy0);
                        const double ax = sx - fx0, ay = sy - fy0;
                        auto at = [&](std::size_t ch, long yy, long xx) {
                            if (yy < 0 || yy >= lh || xx < 0 || xx >= lw) return 0.0;
                            return sv[(b * c + ch) * hw + static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)];
                        };
                        double du = 0.0, dv = 0.0;
                        for (std::size_t ch = 0; ch < c; ++ch) {
                            const double go = g[(b * c + ch) * hw + p];
                            if (go == 0.0) continue;
                            const double v00 = at(ch, y0, x0), v01 = at(ch, y0, x0 + 1);
                            const double v10 = at(ch, y0 + 1, x0), v11 = at(ch, y0 + 1, x0 + 1);
                            du += go * ((1 - ay) * (v01 - v00) + ay * (v11 - v10));
                            dv += go * ((1 - ax) * (v10 - v00) + ax * (v11 - v01));
                            if (gin[0]) {
                                const long xs[2] = {x0, x0 + 1}, ys[2] = {y0, y0 + 1};
                                const double wx[2] = {1 - ax, ax}, wy[2] = {1 - ay, ay};
                                for (int j = 0; j < 2; ++j) {
                                    if (ys[j] < 0 || ys[j] >= lh) continue;
                                    for (int i = 0; i < 2; ++i) {
                                        if (xs[i] < 0 || xs[i] >= lw) continue;
                                        gin[0][(b * c + ch) * hw + static_cast<std::size_t>(ys[j]) * w +
                                               static_cast<std::size_t>(xs[i])] += go * wy[j] * wx[i];
                                    }
                                }
                            }
                        }
                        if (gin[1]) {
                            gin[1][(b * 2) * hw + p] += du;
                            gin[1][(b * 2 + 1) * hw + p] += dv;
                        }
                    }
        });
    Tensor validity({n, 1, h, w}, std::move(valid));
    return {detail::like_input(warped, source_in), detail::like_input(validity, source_in)};
}

/// Resizes the field by `factor` and scales its displacements by the same factor.
inline Tensor rescale_flow(const Tensor& flow_in, double factor) {
    if (!(factor > 0)) throw std::invalid_argument("rescale_flow: factor must be positive");
    const Tensor flow = detail::as_batched(flow_in, "rescale_flow");
    if (flow.size(1) != 2) throw ShapeError("rescale_flow: flow must have 2 channels");
    if (factor == 1.0) return flow_in;
    const auto oh = static_cast<std::size_t>(std::lround(static_cast<double>(flow.size(2)) * factor));
    const auto ow = static_cast<std::size_t>(std::lround(static_cast<double>(flow.size(3)) * factor));
    if (oh == 0 || ow == 0) throw ShapeError("rescale_flow: factor shrinks the field to nothing");
    return detail::like_input(scale(bilinear_resize(flow, oh, ow), factor), flow_in);
}

inline FlowField rescale_flow(const FlowField& flow, double factor) {
    return FlowField(rescale_flow(flow.data, factor));
}

/// mask * v_img + (1 - mask) * v_evt, mask broadcast over both components.
inline Tensor blend_flows(const Tensor& v_img_in, const Tensor& v_evt_in, const Tensor& mask_in) {
    const Tensor vi = detail::as_batched(v_img_in, "blend_flows");
    const Tensor ve = detail::as_batched(v_evt_in, "blend_flows");
    const Tensor m = detail::as_batched(mask_in, "blend_flows");
    if (vi.shape() != ve.shape() || vi.size(1) != 2 || m.size(1) != 1) {
        throw ShapeError("blend_flows: shapes " + shape_str(vi.shape()) + ", " + shape_str(ve.shape()) + ", " +
                         shape_str(m.shape()));
    }
    detail::require_same_hw(vi, m, "blend_flows");
    const std::size_t n = vi.size(0), hw = vi.size(2) * vi.size(3);
    std::vector<double> out(vi.numel());
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t k = 0; k < 2; ++k)
            for (std::size_t p = 0; p < hw; ++p) {
                const std::size_t i = (b * 2 + k) * hw + p;
                const double mv = m[b * hw + p];
                out[i] = mv * vi[i] + (1.0 - mv) * ve[i];
            }
    Tensor r = make_result(vi.shape(), std::move(out), {vi, ve, m},
                           [n, hw](const OpRecord& rec, std::span<const double> g, std::span<double* const> gin) {
                               const auto& a = rec.in(0);
                               const auto& e = rec.in(1);
                               const auto& mk = rec.in(2);
                               for (std::size_t b = 0; b < n; ++b)
                                   for (std::size_t k = 0; k < 2; ++k)
                                       for (std::size_t p = 0; p < hw; ++p) {
                                           const std::size_t i = (b * 2 + k) * hw + p;
                                           const double mv = mk[b * hw + p];
                                           if (gin[0]) gin[0][i] += g[i] * mv;
                                           if (gin[1]) gin[1][i] += g[i] * (1.0 - mv);
                                           if (gin[2]) gin[2][b * hw + p] += g[i] * (a[i] - e[i]);
                                       }
                           });
    return detail::like_input(r, v_img_in);
}

inline FlowField blend_flows(const FlowField& v_img, const FlowField& v_evt, const ConfidenceMask& mask) {
    return FlowField(blend_flows(v_img.data, v_evt.data, mask.data));
}

/// Dot products between feat_a at (x, y) and feat_b at (x+dx, y+dy) over a
/// (2r+1)^2 window; channel index (dy+r)(2r+1) + (dx+r). With `normalize`,
/// both features are L2-normalized along channels first (cosine similarity).
inline Tensor local_correlation(const Tensor& a_in, const Tensor& b_in, std::size_t radius, bool normalize) {
    Tensor a = detail::as_batched(a_in, "local_correlation");
    Tensor b = detail::as_batched(b_in, "local_correlation");
    if (a.shape() != b.shape()) {
        throw ShapeError("local_correlation: size mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    if (normalize) {
        a = l2_normalize(a, 1, 1e-6);
        b = l2_normalize(b, 1, 1e-6);
    }
    const std::size_t n = a.size(0), c = a.size(1), h = a.size(2), w = a.size(3), hw = h * w;
    const std::size_t side = 2 * radius + 1, nd = side * side;
    const long r = static_cast<long>(radius);
    std::vector<double> out(n * nd * hw, 0.0);
    const auto& av = a.vec();
    const auto& bv = b.vec();
    for (std::size_t bi = 0; bi < n; ++bi)
        for (long dy = -r; dy <= r; ++dy)
            for (long dx = -r; dx <= r; ++dx) {
                const std::size_t d = static_cast<std::size_t>((dy + r) * static_cast<long>(side) + (dx + r));
                double* o = out.data() + (bi * nd + d) * hw;
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const double* pa = av.data() + (bi * c + ch) * hw;
                    const double* pb = bv.data() + (bi * c + ch) * hw;
                    for (long y = std::max(0L, -dy); y < std::min(static_cast<long>(h), static_cast<long>(h) - dy); ++y)
                        for (long x = std::max(0L, -dx); x < std::min(static_cast<long>(w), static_cast<long>(w) - dx); ++x)
                            o[y * static_cast<long>(w) + x] += pa[y * static_cast<long>(w) + x] * pb[(y + dy) * static_cast<long>(w) + x + dx];
                }
            }
    Tensor res = make_result(
        {n, nd, h, w}, std::move(out), {a, b},
        [n, c, h, w, hw, side, nd, r](const OpRecord& rec, std::span<const double> g, std::span<double* const> gin) {
            const auto& av = rec.in(0);
            const auto& bv = rec.in(1);
            for (std::size_t bi = 0; bi < n; ++bi)
                for (long dy = -r; dy <= r; ++dy)
                    for (long dx = -r; dx <= r; ++dx) {
                        const std::size_t d = static_cast<std::size_t>((dy + r) * static_cast<long>(side) + (dx + r));
                        const double* go = g.data() + (bi * nd + d) * hw;
                        for (std::size_t ch = 0; ch < c; ++ch) {
                            const std::size_t base = (bi * c + ch) * hw;
                            for (long y = std::max(0L, -dy); y < std::min(static_cast<long>(h), static_cast<long>(h) - dy); ++y)
                                for (long x = std::max(0L, -dx); x < std::min(static_cast<long>(w), static_cast<long>(w) - dx); ++x) {
                                    const std::size_t pa = base + static_cast<std::size_t>(y * static_cast<long>(w) + x);
                                    const std::size_t pb = base + static_cast<std::size_t>((y + dy) * static_cast<long>(w) + x + dx);
                                    const double gv = go[y * static_cast<long>(w) + x];
                                    if (gin[0]) gin[0][pa] += gv * bv[pb];
                                    if (gin[1]) gin[1][pb] += gv * av[pa];
                                }
                        }
                    }
        });
    return detail::like_input(res, a_in);
}

/// mean((x^2 + eps^2)^alpha).
inline Tensor charbonnier(const Tensor& residual, double eps = 1e-3, double alpha = 0.5) {
    if (!(eps > 0)) throw std::invalid_argument("charbonnier: eps must be positive");
    if (residual.numel() == 0) throw ShapeError("charbonnier of an empty tensor");
    const double e2 = eps * eps;
    const double inv_n = 1.0 / static_cast<double>(residual.numel());
    double s = 0.0;
    for (double v : residual.data()) s += std::pow(v * v + e2, alpha);
    return make_result({1}, {s * inv_n}, {residual},
                       [e2, alpha, inv_n](const OpRecord& rec, std::span<const double> g, std::span<double* const> gin) {
                           if (!gin[0]) return;
                           const auto& xv = rec.in(0);
                           for (std::size_t i = 0; i < xv.size(); ++i)
                               gin[0][i] += g[0] * inv_n * 2.0 * alpha * xv[i] * std::pow(xv[i] * xv[i] + e2, alpha - 1.0);
                       });
}

/// First-order edge-aware smoothness:
/// mean|dV/dx| * exp(-beta mean_c|dI/dx|) + mean|dV/dy| * exp(-beta mean_c|dI/dy|),
/// forward differences, the last column/row dropped.
inline Tensor edge_aware_smoothness(const Tensor& flow_in, const Tensor& image_in, double beta = 10.0) {
    const Tensor flow = detail::as_batched(flow_in, "edge_aware_smoothness");
    const Tensor img = detail::as_batched(image_in, "edge_aware_smoothness");
    detail::require_same_hw(flow, img, "edge_aware_smoothness");
    const std::size_t n = flow.size(0), k = flow.size(1), c = img.size(1), h = flow.size(2), w = flow.size(3);
    const std::size_t hw = h * w;
    // Edge weights depend on the image only and are treated as constants.
    std::vector<double> wx(n * hw, 0.0), wy(n * hw, 0.0);
    const auto& iv = img.vec();
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                double gx = 0.0, gy = 0.0;
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const double* pl = iv.data() + (b * c + ch) * hw;
                    if (x + 1 < w) gx += std::abs(pl[y * w + x + 1] - pl[y * w + x]);
                    if (y + 1 < h) gy += std::abs(pl[(y + 1) * w + x] - pl[y * w + x]);
                }
                wx[b * hw + y * w + x] = std::exp(-beta * gx / static_cast<double>(c));
                wy[b * hw + y * w + x] = std::exp(-beta * gy / static_cast<double>(c));
            }
    const double nx = static_cast<double>(n * k * h * (w - 1));
    const double ny = static_cast<double>(n * k * (h - 1) * w);
    const double sx = w > 1 ? 1.0 / nx : 0.0, sy = h > 1 ? 1.0 / ny : 0.0;
    const auto& fv = flow.vec();
    double loss = 0.0;
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t comp = 0; comp < k; ++comp) {
            const double* pl = fv.data() + (b * k + comp) * hw;
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x) {
                    if (x + 1 < w) loss += sx * std::abs(pl[y * w + x + 1] - pl[y * w + x]) * wx[b * hw + y * w + x];
                    if (y + 1 < h) loss += sy * std::abs(pl[(y + 1) * w + x] - pl[y * w + x]) * wy[b * hw + y * w + x];
                }
        }
    return make_result(
        {1}, {loss}, {flow},
        [n, k, h, w, hw, sx, sy, wx = std::move(wx), wy = std::move(wy)](
            const OpRecord& rec, std::span<const double> g, std::span<double* const> gin) {
            if (!gin[0]) return;
            const auto& fv = rec.in(0);
            auto sgn = [](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); };
            for (std::size_t b = 0; b < n; ++b)
                for (std::size_t comp = 0; comp < k; ++comp) {
                    const std::size_t base = (b * k + comp) * hw;
                    for (std::size_t y = 0; y < h; ++y)
                        for (std::size_t x = 0; x < w; ++x) {
                            const std::size_t p = y * w + x;
                            if (x + 1 < w) {
                                const double d = g[0] * sx * wx[b * hw + p] * sgn(fv[base + p + 1] - fv[base + p]);
                                gin[0][base + p + 1] += d;
                                gin[0][base + p] -= d;
                            }
                            if (y + 1 < h) {
                                const double d = g[0] * sy * wy[b * hw + p] * sgn(fv[base + p + w] - fv[base + p]);
                                gin[0][base + p + w] += d;
                                gin[0][base + p] -= d;
                            }
                        }
                }
        });
}

struct FlowLossWeights {
    double lambda1 = 1.0;   // photometric
    double lambda2 = 10.0;  // smoothness
};

/// Stage-one objective: photometric Charbonnier between the ground-truth
/// intermediate frame and both backward-warped key frames, plus edge-aware
/// smoothness of both flows.
inline Tensor flow_loss(const Tensor& gt, const Tensor& i0, const Tensor& i1, const Tensor& v_t0, const Tensor& v_t1,
                        FlowLossWeights wts = {}) {
    const Tensor photo = add(charbonnier(sub(gt, backward_warp(i0, v_t0).warped)),
                             charbonnier(sub(gt, backward_warp(i1, v_t1).warped)));
    const Tensor smooth = add(edge_aware_smoothness(v_t0, gt), edge_aware_smoothness(v_t1, gt));
    return add(scale(photo, wts.lambda1), scale(smooth, wts.lambda2));
}

}  // namespace evfi
