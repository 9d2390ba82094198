#pragma once

// Network primitives on NCHW tensors. Products run through Eigen with
// float64 accumulation.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "evfi/ops.hpp"

namespace evfi {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;

struct ConvGeom {
    std::size_t n, c, h, w;       // input
    std::size_t o, kh, kw;        // weight
    std::size_t stride, pad, groups;
    std::size_t ho, wo;
    std::size_t cg() const { return c / groups; }
    std::size_t og() const { return o / groups; }
};

// Rows (ci, ky, kx) x columns (oy, ox) for channels [c0, c0 + cg) of sample n.
inline void im2col(const double* in, const ConvGeom& g, std::size_t c0, double* col) {
    const std::size_t cols = g.ho * g.wo;
    for (std::size_t ci = 0; ci < g.cg(); ++ci) {
        const double* plane = in + (c0 + ci) * g.h * g.w;
        for (std::size_t ky = 0; ky < g.kh; ++ky)
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                double* row = col + ((ci * g.kh + ky) * g.kw + kx) * cols;
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
                    double* dst = row + oy * g.wo;
                    if (iy < 0 || iy >= static_cast<long>(g.h)) {
                        std::fill_n(dst, g.wo, 0.0);
                        continue;
                    }
                    const double* src = plane + static_cast<std::size_t>(iy) * g.w;
                    for (std::size_t ox = 0; ox < g.wo; ++ox) {
                        const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
                        dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? 0.0 : src[ix];
                    }
                }
            }
    }
}

inline void col2im(const double* col, const ConvGeom& g, std::size_t c0, double* in_grad) {
    const std::size_t cols = g.ho * g.wo;
    for (std::size_t ci = 0; ci < g.cg(); ++ci) {
        double* plane = in_grad + (c0 + ci) * g.h * g.w;
        for (std::size_t ky = 0; ky < g.kh; ++ky)
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                const double* row = col + ((ci * g.kh + ky) * g.kw + kx) * cols;
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
                    if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
                    double* dst = plane + static_cast<std::size_t>(iy) * g.w;
                    for (std::size_t ox = 0; ox < g.wo; ++ox) {
                        const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
                        if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += row[oy * g.wo + ox];
                    }
                }
            }
    }
}

}  // namespace detail

/// 2-D cross-correlation. input (N,C,H,W), weight (O,C/groups,KH,KW), bias (O) or undefined.
inline Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias = {},
                     std::size_t stride = 1, std::size_t padding = 0, std::size_t groups = 1) {
    if (input.dim() != 4 || weight.dim() != 4) {
        throw ShapeError("conv2d expects NCHW input and OIHW weight, got " + shape_str(input.shape()) +
                         " and " + shape_str(weight.shape()));
    }
    detail::ConvGeom g{input.size(0), input.size(1), input.size(2), input.size(3),
                       weight.size(0), weight.size(2), weight.size(3),
                       stride, padding, groups, 0, 0};
    if (groups == 0 || stride == 0) throw ShapeError("conv2d: stride and groups must be positive");
    if (g.c % groups != 0 || g.o % groups != 0) {
        throw ShapeError("conv2d: channels " + std::to_string(g.c) + " -> " + std::to_string(g.o) +
                         " not divisible by groups " + std::to_string(groups));
    }
    if (weight.size(1) != g.cg()) {
        throw ShapeError("conv2d: weight expects " + std::to_string(weight.size(1)) +
                         " input channels per group, input provides " + std::to_string(g.cg()));
    }
    if (g.h + 2 * padding < g.kh || g.w + 2 * padding < g.kw) {
        throw ShapeError("conv2d: kernel " + std::to_string(g.kh) + "x" + std::to_string(g.kw) +
                         " larger than padded input " + shape_str(input.shape()));
    }
    if (bias.defined() && (bias.dim() != 1 || bias.size(0) != g.o)) {
        throw ShapeError("conv2d: bias shape " + shape_str(bias.shape()) + " does not match " +
                         std::to_string(g.o) + " output channels");
    }
    g.ho = (g.h + 2 * padding - g.kh) / stride + 1;
    g.wo = (g.w + 2 * padding - g.kw) / stride + 1;

    const std::size_t cols = g.ho * g.wo;
    const std::size_t krows = g.cg() * g.kh * g.kw;
    std::vector<double> out(g.n * g.o * cols, 0.0);
    std::vector<double> col(krows * cols);
    const double* in = input.vec().data();
    const double* wt = weight.vec().data();
    for (std::size_t n = 0; n < g.n; ++n) {
        for (std::size_t gr = 0; gr < groups; ++gr) {
            detail::im2col(in + n * g.c * g.h * g.w, g, gr * g.cg(), col.data());
            detail::MapConstMat wmat(wt + gr * g.og() * krows, static_cast<Eigen::Index>(g.og()),
                                     static_cast<Eigen::Index>(krows));
            detail::MapConstMat cmat(col.data(), static_cast<Eigen::Index>(krows), static_cast<Eigen::Index>(cols));
            detail::MapMat omat(out.data() + (n * g.o + gr * g.og()) * cols, static_cast<Eigen::Index>(g.og()),
                                static_cast<Eigen::Index>(cols));
            omat.noalias() = wmat * cmat;
        }
        if (bias.defined()) {
            for (std::size_t oc = 0; oc < g.o; ++oc) {
                double* row = out.data() + (n * g.o + oc) * cols;
                const double b = bias[oc];
                for (std::size_t i = 0; i < cols; ++i) row[i] += b;
            }
        }
    }

    std::vector<Tensor> inputs{input, weight};
    if (bias.defined()) inputs.push_back(bias);
    return make_result(
        {g.n, g.o, g.ho, g.wo}, std::move(out), inputs,
        [g, krows, cols](const OpRecord& rec, std::span<const double> gout, std::span<double* const> gin) {
            const double* in = rec.in(0).data();
            const double* wt = rec.in(1).data();
            std::vector<double> col(krows * cols), dcol(krows * cols);
            for (std::size_t n = 0; n < g.n; ++n) {
                for (std::size_t gr = 0; gr < g.groups; ++gr) {
                    detail::MapConstMat gmat(gout.data() + (n * g.o + gr * g.og()) * cols,
                                             static_cast<Eigen::Index>(g.og()), static_cast<Eigen::Index>(cols));
                    if (gin[1]) {
                        detail::im2col(in + n * g.c * g.h * g.w, g, gr * g.cg(), col.data());
                        detail::MapConstMat cmat(col.data(), static_cast<Eigen::Index>(krows),
                                                 static_cast<Eigen::Index>(cols));
                        detail::MapMat dw(gin[1] + gr * g.og() * krows, static_cast<Eigen::Index>(g.og()),
                                          static_cast<Eigen::Index>(krows));
                        dw.noalias() += gmat * cmat.transpose();
                    }
                    if (gin[0]) {
                        detail::MapConstMat wmat(wt + gr * g.og() * krows, static_cast<Eigen::Index>(g.og()),
                                                 static_cast<Eigen::Index>(krows));
                        detail::MapMat dc(dcol.data(), static_cast<Eigen::Index>(krows),
                                          static_cast<Eigen::Index>(cols));
                        dc.noalias() = wmat.transpose() * gmat;
                        detail::col2im(dcol.data(), g, gr * g.cg(), gin[0] + n * g.c * g.h * g.w);
                    }
                }
                if (gin.size() > 2 && gin[2]) {
                    for (std::size_t oc = 0; oc < g.o; ++oc) {
                        const double* row = gout.data() + (n * g.o + oc) * cols;
                        double s = 0.0;
                        for (std::size_t i = 0; i < cols; ++i) s += row[i];
                        gin[2][oc] += s;
                    }
                }
            }
        });
}

/// Layer normalization along `axis`; gamma/beta have that axis' extent.
inline Tensor layer_norm(const Tensor& x, std::size_t axis, const Tensor& gamma, const Tensor& beta,
                         double eps = 1e-5) {
    const auto sp = detail::split_axis(x.shape(), axis);
    if (sp.extent == 0) throw ShapeError("layer_norm over an axis of size 0");
    if (gamma.numel() != sp.extent || beta.numel() != sp.extent) {
        throw ShapeError("layer_norm: gamma/beta size " + std::to_string(gamma.numel()) + "/" +
                         std::to_string(beta.numel()) + " does not match normalized extent " +
                         std::to_string(sp.extent));
    }
    std::vector<double> out(x.numel());
    const auto& xv = x.vec();
    const double inv_n = 1.0 / static_cast<double>(sp.extent);
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t i = 0; i < sp.inner; ++i) {
            const std::size_t base = o * sp.extent * sp.inner + i;
            double m = 0.0;
            for (std::size_t c = 0; c < sp.extent; ++c) m += xv[base + c * sp.inner];
            m *= inv_n;
            double var = 0.0;
            for (std::size_t c = 0; c < sp.extent; ++c) {
                const double d = xv[base + c * sp.inner] - m;
                var += d * d;
            }
            var *= inv_n;
            const double rstd = 1.0 / std::sqrt(var + eps);
            for (std::size_t c = 0; c < sp.extent; ++c)
                out[base + c * sp.inner] = (xv[base + c * sp.inner] - m) * rstd * gamma[c] + beta[c];
        }
    return make_result(
        x.shape(), std::move(out), {x, gamma, beta},
        [sp, eps, inv_n](const OpRecord& rec, std::span<const double> g, std::span<double* const> gin) {
            const auto& xv = rec.in(0);
            const auto& gm = rec.in(1);
            std::vector<double> xhat(sp.extent), dxhat(sp.extent);
            for (std::size_t o = 0; o < sp.outer; ++o)
                for (std::size_t i = 0; i < sp.inner; ++i) {
                    const std::size_t base = o * sp.extent * sp.inner + i;
                    double m = 0.0;
                    for (std::size_t c = 0; c < sp.extent; ++c) m += xv[base + c * sp.inner];
                    m *= inv_n;
                    double var = 0.0;
                    for (std::size_t c = 0; c < sp.extent; ++c) {
                        const double d = xv[base + c * sp.inner] - m;
                        var += d * d;
                    }
                    var *= inv_n;
                    const double rstd = 1.0 / std::sqrt(var + eps);
                    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                    for (std::size_t c = 0; c < sp.extent; ++c) {
                        const double gc = g[base + c * sp.inner];
                        xhat[c] = (xv[base + c * sp.inner] - m) * rstd;
                        dxhat[c] = gc * gm[c];
                        mean_dxhat += dxhat[c];
                        mean_dxhat_xhat += dxhat[c] * xhat[c];
                        if (gin[1]) gin[1][c] += gc * xhat[c];
                        if (gin[2]) gin[2][c] += gc;
                    }
                    mean_dxhat *= inv_n;
                    mean_dxhat_xhat *= inv_n;
                    if (gin[0])
                        for (std::size_t c = 0; c < sp.extent; ++c)
                            gin[0][base + c * sp.inner] +=
                                rstd * (dxhat[c] - mean_dxhat - xhat[c] * mean_dxhat_xhat);
                }
        });
}

/// Max-stabilized softmax along `axis`.
inline Tensor softmax(const Tensor& x, std::size_t axis) {
    const auto sp = detail::split_axis(x.shape(), axis);
    std::vector<double> out(x.numel());
    const auto& xv = x.vec();
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t i = 0; i < sp.inner; ++i) {
            const std::size_t base = o * sp.extent * sp.inner + i;
            double mx = -INFINITY;
            for (std::size_t c = 0; c < sp.extent; ++c) mx = std::max(mx, xv[base + c * sp.inner]);
            double s = 0.0;
            for (std::size_t c = 0; c < sp.extent; ++c) {
                const double e = std::exp(xv[base + c * sp.inner] - mx);
                out[base + c * sp.inner] = e;
                s += e;
            }
            for (std::size_t c = 0; c < sp.extent; ++c) out[base + c * sp.inner] /= s;
        }
    return make_result(x.shape(), std::move(out), {x},
                       [sp](const OpRecord& rec, std::span<const double> g, std::span<double* const> gin) {
                           if (!gin[0]) return;
                           const auto& y = rec.out();
                           for (std::size_t o = 0; o < sp.outer; ++o)
                               for (std::size_t i = 0; i < sp.inner; ++i) {
                                   const std::size_t base = o * sp.extent * sp.inner + i;
                                   double dot = 0.0;
                                   for (std::size_t c = 0; c < sp.extent; ++c)
                                       dot += g[base + c * sp.inner] * y[base + c * sp.inner];
                                   for (std::size_t c = 0; c < sp.extent; ++c) {
                                       const std::size_t k = base + c * sp.inner;
                                       gin[0][k] += y[k] * (g[k] - dot);
                                   }
                               }
                       });
}

/// Batched matrix product (..., M, K) x (..., K, N); leading axes broadcast.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.dim() < 2 || b.dim() < 2) throw ShapeError("matmul needs rank >= 2 operands");
    const std::size_t m = a.size(a.dim() - 2), k = a.size(a.dim() - 1);
    const std::size_t k2 = b.size(b.dim() - 2), n = b.size(b.dim() - 1);
    if (k != k2) {
        throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    const std::size_t ra = a.dim() - 2, rb = b.dim() - 2, rank = std::max(ra, rb);
    Shape batch(rank);
    std::vector<std::size_t> da(rank, 1), db(rank, 1);
    for (std::size_t i = 0; i < rank; ++i) {
        if (i + ra >= rank) da[i] = a.size(i + ra - rank);
        if (i + rb >= rank) db[i] = b.size(i + rb - rank);
        if (da[i] != db[i] && da[i] != 1 && db[i] != 1) {
            throw ShapeError("matmul: batch dimensions not broadcastable, " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
        }
        batch[i] = std::max(da[i], db[i]);
    }
    const std::size_t nb = shape_numel(batch);
    std::vector<std::size_t> ia(nb), ib(nb);
    for (std::size_t flat = 0; flat < nb; ++flat) {
        std::size_t rem = flat, sa = 0, sb = 0;
        std::size_t stride = nb;
        for (std::size_t i = 0; i < rank; ++i) {
            stride /= batch[i];
            const std::size_t idx = rem / stride;
            rem %= stride;
            sa = sa * da[i] + (da[i] == 1 ? 0 : idx);
            sb = sb * db[i] + (db[i] == 1 ? 0 : idx);
        }
        ia[flat] = sa;
        ib[flat] = sb;
    }
    Shape shape = batch;
    shape.push_back(m);
    shape.push_back(n);
    std::vector<double> out(nb * m * n);
    using E = Eigen::Index;
    for (std::size_t t = 0; t < nb; ++t) {
        detail::MapConstMat am(a.vec().data() + ia[t] * m * k, static_cast<E>(m), static_cast<E>(k));
        detail::MapConstMat bm(b.vec().data() + ib[t] * k * n, static_cast<E>(k), static_cast<E>(n));
        detail::MapMat om(out.data() + t * m * n, static_cast<E>(m), static_cast<E>(n));
        om.noalias() = am * bm;
    }
    return make_result(std::move(shape), std::move(out), {a, b},
                       [ia, ib, m, k, n](const OpRecord& rec, std::span<const double> g,
                                         std::span<double* const> gin) {
                           for (std::size_t t = 0; t < ia.size(); ++t) {
                               detail::MapConstMat gm(g.data() + t * m * n, static_cast<E>(m), static_cast<E>(n));
                               if (gin[0]) {
                                   detail::MapConstMat bm(rec.in(1).data() + ib[t] * k * n, static_cast<E>(k),
                                                          static_cast<E>(n));
                                   detail::MapMat dam(gin[0] + ia[t] * m * k, static_cast<E>(m), static_cast<E>(k));
                                   dam.noalias() += gm * bm.transpose();
                               }
                               if (gin[1]) {
                                   detail::MapConstMat am(rec.in(0).data() + ia[t] * m * k, static_cast<E>(m),
                                                          static_cast<E>(k));
                                   detail::MapMat dbm(gin[1] + ib[t] * k * n, static_cast<E>(k), static_cast<E>(n));
                                   dbm.noalias() += am.transpose() * gm;
                               }
                           }
                       });
}

namespace detail {

struct ResizeTaps {
    std::vector<std::size_t> i0, i1;
    std::vector<double> frac;
};

// Half-pixel (align_corners = false) sampling positions, clamped to the border.
inline ResizeTaps resize_taps(std::size_t in, std::size_t out) {
    ResizeTaps t;
    t.i0.resize(out);
    t.i1.resize(out);
    t.frac.resize(out);
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
        double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(in - 1));
        const auto lo = static_cast<std::size_t>(std::floor(src));
        t.i0[i] = lo;
        t.i1[i] = std::min(lo + 1, in - 1);
        t.frac[i] = src - static_cast<double>(lo);
    }
    return t;
}

}  // namespace detail

/// Bilinear resampling of an NCHW tensor to (out_h, out_w).
inline Tensor bilinear_resize(const Tensor& x, std::size_t out_h, std::size_t out_w) {
    if (x.dim() != 4) throw ShapeError("bilinear_resize expects NCHW, got " + shape_str(x.shape()));
    if (out_h == 0 || out_w == 0) throw ShapeError("bilinear_resize: output size must be >= 1");
    const std::size_t planes = x.size(0) * x.size(1), h = x.size(2), w = x.size(3);
    const auto ty = detail::resize_taps(h, out_h);
    const auto tx = detail::resize_taps(w, out_w);
    std::vector<double> out(planes * out_h * out_w);
    const auto& xv = x.vec();
    for (std::size_t p = 0; p < planes; ++p) {
        const double* src = xv.data() + p * h * w;
        double* dst = out.data() + p * out_h * out_w;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
            const double fy = ty.frac[oy];
            const double* r0 = src + ty.i0[oy] * w;
            const double* r1 = src + ty.i1[oy] * w;
            for (std::size_t ox = 0; ox < out_w; ++ox) {
                const double fx = tx.frac[ox];
                const double top = r0[tx.i0[ox]] * (1 - fx) + r0[tx.i1[ox]] * fx;
                const double bot = r1[tx.i0[ox]] * (1 - fx) + r1[tx.i1[ox]] * fx;
                dst[oy * out_w + ox] = top * (1 - fy) + bot * fy;
            }
        }
    }
    return make_result({x.size(0), x.size(1), out_h, out_w}, std::move(out), {x},
                       [ty, tx, planes, h, w, out_h, out_w](const OpRecord&, std::span<const double> g,
                                                            std::span<double* const> gin) {
                           if (!gin[0]) return;
                           for (std::size_t p = 0; p < planes; ++p) {
                               double* dst = gin[0] + p * h * w;
                               const double* gp = g.data() + p * out_h * out_w;
                               for (std::size_t oy = 0; oy < out_h; ++oy) {
                                   const double fy = ty.frac[oy];
                                   double* r0 = dst + ty.i0[oy] * w;
                                   double* r1 = dst + ty.i1[oy] * w;
                                   for (std::size_t ox = 0; ox < out_w; ++ox) {
                                       const double fx = tx.frac[ox];
                                       const double gv = gp[oy * out_w + ox];
                                       r0[tx.i0[ox]] += gv * (1 - fy) * (1 - fx);
                                       r0[tx.i1[ox]] += gv * (1 - fy) * fx;
                                       r1[tx.i0[ox]] += gv * fy * (1 - fx);
                                       r1[tx.i1[ox]] += gv * fy * fx;
                                   }
                               }
                           }
                       });
}

/// Mean over non-overlapping factor x factor blocks.
inline Tensor area_downsample(const Tensor& x, std::size_t factor) {
    if (x.dim() != 4) throw ShapeError("area_downsample expects NCHW, got " + shape_str(x.shape()));
    if (factor == 0 || x.size(2) % factor != 0 || x.size(3) % factor != 0) {
        throw ShapeError("area_downsample: " + shape_str(x.shape()) + " not divisible by " +
                         std::to_string(factor));
    }
    if (factor == 1) return x;
    const std::size_t planes = x.size(0) * x.size(1), h = x.size(2), w = x.size(3);
    const std::size_t oh = h / factor, ow = w / factor;
    const double inv = 1.0 / static_cast<double>(factor * factor);
    std::vector<double> out(planes * oh * ow, 0.0);
    const auto& xv = x.vec();
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < w; ++xx)
                out[(p * oh + y / factor) * ow + xx / factor] += xv[(p * h + y) * w + xx] * inv;
    return make_result({x.size(0), x.size(1), oh, ow}, std::move(out), {x},
                       [planes, h, w, oh, ow, factor, inv](const OpRecord&, std::span<const double> g,
                                                           std::span<double* const> gin) {
                           if (!gin[0]) return;
                           for (std::size_t p = 0; p < planes; ++p)
                               for (std::size_t y = 0; y < h; ++y)
                                   for (std::size_t xx = 0; xx < w; ++xx)
                                       gin[0][(p * h + y) * w + xx] += g[(p * oh + y / factor) * ow + xx / factor] * inv;
                       });
}

/// x / (||x|| + eps) along `axis`.
inline Tensor l2_normalize(const Tensor& x, std::size_t axis, double eps = 1e-6) {
    const auto sp = detail::split_axis(x.shape(), axis);
    std::vector<double> out(x.numel());
    const auto& xv = x.vec();
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t i = 0; i < sp.inner; ++i) {
            const std::size_t base = o * sp.extent * sp.inner + i;
            double ss = 0.0;
            for (std::size_t c = 0; c < sp.extent; ++c) ss += xv[base + c * sp.inner] * xv[base + c * sp.inner];
            const double d = std::sqrt(ss) + eps;
            for (std::size_t c = 0; c < sp.extent; ++c) out[base + c * sp.inner] = xv[base + c * sp.inner] / d;
        }
    return make_result(x.shape(), std::move(out), {x},
                       [sp, eps](const OpRecord& rec, std::span<const double> g, std::span<double* const> gin) {
                           if (!gin[0]) return;
                           const auto& xv = rec.in(0);
                           for (std::size_t o = 0; o < sp.outer; ++o)
                               for (std::size_t i = 0; i < sp.inner; ++i) {
                                   const std::size_t base = o * sp.extent * sp.inner + i;
                                   double ss = 0.0, gx = 0.0;
                                   for (std::size_t c = 0; c < sp.extent; ++c) {
                                       const double v = xv[base + c * sp.inner];
                                       ss += v * v;
                                       gx += g[base + c * sp.inner] * v;
                                   }
                                   const double nrm = std::sqrt(ss);
                                   const double d = nrm + eps;
                                   const double coef = nrm > 0 ? gx / (d * d * nrm) : 0.0;
                                   for (std::size_t c = 0; c < sp.extent; ++c) {
                                       const std::size_t k = base + c * sp.inner;
                                       gin[0][k] += g[k] / d - xv[k] * coef;
                                   }
                               }
                       });
}

/// Mirror along the last axis.
inline Tensor flip_horizontal(const Tensor& x) {
    const std::size_t w = x.size(x.dim() - 1);
    const std::size_t rows = x.numel() / w;
    std::vector<double> out(x.numel());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < w; ++i) out[r * w + i] = x[r * w + (w - 1 - i)];
    return make_result(x.shape(), std::move(out), {x},
                       [rows, w](const OpRecord&, std::span<const double> g, std::span<double* const> gin) {
                           if (!gin[0]) return;
                           for (std::size_t r = 0; r < rows; ++r)
                               for (std::size_t i = 0; i < w; ++i) gin[0][r * w + (w - 1 - i)] += g[r * w + i];
                       });
}

}  // namespace evfi
