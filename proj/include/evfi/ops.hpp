#pragma once

// Elementwise, reduction and layout primitives.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "evfi/tensor.hpp"

namespace evfi {

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

// Pointwise map with derivative df(x, y) where y = f(x).
template <class F, class DF>
Tensor unary(const Tensor& x, F f, DF df) {
    std::vector<double> out(x.numel());
    const auto& xv = x.vec();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
    return make_result(x.shape(), std::move(out), {x},
                       [df](const OpRecord& rec, std::span<const double> g, std::span<double* const> gin) {
                           if (!gin[0]) return;
                           const auto& xs = rec.in(0);
                           const auto& ys = rec.out();
                           for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] * df(xs[i], ys[i]);
                       });
}

inline void accumulate(double* dst, std::span<const double> g, double s = 1.0) {
    if (!dst) return;
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += s * g[i];
}

// (outer, extent, inner) decomposition of a shape around `axis`.
struct AxisSplit {
    std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis) {
    if (axis >= shape.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape));
    }
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    s.extent = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return make_result(a.shape(), std::move(out), {a, b},
                       [](const OpRecord&, std::span<const double> g, std::span<double* const> gin) {
                           detail::accumulate(gin[0], g);
                           detail::accumulate(gin[1], g);
                       });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    return make_result(a.shape(), std::move(out), {a, b},
                       [](const OpRecord&, std::span<const double> g, std::span<double* const> gin) {
                           detail::accumulate(gin[0], g);
                           detail::accumulate(gin[1], g, -1.0);
                       });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return make_result(a.shape(), std::move(out), {a, b},
                       [](const OpRecord& rec, std::span<const double> g, std::span<double* const> gin) {
                           const auto& av = rec.in(0);
                           const auto& bv = rec.in(1);
                           if (gin[0])
                               for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] * bv[i];
                           if (gin[1])
                               for (std::size_t i = 0; i < g.size(); ++i) gin[1][i] += g[i] * av[i];
                       });
}

inline Tensor scale(const Tensor& x, double s) {
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * s;
    return make_result(x.shape(), std::move(out), {x},
                       [s](const OpRecord&, std::span<const double> g, std::span<double* const> gin) {
                           detail::accumulate(gin[0], g, s);
                       });
}

inline Tensor add_scalar(const Tensor& x, double s) {
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + s;
    return make_result(x.shape(), std::move(out), {x},
                       [](const OpRecord&, std::span<const double> g, std::span<double* const> gin) {
                           detail::accumulate(gin[0], g);
                       });
}

inline Tensor neg(const Tensor& x) { return scale(x, -1.0); }

inline Tensor square(const Tensor& x) {
    return detail::unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

inline Tensor exp(const Tensor& x) {
    return detail::unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& x) {
    return detail::unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Tensor sigmoid(const Tensor& x) {
    return detail::unary(
        x,
        [](double v) {
            if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
            const double e = std::exp(v);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

inline Tensor leaky_relu(const Tensor& x, double slope = 0.1) {
    return detail::unary(
        x, [slope](double v) { return v >= 0 ? v : slope * v; },
        [slope](double v, double) { return v >= 0 ? 1.0 : slope; });
}

/// Clamp to [lo, hi]; zero gradient outside the interval.
inline Tensor clamp(const Tensor& x, double lo, double hi) {
    return detail::unary(
        x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
        [lo, hi](double v, double) { return v >= lo && v <= hi ? 1.0 : 0.0; });
}

/// log(x / (1 - x)).
inline Tensor logit(const Tensor& x) {
    return detail::unary(
        x, [](double v) { return std::log(v / (1.0 - v)); }, [](double v, double) { return 1.0 / (v * (1.0 - v)); });
}

inline Tensor abs(const Tensor& x) {
    return detail::unary(
        x, [](double v) { return std::abs(v); },
        [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

inline Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    return make_result({1}, {s}, {x},
                       [](const OpRecord& rec, std::span<const double> g, std::span<double* const> gin) {
                           if (!gin[0]) return;
                           const std::size_t n = rec.in(0).size();
                           for (std::size_t i = 0; i < n; ++i) gin[0][i] += g[0];
                       });
}

inline Tensor mean(const Tensor& x) {
    if (x.numel() == 0) throw ShapeError("mean of an empty tensor");
    return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

/// Same data, new shape.
inline Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
    }
    return make_result(std::move(shape), x.vec(), {x},
                       [](const OpRecord&, std::span<const double> g, std::span<double* const> gin) {
                           detail::accumulate(gin[0], g);
                       });
}

/// Swaps the last two axes.
inline Tensor transpose_last2(const Tensor& x) {
    if (x.dim() < 2) throw ShapeError("transpose_last2 needs rank >= 2");
    Shape shape = x.shape();
    const std::size_t r = shape[shape.size() - 2], c = shape[shape.size() - 1];
    const std::size_t batch = x.numel() / (r * c);
    std::swap(shape[shape.size() - 2], shape[shape.size() - 1]);
    std::vector<double> out(x.numel());
    const auto& xv = x.vec();
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) out[b * r * c + j * r + i] = xv[b * r * c + i * c + j];
    return make_result(std::move(shape), std::move(out), {x},
                       [batch, r, c](const OpRecord&, std::span<const double> g, std::span<double* const> gin) {
                           if (!gin[0]) return;
                           for (std::size_t b = 0; b < batch; ++b)
                               for (std::size_t i = 0; i < r; ++i)
                                   for (std::size_t j = 0; j < c; ++j)
                                       gin[0][b * r * c + i * c + j] += g[b * r * c + j * r + i];
                       });
}

/// Concatenation along `axis`; all other extents must agree.
inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis = 1) {
    if (parts.empty()) throw ShapeError("concat of zero tensors");
    Shape shape = parts[0].shape();
    if (axis >= shape.size()) throw ShapeError("concat axis out of range");
    std::size_t total = 0;
    for (const auto& p : parts) {
        Shape a = p.shape(), b = parts[0].shape();
        if (a.size() != b.size()) throw ShapeError("concat: rank mismatch");
        a[axis] = b[axis] = 0;
        if (a != b) {
            throw ShapeError("concat: incompatible shapes " + shape_str(p.shape()) + " and " +
                             shape_str(parts[0].shape()) + " on axis " + std::to_string(axis));
        }
        total += p.shape()[axis];
    }
    shape[axis] = total;
    const auto split = detail::split_axis(shape, axis);
    std::vector<double> out(shape_numel(shape));
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const std::size_t ext = p.shape()[axis];
        const auto& pv = p.vec();
        for (std::size_t o = 0; o < split.outer; ++o)
            std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * ext * split.inner), ext * split.inner,
                        out.begin() + static_cast<std::ptrdiff_t>((o * total + off) * split.inner));
        off += ext;
    }
    return make_result(std::move(shape), std::move(out), parts,
                       [split, offsets, total](const OpRecord& rec, std::span<const double> g,
                                               std::span<double* const> gin) {
                           for (std::size_t k = 0; k < gin.size(); ++k) {
                               if (!gin[k]) continue;
                               const std::size_t ext = rec.in(k).size() / (split.outer * split.inner);
                               for (std::size_t o = 0; o < split.outer; ++o)
                                   for (std::size_t i = 0; i < ext * split.inner; ++i)
                                       gin[k][o * ext * split.inner + i] +=
                                           g[(o * total + offsets[k]) * split.inner + i];
                           }
                       });
}

/// Sub-range [begin, end) along `axis`.
inline Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
    if (axis >= x.dim() || begin > end || end > x.size(axis)) {
        throw ShapeError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                         std::to_string(axis) + " of " + shape_str(x.shape()));
    }
    const auto split = detail::split_axis(x.shape(), axis);
    Shape shape = x.shape();
    shape[axis] = end - begin;
    const std::size_t ext = end - begin;
    std::vector<double> out(shape_numel(shape));
    const auto& xv = x.vec();
    for (std::size_t o = 0; o < split.outer; ++o)
        std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>((o * split.extent + begin) * split.inner),
                    ext * split.inner, out.begin() + static_cast<std::ptrdiff_t>(o * ext * split.inner));
    return make_result(std::move(shape), std::move(out), {x},
                       [split, begin, ext](const OpRecord&, std::span<const double> g,
                                           std::span<double* const> gin) {
                           if (!gin[0]) return;
                           for (std::size_t o = 0; o < split.outer; ++o)
                               for (std::size_t i = 0; i < ext * split.inner; ++i)
                                   gin[0][(o * split.extent + begin) * split.inner + i] +=
                                       g[o * ext * split.inner + i];
                       });
}

/// Repeats size-1 axes of `x` to reach `shape` (backward sums them).
inline Tensor expand(const Tensor& x, const Shape& shape) {
    if (x.dim() != shape.size()) throw ShapeError("expand: rank mismatch");
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (x.size(i) != shape[i] && x.size(i) != 1) {
            throw ShapeError("expand " + shape_str(x.shape()) + " -> " + shape_str(shape));
        }
    }
    const std::size_t rank = shape.size();
    std::vector<std::size_t> src_stride(rank), dst_stride(rank);
    std::size_t s = 1, d = 1;
    for (std::size_t i = rank; i-- > 0;) {
        src_stride[i] = x.size(i) == 1 ? 0 : s;
        s *= x.size(i);
        dst_stride[i] = d;
        d *= shape[i];
    }
    const std::size_t n = shape_numel(shape);
    std::vector<std::size_t> index(n);
    for (std::size_t flat = 0; flat < n; ++flat) {
        std::size_t rem = flat, src = 0;
        for (std::size_t i = 0; i < rank; ++i) {
            src += (rem / dst_stride[i]) * src_stride[i];
            rem %= dst_stride[i];
        }
        index[flat] = src;
    }
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = x[index[i]];
    return make_result(shape, std::move(out), {x},
                       [index = std::move(index)](const OpRecord&, std::span<const double> g,
                                                  std::span<double* const> gin) {
                           if (!gin[0]) return;
                           for (std::size_t i = 0; i < g.size(); ++i) gin[0][index[i]] += g[i];
                       });
}

/// Non-differentiable max |x|.
inline double max_abs(const Tensor& x) {
    double m = 0.0;
    for (double v : x.data()) m = std::max(m, std::abs(v));
    return m;
}

inline bool all_finite(const Tensor& x) {
    return std::all_of(x.data().begin(), x.data().end(), [](double v) { return std::isfinite(v); });
}

}  // namespace evfi
