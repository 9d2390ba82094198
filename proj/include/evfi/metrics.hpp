#pragma once

// Image quality metrics on [0, 1] frames.

#include <cmath>
#include <vector>

#include "evfi/frame.hpp"

namespace evfi {

inline constexpr double kPsnrCap = 100.0;

namespace detail {

inline void require_same_geometry(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(what) + ": geometry mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

}  // namespace detail

/// 10 log10(1 / MSE), capped at 100 dB (also the value for identical frames).
inline double psnr(const Tensor& a, const Tensor& b) {
    detail::require_same_geometry(a, b, "psnr");
    if (a.numel() == 0) throw ShapeError("psnr of empty frames");
    double se = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = a[i] - b[i];
        se += d * d;
    }
    const double mse = se / static_cast<double>(a.numel());
    if (mse == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

inline double psnr(const Frame& a, const Frame& b) { return psnr(a.data, b.data); }

/// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5) evaluated at every
/// position where it fits, C1 = 0.01^2, C2 = 0.03^2, averaged over channels
/// and positions. Accepts (C, H, W) or (N, C, H, W).
inline double ssim(const Tensor& a, const Tensor& b) {
    detail::require_same_geometry(a, b, "ssim");
    if (a.dim() < 2) throw ShapeError("ssim needs at least 2 dimensions");
    constexpr std::size_t k = 11;
    constexpr double sigma = 1.5, c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const std::size_t h = a.size(a.dim() - 2), w = a.size(a.dim() - 1);
    if (h < k || w < k) {
        throw ShapeError("ssim: image " + std::to_string(h) + "x" + std::to_string(w) + " smaller than the " +
                         std::to_string(k) + "x" + std::to_string(k) + " window");
    }
    double g[k], gsum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        const double d = static_cast<double>(i) - 5.0;
        g[i] = std::exp(-d * d / (2 * sigma * sigma));
        gsum += g[i];
    }
    for (double& v : g) v /= gsum;

    // Separable filtering of the five moment planes, valid region only.
    const std::size_t planes = a.numel() / (h * w), oh = h - k + 1, ow = w - k + 1;
    std::vector<double> src(5 * h * w), rows(5 * h * ow);
    double total = 0.0;
    for (std::size_t p = 0; p < planes; ++p) {
        const std::size_t off = p * h * w;
        for (std::size_t i = 0; i < h * w; ++i) {
            const double x = a[off + i], y = b[off + i];
            src[i] = x;
            src[h * w + i] = y;
            src[2 * h * w + i] = x * x;
            src[3 * h * w + i] = y * y;
            src[4 * h * w + i] = x * y;
        }
        for (std::size_t m = 0; m < 5; ++m)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < ow; ++x) {
                    double acc = 0.0;
                    for (std::size_t t = 0; t < k; ++t) acc += g[t] * src[m * h * w + y * w + x + t];
                    rows[m * h * ow + y * ow + x] = acc;
                }
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t x = 0; x < ow; ++x) {
                double mom[5];
                for (std::size_t m = 0; m < 5; ++m) {
                    double acc = 0.0;
                    for (std::size_t t = 0; t < k; ++t) acc += g[t] * rows[m * h * ow + (y + t) * ow + x];
                    mom[m] = acc;
                }
                const double mx = mom[0], my = mom[1];
                const double vx = mom[2] - mx * mx, vy = mom[3] - my * my, cxy = mom[4] - mx * my;
                total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            }
    }
    return total / static_cast<double>(planes * oh * ow);
}

inline double ssim(const Frame& a, const Frame& b) { return ssim(a.data, b.data); }

}  // namespace evfi
