#pragma once

// Image, flow and mask value types plus their on-disk formats
// (binary PPM/PGM, FLO1).

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <string>

#include "evfi/io.hpp"
#include "evfi/nn_ops.hpp"

namespace evfi {

/// C x H x W image with values in [0, 1], C in {1, 3}.
struct Frame {
    Tensor data;

    Frame() = default;
    explicit Frame(Tensor t) : data(std::move(t)) {
        if (data.dim() != 3 || (data.size(0) != 1 && data.size(0) != 3)) {
            throw ShapeError("Frame expects (1|3, H, W), got " + shape_str(data.shape()));
        }
    }
    std::size_t channels() const { return data.size(0); }
    std::size_t height() const { return data.size(1); }
    std::size_t width() const { return data.size(2); }
    /// 1 x C x H x W view for the network ops.
    Tensor batched() const { return reshape(data, {1, channels(), height(), width()}); }
};

/// 2 x H x W displacement field in pixels; channel 0 horizontal, 1 vertical.
struct FlowField {
    Tensor data;

    FlowField() = default;
    explicit FlowField(Tensor t) : data(std::move(t)) {
        if (data.dim() != 3 || data.size(0) != 2) {
            throw ShapeError("FlowField expects (2, H, W), got " + shape_str(data.shape()));
        }
    }
    static FlowField constant(std::size_t h, std::size_t w, double u, double v) {
        std::vector<double> d(2 * h * w);
        std::fill_n(d.begin(), h * w, u);
        std::fill(d.begin() + static_cast<std::ptrdiff_t>(h * w), d.end(), v);
        return FlowField(Tensor({2, h, w}, std::move(d)));
    }
    std::size_t height() const { return data.size(1); }
    std::size_t width() const { return data.size(2); }
    Tensor batched() const { return reshape(data, {1, 2, height(), width()}); }
};

/// 1 x H x W blending weights in [0, 1].
struct ConfidenceMask {
    Tensor data;

    ConfidenceMask() = default;
    explicit ConfidenceMask(Tensor t) : data(std::move(t)) {
        if (data.dim() != 3 || data.size(0) != 1) {
            throw ShapeError("ConfidenceMask expects (1, H, W), got " + shape_str(data.shape()));
        }
        for (double v : data.data()) {
            if (!(v >= 0.0 && v <= 1.0)) throw ShapeError("ConfidenceMask values must lie in [0, 1]");
        }
    }
    Tensor batched() const { return reshape(data, {1, 1, data.size(1), data.size(2)}); }
};

// ---------------------------------------------------------------------------
// PPM (P6) / PGM (P5), maxval 255.

inline std::vector<std::uint8_t> encode_pnm(const Frame& f) {
    const std::size_t c = f.channels(), h = f.height(), w = f.width();
    std::string header = (c == 3 ? "P6\n" : "P5\n") + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.reserve(out.size() + c * h * w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double v = std::clamp(f.data[(ch * h + y) * w + x], 0.0, 1.0);
                out.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
            }
    return out;
}

inline Frame decode_pnm(std::span<const std::uint8_t> bytes, const std::string& source = "image") {
    std::size_t pos = 0;
    auto fail = [&](const std::string& msg) -> void {
        throw DataError(source + ": " + msg + " at byte offset " + std::to_string(pos));
    };
    auto skip_ws = [&]() {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(bytes[pos])) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto read_int = [&]() {
        skip_ws();
        if (pos >= bytes.size() || !std::isdigit(bytes[pos])) fail("expected integer in header");
        std::size_t v = 0;
        while (pos < bytes.size() && std::isdigit(bytes[pos])) v = v * 10 + (bytes[pos++] - '0');
        return v;
    };
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) fail("bad magic (expected P5 or P6)");
    const std::size_t c = bytes[1] == '6' ? 3 : 1;
    pos = 2;
    const std::size_t w = read_int(), h = read_int(), maxval = read_int();
    if (maxval != 255) fail("unsupported maxval " + std::to_string(maxval));
    if (w == 0 || h == 0) fail("empty image");
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) fail("missing header terminator");
    ++pos;
    const std::size_t need = c * h * w;
    if (bytes.size() - pos < need) {
        throw DataError(source + ": truncated pixel data at byte offset " + std::to_string(pos) + ": expected " +
                        std::to_string(need) + " bytes, " + std::to_string(bytes.size() - pos) + " available");
    }
    std::vector<double> d(need);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t ch = 0; ch < c; ++ch) d[(ch * h + y) * w + x] = bytes[pos++] / 255.0;
    return Frame(Tensor({c, h, w}, std::move(d)));
}

inline void write_image(const std::filesystem::path& path, const Frame& f) { write_file(path, encode_pnm(f)); }

inline Frame read_image(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    return decode_pnm(bytes, path.string());
}

// ---------------------------------------------------------------------------
// FLO1: magic, u32 width, u32 height, then (u, v) float32 pairs per pixel.

inline std::vector<std::uint8_t> encode_flo(const FlowField& flow) {
    ByteWriter w;
    const std::size_t h = flow.height(), wd = flow.width();
    w.bytes("FLO1");
    w.u32(static_cast<std::uint32_t>(wd));
    w.u32(static_cast<std::uint32_t>(h));
    for (std::size_t i = 0; i < h * wd; ++i) {
        w.f32(static_cast<float>(flow.data[i]));
        w.f32(static_cast<float>(flow.data[h * wd + i]));
    }
    return w.take();
}

inline FlowField decode_flo(std::span<const std::uint8_t> bytes, const std::string& source = "flow") {
    ByteReader r(bytes, source);
    r.expect_magic("FLO1");
    const std::size_t wd = r.u32("width"), h = r.u32("height");
    r.need(8 * h * wd, "flow payload");
    std::vector<double> d(2 * h * wd);
    for (std::size_t i = 0; i < h * wd; ++i) {
        d[i] = r.f32("u");
        d[h * wd + i] = r.f32("v");
    }
    return FlowField(Tensor({2, h, wd}, std::move(d)));
}

inline void write_flo(const std::filesystem::path& path, const FlowField& f) { write_file(path, encode_flo(f)); }
inline FlowField read_flo(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    return decode_flo(bytes, path.string());
}

}  // namespace evfi
