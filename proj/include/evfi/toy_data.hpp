#pragma once

// Procedural toy sequences: band-limited textures under known motion, with
// events simulated between consecutive rendered frames.

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "evfi/events.hpp"
#include "evfi/rng.hpp"

namespace evfi {

enum class ToyKind { translate, rotate, static_scene };

inline std::string to_string(ToyKind k) {
    switch (k) {
        case ToyKind::translate: return "translate";
        case ToyKind::rotate: return "rotate";
        case ToyKind::static_scene: return "static";
    }
    return "?";
}

inline ToyKind parse_toy_kind(const std::string& s) {
    if (s == "translate") return ToyKind::translate;
    if (s == "rotate") return ToyKind::rotate;
    if (s == "static") return ToyKind::static_scene;
    throw std::invalid_argument("unknown toy kind '" + s + "' (expected translate, rotate or static)");
}

struct ToyOptions {
    std::size_t intervals = 2;          // key-frame intervals per sequence
    std::size_t substeps = 8;           // rendered frames per interval
    std::uint64_t interval_us = 8000;   // duration of one interval
    std::size_t channels = 3;
    double speed = 3.0;                 // px per interval (translate)
    bool random_direction = true;       // otherwise motion is along +x
    double angular_speed = 0.05;        // rad per interval (rotate)
    double contrast_threshold = 0.2;
};

/// Frames are rendered every interval_us / substeps; key frames are every
/// `substeps` frames. Motion is constant over the sequence.
struct ToySequence {
    ToyKind kind = ToyKind::static_scene;
    std::vector<Frame> frames;
    std::vector<std::uint64_t> timestamps;
    EventStream events;
    std::size_t substeps = 1;
    double vx = 0.0, vy = 0.0;  // px per interval
    double omega = 0.0, cx = 0.0, cy = 0.0;

    std::size_t height() const { return frames.front().height(); }
    std::size_t width() const { return frames.front().width(); }
    std::size_t intervals() const { return (frames.size() - 1) / substeps; }

    /// Flow from normalized time t within an interval to its start (toward = 0)
    /// or end (toward = 1) key frame, so that I_t(x) = I_k(x + V(x)).
    FlowField flow_to_key(double t, int toward) const {
        const std::size_t h = height(), w = width();
        const double span = toward == 0 ? -t : 1.0 - t;
        std::vector<double> d(2 * h * w, 0.0);
        if (kind == ToyKind::translate) {
            std::fill_n(d.begin(), h * w, vx * span);
            std::fill(d.begin() + static_cast<std::ptrdiff_t>(h * w), d.end(), vy * span);
        } else if (kind == ToyKind::rotate) {
            const double a = omega * span, c = std::cos(a), s = std::sin(a);
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x) {
                    const double rx = static_cast<double>(x) - cx, ry = static_cast<double>(y) - cy;
                    d[y * w + x] = c * rx - s * ry - rx;
                    d[h * w + y * w + x] = s * rx + c * ry - ry;
                }
        }
        return FlowField(Tensor({2, h, w}, std::move(d)));
    }

    /// Events of interval i: everything emitted after key frame i up to key frame i+1.
    EventStream interval_events(std::size_t i) const {
        const std::uint64_t t0 = timestamps.at(i * substeps), t1 = timestamps.at((i + 1) * substeps);
        return events.window(t0, t1, false);
    }
};

namespace detail {

/// Sum of random plane waves with wavelengths of roughly 10-40 px, squashed
/// into [0.1, 0.9] per channel.
struct Texture {
    struct Wave {
        double kx, ky, phase, amp;
    };
    std::vector<Wave> waves;
    std::vector<double> gain, bias;
    double norm = 1.0;

    explicit Texture(Rng& rng, std::size_t channels) {
        const std::size_t n = 6;
        for (std::size_t i = 0; i < n; ++i) {
            const double mag = rng.uniform(0.15, 0.6), dir = rng.uniform(0, 2 * std::numbers::pi);
            waves.push_back({mag * std::cos(dir), mag * std::sin(dir), rng.uniform(0, 2 * std::numbers::pi),
                             rng.uniform(0.5, 1.0)});
        }
        norm = 0.0;
        for (const auto& w : waves) norm += w.amp;
        norm *= 0.5;
        for (std::size_t c = 0; c < channels; ++c) {
            gain.push_back(rng.uniform(2.5, 3.5));
            bias.push_back(rng.uniform(-0.3, 0.3));
        }
    }

    double field(double x, double y) const {
        double v = 0.0;
        for (const auto& w : waves) v += w.amp * std::sin(w.kx * x + w.ky * y + w.phase);
        return v / norm;
    }

    double value(std::size_t c, double u) const { return 0.1 + 0.8 / (1.0 + std::exp(-(gain[c] * u + bias[c]))); }
};

}  // namespace detail

/// Events for a frame sequence against a per-pixel reference log level that
/// moves by C per event, so slow changes accumulate across frames. Frames are
/// reduced to luminance. Events of step j are stamped in (t_j, t_{j+1} - 1],
/// strictly before the frame that reveals them.
inline EventStream simulate_sequence_events(const std::vector<Frame>& frames, const std::vector<std::uint64_t>& timestamps,
                                            double contrast_threshold) {
    if (frames.empty() || frames.size() != timestamps.size()) {
        throw DataError("need one timestamp per frame (" + std::to_string(frames.size()) + " frames, " +
                        std::to_string(timestamps.size()) + " timestamps)");
    }
    const std::size_t h = frames.front().height(), w = frames.front().width();
    for (std::size_t j = 1; j < frames.size(); ++j) {
        if (frames[j].data.shape() != frames[0].data.shape()) {
            throw DataError("frame " + std::to_string(j) + " differs in geometry from frame 0");
        }
        if (timestamps[j] < timestamps[j - 1] + 2) {
            throw DataError("timestamps must increase by at least 2 us (index " + std::to_string(j) + ")");
        }
    }
    auto luminance = [&](const Frame& f) {
        const std::size_t c = f.channels();
        std::vector<double> lum(h * w, 0.0);
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < h * w; ++i) lum[i] += f.data[ch * h * w + i];
        for (double& v : lum) v /= static_cast<double>(c);
        return lum;
    };
    std::vector<EventStream> parts;
    std::vector<double> reference = luminance(frames.front());
    for (std::size_t j = 0; j + 1 < frames.size(); ++j) {
        auto step = simulate_events(Frame(Tensor({1, h, w}, reference)), Frame(Tensor({1, h, w}, luminance(frames[j + 1]))),
                                    timestamps[j], timestamps[j + 1] - 1, contrast_threshold);
        std::vector<int> count(h * w, 0);
        for (const Event& e : step.events()) count[static_cast<std::size_t>(e.y) * w + e.x] += e.p;
        for (std::size_t i = 0; i < h * w; ++i) {
            if (count[i] != 0) reference[i] = std::exp(std::log(reference[i] + 1e-3) + count[i] * contrast_threshold) - 1e-3;
        }
        parts.push_back(std::move(step));
    }
    if (parts.empty()) return EventStream(w, h, timestamps.front(), timestamps.front());
    const auto all = concat_streams(parts);
    return EventStream(w, h, timestamps.front(), timestamps.back(), all.events());
}

/// One sequence; `seed` fixes texture, motion and nothing else.
inline ToySequence make_toy_sequence(ToyKind kind, std::size_t size, std::uint64_t seed, const ToyOptions& opt = {}) {
    if (size < 32) throw std::invalid_argument("toy sequences need size >= 32");
    if (opt.substeps == 0 || opt.intervals == 0 || opt.interval_us % opt.substeps != 0) {
        throw std::invalid_argument("toy options: interval_us must be a positive multiple of substeps");
    }
    Rng rng(seed);
    const detail::Texture tex(rng, opt.channels);
    ToySequence seq;
    seq.kind = kind;
    seq.substeps = opt.substeps;
    seq.cx = 0.5 * static_cast<double>(size - 1);
    seq.cy = seq.cx;
    if (kind == ToyKind::translate) {
        const double dir = opt.random_direction ? rng.uniform(0, 2 * std::numbers::pi) : 0.0;
        seq.vx = opt.speed * std::cos(dir);
        seq.vy = opt.speed * std::sin(dir);
    } else if (kind == ToyKind::rotate) {
        seq.omega = rng.below(2) ? opt.angular_speed : -opt.angular_speed;
    }
    // Random offset so sequences sample different parts of the texture plane.
    const double ox = rng.uniform(-100, 100), oy = rng.uniform(-100, 100);

    const std::size_t n_frames = opt.intervals * opt.substeps + 1;
    const std::uint64_t dt = opt.interval_us / opt.substeps;
    for (std::size_t j = 0; j < n_frames; ++j) {
        const double t = static_cast<double>(j) / static_cast<double>(opt.substeps);
        std::vector<double> d(opt.channels * size * size);
        for (std::size_t y = 0; y < size; ++y)
            for (std::size_t x = 0; x < size; ++x) {
                // Inverse motion: the frame at time t shows the texture at the source point.
                double sx = static_cast<double>(x), sy = static_cast<double>(y);
                if (kind == ToyKind::translate) {
                    sx -= seq.vx * t;
                    sy -= seq.vy * t;
                } else if (kind == ToyKind::rotate) {
                    const double a = -seq.omega * t, c = std::cos(a), s = std::sin(a);
                    const double rx = sx - seq.cx, ry = sy - seq.cy;
                    sx = seq.cx + c * rx - s * ry;
                    sy = seq.cy + s * rx + c * ry;
                }
                const double u = tex.field(sx + ox, sy + oy);
                for (std::size_t c = 0; c < opt.channels; ++c) d[(c * size + y) * size + x] = tex.value(c, u);
            }
        seq.frames.emplace_back(Tensor({opt.channels, size, size}, std::move(d)));
        seq.timestamps.push_back(static_cast<std::uint64_t>(j) * dt);
    }

    seq.events = simulate_sequence_events(seq.frames, seq.timestamps, opt.contrast_threshold);
    return seq;
}

inline std::vector<ToySequence> make_toy_dataset(ToyKind kind, std::size_t n, std::size_t size, std::uint64_t seed,
                                                 const ToyOptions& opt = {}) {
    std::vector<ToySequence> out;
    out.reserve(n);
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) out.push_back(make_toy_sequence(kind, size, rng.next_u64(), opt));
    return out;
}

}  // namespace evfi
