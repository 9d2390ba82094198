#pragma once

// Event streams, voxel grids, reversal/splitting and a per-frame-pair
// contrast-threshold simulator.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "evfi/frame.hpp"

namespace evfi {

struct Event {
    std::uint64_t t = 0;  // microseconds
    std::uint16_t x = 0;
    std::uint16_t y = 0;
    std::int8_t p = 1;  // -1 or +1

    friend bool operator==(const Event&, const Event&) = default;
};

/// Time-sorted events over a closed window [t_start, t_end] on a width x height sensor.
class EventStream {
public:
    EventStream() = default;
    EventStream(std::size_t width, std::size_t height, std::uint64_t t_start, std::uint64_t t_end,
                std::vector<Event> events = {})
        : events_(std::move(events)), width_(width), height_(height), t_start_(t_start), t_end_(t_end) {
        validate();
    }

    const std::vector<Event>& events() const { return events_; }
    std::size_t size() const { return events_.size(); }
    bool empty() const { return events_.empty(); }
    std::size_t width() const { return width_; }
    std::size_t height() const { return height_; }
    std::uint64_t t_start() const { return t_start_; }
    std::uint64_t t_end() const { return t_end_; }

    /// Events with t in [t0, t1) (t1 inclusive when include_end), re-windowed to [t0, t1].
    EventStream window(std::uint64_t t0, std::uint64_t t1, bool include_end = true) const {
        if (t0 > t1) throw std::invalid_argument("EventStream::window: t0 > t1");
        auto lo = std::lower_bound(events_.begin(), events_.end(), t0,
                                   [](const Event& e, std::uint64_t t) { return e.t < t; });
        auto hi = include_end ? std::upper_bound(events_.begin(), events_.end(), t1,
                                                 [](std::uint64_t t, const Event& e) { return t < e.t; })
                              : std::lower_bound(events_.begin(), events_.end(), t1,
                                                 [](const Event& e, std::uint64_t t) { return e.t < t; });
        return EventStream(width_, height_, t0, t1, std::vector<Event>(lo, std::max(lo, hi)));
    }

    friend bool operator==(const EventStream&, const EventStream&) = default;

private:
    void validate() const {
        if (width_ == 0 || height_ == 0) throw std::invalid_argument("EventStream: empty sensor geometry");
        if (t_start_ > t_end_) throw std::invalid_argument("EventStream: t_start > t_end");
        for (std::size_t i = 0; i < events_.size(); ++i) {
            const Event& e = events_[i];
            if (e.x >= width_ || e.y >= height_) {
                throw std::invalid_argument("EventStream: event " + std::to_string(i) + " at (" + std::to_string(e.x) +
                                            "," + std::to_string(e.y) + ") outside " + std::to_string(width_) + "x" +
                                            std::to_string(height_));
            }
            if (e.p != 1 && e.p != -1) throw std::invalid_argument("EventStream: polarity must be -1 or +1");
            if (e.t < t_start_ || e.t > t_end_) {
                throw std::invalid_argument("EventStream: event " + std::to_string(i) + " at t=" + std::to_string(e.t) +
                                            " outside window");
            }
            if (i > 0 && events_[i - 1].t > e.t) throw std::invalid_argument("EventStream: events not sorted by time");
        }
    }

    std::vector<Event> events_;
    std::size_t width_ = 1, height_ = 1;
    std::uint64_t t_start_ = 0, t_end_ = 0;
};

/// bins x H x W temporal-bilinear accumulation of signed polarities.
struct VoxelGrid {
    std::size_t bins = 0, height = 0, width = 0;
    Tensor data;  // (bins, H, W)

    /// 1 x bins x H x W view.
    Tensor batched() const { return reshape(data, {1, bins, height, width}); }
};

/// Normalized time t* = (bins-1)(t-t0)/(t1-t0); each event deposits
/// p * max(0, 1-|b-t*|) into bin b at its pixel.
inline VoxelGrid voxelize(const EventStream& stream, std::uint64_t t0, std::uint64_t t1, std::size_t bins,
                          std::size_t h, std::size_t w) {
    if (t1 <= t0) throw std::invalid_argument("voxelize: window end must be after start");
    if (bins < 2) throw std::invalid_argument("voxelize: need at least 2 bins");
    VoxelGrid g{bins, h, w, {}};
    std::vector<double> d(bins * h * w, 0.0);
    const double scale = static_cast<double>(bins - 1) / static_cast<double>(t1 - t0);
    for (const Event& e : stream.events()) {
        if (e.t < t0 || e.t > t1) {
            throw std::invalid_argument("voxelize: event at t=" + std::to_string(e.t) + " outside window [" +
                                        std::to_string(t0) + ", " + std::to_string(t1) + "]");
        }
        if (e.x >= w || e.y >= h) throw std::invalid_argument("voxelize: event outside grid geometry");
        const double ts = static_cast<double>(e.t - t0) * scale;
        const auto b0 = std::min(static_cast<std::size_t>(std::floor(ts)), bins - 1);
        const double f = ts - static_cast<double>(b0);
        const std::size_t pix = static_cast<std::size_t>(e.y) * w + e.x;
        d[b0 * h * w + pix] += e.p * (1.0 - f);
        if (f > 0.0 && b0 + 1 < bins) d[(b0 + 1) * h * w + pix] += e.p * f;
    }
    g.data = Tensor({bins, h, w}, std::move(d));
    return g;
}

/// Time reflection within the window plus polarity flip:
/// (t, x, y, p) -> (t_start + t_end - t, x, y, -p).
inline EventStream reverse_events(const EventStream& s) {
    std::vector<Event> out;
    out.reserve(s.size());
    const std::uint64_t span = s.t_start() + s.t_end();
    for (auto it = s.events().rbegin(); it != s.events().rend(); ++it) {
        out.push_back({span - it->t, it->x, it->y, static_cast<std::int8_t>(-it->p)});
    }
    return EventStream(s.width(), s.height(), s.t_start(), s.t_end(), std::move(out));
}

struct SplitEvents {
    EventStream left;   // ts < t, window [t_start, t]
    EventStream right;  // ts >= t, window [t, t_end]
};

inline SplitEvents split_events(const EventStream& s, std::uint64_t t) {
    if (t < s.t_start() || t > s.t_end()) {
        throw std::invalid_argument("split_events: t=" + std::to_string(t) + " outside window [" +
                                    std::to_string(s.t_start()) + ", " + std::to_string(s.t_end()) + "]");
    }
    auto mid = std::lower_bound(s.events().begin(), s.events().end(), t,
                                [](const Event& e, std::uint64_t v) { return e.t < v; });
    return {EventStream(s.width(), s.height(), s.t_start(), t, std::vector<Event>(s.events().begin(), mid)),
            EventStream(s.width(), s.height(), t, s.t_end(), std::vector<Event>(mid, s.events().end()))};
}

/// Per-pixel log-luminance difference between two frames, thresholded at C.
/// Emits floor(|dL|/C) events per pixel at linearly spaced times in (t_a, t_b].
inline EventStream simulate_events(const Frame& a, const Frame& b, std::uint64_t t_a, std::uint64_t t_b,
                                   double contrast_threshold) {
    if (a.data.shape() != b.data.shape()) {
        throw ShapeError("simulate_events: frame geometry mismatch " + shape_str(a.data.shape()) + " vs " +
                         shape_str(b.data.shape()));
    }
    if (t_b <= t_a) throw std::invalid_argument("simulate_events: t_b must be after t_a");
    if (!(contrast_threshold > 0)) throw std::invalid_argument("simulate_events: threshold must be positive");
    constexpr double kLogEps = 1e-3;
    // Guards floor() against rounding just below an exact multiple of C.
    constexpr double kCountSlack = 1e-9;
    const std::size_t c = a.channels(), h = a.height(), w = a.width();
    const std::uint64_t dt = t_b - t_a;
    std::vector<Event> events;
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            double la = 0.0, lb = 0.0;
            for (std::size_t ch = 0; ch < c; ++ch) {
                la += a.data[(ch * h + y) * w + x];
                lb += b.data[(ch * h + y) * w + x];
            }
            la /= static_cast<double>(c);
            lb /= static_cast<double>(c);
            const double dl = std::log(lb + kLogEps) - std::log(la + kLogEps);
            const auto n = static_cast<std::uint64_t>(std::floor(std::abs(dl) / contrast_threshold + kCountSlack));
            const std::int8_t p = dl > 0 ? 1 : -1;
            for (std::uint64_t i = 1; i <= n; ++i) {
                events.push_back({t_a + (i * dt) / n, static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y), p});
            }
        }
    std::stable_sort(events.begin(), events.end(), [](const Event& l, const Event& r) { return l.t < r.t; });
    return EventStream(w, h, t_a, t_b, std::move(events));
}

/// Concatenates time-adjacent streams sharing geometry.
inline EventStream concat_streams(const std::vector<EventStream>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_streams: no streams");
    std::vector<Event> all;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i > 0 && parts[i].t_start() < parts[i - 1].t_end()) {
            throw std::invalid_argument("concat_streams: windows overlap or are out of order");
        }
        all.insert(all.end(), parts[i].events().begin(), parts[i].events().end());
    }
    return EventStream(parts[0].width(), parts[0].height(), parts.front().t_start(), parts.back().t_end(),
                       std::move(all));
}

/// The three grids the flow and synthesis networks consume for a target time t
/// strictly inside the stream window: events before t, the same events
/// reversed (motion from t back to the start), and events after t.
struct NetworkEventInputs {
    VoxelGrid g_0t, g_t0, g_t1;
};

inline NetworkEventInputs network_event_inputs(const EventStream& s, std::uint64_t t, std::size_t bins) {
    if (t <= s.t_start() || t >= s.t_end()) {
        throw std::invalid_argument("network_event_inputs: t=" + std::to_string(t) + " must lie strictly inside [" +
                                    std::to_string(s.t_start()) + ", " + std::to_string(s.t_end()) + "]");
    }
    const auto parts = split_events(s, t);
    const std::size_t h = s.height(), w = s.width();
    return {voxelize(parts.left, s.t_start(), t, bins, h, w),
            voxelize(reverse_events(parts.left), s.t_start(), t, bins, h, w),
            voxelize(parts.right, t, s.t_end(), bins, h, w)};
}

// ---------------------------------------------------------------------------
// EVT1 binary and CSV formats.

inline std::vector<std::uint8_t> encode_events(const EventStream& s) {
    ByteWriter w;
    w.bytes("EVT1");
    w.u16(static_cast<std::uint16_t>(s.width()));
    w.u16(static_cast<std::uint16_t>(s.height()));
    w.u64(s.t_start());
    w.u64(s.t_end());
    w.u64(s.size());
    for (const Event& e : s.events()) {
        w.u64(e.t);
        w.u16(e.x);
        w.u16(e.y);
        w.i8(e.p);
        w.i8(0);
    }
    return w.take();
}

inline EventStream decode_events(std::span<const std::uint8_t> bytes, const std::string& source = "events") {
    ByteReader r(bytes, source);
    r.expect_magic("EVT1");
    const std::size_t width = r.u16("width"), height = r.u16("height");
    const std::uint64_t t0 = r.u64("t_start"), t1 = r.u64("t_end");
    const std::uint64_t count = r.u64("count");
    // Saturating size so a corrupt count cannot wrap around.
    r.need(count > std::numeric_limits<std::size_t>::max() / 28 ? std::numeric_limits<std::size_t>::max() / 2 : count * 14, "event records");
    std::vector<Event> ev(count);
    for (auto& e : ev) {
        e.t = r.u64("t");
        e.x = r.u16("x");
        e.y = r.u16("y");
        e.p = r.i8("p");
        r.i8("pad");
    }
    try {
        return EventStream(width, height, t0, t1, std::move(ev));
    } catch (const std::invalid_argument& err) {
        throw DataError(source + ": invalid event stream: " + err.what());
    }
}

/// Voxel dump: "VOX1", u32 bins, u32 height, u32 width, u64 t0, u64 t1, then
/// bins*height*width float64 values in (bin, y, x) order.
inline std::vector<std::uint8_t> encode_voxels(const VoxelGrid& g, std::uint64_t t0, std::uint64_t t1) {
    ByteWriter w;
    w.bytes("VOX1");
    w.u32(static_cast<std::uint32_t>(g.bins));
    w.u32(static_cast<std::uint32_t>(g.height));
    w.u32(static_cast<std::uint32_t>(g.width));
    w.u64(t0);
    w.u64(t1);
    for (double v : g.data.data()) w.f64(v);
    return w.take();
}

inline VoxelGrid decode_voxels(std::span<const std::uint8_t> bytes, const std::string& source = "voxels") {
    ByteReader r(bytes, source);
    r.expect_magic("VOX1");
    VoxelGrid g;
    g.bins = r.u32("bins");
    g.height = r.u32("height");
    g.width = r.u32("width");
    r.u64("t0");
    r.u64("t1");
    const std::size_t n = g.bins * g.height * g.width;
    r.need(n > std::numeric_limits<std::size_t>::max() / 16 ? std::numeric_limits<std::size_t>::max() / 2 : n * 8, "voxel values");
    std::vector<double> d(n);
    for (auto& v : d) v = r.f64("value");
    if (r.remaining() != 0) r.fail("trailing bytes after voxel values", r.offset());
    g.data = Tensor({g.bins, g.height, g.width}, std::move(d));
    return g;
}

inline void write_events(const std::filesystem::path& path, const EventStream& s) {
    write_file(path, encode_events(s));
}

inline EventStream read_events(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    return decode_events(bytes, path.string());
}

inline std::string events_to_csv(const EventStream& s) {
    std::ostringstream os;
    os << "t_us,x,y,p\n";
    for (const Event& e : s.events()) os << e.t << ',' << e.x << ',' << e.y << ',' << int(e.p) << '\n';
    return os.str();
}

/// Parses `t_us,x,y,p` lines; geometry and window come from the caller.
inline EventStream events_from_csv(const std::string& text, std::size_t width, std::size_t height,
                                   std::uint64_t t_start, std::uint64_t t_end, const std::string& source = "csv") {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line) || line != "t_us,x,y,p") throw DataError(source + ": missing header t_us,x,y,p");
    std::vector<Event> ev;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        long long vals[4];
        const char* p = line.data();
        const char* end = line.data() + line.size();
        for (int k = 0; k < 4; ++k) {
            auto [next, ec] = std::from_chars(p, end, vals[k]);
            if (ec != std::errc() || (k < 3 && (next == end || *next != ','))) {
                throw DataError(source + ": malformed event on line " + std::to_string(lineno));
            }
            p = k < 3 ? next + 1 : next;
        }
        if (vals[0] < 0 || vals[1] < 0 || vals[2] < 0 || vals[1] > 65535 || vals[2] > 65535) {
            throw DataError(source + ": out-of-range field on line " + std::to_string(lineno));
        }
        ev.push_back({static_cast<std::uint64_t>(vals[0]), static_cast<std::uint16_t>(vals[1]),
                      static_cast<std::uint16_t>(vals[2]), static_cast<std::int8_t>(vals[3])});
    }
    try {
        return EventStream(width, height, t_start, t_end, std::move(ev));
    } catch (const std::invalid_argument& err) {
        throw DataError(source + ": invalid event stream: " + err.what());
    }
}

}  // namespace evfi
