#include <gtest/gtest.h>

#include <cmath>

#include "evfi/events.hpp"
#include "evfi/grad_check.hpp"

using namespace evfi;

namespace {

EventStream random_stream(Rng& rng, std::size_t w, std::size_t h, std::uint64_t t0, std::uint64_t t1,
                          std::size_t count) {
    std::vector<Event> ev(count);
    for (auto& e : ev) {
        e.t = t0 + rng.below(t1 - t0 + 1);
        e.x = static_cast<std::uint16_t>(rng.below(w));
        e.y = static_cast<std::uint16_t>(rng.below(h));
        e.p = rng.below(2) ? 1 : -1;
    }
    std::stable_sort(ev.begin(), ev.end(), [](const Event& a, const Event& b) { return a.t < b.t; });
    return EventStream(w, h, t0, t1, std::move(ev));
}

Frame gray(std::size_t h, std::size_t w, double v) { return Frame(Tensor::full({1, h, w}, v)); }

}  // namespace

TEST(Voxelize, EmptyStreamIsZero) {
    const auto g = voxelize(EventStream(4, 3, 0, 1000), 0, 1000, 16, 3, 4);
    EXPECT_EQ(g.data.shape(), (Shape{16, 3, 4}));
    for (double v : g.data.data()) EXPECT_EQ(v, 0.0);
}

TEST(Voxelize, MidWindowEventSplitsAcrossBins) {
    EventStream s(4, 4, 0, 1000, {{500, 2, 1, 1}});
    const auto g = voxelize(s, 0, 1000, 16, 4, 4);
    const std::size_t pix = 1 * 4 + 2;
    EXPECT_DOUBLE_EQ(g.data[7 * 16 + pix], 0.5);
    EXPECT_DOUBLE_EQ(g.data[8 * 16 + pix], 0.5);
    double total = 0;
    for (double v : g.data.data()) total += std::abs(v);
    EXPECT_DOUBLE_EQ(total, 1.0);
}

TEST(Voxelize, EventAtWindowStartFillsBinZero) {
    EventStream s(2, 2, 100, 200, {{100, 0, 0, -1}});
    const auto g = voxelize(s, 100, 200, 16, 2, 2);
    EXPECT_DOUBLE_EQ(g.data[0], -1.0);
    double total = 0;
    for (double v : g.data.data()) total += std::abs(v);
    EXPECT_DOUBLE_EQ(total, 1.0);
}

TEST(Voxelize, Errors) {
    EventStream s(2, 2, 0, 1000, {{900, 0, 0, 1}});
    EXPECT_THROW(voxelize(s, 10, 10, 16, 2, 2), std::invalid_argument);
    EXPECT_THROW(voxelize(s, 0, 500, 16, 2, 2), std::invalid_argument);
}

TEST(Voxelize, MassEqualsEventCount) {
    Rng rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const auto s = random_stream(rng, 7, 5, 0, 10000, 1 + rng.below(200));
        // Same-sign deposits so |sum| per pixel-bin equals the deposited mass.
        std::vector<Event> pos = s.events();
        for (auto& e : pos) e.p = 1;
        const auto g = voxelize(EventStream(7, 5, 0, 10000, pos), 0, 10000, 16, 5, 7);
        double total = 0;
        for (double v : g.data.data()) total += std::abs(v);
        EXPECT_NEAR(total, static_cast<double>(s.size()), 1e-9);
    }
}

TEST(ReverseEvents, EmptyAndExample) {
    EXPECT_TRUE(reverse_events(EventStream(3, 3, 0, 400)).empty());
    EventStream s(3, 3, 0, 400, {{100, 1, 1, 1}, {300, 2, 2, -1}});
    const auto r = reverse_events(s);
    ASSERT_EQ(r.size(), 2u);
    EXPECT_EQ(r.events()[0], (Event{100, 2, 2, 1}));
    EXPECT_EQ(r.events()[1], (Event{300, 1, 1, -1}));
    EXPECT_EQ(r.t_start(), 0u);
    EXPECT_EQ(r.t_end(), 400u);
}

TEST(ReverseEvents, Involution) {
    Rng rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        const auto s = random_stream(rng, 9, 4, 1000, 1000 + 1 + rng.below(5000), rng.below(300));
        EXPECT_EQ(reverse_events(reverse_events(s)), s);
    }
}

TEST(ReverseEvents, VoxelSymmetryOverRandomStreams) {
    Rng rng(3);
    const std::size_t bins = 16;
    for (int trial = 0; trial < 100; ++trial) {
        const std::uint64_t t0 = rng.below(100000), t1 = t0 + 1 + rng.below(100000);
        const auto s = random_stream(rng, 6, 5, t0, t1, rng.below(500));
        const auto g = voxelize(s, t0, t1, bins, 5, 6);
        const auto gr = voxelize(reverse_events(s), t0, t1, bins, 5, 6);
        double worst = 0;
        for (std::size_t b = 0; b < bins; ++b)
            for (std::size_t p = 0; p < 30; ++p)
                worst = std::max(worst, std::abs(gr.data[b * 30 + p] + g.data[(bins - 1 - b) * 30 + p]));
        EXPECT_LT(worst, 1e-9);
    }
}

TEST(SplitEvents, Boundaries) {
    EventStream s(4, 4, 0, 400, {{100, 0, 0, 1}, {200, 1, 0, 1}, {300, 2, 0, -1}});
    auto at0 = split_events(s, 0);
    EXPECT_TRUE(at0.left.empty());
    EXPECT_EQ(at0.right.events(), s.events());
    auto mid = split_events(s, 250);
    ASSERT_EQ(mid.left.size(), 2u);
    ASSERT_EQ(mid.right.size(), 1u);
    EXPECT_EQ(mid.left.t_end(), 250u);
    EXPECT_EQ(mid.right.t_start(), 250u);
    EXPECT_EQ(mid.right.events()[0].t, 300u);
    // A tie at the split time goes right.
    auto tie = split_events(s, 200);
    EXPECT_EQ(tie.left.size(), 1u);
    EXPECT_EQ(tie.right.events()[0].t, 200u);
    EXPECT_THROW(split_events(s, 401), std::invalid_argument);
}

TEST(SplitEvents, Partition) {
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        const auto s = random_stream(rng, 5, 5, 0, 1000, rng.below(200));
        const auto parts = split_events(s, rng.below(1001));
        EXPECT_EQ(parts.left.size() + parts.right.size(), s.size());
        for (const auto& e : parts.left.events()) EXPECT_LT(e.t, parts.left.t_end());
        for (const auto& e : parts.right.events()) EXPECT_GE(e.t, parts.right.t_start());
    }
}

TEST(SimulateEvents, IdenticalFramesEmitNothing) {
    const Frame f = gray(4, 4, 0.3);
    EXPECT_TRUE(simulate_events(f, f, 0, 1000, 0.2).empty());
}

TEST(SimulateEvents, ThresholdCrossingCount) {
    // log(b + eps) - log(a + eps) = 2 exactly at one pixel.
    Tensor a = Tensor::full({1, 3, 3}, 0.1);
    Tensor b = Tensor::full({1, 3, 3}, 0.1);
    const double eps = 1e-3, la = 0.1;
    std::vector<double> bv = b.vec();
    bv[4] = (la + eps) * std::exp(2.0) - eps;
    const auto s = simulate_events(Frame(a), Frame(Tensor({1, 3, 3}, bv)), 0, 1000, 0.5);
    ASSERT_EQ(s.size(), 4u);
    for (std::size_t i = 0; i < s.size(); ++i) {
        EXPECT_EQ(s.events()[i].x, 1);
        EXPECT_EQ(s.events()[i].y, 1);
        EXPECT_EQ(s.events()[i].p, 1);
        EXPECT_GT(s.events()[i].t, 0u);
        EXPECT_LE(s.events()[i].t, 1000u);
        if (i) {
            EXPECT_GT(s.events()[i].t, s.events()[i - 1].t);
        }
    }
}

TEST(SimulateEvents, DarkeningGivesNegativePolarity) {
    const auto s = simulate_events(gray(3, 3, 0.8), gray(3, 3, 0.2), 0, 1000, 0.2);
    ASSERT_FALSE(s.empty());
    for (const auto& e : s.events()) EXPECT_EQ(e.p, -1);
    EXPECT_THROW(simulate_events(gray(3, 3, 0.8), gray(3, 4, 0.2), 0, 1000, 0.2), ShapeError);
}

TEST(SimulateEvents, EmitsIffChangeExceedsThreshold) {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const Frame a(random_tensor({3, 5, 5}, rng, 0, 1));
        std::vector<double> bv = a.data.vec();
        const double amp = rng.uniform(0.0, 0.3);
        for (auto& v : bv) v = std::clamp(v + rng.uniform(-amp, amp), 0.0, 1.0);
        const Frame b(Tensor({3, 5, 5}, bv));
        double max_dl = 0;
        for (std::size_t p = 0; p < 25; ++p) {
            double la = 0, lb = 0;
            for (int c = 0; c < 3; ++c) {
                la += a.data[c * 25 + p] / 3;
                lb += b.data[c * 25 + p] / 3;
            }
            max_dl = std::max(max_dl, std::abs(std::log(lb + 1e-3) - std::log(la + 1e-3)));
        }
        const auto s = simulate_events(a, b, 0, 10000, 0.2);
        EXPECT_EQ(s.empty(), max_dl < 0.2) << "max |dL| = " << max_dl;
    }
}

TEST(EventFormats, BinaryRoundTripAndErrors) {
    Rng rng(6);
    const auto s = random_stream(rng, 640, 480, 17, 5000017, 10000);
    const auto bytes = encode_events(s);
    EXPECT_EQ(bytes.size(), 4 + 2 + 2 + 8 + 8 + 8 + 14 * s.size());
    EXPECT_EQ(decode_events(bytes), s);
    EXPECT_EQ(encode_events(decode_events(bytes)), bytes);

    auto bad = bytes;
    bad[0] = 'X';
    EXPECT_THROW(decode_events(bad), DataError);
    const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + 100);
    try {
        decode_events(cut, "cut.evt");
        FAIL();
    } catch (const DataError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("expected 140000 bytes"), std::string::npos) << msg;
        EXPECT_NE(msg.find("68 available"), std::string::npos) << msg;
    }
}

TEST(EventFormats, CsvRoundTrip) {
    Rng rng(7);
    const auto s = random_stream(rng, 32, 16, 0, 99999, 500);
    const auto csv = events_to_csv(s);
    EXPECT_EQ(csv.rfind("t_us,x,y,p\n", 0), 0u);
    EXPECT_EQ(events_from_csv(csv, 32, 16, 0, 99999), s);
    EXPECT_THROW(events_from_csv("t,x,y\n", 32, 16, 0, 1), DataError);
    EXPECT_THROW(events_from_csv("t_us,x,y,p\n5,1,zz,1\n", 32, 16, 0, 10), DataError);
}
