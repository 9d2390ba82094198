#include <gtest/gtest.h>

#include <cmath>

#include "evfi/flow_ops.hpp"
#include "evfi/grad_check.hpp"

using namespace evfi;

namespace {

Tensor weighted_sum(const Tensor& x, std::uint64_t seed) {
    Rng rng(seed);
    return sum(mul(x, random_tensor(x.shape(), rng)));
}

// Flow whose sample points stay >= 1 px inside the image and off integer grid lines.
Tensor interior_flow(Rng& rng, std::size_t n, std::size_t h, std::size_t w, double mag) {
    std::vector<double> v(n * 2 * h * w);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t k = 0; k < 2; ++k)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x) {
                    const double pos = k == 0 ? double(x) : double(y);
                    const double ext = k == 0 ? double(w) : double(h);
                    double target = std::clamp(pos + rng.uniform(-mag, mag), 1.0, ext - 2.0);
                    target = std::floor(target) + 0.2 + 0.6 * rng.uniform();
                    if (target > ext - 2.0) target -= 1.0;
                    v[((b * 2 + k) * h + y) * w + x] = target - pos;
                }
    return Tensor({n, 2, h, w}, std::move(v));
}

}  // namespace

TEST(BackwardWarp, ZeroFlowIsIdentity) {
    Rng rng(1);
    Tensor src = random_tensor({3, 5, 6}, rng);
    auto r = backward_warp(src, Tensor::zeros({2, 5, 6}));
    EXPECT_EQ(r.warped.vec(), src.vec());
    for (double v : r.validity.data()) EXPECT_EQ(v, 1.0);
    EXPECT_EQ(r.validity.shape(), (Shape{1, 5, 6}));
}

TEST(BackwardWarp, ConstantShiftOnRamp) {
    const std::size_t h = 3, w = 5;
    std::vector<double> ramp(h * w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) ramp[y * w + x] = double(x) + 10.0 * double(y);
    auto r = backward_warp(Tensor({1, h, w}, ramp), FlowField::constant(h, w, 1.0, 0.0).data);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            if (x + 1 < w) {
                EXPECT_DOUBLE_EQ(r.warped[y * w + x], ramp[y * w + x + 1]);
                EXPECT_EQ(r.validity[y * w + x], 1.0);
            } else {
                EXPECT_EQ(r.validity[y * w + x], 0.0);
                EXPECT_EQ(r.warped[y * w + x], 0.0);
            }
        }
    EXPECT_THROW(backward_warp(Tensor::zeros({1, 3, 5}), Tensor::zeros({2, 3, 4})), ShapeError);
}

TEST(BackwardWarp, LinearInSource) {
    Rng rng(2);
    Tensor s1 = random_tensor({1, 2, 6, 7}, rng), s2 = random_tensor({1, 2, 6, 7}, rng);
    Tensor flow = random_tensor({1, 2, 6, 7}, rng, -2.5, 2.5);
    const double a = 0.7, b = -1.3;
    auto lhs = backward_warp(add(scale(s1, a), scale(s2, b)), flow).warped;
    auto w1 = backward_warp(s1, flow).warped, w2 = backward_warp(s2, flow).warped;
    for (std::size_t i = 0; i < lhs.numel(); ++i) EXPECT_NEAR(lhs[i], a * w1[i] + b * w2[i], 1e-9);
}

TEST(BackwardWarp, GradientsMatchFiniteDifferences) {
    Rng rng(3);
    Tensor src = random_tensor({2, 3, 6, 6}, rng);
    Tensor flow = interior_flow(rng, 2, 6, 6, 1.5);
    auto r = grad_check([](const std::vector<Tensor>& in) { return weighted_sum(backward_warp(in[0], in[1]).warped, 1); },
                        {src, flow});
    EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(RescaleFlow, IdentityConstantAndRoundTrip) {
    const auto f = FlowField::constant(8, 8, 1.0, 0.0);
    EXPECT_EQ(rescale_flow(f, 1.0).data.vec(), f.data.vec());
    const auto up = rescale_flow(f, 2.0);
    EXPECT_EQ(up.data.shape(), (Shape{2, 16, 16}));
    for (std::size_t i = 0; i < 256; ++i) {
        EXPECT_DOUBLE_EQ(up.data[i], 2.0);
        EXPECT_DOUBLE_EQ(up.data[256 + i], 0.0);
    }
    const auto back = rescale_flow(rescale_flow(FlowField::constant(8, 8, -0.75, 1.25), 0.5), 2.0);
    for (std::size_t i = 0; i < 64; ++i) {
        EXPECT_DOUBLE_EQ(back.data[i], -0.75);
        EXPECT_DOUBLE_EQ(back.data[64 + i], 1.25);
    }
    EXPECT_THROW(rescale_flow(f, 0.0), std::invalid_argument);
    EXPECT_THROW(rescale_flow(f, -2.0), std::invalid_argument);
}

TEST(BlendFlows, EndpointsAndMidpoint) {
    Rng rng(4);
    FlowField vi(random_tensor({2, 4, 5}, rng, -3, 3)), ve(random_tensor({2, 4, 5}, rng, -3, 3));
    EXPECT_EQ(blend_flows(vi, ve, ConfidenceMask(Tensor::ones({1, 4, 5}))).data.vec(), vi.data.vec());
    EXPECT_EQ(blend_flows(vi, ve, ConfidenceMask(Tensor::zeros({1, 4, 5}))).data.vec(), ve.data.vec());
    const auto mid = blend_flows(FlowField::constant(4, 4, 2, 0), FlowField::constant(4, 4, 0, 2),
                                 ConfidenceMask(Tensor::full({1, 4, 4}, 0.5)));
    for (std::size_t i = 0; i < 32; ++i) EXPECT_DOUBLE_EQ(mid.data[i], 1.0);
    EXPECT_THROW(blend_flows(vi.data, ve.data, Tensor::zeros({1, 4, 4})), ShapeError);
    EXPECT_THROW(ConfidenceMask(Tensor::full({1, 2, 2}, 1.5)), ShapeError);
}

TEST(BlendFlows, ConvexCombinationProperty) {
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        Tensor vi = random_tensor({2, 3, 3}, rng, -10, 10), ve = random_tensor({2, 3, 3}, rng, -10, 10);
        Tensor m = random_tensor({1, 3, 3}, rng, 0, 1);
        Tensor out = blend_flows(vi, ve, m);
        for (std::size_t i = 0; i < out.numel(); ++i) {
            EXPECT_GE(out[i], std::min(vi[i], ve[i]));
            EXPECT_LE(out[i], std::max(vi[i], ve[i]));
        }
    }
}

TEST(LocalCorrelation, SelfSimilarityAndShape) {
    Rng rng(6);
    Tensor a = random_tensor({4, 5, 5}, rng, 0.5, 1.5);
    Tensor c = local_correlation(a, a, 0, true);
    EXPECT_EQ(c.shape(), (Shape{1, 5, 5}));
    for (double v : c.data()) EXPECT_NEAR(v, 1.0, 1e-5);
    EXPECT_EQ(local_correlation(a, a, 3, true).shape(), (Shape{49, 5, 5}));
    EXPECT_THROW(local_correlation(a, random_tensor({4, 5, 4}, rng), 1, false), ShapeError);
}

TEST(LocalCorrelation, MatchesTripleLoopOracle) {
    Rng rng(7);
    const std::size_t c = 3, h = 4, w = 4, r = 1;
    Tensor a = random_tensor({c, h, w}, rng), b = random_tensor({c, h, w}, rng);
    Tensor out = local_correlation(a, b, r, false);
    for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
            for (int y = 0; y < int(h); ++y)
                for (int x = 0; x < int(w); ++x) {
                    double ref = 0;
                    if (y + dy >= 0 && y + dy < int(h) && x + dx >= 0 && x + dx < int(w))
                        for (std::size_t ch = 0; ch < c; ++ch)
                            ref += a[(ch * h + y) * w + x] * b[(ch * h + y + dy) * w + x + dx];
                    const std::size_t d = std::size_t((dy + 1) * 3 + (dx + 1));
                    EXPECT_NEAR(out[(d * h + y) * w + x], ref, 1e-9);
                }
    (void)r;
}

TEST(LocalCorrelation, NormalizedValuesBounded) {
    Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor out = local_correlation(random_tensor({1, 5, 6, 6}, rng, -3, 3), random_tensor({1, 5, 6, 6}, rng, -3, 3),
                                       2, true);
        for (double v : out.data()) {
            EXPECT_GE(v, -1 - 1e-6);
            EXPECT_LE(v, 1 + 1e-6);
        }
    }
}

TEST(Charbonnier, ClosedFormsSymmetryAndSmoothOrigin) {
    EXPECT_NEAR(charbonnier(Tensor::zeros({4})).item(), 1e-3, 1e-15);
    EXPECT_NEAR(charbonnier(Tensor({1}, {3.0})).item(), std::sqrt(9.0 + 1e-6), 1e-15);
    EXPECT_NEAR(charbonnier(Tensor({1}, {3.0})).item(), 3.00000017, 1e-8);
    Rng rng(9);
    Tensor x = random_tensor({20}, rng, -4, 4);
    EXPECT_DOUBLE_EQ(charbonnier(x).item(), charbonnier(neg(x)).item());
    Tensor zero = Tensor::zeros({3});
    auto r = grad_check([](const std::vector<Tensor>& in) { return charbonnier(in[0]); }, {zero});
    EXPECT_LT(r.max_rel_error, 1e-4);
    Tape tape;
    TapeScope scope(tape);
    Tensor z({3}, {0, 0, 0}, true);
    auto g = backward(charbonnier(z));
    for (double v : g.at(z).data()) EXPECT_EQ(v, 0.0);
}

TEST(EdgeAwareSmoothness, ConstantFlowIsZero) {
    Rng rng(10);
    EXPECT_EQ(edge_aware_smoothness(FlowField::constant(6, 6, 1.5, -2).data, random_tensor({3, 6, 6}, rng, 0, 1)).item(),
              0.0);
}

TEST(EdgeAwareSmoothness, RampMatchesScalarOracle) {
    const std::size_t h = 5, w = 6;
    const double slope = 0.3;
    std::vector<double> v(2 * h * w);
    for (std::size_t k = 0; k < 2; ++k)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) v[(k * h + y) * w + x] = slope * double(x + y);
    Tensor flow({2, h, w}, v);
    const double loss = edge_aware_smoothness(flow, Tensor::full({3, h, w}, 0.5)).item();
    // Oracle: forward differences everywhere equal the slope; weights are exp(0)=1.
    double sx = 0, sy = 0;
    std::size_t nx = 0, ny = 0;
    for (std::size_t k = 0; k < 2; ++k)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                if (x + 1 < w) sx += std::abs(v[(k * h + y) * w + x + 1] - v[(k * h + y) * w + x]), ++nx;
                if (y + 1 < h) sy += std::abs(v[(k * h + y + 1) * w + x] - v[(k * h + y) * w + x]), ++ny;
            }
    EXPECT_NEAR(loss, sx / double(nx) + sy / double(ny), 1e-12);
    EXPECT_NEAR(loss, 2 * slope, 1e-12);
}

TEST(EdgeAwareSmoothness, EdgesReduceThePenalty) {
    const std::size_t h = 6, w = 8;
    std::vector<double> fv(2 * h * w, 0.0), iv(h * w, 0.0);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            fv[y * w + x] = x < 4 ? 0.0 : 2.0;
            iv[y * w + x] = x < 4 ? 0.1 : 0.9;
        }
    Tensor flow({2, h, w}, fv);
    const double flat = edge_aware_smoothness(flow, Tensor::full({1, h, w}, 0.5)).item();
    const double edged = edge_aware_smoothness(flow, Tensor({1, h, w}, iv)).item();
    EXPECT_LT(edged, flat);
    EXPECT_THROW(edge_aware_smoothness(flow, Tensor::zeros({1, h, w + 1})), ShapeError);
}

TEST(FlowLoss, StaticSceneHitsCharbonnierFloor) {
    Rng rng(11);
    Tensor img = random_tensor({1, 3, 8, 8}, rng, 0, 1);
    Tensor zero = Tensor::zeros({1, 2, 8, 8});
    EXPECT_NEAR(flow_loss(img, img, img, zero, zero).item(), 2 * 1.0 * 1e-3, 1e-15);
}

TEST(FlowLoss, TrueFlowsBeatZeroFlows) {
    // Horizontally translating sinusoid: I(x, t) = f(x - 3t).
    const std::size_t n = 16;
    auto render = [&](double shift) {
        std::vector<double> v(n * n);
        for (std::size_t y = 0; y < n; ++y)
            for (std::size_t x = 0; x < n; ++x)
                v[y * n + x] = 0.5 + 0.3 * std::sin(0.7 * (double(x) - shift)) + 0.1 * std::cos(0.4 * double(y));
        return Tensor({1, 1, n, n}, v);
    };
    Tensor i0 = render(0.0), i1 = render(3.0), gt = render(1.5);
    auto photo = [&](const Tensor& v0, const Tensor& v1) {
        return charbonnier(sub(gt, backward_warp(i0, v0).warped)).item() +
               charbonnier(sub(gt, backward_warp(i1, v1).warped)).item();
    };
    Tensor true0 = reshape(FlowField::constant(n, n, -1.5, 0).data, {1, 2, n, n});
    Tensor true1 = reshape(FlowField::constant(n, n, 1.5, 0).data, {1, 2, n, n});
    Tensor zero = Tensor::zeros({1, 2, n, n});
    EXPECT_LT(photo(true0, true1), photo(zero, zero));
}

TEST(FlowLoss, GradientsMatchFiniteDifferences) {
    Rng rng(12);
    Tensor gt = random_tensor({1, 3, 8, 8}, rng, 0, 1);
    Tensor i0 = random_tensor({1, 3, 8, 8}, rng, 0, 1);
    Tensor i1 = random_tensor({1, 3, 8, 8}, rng, 0, 1);
    Tensor v0 = interior_flow(rng, 1, 8, 8, 1.5), v1 = interior_flow(rng, 1, 8, 8, 1.5);
    auto r = grad_check([&](const std::vector<Tensor>& in) { return flow_loss(gt, i0, i1, in[0], in[1]); }, {v0, v1});
    EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(FlowOpsGradients, CorrelationCharbonnierSmoothness) {
    Rng rng(13);
    auto r1 = grad_check([](const std::vector<Tensor>& in) {
        return weighted_sum(local_correlation(in[0], in[1], 2, true), 1);
    }, {random_tensor({1, 4, 5, 5}, rng), random_tensor({1, 4, 5, 5}, rng)});
    EXPECT_LT(r1.max_rel_error, 1e-4);
    auto r2 = grad_check([](const std::vector<Tensor>& in) { return charbonnier(in[0]); },
                         {random_tensor({2, 3, 4}, rng)});
    EXPECT_LT(r2.max_rel_error, 1e-4);
    Tensor img = random_tensor({1, 3, 6, 6}, rng, 0, 1);
    auto r3 = grad_check([&](const std::vector<Tensor>& in) { return edge_aware_smoothness(in[0], img); },
                         {random_tensor({1, 2, 6, 6}, rng, -2, 2)});
    EXPECT_LT(r3.max_rel_error, 1e-4);
    auto r4 = grad_check([](const std::vector<Tensor>& in) {
        return weighted_sum(blend_flows(in[0], in[1], in[2]), 2);
    }, {random_tensor({1, 2, 4, 4}, rng), random_tensor({1, 2, 4, 4}, rng), random_tensor({1, 1, 4, 4}, rng, 0, 1)});
    EXPECT_LT(r4.max_rel_error, 1e-4);
}

TEST(FlowFormats, FloRoundTripAndTruncation) {
    Rng rng(14);
    std::vector<double> v(2 * 5 * 7);
    for (auto& x : v) x = static_cast<float>(rng.uniform(-20, 20));
    FlowField f(Tensor({2, 5, 7}, v));
    const auto bytes = encode_flo(f);
    EXPECT_EQ(bytes.size(), 12u + 8 * 35);
    EXPECT_EQ(decode_flo(bytes).data.vec(), v);
    EXPECT_EQ(encode_flo(decode_flo(bytes)), bytes);
    EXPECT_THROW(decode_flo(std::vector<std::uint8_t>(bytes.begin(), bytes.end() - 3)), DataError);
}

TEST(ImageFormats, PnmLossless) {
    Rng rng(15);
    for (std::size_t c : {1u, 3u}) {
        std::vector<double> v(c * 6 * 9);
        for (auto& x : v) x = double(rng.below(256)) / 255.0;
        Frame f(Tensor({c, 6, 9}, v));
        const auto bytes = encode_pnm(f);
        const Frame back = decode_pnm(bytes);
        EXPECT_EQ(back.data.vec(), v);
        EXPECT_EQ(encode_pnm(back), bytes);
    }
    const std::string bad = "P3\n1 1\n255\n";
    EXPECT_THROW(decode_pnm({reinterpret_cast<const std::uint8_t*>(bad.data()), bad.size()}), DataError);
}

namespace {

// Mirror of a N x 2 x H x W flow: flip both components and negate u.
Tensor mirror_flow(const Tensor& v) {
    Tensor f = flip_horizontal(v);
    const std::size_t plane = v.size(2) * v.size(3);
    const auto d = f.mutable_data();
    for (std::size_t n = 0; n < v.size(0); ++n)
        for (std::size_t i = 0; i < plane; ++i) d[n * 2 * plane + i] = -d[n * 2 * plane + i];
    return f;
}

double max_diff(const Tensor& a, const Tensor& b) { return max_abs(sub(a, b)); }

}  // namespace

TEST(FlowOps, HorizontalMirrorEquivariance) {
    Rng rng(31);
    const Tensor src = random_tensor({1, 3, 7, 9}, rng), flow = random_tensor({1, 2, 7, 9}, rng, -3, 3);
    EXPECT_LT(max_diff(flip_horizontal(backward_warp(src, flow).warped),
                       backward_warp(flip_horizontal(src), mirror_flow(flow)).warped),
              1e-12);

    const Tensor x = random_tensor({1, 2, 5, 6}, rng);
    EXPECT_LT(max_diff(flip_horizontal(bilinear_resize(x, 10, 12)), bilinear_resize(flip_horizontal(x), 10, 12)), 1e-12);
    EXPECT_LT(max_diff(flip_horizontal(bilinear_resize(x, 3, 4)), bilinear_resize(flip_horizontal(x), 3, 4)), 1e-12);

    const Tensor va = random_tensor({1, 2, 4, 5}, rng), vb = random_tensor({1, 2, 4, 5}, rng),
                 m = random_tensor({1, 1, 4, 5}, rng, 0, 1);
    EXPECT_EQ(mirror_flow(blend_flows(va, vb, m)).vec(),
              blend_flows(mirror_flow(va), mirror_flow(vb), flip_horizontal(m)).vec());

    // Correlation: displacement channel (dx, dy) maps to (-dx, dy).
    const std::size_t r = 2, d = 2 * r + 1;
    const Tensor a = random_tensor({1, 3, 6, 7}, rng), b = random_tensor({1, 3, 6, 7}, rng);
    const Tensor c = flip_horizontal(local_correlation(a, b, r, true));
    const Tensor cf = local_correlation(flip_horizontal(a), flip_horizontal(b), r, true);
    const std::size_t plane = 6 * 7;
    double worst = 0.0;
    for (std::size_t dy = 0; dy < d; ++dy)
        for (std::size_t dx = 0; dx < d; ++dx)
            for (std::size_t i = 0; i < plane; ++i) {
                worst = std::max(worst, std::abs(cf[(dy * d + dx) * plane + i] - c[(dy * d + (d - 1 - dx)) * plane + i]));
            }
    EXPECT_LT(worst, 1e-12);
}
