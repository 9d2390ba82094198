#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>

#include "evfi/checkpoint.hpp"
#include "evfi/config.hpp"
#include "evfi/eval.hpp"
#include "evfi/grad_check.hpp"
#include "evfi/metrics.hpp"
#include "evfi/optim.hpp"
#include "evfi/toy_data.hpp"
#include "evfi/training.hpp"

using namespace evfi;

namespace {

double scalar_psnr(const Tensor& a, const Tensor& b) {
    double se = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) se += (a[i] - b[i]) * (a[i] - b[i]);
    return 10.0 * std::log10(static_cast<double>(a.numel()) / se);
}

// Direct 2-D window sums at every valid position, no separability.
double scalar_ssim(const Tensor& a, const Tensor& b) {
    const std::size_t h = a.size(a.dim() - 2), w = a.size(a.dim() - 1), planes = a.numel() / (h * w);
    double win[11][11], total_w = 0.0;
    for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
            win[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * 1.5 * 1.5));
            total_w += win[i][j];
        }
    const double c1 = 1e-4, c2 = 9e-4;
    double acc = 0.0;
    std::size_t count = 0;
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t y = 0; y + 11 <= h; ++y)
            for (std::size_t x = 0; x + 11 <= w; ++x) {
                double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
                for (int i = 0; i < 11; ++i)
                    for (int j = 0; j < 11; ++j) {
                        const double wt = win[i][j] / total_w;
                        const double u = a[p * h * w + (y + i) * w + x + j], v = b[p * h * w + (y + i) * w + x + j];
                        mx += wt * u;
                        my += wt * v;
                        sxx += wt * u * u;
                        syy += wt * v * v;
                        sxy += wt * u * v;
                    }
                const double vx = sxx - mx * mx, vy = syy - my * my, cxy = sxy - mx * my;
                acc += (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                ++count;
            }
    return acc / static_cast<double>(count);
}

PyramidConfig tiny_flow_config() {
    PyramidConfig c;
    c.base_channels = 2;
    c.image_channels = 3;
    c.event_bins = 2;
    c.corr_radius = 1;
    return c;
}

SynthConfig tiny_synth_config() {
    SynthConfig c;
    c.base_channels = 4;
    c.image_channels = 3;
    c.event_bins = 2;
    c.heads = 1;
    return c;
}

TrainConfig tiny_train_config(std::size_t steps) {
    TrainConfig t;
    t.steps = steps;
    t.batch = 1;
    t.crop = 32;
    t.seed = 11;
    return t;
}

std::vector<ToySequence> tiny_data() {
    ToyOptions o;
    o.intervals = 1;
    o.substeps = 4;
    return make_toy_dataset(ToyKind::translate, 2, 32, 5, o);
}

}  // namespace

// ---------------------------------------------------------------------------
// AdamW

TEST(AdamW, ZeroGradientWithoutDecayLeavesParameters) {
    Tensor p = Tensor({3}, {0.5, -1.0, 2.0});
    const std::vector<double> before(p.data().begin(), p.data().end());
    AdamWState st;
    AdamWConfig cfg;
    cfg.weight_decay = 0.0;
    for (int i = 0; i < 5; ++i) adamw_step({p}, {Tensor::zeros({3})}, st, 0.1, cfg);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(p[i], before[i]);
}

TEST(AdamW, FirstStepMovesByLearningRate) {
    Tensor p = Tensor({1}, {1.0});
    AdamWState st;
    AdamWConfig cfg;
    cfg.weight_decay = 0.0;
    adamw_step({p}, {Tensor({1}, {1.0})}, st, 0.1, cfg);
    EXPECT_NEAR(p[0], 0.9, 1e-6);
}

TEST(AdamW, DecayAloneShrinksMultiplicatively) {
    Tensor p = Tensor({2}, {2.0, -3.0});
    AdamWState st;
    AdamWConfig cfg;
    cfg.weight_decay = 0.1;
    adamw_step({p}, {Tensor::zeros({2})}, st, 0.1, cfg);
    EXPECT_DOUBLE_EQ(p[0], 2.0 * 0.99);
    EXPECT_DOUBLE_EQ(p[1], -3.0 * 0.99);
}

TEST(AdamW, MatchesScalarRecurrence) {
    Tensor p = Tensor({1}, {0.3});
    AdamWState st;
    AdamWConfig cfg;
    const double gs[] = {0.5, -0.2, 1.5, 0.0};
    double q = 0.3, m = 0, v = 0;
    for (int k = 0; k < 4; ++k) {
        adamw_step({p}, {Tensor({1}, {gs[k]})}, st, 0.01, cfg);
        m = 0.9 * m + 0.1 * gs[k];
        v = 0.999 * v + 0.001 * gs[k] * gs[k];
        const double mh = m / (1 - std::pow(0.9, k + 1)), vh = v / (1 - std::pow(0.999, k + 1));
        q = q - 0.01 * 1e-4 * q - 0.01 * mh / (std::sqrt(vh) + 1e-8);
        EXPECT_NEAR(p[0], q, 1e-15);
    }
}

TEST(AdamW, ShapeMismatchIsAnError) {
    AdamWState st;
    EXPECT_THROW(adamw_step({Tensor::zeros({2})}, {Tensor::zeros({3})}, st, 0.1), ShapeError);
}

TEST(Schedule, HalvesEveryFortyPercent) {
    TrainConfig c;
    c.steps = 100;
    c.lr = 1e-3;
    EXPECT_DOUBLE_EQ(learning_rate(c, 0), 1e-3);
    EXPECT_DOUBLE_EQ(learning_rate(c, 39), 1e-3);
    EXPECT_DOUBLE_EQ(learning_rate(c, 40), 5e-4);
    EXPECT_DOUBLE_EQ(learning_rate(c, 80), 2.5e-4);
}

// ---------------------------------------------------------------------------
// Metrics

TEST(Psnr, ConstantOffsetGivesTwentyDecibels) {
    Rng rng(1);
    Tensor a = random_tensor({3, 16, 16}, rng, 0.0, 0.8);
    Tensor b = add(a, Tensor::full(a.shape(), 0.1));
    EXPECT_NEAR(psnr(a, b), 20.0, 1e-9);
}

TEST(Psnr, IdenticalFramesHitCap) {
    Tensor a = Tensor::full({1, 4, 4}, 0.3);
    EXPECT_EQ(psnr(a, a), kPsnrCap);
}

TEST(Psnr, MatchesScalarOracle) {
    Rng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor a = random_tensor({3, 12, 9}, rng, 0.0, 1.0), b = random_tensor({3, 12, 9}, rng, 0.0, 1.0);
        EXPECT_NEAR(psnr(a, b), scalar_psnr(a, b), 1e-9);
    }
}

TEST(Psnr, GeometryMismatchThrows) { EXPECT_THROW(psnr(Tensor::zeros({1, 4, 4}), Tensor::zeros({1, 4, 5})), ShapeError); }

TEST(Ssim, IdenticalFramesGiveOne) {
    Rng rng(3);
    Tensor a = random_tensor({3, 20, 17}, rng, 0.0, 1.0);
    EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
}

TEST(Ssim, ConstantZeroVersusOne) {
    const double c1 = 1e-4;
    EXPECT_NEAR(ssim(Tensor::zeros({1, 11, 11}), Tensor::full({1, 11, 11}, 1.0)), c1 / (1 + c1), 1e-12);
}

TEST(Ssim, SymmetricAndMatchesScalarOracle) {
    Rng rng(4);
    for (int trial = 0; trial < 5; ++trial) {
        Tensor a = random_tensor({2, 15, 13}, rng, 0.0, 1.0);
        Tensor b = add(a, random_tensor(a.shape(), rng, -0.2, 0.2));
        EXPECT_DOUBLE_EQ(ssim(a, b), ssim(b, a));
        EXPECT_NEAR(ssim(a, b), scalar_ssim(a, b), 1e-7);
    }
}

TEST(Ssim, SmallImageRejected) { EXPECT_THROW(ssim(Tensor::zeros({1, 10, 20}), Tensor::zeros({1, 10, 20})), ShapeError); }

// ---------------------------------------------------------------------------
// Toy data

TEST(ToyData, StaticHasZeroFlowAndNoEvents) {
    const auto data = make_toy_dataset(ToyKind::static_scene, 2, 32, 3);
    for (const auto& seq : data) {
        EXPECT_TRUE(seq.events.empty());
        for (double t : {0.25, 0.5}) {
            for (int k : {0, 1}) {
                for (double v : seq.flow_to_key(t, k).data.data()) EXPECT_EQ(v, 0.0);
            }
        }
        for (const auto& f : seq.frames) EXPECT_EQ(f.data.data()[7], seq.frames[0].data.data()[7]);
    }
}

TEST(ToyData, TranslationFlowAtMidpoint) {
    ToyOptions o;
    o.random_direction = false;
    const auto seq = make_toy_sequence(ToyKind::translate, 32, 9, o);
    const auto v0 = seq.flow_to_key(0.5, 0), v1 = seq.flow_to_key(0.5, 1);
    for (std::size_t i = 0; i < 32 * 32; ++i) {
        EXPECT_NEAR(v0.data[i], -1.5, 1e-12);
        EXPECT_NEAR(v0.data[32 * 32 + i], 0.0, 1e-12);
        EXPECT_NEAR(v1.data[i], 1.5, 1e-12);
    }
}

TEST(ToyData, FramesAreConsistentWithGroundTruthFlow) {
    for (ToyKind kind : {ToyKind::translate, ToyKind::rotate}) {
        const auto seq = make_toy_sequence(kind, 48, 21);
        const std::size_t j = 3;
        const double t = static_cast<double>(j) / static_cast<double>(seq.substeps);
        for (int k : {0, 1}) {
            const Tensor key = seq.frames[k == 0 ? 0 : seq.substeps].batched();
            const Tensor warped = backward_warp(key, seq.flow_to_key(t, k).batched()).warped;
            const Tensor gt = seq.frames[j].batched();
            double err = 0.0;
            std::size_t n = 0;
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t y = 6; y < 42; ++y)
                    for (std::size_t x = 6; x < 42; ++x) {
                        err += std::abs(warped[(c * 48 + y) * 48 + x] - gt[(c * 48 + y) * 48 + x]);
                        ++n;
                    }
            EXPECT_LT(err / static_cast<double>(n), 0.02) << to_string(kind) << " toward " << k;
        }
    }
}

TEST(ToyData, SeedsAreReproducible) {
    const auto a = make_toy_dataset(ToyKind::translate, 3, 32, 42);
    const auto b = make_toy_dataset(ToyKind::translate, 3, 32, 42);
    const auto c = make_toy_dataset(ToyKind::translate, 3, 32, 43);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(a[i].events, b[i].events);
        EXPECT_EQ(a[i].vx, b[i].vx);
        for (std::size_t f = 0; f < a[i].frames.size(); ++f) {
            EXPECT_TRUE(std::equal(a[i].frames[f].data.data().begin(), a[i].frames[f].data.data().end(),
                                   b[i].frames[f].data.data().begin()));
        }
    }
    EXPECT_NE(a[0].frames[0].data[0], c[0].frames[0].data[0]);
}

TEST(ToyData, EventsNeverLandOnFrameTimestamps) {
    const auto seq = make_toy_sequence(ToyKind::translate, 32, 8);
    ASSERT_FALSE(seq.events.empty());
    for (const Event& e : seq.events.events()) {
        EXPECT_TRUE(std::find(seq.timestamps.begin(), seq.timestamps.end(), e.t) == seq.timestamps.end());
    }
    std::size_t total = 0;
    for (std::size_t i = 0; i < seq.intervals(); ++i) total += seq.interval_events(i).size();
    EXPECT_EQ(total, seq.events.size());
}

TEST(ToyData, MotionProducesBothPolarities) {
    const auto seq = make_toy_sequence(ToyKind::rotate, 48, 12);
    std::size_t pos = 0, neg = 0;
    for (const Event& e : seq.events.events()) (e.p > 0 ? pos : neg)++;
    EXPECT_GT(pos, 100u);
    EXPECT_GT(neg, 100u);
}

TEST(ToyData, UnknownKindRejected) { EXPECT_THROW(parse_toy_kind("spiral"), std::invalid_argument); }

// ---------------------------------------------------------------------------
// Event wiring into the networks

TEST(Wiring, NetworkInputsMatchManualSplitAndVoxelize) {
    const auto seq = make_toy_sequence(ToyKind::translate, 32, 4);
    const EventStream win = seq.interval_events(0);
    const std::uint64_t t = seq.timestamps[3];
    const auto g = network_event_inputs(win, t, 5);
    const auto parts = split_events(win, t);
    const auto g0t = voxelize(parts.left, win.t_start(), t, 5, 32, 32);
    const auto gt1 = voxelize(parts.right, t, win.t_end(), 5, 32, 32);
    const auto gt0 = voxelize(reverse_events(parts.left), win.t_start(), t, 5, 32, 32);
    for (std::size_t i = 0; i < g0t.data.numel(); ++i) {
        EXPECT_EQ(g.g_0t.data[i], g0t.data[i]);
        EXPECT_EQ(g.g_t1.data[i], gt1.data[i]);
        EXPECT_EQ(g.g_t0.data[i], gt0.data[i]);
    }
    double left = 0, right = 0;
    for (double v : g0t.data.data()) left += std::abs(v);
    for (double v : gt1.data.data()) right += std::abs(v);
    EXPECT_GT(left, 0.0);
    EXPECT_GT(right, 0.0);
}

TEST(Wiring, TimeMustBeInsideWindow) {
    const auto seq = make_toy_sequence(ToyKind::translate, 32, 4);
    const EventStream win = seq.interval_events(0);
    EXPECT_THROW(network_event_inputs(win, win.t_start(), 4), std::invalid_argument);
    EXPECT_THROW(network_event_inputs(win, win.t_end(), 4), std::invalid_argument);
}

TEST(Wiring, CropKeepsFramesAndVoxelsAligned) {
    const auto seq = make_toy_sequence(ToyKind::translate, 32, 4);
    const TrainSample s = make_train_sample(seq, 0, 2, 4);
    const TrainSample c = crop(s, 5, 7, 16);
    EXPECT_EQ(c.in.i0.shape(), (Shape{1, 3, 16, 16}));
    EXPECT_EQ(c.in.g_t1.shape(), (Shape{1, 4, 16, 16}));
    EXPECT_EQ(c.gt[(1 * 16 + 2) * 16 + 3], s.gt[(1 * 32 + 7) * 32 + 10]);
    EXPECT_EQ(c.in.g_0t[(2 * 16 + 4) * 16 + 1], s.in.g_0t[(2 * 32 + 9) * 32 + 8]);
}

// ---------------------------------------------------------------------------
// Checkpoints

TEST(Checkpoint, RandomStoresRoundTripBitwise) {
    Rng rng(99);
    for (int trial = 0; trial < 1000; ++trial) {
        ParamStore store;
        const std::size_t n = rng.below(5);
        for (std::size_t i = 0; i < n; ++i) {
            Shape shape(rng.below(4));
            for (auto& d : shape) d = rng.below(4);
            std::vector<double> v(shape_numel(shape));
            for (auto& x : v) x = static_cast<double>(static_cast<float>(rng.normal() * 10));
            store.add("p" + std::to_string(trial) + "." + std::to_string(i), Tensor(shape, std::move(v)));
        }
        const auto bytes = encode_checkpoint(store);
        const ParamStore back = decode_checkpoint(bytes);
        ASSERT_EQ(back.names(), store.names());
        for (std::size_t i = 0; i < n; ++i) {
            ASSERT_EQ(back.tensors()[i].shape(), store.tensors()[i].shape());
            for (std::size_t k = 0; k < store.tensors()[i].numel(); ++k) {
                ASSERT_EQ(back.tensors()[i][k], store.tensors()[i][k]);
            }
        }
        ASSERT_EQ(encode_checkpoint(back), bytes);
    }
}

TEST(Checkpoint, EmptyStoreRoundTrips) {
    const ParamStore empty;
    const auto bytes = encode_checkpoint(empty);
    EXPECT_EQ(bytes.size(), 16u);
    EXPECT_EQ(decode_checkpoint(bytes).size(), 0u);
}

TEST(Checkpoint, TruncationNamesByteCounts) {
    ParamStore store;
    store.add("w", Tensor::zeros({10}));
    auto bytes = encode_checkpoint(store);
    bytes.resize(bytes.size() - 8);
    try {
        decode_checkpoint(bytes, "net.ckpt");
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("net.ckpt"), std::string::npos) << msg;
        EXPECT_NE(msg.find("expected 40 bytes"), std::string::npos) << msg;
        EXPECT_NE(msg.find("32 available"), std::string::npos) << msg;
    }
}

TEST(Checkpoint, BadMagicAndVersionAreDataErrors) {
    auto bytes = encode_checkpoint(ParamStore{});
    auto bad_version = bytes;
    bad_version[8] = 7;
    EXPECT_THROW(decode_checkpoint(bad_version), DataError);
    bytes[0] = 'X';
    EXPECT_THROW(decode_checkpoint(bytes), DataError);
}

TEST(Checkpoint, LoadValuesChecksShapes) {
    ParamStore a, b;
    a.add("w", Tensor::zeros({2, 2}));
    b.add("w", Tensor::zeros({4}));
    EXPECT_THROW(a.load_values(b), DataError);
}

// ---------------------------------------------------------------------------
// Training

TEST(Training, IdenticalSeedsGiveIdenticalLossCurves) {
    const auto data = tiny_data();
    auto run = [&] {
        BiOFNet net(tiny_flow_config(), 3);
        return train_stage_one(net, data, tiny_train_config(4)).losses;
    };
    const auto a = run(), b = run();
    ASSERT_EQ(a.size(), 4u);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(std::memcmp(&a[i], &b[i], sizeof(double)), 0);
}

TEST(Training, StageTwoLeavesFlowNetworkUntouched) {
    const auto data = tiny_data();
    BiOFNet flow(tiny_flow_config(), 3);
    train_stage_one(flow, data, tiny_train_config(2));
    const auto digest = checkpoint_digest(flow.params);
    std::vector<std::vector<double>> before;
    for (const Tensor& p : flow.params.tensors()) before.emplace_back(p.data().begin(), p.data().end());
    SynthNet synth(tiny_synth_config(), 4);
    const auto synth_digest = checkpoint_digest(synth.params);
    TrainConfig tc = tiny_train_config(3);
    tc.stage = 2;
    const auto r = train_stage_two(flow, synth, data, tc);
    EXPECT_EQ(r.losses.size(), 3u);
    EXPECT_EQ(checkpoint_digest(flow.params), digest);
    for (std::size_t i = 0; i < before.size(); ++i) {
        EXPECT_TRUE(std::equal(before[i].begin(), before[i].end(), flow.params.tensors()[i].data().begin()));
    }
    EXPECT_NE(checkpoint_digest(synth.params), synth_digest);
}

TEST(Training, NonFiniteLossAborts) {
    const auto data = tiny_data();
    BiOFNet net(tiny_flow_config(), 3);
    TrainConfig tc = tiny_train_config(3);
    tc.lr = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(train_stage_one(net, data, tc), NumericalError);
}

TEST(Training, SynthesisLossIsLinearInScaleWeights) {
    Rng rng(5);
    SynthOutputs out;
    for (std::size_t s = 0; s < kScales; ++s) {
        const std::size_t n = 8u << s;
        out.frames[s] = random_tensor({1, 3, n, n}, rng, 0.0, 1.0);
    }
    const Tensor gt = random_tensor({1, 3, 32, 32}, rng, 0.0, 1.0);
    const std::array<double, kScales> a{0.1, 0.1, 1.0}, b{0.5, 2.0, 0.3};
    std::array<double, kScales> ab;
    for (std::size_t s = 0; s < kScales; ++s) ab[s] = 2.0 * a[s] + 3.0 * b[s];
    const double la = synthesis_loss(out, gt, a)[0], lb = synthesis_loss(out, gt, b)[0];
    EXPECT_NEAR(synthesis_loss(out, gt, ab)[0], 2.0 * la + 3.0 * lb, 1e-12);
    // Each term separately equals lambda * Charbonnier against the area-downsampled target.
    const double coarse = charbonnier(sub(out.frames[0], area_downsample(gt, 4)))[0];
    EXPECT_NEAR(synthesis_loss(out, gt, {1.0, 0.0, 0.0})[0], coarse, 1e-15);
}

TEST(Training, EndpointErrorOfKnownOffset) {
    const Tensor a = Tensor::zeros({2, 2, 3, 3});
    Tensor b = Tensor::zeros({2, 2, 3, 3});
    auto d = b.mutable_data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = (i / 9) % 2 == 0 ? 3.0 : 4.0;
    EXPECT_DOUBLE_EQ(endpoint_error(a, b), 5.0);
    EXPECT_DOUBLE_EQ(mean_flow_magnitude(b), 5.0);
}

TEST(Training, MovingAverageWindow) {
    const std::vector<double> v{1, 2, 3, 4};
    EXPECT_DOUBLE_EQ(moving_average(v, 3, 2), 3.5);
    EXPECT_DOUBLE_EQ(moving_average(v, 1, 10), 1.5);
}

// ---------------------------------------------------------------------------
// Skip evaluation

TEST(SkipEval, WholeModeIndices) {
    const SkipPlan p = plan_skip_eval(9, 3, EvalMode::whole);
    EXPECT_EQ(p.keys, (std::vector<std::size_t>{0, 4, 8}));
    std::vector<std::size_t> idx;
    for (const auto& t : p.targets) idx.push_back(t.index);
    EXPECT_EQ(idx, (std::vector<std::size_t>{1, 2, 3, 5, 6, 7}));
}

TEST(SkipEval, MiddleModeIndices) {
    const SkipPlan p = plan_skip_eval(9, 3, EvalMode::middle);
    std::vector<std::size_t> idx;
    for (const auto& t : p.targets) idx.push_back(t.index);
    EXPECT_EQ(idx, (std::vector<std::size_t>{2, 6}));
    EXPECT_EQ(p.targets[1].key0, 4u);
    EXPECT_EQ(p.targets[1].key1, 8u);
}

TEST(SkipEval, TooShortSequenceRejected) {
    EXPECT_THROW(plan_skip_eval(4, 3, EvalMode::middle), std::invalid_argument);
    EXPECT_NO_THROW(plan_skip_eval(5, 3, EvalMode::middle));
}

TEST(SkipEval, RowsAreDeterministicAndCounted) {
    ToyOptions o;
    o.intervals = 1;
    o.substeps = 8;
    const auto seq = make_toy_sequence(ToyKind::translate, 32, 17, o);
    const FrameSequence fs{seq.frames, seq.timestamps, seq.events};
    BiOFNet flow(tiny_flow_config(), 1);
    SynthNet synth(tiny_synth_config(), 2);
    const SkipRow a = skip_eval(flow, synth, fs, 3, EvalMode::whole);
    const SkipRow b = skip_eval(flow, synth, fs, 3, EvalMode::whole);
    EXPECT_EQ(a.n_frames, 6u);
    EXPECT_EQ(a.psnr, b.psnr);
    EXPECT_EQ(a.ssim, b.ssim);
    EXPECT_GT(a.psnr, 10.0);
    const std::string csv = metrics_csv({a});
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "skip,mode,psnr_db,ssim,n_frames");
    EXPECT_EQ(loss_csv({0.5, 0.25}), "step,loss\n0,0.5\n1,0.25\n");
}

// ---------------------------------------------------------------------------
// Run configuration

TEST(RunConfig, ParseSerializeParseIsFixedPoint) {
    const std::string text =
        "# toy run\n"
        "seed = 17\n"
        "lr = 0.00025   # smaller\n"
        "lambda_s = 0.2, 0.3, 1.5\n"
        "skips = 1,3,7\n"
        "mode = whole\n"
        "use_ibiof = false\n"
        "\n"
        "data_dir = seqs/a\n";
    const RunConfig a = parse_run_config(text);
    EXPECT_EQ(a.seed, 17u);
    EXPECT_DOUBLE_EQ(a.lr, 0.00025);
    EXPECT_EQ(a.skips, (std::vector<std::size_t>{1, 3, 7}));
    EXPECT_FALSE(a.use_ibiof);
    EXPECT_EQ(a.data_dir, "seqs/a");
    const std::string s1 = serialize_run_config(a);
    const RunConfig b = parse_run_config(s1);
    EXPECT_EQ(a, b);
    EXPECT_EQ(serialize_run_config(b), s1);
}

TEST(RunConfig, RandomValuesSurviveRoundTrip) {
    Rng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        RunConfig c;
        c.seed = rng.next_u64();
        c.lr = rng.uniform(1e-6, 1.0);
        c.lambda2 = rng.normal();
        c.lambda_s = {rng.uniform(), rng.uniform(), rng.uniform()};
        c.contrast_threshold = rng.uniform(0.05, 0.5);
        EXPECT_EQ(parse_run_config(serialize_run_config(c)), c);
    }
}

TEST(RunConfig, UnknownKeysAndBadValuesRejected) {
    EXPECT_THROW(parse_run_config("learning_rate = 0.1\n"), UsageError);
    EXPECT_THROW(parse_run_config("steps = many\n"), UsageError);
    EXPECT_THROW(parse_run_config("seed = 1\nseed = 2\n"), UsageError);
    EXPECT_THROW(parse_run_config("seed\n"), UsageError);
    EXPECT_THROW(parse_run_config("lambda_s = 1,2\n"), UsageError);
}

TEST(RunConfig, EnvironmentSeedOverrides) {
    RunConfig c;
    c.seed = 3;
    ::setenv("EVFI_SEED", "12345", 1);
    apply_environment(c);
    ::unsetenv("EVFI_SEED");
    EXPECT_EQ(c.seed, 12345u);
    apply_environment(c);
    EXPECT_EQ(c.seed, 12345u);
}
