#pragma once

// Property checks run by `evfi selftest`.

#include <functional>
#include <string>
#include <vector>

#include "evfi/checkpoint.hpp"
#include "evfi/config.hpp"
#include "evfi/eval.hpp"
#include "evfi/flow_ops.hpp"
#include "evfi/grad_check.hpp"
#include "evfi/metrics.hpp"
#include "evfi/synthesis_net.hpp"

namespace evfi::cli {

struct PropertyResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

namespace detail {

inline EventStream random_stream(Rng& rng, std::size_t w, std::size_t h, std::uint64_t t0, std::uint64_t t1,
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

inline std::string num(double v) {
    std::ostringstream os;
    os.precision(3);
    os << std::scientific << v;
    return os.str();
}

}  // namespace detail

inline std::vector<PropertyResult> run_property_suite(std::uint64_t seed) {
    std::vector<PropertyResult> out;
    Rng rng(seed);

    {
        const Tensor a = random_tensor({1, 2, 5, 5}, rng, -3, 3), b = random_tensor({1, 2, 5, 5}, rng, -3, 3);
        const Tensor m = random_tensor({1, 1, 5, 5}, rng, 0, 1);
        const Tensor r0 = blend_flows(a, b, Tensor::zeros(m.shape()));
        const Tensor r1 = blend_flows(a, b, Tensor::full(m.shape(), 1.0));
        const Tensor rm = blend_flows(a, b, m);
        bool ok = r0.vec() == b.vec() && r1.vec() == a.vec();
        for (std::size_t i = 0; i < rm.numel(); ++i) {
            ok = ok && rm[i] >= std::min(a[i], b[i]) && rm[i] <= std::max(a[i], b[i]);
        }
        out.push_back({"blend_flows endpoints and convexity", ok, ""});
    }
    {
        double worst = 0.0;
        for (int trial = 0; trial < 20; ++trial) {
            const auto s = detail::random_stream(rng, 6, 5, 100, 900, 50);
            const auto g = voxelize(s, s.t_start(), s.t_end(), 16, 5, 6);
            const auto r = voxelize(reverse_events(s), s.t_start(), s.t_end(), 16, 5, 6);
            const std::size_t plane = 30;
            for (std::size_t b = 0; b < 16; ++b)
                for (std::size_t i = 0; i < plane; ++i) {
                    worst = std::max(worst, std::abs(r.data[b * plane + i] + g.data[(15 - b) * plane + i]));
                }
        }
        out.push_back({"voxel reversal symmetry", worst <= 1e-9, "max deviation " + detail::num(worst)});
    }
    {
        PyramidConfig cfg;
        cfg.base_channels = 2;
        BiOFNet net(cfg, seed);
        NoGradScope ng;
        const BiOFInputs in{random_tensor({1, 3, 16, 16}, rng, 0, 1), random_tensor({1, 3, 16, 16}, rng, 0, 1),
                            random_tensor({1, 16, 16, 16}, rng, -1, 1), random_tensor({1, 16, 16, 16}, rng, -1, 1),
                            random_tensor({1, 16, 16, 16}, rng, -1, 1)};
        const FlowPyramids p = eif_biofnet_forward(net, in);
        double worst = 0.0;
        for (std::size_t sc = 0; sc < kScales; ++sc) worst = std::max({worst, max_abs(p.v_t0[sc]), max_abs(p.v_t1[sc])});
        out.push_back({"zero heads give zero flows", worst == 0.0, "max |V| " + detail::num(worst)});

        ParamStore store;
        auto att = make_interactive_attention(store, rng, "ia", 4, SynthConfig{});
        zero_conv(att.fuse);
        const Tensor q = random_tensor({1, 4, 3, 3}, rng), fw = random_tensor({1, 4, 3, 3}, rng),
                     fs = random_tensor({1, 4, 3, 3}, rng);
        out.push_back({"zero fusion makes attention the identity",
                       interactive_attention(att, q, fw, fs, 2).vec() == q.vec(), ""});
    }
    {
        const Tensor a = random_tensor({3, 16, 16}, rng, 0, 0.8);
        const double p = psnr(a, add(a, Tensor::full(a.shape(), 0.1)));
        const double s = ssim(a, a);
        out.push_back({"psnr of a 0.1 offset is 20 dB", std::abs(p - 20.0) < 1e-9, "psnr " + std::to_string(p)});
        out.push_back({"ssim of identical frames is 1", std::abs(s - 1.0) < 1e-12, "ssim " + std::to_string(s)});
    }
    {
        bool ok = true;
        for (int trial = 0; trial < 20 && ok; ++trial) {
            const auto s = detail::random_stream(rng, 40, 30, rng.below(1000), 5000 + rng.below(1000), rng.below(200));
            const auto bytes = encode_events(s);
            ok = decode_events(bytes) == s && encode_events(decode_events(bytes)) == bytes;
        }
        out.push_back({"EVT1 round-trip", ok, ""});
    }
    {
        bool ok = true;
        for (int trial = 0; trial < 20 && ok; ++trial) {
            std::vector<double> d(2 * 3 * 4);
            for (auto& v : d) v = static_cast<double>(static_cast<float>(rng.normal() * 5));
            const FlowField f(Tensor({2, 3, 4}, d));
            const auto bytes = encode_flo(f);
            ok = decode_flo(bytes).data.vec() == f.data.vec() && encode_flo(decode_flo(bytes)) == bytes;
        }
        out.push_back({"FLO1 round-trip", ok, ""});
    }
    {
        bool ok = true;
        for (int trial = 0; trial < 20 && ok; ++trial) {
            ParamStore st;
            for (std::size_t i = 0, n = rng.below(4); i < n; ++i) {
                std::vector<double> d(6);
                for (auto& v : d) v = static_cast<double>(static_cast<float>(rng.normal()));
                st.add("p" + std::to_string(i), Tensor({2, 3}, d));
            }
            const auto bytes = encode_checkpoint(st);
            ok = encode_checkpoint(decode_checkpoint(bytes)) == bytes;
        }
        out.push_back({"EVFICKPT round-trip", ok, ""});
    }
    {
        RunConfig c;
        c.seed = rng.next_u64();
        c.lr = rng.uniform(1e-5, 1e-2);
        const RunConfig back = parse_run_config(serialize_run_config(c));
        out.push_back({"config parse/serialize fixed point", back == c, ""});
    }
    {
        const auto p = plan_skip_eval(9, 3, EvalMode::whole);
        std::vector<std::size_t> idx;
        for (const auto& t : p.targets) idx.push_back(t.index);
        out.push_back({"skip plan indices", p.keys == std::vector<std::size_t>{0, 4, 8} &&
                                                idx == std::vector<std::size_t>{1, 2, 3, 5, 6, 7},
                       ""});
    }
    return out;
}

}  // namespace evfi::cli
