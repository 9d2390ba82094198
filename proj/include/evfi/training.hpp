#pragma once

// Two-stage training on toy sequences and the flow evaluation used to judge it.

#include <chrono>
#include <cmath>
#include <functional>
#include <sstream>
#include <vector>

#include "evfi/metrics.hpp"
#include "evfi/optim.hpp"
#include "evfi/pipeline.hpp"
#include "evfi/toy_data.hpp"

namespace evfi {

struct TrainConfig {
    int stage = 1;
    std::size_t steps = 2000;
    std::size_t batch = 2;
    double lr = 1e-3;
    double lr_decay = 0.5;            // multiplier applied every decay_fraction * steps
    double decay_fraction = 0.4;
    double weight_decay = 1e-4;
    std::uint64_t seed = 0;
    double lambda1 = 1.0;             // stage one photometric weight
    double lambda2 = 0.1;             // stage one smoothness weight (flow_loss defaults to 10)
    std::array<double, kScales> lambda_s{0.1, 0.1, 1.0};  // stage two, coarse to fine
    std::size_t crop = 32;
};

inline double learning_rate(const TrainConfig& cfg, std::size_t step) {
    const auto every = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(cfg.decay_fraction * static_cast<double>(cfg.steps))));
    return cfg.lr * std::pow(cfg.lr_decay, static_cast<double>(step / every));
}

/// One supervised example: inputs at sub-frame j of an interval, the true
/// intermediate frame and the true flows toward both key frames.
struct TrainSample {
    NetworkInputs in;
    Tensor gt;              // N x C x H x W
    Tensor flow_t0, flow_t1;  // N x 2 x H x W
    double t = 0.5;
};

inline TrainSample make_train_sample(const ToySequence& seq, std::size_t interval, std::size_t j, std::size_t bins) {
    if (interval >= seq.intervals()) throw std::out_of_range("interval " + std::to_string(interval) + " out of range");
    if (j == 0 || j >= seq.substeps) {
        throw std::out_of_range("sub-frame index must lie strictly inside the interval, got " + std::to_string(j));
    }
    const std::size_t k0 = interval * seq.substeps, k1 = k0 + seq.substeps;
    const double t = static_cast<double>(j) / static_cast<double>(seq.substeps);
    TrainSample s;
    s.in = make_network_inputs(seq.frames[k0], seq.frames[k1], seq.interval_events(interval), seq.timestamps[k0 + j],
                               bins);
    s.gt = seq.frames[k0 + j].batched();
    s.flow_t0 = seq.flow_to_key(t, 0).batched();
    s.flow_t1 = seq.flow_to_key(t, 1).batched();
    s.t = t;
    return s;
}

inline TrainSample crop(const TrainSample& s, std::size_t y0, std::size_t x0, std::size_t size) {
    return {crop(s.in, y0, x0, size, size), crop(s.gt, y0, x0, size, size), crop(s.flow_t0, y0, x0, size, size),
            crop(s.flow_t1, y0, x0, size, size), s.t};
}

/// Random batch of synchronized crops; all randomness comes from `rng`.
inline TrainSample sample_batch(const std::vector<ToySequence>& data, const TrainConfig& cfg, std::size_t bins,
                                Rng& rng) {
    if (data.empty()) throw std::invalid_argument("training data is empty");
    if (cfg.crop % 8 != 0 || cfg.crop == 0) {
        throw std::invalid_argument("crop must be a positive multiple of 8, got " + std::to_string(cfg.crop));
    }
    std::vector<NetworkInputs> ins;
    std::vector<Tensor> gts, f0, f1;
    for (std::size_t b = 0; b < cfg.batch; ++b) {
        const ToySequence& seq = data[rng.below(data.size())];
        if (seq.height() < cfg.crop || seq.width() < cfg.crop) {
            throw std::invalid_argument("crop " + std::to_string(cfg.crop) + " exceeds sequence size");
        }
        const std::size_t interval = rng.below(seq.intervals());
        const std::size_t j = 1 + rng.below(seq.substeps - 1);
        const std::size_t y0 = rng.below(seq.height() - cfg.crop + 1), x0 = rng.below(seq.width() - cfg.crop + 1);
        const TrainSample s = crop(make_train_sample(seq, interval, j, bins), y0, x0, cfg.crop);
        ins.push_back(s.in);
        gts.push_back(s.gt);
        f0.push_back(s.flow_t0);
        f1.push_back(s.flow_t1);
    }
    return {stack(ins), concat(gts, 0), concat(f0, 0), concat(f1, 0), 0.0};
}

struct TrainResult {
    std::vector<double> losses;
    double seconds = 0.0;
};

using StepCallback = std::function<void(std::size_t step, double loss)>;

namespace detail {

inline void require_finite_loss(double loss, std::size_t step, int stage) {
    if (!std::isfinite(loss)) {
        std::ostringstream os;
        os << "stage " << stage << " loss became non-finite (" << loss << ") at step " << step;
        throw NumericalError(os.str());
    }
}

template <typename LossFn>
TrainResult run_training(ParamStore& params, const TrainConfig& cfg, LossFn&& loss_fn, const StepCallback& cb) {
    const auto start = std::chrono::steady_clock::now();
    TrainResult res;
    res.losses.reserve(cfg.steps);
    AdamWState state;
    AdamWConfig ocfg;
    ocfg.weight_decay = cfg.weight_decay;
    const std::vector<Tensor> tensors = params.tensors();
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        Tape tape;
        TapeScope scope(tape);
        const Tensor loss = loss_fn(step);
        const double value = loss[0];
        require_finite_loss(value, step, cfg.stage);
        const Gradients grads = backward(loss);
        adamw_step(tensors, collect_gradients(params, grads), state, learning_rate(cfg, step), ocfg);
        res.losses.push_back(value);
        if (cb) cb(step, value);
    }
    if (!params.all_finite()) throw NumericalError("stage " + std::to_string(cfg.stage) + " produced non-finite weights");
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return res;
}

}  // namespace detail

/// Stage one: unsupervised flow training from the photometric and smoothness
/// objective on the full-resolution output flows.
inline TrainResult train_stage_one(BiOFNet& net, const std::vector<ToySequence>& data, const TrainConfig& cfg,
                                   const StepCallback& cb = {}) {
    Rng rng(cfg.seed);
    return detail::run_training(net.params, cfg, [&](std::size_t) {
        const TrainSample b = sample_batch(data, cfg, net.cfg.event_bins, rng);
        const auto [v0, v1] = full_resolution_flows(eif_biofnet_forward(net, b.in.flow()));
        return flow_loss(b.gt, b.in.i0, b.in.i1, v0, v1, {cfg.lambda1, cfg.lambda2});
    }, cb);
}

/// Sum over scales of lambda_s * Charbonnier(I_t^s - downsampled ground truth).
inline Tensor synthesis_loss(const SynthOutputs& out, const Tensor& gt, const std::array<double, kScales>& lambda_s) {
    Tensor total;
    for (std::size_t s = 0; s < kScales; ++s) {
        const std::size_t factor = gt.size(2) / out.frames[s].size(2);
        const Tensor target = factor == 1 ? gt : area_downsample(gt, factor);
        const Tensor term = scale(charbonnier(sub(out.frames[s], target)), lambda_s[s]);
        total = s == 0 ? term : add(total, term);
    }
    return total;
}

/// Stage two: the flow network is evaluated without gradients and never
/// updated; only the synthesis parameters train.
inline TrainResult train_stage_two(const BiOFNet& flow_net, SynthNet& net, const std::vector<ToySequence>& data,
                                   const TrainConfig& cfg, const StepCallback& cb = {}) {
    if (flow_net.cfg.event_bins != net.cfg.event_bins) {
        throw std::invalid_argument("flow and synthesis networks disagree on event bins");
    }
    Rng rng(cfg.seed);
    return detail::run_training(net.params, cfg, [&](std::size_t) {
        const TrainSample b = sample_batch(data, cfg, net.cfg.event_bins, rng);
        SynthFlows flows;
        {
            NoGradScope ng;
            flows = synthesis_flows(eif_biofnet_forward(flow_net, b.in.flow()));
        }
        return synthesis_loss(synthesis_forward(net, b.in.synth(), flows), b.gt, cfg.lambda_s);
    }, cb);
}

/// Trailing mean over the last `window` values ending at index i.
inline double moving_average(const std::vector<double>& v, std::size_t i, std::size_t window) {
    if (v.empty() || i >= v.size() || window == 0) throw std::out_of_range("moving_average: bad range");
    const std::size_t lo = i + 1 >= window ? i + 1 - window : 0;
    double s = 0.0;
    for (std::size_t k = lo; k <= i; ++k) s += v[k];
    return s / static_cast<double>(i + 1 - lo);
}

/// Mean endpoint error between N x 2 x H x W flows.
inline double endpoint_error(const Tensor& pred, const Tensor& gt) {
    if (pred.shape() != gt.shape() || pred.dim() != 4 || pred.size(1) != 2) {
        throw ShapeError("endpoint_error: " + shape_str(pred.shape()) + " vs " + shape_str(gt.shape()));
    }
    const std::size_t n = pred.size(0), hw = pred.size(2) * pred.size(3);
    double s = 0.0;
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < hw; ++i) {
            const double du = pred[(2 * b) * hw + i] - gt[(2 * b) * hw + i];
            const double dv = pred[(2 * b + 1) * hw + i] - gt[(2 * b + 1) * hw + i];
            s += std::sqrt(du * du + dv * dv);
        }
    return s / static_cast<double>(n * hw);
}

inline double mean_flow_magnitude(const Tensor& flow) { return endpoint_error(flow, Tensor::zeros(flow.shape())); }

/// Full-resolution bidirectional EPE of the final flows and of the intermediate
/// event-only and fused flows, averaged over every interval midpoint.
struct FlowEval {
    double epe = 0.0;        // final output
    double epe_event = 0.0;  // E-BiOF flows
    double epe_fused = 0.0;  // F-BiOF flows
    double magnitude = 0.0;  // mean |V| of the final output
};

inline FlowEval evaluate_flows(const BiOFNet& net, const std::vector<ToySequence>& data) {
    NoGradScope ng;
    FlowEval r;
    std::size_t n = 0;
    auto full = [](const Tensor& v) { return rescale_flow(v, 2.0); };
    for (const ToySequence& seq : data) {
        for (std::size_t iv = 0; iv < seq.intervals(); ++iv) {
            const TrainSample s = make_train_sample(seq, iv, seq.substeps / 2, net.cfg.event_bins);
            const FlowPyramids p = eif_biofnet_forward(net, s.in.flow());
            constexpr std::size_t f = kScales - 1;
            r.epe += 0.5 * (endpoint_error(full(p.v_t0[f]), s.flow_t0) + endpoint_error(full(p.v_t1[f]), s.flow_t1));
            r.epe_event +=
                0.5 * (endpoint_error(full(p.ve_t0[f]), s.flow_t0) + endpoint_error(full(p.ve_t1[f]), s.flow_t1));
            r.epe_fused +=
                0.5 * (endpoint_error(full(p.vf_t0[f]), s.flow_t0) + endpoint_error(full(p.vf_t1[f]), s.flow_t1));
            r.magnitude += 0.5 * (mean_flow_magnitude(full(p.v_t0[f])) + mean_flow_magnitude(full(p.v_t1[f])));
            ++n;
        }
    }
    if (n == 0) throw std::invalid_argument("evaluate_flows: no intervals");
    const double inv = 1.0 / static_cast<double>(n);
    r.epe *= inv;
    r.epe_event *= inv;
    r.epe_fused *= inv;
    r.magnitude *= inv;
    return r;
}

/// Middle-frame quality of the full pipeline against the frame-average baseline.
struct SynthEval {
    double psnr = 0.0, ssim = 0.0;
    double baseline_psnr = 0.0, baseline_ssim = 0.0;
};

inline SynthEval evaluate_synthesis(const BiOFNet& flow_net, const SynthNet& net, const std::vector<ToySequence>& data) {
    SynthEval r;
    std::size_t n = 0;
    for (const ToySequence& seq : data) {
        for (std::size_t iv = 0; iv < seq.intervals(); ++iv) {
            const TrainSample s = make_train_sample(seq, iv, seq.substeps / 2, net.cfg.event_bins);
            const Tensor pred = interpolate(flow_net, net, s.in).frames.frames[kScales - 1];
            const Tensor avg = scale(add(s.in.i0, s.in.i1), 0.5);
            r.psnr += psnr(pred, s.gt);
            r.ssim += ssim(pred, s.gt);
            r.baseline_psnr += psnr(avg, s.gt);
            r.baseline_ssim += ssim(avg, s.gt);
            ++n;
        }
    }
    if (n == 0) throw std::invalid_argument("evaluate_synthesis: no intervals");
    const double inv = 1.0 / static_cast<double>(n);
    r.psnr *= inv;
    r.ssim *= inv;
    r.baseline_psnr *= inv;
    r.baseline_ssim *= inv;
    return r;
}

}  // namespace evfi
