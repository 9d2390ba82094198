#pragma once

// Frame-skip evaluation: keep every (skip+1)-th frame, reconstruct the dropped
// ones from the surrounding key frames and events, and score them.

#include <sstream>
#include <vector>

#include "evfi/metrics.hpp"
#include "evfi/pipeline.hpp"

namespace evfi {

enum class EvalMode { middle, whole };

inline std::string to_string(EvalMode m) { return m == EvalMode::middle ? "middle" : "whole"; }

inline EvalMode parse_eval_mode(const std::string& s) {
    if (s == "middle") return EvalMode::middle;
    if (s == "whole") return EvalMode::whole;
    throw std::invalid_argument("unknown eval mode '" + s + "' (expected middle or whole)");
}

/// Frames with capture times and the events covering them.
struct FrameSequence {
    std::vector<Frame> frames;
    std::vector<std::uint64_t> timestamps;
    EventStream events;

    void validate() const {
        if (frames.size() != timestamps.size()) {
            throw DataError("sequence has " + std::to_string(frames.size()) + " frames but " +
                            std::to_string(timestamps.size()) + " timestamps");
        }
        for (std::size_t i = 1; i < timestamps.size(); ++i) {
            if (timestamps[i] <= timestamps[i - 1]) {
                throw DataError("timestamps must increase strictly (index " + std::to_string(i) + ")");
            }
            if (frames[i].data.shape() != frames[0].data.shape()) {
                throw DataError("frame " + std::to_string(i) + " differs in geometry from frame 0");
            }
        }
    }
};

struct SkipTarget {
    std::size_t key0, key1, index;
};

struct SkipPlan {
    std::vector<std::size_t> keys;
    std::vector<SkipTarget> targets;
};

inline SkipPlan plan_skip_eval(std::size_t n_frames, std::size_t skip, EvalMode mode) {
    if (skip == 0) throw std::invalid_argument("skip must be at least 1");
    const std::size_t stride = skip + 1;
    if (n_frames < stride + 1) {
        throw std::invalid_argument("sequence of " + std::to_string(n_frames) + " frames is too short for skip " +
                                    std::to_string(skip) + " (needs " + std::to_string(stride + 1) + ")");
    }
    SkipPlan plan;
    for (std::size_t k = 0; k < n_frames; k += stride) plan.keys.push_back(k);
    for (std::size_t i = 0; i + 1 < plan.keys.size(); ++i) {
        const std::size_t k0 = plan.keys[i], k1 = plan.keys[i + 1];
        if (mode == EvalMode::middle) {
            plan.targets.push_back({k0, k1, k0 + stride / 2});
        } else {
            for (std::size_t j = k0 + 1; j < k1; ++j) plan.targets.push_back({k0, k1, j});
        }
    }
    return plan;
}

struct SkipRow {
    std::size_t skip = 0;
    EvalMode mode = EvalMode::middle;
    double psnr = 0.0, ssim = 0.0;
    std::size_t n_frames = 0;
};

inline SkipRow skip_eval(const BiOFNet& flow_net, const SynthNet& synth_net, const FrameSequence& seq,
                         std::size_t skip, EvalMode mode) {
    seq.validate();
    const SkipPlan plan = plan_skip_eval(seq.frames.size(), skip, mode);
    SkipRow row{skip, mode, 0.0, 0.0, plan.targets.size()};
    for (const SkipTarget& tg : plan.targets) {
        const EventStream window = seq.events.window(seq.timestamps[tg.key0], seq.timestamps[tg.key1], false);
        const NetworkInputs in = make_network_inputs(seq.frames[tg.key0], seq.frames[tg.key1], window,
                                                     seq.timestamps[tg.index], flow_net.cfg.event_bins);
        const Tensor pred = interpolate(flow_net, synth_net, in).frames.frames[kScales - 1];
        const Tensor gt = seq.frames[tg.index].batched();
        row.psnr += psnr(pred, gt);
        row.ssim += ssim(pred, gt);
    }
    row.psnr /= static_cast<double>(plan.targets.size());
    row.ssim /= static_cast<double>(plan.targets.size());
    return row;
}

inline std::string metrics_csv(const std::vector<SkipRow>& rows) {
    std::ostringstream os;
    os.precision(17);
    os << "skip,mode,psnr_db,ssim,n_frames\n";
    for (const auto& r : rows) os << r.skip << ',' << to_string(r.mode) << ',' << r.psnr << ',' << r.ssim << ',' << r.n_frames << '\n';
    return os.str();
}

inline std::string loss_csv(const std::vector<double>& losses) {
    std::ostringstream os;
    os.precision(17);
    os << "step,loss\n";
    for (std::size_t i = 0; i < losses.size(); ++i) os << i << ',' << losses[i] << '\n';
    return os.str();
}

}  // namespace evfi
