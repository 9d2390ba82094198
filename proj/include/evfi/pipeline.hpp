#pragma once

// Glue from frames and event streams to network inputs, plus inference.

#include <vector>

#include "evfi/events.hpp"
#include "evfi/synthesis_net.hpp"

namespace evfi {

struct NetworkInputs {
    Tensor i0, i1;              // N x C x H x W
    Tensor g_0t, g_t0, g_t1;    // N x bins x H x W

    BiOFInputs flow() const { return {i0, i1, g_0t, g_t0, g_t1}; }
    SynthInputs synth() const { return {i0, i1, g_0t, g_t1}; }
};

/// Inputs for interpolating at absolute time t between two key frames whose
/// events cover [events.t_start(), events.t_end()].
inline NetworkInputs make_network_inputs(const Frame& i0, const Frame& i1, const EventStream& events, std::uint64_t t,
                                         std::size_t bins) {
    if (i0.data.shape() != i1.data.shape()) {
        throw ShapeError("key frames differ in geometry: " + shape_str(i0.data.shape()) + " vs " +
                         shape_str(i1.data.shape()));
    }
    if (events.width() != i0.width() || events.height() != i0.height()) {
        throw ShapeError("event sensor " + std::to_string(events.width()) + "x" + std::to_string(events.height()) +
                         " does not match frames " + std::to_string(i0.width()) + "x" + std::to_string(i0.height()));
    }
    const auto g = network_event_inputs(events, t, bins);
    return {i0.batched(), i1.batched(), g.g_0t.batched(), g.g_t0.batched(), g.g_t1.batched()};
}

/// Spatial crop of an N x C x H x W tensor.
inline Tensor crop(const Tensor& x, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
    return slice(slice(x, 2, y0, y0 + h), 3, x0, x0 + w);
}

inline NetworkInputs crop(const NetworkInputs& in, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
    return {crop(in.i0, y0, x0, h, w), crop(in.i1, y0, x0, h, w), crop(in.g_0t, y0, x0, h, w),
            crop(in.g_t0, y0, x0, h, w), crop(in.g_t1, y0, x0, h, w)};
}

inline NetworkInputs stack(const std::vector<NetworkInputs>& items) {
    if (items.empty()) throw std::invalid_argument("stack: no items");
    auto cat = [&](Tensor NetworkInputs::*m) {
        std::vector<Tensor> parts;
        for (const auto& it : items) parts.push_back(it.*m);
        return concat(parts, 0);
    };
    return {cat(&NetworkInputs::i0), cat(&NetworkInputs::i1), cat(&NetworkInputs::g_0t), cat(&NetworkInputs::g_t0),
            cat(&NetworkInputs::g_t1)};
}

struct Interpolation {
    FlowPyramids flows;
    SynthOutputs frames;
};

inline Interpolation interpolate(const BiOFNet& flow_net, const SynthNet& synth_net, const NetworkInputs& in) {
    NoGradScope ng;
    Interpolation r;
    r.flows = eif_biofnet_forward(flow_net, in.flow());
    r.frames = synthesis_forward(synth_net, in.synth(), synthesis_flows(r.flows));
    return r;
}

}  // namespace evfi
