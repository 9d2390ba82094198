#pragma once

// Parameterized building blocks registered in a ParamStore.

#include <cmath>
#include <string>
#include <vector>

#include "evfi/checkpoint.hpp"
#include "evfi/nn_ops.hpp"
#include "evfi/rng.hpp"

namespace evfi {

enum class Init { fan_in, zero };

struct Conv2d {
    Tensor weight, bias;
    std::size_t stride = 1, padding = 0, groups = 1;

    Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, padding, groups); }
    std::size_t out_channels() const { return weight.size(0); }
};

/// Registers `<name>.weight` (fan-in uniform in +-sqrt(1/fan_in), or zeros)
/// and a zero `<name>.bias`. Padding keeps "same" size at stride 1.
inline Conv2d make_conv(ParamStore& store, Rng& rng, const std::string& name, std::size_t in, std::size_t out,
                        std::size_t kernel, std::size_t stride = 1, Init init = Init::fan_in, std::size_t groups = 1) {
    if (in % groups != 0 || out % groups != 0) throw ShapeError(name + ": channels not divisible by groups");
    const std::size_t fan_in = (in / groups) * kernel * kernel;
    std::vector<double> w(out * fan_in, 0.0);
    if (init == Init::fan_in) {
        const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
        for (auto& v : w) v = rng.uniform(-bound, bound);
    }
    Conv2d c;
    c.weight = store.add(name + ".weight", Tensor({out, in / groups, kernel, kernel}, std::move(w)));
    c.bias = store.add(name + ".bias", Tensor::zeros({out}));
    c.stride = stride;
    c.padding = kernel / 2;
    c.groups = groups;
    return c;
}

/// Convolutions with leaky-ReLU (slope 0.1) between them; the last layer is
/// linear so the block can serve as a residual or prediction head.
struct ConvBlock {
    std::vector<Conv2d> layers;

    Tensor operator()(Tensor x) const {
        for (std::size_t i = 0; i < layers.size(); ++i) {
            x = layers[i](x);
            if (i + 1 < layers.size()) x = leaky_relu(x, 0.1);
        }
        return x;
    }
};

/// in -> hidden -> ... -> out with `depth` 3x3 layers. `last` selects the
/// initialization of the final layer (zero for residual heads).
inline ConvBlock make_block(ParamStore& store, Rng& rng, const std::string& name, std::size_t in, std::size_t hidden,
                            std::size_t out, std::size_t depth = 3, Init last = Init::fan_in) {
    if (depth < 1) throw std::invalid_argument(name + ": block depth must be positive");
    ConvBlock b;
    for (std::size_t i = 0; i < depth; ++i) {
        const std::size_t ci = i == 0 ? in : hidden;
        const std::size_t co = i + 1 == depth ? out : hidden;
        b.layers.push_back(
            make_conv(store, rng, name + "." + std::to_string(i), ci, co, 3, 1, i + 1 == depth ? last : Init::fan_in));
    }
    return b;
}

struct LayerNorm2d {
    Tensor gamma, beta;
    /// Normalizes each pixel over the channel axis of an N x C x H x W tensor.
    Tensor operator()(const Tensor& x) const { return layer_norm(x, 1, gamma, beta); }
};

inline LayerNorm2d make_layer_norm(ParamStore& store, const std::string& name, std::size_t channels) {
    return {store.add(name + ".gamma", Tensor::ones({channels})), store.add(name + ".beta", Tensor::zeros({channels}))};
}

/// Overwrites a layer's weight and bias with zeros (used by tests).
inline void zero_conv(Conv2d& c) {
    std::fill(c.weight.mutable_data().begin(), c.weight.mutable_data().end(), 0.0);
    std::fill(c.bias.mutable_data().begin(), c.bias.mutable_data().end(), 0.0);
}

}  // namespace evfi
