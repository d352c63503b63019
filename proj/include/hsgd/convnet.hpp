#pragma once

#include <cstdint>
#include <vector>

#include "hsgd/common.hpp"

namespace hsgd {

/// What the last 1x1x1 layer feeds into.
///   residual:    RGB linear, alpha channel 4 * tanh (bounded logit step)
///   initializer: sigmoid on all four channels
enum class OutputActivation : std::uint32_t { residual = 0, initializer = 1 };

template <class T>
struct ConvLayer {
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 3;       // 3 or 1, same extent along depth, height and width
    bool block = true;    // conv -> per-channel affine -> relu; otherwise conv + bias
    std::vector<T> weight;  // out x in x kernel^3
    std::vector<T> scale;   // blocks only
    std::vector<T> shift;   // blocks only
    std::vector<T> bias;    // final layer only

    std::size_t taps() const { return static_cast<std::size_t>(kernel) * kernel * kernel; }
};

template <class T>
struct ConvNetParams {
    OutputActivation activation = OutputActivation::residual;
    std::vector<ConvLayer<T>> layers;

    int input_channels() const { return layers.empty() ? 0 : layers.front().in_channels; }
    std::size_t parameter_count() const;

    /// Flat view in a fixed order (per layer: weight, scale, shift, bias).
    std::vector<T> flatten() const;
    void unflatten(const std::vector<T>& flat);
    /// Same shapes, all zeros. Used as gradient accumulator.
    ConvNetParams zeros_like() const;

    template <class U>
    ConvNetParams<U> cast() const {
        ConvNetParams<U> out;
        out.activation = activation;
        for (const auto& l : layers) {
            ConvLayer<U> c;
            c.in_channels = l.in_channels;
            c.out_channels = l.out_channels;
            c.kernel = l.kernel;
            c.block = l.block;
            c.weight.assign(l.weight.begin(), l.weight.end());
            c.scale.assign(l.scale.begin(), l.scale.end());
            c.shift.assign(l.shift.begin(), l.shift.end());
            c.bias.assign(l.bias.begin(), l.bias.end());
            out.layers.push_back(std::move(c));
        }
        return out;
    }
};

/// `blocks` 3x3x3 blocks of width `hidden`, then a 1x1x1 layer to 4 channels.
/// Block weights are He-uniform, the head is scaled by 0.1; affine starts at (1, 0).
template <class T>
ConvNetParams<T> make_convnet(int in_channels, int hidden, int blocks, OutputActivation activation,
                              std::uint64_t seed);

/// Input is C x K x H x W; output 4 x K x H x W.
template <class T>
Volume<T> conv_forward(const ConvNetParams<T>& params, const Volume<T>& input);

template <class T>
struct ConvGradients {
    ConvNetParams<T> params;
    Volume<T> input;
};

/// Exact reverse mode of conv_forward for the given upstream gradient.
template <class T>
ConvGradients<T> conv_backward(const ConvNetParams<T>& params, const Volume<T>& input, const Volume<T>& upstream);

/// Single 3D convolution with zero padding (kernel 3) or pointwise (kernel 1).
/// Exposed for the benchmarks and the serial reference checks.
template <class T>
Volume<T> conv3d(const Volume<T>& input, const ConvLayer<T>& layer);

}  // namespace hsgd
