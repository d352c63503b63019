#include "hsgd/convnet.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace hsgd {

template <class T>
std::size_t ConvNetParams<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.scale.size() + l.shift.size() + l.bias.size();
    return n;
}

template <class T>
std::vector<T> ConvNetParams<T>::flatten() const {
    std::vector<T> flat;
    flat.reserve(parameter_count());
    for (const auto& l : layers) {
        flat.insert(flat.end(), l.weight.begin(), l.weight.end());
        flat.insert(flat.end(), l.scale.begin(), l.scale.end());
        flat.insert(flat.end(), l.shift.begin(), l.shift.end());
        flat.insert(flat.end(), l.bias.begin(), l.bias.end());
    }
    return flat;
}

template <class T>
void ConvNetParams<T>::unflatten(const std::vector<T>& flat) {
    require(flat.size() == parameter_count(), "flat parameter vector has the wrong size");
    auto it = flat.begin();
    for (auto& l : layers) {
        for (auto* v : {&l.weight, &l.scale, &l.shift, &l.bias}) {
            std::copy(it, it + static_cast<std::ptrdiff_t>(v->size()), v->begin());
            it += static_cast<std::ptrdiff_t>(v->size());
        }
    }
}

template <class T>
ConvNetParams<T> ConvNetParams<T>::zeros_like() const {
    ConvNetParams<T> z = *this;
    for (auto& l : z.layers) {
        for (auto* v : {&l.weight, &l.scale, &l.shift, &l.bias}) std::fill(v->begin(), v->end(), T(0));
    }
    return z;
}

template <class T>
ConvNetParams<T> make_convnet(int in_channels, int hidden, int blocks, OutputActivation activation,
                              std::uint64_t seed) {
    require(in_channels >= 1 && hidden >= 1 && blocks >= 0, "invalid network shape");
    std::mt19937_64 rng(seed);
    ConvNetParams<T> p;
    p.activation = activation;
    int in = in_channels;
    // He-uniform for the ReLU blocks; the head starts small so residuals begin near zero.
    const auto fill = [&](ConvLayer<T>& l, double gain) {
        const double a = gain * std::sqrt(6.0 / (static_cast<double>(l.in_channels) * l.taps()));
        std::uniform_real_distribution<double> u(-a, a);
        l.weight.resize(static_cast<std::size_t>(l.out_channels) * l.in_channels * l.taps());
        for (auto& w : l.weight) w = static_cast<T>(u(rng));
    };
    for (int b = 0; b < blocks; ++b) {
        ConvLayer<T> l;
        l.in_channels = in;
        l.out_channels = hidden;
        l.kernel = 3;
        l.block = true;
        fill(l, 1.0);
        l.scale.assign(static_cast<std::size_t>(hidden), T(1));
        l.shift.assign(static_cast<std::size_t>(hidden), T(0));
        p.layers.push_back(std::move(l));
        in = hidden;
    }
    ConvLayer<T> last;
    last.in_channels = in;
    last.out_channels = 4;
    last.kernel = 1;
    last.block = false;
    fill(last, 0.1);
    last.bias.assign(4, T(0));
    p.layers.push_back(std::move(last));
    return p;
}

template <class T>
Volume<T> conv3d(const Volume<T>& input, const ConvLayer<T>& layer) {
    require(input.channels == layer.in_channels, "convolution input channel mismatch");
    const int K = input.depth, H = input.height, W = input.width;
    Volume<T> out(layer.out_channels, K, H, W);
    const int ci_count = layer.in_channels;
    const std::size_t taps = layer.taps();

    if (layer.kernel == 1) {
        const std::size_t n = input.channel_size();
#pragma omp parallel for schedule(static)
        for (int co = 0; co < layer.out_channels; ++co) {
            T* o = out.channel(co);
            for (int ci = 0; ci < ci_count; ++ci) {
                const T w = layer.weight[static_cast<std::size_t>(co) * ci_count + ci];
                const T* in = input.channel(ci);
                for (std::size_t q = 0; q < n; ++q) o[q] += w * in[q];
            }
        }
        return out;
    }

#pragma omp parallel for schedule(static)
    for (int co = 0; co < layer.out_channels; ++co) {
        T* o = out.channel(co);
        for (int ci = 0; ci < ci_count; ++ci) {
            const T* in = input.channel(ci);
            const T* w = &layer.weight[(static_cast<std::size_t>(co) * ci_count + ci) * taps];
            for (int kz = 0; kz < 3; ++kz) {
                const int dz = kz - 1;
                for (int ky = 0; ky < 3; ++ky) {
                    const int dy = ky - 1;
                    for (int kx = 0; kx < 3; ++kx) {
                        const int dx = kx - 1;
                        const T wv = w[kz * 9 + ky * 3 + kx];
                        const int x_begin = std::max(0, -dx), x_end = std::min(W, W - dx);
                        for (int z = std::max(0, -dz); z < std::min(K, K - dz); ++z) {
                            for (int y = std::max(0, -dy); y < std::min(H, H - dy); ++y) {
                                const T* irow = in + (static_cast<std::size_t>(z + dz) * H + (y + dy)) * W + dx;
                                T* orow = o + (static_cast<std::size_t>(z) * H + y) * W;
                                for (int x = x_begin; x < x_end; ++x) orow[x] += wv * irow[x];
                            }
                        }
                    }
                }
            }
        }
    }
    return out;
}

namespace {

template <class T>
Volume<T> conv3d_backward_input(const Volume<T>& grad_out, const ConvLayer<T>& layer) {
    const int K = grad_out.depth, H = grad_out.height, W = grad_out.width;
    Volume<T> gin(layer.in_channels, K, H, W);
    const int ci_count = layer.in_channels;
    const std::size_t taps = layer.taps();

    if (layer.kernel == 1) {
        const std::size_t n = grad_out.channel_size();
#pragma omp parallel for schedule(static)
        for (int ci = 0; ci < ci_count; ++ci) {
            T* g = gin.channel(ci);
            for (int co = 0; co < layer.out_channels; ++co) {
                const T w = layer.weight[static_cast<std::size_t>(co) * ci_count + ci];
                const T* go = grad_out.channel(co);
                for (std::size_t q = 0; q < n; ++q) g[q] += w * go[q];
            }
        }
        return gin;
    }

#pragma omp parallel for schedule(static)
    for (int ci = 0; ci < ci_count; ++ci) {
        T* g = gin.channel(ci);
        for (int co = 0; co < layer.out_channels; ++co) {
            const T* go = grad_out.channel(co);
            const T* w = &layer.weight[(static_cast<std::size_t>(co) * ci_count + ci) * taps];
            for (int kz = 0; kz < 3; ++kz) {
                const int dz = kz - 1;
                for (int ky = 0; ky < 3; ++ky) {
                    const int dy = ky - 1;
                    for (int kx = 0; kx < 3; ++kx) {
                        const int dx = kx - 1;
                        const T wv = w[kz * 9 + ky * 3 + kx];
                        const int x_begin = std::max(0, -dx), x_end = std::min(W, W - dx);
                        for (int z = std::max(0, -dz); z < std::min(K, K - dz); ++z) {
                            for (int y = std::max(0, -dy); y < std::min(H, H - dy); ++y) {
                                T* grow = g + (static_cast<std::size_t>(z + dz) * H + (y + dy)) * W + dx;
                                const T* orow = go + (static_cast<std::size_t>(z) * H + y) * W;
                                for (int x = x_begin; x < x_end; ++x) grow[x] += wv * orow[x];
                            }
                        }
                    }
                }
            }
        }
    }
    return gin;
}

template <class T>
void conv3d_backward_weight(const Volume<T>& grad_out, const Volume<T>& input, const ConvLayer<T>& layer,
                            std::vector<T>& grad_w) {
    const int K = input.depth, H = input.height, W = input.width;
    const int ci_count = layer.in_channels;
    const std::size_t taps = layer.taps();
    grad_w.assign(layer.weight.size(), T(0));

    if (layer.kernel == 1) {
        const std::size_t n = input.channel_size();
#pragma omp parallel for schedule(static)
        for (int co = 0; co < layer.out_channels; ++co) {
            const T* go = grad_out.channel(co);
            for (int ci = 0; ci < ci_count; ++ci) {
                const T* in = input.channel(ci);
                double acc = 0.0;
                for (std::size_t q = 0; q < n; ++q) acc += static_cast<double>(go[q]) * in[q];
                grad_w[static_cast<std::size_t>(co) * ci_count + ci] = static_cast<T>(acc);
            }
        }
        return;
    }

#pragma omp parallel for schedule(static)
    for (int co = 0; co < layer.out_channels; ++co) {
        const T* go = grad_out.channel(co);
        for (int ci = 0; ci < ci_count; ++ci) {
            const T* in = input.channel(ci);
            T* gw = &grad_w[(static_cast<std::size_t>(co) * ci_count + ci) * taps];
            for (int kz = 0; kz < 3; ++kz) {
                const int dz = kz - 1;
                for (int ky = 0; ky < 3; ++ky) {
                    const int dy = ky - 1;
                    for (int kx = 0; kx < 3; ++kx) {
                        const int dx = kx - 1;
                        const int x_begin = std::max(0, -dx), x_end = std::min(W, W - dx);
                        double acc = 0.0;
                        for (int z = std::max(0, -dz); z < std::min(K, K - dz); ++z) {
                            for (int y = std::max(0, -dy); y < std::min(H, H - dy); ++y) {
                                const T* irow = in + (static_cast<std::size_t>(z + dz) * H + (y + dy)) * W + dx;
                                const T* orow = go + (static_cast<std::size_t>(z) * H + y) * W;
                                double row = 0.0;
                                for (int x = x_begin; x < x_end; ++x) row += static_cast<double>(orow[x]) * irow[x];
                                acc += row;
                            }
                        }
                        gw[kz * 9 + ky * 3 + kx] = static_cast<T>(acc);
                    }
                }
            }
        }
    }
}

template <class T>
struct ForwardTape {
    std::vector<Volume<T>> inputs;  // input of each layer
    std::vector<Volume<T>> pre;     // convolution output (+ bias for the last layer)
    Volume<T> output;
};

template <class T>
ForwardTape<T> forward_with_tape(const ConvNetParams<T>& params, const Volume<T>& input) {
    require(!params.layers.empty(), "network has no layers");
    require(input.channels == params.input_channels(), "network input channel mismatch");
    ForwardTape<T> tape;
    Volume<T> x = input;
    for (const auto& layer : params.layers) {
        Volume<T> pre = conv3d(x, layer);
        tape.inputs.push_back(std::move(x));
        const std::size_t n = pre.channel_size();
        Volume<T> next(pre.channels, pre.depth, pre.height, pre.width);
        for (int c = 0; c < pre.channels; ++c) {
            T* p = pre.channel(c);
            T* o = next.channel(c);
            if (layer.block) {
                const T s = layer.scale[c], b = layer.shift[c];
                for (std::size_t q = 0; q < n; ++q) o[q] = std::max(T(0), s * p[q] + b);
            } else {
                const T b = layer.bias[c];
                for (std::size_t q = 0; q < n; ++q) p[q] += b;
            }
        }
        if (!layer.block) {
            for (int c = 0; c < pre.channels; ++c) {
                const T* p = pre.channel(c);
                T* o = next.channel(c);
                for (std::size_t q = 0; q < n; ++q) {
                    if (params.activation == OutputActivation::initializer) {
                        o[q] = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(p[q]))));
                    } else {
                        o[q] = c == 3 ? static_cast<T>(4.0 * std::tanh(static_cast<double>(p[q]))) : p[q];
                    }
                }
            }
        }
        tape.pre.push_back(std::move(pre));
        x = std::move(next);
    }
    tape.output = std::move(x);
    return tape;
}

}  // namespace

template <class T>
Volume<T> conv_forward(const ConvNetParams<T>& params, const Volume<T>& input) {
    return forward_with_tape(params, input).output;
}

template <class T>
ConvGradients<T> conv_backward(const ConvNetParams<T>& params, const Volume<T>& input, const Volume<T>& upstream) {
    ForwardTape<T> tape = forward_with_tape(params, input);
    require(upstream.same_shape(tape.output), "upstream gradient shape mismatch");
    ConvGradients<T> grads;
    grads.params = params.zeros_like();

    Volume<T> g = upstream;
    for (int li = static_cast<int>(params.layers.size()) - 1; li >= 0; --li) {
        const ConvLayer<T>& layer = params.layers[li];
        ConvLayer<T>& gl = grads.params.layers[li];
        const Volume<T>& pre = tape.pre[li];
        const std::size_t n = pre.channel_size();
        Volume<T> gpre(pre.channels, pre.depth, pre.height, pre.width);
        for (int c = 0; c < pre.channels; ++c) {
            const T* p = pre.channel(c);
            const T* go = g.channel(c);
            T* gp = gpre.channel(c);
            if (layer.block) {
                const T s = layer.scale[c], b = layer.shift[c];
                double gs = 0.0, gb = 0.0;
                for (std::size_t q = 0; q < n; ++q) {
                    const T ga = (s * p[q] + b) > T(0) ? go[q] : T(0);
                    gs += static_cast<double>(ga) * p[q];
                    gb += ga;
                    gp[q] = ga * s;
                }
                gl.scale[c] = static_cast<T>(gs);
                gl.shift[c] = static_cast<T>(gb);
            } else {
                double gb = 0.0;
                for (std::size_t q = 0; q < n; ++q) {
                    double d;
                    if (params.activation == OutputActivation::initializer) {
                        const double sg = 1.0 / (1.0 + std::exp(-static_cast<double>(p[q])));
                        d = sg * (1.0 - sg);
                    } else if (c == 3) {
                        const double t = std::tanh(static_cast<double>(p[q]));
                        d = 4.0 * (1.0 - t * t);
                    } else {
                        d = 1.0;
                    }
                    gp[q] = static_cast<T>(go[q] * d);
                    gb += gp[q];
                }
                gl.bias[c] = static_cast<T>(gb);
            }
        }
        conv3d_backward_weight(gpre, tape.inputs[li], layer, gl.weight);
        g = conv3d_backward_input(gpre, layer);
    }
    grads.input = std::move(g);
    return grads;
}

#define HSGD_INSTANTIATE_CONV(T)                                                                          \
    template struct ConvNetParams<T>;                                                                     \
    template ConvNetParams<T> make_convnet(int, int, int, OutputActivation, std::uint64_t);               \
    template Volume<T> conv3d(const Volume<T>&, const ConvLayer<T>&);                                     \
    template Volume<T> conv_forward(const ConvNetParams<T>&, const Volume<T>&);                           \
    template ConvGradients<T> conv_backward(const ConvNetParams<T>&, const Volume<T>&, const Volume<T>&);

HSGD_INSTANTIATE_CONV(float)
HSGD_INSTANTIATE_CONV(double)

}  // namespace hsgd
