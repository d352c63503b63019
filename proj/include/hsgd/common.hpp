#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace hsgd {

/// Invalid arguments: bad shapes, out-of-range knobs, inconsistent inputs.
class ParameterError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Non-finite values or degenerate geometry encountered mid-computation.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed files or bundles on disk.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Interleaved H x W x C image.
template <class T>
struct Image {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<T> data;

    Image() = default;
    Image(int h, int w, int c, T fill = T(0))
        : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {}

    std::size_t index(int y, int x, int c = 0) const {
        return (static_cast<std::size_t>(y) * width + x) * channels + c;
    }
    T& at(int y, int x, int c = 0) { return data[index(y, x, c)]; }
    const T& at(int y, int x, int c = 0) const { return data[index(y, x, c)]; }
    std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }
    bool same_shape(const Image& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }

    template <class U>
    Image<U> cast() const {
        Image<U> out(height, width, channels);
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

/// Channel-planar C x D x H x W volume, the layout the 3D convolutions use.
template <class T>
struct Volume {
    int channels = 0;
    int depth = 0;
    int height = 0;
    int width = 0;
    std::vector<T> data;

    Volume() = default;
    Volume(int c, int d, int h, int w, T fill = T(0))
        : channels(c), depth(d), height(h), width(w),
          data(static_cast<std::size_t>(c) * d * h * w, fill) {}

    std::size_t plane_size() const { return static_cast<std::size_t>(height) * width; }
    std::size_t channel_size() const { return plane_size() * depth; }
    std::size_t index(int c, int d, int y, int x) const {
        return ((static_cast<std::size_t>(c) * depth + d) * height + y) * width + x;
    }
    T& at(int c, int d, int y, int x) { return data[index(c, d, y, x)]; }
    const T& at(int c, int d, int y, int x) const { return data[index(c, d, y, x)]; }
    T* channel(int c) { return data.data() + c * channel_size(); }
    const T* channel(int c) const { return data.data() + c * channel_size(); }
    bool same_shape(const Volume& o) const {
        return channels == o.channels && depth == o.depth && height == o.height && width == o.width;
    }

    template <class U>
    Volume<U> cast() const {
        Volume<U> out(channels, depth, height, width);
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

inline void require(bool cond, const std::string& what) {
    if (!cond) throw ParameterError(what);
}

}  // namespace hsgd
