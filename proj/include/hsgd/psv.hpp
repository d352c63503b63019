#pragma once

#include <span>
#include <vector>

#include "hsgd/common.hpp"
#include "hsgd/geometry.hpp"

namespace hsgd {

template <class T>
struct PosedImage {
    Image<T> image;
    CameraModel camera;
};

/// N x D x H x W x 3 stack of source images inverse-warped onto each plane.
template <class T>
struct Psv {
    int views = 0;
    int planes = 0;
    int height = 0;
    int width = 0;
    std::vector<T> data;
    std::vector<CameraModel> view_cameras;
    CameraModel ref_camera;
    std::vector<double> depths;

    std::size_t plane_size() const { return static_cast<std::size_t>(height) * width; }
    std::size_t offset(int view, int d) const {
        return ((static_cast<std::size_t>(view) * planes + d) * plane_size()) * 3;
    }
    const T& at(int view, int d, int y, int x, int c) const {
        return data[offset(view, d) + (static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
    Image<T> slice(int view, int d) const;
};

template <class T>
struct PsvPyramid {
    std::vector<Psv<T>> levels;  // levels[0] is full resolution
};

template <class T>
Psv<T> build_psv(std::span<const PosedImage<T>> images, const CameraModel& ref, const std::vector<double>& depths);

/// 2x2 box filter with ceiling division; odd borders average what is available.
template <class T>
Image<T> downsample2(const Image<T>& image);

/// levels = number of halvings; the pyramid holds levels + 1 volumes.
template <class T>
PsvPyramid<T> build_pyramid(const Psv<T>& p, int levels);

}  // namespace hsgd
