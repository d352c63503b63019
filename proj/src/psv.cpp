#include "hsgd/psv.hpp"

#include <algorithm>

namespace hsgd {

template <class T>
Image<T> Psv<T>::slice(int view, int d) const {
    Image<T> img(height, width, 3);
    const std::size_t off = offset(view, d);
    std::copy(data.begin() + off, data.begin() + off + plane_size() * 3, img.data.begin());
    return img;
}

template <class T>
Psv<T> build_psv(std::span<const PosedImage<T>> images, const CameraModel& ref, const std::vector<double>& depths) {
    require(!images.empty(), "plane sweep volume needs at least one view");
    require(!depths.empty(), "plane sweep volume needs at least one depth");
    ref.validate();
    for (const auto& v : images) {
        v.camera.validate();
        require(v.image.height == ref.height && v.image.width == ref.width && v.image.channels == 3,
                "source image size must match the reference camera");
        require(v.camera.height == ref.height && v.camera.width == ref.width,
                "source camera size must match the reference camera");
    }

    Psv<T> p;
    p.views = static_cast<int>(images.size());
    p.planes = static_cast<int>(depths.size());
    p.height = ref.height;
    p.width = ref.width;
    p.ref_camera = ref;
    p.depths = depths;
    p.data.assign(static_cast<std::size_t>(p.views) * p.planes * p.plane_size() * 3, T(0));
    for (const auto& v : images) p.view_cameras.push_back(v.camera);

    for (int i = 0; i < p.views; ++i) {
        for (int d = 0; d < p.planes; ++d) {
            const Homography h = inverse_homography(ref, images[i].camera, depths[d]);
            const Image<T> w = warp_image(images[i].image, h, p.height, p.width);
            std::copy(w.data.begin(), w.data.end(), p.data.begin() + p.offset(i, d));
        }
    }
    return p;
}

template <class T>
Image<T> downsample2(const Image<T>& image) {
    const int h = (image.height + 1) / 2;
    const int w = (image.width + 1) / 2;
    Image<T> out(h, w, image.channels);
#pragma omp parallel for schedule(static)
    for (int y = 0; y < h; ++y) {
        const int y1 = std::min(2 * y + 1, image.height - 1);
        for (int x = 0; x < w; ++x) {
            const int x1 = std::min(2 * x + 1, image.width - 1);
            for (int c = 0; c < image.channels; ++c) {
                double acc = 0.0;
                int count = 0;
                for (int yy = 2 * y; yy <= y1; ++yy) {
                    for (int xx = 2 * x; xx <= x1; ++xx) {
                        acc += image.at(yy, xx, c);
                        ++count;
                    }
                }
                out.at(y, x, c) = static_cast<T>(acc / count);
            }
        }
    }
    return out;
}

template <class T>
static Psv<T> halve(const Psv<T>& p) {
    Psv<T> q;
    q.views = p.views;
    q.planes = p.planes;
    q.height = (p.height + 1) / 2;
    q.width = (p.width + 1) / 2;
    q.ref_camera = p.ref_camera.halved();
    q.depths = p.depths;
    for (const auto& c : p.view_cameras) q.view_cameras.push_back(c.halved());
    q.data.assign(static_cast<std::size_t>(q.views) * q.planes * q.plane_size() * 3, T(0));
    for (int i = 0; i < p.views; ++i) {
        for (int d = 0; d < p.planes; ++d) {
            const Image<T> s = downsample2(p.slice(i, d));
            std::copy(s.data.begin(), s.data.end(), q.data.begin() + q.offset(i, d));
        }
    }
    return q;
}

template <class T>
PsvPyramid<T> build_pyramid(const Psv<T>& p, int levels) {
    require(levels >= 0, "pyramid level count must be non-negative");
    require(levels < 31 && (1 << levels) <= std::min(p.height, p.width),
            "too many pyramid levels for the image size");
    PsvPyramid<T> pyr;
    pyr.levels.reserve(static_cast<std::size_t>(levels) + 1);
    pyr.levels.push_back(p);
    for (int l = 0; l < levels; ++l) pyr.levels.push_back(halve(pyr.levels.back()));
    return pyr;
}

#define HSGD_INSTANTIATE_PSV(T)                                                                            \
    template struct Psv<T>;                                                                                \
    template Psv<T> build_psv(std::span<const PosedImage<T>>, const CameraModel&, const std::vector<double>&); \
    template Image<T> downsample2(const Image<T>&);                                                        \
    template PsvPyramid<T> build_pyramid(const Psv<T>&, int);

HSGD_INSTANTIATE_PSV(float)
HSGD_INSTANTIATE_PSV(double)

}  // namespace hsgd
