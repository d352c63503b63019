#pragma once

#include <Eigen/Core>
#include <Eigen/LU>

#include <cmath>
#include <vector>

#include "hsgd/common.hpp"

namespace hsgd {

/// Pinhole camera with world-to-camera pose. Pixel (x, y) integer coordinates
/// address pixel centers; x runs along image columns.
struct CameraModel {
    Eigen::Matrix3d intrinsics = Eigen::Matrix3d::Identity();
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();
    int height = 0;
    int width = 0;

    /// Throws ParameterError when K, R or the image size break their invariants.
    void validate() const;
    Eigen::Vector3d center() const { return -rotation.transpose() * translation; }

    /// Same pose seen through an image box-downsampled by 2 (ceil division).
    CameraModel halved() const;
};

/// Simple constructor for the common fronto-parallel rig case.
CameraModel make_camera(double focal, int height, int width, const Eigen::Matrix3d& rotation,
                        const Eigen::Vector3d& translation);

enum class DepthSpacing { inverse_depth, linear };

struct DepthSampling {
    double near = 1.0;
    double far = 100.0;
    int count = 40;
    DepthSpacing spacing = DepthSpacing::inverse_depth;
};

/// Plane depths ordered far to near: index 0 is the farthest plane.
std::vector<double> depth_planes(const DepthSampling& sampling);

struct Homography {
    Eigen::Matrix3d matrix = Eigen::Matrix3d::Identity();

    Eigen::Vector2d apply(double x, double y) const {
        const Eigen::Vector3d p = matrix * Eigen::Vector3d(x, y, 1.0);
        return {p.x() / p.z(), p.y() / p.z()};
    }
};

inline Eigen::Vector3d fronto_parallel_normal() { return {0.0, 0.0, 1.0}; }

/// Maps reference pixels onto source pixels for the plane n^T X = d expressed
/// in the reference camera frame.
Homography inverse_homography(const CameraModel& ref, const CameraModel& src, double depth,
                              const Eigen::Vector3d& normal = fronto_parallel_normal());

/// Maps source pixels back onto reference pixels (matrix inverse of the above).
Homography forward_homography(const CameraModel& ref, const CameraModel& src, double depth,
                              const Eigen::Vector3d& normal = fronto_parallel_normal());

/// Row-major 3x3 copy of a homography, used by the inner sampling loops.
struct HomographyRows {
    double m[9];

    explicit HomographyRows(const Homography& h) {
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) m[r * 3 + c] = h.matrix(r, c);
    }
};

/// Bilinear footprint of one sample position. The forward warp and every
/// adjoint path call this so their weights agree bit for bit.
struct Footprint {
    int x0 = 0;
    int y0 = 0;
    double fx = 0.0;
    double fy = 0.0;
    bool valid = false;
};

inline Footprint sample_footprint(const HomographyRows& h, int x, int y) {
    const double px = h.m[0] * x + h.m[1] * y + h.m[2];
    const double py = h.m[3] * x + h.m[4] * y + h.m[5];
    const double pz = h.m[6] * x + h.m[7] * y + h.m[8];
    Footprint f;
    if (!(std::abs(pz) > 1e-12)) return f;
    const double sx = px / pz;
    const double sy = py / pz;
    if (!std::isfinite(sx) || !std::isfinite(sy) || std::abs(sx) > 1e9 || std::abs(sy) > 1e9) return f;
    const double flx = std::floor(sx);
    const double fly = std::floor(sy);
    f.x0 = static_cast<int>(flx);
    f.y0 = static_cast<int>(fly);
    f.fx = sx - flx;
    f.fy = sy - fly;
    f.valid = true;
    return f;
}

/// Weight the footprint puts on source pixel (x, y); zero outside the 2x2 support.
inline double footprint_weight(const Footprint& f, int x, int y) {
    if (!f.valid) return 0.0;
    double wx;
    if (x == f.x0) wx = 1.0 - f.fx;
    else if (x == f.x0 + 1) wx = f.fx;
    else return 0.0;
    double wy;
    if (y == f.y0) wy = 1.0 - f.fy;
    else if (y == f.y0 + 1) wy = f.fy;
    else return 0.0;
    return wx * wy;
}

/// Destination pixel (x, y) samples the source at h * [x, y, 1] with bilinear
/// interpolation; samples outside the source contribute zero.
template <class T>
Image<T> warp_image(const Image<T>& image, const Homography& h, int out_height, int out_width);

template <class T>
Image<T> warp_image(const Image<T>& image, const Homography& h) {
    return warp_image(image, h, image.height, image.width);
}

/// Transpose of warp_image: pulls gradient mass from the destination grid back
/// onto the source grid. Evaluated in gather form, one source pixel at a time.
template <class T>
Image<T> warp_adjoint(const Image<T>& grad_out, const Homography& h, int src_height, int src_width);

/// Destination-pixel bounding box whose samples can touch source pixel (x, y).
struct PixelBox {
    int x_begin = 0, x_end = 0, y_begin = 0, y_end = 0;  // half-open
};

/// `inverse` maps source pixels to destination pixels (inverse of the sampling map).
PixelBox adjoint_candidates(const HomographyRows& inverse, int x, int y, int dst_height, int dst_width);

/// Accumulates sum_p w_p(x, y) * field[p, 0..channels) for one source pixel.
/// `field` is an interleaved dst_height x dst_width x channels array.
template <class T>
inline void adjoint_gather(const T* field, int channels, int dst_height, int dst_width,
                           const HomographyRows& sampling, const HomographyRows& inverse, int x, int y,
                           double* out) {
    for (int c = 0; c < channels; ++c) out[c] = 0.0;
    const PixelBox box = adjoint_candidates(inverse, x, y, dst_height, dst_width);
    for (int py = box.y_begin; py < box.y_end; ++py) {
        for (int px = box.x_begin; px < box.x_end; ++px) {
            const double w = footprint_weight(sample_footprint(sampling, px, py), x, y);
            if (w == 0.0) continue;
            const T* g = field + (static_cast<std::size_t>(py) * dst_width + px) * channels;
            for (int c = 0; c < channels; ++c) out[c] += w * static_cast<double>(g[c]);
        }
    }
}

}  // namespace hsgd
