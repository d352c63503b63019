#include "hsgd/geometry.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <limits>

namespace hsgd {

void CameraModel::validate() const {
    require(height > 0 && width > 0, "camera image size must be positive");
    const Eigen::Matrix3d& k = intrinsics;
    require(k(1, 0) == 0.0 && k(2, 0) == 0.0 && k(2, 1) == 0.0, "intrinsics must be upper triangular");
    require(k(0, 0) > 0.0 && k(1, 1) > 0.0, "focal lengths must be positive");
    require(k(2, 2) != 0.0, "intrinsics must be invertible");
    const double dev = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    require(dev < 1e-6, "rotation must be orthonormal");
    require(translation.allFinite(), "translation must be finite");
}

CameraModel CameraModel::halved() const {
    CameraModel out = *this;
    Eigen::Matrix3d s = Eigen::Matrix3d::Identity();
    // Pixel centers: coarse u' = (u + 0.5) / 2 - 0.5.
    s(0, 0) = 0.5;
    s(1, 1) = 0.5;
    s(0, 2) = -0.25;
    s(1, 2) = -0.25;
    out.intrinsics = s * intrinsics;
    out.height = (height + 1) / 2;
    out.width = (width + 1) / 2;
    return out;
}

CameraModel make_camera(double focal, int height, int width, const Eigen::Matrix3d& rotation,
                        const Eigen::Vector3d& translation) {
    CameraModel cam;
    cam.intrinsics << focal, 0.0, 0.5 * (width - 1), 0.0, focal, 0.5 * (height - 1), 0.0, 0.0, 1.0;
    cam.rotation = rotation;
    cam.translation = translation;
    cam.height = height;
    cam.width = width;
    return cam;
}

std::vector<double> depth_planes(const DepthSampling& s) {
    require(s.near > 0.0 && s.far > s.near, "depth sampling requires 0 < near < far");
    require(s.count >= 1, "depth sampling requires at least one plane");
    if (s.count == 1) return {s.near};

    std::vector<double> depths(static_cast<std::size_t>(s.count));
    const int last = s.count - 1;
    for (int i = 0; i < s.count; ++i) {
        const double t = static_cast<double>(i) / last;
        if (s.spacing == DepthSpacing::linear) {
            depths[i] = s.far + t * (s.near - s.far);
        } else {
            depths[i] = 1.0 / (1.0 / s.far + t * (1.0 / s.near - 1.0 / s.far));
        }
    }
    depths.front() = s.far;
    depths.back() = s.near;
    return depths;
}

Homography inverse_homography(const CameraModel& ref, const CameraModel& src, double depth,
                              const Eigen::Vector3d& normal) {
    require(depth > 0.0, "homography depth must be positive");
    require(std::abs(normal.norm() - 1.0) < 1e-9, "plane normal must be unit length");
    const double det_ref = ref.intrinsics.determinant();
    const double det_src = src.intrinsics.determinant();
    require(std::abs(det_ref) > 1e-12 && std::abs(det_src) > 1e-12, "singular intrinsics");
    if (ref.intrinsics == src.intrinsics && ref.rotation == src.rotation && ref.translation == src.translation) {
        return Homography{};
    }

    const Eigen::Matrix3d r_ref_inv = ref.rotation.transpose();
    const Eigen::Matrix3d r_src_inv = src.rotation.transpose();
    const Eigen::Vector3d center_offset = r_src_inv * src.translation - r_ref_inv * ref.translation;
    const Eigen::Matrix3d plane =
        Eigen::Matrix3d::Identity() + center_offset * normal.transpose() * ref.rotation / depth;

    Homography h;
    h.matrix = src.intrinsics * src.rotation * plane * r_ref_inv * ref.intrinsics.inverse();
    return h;
}

Homography forward_homography(const CameraModel& ref, const CameraModel& src, double depth,
                              const Eigen::Vector3d& normal) {
    const Homography inv = inverse_homography(ref, src, depth, normal);
    const double det = inv.matrix.determinant();
    if (!(std::abs(det) > 1e-12) || !std::isfinite(det)) {
        throw NumericError("plane homography is not invertible");
    }
    Homography h;
    h.matrix = inv.matrix.inverse();
    return h;
}

PixelBox adjoint_candidates(const HomographyRows& inv, int x, int y, int dst_height, int dst_width) {
    PixelBox box;
    double min_x = std::numeric_limits<double>::infinity();
    double min_y = min_x;
    double max_x = -min_x;
    double max_y = -min_x;
    bool full = false;
    for (int dy = -1; dy <= 1 && !full; dy += 2) {
        for (int dx = -1; dx <= 1; dx += 2) {
            const double cx = x + dx;
            const double cy = y + dy;
            const double pz = inv.m[6] * cx + inv.m[7] * cy + inv.m[8];
            if (!(pz > 1e-12)) {
                full = true;
                break;
            }
            const double px = (inv.m[0] * cx + inv.m[1] * cy + inv.m[2]) / pz;
            const double py = (inv.m[3] * cx + inv.m[4] * cy + inv.m[5]) / pz;
            min_x = std::min(min_x, px);
            max_x = std::max(max_x, px);
            min_y = std::min(min_y, py);
            max_y = std::max(max_y, py);
        }
    }
    if (full || !std::isfinite(min_x) || !std::isfinite(max_x) || !std::isfinite(min_y) ||
        !std::isfinite(max_y)) {
        box.x_end = dst_width;
        box.y_end = dst_height;
        return box;
    }
    const auto clip = [](double v, int lo, int hi) {
        return static_cast<int>(std::clamp(v, static_cast<double>(lo), static_cast<double>(hi)));
    };
    box.x_begin = clip(std::floor(min_x), 0, dst_width);
    box.x_end = clip(std::ceil(max_x) + 1.0, 0, dst_width);
    box.y_begin = clip(std::floor(min_y), 0, dst_height);
    box.y_end = clip(std::ceil(max_y) + 1.0, 0, dst_height);
    return box;
}

template <class T>
Image<T> warp_image(const Image<T>& image, const Homography& h, int out_height, int out_width) {
    Image<T> out(out_height, out_width, image.channels);
    const HomographyRows rows(h);
    const int channels = image.channels;
    const int sh = image.height;
    const int sw = image.width;

#pragma omp parallel for schedule(static)
    for (int y = 0; y < out_height; ++y) {
        for (int x = 0; x < out_width; ++x) {
            const Footprint f = sample_footprint(rows, x, y);
            if (!f.valid) continue;
            const double w00 = (1.0 - f.fx) * (1.0 - f.fy);
            const double w10 = f.fx * (1.0 - f.fy);
            const double w01 = (1.0 - f.fx) * f.fy;
            const double w11 = f.fx * f.fy;
            const int xs[2] = {f.x0, f.x0 + 1};
            const int ys[2] = {f.y0, f.y0 + 1};
            const double ws[4] = {w00, w10, w01, w11};
            T* dst = &out.at(y, x, 0);
            for (int c = 0; c < channels; ++c) {
                double acc = 0.0;
                for (int j = 0; j < 2; ++j) {
                    if (ys[j] < 0 || ys[j] >= sh) continue;
                    for (int i = 0; i < 2; ++i) {
                        if (xs[i] < 0 || xs[i] >= sw) continue;
                        const double w = ws[j * 2 + i];
                        if (w == 0.0) continue;
                        acc += w * static_cast<double>(image.at(ys[j], xs[i], c));
                    }
                }
                dst[c] = static_cast<T>(acc);
            }
        }
    }
    return out;
}

template <class T>
Image<T> warp_adjoint(const Image<T>& grad_out, const Homography& h, int src_height, int src_width) {
    Image<T> out(src_height, src_width, grad_out.channels);
    const HomographyRows sampling(h);
    const HomographyRows inverse(Homography{h.matrix.inverse()});
    const int channels = grad_out.channels;

#pragma omp parallel for schedule(static)
    for (int y = 0; y < src_height; ++y) {
        std::vector<double> acc(static_cast<std::size_t>(channels));
        for (int x = 0; x < src_width; ++x) {
            adjoint_gather(grad_out.data.data(), channels, grad_out.height, grad_out.width, sampling, inverse,
                           x, y, acc.data());
            for (int c = 0; c < channels; ++c) out.at(y, x, c) = static_cast<T>(acc[c]);
        }
    }
    return out;
}

template Image<float> warp_image(const Image<float>&, const Homography&, int, int);
template Image<double> warp_image(const Image<double>&, const Homography&, int, int);
template Image<float> warp_adjoint(const Image<float>&, const Homography&, int, int);
template Image<double> warp_adjoint(const Image<double>&, const Homography&, int, int);

}  // namespace hsgd
