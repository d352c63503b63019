#pragma once

// Independent double-precision reference computations for the tests. Nothing
// here calls into the library's numeric kernels.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "hsgd/geometry.hpp"
#include "hsgd/mpi.hpp"

namespace oracle {

/// Back-to-front over operator on one pixel; planes ordered far (0) to near.
inline double composite(const std::vector<double>& c, const std::vector<double>& a) {
    double out = 0.0;
    for (std::size_t d = 0; d < a.size(); ++d) out = c[d] * a[d] + out * (1.0 - a[d]);
    return out;
}

/// Contribution of plane d: a_d times the transmittance of everything nearer.
inline double contribution(const std::vector<double>& a, std::size_t d) {
    double t = a[d];
    for (std::size_t j = d + 1; j < a.size(); ++j) t *= 1.0 - a[j];
    return t;
}

inline double transmittance(const std::vector<double>& a) {
    double t = 1.0;
    for (double v : a) t *= 1.0 - v;
    return t;
}

inline double central_difference(const std::function<double(double)>& f, double x, double h) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

inline double relative_error(double a, double b, double floor = 1e-8) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Where reference pixel (x, y) on the fronto-parallel plane z = depth lands in `src`.
inline Eigen::Vector2d project_through_plane(const hsgd::CameraModel& ref, const hsgd::CameraModel& src,
                                             double depth, double x, double y) {
    const Eigen::Vector3d ray = ref.intrinsics.inverse() * Eigen::Vector3d(x, y, 1.0);
    const Eigen::Vector3d cam_ref = ray * (depth / ray.z());
    const Eigen::Vector3d world = ref.rotation.transpose() * (cam_ref - ref.translation);
    const Eigen::Vector3d p = src.intrinsics * (src.rotation * world + src.translation);
    return {p.x() / p.z(), p.y() / p.z()};
}

/// Bilinear sample with zero outside the image, channel c.
template <class T>
double bilinear(const hsgd::Image<T>& img, double sx, double sy, int c) {
    const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
    const double fx = sx - x0, fy = sy - y0;
    double out = 0.0;
    for (int dy = 0; dy < 2; ++dy) {
        for (int dx = 0; dx < 2; ++dx) {
            const int x = x0 + dx, y = y0 + dy;
            if (x < 0 || y < 0 || x >= img.width || y >= img.height) continue;
            const double w = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy);
            out += w * static_cast<double>(img.at(y, x, c));
        }
    }
    return out;
}

inline double sparsity_integrand(double a) { return std::log(1.5 - std::abs(0.5 - a)); }

/// Adam on a single scalar with constant gradient sequence.
inline double adam_scalar(double p, const std::vector<double>& grads, double lr, double b1 = 0.9, double b2 = 0.999,
                          double eps = 1e-8) {
    double m = 0.0, v = 0.0;
    for (std::size_t t = 1; t <= grads.size(); ++t) {
        const double g = grads[t - 1];
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        const double mh = m / (1.0 - std::pow(b1, static_cast<double>(t)));
        const double vh = v / (1.0 - std::pow(b2, static_cast<double>(t)));
        p -= lr * mh / (std::sqrt(vh) + eps);
    }
    return p;
}

/// Largest k-subset sum of `g` by exhaustive enumeration.
inline double best_subset_sum(const std::vector<double>& g, int k) {
    const int n = static_cast<int>(g.size());
    double best = -1e300;
    for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
        if (__builtin_popcount(mask) != k) continue;
        double s = 0.0;
        for (int i = 0; i < n; ++i)
            if (mask & (1u << i)) s += g[i];
        best = std::max(best, s);
    }
    return best;
}

inline double psnr(double mse) { return 10.0 * std::log10(1.0 / mse); }

/// Fronto-parallel camera at world position `center` with identity rotation.
inline hsgd::CameraModel camera_at(double focal, int h, int w, const Eigen::Vector3d& center) {
    return hsgd::make_camera(focal, h, w, Eigen::Matrix3d::Identity(), -center);
}

template <class T>
hsgd::Mpi<T> random_mpi(int planes, int h, int w, std::uint64_t seed, double alpha_lo = 0.05,
                        double alpha_hi = 0.95) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uc(0.0, 1.0), ua(alpha_lo, alpha_hi);
    std::vector<double> depths;
    for (int d = 0; d < planes; ++d) depths.push_back(10.0 / (1.0 + d));
    hsgd::Mpi<T> m(planes, h, w, depths, camera_at(static_cast<double>(w), h, w, Eigen::Vector3d::Zero()));
    for (auto& c : m.color) c = static_cast<T>(uc(rng));
    for (auto& a : m.alpha) a = static_cast<T>(ua(rng));
    return m;
}

}  // namespace oracle
