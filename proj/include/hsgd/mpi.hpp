#pragma once

#include <vector>

#include "hsgd/common.hpp"
#include "hsgd/geometry.hpp"

namespace hsgd {

/// D fronto-parallel RGBA planes in the reference frustum. Plane 0 is the
/// farthest, plane D-1 the nearest; colors are D x H x W x 3 interleaved and
/// alphas D x H x W.
template <class T>
struct Mpi {
    int planes = 0;
    int height = 0;
    int width = 0;
    std::vector<T> color;
    std::vector<T> alpha;
    std::vector<double> depths;
    CameraModel ref_camera;

    Mpi() = default;
    Mpi(int d, int h, int w, std::vector<double> plane_depths, CameraModel camera)
        : planes(d), height(h), width(w),
          color(static_cast<std::size_t>(d) * h * w * 3, T(0)),
          alpha(static_cast<std::size_t>(d) * h * w, T(0)),
          depths(std::move(plane_depths)), ref_camera(std::move(camera)) {}

    std::size_t plane_size() const { return static_cast<std::size_t>(height) * width; }
    std::size_t voxel(int d, int y, int x) const {
        return (static_cast<std::size_t>(d) * height + y) * width + x;
    }
    T& c(int d, int y, int x, int ch) { return color[voxel(d, y, x) * 3 + ch]; }
    const T& c(int d, int y, int x, int ch) const { return color[voxel(d, y, x) * 3 + ch]; }
    T& a(int d, int y, int x) { return alpha[voxel(d, y, x)]; }
    const T& a(int d, int y, int x) const { return alpha[voxel(d, y, x)]; }

    /// Throws ParameterError on shape, range or depth-order violations.
    void validate() const;

    Image<T> color_plane(int d) const;
    Image<T> alpha_plane(int d) const;
    void set_color_plane(int d, const Image<T>& img);
    void set_alpha_plane(int d, const Image<T>& img);

    template <class U>
    Mpi<U> cast() const {
        Mpi<U> out(planes, height, width, depths, ref_camera);
        for (std::size_t i = 0; i < color.size(); ++i) out.color[i] = static_cast<U>(color[i]);
        for (std::size_t i = 0; i < alpha.size(); ++i) out.alpha[i] = static_cast<U>(alpha[i]);
        return out;
    }
};

/// Per-pixel contribution weights A_d = alpha_d * prod_{j>d} (1 - alpha_j).
template <class T>
struct AlphaGradientVolume {
    int planes = 0;
    int height = 0;
    int width = 0;
    std::vector<T> values;

    std::size_t voxel(int d, int y, int x) const {
        return (static_cast<std::size_t>(d) * height + y) * width + x;
    }
    const T& at(int d, int y, int x) const { return values[voxel(d, y, x)]; }
};

template <class T>
Image<T> over_composite(const Mpi<T>& m);

template <class T>
AlphaGradientVolume<T> alpha_gradients(const Mpi<T>& m);

/// Alpha gradients of a bare alpha stack (D x H x W).
template <class T>
std::vector<T> alpha_gradients(const std::vector<T>& alpha, int planes, int height, int width);

/// Backward of alpha_gradients: given dL/dA, returns dL/dalpha (prefix/suffix form).
template <class T>
std::vector<T> alpha_gradients_backward(const std::vector<T>& alpha, const std::vector<T>& grad_a, int planes,
                                        int height, int width);

/// Every plane warped into `target` with that plane's forward homography.
template <class T>
Mpi<T> warp_mpi(const Mpi<T>& m, const CameraModel& target);

template <class T>
Image<T> render_novel_view(const Mpi<T>& m, const CameraModel& target);

template <class T>
struct MpiGradients {
    std::vector<T> color;  // D x H x W x 3
    std::vector<T> alpha;  // D x H x W
};

/// Target-space quantities for the photometric loss
///   weight * mean((render(target) - gt)^2)
/// from which reference-voxel gradients are pulled one voxel at a time.
template <class T>
struct ViewGradientField {
    int planes = 0;
    int height = 0;  // target grid
    int width = 0;
    std::vector<HomographyRows> sampling;  // target pixel -> reference pixel, per plane
    std::vector<HomographyRows> inverse;   // reference pixel -> target pixel, per plane
    std::vector<T> grad;                   // D x h x w x 4: dL/d(warped rgb, warped alpha)
    double loss = 0.0;
};

template <class T>
ViewGradientField<T> view_gradient_field(const Mpi<T>& m, const CameraModel& target, const Image<T>& gt,
                                         double weight = 1.0);

/// dL/d(color[0..3), alpha) of the reference voxel (d, y, x), accumulated into `out`.
template <class T>
void accumulate_voxel_gradient(const ViewGradientField<T>& field, int d, int y, int x, int ref_height,
                               int ref_width, double out[4]);

/// Analytic gradients of mean((render_novel_view(m, target) - gt)^2).
template <class T>
MpiGradients<T> render_loss_gradients(const Mpi<T>& m, const CameraModel& target, const Image<T>& gt,
                                      double weight = 1.0);

template <class T>
double mean_squared_error(const Image<T>& a, const Image<T>& b);

template <class T>
double empty_fraction(const Mpi<T>& m, double threshold);

}  // namespace hsgd
