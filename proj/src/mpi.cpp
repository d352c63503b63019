#include "hsgd/mpi.hpp"

#include <cmath>
#include <numeric>

namespace hsgd {

template <class T>
void Mpi<T>::validate() const {
    require(planes >= 1 && height >= 1 && width >= 1, "mpi dimensions must be positive");
    require(color.size() == static_cast<std::size_t>(planes) * height * width * 3, "mpi color size mismatch");
    require(alpha.size() == static_cast<std::size_t>(planes) * height * width, "mpi alpha size mismatch");
    require(depths.size() == static_cast<std::size_t>(planes), "mpi depth count mismatch");
    for (std::size_t i = 1; i < depths.size(); ++i) {
        require(depths[i] < depths[i - 1], "mpi depths must decrease from far to near");
    }
    for (T v : color) require(v >= T(0) && v <= T(1), "mpi color outside [0, 1]");
    for (T v : alpha) require(v >= T(0) && v <= T(1), "mpi alpha outside [0, 1]");
}

template <class T>
Image<T> Mpi<T>::color_plane(int d) const {
    Image<T> img(height, width, 3);
    const std::size_t off = voxel(d, 0, 0) * 3;
    std::copy(color.begin() + off, color.begin() + off + plane_size() * 3, img.data.begin());
    return img;
}

template <class T>
Image<T> Mpi<T>::alpha_plane(int d) const {
    Image<T> img(height, width, 1);
    const std::size_t off = voxel(d, 0, 0);
    std::copy(alpha.begin() + off, alpha.begin() + off + plane_size(), img.data.begin());
    return img;
}

template <class T>
void Mpi<T>::set_color_plane(int d, const Image<T>& img) {
    require(img.height == height && img.width == width && img.channels == 3, "color plane shape mismatch");
    std::copy(img.data.begin(), img.data.end(), color.begin() + voxel(d, 0, 0) * 3);
}

template <class T>
void Mpi<T>::set_alpha_plane(int d, const Image<T>& img) {
    require(img.height == height && img.width == width && img.channels == 1, "alpha plane shape mismatch");
    std::copy(img.data.begin(), img.data.end(), alpha.begin() + voxel(d, 0, 0));
}

template <class T>
Image<T> over_composite(const Mpi<T>& m) {
    Image<T> out(m.height, m.width, 3);
    const std::size_t n = m.plane_size();
#pragma omp parallel for schedule(static)
    for (int y = 0; y < m.height; ++y) {
        for (int x = 0; x < m.width; ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * m.width + x;
            double acc[3] = {0.0, 0.0, 0.0};
            for (int d = 0; d < m.planes; ++d) {
                const std::size_t v = d * n + p;
                const double a = m.alpha[v];
                for (int c = 0; c < 3; ++c) acc[c] = m.color[v * 3 + c] * a + acc[c] * (1.0 - a);
            }
            for (int c = 0; c < 3; ++c) out.data[p * 3 + c] = static_cast<T>(acc[c]);
        }
    }
    return out;
}

template <class T>
std::vector<T> alpha_gradients(const std::vector<T>& alpha, int planes, int height, int width) {
    const std::size_t n = static_cast<std::size_t>(height) * width;
    std::vector<T> out(alpha.size());
#pragma omp parallel for schedule(static)
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * width + x;
            double transmittance = 1.0;
            for (int d = planes - 1; d >= 0; --d) {
                const double a = alpha[d * n + p];
                out[d * n + p] = static_cast<T>(a * transmittance);
                transmittance *= 1.0 - a;
            }
        }
    }
    return out;
}

template <class T>
AlphaGradientVolume<T> alpha_gradients(const Mpi<T>& m) {
    AlphaGradientVolume<T> v;
    v.planes = m.planes;
    v.height = m.height;
    v.width = m.width;
    v.values = alpha_gradients(m.alpha, m.planes, m.height, m.width);
    return v;
}

template <class T>
std::vector<T> alpha_gradients_backward(const std::vector<T>& alpha, const std::vector<T>& grad_a, int planes,
                                        int height, int width) {
    // dL/dalpha_e = T_e * (g_e - Q_e), Q_e = sum_{d<e} g_d alpha_d prod_{d<j<e} (1 - alpha_j).
    const std::size_t n = static_cast<std::size_t>(height) * width;
    std::vector<T> out(alpha.size());
#pragma omp parallel for schedule(static)
    for (int y = 0; y < height; ++y) {
        std::vector<double> trans(static_cast<std::size_t>(planes));
        for (int x = 0; x < width; ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * width + x;
            double t = 1.0;
            for (int d = planes - 1; d >= 0; --d) {
                trans[d] = t;
                t *= 1.0 - alpha[d * n + p];
            }
            double behind = 0.0;
            for (int e = 0; e < planes; ++e) {
                const double a = alpha[e * n + p];
                const double g = grad_a[e * n + p];
                out[e * n + p] = static_cast<T>(trans[e] * (g - behind));
                behind = g * a + behind * (1.0 - a);
            }
        }
    }
    return out;
}

template <class T>
Mpi<T> warp_mpi(const Mpi<T>& m, const CameraModel& target) {
    Mpi<T> out(m.planes, target.height, target.width, m.depths, target);
    const std::size_t n_src = m.plane_size();
    const std::size_t n_dst = out.plane_size();
    for (int d = 0; d < m.planes; ++d) {
        Image<T> rgba(m.height, m.width, 4);
        for (std::size_t p = 0; p < n_src; ++p) {
            const std::size_t v = d * n_src + p;
            for (int c = 0; c < 3; ++c) rgba.data[p * 4 + c] = m.color[v * 3 + c];
            rgba.data[p * 4 + 3] = m.alpha[v];
        }
        const Homography h = forward_homography(m.ref_camera, target, m.depths[d]);
        const Image<T> warped = warp_image(rgba, h, target.height, target.width);
        for (std::size_t p = 0; p < n_dst; ++p) {
            const std::size_t v = d * n_dst + p;
            for (int c = 0; c < 3; ++c) out.color[v * 3 + c] = warped.data[p * 4 + c];
            out.alpha[v] = warped.data[p * 4 + 3];
        }
    }
    return out;
}

template <class T>
Image<T> render_novel_view(const Mpi<T>& m, const CameraModel& target) {
    return over_composite(warp_mpi(m, target));
}

template <class T>
double mean_squared_error(const Image<T>& a, const Image<T>& b) {
    require(a.same_shape(b), "image shapes differ");
    if (a.data.empty()) return 0.0;
    std::vector<double> rows(static_cast<std::size_t>(a.height), 0.0);
    const std::size_t row = static_cast<std::size_t>(a.width) * a.channels;
#pragma omp parallel for schedule(static)
    for (int y = 0; y < a.height; ++y) {
        double s = 0.0;
        for (std::size_t i = y * row; i < (y + 1) * row; ++i) {
            const double e = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
            s += e * e;
        }
        rows[y] = s;
    }
    return std::accumulate(rows.begin(), rows.end(), 0.0) / static_cast<double>(a.data.size());
}

template <class T>
ViewGradientField<T> view_gradient_field(const Mpi<T>& m, const CameraModel& target, const Image<T>& gt,
                                         double weight) {
    require(gt.height == target.height && gt.width == target.width && gt.channels == 3,
            "ground truth must match the target camera");
    const Mpi<T> w = warp_mpi(m, target);

    ViewGradientField<T> f;
    f.planes = m.planes;
    f.height = target.height;
    f.width = target.width;
    f.sampling.reserve(m.planes);
    f.inverse.reserve(m.planes);
    for (int d = 0; d < m.planes; ++d) {
        f.sampling.emplace_back(forward_homography(m.ref_camera, target, m.depths[d]));
        f.inverse.emplace_back(inverse_homography(m.ref_camera, target, m.depths[d]));
    }

    const int D = m.planes;
    const std::size_t n = w.plane_size();
    f.grad.assign(n * D * 4, T(0));
    const double scale = weight * 2.0 / (3.0 * static_cast<double>(n));
    std::vector<double> row_loss(static_cast<std::size_t>(f.height), 0.0);

#pragma omp parallel for schedule(static)
    for (int y = 0; y < f.height; ++y) {
        std::vector<double> behind(static_cast<std::size_t>(D) * 3);
        std::vector<double> trans(static_cast<std::size_t>(D));
        double loss = 0.0;
        for (int x = 0; x < f.width; ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * f.width + x;
            double acc[3] = {0.0, 0.0, 0.0};
            for (int d = 0; d < D; ++d) {
                const std::size_t v = d * n + p;
                const double a = w.alpha[v];
                for (int c = 0; c < 3; ++c) {
                    behind[d * 3 + c] = acc[c];
                    acc[c] = w.color[v * 3 + c] * a + acc[c] * (1.0 - a);
                }
            }
            double t = 1.0;
            for (int d = D - 1; d >= 0; --d) {
                trans[d] = t;
                t *= 1.0 - static_cast<double>(w.alpha[d * n + p]);
            }
            double g[3];
            for (int c = 0; c < 3; ++c) {
                const double r = acc[c] - static_cast<double>(gt.data[p * 3 + c]);
                loss += r * r;
                g[c] = scale * r;
            }
            for (int d = 0; d < D; ++d) {
                const std::size_t v = d * n + p;
                const double a = w.alpha[v];
                double ga = 0.0;
                T* out = &f.grad[v * 4];
                for (int c = 0; c < 3; ++c) {
                    out[c] = static_cast<T>(g[c] * a * trans[d]);
                    ga += g[c] * trans[d] * (static_cast<double>(w.color[v * 3 + c]) - behind[d * 3 + c]);
                }
                out[3] = static_cast<T>(ga);
            }
        }
        row_loss[y] = loss;
    }
    f.loss = weight * std::accumulate(row_loss.begin(), row_loss.end(), 0.0) / (3.0 * static_cast<double>(n));
    return f;
}

template <class T>
void accumulate_voxel_gradient(const ViewGradientField<T>& field, int d, int y, int x, int, int, double out[4]) {
    double acc[4];
    const std::size_t n = static_cast<std::size_t>(field.height) * field.width;
    adjoint_gather(field.grad.data() + d * n * 4, 4, field.height, field.width, field.sampling[d],
                   field.inverse[d], x, y, acc);
    for (int c = 0; c < 4; ++c) out[c] += acc[c];
}

template <class T>
MpiGradients<T> render_loss_gradients(const Mpi<T>& m, const CameraModel& target, const Image<T>& gt,
                                      double weight) {
    const ViewGradientField<T> field = view_gradient_field(m, target, gt, weight);
    MpiGradients<T> g;
    g.color.assign(m.color.size(), T(0));
    g.alpha.assign(m.alpha.size(), T(0));
#pragma omp parallel for collapse(2) schedule(static)
    for (int d = 0; d < m.planes; ++d) {
        for (int y = 0; y < m.height; ++y) {
            for (int x = 0; x < m.width; ++x) {
                double acc[4] = {0.0, 0.0, 0.0, 0.0};
                accumulate_voxel_gradient(field, d, y, x, m.height, m.width, acc);
                const std::size_t v = m.voxel(d, y, x);
                for (int c = 0; c < 3; ++c) g.color[v * 3 + c] = static_cast<T>(acc[c]);
                g.alpha[v] = static_cast<T>(acc[3]);
            }
        }
    }
    return g;
}

template <class T>
double empty_fraction(const Mpi<T>& m, double threshold) {
    require(threshold >= 0.0 && threshold <= 1.0, "threshold must lie in [0, 1]");
    if (m.alpha.empty()) return 0.0;
    std::size_t empty = 0;
    for (T a : m.alpha) empty += static_cast<double>(a) < threshold ? 1 : 0;
    return static_cast<double>(empty) / static_cast<double>(m.alpha.size());
}

#define HSGD_INSTANTIATE_MPI(T)                                                                                  \
    template struct Mpi<T>;                                                                                      \
    template Image<T> over_composite(const Mpi<T>&);                                                             \
    template AlphaGradientVolume<T> alpha_gradients(const Mpi<T>&);                                              \
    template std::vector<T> alpha_gradients(const std::vector<T>&, int, int, int);                               \
    template std::vector<T> alpha_gradients_backward(const std::vector<T>&, const std::vector<T>&, int, int,     \
                                                     int);                                                       \
    template Mpi<T> warp_mpi(const Mpi<T>&, const CameraModel&);                                                 \
    template Image<T> render_novel_view(const Mpi<T>&, const CameraModel&);                                      \
    template double mean_squared_error(const Image<T>&, const Image<T>&);                                        \
    template ViewGradientField<T> view_gradient_field(const Mpi<T>&, const CameraModel&, const Image<T>&,       \
                                                      double);                                                   \
    template void accumulate_voxel_gradient(const ViewGradientField<T>&, int, int, int, int, int, double[4]);    \
    template MpiGradients<T> render_loss_gradients(const Mpi<T>&, const CameraModel&, const Image<T>&, double); \
    template double empty_fraction(const Mpi<T>&, double);

HSGD_INSTANTIATE_MPI(float)
HSGD_INSTANTIATE_MPI(double)

}  // namespace hsgd
