#include "hsgd/sparsify.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace hsgd {

SparseIndices full_indices(int planes, int height, int width) {
    SparseIndices s;
    s.k = planes;
    s.height = height;
    s.width = width;
    s.indices.resize(static_cast<std::size_t>(planes) * height * width);
    const std::size_t n = static_cast<std::size_t>(height) * width;
    for (int d = 0; d < planes; ++d) std::fill_n(s.indices.begin() + d * n, n, d);
    return s;
}

template <class T>
GradientVolume<T> formulate_gradients(const Mpi<T>& m, const Psv<T>& p) {
    require(m.planes == p.planes && m.height == p.height && m.width == p.width,
            "mpi and plane sweep volume shapes differ");
    require(m.depths == p.depths, "mpi and plane sweep volume depths differ");

    GradientVolume<T> g;
    g.layout.views = p.views;
    g.data = Volume<T>(g.layout.total(), p.planes, p.height, p.width);
    Volume<T>& v = g.data;
    const std::size_t n = v.plane_size();

    for (int i = 0; i < p.views; ++i) {
        for (int d = 0; d < p.planes; ++d) {
            const T* src = p.data.data() + p.offset(i, d);
            for (int c = 0; c < 3; ++c) {
                T* dst = &v.at(g.layout.psv(i, c), d, 0, 0);
                for (std::size_t q = 0; q < n; ++q) dst[q] = src[q * 3 + c];
            }
        }
    }

    for (int i = 0; i < p.views; ++i) {
        const CameraModel& cam = p.view_cameras[i];
        std::vector<T> warped(static_cast<std::size_t>(p.planes) * cam.height * cam.width);
        for (int d = 0; d < p.planes; ++d) {
            const Image<T> w = warp_image(m.alpha_plane(d), forward_homography(m.ref_camera, cam, m.depths[d]),
                                          cam.height, cam.width);
            std::copy(w.data.begin(), w.data.end(), warped.begin() + d * w.data.size());
        }
        const std::vector<T> a = alpha_gradients(warped, p.planes, cam.height, cam.width);
        const std::size_t nv = static_cast<std::size_t>(cam.height) * cam.width;
        for (int d = 0; d < p.planes; ++d) {
            Image<T> plane(cam.height, cam.width, 1);
            std::copy(a.begin() + d * nv, a.begin() + (d + 1) * nv, plane.data.begin());
            const Image<T> back =
                warp_image(plane, inverse_homography(m.ref_camera, cam, m.depths[d]), m.height, m.width);
            std::copy(back.data.begin(), back.data.end(), &v.at(g.layout.alpha_gradient(i), d, 0, 0));
        }
    }

    for (int d = 0; d < m.planes; ++d) {
        for (std::size_t q = 0; q < n; ++q) {
            const std::size_t vox = d * n + q;
            for (int c = 0; c < 3; ++c) v.channel(g.layout.mpi_color(c))[vox] = m.color[vox * 3 + c];
            v.channel(g.layout.mpi_alpha())[vox] = m.alpha[vox];
        }
    }
    return g;
}

template <class T>
SparseIndices select_topk(const AlphaGradientVolume<T>& gate, int k) {
    require(k >= 1 && k <= gate.planes, "sparsification factor must lie in [1, D]");
    SparseIndices s;
    s.k = k;
    s.height = gate.height;
    s.width = gate.width;
    s.indices.resize(static_cast<std::size_t>(k) * gate.height * gate.width);
    const int D = gate.planes;

#pragma omp parallel for schedule(static)
    for (int y = 0; y < gate.height; ++y) {
        std::vector<std::int32_t> order(static_cast<std::size_t>(D));
        for (int x = 0; x < gate.width; ++x) {
            for (int d = 0; d < D; ++d) order[d] = d;
            const auto better = [&](std::int32_t a, std::int32_t b) {
                const T ga = gate.at(a, y, x);
                const T gb = gate.at(b, y, x);
                return ga > gb || (ga == gb && a < b);
            };
            std::partial_sort(order.begin(), order.begin() + k, order.end(), better);
            std::sort(order.begin(), order.begin() + k);
            for (int j = 0; j < k; ++j) s.indices[s.index(j, y, x)] = order[j];
        }
    }
    return s;
}

template <class T>
SparseIndices select_mvs_window(const AlphaGradientVolume<T>& gate, int k) {
    require(k >= 1 && k <= gate.planes, "window size must lie in [1, D]");
    SparseIndices s;
    s.k = k;
    s.height = gate.height;
    s.width = gate.width;
    s.indices.resize(static_cast<std::size_t>(k) * gate.height * gate.width);
    const int D = gate.planes;
    const int half = (k - 1) / 2;  // even k leans toward the near side

#pragma omp parallel for schedule(static)
    for (int y = 0; y < gate.height; ++y) {
        for (int x = 0; x < gate.width; ++x) {
            int best = 0;
            for (int d = 1; d < D; ++d) {
                if (gate.at(d, y, x) > gate.at(best, y, x)) best = d;
            }
            const int start = std::clamp(best - half, 0, D - k);
            for (int j = 0; j < k; ++j) s.indices[s.index(j, y, x)] = start + j;
        }
    }
    return s;
}

template <class T>
Volume<T> gather(const Volume<T>& v, const SparseIndices& s) {
    require(s.height == v.height && s.width == v.width, "index grid does not match the volume");
    Volume<T> out(v.channels, s.k, v.height, v.width);
    const std::size_t n = v.plane_size();
#pragma omp parallel for schedule(static)
    for (int c = 0; c < v.channels; ++c) {
        const T* src = v.channel(c);
        T* dst = out.channel(c);
        for (int j = 0; j < s.k; ++j) {
            const std::int32_t* idx = s.indices.data() + j * n;
            T* row = dst + j * n;
            for (std::size_t q = 0; q < n; ++q) row[q] = src[idx[q] * n + q];
        }
    }
    return out;
}

template <class T>
Volume<T> gather_backward(const Volume<T>& grad_slab, const SparseIndices& s, int planes) {
    Volume<T> out(grad_slab.channels, planes, grad_slab.height, grad_slab.width);
    const std::size_t n = out.plane_size();
#pragma omp parallel for schedule(static)
    for (int c = 0; c < grad_slab.channels; ++c) {
        const T* src = grad_slab.channel(c);
        T* dst = out.channel(c);
        for (int j = 0; j < s.k; ++j) {
            const std::int32_t* idx = s.indices.data() + j * n;
            for (std::size_t q = 0; q < n; ++q) dst[idx[q] * n + q] += src[j * n + q];
        }
    }
    return out;
}

template <class T>
std::pair<Volume<T>, SparseIndices> sparsify_topk(const GradientVolume<T>& v, const AlphaGradientVolume<T>& gate,
                                                  int k) {
    require(gate.planes == v.data.depth && gate.height == v.data.height && gate.width == v.data.width,
            "gate shape does not match the gradient volume");
    SparseIndices s = select_topk(gate, k);
    return {gather(v.data, s), std::move(s)};
}

template <class T>
std::pair<Volume<T>, SparseIndices> sparsify_mvs_window(const GradientVolume<T>& v,
                                                        const AlphaGradientVolume<T>& gate, int k) {
    require(gate.planes == v.data.depth && gate.height == v.data.height && gate.width == v.data.width,
            "gate shape does not match the gradient volume");
    SparseIndices s = select_mvs_window(gate, k);
    return {gather(v.data, s), std::move(s)};
}

namespace {

template <class T>
inline T clamp01(double v) {
    return static_cast<T>(std::clamp(v, 0.0, 1.0));
}

template <class T>
inline T update_alpha(T alpha, T r, AlphaRule rule) {
    if (r == T(0)) return alpha;
    if (rule == AlphaRule::linear) return clamp01<T>(static_cast<double>(alpha) + r);
    const double a = std::clamp(static_cast<double>(alpha), kLogitClamp, 1.0 - kLogitClamp);
    const double z = std::log(a / (1.0 - a)) + static_cast<double>(r);
    return static_cast<T>(1.0 / (1.0 + std::exp(-z)));
}

template <class T>
inline void update_voxel(Mpi<T>& out, std::size_t vox, const T r[4], AlphaRule rule) {
    for (int c = 0; c < 3; ++c) {
        T& col = out.color[vox * 3 + c];
        if (r[c] != T(0)) col = clamp01<T>(static_cast<double>(col) + r[c]);
    }
    out.alpha[vox] = update_alpha(out.alpha[vox], r[3], rule);
}

}  // namespace

template <class T>
Mpi<T> restore_and_update(const Mpi<T>& m, const Volume<T>& residual, const SparseIndices& s, AlphaRule rule) {
    require(residual.channels == 4 && residual.depth == s.k && residual.height == m.height &&
                residual.width == m.width && s.height == m.height && s.width == m.width,
            "residual and indices must match the mpi");
    for (std::int32_t d : s.indices) {
        if (d < 0 || d >= m.planes) throw std::logic_error("sparse index out of range");
    }
    Mpi<T> out = m;
    const std::size_t n = m.plane_size();
#pragma omp parallel for schedule(static)
    for (int y = 0; y < m.height; ++y) {
        for (int x = 0; x < m.width; ++x) {
            const std::size_t q = static_cast<std::size_t>(y) * m.width + x;
            for (int j = 0; j < s.k; ++j) {
                const std::int32_t d = s.indices[j * n + q];
                T r[4];
                for (int c = 0; c < 4; ++c) r[c] = residual.data[(static_cast<std::size_t>(c) * s.k + j) * n + q];
                update_voxel(out, d * n + q, r, rule);
            }
        }
    }
    return out;
}

template <class T>
Mpi<T> apply_dense_update(const Mpi<T>& m, const Volume<T>& residual, AlphaRule rule) {
    require(residual.channels == 4 && residual.depth == m.planes && residual.height == m.height &&
                residual.width == m.width,
            "dense residual must be 4 x D x H x W");
    Mpi<T> out = m;
    const std::size_t n = m.plane_size();
#pragma omp parallel for schedule(static)
    for (int y = 0; y < m.height; ++y) {
        for (int x = 0; x < m.width; ++x) {
            const std::size_t q = static_cast<std::size_t>(y) * m.width + x;
            for (int d = 0; d < m.planes; ++d) {
                T r[4];
                for (int c = 0; c < 4; ++c) r[c] = residual.data[(static_cast<std::size_t>(c) * m.planes + d) * n + q];
                update_voxel(out, d * n + q, r, rule);
            }
        }
    }
    return out;
}

template <class T>
RestoreGradients<T> restore_backward(const Mpi<T>& m, const Volume<T>& residual, const SparseIndices& s,
                                     AlphaRule rule, const MpiGradients<T>& grad_out) {
    RestoreGradients<T> g;
    g.input = grad_out;
    g.residual = Volume<T>(4, s.k, m.height, m.width);
    const std::size_t n = m.plane_size();
#pragma omp parallel for schedule(static)
    for (int y = 0; y < m.height; ++y) {
        for (int x = 0; x < m.width; ++x) {
            const std::size_t q = static_cast<std::size_t>(y) * m.width + x;
            for (int j = 0; j < s.k; ++j) {
                const std::size_t vox = s.indices[j * n + q] * n + q;
                for (int c = 0; c < 3; ++c) {
                    const std::size_t rv = (static_cast<std::size_t>(c) * s.k + j) * n + q;
                    const double r = residual.data[rv];
                    const double sum = static_cast<double>(m.color[vox * 3 + c]) + r;
                    double pass = 1.0;
                    if (r != 0.0 && (sum < 0.0 || sum > 1.0)) pass = 0.0;
                    const double go = grad_out.color[vox * 3 + c];
                    g.input.color[vox * 3 + c] = static_cast<T>(go * pass);
                    g.residual.data[rv] = static_cast<T>(r != 0.0 ? go * pass : go);
                }
                const std::size_t ra = (static_cast<std::size_t>(3) * s.k + j) * n + q;
                const double r = residual.data[ra];
                const double alpha = m.alpha[vox];
                const double go = grad_out.alpha[vox];
                if (r == 0.0) {
                    g.input.alpha[vox] = static_cast<T>(go);
                    if (rule == AlphaRule::linear) {
                        g.residual.data[ra] = static_cast<T>(go);
                    } else {
                        const double a = std::clamp(alpha, kLogitClamp, 1.0 - kLogitClamp);
                        g.residual.data[ra] = static_cast<T>(go * a * (1.0 - a));
                    }
                    continue;
                }
                if (rule == AlphaRule::linear) {
                    const double sum = alpha + r;
                    const double pass = (sum < 0.0 || sum > 1.0) ? 0.0 : 1.0;
                    g.input.alpha[vox] = static_cast<T>(go * pass);
                    g.residual.data[ra] = static_cast<T>(go * pass);
                } else {
                    const bool inside = alpha >= kLogitClamp && alpha <= 1.0 - kLogitClamp;
                    const double a = std::clamp(alpha, kLogitClamp, 1.0 - kLogitClamp);
                    const double z = std::log(a / (1.0 - a)) + r;
                    const double out = 1.0 / (1.0 + std::exp(-z));
                    const double dz = go * out * (1.0 - out);
                    g.residual.data[ra] = static_cast<T>(dz);
                    g.input.alpha[vox] = static_cast<T>(inside ? dz / (a * (1.0 - a)) : 0.0);
                }
            }
        }
    }
    return g;
}

template <class T>
MpiGradients<T> formulate_backward(const Mpi<T>& m, const Psv<T>& p, const Volume<T>& grad_v) {
    ChannelLayout layout{p.views};
    require(grad_v.channels == layout.total() && grad_v.depth == m.planes && grad_v.height == m.height &&
                grad_v.width == m.width,
            "gradient volume shape mismatch");
    MpiGradients<T> g;
    g.color.assign(m.color.size(), T(0));
    g.alpha.assign(m.alpha.size(), T(0));
    const std::size_t n = m.plane_size();
    for (int d = 0; d < m.planes; ++d) {
        for (std::size_t q = 0; q < n; ++q) {
            const std::size_t vox = d * n + q;
            for (int c = 0; c < 3; ++c) g.color[vox * 3 + c] = grad_v.channel(layout.mpi_color(c))[vox];
            g.alpha[vox] = grad_v.channel(layout.mpi_alpha())[vox];
        }
    }

    for (int i = 0; i < p.views; ++i) {
        const CameraModel& cam = p.view_cameras[i];
        const std::size_t nv = static_cast<std::size_t>(cam.height) * cam.width;
        std::vector<T> warped(static_cast<std::size_t>(m.planes) * nv);
        for (int d = 0; d < m.planes; ++d) {
            const Image<T> w = warp_image(m.alpha_plane(d), forward_homography(m.ref_camera, cam, m.depths[d]),
                                          cam.height, cam.width);
            std::copy(w.data.begin(), w.data.end(), warped.begin() + d * nv);
        }
        std::vector<T> grad_a(warped.size());
        for (int d = 0; d < m.planes; ++d) {
            Image<T> gref(m.height, m.width, 1);
            const T* src = grad_v.channel(layout.alpha_gradient(i)) + d * n;
            std::copy(src, src + n, gref.data.begin());
            const Image<T> gv = warp_adjoint(gref, inverse_homography(m.ref_camera, cam, m.depths[d]), cam.height,
                                             cam.width);
            std::copy(gv.data.begin(), gv.data.end(), grad_a.begin() + d * nv);
        }
        const std::vector<T> grad_warped = alpha_gradients_backward(warped, grad_a, m.planes, cam.height, cam.width);
        for (int d = 0; d < m.planes; ++d) {
            Image<T> gw(cam.height, cam.width, 1);
            std::copy(grad_warped.begin() + d * nv, grad_warped.begin() + (d + 1) * nv, gw.data.begin());
            const Image<T> back =
                warp_adjoint(gw, forward_homography(m.ref_camera, cam, m.depths[d]), m.height, m.width);
            for (std::size_t q = 0; q < n; ++q) g.alpha[d * n + q] += back.data[q];
        }
    }
    return g;
}

#define HSGD_INSTANTIATE_SPARSIFY(T)                                                                            \
    template GradientVolume<T> formulate_gradients(const Mpi<T>&, const Psv<T>&);                              \
    template SparseIndices select_topk(const AlphaGradientVolume<T>&, int);                                     \
    template SparseIndices select_mvs_window(const AlphaGradientVolume<T>&, int);                               \
    template Volume<T> gather(const Volume<T>&, const SparseIndices&);                                          \
    template Volume<T> gather_backward(const Volume<T>&, const SparseIndices&, int);                            \
    template std::pair<Volume<T>, SparseIndices> sparsify_topk(const GradientVolume<T>&,                        \
                                                               const AlphaGradientVolume<T>&, int);             \
    template std::pair<Volume<T>, SparseIndices> sparsify_mvs_window(const GradientVolume<T>&,                  \
                                                                     const AlphaGradientVolume<T>&, int);       \
    template Mpi<T> restore_and_update(const Mpi<T>&, const Volume<T>&, const SparseIndices&, AlphaRule);       \
    template Mpi<T> apply_dense_update(const Mpi<T>&, const Volume<T>&, AlphaRule);                             \
    template RestoreGradients<T> restore_backward(const Mpi<T>&, const Volume<T>&, const SparseIndices&,        \
                                                  AlphaRule, const MpiGradients<T>&);                           \
    template MpiGradients<T> formulate_backward(const Mpi<T>&, const Psv<T>&, const Volume<T>&);

HSGD_INSTANTIATE_SPARSIFY(float)
HSGD_INSTANTIATE_SPARSIFY(double)

}  // namespace hsgd
