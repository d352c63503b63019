#include "hsgd/reference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace hsgd::reference {

template <class T>
Image<T> warp_image(const Image<T>& image, const Homography& h, int out_height, int out_width) {
    Image<T> out(out_height, out_width, image.channels);
    for (int y = 0; y < out_height; ++y) {
        for (int x = 0; x < out_width; ++x) {
            const Eigen::Vector3d p = h.matrix * Eigen::Vector3d(x, y, 1.0);
            if (std::abs(p.z()) <= 1e-12) continue;
            const double sx = p.x() / p.z(), sy = p.y() / p.z();
            if (!std::isfinite(sx) || !std::isfinite(sy) || std::abs(sx) > 1e9 || std::abs(sy) > 1e9) continue;
            const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
            const double fx = sx - x0, fy = sy - y0;
            for (int c = 0; c < image.channels; ++c) {
                double acc = 0.0;
                for (int dy = 0; dy < 2; ++dy) {
                    for (int dx = 0; dx < 2; ++dx) {
                        const int xx = x0 + dx, yy = y0 + dy;
                        if (xx < 0 || yy < 0 || xx >= image.width || yy >= image.height) continue;
                        const double w = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy);
                        acc += w * image.at(yy, xx, c);
                    }
                }
                out.at(y, x, c) = static_cast<T>(acc);
            }
        }
    }
    return out;
}

namespace {

template <class T>
void scatter_into(std::vector<double>& acc, const Image<T>& grad_out, const Homography& h, int src_height,
                  int src_width) {
    const int C = grad_out.channels;
    for (int y = 0; y < grad_out.height; ++y) {
        for (int x = 0; x < grad_out.width; ++x) {
            const Eigen::Vector3d p = h.matrix * Eigen::Vector3d(x, y, 1.0);
            if (std::abs(p.z()) <= 1e-12) continue;
            const double sx = p.x() / p.z(), sy = p.y() / p.z();
            if (!std::isfinite(sx) || !std::isfinite(sy) || std::abs(sx) > 1e9 || std::abs(sy) > 1e9) continue;
            const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
            const double fx = sx - x0, fy = sy - y0;
            for (int dy = 0; dy < 2; ++dy) {
                for (int dx = 0; dx < 2; ++dx) {
                    const int xx = x0 + dx, yy = y0 + dy;
                    if (xx < 0 || yy < 0 || xx >= src_width || yy >= src_height) continue;
                    const double w = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy);
                    for (int c = 0; c < C; ++c) {
                        acc[(static_cast<std::size_t>(yy) * src_width + xx) * C + c] += w * grad_out.at(y, x, c);
                    }
                }
            }
        }
    }
}

}  // namespace

template <class T>
Image<T> warp_adjoint_scatter(const Image<T>& grad_out, const Homography& h, int src_height, int src_width) {
    std::vector<double> acc(static_cast<std::size_t>(src_height) * src_width * grad_out.channels, 0.0);
    scatter_into(acc, grad_out, h, src_height, src_width);
    Image<T> out(src_height, src_width, grad_out.channels);
    for (std::size_t i = 0; i < acc.size(); ++i) out.data[i] = static_cast<T>(acc[i]);
    return out;
}

template <class T>
Image<T> over_composite(const Mpi<T>& m) {
    Image<T> out(m.height, m.width, 3);
    for (int y = 0; y < m.height; ++y) {
        for (int x = 0; x < m.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int d = 0; d < m.planes; ++d) {
                    const double a = m.a(d, y, x);
                    acc = m.c(d, y, x, c) * a + acc * (1.0 - a);
                }
                out.at(y, x, c) = static_cast<T>(acc);
            }
        }
    }
    return out;
}

template <class T>
MpiGradients<T> render_loss_gradients(const Mpi<T>& m, const CameraModel& target, const Image<T>& gt,
                                      double weight) {
    const int D = m.planes, h = target.height, w = target.width;
    std::vector<Image<T>> col(D), alp(D);
    std::vector<Homography> fwd(D);
    for (int d = 0; d < D; ++d) {
        fwd[d] = forward_homography(m.ref_camera, target, m.depths[d]);
        col[d] = reference::warp_image(m.color_plane(d), fwd[d], h, w);
        alp[d] = reference::warp_image(m.alpha_plane(d), fwd[d], h, w);
    }
    const double scale = weight * 2.0 / (3.0 * h * w);
    std::vector<Image<double>> gcol(D, Image<double>(h, w, 3)), galp(D, Image<double>(h, w, 1));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                double out = 0.0;
                for (int d = 0; d < D; ++d) {
                    const double a = alp[d].at(y, x);
                    out = col[d].at(y, x, c) * a + out * (1.0 - a);
                }
                const double g = scale * (out - gt.at(y, x, c));
                // dO/dc_d = a_d prod_{j>d}(1 - a_j); dO/da_d = prod_{j>d}(1 - a_j) (c_d - O_{d-1}).
                for (int d = 0; d < D; ++d) {
                    double trans = 1.0;
                    for (int j = d + 1; j < D; ++j) trans *= 1.0 - alp[j].at(y, x);
                    double below = 0.0;
                    for (int j = 0; j < d; ++j) {
                        const double a = alp[j].at(y, x);
                        below = col[j].at(y, x, c) * a + below * (1.0 - a);
                    }
                    gcol[d].at(y, x, c) = g * alp[d].at(y, x) * trans;
                    galp[d].at(y, x) += g * trans * (col[d].at(y, x, c) - below);
                }
            }
        }
    }
    MpiGradients<T> g;
    g.color.assign(m.color.size(), T(0));
    g.alpha.assign(m.alpha.size(), T(0));
    for (int d = 0; d < D; ++d) {
        const Image<double> bc = warp_adjoint_scatter(gcol[d], fwd[d], m.height, m.width);
        const Image<double> ba = warp_adjoint_scatter(galp[d], fwd[d], m.height, m.width);
        for (int y = 0; y < m.height; ++y) {
            for (int x = 0; x < m.width; ++x) {
                const std::size_t v = m.voxel(d, y, x);
                for (int c = 0; c < 3; ++c) g.color[v * 3 + c] = static_cast<T>(bc.at(y, x, c));
                g.alpha[v] = static_cast<T>(ba.at(y, x));
            }
        }
    }
    return g;
}

template <class T>
Volume<T> conv3d(const Volume<T>& in, const ConvLayer<T>& layer) {
    const int K = in.depth, H = in.height, W = in.width, r = layer.kernel / 2;
    Volume<T> out(layer.out_channels, K, H, W);
    for (int co = 0; co < layer.out_channels; ++co) {
        for (int z = 0; z < K; ++z) {
            for (int y = 0; y < H; ++y) {
                for (int x = 0; x < W; ++x) {
                    double acc = 0.0;
                    for (int ci = 0; ci < layer.in_channels; ++ci) {
                        for (int kz = 0; kz < layer.kernel; ++kz) {
                            for (int ky = 0; ky < layer.kernel; ++ky) {
                                for (int kx = 0; kx < layer.kernel; ++kx) {
                                    const int zz = z + kz - r, yy = y + ky - r, xx = x + kx - r;
                                    if (zz < 0 || yy < 0 || xx < 0 || zz >= K || yy >= H || xx >= W) continue;
                                    const std::size_t wi =
                                        ((static_cast<std::size_t>(co) * layer.in_channels + ci) * layer.kernel + kz) *
                                            layer.kernel * layer.kernel +
                                        ky * layer.kernel + kx;
                                    acc += static_cast<double>(layer.weight[wi]) * in.at(ci, zz, yy, xx);
                                }
                            }
                        }
                    }
                    out.at(co, z, y, x) = static_cast<T>(acc);
                }
            }
        }
    }
    return out;
}

template <class T>
SparseIndices select_topk(const AlphaGradientVolume<T>& gate, int k) {
    SparseIndices s;
    s.k = k;
    s.height = gate.height;
    s.width = gate.width;
    s.indices.resize(static_cast<std::size_t>(k) * gate.height * gate.width);
    std::vector<std::int32_t> order(static_cast<std::size_t>(gate.planes));
    for (int y = 0; y < gate.height; ++y) {
        for (int x = 0; x < gate.width; ++x) {
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(),
                             [&](std::int32_t a, std::int32_t b) { return gate.at(a, y, x) > gate.at(b, y, x); });
            std::sort(order.begin(), order.begin() + k);
            for (int j = 0; j < k; ++j) s.indices[s.index(j, y, x)] = order[j];
        }
    }
    return s;
}

#define HSGD_INSTANTIATE_REFERENCE(T)                                                                   \
    template Image<T> warp_image(const Image<T>&, const Homography&, int, int);                         \
    template Image<T> warp_adjoint_scatter(const Image<T>&, const Homography&, int, int);               \
    template Image<T> over_composite(const Mpi<T>&);                                                    \
    template MpiGradients<T> render_loss_gradients(const Mpi<T>&, const CameraModel&, const Image<T>&,  \
                                                   double);                                             \
    template Volume<T> conv3d(const Volume<T>&, const ConvLayer<T>&);                                   \
    template SparseIndices select_topk(const AlphaGradientVolume<T>&, int);

HSGD_INSTANTIATE_REFERENCE(float)
HSGD_INSTANTIATE_REFERENCE(double)

}  // namespace hsgd::reference
