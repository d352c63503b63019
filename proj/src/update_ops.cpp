#include "hsgd/update_ops.hpp"

#include <algorithm>
#include <cmath>

namespace hsgd {

template <class T>
AnalyticContext<T> prepare_analytic(const Mpi<T>& m, std::span<const PosedImage<T>> views) {
    require(!views.empty(), "analytic update needs at least one view");
    AnalyticContext<T> ctx;
    ctx.fields.reserve(views.size());
    for (const auto& v : views) {
        ctx.fields.push_back(view_gradient_field(m, v.camera, v.image));
        ctx.loss += ctx.fields.back().loss;
    }
    return ctx;
}

double sparsity_integrand_derivative(double alpha) {
    const double u = 0.5 - alpha;
    if (u == 0.0) return 0.0;
    return (u > 0.0 ? 1.0 : -1.0) / (1.5 - std::abs(u));
}

namespace {

template <class T>
inline void analytic_voxel(const AnalyticContext<T>& ctx, const Mpi<T>& m, int d, int y, int x,
                           const AnalyticStep& step, double prior_scale, T out[4]) {
    double g[4] = {0.0, 0.0, 0.0, 0.0};
    for (const auto& f : ctx.fields) accumulate_voxel_gradient(f, d, y, x, m.height, m.width, g);
    const double a = m.a(d, y, x);
    if (prior_scale != 0.0) g[3] += prior_scale * sparsity_integrand_derivative(a);
    for (int c = 0; c < 3; ++c) out[c] = static_cast<T>(-step.lambda * g[c]);
    if (step.rule == AlphaRule::logit) {
        const double ac = std::clamp(a, kLogitClamp, 1.0 - kLogitClamp);
        out[3] = static_cast<T>(-step.lambda * g[3] * ac * (1.0 - ac));
    } else {
        out[3] = static_cast<T>(-step.lambda * g[3]);
    }
}

template <class T>
double prior_scale(const Mpi<T>& m, const AnalyticStep& step) {
    return step.prior_weight / (static_cast<double>(m.planes) * m.plane_size());
}

}  // namespace

template <class T>
Volume<T> analytic_residual(const AnalyticContext<T>& ctx, const Mpi<T>& m, const SparseIndices& s,
                            const AnalyticStep& step) {
    require(step.lambda > 0.0, "step size must be positive");
    require(s.height == m.height && s.width == m.width, "indices must match the mpi");
    Volume<T> r(4, s.k, m.height, m.width);
    const std::size_t n = m.plane_size();
    const std::size_t cs = r.channel_size();
    const double ps = prior_scale(m, step);
#pragma omp parallel for collapse(2) schedule(static)
    for (int j = 0; j < s.k; ++j) {
        for (int y = 0; y < m.height; ++y) {
            for (int x = 0; x < m.width; ++x) {
                const std::size_t q = static_cast<std::size_t>(y) * m.width + x;
                T out[4];
                analytic_voxel(ctx, m, s.indices[j * n + q], y, x, step, ps, out);
                for (int c = 0; c < 4; ++c) r.data[c * cs + j * n + q] = out[c];
            }
        }
    }
    return r;
}

template <class T>
Volume<T> analytic_residual_dense(const AnalyticContext<T>& ctx, const Mpi<T>& m, const AnalyticStep& step) {
    require(step.lambda > 0.0, "step size must be positive");
    Volume<T> r(4, m.planes, m.height, m.width);
    const std::size_t n = m.plane_size();
    const std::size_t cs = r.channel_size();
    const double ps = prior_scale(m, step);
#pragma omp parallel for collapse(2) schedule(static)
    for (int d = 0; d < m.planes; ++d) {
        for (int y = 0; y < m.height; ++y) {
            for (int x = 0; x < m.width; ++x) {
                const std::size_t q = static_cast<std::size_t>(y) * m.width + x;
                T out[4];
                analytic_voxel(ctx, m, d, y, x, step, ps, out);
                for (int c = 0; c < 4; ++c) r.data[c * cs + d * n + q] = out[c];
            }
        }
    }
    return r;
}

template <class T>
Volume<T> analytic_update(const Mpi<T>& m, const SparseIndices& s, std::span<const PosedImage<T>> views,
                          double lambda, AlphaRule rule) {
    AnalyticStep step;
    step.lambda = lambda;
    step.rule = rule;
    return analytic_residual(prepare_analytic(m, views), m, s, step);
}

template <class T>
Mpi<T> init_mpi_heuristic(const Psv<T>& p, double temperature) {
    require(temperature > 0.0, "temperature must be positive");
    Mpi<T> m(p.planes, p.height, p.width, p.depths, p.ref_camera);
    const int D = p.planes, N = p.views;
    const std::size_t n = m.plane_size();

#pragma omp parallel for schedule(static)
    for (int y = 0; y < p.height; ++y) {
        std::vector<double> score(static_cast<std::size_t>(D));
        for (int x = 0; x < p.width; ++x) {
            const std::size_t q = static_cast<std::size_t>(y) * p.width + x;
            for (int d = 0; d < D; ++d) {
                double mean[3] = {0.0, 0.0, 0.0};
                for (int i = 0; i < N; ++i) {
                    for (int c = 0; c < 3; ++c) mean[c] += p.data[p.offset(i, d) + q * 3 + c];
                }
                double var = 0.0;
                for (int c = 0; c < 3; ++c) {
                    mean[c] /= N;
                    for (int i = 0; i < N; ++i) {
                        const double e = p.data[p.offset(i, d) + q * 3 + c] - mean[c];
                        var += e * e;
                    }
                    m.color[(d * n + q) * 3 + c] = static_cast<T>(mean[c]);
                }
                score[d] = -var / (3.0 * N) / temperature;
            }
            const double top = *std::max_element(score.begin(), score.end());
            double z = 0.0;
            for (double& s : score) z += (s = std::exp(s - top));
            for (double& s : score) s /= z;

            // Largest s with 1 - prod(1 - s w_d) reaching the coverage target.
            const double wmax = *std::max_element(score.begin(), score.end());
            const auto coverage = [&](double s) {
                double t = 1.0;
                for (double w : score) t *= 1.0 - s * w;
                return 1.0 - t;
            };
            double lo = 0.0, hi = 1.0 / wmax;
            if (coverage(hi) <= kHeuristicCoverage) {
                lo = hi;
            } else {
                for (int it = 0; it < 60; ++it) {
                    const double mid = 0.5 * (lo + hi);
                    (coverage(mid) < kHeuristicCoverage ? lo : hi) = mid;
                }
            }
            for (int d = 0; d < D; ++d) {
                m.alpha[d * n + q] = static_cast<T>(std::clamp(lo * score[d], 1e-3, 1.0 - 1e-3));
            }
        }
    }
    return m;
}

template <class T>
Volume<T> psv_volume(const Psv<T>& p) {
    Volume<T> v(3 * p.views, p.planes, p.height, p.width);
    const std::size_t n = v.plane_size();
    for (int i = 0; i < p.views; ++i) {
        for (int d = 0; d < p.planes; ++d) {
            const T* src = p.data.data() + p.offset(i, d);
            for (int c = 0; c < 3; ++c) {
                T* dst = &v.at(3 * i + c, d, 0, 0);
                for (std::size_t q = 0; q < n; ++q) dst[q] = src[q * 3 + c];
            }
        }
    }
    return v;
}

template <class T>
Mpi<T> mpi_from_volume(const Volume<T>& v, const std::vector<double>& depths, const CameraModel& ref) {
    require(v.channels == 4 && static_cast<std::size_t>(v.depth) == depths.size(), "expected a 4 x D volume");
    Mpi<T> m(v.depth, v.height, v.width, depths, ref);
    const std::size_t n = v.channel_size();
    for (std::size_t q = 0; q < n; ++q) {
        for (int c = 0; c < 3; ++c) m.color[q * 3 + c] = v.channel(c)[q];
        m.alpha[q] = v.channel(3)[q];
    }
    return m;
}

template <class T>
Volume<T> mpi_gradients_to_volume(const MpiGradients<T>& g, int planes, int height, int width) {
    Volume<T> v(4, planes, height, width);
    const std::size_t n = v.channel_size();
    require(g.alpha.size() == n && g.color.size() == 3 * n, "gradient size mismatch");
    for (std::size_t q = 0; q < n; ++q) {
        for (int c = 0; c < 3; ++c) v.channel(c)[q] = g.color[q * 3 + c];
        v.channel(3)[q] = g.alpha[q];
    }
    return v;
}

template <class T>
Mpi<T> init_mpi_network(const ConvNetParams<T>& params, const Psv<T>& p) {
    require(params.activation == OutputActivation::initializer, "initializer network expected");
    require(params.input_channels() == 3 * p.views, "initializer input width must be 3N");
    return mpi_from_volume(conv_forward(params, psv_volume(p)), p.depths, p.ref_camera);
}

#define HSGD_INSTANTIATE_UPDATE(T)                                                                             \
    template AnalyticContext<T> prepare_analytic(const Mpi<T>&, std::span<const PosedImage<T>>);               \
    template Volume<T> analytic_residual(const AnalyticContext<T>&, const Mpi<T>&, const SparseIndices&,        \
                                         const AnalyticStep&);                                                 \
    template Volume<T> analytic_residual_dense(const AnalyticContext<T>&, const Mpi<T>&, const AnalyticStep&); \
    template Volume<T> analytic_update(const Mpi<T>&, const SparseIndices&, std::span<const PosedImage<T>>,    \
                                       double, AlphaRule);                                                     \
    template Mpi<T> init_mpi_heuristic(const Psv<T>&, double);                                                         \
    template Volume<T> psv_volume(const Psv<T>&);                                                              \
    template Mpi<T> mpi_from_volume(const Volume<T>&, const std::vector<double>&, const CameraModel&);         \
    template Volume<T> mpi_gradients_to_volume(const MpiGradients<T>&, int, int, int);                         \
    template Mpi<T> init_mpi_network(const ConvNetParams<T>&, const Psv<T>&);

HSGD_INSTANTIATE_UPDATE(float)
HSGD_INSTANTIATE_UPDATE(double)

}  // namespace hsgd
