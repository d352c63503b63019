#include "hsgd/pipeline.hpp"
#include "hsgd/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>

namespace hsgd {

void HsgdConfig::validate() const {
    require(planes >= 1, "planes must be at least 1");
    require(iterations >= 1, "iterations must be at least 1");
    require(k >= 1 && k <= planes, "k must lie in [1, planes]");
    require(step > 0.0 && std::isfinite(step), "step must be positive");
    require(steps_per_level >= 1, "steps per level must be at least 1");
    require(step_growth >= 1.0, "step growth must be >= 1");
    require(prior_weight >= 0.0, "prior weight must be non-negative");
}

CameraModel doubled(const CameraModel& cam) {
    CameraModel out = cam;
    Eigen::Matrix3d s = Eigen::Matrix3d::Identity();
    s(0, 0) = 2.0;
    s(1, 1) = 2.0;
    s(0, 2) = 0.5;
    s(1, 2) = 0.5;
    out.intrinsics = s * cam.intrinsics;
    out.height = cam.height * 2;
    out.width = cam.width * 2;
    return out;
}

template <class T>
std::vector<LevelData<T>> build_levels(std::span<const PosedImage<T>> images, const CameraModel& ref,
                                       const std::vector<double>& depths, int levels) {
    require(levels >= 1, "at least one level is required");
    const Psv<T> full = build_psv(images, ref, depths);
    PsvPyramid<T> pyr = build_pyramid(full, levels - 1);
    std::vector<LevelData<T>> out(static_cast<std::size_t>(levels));
    std::vector<PosedImage<T>> views(images.begin(), images.end());
    CameraModel r = ref;
    for (int l = 0; l < levels; ++l) {
        if (l > 0) {
            r = r.halved();
            for (auto& v : views) {
                v.image = downsample2(v.image);
                v.camera = v.camera.halved();
            }
        }
        out[l].ref = r;
        out[l].views = views;
        out[l].psv = std::move(pyr.levels[l]);
    }
    return out;
}

template <class T>
double views_render_loss(const Mpi<T>& m, std::span<const PosedImage<T>> views) {
    double loss = 0.0;
    for (const auto& v : views) loss += mean_squared_error(render_novel_view(m, v.camera), v.image);
    return loss;
}

namespace {

struct Axis {
    std::vector<int> i0, i1;
    std::vector<double> f;
};

Axis upsample_axis(int in, int out) {
    Axis a;
    a.i0.resize(out);
    a.i1.resize(out);
    a.f.resize(out);
    for (int o = 0; o < out; ++o) {
        const double s = std::clamp((o + 0.5) / 2.0 - 0.5, 0.0, static_cast<double>(in - 1));
        const int i0 = std::min(static_cast<int>(std::floor(s)), std::max(in - 2, 0));
        a.i0[o] = i0;
        a.i1[o] = std::min(i0 + 1, in - 1);
        a.f[o] = s - i0;
    }
    return a;
}

template <class T>
SparseIndices select(const AlphaGradientVolume<T>& gate, const HsgdConfig& cfg) {
    return cfg.sparsifier == Sparsifier::topk ? select_topk(gate, cfg.k) : select_mvs_window(gate, cfg.k);
}

void check_finite(double loss, int iteration) {
    if (!std::isfinite(loss)) {
        throw NumericError("non-finite render loss at iteration " + std::to_string(iteration));
    }
}

template <class T>
void check_finite(const Mpi<T>& m, int iteration) {
    for (T v : m.color) {
        if (!std::isfinite(static_cast<double>(v))) {
            throw NumericError("non-finite mpi color at iteration " + std::to_string(iteration));
        }
    }
    for (T v : m.alpha) {
        if (!std::isfinite(static_cast<double>(v))) {
            throw NumericError("non-finite mpi alpha at iteration " + std::to_string(iteration));
        }
    }
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

template <class T>
Mpi<T> upsample_mpi(const Mpi<T>& m, const CameraModel& target) {
    const int H = target.height, W = target.width;
    require(H >= m.height && W >= m.width && (H + 1) / 2 == m.height && (W + 1) / 2 == m.width,
            "upsampling target must be twice the mpi size");
    Mpi<T> out(m.planes, H, W, m.depths, target);
    const Axis ay = upsample_axis(m.height, H);
    const Axis ax = upsample_axis(m.width, W);
#pragma omp parallel for collapse(2) schedule(static)
    for (int d = 0; d < m.planes; ++d) {
        for (int y = 0; y < H; ++y) {
            const double fy = ay.f[y];
            for (int x = 0; x < W; ++x) {
                const double fx = ax.f[x];
                const std::size_t v00 = m.voxel(d, ay.i0[y], ax.i0[x]), v01 = m.voxel(d, ay.i0[y], ax.i1[x]);
                const std::size_t v10 = m.voxel(d, ay.i1[y], ax.i0[x]), v11 = m.voxel(d, ay.i1[y], ax.i1[x]);
                const double w00 = (1 - fy) * (1 - fx), w01 = (1 - fy) * fx, w10 = fy * (1 - fx), w11 = fy * fx;
                const std::size_t o = out.voxel(d, y, x);
                for (int c = 0; c < 3; ++c) {
                    out.color[o * 3 + c] = static_cast<T>(
                        w00 * m.color[v00 * 3 + c] + w01 * m.color[v01 * 3 + c] + w10 * m.color[v10 * 3 + c] +
                        w11 * m.color[v11 * 3 + c]);
                }
                const double a = w00 * m.alpha[v00] + w01 * m.alpha[v01] + w10 * m.alpha[v10] + w11 * m.alpha[v11];
                out.alpha[o] = static_cast<T>(std::clamp(a, 0.0, 1.0));
            }
        }
    }
    return out;
}

template <class T>
Mpi<T> upsample_mpi(const Mpi<T>& m) {
    return upsample_mpi(m, doubled(m.ref_camera));
}

template <class T>
MpiGradients<T> upsample_backward(const MpiGradients<T>& grad, int planes, int in_height, int in_width,
                                  int out_height, int out_width) {
    const Axis ay = upsample_axis(in_height, out_height);
    const Axis ax = upsample_axis(in_width, out_width);
    const std::size_t n_in = static_cast<std::size_t>(in_height) * in_width;
    const std::size_t n_out = static_cast<std::size_t>(out_height) * out_width;
    MpiGradients<T> g;
    g.color.assign(planes * n_in * 3, T(0));
    g.alpha.assign(planes * n_in, T(0));
#pragma omp parallel for schedule(static)
    for (int d = 0; d < planes; ++d) {
        std::vector<double> acc(n_in * 4, 0.0);
        for (int y = 0; y < out_height; ++y) {
            const double fy = ay.f[y];
            for (int x = 0; x < out_width; ++x) {
                const double fx = ax.f[x];
                const std::size_t o = d * n_out + static_cast<std::size_t>(y) * out_width + x;
                const std::size_t taps[4] = {static_cast<std::size_t>(ay.i0[y]) * in_width + ax.i0[x],
                                             static_cast<std::size_t>(ay.i0[y]) * in_width + ax.i1[x],
                                             static_cast<std::size_t>(ay.i1[y]) * in_width + ax.i0[x],
                                             static_cast<std::size_t>(ay.i1[y]) * in_width + ax.i1[x]};
                const double w[4] = {(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx};
                for (int t = 0; t < 4; ++t) {
                    for (int c = 0; c < 3; ++c) acc[taps[t] * 4 + c] += w[t] * grad.color[o * 3 + c];
                    acc[taps[t] * 4 + 3] += w[t] * grad.alpha[o];
                }
            }
        }
        for (std::size_t q = 0; q < n_in; ++q) {
            for (int c = 0; c < 3; ++c) g.color[(d * n_in + q) * 3 + c] = static_cast<T>(acc[q * 4 + c]);
            g.alpha[d * n_in + q] = static_cast<T>(acc[q * 4 + 3]);
        }
    }
    return g;
}

template <class T>
HsgdResult<T> run(std::span<const PosedImage<T>> images, const CameraModel& ref, const HsgdConfig& cfg,
                  const HsgdNetworks<T>* nets, const Mpi<T>* warm) {
    cfg.validate();
    require(!images.empty(), "at least one input view is required");
    DepthSampling sampling = cfg.sampling;
    sampling.count = cfg.planes;
    const std::vector<double> depths = depth_planes(sampling);
    const int L = cfg.iterations;
    const std::vector<LevelData<T>> levels = build_levels(images, ref, depths, L);

    if (cfg.update == UpdateMode::learned) {
        require(nets != nullptr && static_cast<int>(nets->updates.size()) >= L,
                "learned updates need one network per pass");
        for (const auto& net : nets->updates) {
            require(net.activation == OutputActivation::residual, "update networks need the residual head");
            require(net.input_channels() == ChannelLayout{static_cast<int>(images.size())}.total(),
                    "update network input width must be 4N + 4");
        }
    }

    HsgdResult<T> result;
    int first_pass = 0;
    Mpi<T> m;
    if (warm != nullptr) {
        int level = -1;
        for (int l = 0; l < L; ++l) {
            if (levels[l].ref.height == warm->height && levels[l].ref.width == warm->width) level = l;
        }
        require(level >= 0, "warm-start mpi does not match any pyramid level");
        require(warm->planes == cfg.planes && warm->depths == depths, "warm-start mpi depths differ");
        warm->validate();
        m = *warm;
        m.ref_camera = levels[level].ref;
        first_pass = L - 1 - level;
    } else if (nets != nullptr && nets->initializer) {
        m = init_mpi_network(*nets->initializer, levels[L - 1].psv);
    } else {
        m = init_mpi_heuristic(levels[L - 1].psv, cfg.init_temperature);
    }

    int iteration = 0;
    for (int pass = first_pass; pass < L; ++pass) {
        const int level = L - 1 - pass;
        const LevelData<T>& lv = levels[level];
        if (pass > first_pass) m = upsample_mpi(m, lv.ref);
        const std::span<const PosedImage<T>> views(lv.views);
        const double base_lambda = cfg.step * lv.ref.height * lv.ref.width;
        double lambda = base_lambda;
        double loss = views_render_loss(m, views);
        check_finite(loss, iteration);
        // Line search acceptance uses the objective actually descended.
        const auto objective = [&](const Mpi<T>& x, double render) {
            return cfg.prior_weight > 0.0 ? render + cfg.prior_weight * sparsity_loss(x) : render;
        };
        double current = objective(m, loss);

        for (int step = 0; step < cfg.steps_per_level; ++step, ++iteration) {
            TraceEntry entry;
            entry.iteration = iteration;
            entry.level = level;
            entry.step = step;

            if (cfg.update == UpdateMode::learned) {
                const ConvNetParams<T>& net = nets->updates[pass];
                const GradientVolume<T> v = formulate_gradients(m, lv.psv);
                const SparseIndices s = select(alpha_gradients(m), cfg);
                const Volume<T> slab = gather(v.data, s);
                const auto t0 = Clock::now();
                const Volume<T> residual = conv_forward(net, slab);
                m = restore_and_update(m, residual, s, AlphaRule::logit);
                result.update_seconds += seconds_since(t0);
                loss = views_render_loss(m, views);
                current = objective(m, loss);
                entry.step_size = 1.0;
            } else {
                const AnalyticContext<T> ctx = prepare_analytic(m, views);
                std::optional<SparseIndices> s;
                if (!cfg.dense) s = select(alpha_gradients(m), cfg);
                AnalyticStep st;
                st.rule = cfg.alpha_rule;
                st.prior_weight = cfg.prior_weight;
                st.lambda = lambda;
                bool accepted = false;
                for (int halving = 0; halving <= 20; ++halving) {
                    const auto t0 = Clock::now();
                    Mpi<T> candidate =
                        cfg.dense ? apply_dense_update(m, analytic_residual_dense(ctx, m, st), cfg.alpha_rule)
                                  : restore_and_update(m, analytic_residual(ctx, m, *s, st), *s, cfg.alpha_rule);
                    result.update_seconds += seconds_since(t0);
                    const double cand_loss = views_render_loss(candidate, views);
                    check_finite(cand_loss, iteration);
                    const double cand_objective = objective(candidate, cand_loss);
                    if (!cfg.line_search || cand_objective <= current) {
                        m = std::move(candidate);
                        loss = cand_loss;
                        current = cand_objective;
                        accepted = true;
                        break;
                    }
                    st.lambda *= 0.5;
                }
                entry.step_size = accepted ? st.lambda : 0.0;
                lambda = accepted ? std::min(st.lambda * cfg.step_growth, base_lambda * 64.0) : st.lambda;
            }
            check_finite(loss, iteration);
            check_finite(m, iteration);
            entry.render_loss = loss;
            result.trace.push_back(entry);
        }
    }
    // Output lives in the caller's reference frame at full resolution.
    m.ref_camera = ref;
    result.mpi = std::move(m);
    return result;
}

#define HSGD_INSTANTIATE_PIPELINE(T)                                                                          \
    template std::vector<LevelData<T>> build_levels(std::span<const PosedImage<T>>, const CameraModel&,       \
                                                    const std::vector<double>&, int);                         \
    template double views_render_loss(const Mpi<T>&, std::span<const PosedImage<T>>);                         \
    template HsgdResult<T> run(std::span<const PosedImage<T>>, const CameraModel&, const HsgdConfig&,         \
                               const HsgdNetworks<T>*, const Mpi<T>*);                                        \
    template Mpi<T> upsample_mpi(const Mpi<T>&, const CameraModel&);                                          \
    template Mpi<T> upsample_mpi(const Mpi<T>&);                                                              \
    template MpiGradients<T> upsample_backward(const MpiGradients<T>&, int, int, int, int, int);

HSGD_INSTANTIATE_PIPELINE(float)
HSGD_INSTANTIATE_PIPELINE(double)

}  // namespace hsgd
