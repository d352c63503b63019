// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "hsgd/checkpoint.hpp"
#include "hsgd/io.hpp"
#include "hsgd/metrics.hpp"
#include "hsgd/pipeline.hpp"
#include "hsgd/scenegen.hpp"
#include "hsgd/training.hpp"
#include "oracles.hpp"

using namespace hsgd;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

int failures = 0;

struct Deferred {
    bool ok = false;
    std::string detail;
};
Deferred empty_voxels;  // computed with the convergence runs, reported in order

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void report(int id, const char* name, bool ok, const std::string& detail) {
    std::printf("%s criterion %2d %-28s %s\n", ok ? "PASS" : "FAIL", id, name, detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
}

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

template <class T>
bool bitwise_equal(const Mpi<T>& a, const Mpi<T>& b) {
    return a.alpha == b.alpha && a.color == b.color && a.depths == b.depths;
}

// Render loss against a random target at the reference camera: its gradients
// are the composite gradients chained with the MSE.
void gradient_correctness() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(101);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0.0;
    std::size_t checked = 0;
    const int mpis = 120;
    for (int t = 0; t < mpis; ++t) {
        const int D = 1 + static_cast<int>(rng() % 6);
        Mpi<double> m = oracle::random_mpi<double>(D, 4, 4, 1000 + t);
        Image<double> gt(4, 4, 3);
        for (auto& v : gt.data) v = u(rng);
        const CameraModel cam = m.ref_camera;
        const MpiGradients<double> g = render_loss_gradients(m, cam, gt);
        const auto loss = [&](const Mpi<double>& x) { return mean_squared_error(render_novel_view(x, cam), gt); };
        const double h = 1e-6;
        for (std::size_t i = 0; i < m.color.size(); ++i) {
            Mpi<double> x = m;
            const double fd = oracle::central_difference(
                [&](double v) {
                    x.color[i] = v;
                    return loss(x);
                },
                m.color[i], h);
            worst = std::max(worst, oracle::relative_error(fd, g.color[i], 1e-8));
            ++checked;
        }
        for (std::size_t i = 0; i < m.alpha.size(); ++i) {
            Mpi<double> x = m;
            const double fd = oracle::central_difference(
                [&](double v) {
                    x.alpha[i] = v;
                    return loss(x);
                },
                m.alpha[i], h);
            worst = std::max(worst, oracle::relative_error(fd, g.alpha[i], 1e-8));
            ++checked;
        }
    }
    const double secs = seconds_since(t0);
    report(1, "gradient correctness", worst < 1e-3 && secs < 10.0,
           std::to_string(mpis) + " MPIs, " + std::to_string(checked) + " partials, max rel err " +
               fmt("%.3g", worst) + ", " + fmt("%.2f s", secs));
}

void telescoping() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(202);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0.0;
    for (int t = 0; t < 1000; ++t) {
        const int D = 1 + static_cast<int>(rng() % 40);
        std::vector<float> a(static_cast<std::size_t>(D));
        for (auto& v : a) v = static_cast<float>(u(rng));
        const std::vector<float> A = alpha_gradients(a, D, 1, 1);
        double sum = 0.0, trans = 1.0;
        for (int d = 0; d < D; ++d) {
            sum += A[d];
            trans *= 1.0 - a[d];
        }
        worst = std::max(worst, std::abs(sum + trans - 1.0));
    }
    const double secs = seconds_since(t0);
    report(2, "telescoping identity", worst <= 1e-5 && secs < 1.0,
           "1000 float stacks, max |sum - 1| " + fmt("%.3g", worst) + ", " + fmt("%.3f s", secs));
}

void contribution_consistency() {
    double worst = 0.0, worst_float = 0.0;
    for (int t = 0; t < 50; ++t) {
        const Mpi<double> m = oracle::random_mpi<double>(1 + t % 12, 6, 7, 3000 + t, 0.0, 1.0);
        const Mpi<float> mf = oracle::random_mpi<float>(1 + t % 12, 6, 7, 3000 + t, 0.0, 1.0);
        const auto check = [](const auto& mpi) {
            const auto O = over_composite(mpi);
            const auto A = alpha_gradients(mpi);
            double err = 0.0;
            const std::size_t n = mpi.plane_size();
            for (std::size_t q = 0; q < n; ++q) {
                for (int c = 0; c < 3; ++c) {
                    double s = 0.0;
                    for (int d = 0; d < mpi.planes; ++d) s += mpi.color[(d * n + q) * 3 + c] * A.values[d * n + q];
                    err = std::max(err, std::abs(s - O.data[q * 3 + c]));
                }
            }
            return err;
        };
        worst = std::max(worst, check(m));
        worst_float = std::max(worst_float, check(mf));
    }
    report(3, "composite = sum c*A", worst <= 1e-6 && worst_float <= 1e-6,
           "50 MPIs, max err double " + fmt("%.3g", worst) + ", float " + fmt("%.3g", worst_float));
}

void dense_sparse_equivalence() {
    SceneSpec sp;
    sp.seed = 4;
    const SyntheticScene scene = make_scene(sp);
    const auto inputs = scene.inputs();
    HsgdConfig cfg;
    cfg.planes = sp.planes;
    cfg.iterations = 2;
    cfg.k = sp.planes;
    cfg.steps_per_level = 20;
    cfg.sampling = sp.depth;
    cfg.dense = true;
    const HsgdResult<float> dense = run<float>(inputs, scene.reference().camera, cfg);
    cfg.dense = false;
    const HsgdResult<float> topk = run<float>(inputs, scene.reference().camera, cfg);
    cfg.sparsifier = Sparsifier::mvs_window;
    const HsgdResult<float> mvs = run<float>(inputs, scene.reference().camera, cfg);
    const bool ok = bitwise_equal(dense.mpi, topk.mpi) && bitwise_equal(dense.mpi, mvs.mpi) &&
                    dense.trace.size() == topk.trace.size() && dense.trace.size() == mvs.trace.size();
    report(4, "dense/sparse equivalence", ok,
           std::string("k=D topk ") + (bitwise_equal(dense.mpi, topk.mpi) ? "identical" : "differs") +
               ", mvs-window " + (bitwise_equal(dense.mpi, mvs.mpi) ? "identical" : "differs"));
}

struct Convergence {
    double source_psnr = 0.0;
    double empty = 0.0;
    double seconds = 0.0;
    int steps = 0;
};

Convergence converge(const SyntheticScene& scene, int k) {
    const auto inputs = scene.inputs();
    HsgdConfig cfg;
    cfg.planes = scene.spec.planes;
    cfg.iterations = 3;
    cfg.k = k;
    cfg.steps_per_level = 166;
    cfg.sampling = scene.spec.depth;
    const auto t0 = Clock::now();
    const HsgdResult<float> r = run<float>(inputs, scene.reference().camera, cfg);
    Convergence c;
    c.seconds = seconds_since(t0);
    c.steps = cfg.iterations * cfg.steps_per_level;
    int n = 0;
    for (const auto& v : scene.views) {
        if (v.role != ViewRole::source) continue;
        c.source_psnr += psnr(render_novel_view(r.mpi, v.camera), v.image);
        ++n;
    }
    c.source_psnr /= n;
    c.empty = empty_fraction(r.mpi, 0.1);
    return c;
}

void convergence_and_empty() {
    SceneSpec sp;
    sp.seed = 3;
    const SyntheticScene scene = make_scene(sp);
    const Convergence full = converge(scene, sp.planes);
    const Convergence sparse = converge(scene, 5);
    const double gap = full.source_psnr - sparse.source_psnr;
    report(5, "oracle convergence",
           full.source_psnr >= 35.0 && std::abs(gap) <= 1.5 && full.seconds < 300.0 && sparse.seconds < 300.0,
           "D=8 64x48, " + std::to_string(full.steps) + " steps, source PSNR k=8 " + fmt("%.2f dB", full.source_psnr) +
               ", k=5 " + fmt("%.2f dB", sparse.source_psnr) + " (gap " + fmt("%.2f dB", gap) + "), " +
               fmt("%.1f s", full.seconds) + " + " + fmt("%.1f s", sparse.seconds));

    const double occupied = 1.0 - empty_fraction(scene.ground_truth, 0.1);
    empty_voxels.ok = occupied <= 0.3 && sparse.empty > 0.5;
    empty_voxels.detail = ("ground truth occupancy " + fmt("%.3f", occupied) + ", empty fraction k=5 " + fmt("%.3f", sparse.empty) +
               ", k=8 " + fmt("%.3f", full.empty));
}

void color_recovery() {
    SceneSpec sp;
    sp.seed = 3;
    sp.planes = 40;
    sp.depth.count = 40;
    const SyntheticScene scene = make_scene(sp);
    HsgdConfig cfg;
    cfg.sampling = sp.depth;
    const HsgdResult<float> r = run<float>(scene.inputs(), scene.reference().camera, cfg);
    std::vector<double> ratio;
    for (int k = 1; k <= 40; ++k) ratio.push_back(color_recovery_ratio(r.mpi, k).mean_ratio);
    double worst_drop = 0.0;
    for (std::size_t i = 1; i < ratio.size(); ++i) worst_drop = std::max(worst_drop, ratio[i - 1] - ratio[i]);
    const double at7 = ratio[6], at40 = ratio[39];
    const bool ok = worst_drop <= 1e-3 && std::abs(at40 - 1.0) <= 1e-9 && at7 >= 0.6;
    report(6, "color-recovery sweep", ok,
           "D=40, ratio k=1 " + fmt("%.3f", ratio[0]) + ", k=5 " + fmt("%.3f", ratio[4]) + ", k=7 " + fmt("%.3f", at7) +
               ", k=40 " + fmt("%.9f", at40) + ", max drop " + fmt("%.2g", worst_drop) +
               (at7 < 0.8 ? ", FLAG below 0.8 at k=7" : ", reaches 0.8 by k=7"));
}

void sparsity_extremes() {
    const auto loss_of = [](const std::vector<double>& alphas) {
        std::vector<double> depths;
        for (std::size_t d = 0; d < alphas.size(); ++d) depths.push_back(static_cast<double>(alphas.size() - d));
        Mpi<double> m(static_cast<int>(alphas.size()), 1, 1, depths,
                      oracle::camera_at(1.0, 1, 1, Eigen::Vector3d::Zero()));
        for (std::size_t d = 0; d < alphas.size(); ++d) m.alpha[d] = alphas[d];
        return sparsity_loss(m);
    };
    const double binary = loss_of({0.0, 1.0, 1.0, 0.0});
    const double half = loss_of({0.5, 0.5, 0.5});
    double worst = std::max(std::abs(binary), std::abs(half - 0.405465108108164));
    for (int i = 0; i <= 100; ++i) {
        const double a = i / 100.0;
        worst = std::max(worst, std::abs(loss_of({a}) - oracle::sparsity_integrand(a)));
    }
    std::vector<double> grid;
    double expect = 0.0;
    for (int i = 0; i < 37; ++i) {
        grid.push_back(std::fmod(i * 0.137, 1.0));
        expect += oracle::sparsity_integrand(grid.back());
    }
    worst = std::max(worst, std::abs(loss_of(grid) - expect / grid.size()));
    report(8, "sparsity-loss extremes", worst <= 1e-9,
           "binary " + fmt("%.3g", binary) + ", alpha 0.5 " + fmt("%.9f", half) + ", max err " + fmt("%.3g", worst));
}

void trainability() {
    // Gradient check on the frozen tiny pipeline in double precision.
    SceneSpec tiny;
    tiny.seed = 53;
    tiny.planes = 4;
    tiny.depth.count = 4;
    tiny.rig.height = 8;
    tiny.rig.width = 12;
    tiny.rig.sources = 2;
    const SyntheticScene ts = make_scene(tiny);
    std::vector<PosedImage<double>> in;
    for (const auto& v : ts.inputs()) in.push_back({v.image.cast<double>(), v.camera});
    PipelineShape gshape;
    gshape.planes = 4;
    gshape.iterations = 2;
    gshape.k = 2;
    gshape.sampling = tiny.depth;
    const TrainingSample<double> sample = prepare_sample<double>(in, 0, gshape);
    const TrainingModel<double> model = make_training_model<double>(static_cast<int>(in.size()), gshape, 3, 1, 54);
    const LossWeights w{{0.4, 0.6}, 0.5, 0.2};
    const PipelineLoss<double> base = pipeline_loss(model, sample, gshape, w, true);
    const auto flat = model.flatten();
    double worst = 0.0;
    std::mt19937_64 rng(55);
    for (int t = 0; t < 60; ++t) {
        const std::size_t i = rng() % flat.size();
        TrainingModel<double> x = model;
        auto f = flat;
        const double fd = oracle::central_difference(
            [&](double v) {
                f[i] = v;
                x.unflatten(f);
                return pipeline_loss(x, sample, gshape, w, false, &base.indices).total;
            },
            flat[i], 1e-6);
        worst = std::max(worst, oracle::relative_error(fd, base.gradient[i], 1e-9));
    }

    // Desk-scale training of the update networks on one plain scene.
    SceneSpec sp;
    sp.seed = 10;
    sp.rig.height = 24;
    sp.rig.width = 32;
    sp.rig.sources = 2;
    sp.occluder = sp.semi_transparent = sp.thin_structure = false;
    const std::vector<SyntheticScene> scenes{make_scene(sp)};
    TrainConfig cfg;
    cfg.epochs = 200;
    cfg.shape.sampling = sp.depth;
    cfg.shape.learned_initializer = false;
    const auto t0 = Clock::now();
    const TrainResult r = train(scenes, cfg);
    const double secs = seconds_since(t0);
    const double ratio = r.trace.back().total / r.trace.front().total;

    const SyntheticScene& s = scenes.front();
    const auto inputs = s.inputs();
    const HsgdNetworks<float> nets = r.model.networks(false);
    const HsgdResult<float> learned = run<float>(inputs, s.reference().camera, learned_config(cfg.shape), &nets);
    const auto levels = build_levels<float>(inputs, s.reference().camera, depth_planes(cfg.shape.sampling),
                                            cfg.shape.iterations);
    const Mpi<float> heur_full = init_mpi_heuristic(levels.front().psv);
    const Mpi<float> heur_coarse = upsample_mpi(init_mpi_heuristic(levels.back().psv), levels.front().ref);
    double l_learned = 0.0, l_full = 0.0, l_coarse = 0.0;
    for (const auto& t : s.targets()) {
        l_learned += mean_squared_error(render_novel_view(learned.mpi, t.camera), t.image);
        l_full += mean_squared_error(render_novel_view(heur_full, t.camera), t.image);
        l_coarse += mean_squared_error(render_novel_view(heur_coarse, t.camera), t.image);
    }
    const double n = static_cast<double>(s.targets().size());
    l_learned /= n;
    l_full /= n;
    l_coarse /= n;
    const bool ok = worst < 5e-3 && ratio < 0.1 && l_learned < std::min(l_full, l_coarse) && secs < 1800.0;
    report(9, "learned-update trainability", ok,
           "grad rel err " + fmt("%.3g", worst) + ", loss ratio " + fmt("%.4f", ratio) + " after " +
               std::to_string(cfg.epochs) + " epochs (" + fmt("%.1f s", secs) + "), target MSE learned " +
               fmt("%.3g", l_learned) + " vs heuristic " + fmt("%.3g", l_full) + " (full res), " +
               fmt("%.3g", l_coarse) + " (coarse)");
}

double time_update(const AnalyticContext<float>& ctx, const Mpi<float>& m, int k, int repeat) {
    AnalyticStep step;
    step.rule = AlphaRule::linear;
    const SparseIndices s = select_topk(alpha_gradients(m), k);
    double best = 1e300;
    for (int r = 0; r < repeat; ++r) {
        const auto t0 = Clock::now();
        const Mpi<float> out = restore_and_update(m, analytic_residual(ctx, m, s, step), s, step.rule);
        best = std::min(best, seconds_since(t0));
        if (out.alpha.empty()) return 0.0;
    }
    return best;
}

void performance() {
    SceneSpec sp;
    sp.seed = 3;
    sp.planes = 40;
    sp.depth.count = 40;
    sp.rig.height = 378;
    sp.rig.width = 512;
    sp.rig.sources = 2;
    const SyntheticScene scene = make_scene(sp);
    const auto inputs = scene.inputs();
    const Mpi<float> m =
        init_mpi_heuristic(build_psv<float>(inputs, scene.reference().camera, depth_planes(sp.depth)));
    const AnalyticContext<float> ctx = prepare_analytic<float>(m, inputs);
    const double t5 = time_update(ctx, m, 5, 3);
    const double t40 = time_update(ctx, m, 40, 3);
    const double speedup = t40 / t5;
    report(10, "update-stage speedup", speedup >= 4.0,
           "378x512x40, k=5 " + fmt("%.3f s", t5) + " (" + fmt("%.2f FPS", 1.0 / t5) + "), k=40 " +
               fmt("%.3f s", t40) + " (" + fmt("%.2f FPS", 1.0 / t40) + "), speedup " + fmt("%.2fx", speedup));
}

void determinism() {
    const fs::path root = fs::temp_directory_path() / "hsgd_acceptance_determinism";
    fs::remove_all(root);
    SceneSpec sp;
    sp.seed = 6;
    const SyntheticScene scene = make_scene(sp);
    std::vector<std::string> files;
    for (int run_id = 0; run_id < 2; ++run_id) {
        const fs::path dir = root / ("run" + std::to_string(run_id));
        fs::create_directories(dir);
        save_scene((dir / "scene").string(), to_bundle(scene));
        HsgdConfig cfg;
        cfg.planes = sp.planes;
        cfg.iterations = 2;
        cfg.k = 4;
        cfg.steps_per_level = 40;
        cfg.sampling = sp.depth;
        cfg.seed = 11;
        const HsgdResult<float> r = run<float>(scene.inputs(), scene.reference().camera, cfg);
        save_mpi((dir / "mpi").string(), r.mpi);
        std::vector<std::vector<double>> trace, sweep;
        for (const auto& e : r.trace) trace.push_back({double(e.iteration), double(e.level), e.render_loss, e.step_size});
        write_csv((dir / "trace.csv").string(), {"iteration", "level", "render_loss", "step_size"}, trace);
        for (int k = 1; k <= sp.planes; ++k) {
            const ColorRecovery c = color_recovery_ratio(r.mpi, k);
            sweep.push_back({double(k), c.mean_ratio, c.median_ratio, c.psnr});
        }
        write_csv((dir / "sweep.csv").string(), {"k", "ratio", "median_ratio", "psnr"}, sweep);

        TrainConfig tc;
        tc.epochs = 3;
        tc.hidden = 4;
        tc.blocks = 1;
        tc.seed = 12;
        tc.shape.sampling = sp.depth;
        tc.checkpoint = (dir / "model.ckpt").string();
        tc.trace = (dir / "train.csv").string();
        SceneSpec small = sp;
        small.rig.height = 16;
        small.rig.width = 24;
        train({make_scene(small)}, tc);
    }
    std::size_t compared = 0, differing = 0;
    const fs::path a = root / "run0", b = root / "run1";
    for (const auto& entry : fs::recursive_directory_iterator(a)) {
        if (!entry.is_regular_file()) continue;
        const fs::path rel = fs::relative(entry.path(), a);
        ++compared;
        if (!fs::exists(b / rel) || read_file(entry.path().string()) != read_file((b / rel).string())) ++differing;
    }
    fs::remove_all(root);
    report(11, "determinism", compared > 0 && differing == 0,
           std::to_string(compared) + " files (scene, MPI bundle, CSVs, checkpoint), " + std::to_string(differing) +
               " differ");
}

}  // namespace

int main() {
    const auto t0 = Clock::now();
    gradient_correctness();
    telescoping();
    contribution_consistency();
    dense_sparse_equivalence();
    convergence_and_empty();
    color_recovery();
    report(7, "empty-voxel statistic", empty_voxels.ok, empty_voxels.detail);
    sparsity_extremes();
    trainability();
    performance();
    determinism();
    std::printf("%s: %d failing, %.1f s total\n", failures == 0 ? "ALL PASS" : "SOME FAIL", failures,
                seconds_since(t0));
    return failures == 0 ? 0 : 1;
}
