// Parallel kernels against their serial references, and the dense against the
// sparse analytic update. Run with OMP_NUM_THREADS to vary the thread count.

#include <benchmark/benchmark.h>

#include <random>

#include "hsgd/convnet.hpp"
#include "hsgd/pipeline.hpp"
#include "hsgd/reference.hpp"
#include "hsgd/scenegen.hpp"

using namespace hsgd;

namespace {

struct Fixture {
    SyntheticScene scene;
    std::vector<PosedImage<float>> inputs;
    Mpi<float> mpi;
    Homography h;
    CameraModel target;
    Image<float> gt;

    explicit Fixture(int height, int width, int planes) {
        SceneSpec sp;
        sp.seed = 2;
        sp.planes = planes;
        sp.depth.count = planes;
        sp.rig.height = height;
        sp.rig.width = width;
        sp.rig.sources = 2;
        scene = make_scene(sp);
        inputs = scene.inputs();
        mpi = init_mpi_heuristic(build_psv<float>(inputs, scene.reference().camera, depth_planes(sp.depth)));
        target = inputs[1].camera;
        gt = inputs[1].image;
        h = inverse_homography(scene.reference().camera, target, mpi.depths[planes / 2]);
    }
};

const Fixture& small() {
    static const Fixture f(96, 128, 16);
    return f;
}

const Fixture& full_size() {
    static const Fixture f(378, 512, 40);
    return f;
}

void BM_warp(benchmark::State& st) {
    const Fixture& f = small();
    for (auto _ : st) benchmark::DoNotOptimize(warp_image(f.gt, f.h));
}
void BM_warp_reference(benchmark::State& st) {
    const Fixture& f = small();
    for (auto _ : st) benchmark::DoNotOptimize(reference::warp_image(f.gt, f.h, f.gt.height, f.gt.width));
}

void BM_warp_adjoint(benchmark::State& st) {
    const Fixture& f = small();
    for (auto _ : st) benchmark::DoNotOptimize(warp_adjoint(f.gt, f.h, f.gt.height, f.gt.width));
}
void BM_warp_adjoint_reference(benchmark::State& st) {
    const Fixture& f = small();
    for (auto _ : st) benchmark::DoNotOptimize(reference::warp_adjoint_scatter(f.gt, f.h, f.gt.height, f.gt.width));
}

void BM_composite(benchmark::State& st) {
    const Fixture& f = small();
    for (auto _ : st) benchmark::DoNotOptimize(over_composite(f.mpi));
}
void BM_composite_reference(benchmark::State& st) {
    const Fixture& f = small();
    for (auto _ : st) benchmark::DoNotOptimize(reference::over_composite(f.mpi));
}

void BM_render_gradients(benchmark::State& st) {
    const Fixture& f = small();
    for (auto _ : st) benchmark::DoNotOptimize(render_loss_gradients(f.mpi, f.target, f.gt));
}
void BM_render_gradients_reference(benchmark::State& st) {
    const Fixture& f = small();
    for (auto _ : st) benchmark::DoNotOptimize(reference::render_loss_gradients(f.mpi, f.target, f.gt));
}

Volume<float> conv_input() {
    Volume<float> v(8, 8, 32, 32);
    std::mt19937 rng(3);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    for (auto& x : v.data) x = u(rng);
    return v;
}

void BM_conv3d(benchmark::State& st) {
    const Volume<float> in = conv_input();
    const ConvNetParams<float> net = make_convnet<float>(8, 16, 1, OutputActivation::residual, 4);
    for (auto _ : st) benchmark::DoNotOptimize(conv3d(in, net.layers.front()));
}
void BM_conv3d_reference(benchmark::State& st) {
    const Volume<float> in = conv_input();
    const ConvNetParams<float> net = make_convnet<float>(8, 16, 1, OutputActivation::residual, 4);
    for (auto _ : st) benchmark::DoNotOptimize(reference::conv3d(in, net.layers.front()));
}

void BM_topk(benchmark::State& st) {
    const auto gate = alpha_gradients(small().mpi);
    for (auto _ : st) benchmark::DoNotOptimize(select_topk(gate, 5));
}
void BM_topk_reference(benchmark::State& st) {
    const auto gate = alpha_gradients(small().mpi);
    for (auto _ : st) benchmark::DoNotOptimize(reference::select_topk(gate, 5));
}

// Update stage at the full volume size: residual at the kept voxels plus restore.
void BM_update_sparse(benchmark::State& st) {
    const Fixture& f = full_size();
    static const AnalyticContext<float> ctx = prepare_analytic<float>(f.mpi, f.inputs);
    AnalyticStep step;
    step.rule = AlphaRule::linear;
    const SparseIndices s = select_topk(alpha_gradients(f.mpi), static_cast<int>(st.range(0)));
    for (auto _ : st) benchmark::DoNotOptimize(restore_and_update(f.mpi, analytic_residual(ctx, f.mpi, s, step), s, step.rule));
    st.counters["fps"] = benchmark::Counter(static_cast<double>(st.iterations()), benchmark::Counter::kIsRate);
}
void BM_update_dense(benchmark::State& st) {
    const Fixture& f = full_size();
    static const AnalyticContext<float> ctx = prepare_analytic<float>(f.mpi, f.inputs);
    AnalyticStep step;
    step.rule = AlphaRule::linear;
    for (auto _ : st) benchmark::DoNotOptimize(apply_dense_update(f.mpi, analytic_residual_dense(ctx, f.mpi, step), step.rule));
    st.counters["fps"] = benchmark::Counter(static_cast<double>(st.iterations()), benchmark::Counter::kIsRate);
}

}  // namespace

BENCHMARK(BM_warp)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_warp_reference)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_warp_adjoint)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_warp_adjoint_reference)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_composite)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_composite_reference)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_render_gradients)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_render_gradients_reference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv3d)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv3d_reference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_topk)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_topk_reference)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_update_sparse)->Arg(5)->Arg(40)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_update_dense)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
