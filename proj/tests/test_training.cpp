#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "hsgd/checkpoint.hpp"
#include "hsgd/training.hpp"
#include "oracles.hpp"

using namespace hsgd;

namespace {

Image<double> filled(double v) { return Image<double>(2, 2, 3, v); }

SceneSpec tiny_spec(std::uint64_t seed) {
    SceneSpec sp;
    sp.seed = seed;
    sp.planes = 4;
    sp.depth.count = 4;
    sp.rig.height = 8;
    sp.rig.width = 12;
    sp.rig.sources = 2;
    return sp;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("render loss weighting") {
    LossWeights w{{1.0}, 0.0, 0.2};
    CHECK(render_loss<double>({{filled(0.3), filled(0.1)}}, {{filled(0.3), filled(0.9)}}, w) == 0.0);
    CHECK(render_loss<double>({{filled(0.2)}}, {{filled(0.0)}}, w) == doctest::Approx(0.04));
    LossWeights defaults{{0.2, 0.3, 0.5}, 0.5, 0.2};
    const double ref_err = std::sqrt(0.01);
    std::vector<std::vector<Image<double>>> r, g;
    for (int i = 0; i < 3; ++i) {
        r.push_back({filled(ref_err), filled(0.4)});
        g.push_back({filled(0.0), filled(0.4)});
    }
    CHECK(render_loss(r, g, defaults) == doctest::Approx(0.01));
    r[1][1] = filled(0.6);
    CHECK(render_loss(r, g, defaults) == doctest::Approx(0.01 + 0.3 * 0.5 * 0.04));
    CHECK_THROWS_AS(render_loss<double>({{filled(0.2)}}, {{filled(0.0)}}, defaults), ParameterError);
}

TEST_CASE("sparsity loss formula and extremes") {
    Mpi<double> m = oracle::random_mpi<double>(3, 2, 2, 51);
    std::fill(m.alpha.begin(), m.alpha.end(), 0.0);
    CHECK(sparsity_loss(m) == 0.0);
    std::fill(m.alpha.begin(), m.alpha.end(), 1.0);
    CHECK(sparsity_loss(m) == 0.0);
    std::fill(m.alpha.begin(), m.alpha.end(), 0.5);
    CHECK(sparsity_loss(m) == doctest::Approx(std::log(1.5)).epsilon(1e-12));
    m = oracle::random_mpi<double>(3, 2, 2, 52, 0.0, 1.0);
    double want = 0.0;
    for (double a : m.alpha) want += oracle::sparsity_integrand(a);
    CHECK(sparsity_loss(m) == doctest::Approx(want / m.alpha.size()).epsilon(1e-12));
    const auto g = sparsity_loss_gradient(m);
    for (std::size_t i = 0; i < m.alpha.size(); ++i) {
        Mpi<double> x = m;
        const double fd = oracle::central_difference(
            [&](double v) {
                x.alpha[i] = v;
                return sparsity_loss(x);
            },
            m.alpha[i], 1e-7);
        CHECK(g[i] == doctest::Approx(fd).epsilon(1e-5));
    }
    LossWeights w;
    CHECK(total_loss(0.3, 0.1, w) == doctest::Approx(0.3 + 0.2 * 0.1));
    w.sparsity = 0.0;
    CHECK(total_loss(0.3, 0.1, w) == 0.3);
}

TEST_CASE("adam follows the textbook recurrence") {
    AdamState s;
    s.lr = 1e-3;
    std::vector<double> p{0.5};
    adam_step(s, p, std::vector<double>{1.0});
    CHECK(p[0] == doctest::Approx(0.5 - 1e-3).epsilon(1e-9));
    for (int i = 0; i < 4; ++i) adam_step(s, p, std::vector<double>{0.3 * (i + 1)});
    CHECK(p[0] == doctest::Approx(oracle::adam_scalar(0.5, {1.0, 0.3, 0.6, 0.9, 1.2}, 1e-3)).epsilon(1e-12));
    CHECK(s.step == 5);
    AdamState z;
    std::vector<double> q{1.0, -2.0};
    adam_step(z, q, std::vector<double>{0.0, 0.0});
    CHECK(q == std::vector<double>{1.0, -2.0});
    CHECK(z.step == 1);
}

TEST_CASE("learning-rate schedules") {
    AdamState s;
    s.lr = 1.0;
    for (int i = 0; i < 9; ++i) CHECK_FALSE(schedule_step(s, 1.0, LrSchedule::plateau, 10));
    CHECK_FALSE(schedule_step(s, 1.0, LrSchedule::plateau, 10));
    CHECK(schedule_step(s, 1.0, LrSchedule::plateau, 10));
    CHECK(s.lr == 0.5);
    AdamState t;
    t.lr = 1.0;
    double loss = 10.0;
    for (int i = 0; i < 9; ++i) CHECK_FALSE(schedule_step(t, loss -= 0.1, LrSchedule::literal, 10));
    CHECK(schedule_step(t, loss -= 0.1, LrSchedule::literal, 10));
    CHECK(t.lr == 0.5);
    CHECK_FALSE(schedule_step(t, loss + 1.0, LrSchedule::literal, 10));
}

TEST_CASE("config parsing") {
    CHECK_FALSE(parse_train_config("initializer = heuristic\n").shape.learned_initializer);
    CHECK(parse_train_config("initializer = learned\n").shape.learned_initializer);
    CHECK_THROWS_AS(parse_train_config("initializer = magic\n"), ValidationError);
    const TrainConfig c = parse_train_config(
        "# comment\nepochs = 7\nlr = 0.002\nweights = 0.25, 0.75\nmu = 0.4\nlambda_s = 0.1\nD = 6\nk = 2\nL = 2\n"
        "near = 1.5\nfar = 9\nhidden = 5\nblocks = 2\nschedule = literal\npatience = 3\n"
        "scene = seed:3,height:10,width:14,sources:2,baseline:0.25\n");
    CHECK(c.epochs == 7);
    CHECK(c.lr == 0.002);
    CHECK(c.weights.iteration == std::vector<double>{0.25, 0.75});
    CHECK(c.weights.source == 0.4);
    CHECK(c.shape.planes == 6);
    CHECK(c.shape.sampling.count == 6);
    CHECK(c.shape.sampling.near == 1.5);
    CHECK(c.schedule == LrSchedule::literal);
    REQUIRE(c.scenes.size() == 1);
    CHECK(c.scenes[0].rig.width == 14);
    CHECK(c.scenes[0].rig.baseline == 0.25);
    CHECK(c.scenes[0].planes == 6);
    CHECK_THROWS_AS(parse_train_config("bogus = 1\n"), ValidationError);
    CHECK_THROWS_AS(parse_train_config("epochs\n"), ValidationError);
    CHECK_THROWS_AS(parse_train_config("epochs = many\n"), ValidationError);
    CHECK_THROWS_AS(parse_train_config("L = 3\n"), ValidationError);
}

TEST_CASE("pipeline gradient matches finite differences with frozen selections") {
    const SyntheticScene scene = make_scene(tiny_spec(53));
    std::vector<PosedImage<double>> in;
    for (const auto& v : scene.inputs()) in.push_back({v.image.cast<double>(), v.camera});
    PipelineShape shape;
    shape.planes = 4;
    shape.iterations = 2;
    shape.k = 2;
    shape.sampling = scene.spec.depth;
    const TrainingSample<double> sample = prepare_sample<double>(in, 0, shape);
    const TrainingModel<double> model = make_training_model<double>(static_cast<int>(in.size()), shape, 3, 1, 54);
    const LossWeights w{{0.4, 0.6}, 0.5, 0.2};
    const PipelineLoss<double> base = pipeline_loss(model, sample, shape, w, true);
    CHECK(base.total == doctest::Approx(base.render + 0.2 * base.sparsity));
    const auto flat = model.flatten();
    REQUIRE(base.gradient.size() == flat.size());
    std::mt19937_64 rng(55);
    for (int t = 0; t < 25; ++t) {
        const std::size_t i = rng() % flat.size();
        TrainingModel<double> x = model;
        auto f = flat;
        const double fd = oracle::central_difference(
            [&](double v) {
                f[i] = v;
                x.unflatten(f);
                return pipeline_loss(x, sample, shape, w, false, &base.indices).total;
            },
            flat[i], 1e-6);
        CHECK(oracle::relative_error(fd, base.gradient[i], 1e-9) < 5e-3);
    }
}

TEST_CASE("heuristic initializer trains only the update networks") {
    const SyntheticScene scene = make_scene(tiny_spec(57));
    std::vector<PosedImage<double>> in;
    for (const auto& v : scene.inputs()) in.push_back({v.image.cast<double>(), v.camera});
    PipelineShape shape;
    shape.planes = 4;
    shape.iterations = 2;
    shape.k = 2;
    shape.sampling = scene.spec.depth;
    shape.learned_initializer = false;
    const TrainingSample<double> sample = prepare_sample<double>(in, 0, shape);
    const TrainingModel<double> model = make_training_model<double>(static_cast<int>(in.size()), shape, 3, 1, 58);
    const LossWeights w{{0.4, 0.6}, 0.5, 0.2};
    const PipelineLoss<double> base = pipeline_loss(model, sample, shape, w, true);
    const std::size_t n_init = model.initializer.parameter_count();
    for (std::size_t i = 0; i < n_init; ++i) REQUIRE(base.gradient[i] == 0.0);
    const auto flat = model.flatten();
    std::mt19937_64 rng(59);
    for (int t = 0; t < 15; ++t) {
        const std::size_t i = n_init + rng() % (flat.size() - n_init);
        TrainingModel<double> x = model;
        auto f = flat;
        const double fd = oracle::central_difference(
            [&](double v) {
                f[i] = v;
                x.unflatten(f);
                return pipeline_loss(x, sample, shape, w, false, &base.indices).total;
            },
            flat[i], 1e-6);
        CHECK(oracle::relative_error(fd, base.gradient[i], 1e-9) < 5e-3);
    }

    // The inference pipeline without an initializer network computes the same MPI.
    const HsgdNetworks<double> nets = model.networks(false);
    CHECK_FALSE(nets.initializer.has_value());
    const HsgdResult<double> r = run<double>(in, scene.reference().camera, learned_config(shape), &nets);
    REQUIRE(r.mpi.alpha.size() == base.final_mpi.alpha.size());
    for (std::size_t i = 0; i < r.mpi.alpha.size(); ++i) CHECK(r.mpi.alpha[i] == doctest::Approx(base.final_mpi.alpha[i]).epsilon(1e-12));
    for (std::size_t i = 0; i < r.mpi.color.size(); ++i) CHECK(r.mpi.color[i] == doctest::Approx(base.final_mpi.color[i]).epsilon(1e-12));
}

TEST_CASE("training is deterministic and zero epochs leave parameters alone") {
    TrainConfig cfg;
    cfg.epochs = 0;
    cfg.hidden = 3;
    cfg.blocks = 1;
    cfg.shape.planes = 4;
    cfg.shape.k = 2;
    cfg.shape.sampling = tiny_spec(1).depth;
    const std::vector<SyntheticScene> scenes{make_scene(tiny_spec(56))};
    const TrainResult none = train(scenes, cfg);
    CHECK(none.trace.empty());
    const auto start = make_training_model<float>(3, cfg.shape, cfg.hidden, cfg.blocks, cfg.seed);
    CHECK(none.model.flatten() == start.flatten());
    cfg.epochs = 3;
    const TrainResult a = train(scenes, cfg);
    const TrainResult b = train(scenes, cfg);
    REQUIRE(a.trace.size() == 3);
    for (int i = 0; i < 3; ++i) CHECK(a.trace[i].total == b.trace[i].total);
    CHECK(a.model.flatten() == b.model.flatten());
    CHECK(a.model.flatten() != start.flatten());
}

TEST_CASE("checkpoints round trip and reject corruption") {
    PipelineShape shape;
    const auto model = make_training_model<float>(3, shape, 4, 2, 57);
    const auto nets = model_networks(model);
    const std::string bytes = encode_checkpoint(nets);
    const auto back = decode_checkpoint(bytes);
    REQUIRE(back.size() == nets.size());
    CHECK(model_from_networks(back).flatten() == model.flatten());
    CHECK(back[0].activation == OutputActivation::initializer);
    CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), ValidationError);
    CHECK_THROWS_AS(decode_checkpoint("NOTACKPT" + bytes.substr(8)), ValidationError);
    std::string bumped = bytes;
    bumped[8] = 9;
    CHECK_THROWS_AS(decode_checkpoint(bumped), ValidationError);
    const auto path = std::filesystem::temp_directory_path() / "hsgd_unit_ckpt.bin";
    save_checkpoint(path.string(), nets);
    CHECK(encode_checkpoint(load_checkpoint(path.string())) == bytes);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_checkpoint(path.string()), ValidationError);
}

}  // TEST_SUITE
