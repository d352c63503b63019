#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "hsgd/checkpoint.hpp"
#include "hsgd/io.hpp"
#include "hsgd/metrics.hpp"
#include "hsgd/pipeline.hpp"
#include "hsgd/scenegen.hpp"
#include "hsgd/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace hsgd;

namespace {

using Clock = std::chrono::steady_clock;

constexpr int kExitValidation = 1;
constexpr int kExitNumeric = 2;

Sparsifier parse_sparsifier(const std::string& s) {
    if (s == "topk") return Sparsifier::topk;
    if (s == "mvs-window" || s == "mvs_window") return Sparsifier::mvs_window;
    throw ParameterError("unknown sparsifier '" + s + "'");
}

void write_trace(const std::string& path, const std::vector<TraceEntry>& trace) {
    std::vector<std::vector<double>> rows;
    rows.reserve(trace.size());
    for (const auto& e : trace) {
        rows.push_back({static_cast<double>(e.iteration), static_cast<double>(e.level), static_cast<double>(e.step),
                        e.render_loss, e.step_size});
    }
    write_csv(path, {"iteration", "level", "step", "render_loss", "step_size"}, rows);
}

struct BuildArgs {
    std::string scene, out, params, trace, sparsifier = "topk", update = "analytic", init = "learned";
    int planes = 40, iters = 3, k = 5, steps = 100;
    double step = 1.0, growth = 2.0, prior = 0.03;
    std::uint64_t seed = 0;
    bool dense = false;
};

int cmd_build(const BuildArgs& a) {
    const SceneBundle scene = load_scene(a.scene);
    const auto inputs = scene.inputs();
    HsgdConfig cfg;
    cfg.planes = a.planes;
    cfg.iterations = a.iters;
    cfg.k = a.k;
    cfg.sparsifier = parse_sparsifier(a.sparsifier);
    cfg.sampling = {scene.near, scene.far, a.planes, DepthSpacing::inverse_depth};
    cfg.seed = a.seed;
    cfg.steps_per_level = a.steps;
    cfg.step = a.step;
    cfg.step_growth = a.growth;
    cfg.prior_weight = a.prior;
    cfg.dense = a.dense;

    HsgdNetworks<float> nets;
    const HsgdNetworks<float>* nets_ptr = nullptr;
    if (a.update == "learned") {
        if (a.params.empty()) throw ParameterError("--update learned needs --params");
        const TrainingModel<float> model = model_from_networks(load_checkpoint(a.params));
        if (a.init != "learned" && a.init != "heuristic") throw ParameterError("unknown initializer '" + a.init + "'");
        nets = model.networks(a.init == "learned");
        nets_ptr = &nets;
        cfg.update = UpdateMode::learned;
        cfg.steps_per_level = 1;
    } else if (a.update != "analytic") {
        throw ParameterError("unknown update mode '" + a.update + "'");
    }

    const auto t0 = Clock::now();
    const HsgdResult<float> r = run<float>(inputs, scene.reference().camera, cfg, nets_ptr);
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    fs::create_directories(a.out);
    save_mpi(a.out, r.mpi);
    write_trace(a.trace.empty() ? (fs::path(a.out) / "trace.csv").string() : a.trace, r.trace);
    log_message(LogLevel::info, "build: " + std::to_string(secs) + " s, update stage " +
                                    std::to_string(r.update_seconds) + " s");
    return 0;
}

int cmd_render(const std::string& mpi_dir, const std::string& pose, const std::string& out) {
    const Mpi<float> m = load_mpi(mpi_dir);
    const CameraModel cam = load_pose(pose);
    write_png(out, render_novel_view(m, cam));
    return 0;
}

int cmd_eval(const std::string& scene_dir, const std::string& mpi_dir, const std::string& csv) {
    const SceneBundle scene = load_scene(scene_dir);
    const Mpi<float> m = load_mpi(mpi_dir);
    std::vector<std::vector<double>> rows;
    std::printf("%-6s %-10s %10s %8s\n", "view", "role", "psnr", "ssim");
    for (std::size_t i = 0; i < scene.views.size(); ++i) {
        const SceneView& v = scene.views[i];
        const Image<float> r = render_novel_view(m, v.camera);
        const double p = psnr(r, v.image), s = ssim(r, v.image);
        std::printf("%-6zu %-10s %10.4f %8.5f\n", i, role_name(v.role), p, s);
        rows.push_back({static_cast<double>(i), static_cast<double>(static_cast<int>(v.role)), p, s});
    }
    if (!csv.empty()) write_csv(csv, {"view", "role", "psnr", "ssim"}, rows);
    return 0;
}

struct BenchArgs {
    bool dense = false, sparse = false;
    int k = 5, repeat = 5, planes = 40, height = 378, width = 512, sources = 2;
    std::uint64_t seed = 1;
    std::string out;
};

int cmd_bench(const BenchArgs& a) {
    if (a.dense == a.sparse) throw ParameterError("choose exactly one of --dense or --sparse");
    if (a.repeat < 1) throw ParameterError("--repeat must be at least 1");
    SceneSpec sp;
    sp.seed = a.seed;
    sp.planes = a.planes;
    sp.depth.count = a.planes;
    sp.rig.height = a.height;
    sp.rig.width = a.width;
    sp.rig.sources = a.sources;
    const SyntheticScene scene = make_scene(sp);
    const auto inputs = scene.inputs();
    const Mpi<float> m = init_mpi_heuristic(build_psv<float>(inputs, scene.reference().camera,
                                                             depth_planes(sp.depth)));
    const AnalyticContext<float> ctx = prepare_analytic<float>(m, inputs);
    AnalyticStep step;
    step.lambda = 1.0;
    step.rule = AlphaRule::linear;
    const int k = a.dense ? a.planes : a.k;
    const SparseIndices s = select_topk(alpha_gradients(m), k);

    std::vector<double> times;
    for (int r = 0; r < a.repeat; ++r) {
        const auto t0 = Clock::now();
        const Mpi<float> out = a.dense ? apply_dense_update(m, analytic_residual_dense(ctx, m, step), step.rule)
                                       : restore_and_update(m, analytic_residual(ctx, m, s, step), s, step.rule);
        times.push_back(std::chrono::duration<double>(Clock::now() - t0).count());
        if (out.alpha.empty()) throw NumericError("empty update result");
    }
    const double best = *std::min_element(times.begin(), times.end());
    double mean = 0.0;
    for (double t : times) mean += t;
    mean /= static_cast<double>(times.size());
    const std::vector<std::string> header{"dense", "k", "planes", "height", "width", "repeat",
                                          "min_seconds", "mean_seconds", "fps"};
    const std::vector<std::vector<double>> rows{{a.dense ? 1.0 : 0.0, static_cast<double>(k),
                                                 static_cast<double>(a.planes), static_cast<double>(a.height),
                                                 static_cast<double>(a.width), static_cast<double>(a.repeat), best,
                                                 mean, 1.0 / best}};
    if (a.out.empty()) {
        std::string line;
        for (std::size_t i = 0; i < header.size(); ++i) line += (i ? "," : "") + header[i];
        std::cout << line << "\n";
        line.clear();
        for (std::size_t i = 0; i < rows[0].size(); ++i) line += (i ? "," : "") + format_number(rows[0][i]);
        std::cout << line << "\n";
    } else {
        write_csv(a.out, header, rows);
    }
    return 0;
}

std::vector<int> parse_ks(const std::string& text) {
    std::vector<int> ks;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            ks.push_back(std::stoi(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ParameterError("invalid k list entry '" + item + "'");
        }
    }
    if (ks.empty()) throw ParameterError("empty k list");
    return ks;
}

struct SweepArgs {
    std::string scene, mpi, out, ks;
    int planes = 40, iters = 3, steps = 100;
    std::string mode = "contribution";
};

int cmd_sweep_k(const SweepArgs& a) {
    Mpi<float> m;
    if (!a.mpi.empty()) {
        m = load_mpi(a.mpi);
    } else {
        if (a.scene.empty()) throw ParameterError("sweep-k needs --scene or --mpi");
        const SceneBundle scene = load_scene(a.scene);
        HsgdConfig cfg;
        cfg.planes = a.planes;
        cfg.iterations = a.iters;
        cfg.k = a.planes;
        cfg.dense = true;
        cfg.steps_per_level = a.steps;
        cfg.sampling = {scene.near, scene.far, a.planes, DepthSpacing::inverse_depth};
        m = run<float>(scene.inputs(), scene.reference().camera, cfg).mpi;
    }
    const RecoveryMode mode = a.mode == "alpha-zeroed" ? RecoveryMode::alpha_zeroed : RecoveryMode::contribution;
    if (a.mode != "alpha-zeroed" && a.mode != "contribution") throw ParameterError("unknown mode '" + a.mode + "'");
    std::vector<int> ks;
    if (a.ks.empty()) {
        for (int k = 1; k <= m.planes; ++k) ks.push_back(k);
    } else {
        ks = parse_ks(a.ks);
    }
    std::vector<std::vector<double>> rows;
    for (int k : ks) {
        if (k < 1 || k > m.planes) throw ParameterError("k = " + std::to_string(k) + " outside [1, D]");
        const ColorRecovery c = color_recovery_ratio(m, k, mode);
        rows.push_back({static_cast<double>(k), c.mean_ratio, c.median_ratio, c.psnr});
    }
    write_csv(a.out, {"k", "ratio", "median_ratio", "psnr"}, rows);
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& scenes_out) {
    const TrainConfig cfg = parse_train_config(read_file(config_path));
    std::vector<SyntheticScene> scenes;
    for (const SceneSpec& sp : cfg.scenes) scenes.push_back(make_scene(sp));
    const TrainResult r = train(scenes, cfg);
    if (!scenes_out.empty()) {
        for (std::size_t i = 0; i < scenes.size(); ++i) {
            save_scene((fs::path(scenes_out) / ("scene_" + std::to_string(i))).string(), to_bundle(scenes[i]));
        }
    }
    if (!r.trace.empty()) {
        std::printf("epochs %zu initial %.6g final %.6g\n", r.trace.size(), r.trace.front().total,
                    r.trace.back().total);
    }
    return 0;
}

int cmd_export_viewer(const std::string& mpi_dir, const std::string& out, const std::string& viewer_dist) {
    const Mpi<float> m = load_mpi(mpi_dir);
    fs::create_directories(out);
    save_mpi(out, m);
    json meta = json::parse(read_file((fs::path(out) / "metadata.json").string()));
    json manifest = meta;
    manifest["metadata"] = "metadata.json";
    manifest["assets"] = json::array();
    for (const auto& f : meta["plane_files"]) manifest["assets"].push_back(f);
    manifest["draw_order"] = "far-to-near";
    manifest["premultiplied"] = false;
    if (!viewer_dist.empty()) {
        if (!fs::is_directory(viewer_dist)) throw ValidationError(viewer_dist + ": viewer assets not found");
        fs::copy(viewer_dist, out, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
        manifest["viewer"] = true;
    } else {
        manifest["viewer"] = false;
    }
    write_file_atomic((fs::path(out) / "manifest.json").string(), manifest.dump(2) + "\n");
    return 0;
}

struct MakeSceneArgs {
    std::string out;
    std::uint64_t seed = 1;
    int planes = 8, height = 48, width = 64, sources = 3;
    double baseline = 0.33, near = 2.0, far = 8.0;
    bool plain = false;
    bool save_gt = false;
};

int cmd_make_scene(const MakeSceneArgs& a) {
    SceneSpec sp;
    sp.seed = a.seed;
    sp.planes = a.planes;
    sp.depth = {a.near, a.far, a.planes, DepthSpacing::inverse_depth};
    sp.rig.height = a.height;
    sp.rig.width = a.width;
    sp.rig.sources = a.sources;
    sp.rig.baseline = a.baseline;
    if (a.plain) sp.occluder = sp.semi_transparent = sp.thin_structure = false;
    const SyntheticScene scene = make_scene(sp);
    save_scene(a.out, to_bundle(scene));
    if (a.save_gt) save_mpi((fs::path(a.out) / "ground_truth").string(), scene.ground_truth);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hierarchical sparse gradient descent for multi-plane images"};
    app.require_subcommand(1);

    BuildArgs build;
    auto* b = app.add_subcommand("build", "Reconstruct an MPI from a scene bundle");
    b->add_option("--scene", build.scene, "Scene directory")->required();
    b->add_option("--out", build.out, "Output MPI bundle directory")->required();
    b->add_option("--planes", build.planes, "Number of depth planes");
    b->add_option("--iters", build.iters, "Pyramid levels (refinement passes)");
    b->add_option("--k", build.k, "Voxels kept per pixel");
    b->add_option("--update", build.update, "analytic or learned");
    b->add_option("--params", build.params, "Checkpoint for learned updates");
    b->add_option("--init", build.init, "learned or heuristic initializer in learned mode");
    b->add_option("--sparsifier", build.sparsifier, "topk or mvs-window");
    b->add_option("--steps", build.steps, "Analytic steps per level");
    b->add_option("--step", build.step, "Analytic step size (scaled by pixels per level)");
    b->add_option("--growth", build.growth, "Step growth after an accepted step");
    b->add_option("--prior", build.prior, "Binary-alpha prior weight");
    b->add_option("--seed", build.seed, "Seed");
    b->add_option("--trace", build.trace, "Trace CSV path (default OUT/trace.csv)");
    b->add_flag("--dense", build.dense, "Update every voxel");

    std::string render_mpi, render_pose, render_out;
    auto* r = app.add_subcommand("render", "Render an MPI bundle at a pose");
    r->add_option("--mpi", render_mpi)->required();
    r->add_option("--pose", render_pose)->required();
    r->add_option("--out", render_out)->required();

    std::string eval_scene, eval_mpi, eval_csv;
    auto* e = app.add_subcommand("eval", "PSNR and SSIM of an MPI against every scene view");
    e->add_option("--scene", eval_scene)->required();
    e->add_option("--mpi", eval_mpi)->required();
    e->add_option("--csv", eval_csv, "Also write the table as CSV");

    BenchArgs bench;
    auto* be = app.add_subcommand("bench", "Time the analytic update stage");
    be->add_flag("--dense", bench.dense);
    be->add_flag("--sparse", bench.sparse);
    be->add_option("--k", bench.k);
    be->add_option("--repeat", bench.repeat);
    be->add_option("--planes", bench.planes);
    be->add_option("--height", bench.height);
    be->add_option("--width", bench.width);
    be->add_option("--sources", bench.sources);
    be->add_option("--seed", bench.seed);
    be->add_option("--out", bench.out, "CSV path (default stdout)");

    SweepArgs sweep;
    auto* sw = app.add_subcommand("sweep-k", "Color recovery ratio against k");
    sw->add_option("--scene", sweep.scene, "Scene to reconstruct densely first");
    sw->add_option("--mpi", sweep.mpi, "Existing MPI bundle instead of --scene");
    sw->add_option("--ks", sweep.ks, "Comma list, default 1..D");
    sw->add_option("--planes", sweep.planes);
    sw->add_option("--iters", sweep.iters);
    sw->add_option("--steps", sweep.steps);
    sw->add_option("--mode", sweep.mode, "contribution or alpha-zeroed");
    sw->add_option("--out", sweep.out)->required();

    std::string train_config, train_scenes;
    auto* t = app.add_subcommand("train", "Train the initializer and update networks");
    t->add_option("--config", train_config)->required();
    t->add_option("--export-scenes", train_scenes, "Also save the training scenes here");

    std::string export_mpi, export_out, export_dist;
    auto* x = app.add_subcommand("export-viewer", "Write an MPI bundle and manifest for the viewer");
    x->add_option("--mpi", export_mpi)->required();
    x->add_option("--out", export_out)->required();
    x->add_option("--viewer-dist", export_dist, "Built viewer assets to copy alongside");

    MakeSceneArgs ms;
    auto* m = app.add_subcommand("make-scene", "Write a synthetic scene bundle");
    m->add_option("--out", ms.out)->required();
    m->add_option("--seed", ms.seed);
    m->add_option("--planes", ms.planes);
    m->add_option("--height", ms.height);
    m->add_option("--width", ms.width);
    m->add_option("--sources", ms.sources);
    m->add_option("--baseline", ms.baseline);
    m->add_option("--near", ms.near);
    m->add_option("--far", ms.far);
    m->add_flag("--plain", ms.plain, "Background plane only");
    m->add_flag("--ground-truth", ms.save_gt, "Also save the ground-truth MPI");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? 0 : kExitValidation;
    }

    try {
        if (*b) return cmd_build(build);
        if (*r) return cmd_render(render_mpi, render_pose, render_out);
        if (*e) return cmd_eval(eval_scene, eval_mpi, eval_csv);
        if (*be) return cmd_bench(bench);
        if (*sw) return cmd_sweep_k(sweep);
        if (*t) return cmd_train(train_config, train_scenes);
        if (*x) return cmd_export_viewer(export_mpi, export_out, export_dist);
        if (*m) return cmd_make_scene(ms);
    } catch (const NumericError& err) {
        log_message(LogLevel::error, err.what());
        return kExitNumeric;
    } catch (const std::exception& err) {
        log_message(LogLevel::error, err.what());
        return kExitValidation;
    }
    return 0;
}
