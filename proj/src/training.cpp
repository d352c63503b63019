#include "hsgd/training.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "hsgd/checkpoint.hpp"
#include "hsgd/io.hpp"
#include "hsgd/update_ops.hpp"

namespace hsgd {

void LossWeights::validate() const {
    require(!iteration.empty(), "at least one iteration weight is required");
    for (double w : iteration) require(w >= 0.0, "loss weights must be non-negative");
    require(source >= 0.0 && sparsity >= 0.0, "loss weights must be non-negative");
}

template <class T>
double render_loss(const std::vector<std::vector<Image<T>>>& renders, const std::vector<std::vector<Image<T>>>& gts,
                   const LossWeights& w) {
    w.validate();
    require(renders.size() == gts.size() && renders.size() == w.iteration.size(),
            "one render set and one weight per iteration are required");
    double total = 0.0;
    for (std::size_t i = 0; i < renders.size(); ++i) {
        require(renders[i].size() == gts[i].size() && !renders[i].empty(), "render and ground-truth counts differ");
        double it = mean_squared_error(renders[i][0], gts[i][0]);
        double src = 0.0;
        for (std::size_t j = 1; j < renders[i].size(); ++j) src += mean_squared_error(renders[i][j], gts[i][j]);
        total += w.iteration[i] * (it + w.source * src);
    }
    return total;
}

template <class T>
double sparsity_loss(const Mpi<T>& m) {
    require(!m.alpha.empty(), "empty mpi");
    double s = 0.0;
    for (T a : m.alpha) s += std::log(1.5 - std::abs(0.5 - static_cast<double>(a)));
    return s / static_cast<double>(m.alpha.size());
}

template <class T>
std::vector<T> sparsity_loss_gradient(const Mpi<T>& m) {
    std::vector<T> g(m.alpha.size());
    const double inv = 1.0 / static_cast<double>(m.alpha.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] = static_cast<T>(inv * sparsity_integrand_derivative(static_cast<double>(m.alpha[i])));
    }
    return g;
}

template <class T>
void adam_step(AdamState& s, std::vector<T>& params, const std::vector<T>& grads) {
    require(params.size() == grads.size(), "parameter and gradient sizes differ");
    if (s.m.empty()) {
        s.m.assign(params.size(), 0.0);
        s.v.assign(params.size(), 0.0);
    }
    require(s.m.size() == params.size(), "optimizer state does not match the parameters");
    ++s.step;
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * g;
        s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * g * g;
        const double mh = s.m[i] / c1, vh = s.v[i] / c2;
        params[i] = static_cast<T>(params[i] - s.lr * mh / (std::sqrt(vh) + s.eps));
    }
}

bool schedule_step(AdamState& s, double loss, LrSchedule schedule, int patience) {
    bool halved = false;
    if (schedule == LrSchedule::plateau) {
        if (loss < s.best) {
            s.best = loss;
            s.streak = 0;
        } else if (++s.streak >= patience) {
            s.lr *= 0.5;
            s.streak = 0;
            halved = true;
        }
    } else {
        s.streak = loss < s.previous ? s.streak + 1 : 0;
        if (s.streak >= patience) {
            s.lr *= 0.5;
            s.streak = 0;
            halved = true;
        }
        s.best = std::min(s.best, loss);
    }
    s.previous = loss;
    return halved;
}

template <class T>
std::vector<T> TrainingModel<T>::flatten() const {
    std::vector<T> flat = initializer.flatten();
    for (const auto& u : updates) {
        const std::vector<T> f = u.flatten();
        flat.insert(flat.end(), f.begin(), f.end());
    }
    return flat;
}

template <class T>
void TrainingModel<T>::unflatten(const std::vector<T>& flat) {
    require(flat.size() == parameter_count(), "flat parameter vector has the wrong size");
    auto take = [&, pos = std::size_t{0}](ConvNetParams<T>& net) mutable {
        const std::size_t n = net.parameter_count();
        net.unflatten(std::vector<T>(flat.begin() + pos, flat.begin() + pos + n));
        pos += n;
    };
    take(initializer);
    for (auto& u : updates) take(u);
}

template <class T>
std::size_t TrainingModel<T>::parameter_count() const {
    std::size_t n = initializer.parameter_count();
    for (const auto& u : updates) n += u.parameter_count();
    return n;
}

template <class T>
TrainingModel<T> make_training_model(int views, const PipelineShape& shape, int hidden, int blocks,
                                     std::uint64_t seed) {
    require(views >= 1, "at least one view is required");
    TrainingModel<T> model;
    model.initializer = make_convnet<T>(3 * views, hidden, blocks, OutputActivation::initializer, seed);
    for (int p = 0; p < shape.iterations; ++p) {
        model.updates.push_back(make_convnet<T>(ChannelLayout{views}.total(), hidden, blocks,
                                                OutputActivation::residual, seed + 1 + static_cast<std::uint64_t>(p)));
    }
    return model;
}

namespace {

std::vector<double> shape_depths(const PipelineShape& shape) {
    DepthSampling s = shape.sampling;
    s.count = shape.planes;
    return depth_planes(s);
}

template <class T>
void add_into(MpiGradients<T>& acc, const MpiGradients<T>& g) {
    for (std::size_t i = 0; i < acc.color.size(); ++i) acc.color[i] += g.color[i];
    for (std::size_t i = 0; i < acc.alpha.size(); ++i) acc.alpha[i] += g.alpha[i];
}

template <class T>
MpiGradients<T> zero_gradients(const Mpi<T>& m) {
    MpiGradients<T> g;
    g.color.assign(m.color.size(), T(0));
    g.alpha.assign(m.alpha.size(), T(0));
    return g;
}

}  // namespace

template <class T>
TrainingSample<T> prepare_sample(std::span<const PosedImage<T>> inputs, int reference, const PipelineShape& shape) {
    require(reference >= 0 && reference < static_cast<int>(inputs.size()), "reference index out of range");
    TrainingSample<T> s;
    s.reference = reference;
    s.levels = build_levels(inputs, inputs[reference].camera, shape_depths(shape), shape.iterations);
    return s;
}

template <class T>
PipelineLoss<T> pipeline_loss(const TrainingModel<T>& model, const TrainingSample<T>& sample,
                              const PipelineShape& shape, const LossWeights& weights, bool with_gradient,
                              const std::vector<SparseIndices>* frozen) {
    weights.validate();
    const int L = shape.iterations;
    require(static_cast<int>(sample.levels.size()) == L, "sample levels do not match the pipeline shape");
    require(static_cast<int>(weights.iteration.size()) == L, "one loss weight per pass is required");
    require(static_cast<int>(model.updates.size()) == L, "one update network per pass is required");
    require(frozen == nullptr || static_cast<int>(frozen->size()) == L, "one frozen selection per pass is required");

    struct Pass {
        Mpi<T> in;
        Volume<T> slab;
        SparseIndices s;
        Volume<T> residual;
        Mpi<T> out;
    };
    std::vector<Pass> passes(static_cast<std::size_t>(L));
    PipelineLoss<T> result;

    const Psv<T>& coarse = sample.levels[L - 1].psv;
    const Volume<T> init_input = psv_volume(coarse);
    Mpi<T> m = shape.learned_initializer
                   ? mpi_from_volume(conv_forward(model.initializer, init_input), coarse.depths, coarse.ref_camera)
                   : init_mpi_heuristic(coarse);

    for (int p = 0; p < L; ++p) {
        const LevelData<T>& lv = sample.levels[L - 1 - p];
        Pass& ps = passes[p];
        ps.in = p == 0 ? m : upsample_mpi(passes[p - 1].out, lv.ref);
        const GradientVolume<T> v = formulate_gradients(ps.in, lv.psv);
        ps.s = frozen ? (*frozen)[p]
                      : (shape.sparsifier == Sparsifier::topk ? select_topk(alpha_gradients(ps.in), shape.k)
                                                              : select_mvs_window(alpha_gradients(ps.in), shape.k));
        ps.slab = gather(v.data, ps.s);
        ps.residual = conv_forward(model.updates[p], ps.slab);
        ps.out = restore_and_update(ps.in, ps.residual, ps.s, AlphaRule::logit);
        for (std::size_t j = 0; j < lv.views.size(); ++j) {
            const double w = weights.iteration[p] * (static_cast<int>(j) == sample.reference ? 1.0 : weights.source);
            result.render += w * mean_squared_error(render_novel_view(ps.out, lv.views[j].camera), lv.views[j].image);
        }
        result.indices.push_back(ps.s);
    }
    result.sparsity = sparsity_loss(passes.back().out);
    result.total = total_loss(result.render, result.sparsity, weights);
    result.final_mpi = passes.back().out;
    if (!std::isfinite(result.total)) throw NumericError("non-finite training loss");
    if (!with_gradient) return result;

    // Reverse sweep, coarse pass last.
    std::vector<std::vector<T>> update_grads(static_cast<std::size_t>(L));
    MpiGradients<T> g_out = zero_gradients(passes.back().out);
    {
        const std::vector<T> gs = sparsity_loss_gradient(passes.back().out);
        for (std::size_t i = 0; i < gs.size(); ++i) g_out.alpha[i] += static_cast<T>(weights.sparsity * gs[i]);
    }
    MpiGradients<T> g_init;
    for (int p = L - 1; p >= 0; --p) {
        const LevelData<T>& lv = sample.levels[L - 1 - p];
        Pass& ps = passes[p];
        for (std::size_t j = 0; j < lv.views.size(); ++j) {
            const double w = weights.iteration[p] * (static_cast<int>(j) == sample.reference ? 1.0 : weights.source);
            add_into(g_out, render_loss_gradients(ps.out, lv.views[j].camera, lv.views[j].image, w));
        }
        const RestoreGradients<T> rb = restore_backward(ps.in, ps.residual, ps.s, AlphaRule::logit, g_out);
        const ConvGradients<T> cg = conv_backward(model.updates[p], ps.slab, rb.residual);
        update_grads[p] = cg.params.flatten();
        const Volume<T> g_v = gather_backward(cg.input, ps.s, ps.in.planes);
        MpiGradients<T> g_in = formulate_backward(ps.in, lv.psv, g_v);
        add_into(g_in, rb.input);
        if (p > 0) {
            const Mpi<T>& prev = passes[p - 1].out;
            g_out = upsample_backward(g_in, prev.planes, prev.height, prev.width, ps.in.height, ps.in.width);
        } else {
            g_init = std::move(g_in);
        }
    }
    if (shape.learned_initializer) {
        const Volume<T> upstream = mpi_gradients_to_volume(g_init, coarse.planes, coarse.height, coarse.width);
        result.gradient = conv_backward(model.initializer, init_input, upstream).params.flatten();
    } else {
        result.gradient.assign(model.initializer.parameter_count(), T(0));
    }
    for (const auto& g : update_grads) result.gradient.insert(result.gradient.end(), g.begin(), g.end());
    return result;
}

void TrainConfig::validate() const {
    require(epochs >= 0, "epochs must be non-negative");
    require(lr > 0.0, "learning rate must be positive");
    weights.validate();
    require(static_cast<int>(weights.iteration.size()) == shape.iterations, "one loss weight per pass is required");
    require(shape.planes >= 1 && shape.k >= 1 && shape.k <= shape.planes, "k must lie in [1, D]");
    require(shape.iterations >= 1, "at least one pass is required");
    require(hidden >= 1 && blocks >= 0, "invalid network shape");
    require(patience >= 1, "patience must be positive");
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) out.push_back(trim(item));
    return out;
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ValidationError("config key '" + key + "': '" + v + "' is not a number");
    }
}

int to_int(const std::string& key, const std::string& v) {
    const double d = to_double(key, v);
    if (d != std::floor(d)) throw ValidationError("config key '" + key + "': '" + v + "' is not an integer");
    return static_cast<int>(d);
}

SceneSpec parse_scene(const std::string& v) {
    SceneSpec s;
    for (const std::string& kv : split(v, ',')) {
        const auto colon = kv.find(':');
        if (colon == std::string::npos) throw ValidationError("scene entry '" + kv + "' is not key:value");
        const std::string k = trim(kv.substr(0, colon)), val = trim(kv.substr(colon + 1));
        if (k == "seed") s.seed = static_cast<std::uint64_t>(to_int(k, val));
        else if (k == "height") s.rig.height = to_int(k, val);
        else if (k == "width") s.rig.width = to_int(k, val);
        else if (k == "sources") s.rig.sources = to_int(k, val);
        else if (k == "baseline") s.rig.baseline = to_double(k, val);
        else if (k == "focal") s.rig.focal = to_double(k, val);
        else if (k == "occluder") s.occluder = to_int(k, val) != 0;
        else if (k == "semi_transparent") s.semi_transparent = to_int(k, val) != 0;
        else if (k == "thin_structure") s.thin_structure = to_int(k, val) != 0;
        else throw ValidationError("unknown scene key '" + k + "'");
    }
    return s;
}

}  // namespace

TrainConfig parse_train_config(const std::string& text) {
    TrainConfig cfg;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ValidationError("config line " + std::to_string(lineno) + ": expected key = value");
        }
        const std::string k = trim(line.substr(0, eq)), v = trim(line.substr(eq + 1));
        if (k == "epochs") cfg.epochs = to_int(k, v);
        else if (k == "lr") cfg.lr = to_double(k, v);
        else if (k == "seed") cfg.seed = static_cast<std::uint64_t>(to_int(k, v));
        else if (k == "weights") {
            cfg.weights.iteration.clear();
            for (const auto& w : split(v, ',')) cfg.weights.iteration.push_back(to_double(k, w));
        } else if (k == "mu") cfg.weights.source = to_double(k, v);
        else if (k == "lambda_s") cfg.weights.sparsity = to_double(k, v);
        else if (k == "D") cfg.shape.planes = to_int(k, v);
        else if (k == "k") cfg.shape.k = to_int(k, v);
        else if (k == "L") cfg.shape.iterations = to_int(k, v);
        else if (k == "near") cfg.shape.sampling.near = to_double(k, v);
        else if (k == "far") cfg.shape.sampling.far = to_double(k, v);
        else if (k == "hidden") cfg.hidden = to_int(k, v);
        else if (k == "blocks") cfg.blocks = to_int(k, v);
        else if (k == "patience") cfg.patience = to_int(k, v);
        else if (k == "initializer") {
            if (v == "learned") cfg.shape.learned_initializer = true;
            else if (v == "heuristic") cfg.shape.learned_initializer = false;
            else throw ValidationError("unknown initializer '" + v + "'");
        }
        else if (k == "sparsifier") {
            if (v == "topk") cfg.shape.sparsifier = Sparsifier::topk;
            else if (v == "mvs-window") cfg.shape.sparsifier = Sparsifier::mvs_window;
            else throw ValidationError("unknown sparsifier '" + v + "'");
        } else if (k == "schedule") {
            if (v == "plateau") cfg.schedule = LrSchedule::plateau;
            else if (v == "literal") cfg.schedule = LrSchedule::literal;
            else throw ValidationError("unknown schedule '" + v + "'");
        } else if (k == "checkpoint") cfg.checkpoint = v;
        else if (k == "checkpoint_every") cfg.checkpoint_every = to_int(k, v);
        else if (k == "trace") cfg.trace = v;
        else if (k == "scene") cfg.scenes.push_back(parse_scene(v));
        else throw ValidationError("config line " + std::to_string(lineno) + ": unknown key '" + k + "'");
    }
    cfg.shape.sampling.count = cfg.shape.planes;
    for (auto& s : cfg.scenes) {
        s.planes = cfg.shape.planes;
        s.depth = cfg.shape.sampling;
    }
    try {
        cfg.validate();
    } catch (const ParameterError& e) {
        throw ValidationError(std::string("config: ") + e.what());
    }
    return cfg;
}

std::vector<ConvNetParams<float>> model_networks(const TrainingModel<float>& model) {
    std::vector<ConvNetParams<float>> nets{model.initializer};
    nets.insert(nets.end(), model.updates.begin(), model.updates.end());
    return nets;
}

TrainingModel<float> model_from_networks(const std::vector<ConvNetParams<float>>& nets) {
    if (nets.empty() || nets.front().activation != OutputActivation::initializer) {
        throw ValidationError("checkpoint must start with an initializer network");
    }
    TrainingModel<float> model;
    model.initializer = nets.front();
    for (std::size_t i = 1; i < nets.size(); ++i) {
        if (nets[i].activation != OutputActivation::residual) {
            throw ValidationError("checkpoint update networks need the residual head");
        }
        model.updates.push_back(nets[i]);
    }
    return model;
}

HsgdConfig learned_config(const PipelineShape& shape) {
    HsgdConfig cfg;
    cfg.planes = shape.planes;
    cfg.iterations = shape.iterations;
    cfg.k = shape.k;
    cfg.sparsifier = shape.sparsifier;
    cfg.update = UpdateMode::learned;
    cfg.sampling = shape.sampling;
    cfg.steps_per_level = 1;
    return cfg;
}

void write_loss_trace(const std::string& path, const std::vector<EpochRecord>& trace) {
    std::vector<std::vector<double>> rows;
    for (const auto& r : trace) rows.push_back({static_cast<double>(r.epoch), r.render_loss, r.sparsity_loss, r.total});
    write_csv(path, {"epoch", "render_loss", "sparsity_loss", "total"}, rows);
}

namespace {

int reference_index(const SyntheticScene& s) {
    int i = 0;
    for (const auto& v : s.views) {
        if (v.role == ViewRole::reference) return i;
        if (v.role != ViewRole::target) ++i;
    }
    throw ParameterError("scene has no reference view");
}

}  // namespace

TrainResult train(const std::vector<SyntheticScene>& scenes, const TrainConfig& cfg) {
    require(!scenes.empty(), "training needs at least one scene");
    const int views = static_cast<int>(scenes.front().inputs().size());
    return train(scenes, cfg, make_training_model<float>(views, cfg.shape, cfg.hidden, cfg.blocks, cfg.seed));
}

TrainResult train(const std::vector<SyntheticScene>& scenes, const TrainConfig& cfg, TrainingModel<float> start) {
    cfg.validate();
    require(!scenes.empty(), "training needs at least one scene");
    std::vector<TrainingSample<float>> samples;
    for (const auto& s : scenes) {
        const auto inputs = s.inputs();
        require(static_cast<int>(inputs.size()) * 3 == start.initializer.input_channels(),
                "every scene needs the view count the model was built for");
        samples.push_back(prepare_sample<float>(inputs, reference_index(s), cfg.shape));
    }

    TrainResult result;
    result.model = std::move(start);
    AdamState opt;
    opt.lr = cfg.lr;
    std::vector<float> params = result.model.flatten();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = opt.lr;
        for (const auto& sample : samples) {
            const PipelineLoss<float> l = pipeline_loss(result.model, sample, cfg.shape, cfg.weights, true);
            for (float g : l.gradient) {
                if (!std::isfinite(g)) {
                    throw NumericError("non-finite gradient at epoch " + std::to_string(epoch));
                }
            }
            rec.render_loss += l.render / samples.size();
            rec.sparsity_loss += l.sparsity / samples.size();
            rec.total += l.total / samples.size();
            adam_step(opt, params, l.gradient);
            result.model.unflatten(params);
        }
        result.trace.push_back(rec);
        log_message(LogLevel::info, "epoch " + std::to_string(epoch) + " total " + format_number(rec.total));
        if (schedule_step(opt, rec.total, cfg.schedule, cfg.patience)) {
            log_message(LogLevel::info, "learning rate halved to " + format_number(opt.lr));
        }
        if (!cfg.checkpoint.empty() && cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
            save_checkpoint(cfg.checkpoint, model_networks(result.model));
        }
    }
    if (!cfg.checkpoint.empty()) save_checkpoint(cfg.checkpoint, model_networks(result.model));
    if (!cfg.trace.empty()) write_loss_trace(cfg.trace, result.trace);
    return result;
}

#define HSGD_INSTANTIATE_TRAINING(T)                                                                             \
    template double render_loss(const std::vector<std::vector<Image<T>>>&, const std::vector<std::vector<Image<T>>>&, \
                                const LossWeights&);                                                             \
    template double sparsity_loss(const Mpi<T>&);                                                                \
    template std::vector<T> sparsity_loss_gradient(const Mpi<T>&);                                               \
    template void adam_step(AdamState&, std::vector<T>&, const std::vector<T>&);                                 \
    template struct TrainingModel<T>;                                                                            \
    template TrainingModel<T> make_training_model(int, const PipelineShape&, int, int, std::uint64_t);           \
    template TrainingSample<T> prepare_sample(std::span<const PosedImage<T>>, int, const PipelineShape&);       \
    template PipelineLoss<T> pipeline_loss(const TrainingModel<T>&, const TrainingSample<T>&,                   \
                                           const PipelineShape&, const LossWeights&, bool,                       \
                                           const std::vector<SparseIndices>*);

HSGD_INSTANTIATE_TRAINING(float)
HSGD_INSTANTIATE_TRAINING(double)

}  // namespace hsgd
