#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "hsgd/convnet.hpp"
#include "hsgd/pipeline.hpp"
#include "hsgd/scenegen.hpp"

namespace hsgd {

struct LossWeights {
    std::vector<double> iteration{0.2, 0.3, 0.5};  // one per pass, coarse first
    double source = 0.5;                           // mu
    double sparsity = 0.2;                         // lambda_s

    void validate() const;
};

/// renders[i][0] and gts[i][0] are the reference view of pass i, the rest are sources.
template <class T>
double render_loss(const std::vector<std::vector<Image<T>>>& renders, const std::vector<std::vector<Image<T>>>& gts,
                   const LossWeights& w);

/// mean over voxels of log(1.5 - |0.5 - alpha|).
template <class T>
double sparsity_loss(const Mpi<T>& m);

template <class T>
std::vector<T> sparsity_loss_gradient(const Mpi<T>& m);

inline double total_loss(double render, double sparsity, const LossWeights& w) {
    return render + w.sparsity * sparsity;
}

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::int64_t step = 0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    // learning-rate schedule
    double best = std::numeric_limits<double>::infinity();
    double previous = std::numeric_limits<double>::infinity();
    int streak = 0;
};

template <class T>
void adam_step(AdamState& state, std::vector<T>& params, const std::vector<T>& grads);

enum class LrSchedule {
    plateau,  // halve after `patience` epochs without a new best loss
    literal,  // halve after `patience` consecutive epochs of decreasing loss
};

/// Feeds one epoch loss to the schedule; returns true when the rate was halved.
bool schedule_step(AdamState& state, double epoch_loss, LrSchedule schedule, int patience = 10);

/// Initializer plus one update network per pass.
template <class T>
struct TrainingModel {
    ConvNetParams<T> initializer;
    std::vector<ConvNetParams<T>> updates;

    std::vector<T> flatten() const;
    void unflatten(const std::vector<T>& flat);
    std::size_t parameter_count() const;

    /// Without the initializer the pipeline falls back to the heuristic init.
    HsgdNetworks<T> networks(bool with_initializer = true) const {
        HsgdNetworks<T> n{initializer, updates};
        if (!with_initializer) n.initializer.reset();
        return n;
    }

    template <class U>
    TrainingModel<U> cast() const {
        TrainingModel<U> out;
        out.initializer = initializer.template cast<U>();
        for (const auto& u : updates) out.updates.push_back(u.template cast<U>());
        return out;
    }
};

struct PipelineShape {
    int planes = 8;
    int iterations = 2;
    int k = 3;
    Sparsifier sparsifier = Sparsifier::topk;
    DepthSampling sampling{2.0, 8.0, 8, DepthSpacing::inverse_depth};
    bool learned_initializer = true;  // false: heuristic init, only the update networks train
};

template <class T>
TrainingModel<T> make_training_model(int views, const PipelineShape& shape, int hidden, int blocks,
                                     std::uint64_t seed);

/// One scene prepared for the learned pipeline: per-level inputs (reference first).
template <class T>
struct TrainingSample {
    std::vector<LevelData<T>> levels;
    int reference = 0;  // index of the reference view inside each level's views
};

template <class T>
TrainingSample<T> prepare_sample(std::span<const PosedImage<T>> inputs, int reference, const PipelineShape& shape);

template <class T>
struct PipelineLoss {
    double render = 0.0;
    double sparsity = 0.0;
    double total = 0.0;
    Mpi<T> final_mpi;
    std::vector<SparseIndices> indices;  // one per pass
    std::vector<T> gradient;             // flattened like TrainingModel::flatten, empty unless requested
};

/// Learned pipeline forward (and optionally its exact reverse mode for the
/// given selections). With `frozen` the selections are taken from it instead of
/// the top-k of the current gate.
template <class T>
PipelineLoss<T> pipeline_loss(const TrainingModel<T>& model, const TrainingSample<T>& sample,
                              const PipelineShape& shape, const LossWeights& weights, bool with_gradient,
                              const std::vector<SparseIndices>* frozen = nullptr);

struct TrainConfig {
    int epochs = 200;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    LossWeights weights{{0.4, 0.6}, 0.5, 0.2};
    PipelineShape shape;
    int hidden = 16;
    int blocks = 5;
    LrSchedule schedule = LrSchedule::plateau;
    int patience = 10;
    std::vector<SceneSpec> scenes;
    std::string checkpoint;      // written at the end and every checkpoint_every epochs
    int checkpoint_every = 0;
    std::string trace;           // loss CSV

    void validate() const;
};

/// Flat key = value text, '#' comments. Keys: epochs, lr, seed, weights (comma list),
/// mu, lambda_s, D, k, L, near, far, hidden, blocks, initializer (learned or heuristic),
/// sparsifier, schedule, patience,
/// checkpoint, checkpoint_every, trace, and repeated `scene` entries of the form
/// seed:1,height:24,width:32,sources:2,baseline:0.3.
TrainConfig parse_train_config(const std::string& text);

struct EpochRecord {
    int epoch = 0;
    double render_loss = 0.0;
    double sparsity_loss = 0.0;
    double total = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    TrainingModel<float> model;
    std::vector<EpochRecord> trace;
};

/// Desk-scale training. Every epoch takes one Adam step per scene.
TrainResult train(const std::vector<SyntheticScene>& scenes, const TrainConfig& cfg);
TrainResult train(const std::vector<SyntheticScene>& scenes, const TrainConfig& cfg, TrainingModel<float> start);

void write_loss_trace(const std::string& path, const std::vector<EpochRecord>& trace);

std::vector<ConvNetParams<float>> model_networks(const TrainingModel<float>& model);
TrainingModel<float> model_from_networks(const std::vector<ConvNetParams<float>>& nets);

/// Run configuration matching a training shape (learned updates).
HsgdConfig learned_config(const PipelineShape& shape);

}  // namespace hsgd
