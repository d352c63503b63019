#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "hsgd/convnet.hpp"
#include "hsgd/mpi.hpp"
#include "hsgd/psv.hpp"
#include "hsgd/sparsify.hpp"
#include "hsgd/update_ops.hpp"

namespace hsgd {

enum class Sparsifier { topk, mvs_window };
enum class UpdateMode { analytic, learned };

struct HsgdConfig {
    int planes = 40;
    int iterations = 3;  // pyramid levels, one refinement pass per level
    int k = 5;
    Sparsifier sparsifier = Sparsifier::topk;
    UpdateMode update = UpdateMode::analytic;
    DepthSampling sampling{2.0, 8.0, 40, DepthSpacing::inverse_depth};  // count is overridden by planes
    std::uint64_t seed = 0;

    // Analytic mode. The per-level step is step * h * w so it does not depend on resolution.
    double step = 1.0;
    int steps_per_level = 100;
    bool line_search = true;        // backtracking on render loss + prior_weight * sparsity loss
    double step_growth = 2.0;       // trial step multiplier after an accepted step (1 = off)
    AlphaRule alpha_rule = AlphaRule::linear;
    double prior_weight = 0.03;     // binary-alpha prior, same integrand as the training sparsity loss
    double init_temperature = kHeuristicTemperature;
    bool dense = false;  // bypass sparsification and update every voxel

    void validate() const;
};

/// Learned components. The update networks are indexed by pass (coarse first).
template <class T>
struct HsgdNetworks {
    std::optional<ConvNetParams<T>> initializer;
    std::vector<ConvNetParams<T>> updates;
};

struct TraceEntry {
    int iteration = 0;
    int level = 0;
    int step = 0;
    double render_loss = 0.0;  // sum over input views of the per-view mean squared error
    double step_size = 0.0;
};

template <class T>
struct HsgdResult {
    Mpi<T> mpi;
    std::vector<TraceEntry> trace;
    double update_seconds = 0.0;  // update operator + restore, summed over passes
};

/// Per-level inputs: downsampled views with halved cameras and the matching PSV.
template <class T>
struct LevelData {
    CameraModel ref;
    std::vector<PosedImage<T>> views;
    Psv<T> psv;
};

template <class T>
std::vector<LevelData<T>> build_levels(std::span<const PosedImage<T>> images, const CameraModel& ref,
                                       const std::vector<double>& depths, int levels);

template <class T>
double views_render_loss(const Mpi<T>& m, std::span<const PosedImage<T>> views);

/// Coarse-to-fine sparse refinement. `warm` replaces the initializer; it must
/// match one of the pyramid resolutions and refinement starts there.
template <class T>
HsgdResult<T> run(std::span<const PosedImage<T>> images, const CameraModel& ref, const HsgdConfig& cfg,
                  const HsgdNetworks<T>* nets = nullptr, const Mpi<T>* warm = nullptr);

/// Bilinear upsampling of every plane onto `target` (whose size is the doubled
/// or ceil-halved-inverse of m's); source coordinate (X + 0.5) / 2 - 0.5, edge clamped.
template <class T>
Mpi<T> upsample_mpi(const Mpi<T>& m, const CameraModel& target);

/// Exact x2 with the camera scaled to match.
template <class T>
Mpi<T> upsample_mpi(const Mpi<T>& m);

/// Adjoint of upsample_mpi from a (planes, out_h, out_w) gradient back to (in_h, in_w).
template <class T>
MpiGradients<T> upsample_backward(const MpiGradients<T>& grad, int planes, int in_height, int in_width,
                                  int out_height, int out_width);

/// Camera for an image twice the size (inverse of CameraModel::halved).
CameraModel doubled(const CameraModel& cam);

}  // namespace hsgd
