#pragma once

#include <span>
#include <vector>

#include "hsgd/convnet.hpp"
#include "hsgd/mpi.hpp"
#include "hsgd/psv.hpp"
#include "hsgd/sparsify.hpp"

namespace hsgd {

/// Dense half of the analytic step: per-view target-space gradient fields of
/// sum_i weight * mean((render_i - gt_i)^2). Independent of k.
template <class T>
struct AnalyticContext {
    std::vector<ViewGradientField<T>> fields;
    double loss = 0.0;
};

template <class T>
AnalyticContext<T> prepare_analytic(const Mpi<T>& m, std::span<const PosedImage<T>> views);

struct AnalyticStep {
    double lambda = 1.0;
    AlphaRule rule = AlphaRule::logit;
    /// Weight of the binary-alpha prior, mean log(1.5 - |0.5 - a|) over voxels.
    double prior_weight = 0.0;
};

/// -lambda * dL/dm at the voxels in `s`, 4 x k x H x W; alpha is in the space of `step.rule`.
template <class T>
Volume<T> analytic_residual(const AnalyticContext<T>& ctx, const Mpi<T>& m, const SparseIndices& s,
                            const AnalyticStep& step);

/// Same per-voxel computation over all D planes, 4 x D x H x W.
template <class T>
Volume<T> analytic_residual_dense(const AnalyticContext<T>& ctx, const Mpi<T>& m, const AnalyticStep& step);

/// Convenience wrapper: prepare + residual. The slab itself is not read.
template <class T>
Volume<T> analytic_update(const Mpi<T>& m, const SparseIndices& s, std::span<const PosedImage<T>> views,
                          double lambda, AlphaRule rule = AlphaRule::logit);

/// d/dalpha of log(1.5 - |0.5 - alpha|); zero at the kink.
double sparsity_integrand_derivative(double alpha);

inline constexpr double kHeuristicTemperature = 2e-4;
inline constexpr double kHeuristicCoverage = 0.9;

/// Mean color over views; alpha from a softmax of negative photometric variance.
template <class T>
Mpi<T> init_mpi_heuristic(const Psv<T>& p, double temperature = kHeuristicTemperature);

/// PSV as a 3N x D x H x W network input (channel 3i + c).
template <class T>
Volume<T> psv_volume(const Psv<T>& p);

template <class T>
Mpi<T> mpi_from_volume(const Volume<T>& v, const std::vector<double>& depths, const CameraModel& ref);

template <class T>
Volume<T> mpi_gradients_to_volume(const MpiGradients<T>& g, int planes, int height, int width);

template <class T>
Mpi<T> init_mpi_network(const ConvNetParams<T>& params, const Psv<T>& p);

}  // namespace hsgd
