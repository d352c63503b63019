#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "hsgd/common.hpp"
#include "hsgd/mpi.hpp"
#include "hsgd/psv.hpp"

namespace hsgd {

/// Channel layout of the gradient volume:
///   [PSV RGB, view-major (3N) | warped-back alpha gradients, view-major (N) | MPI RGB (3) | MPI alpha (1)]
struct ChannelLayout {
    int views = 0;

    int psv(int view, int c) const { return view * 3 + c; }
    int alpha_gradient(int view) const { return 3 * views + view; }
    int mpi_color(int c) const { return 4 * views + c; }
    int mpi_alpha() const { return 4 * views + 3; }
    int total() const { return 4 * views + 4; }
};

/// C x D x H x W volume V = [P, A_1..A_N, M].
template <class T>
struct GradientVolume {
    ChannelLayout layout;
    Volume<T> data;
};

/// Per-pixel depth indices (0-based) of the k voxels kept, strictly increasing.
struct SparseIndices {
    int k = 0;
    int height = 0;
    int width = 0;
    std::vector<std::int32_t> indices;  // k x H x W

    std::size_t index(int j, int y, int x) const {
        return (static_cast<std::size_t>(j) * height + y) * width + x;
    }
    std::int32_t at(int j, int y, int x) const { return indices[index(j, y, x)]; }
};

/// Identity selection 0..D-1 at every pixel.
SparseIndices full_indices(int planes, int height, int width);

enum class AlphaRule { logit, linear };

inline constexpr double kLogitClamp = 1e-4;

template <class T>
GradientVolume<T> formulate_gradients(const Mpi<T>& m, const Psv<T>& p);

/// k largest gate values per pixel; ties go to the smaller (farther) index.
template <class T>
SparseIndices select_topk(const AlphaGradientVolume<T>& gate, int k);

/// Contiguous window of k planes centred on the gate argmax, shifted inward at the borders.
/// For even k the extra plane sits on the near side.
template <class T>
SparseIndices select_mvs_window(const AlphaGradientVolume<T>& gate, int k);

/// C x k x H x W slab gathered at `s`.
template <class T>
Volume<T> gather(const Volume<T>& v, const SparseIndices& s);

/// Scatter of a slab gradient back into a C x D x H x W volume (zeros elsewhere).
template <class T>
Volume<T> gather_backward(const Volume<T>& grad_slab, const SparseIndices& s, int planes);

template <class T>
std::pair<Volume<T>, SparseIndices> sparsify_topk(const GradientVolume<T>& v, const AlphaGradientVolume<T>& gate,
                                                  int k);

template <class T>
std::pair<Volume<T>, SparseIndices> sparsify_mvs_window(const GradientVolume<T>& v,
                                                        const AlphaGradientVolume<T>& gate, int k);

/// Adds a 4 x k x H x W residual (RGB, alpha) at the positions in `s`.
/// Colors are clamped to [0, 1]; alpha follows `rule`.
template <class T>
Mpi<T> restore_and_update(const Mpi<T>& m, const Volume<T>& residual, const SparseIndices& s, AlphaRule rule);

/// Dense counterpart: residual is 4 x D x H x W and touches every voxel.
template <class T>
Mpi<T> apply_dense_update(const Mpi<T>& m, const Volume<T>& residual, AlphaRule rule);

/// Reverse mode of restore_and_update for a fixed selection.
template <class T>
struct RestoreGradients {
    MpiGradients<T> input;  // dL/dm
    Volume<T> residual;     // dL/dresidual, 4 x k x H x W
};

template <class T>
RestoreGradients<T> restore_backward(const Mpi<T>& m, const Volume<T>& residual, const SparseIndices& s,
                                     AlphaRule rule, const MpiGradients<T>& grad_out);

/// Backward of formulate_gradients with respect to the MPI (PSV channels are data).
template <class T>
MpiGradients<T> formulate_backward(const Mpi<T>& m, const Psv<T>& p, const Volume<T>& grad_v);

}  // namespace hsgd
