#pragma once

#include "hsgd/convnet.hpp"
#include "hsgd/geometry.hpp"
#include "hsgd/mpi.hpp"
#include "hsgd/sparsify.hpp"

// Straightforward single-threaded versions of the parallel kernels. They are
// kept deliberately naive and serve as cross-checks and benchmark baselines.
namespace hsgd::reference {

template <class T>
Image<T> warp_image(const Image<T>& image, const Homography& h, int out_height, int out_width);

/// Transpose of warp_image by scattering every destination sample.
template <class T>
Image<T> warp_adjoint_scatter(const Image<T>& grad_out, const Homography& h, int src_height, int src_width);

template <class T>
Image<T> over_composite(const Mpi<T>& m);

/// Dense render-loss gradients: forward warp, composite, backprop per plane, scatter adjoint.
template <class T>
MpiGradients<T> render_loss_gradients(const Mpi<T>& m, const CameraModel& target, const Image<T>& gt,
                                      double weight = 1.0);

template <class T>
Volume<T> conv3d(const Volume<T>& input, const ConvLayer<T>& layer);

/// Full stable sort per pixel.
template <class T>
SparseIndices select_topk(const AlphaGradientVolume<T>& gate, int k);

}  // namespace hsgd::reference
