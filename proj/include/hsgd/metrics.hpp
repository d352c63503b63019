#pragma once

#include "hsgd/common.hpp"
#include "hsgd/mpi.hpp"

namespace hsgd {

inline constexpr double kPsnrCap = 99.0;

/// 10 log10(1 / MSE); identical images give kPsnrCap.
template <class T>
double psnr(const Image<T>& a, const Image<T>& b);

/// Single-scale SSIM on the channel-mean grayscale, 11x11 Gaussian (sigma 1.5),
/// averaged over valid window positions. Images smaller than the window use
/// the largest odd window that fits.
template <class T>
double ssim(const Image<T>& a, const Image<T>& b);

enum class RecoveryMode {
    contribution,  // sum over kept planes of c * A / sum over all planes
    alpha_zeroed,  // re-composite with the other planes' alpha set to zero
};

struct ColorRecovery {
    double mean_ratio = 1.0;
    double median_ratio = 1.0;
    double psnr = kPsnrCap;  // partial render vs full render
};

/// Keeps the k planes with the largest reference-view alpha gradients per pixel.
template <class T>
ColorRecovery color_recovery_ratio(const Mpi<T>& m, int k, RecoveryMode mode = RecoveryMode::contribution);

}  // namespace hsgd
