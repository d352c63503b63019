#include "hsgd/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "hsgd/sparsify.hpp"

namespace hsgd {

template <class T>
double psnr(const Image<T>& a, const Image<T>& b) {
    const double mse = mean_squared_error(a, b);
    if (mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

namespace {

template <class T>
std::vector<double> grayscale(const Image<T>& img) {
    std::vector<double> g(img.pixels());
    for (std::size_t p = 0; p < g.size(); ++p) {
        double s = 0.0;
        for (int c = 0; c < img.channels; ++c) s += img.data[p * img.channels + c];
        g[p] = s / img.channels;
    }
    return g;
}

}  // namespace

template <class T>
double ssim(const Image<T>& a, const Image<T>& b) {
    require(a.same_shape(b), "image shapes differ");
    require(a.height > 0 && a.width > 0 && a.channels > 0, "empty image");
    int win = std::min({11, a.height, a.width});
    if (win % 2 == 0) --win;
    const int half = win / 2;
    std::vector<double> kernel(static_cast<std::size_t>(win) * win);
    double ksum = 0.0;
    for (int i = 0; i < win; ++i) {
        for (int j = 0; j < win; ++j) {
            const double dy = i - half, dx = j - half;
            ksum += kernel[i * win + j] = std::exp(-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5));
        }
    }
    for (double& k : kernel) k /= ksum;

    const std::vector<double> ga = grayscale(a), gb = grayscale(b);
    constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
    const int oh = a.height - win + 1, ow = a.width - win + 1;
    std::vector<double> rows(static_cast<std::size_t>(oh), 0.0);
#pragma omp parallel for schedule(static)
    for (int y = 0; y < oh; ++y) {
        double row = 0.0;
        for (int x = 0; x < ow; ++x) {
            double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
            for (int i = 0; i < win; ++i) {
                for (int j = 0; j < win; ++j) {
                    const double w = kernel[i * win + j];
                    const std::size_t p = static_cast<std::size_t>(y + i) * a.width + x + j;
                    ma += w * ga[p];
                    mb += w * gb[p];
                    saa += w * ga[p] * ga[p];
                    sbb += w * gb[p] * gb[p];
                    sab += w * ga[p] * gb[p];
                }
            }
            const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
            row += ((2 * ma * mb + C1) * (2 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
        }
        rows[y] = row;
    }
    double total = 0.0;
    for (double r : rows) total += r;
    return total / (static_cast<double>(oh) * ow);
}

template <class T>
ColorRecovery color_recovery_ratio(const Mpi<T>& m, int k, RecoveryMode mode) {
    require(k >= 1 && k <= m.planes, "k must lie in [1, D]");
    const AlphaGradientVolume<T> gate = alpha_gradients(m);
    const SparseIndices s = select_topk(gate, k);
    const std::size_t n = m.plane_size();
    Image<double> full(m.height, m.width, 3), part(m.height, m.width, 3);
    std::vector<double> ratio(n);

#pragma omp parallel for schedule(static)
    for (int y = 0; y < m.height; ++y) {
        std::vector<char> keep(static_cast<std::size_t>(m.planes));
        for (int x = 0; x < m.width; ++x) {
            const std::size_t q = static_cast<std::size_t>(y) * m.width + x;
            std::fill(keep.begin(), keep.end(), 0);
            for (int j = 0; j < k; ++j) keep[s.indices[j * n + q]] = 1;
            double f[3] = {0, 0, 0}, p[3] = {0, 0, 0};
            if (mode == RecoveryMode::contribution) {
                for (int d = 0; d < m.planes; ++d) {
                    const double A = gate.values[d * n + q];
                    for (int c = 0; c < 3; ++c) {
                        const double v = m.color[(d * n + q) * 3 + c] * A;
                        f[c] += v;
                        if (keep[d]) p[c] += v;
                    }
                }
            } else {
                for (int d = 0; d < m.planes; ++d) {
                    const double a = m.alpha[d * n + q];
                    const double ak = keep[d] ? a : 0.0;
                    for (int c = 0; c < 3; ++c) {
                        const double col = m.color[(d * n + q) * 3 + c];
                        f[c] = col * a + f[c] * (1.0 - a);
                        p[c] = col * ak + p[c] * (1.0 - ak);
                    }
                }
            }
            double fs = 0.0, ps = 0.0;
            for (int c = 0; c < 3; ++c) {
                full.at(y, x, c) = f[c];
                part.at(y, x, c) = p[c];
                fs += f[c];
                ps += p[c];
            }
            ratio[q] = fs > 1e-12 ? ps / fs : 1.0;
        }
    }

    ColorRecovery r;
    double sum = 0.0;
    for (double v : ratio) sum += v;
    r.mean_ratio = sum / static_cast<double>(n);
    std::vector<double> sorted = ratio;
    std::sort(sorted.begin(), sorted.end());
    r.median_ratio = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    r.psnr = psnr(part, full);
    return r;
}

#define HSGD_INSTANTIATE_METRICS(T)                                                     \
    template double psnr(const Image<T>&, const Image<T>&);                             \
    template double ssim(const Image<T>&, const Image<T>&);                             \
    template ColorRecovery color_recovery_ratio(const Mpi<T>&, int, RecoveryMode);

HSGD_INSTANTIATE_METRICS(float)
HSGD_INSTANTIATE_METRICS(double)

}  // namespace hsgd
