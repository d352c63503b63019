#include "hsgd/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace hsgd {

const char* role_name(ViewRole role) {
    switch (role) {
        case ViewRole::reference: return "reference";
        case ViewRole::source: return "source";
        case ViewRole::target: return "target";
    }
    return "source";
}

ViewRole parse_role(const std::string& name) {
    if (name == "reference") return ViewRole::reference;
    if (name == "source") return ViewRole::source;
    if (name == "target") return ViewRole::target;
    throw ValidationError("unknown view role '" + name + "'");
}

namespace {

CameraModel camera_at(const RigSpec& spec, double cx, double cy) {
    const double f = spec.focal > 0.0 ? spec.focal : static_cast<double>(spec.width);
    return make_camera(f, spec.height, spec.width, Eigen::Matrix3d::Identity(), Eigen::Vector3d(-cx, -cy, 0.0));
}

}  // namespace

Rig make_rig(const RigSpec& spec) {
    require(spec.sources >= 1, "rig needs at least one source");
    require(spec.baseline >= 0.0, "baseline must be non-negative");
    require(spec.height >= 1 && spec.width >= 1, "rig image size must be positive");
    static const double grid[][2] = {{-1, 0}, {1, 0}, {0, 1}, {0, -1}, {-1, 1}, {1, 1}, {-1, -1}, {1, -1}};
    Rig rig;
    rig.reference = camera_at(spec, 0.0, 0.0);
    const double b = spec.baseline;
    for (int i = 0; i < spec.sources; ++i) {
        const int ring = i / 8 + 1;
        rig.sources.push_back(camera_at(spec, grid[i % 8][0] * b * ring, grid[i % 8][1] * b * ring));
    }
    rig.interpolation = camera_at(spec, 0.5 * b, 0.25 * b);
    rig.extrapolation = camera_at(spec, 1.5 * b, 0.2 * b);
    return rig;
}

Image<float> smooth_texture(int height, int width, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> freq(0.5, 3.0), phase(0.0, 2.0 * std::numbers::pi), unit(0.0, 1.0);
    Image<float> img(height, width, 3);
    constexpr int kWaves = 4;
    for (int c = 0; c < 3; ++c) {
        double fx[kWaves], fy[kWaves], ph[kWaves], amp[kWaves];
        double total = 0.0;
        for (int j = 0; j < kWaves; ++j) {
            fx[j] = freq(rng) * (unit(rng) < 0.5 ? -1.0 : 1.0);
            fy[j] = freq(rng) * (unit(rng) < 0.5 ? -1.0 : 1.0);
            ph[j] = phase(rng);
            amp[j] = 0.5 + unit(rng);
            total += amp[j];
        }
        const double base = 0.3 + 0.4 * unit(rng);
        const double room = std::min(base - 0.1, 0.9 - base);
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                double v = 0.0;
                for (int j = 0; j < kWaves; ++j) {
                    v += amp[j] * std::sin(2.0 * std::numbers::pi * (fx[j] * x / width + fy[j] * y / height) + ph[j]);
                }
                img.at(y, x, c) = static_cast<float>(base + room * v / total);
            }
        }
    }
    return img;
}

std::vector<PosedImage<float>> SyntheticScene::inputs() const {
    std::vector<PosedImage<float>> out;
    for (const auto& v : views) {
        if (v.role != ViewRole::target) out.push_back({v.image, v.camera});
    }
    return out;
}

std::vector<PosedImage<float>> SyntheticScene::targets() const {
    std::vector<PosedImage<float>> out;
    for (const auto& v : views) {
        if (v.role == ViewRole::target) out.push_back({v.image, v.camera});
    }
    return out;
}

const SceneView& SyntheticScene::reference() const {
    for (const auto& v : views) {
        if (v.role == ViewRole::reference) return v;
    }
    throw ParameterError("scene has no reference view");
}

SyntheticScene make_scene(const SceneSpec& spec) {
    require(spec.planes >= 1, "scene needs at least one plane");
    const int H = spec.rig.height, W = spec.rig.width;
    const int D = spec.planes;
    DepthSampling ds = spec.depth;
    ds.count = D;
    const Rig rig = make_rig(spec.rig);

    SyntheticScene scene;
    scene.spec = spec;
    scene.spec.depth.count = D;
    Mpi<float> m(D, H, W, depth_planes(ds), rig.reference);
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const auto tex_seed = [&] { return rng(); };

    const auto paint = [&](int d, const Image<float>& tex, float alpha, auto inside) {
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                if (!inside(y, x)) continue;
                for (int c = 0; c < 3; ++c) m.c(d, y, x, c) = tex.at(y, x, c);
                m.a(d, y, x) = alpha;
            }
        }
    };

    paint(0, smooth_texture(H, W, tex_seed()), 1.0f, [](int, int) { return true; });

    if (spec.occluder && D >= 2) {
        // About a quarter of the image, centred with some jitter.
        const int d = std::max(1, D / 2);
        const int bh = std::max(1, H / 2), bw = std::max(1, W / 2);
        const int y0 = std::clamp(static_cast<int>(H / 4 + (unit(rng) - 0.5) * H / 8), 0, H - bh);
        const int x0 = std::clamp(static_cast<int>(W / 4 + (unit(rng) - 0.5) * W / 8), 0, W - bw);
        paint(d, smooth_texture(H, W, tex_seed()), 1.0f,
              [&](int y, int x) { return y >= y0 && y < y0 + bh && x >= x0 && x < x0 + bw; });
    }
    if (spec.semi_transparent && D >= 3) {
        // About 15%: a disc on a near plane.
        const int d = std::max(2, (3 * D) / 4 - 1);
        const double r = std::sqrt(0.15 * H * W / std::numbers::pi);
        const double cy = H * (0.3 + 0.4 * unit(rng)), cx = W * (0.55 + 0.2 * unit(rng));
        paint(d, smooth_texture(H, W, tex_seed()), 0.5f, [&](int y, int x) {
            return (y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r;
        });
    }
    if (spec.thin_structure && D >= 2) {
        const int d = D - 1;
        const int col = std::clamp(static_cast<int>(W * (0.15 + 0.1 * unit(rng))), 0, W - 1);
        const int row = std::clamp(static_cast<int>(H * (0.75 + 0.1 * unit(rng))), 0, H - 1);
        paint(d, smooth_texture(H, W, tex_seed()), 1.0f,
              [&](int y, int x) { return x == col || (y == row && x >= W / 3); });
    }
    m.validate();
    scene.ground_truth = m;

    const auto add = [&](ViewRole role, const CameraModel& cam) {
        scene.views.push_back({role, cam, render_novel_view(m, cam)});
    };
    add(ViewRole::reference, rig.reference);
    for (const auto& s : rig.sources) add(ViewRole::source, s);
    add(ViewRole::target, rig.interpolation);
    add(ViewRole::target, rig.extrapolation);
    return scene;
}

}  // namespace hsgd
