#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hsgd/geometry.hpp"
#include "hsgd/mpi.hpp"
#include "hsgd/psv.hpp"

namespace hsgd {

enum class ViewRole { reference, source, target };

const char* role_name(ViewRole role);
ViewRole parse_role(const std::string& name);

struct RigSpec {
    double baseline = 0.33;
    int sources = 3;
    double focal = 0.0;  // 0 selects the image width
    int height = 48;
    int width = 64;
};

/// Reference at the origin looking down +z; sources on a lateral grid at
/// +-baseline; an interpolation target inside their hull and an extrapolation
/// target outside it.
struct Rig {
    CameraModel reference;
    std::vector<CameraModel> sources;
    CameraModel interpolation;
    CameraModel extrapolation;
};

Rig make_rig(const RigSpec& spec);

struct SceneSpec {
    std::uint64_t seed = 1;
    int planes = 8;
    DepthSampling depth{2.0, 8.0, 8, DepthSpacing::inverse_depth};  // count follows planes
    RigSpec rig;
    bool occluder = true;          // opaque block in the middle of the volume
    bool semi_transparent = true;  // alpha = 0.5 region
    bool thin_structure = true;    // 1-pixel strips on the nearest plane
};

struct SceneView {
    ViewRole role = ViewRole::source;
    CameraModel camera;
    Image<float> image;
};

struct SyntheticScene {
    SceneSpec spec;
    Mpi<float> ground_truth;
    std::vector<SceneView> views;  // reference, sources, interpolation target, extrapolation target

    /// Reference + source views, the inputs of a reconstruction.
    std::vector<PosedImage<float>> inputs() const;
    std::vector<PosedImage<float>> targets() const;
    const SceneView& reference() const;
};

SyntheticScene make_scene(const SceneSpec& spec);

/// Smooth texture in [0.1, 0.9]: a few low-frequency sinusoids per channel.
Image<float> smooth_texture(int height, int width, std::uint64_t seed);

}  // namespace hsgd
