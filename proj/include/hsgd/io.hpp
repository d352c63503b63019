#pragma once

#include <string>
#include <vector>

#include "hsgd/geometry.hpp"
#include "hsgd/mpi.hpp"
#include "hsgd/scenegen.hpp"

namespace hsgd {

inline constexpr int kSceneFormatVersion = 1;
inline constexpr int kMpiFormatVersion = 1;

std::string read_file(const std::string& path);
/// Writes to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::string& path, const std::string& bytes);

/// 8-bit PNG decoded to [0, 1] without any gamma handling; gray and palette
/// files are expanded. `channels` is 3 or 4.
Image<float> read_png(const std::string& path, int channels = 3);
/// Values are clamped to [0, 1] and rounded to 8 bits. No time or gamma chunks.
void write_png(const std::string& path, const Image<float>& image);

struct SceneBundle {
    double near = 0.0;
    double far = 0.0;
    std::vector<SceneView> views;

    std::vector<PosedImage<float>> inputs() const;
    std::vector<PosedImage<float>> targets() const;
    const SceneView& reference() const;
};

/// DIR/cameras.json + DIR/images/000.png ...
void save_scene(const std::string& dir, const SceneBundle& scene);
SceneBundle load_scene(const std::string& dir);
SceneBundle to_bundle(const SyntheticScene& scene);

/// DIR/metadata.json + DIR/plane_000.png ... (straight, not premultiplied, RGBA).
void save_mpi(const std::string& dir, const Mpi<float>& m);
Mpi<float> load_mpi(const std::string& dir);

/// Pose file: the single-entry form of cameras.json.
void save_pose(const std::string& path, const CameraModel& camera);
CameraModel load_pose(const std::string& path);

/// Plain CSV with fixed %.9g formatting so identical runs give identical bytes.
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows);
std::string format_number(double v);

enum class LogLevel { error = 0, warn = 1, info = 2, debug = 3 };
/// Threshold from HSGD_LOG (error|warn|info|debug), default warn.
LogLevel log_threshold();
void log_message(LogLevel level, const std::string& message);

}  // namespace hsgd
