#include "hsgd/io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace hsgd {

namespace fs = std::filesystem;
using nlohmann::json;

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const std::string& path, const std::string& bytes) {
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ValidationError("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw ValidationError("short write to " + tmp.string());
    }
    fs::rename(tmp, target);
}

// ---------------------------------------------------------------- png

namespace {

struct PngReadState {
    const std::string* bytes;
    std::size_t pos;
};

void png_read_cb(png_structp png, png_bytep out, png_size_t n) {
    auto* st = static_cast<PngReadState*>(png_get_io_ptr(png));
    if (st->pos + n > st->bytes->size()) png_error(png, "truncated png");
    std::copy_n(st->bytes->data() + st->pos, n, out);
    st->pos += n;
}

void png_write_cb(png_structp png, png_bytep data, png_size_t n) {
    auto* out = static_cast<std::string*>(png_get_io_ptr(png));
    out->append(reinterpret_cast<const char*>(data), n);
}

void png_flush_cb(png_structp) {}

}  // namespace

Image<float> read_png(const std::string& path, int channels) {
    require(channels == 3 || channels == 4, "png channels must be 3 or 4");
    const std::string bytes = read_file(path);
    if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) != 0) {
        throw ValidationError(path + ": not a png file");
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ValidationError(path + ": libpng initialisation failed");
    }
    PngReadState st{&bytes, 0};
    std::vector<png_byte> pixels;
    png_uint_32 w = 0, h = 0;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ValidationError(path + ": corrupt png");
    }
    png_set_read_fn(png, &st, png_read_cb);
    png_read_info(png, info);
    w = png_get_image_width(png, info);
    h = png_get_image_height(png, info);
    const int color = png_get_color_type(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    const bool has_alpha = (color & PNG_COLOR_MASK_ALPHA) || png_get_valid(png, info, PNG_INFO_tRNS);
    if (channels == 3 && has_alpha) png_set_strip_alpha(png);
    if (channels == 4 && !has_alpha) png_set_add_alpha(png, 0xff, PNG_FILLER_AFTER);
    png_read_update_info(png, info);
    if (png_get_channels(png, info) != channels) png_error(png, "unexpected channel count");
    const std::size_t stride = static_cast<std::size_t>(w) * channels;
    pixels.resize(stride * h);
    std::vector<png_bytep> rows(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = pixels.data() + y * stride;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    Image<float> img(static_cast<int>(h), static_cast<int>(w), channels);
    for (std::size_t i = 0; i < pixels.size(); ++i) img.data[i] = pixels[i] / 255.0f;
    return img;
}

void write_png(const std::string& path, const Image<float>& image) {
    require(image.channels == 3 || image.channels == 4, "png images need 3 or 4 channels");
    require(image.height > 0 && image.width > 0, "cannot write an empty png");
    std::vector<png_byte> pixels(image.data.size());
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        const double v = std::clamp(static_cast<double>(image.data[i]), 0.0, 1.0);
        pixels[i] = static_cast<png_byte>(std::lround(v * 255.0));
    }
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw ValidationError(path + ": libpng initialisation failed");
    }
    std::string out;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw ValidationError(path + ": png encoding failed");
    }
    png_set_write_fn(png, &out, png_write_cb, png_flush_cb);
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
                 image.channels == 4 ? PNG_COLOR_TYPE_RGBA : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_set_compression_level(png, 6);
    png_write_info(png, info);
    const std::size_t stride = static_cast<std::size_t>(image.width) * image.channels;
    for (int y = 0; y < image.height; ++y) png_write_row(png, pixels.data() + y * stride);
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    write_file_atomic(path, out);
}

// ---------------------------------------------------------------- json helpers

namespace {

json camera_json(const CameraModel& cam) {
    json j;
    std::vector<double> k(9), r(9);
    for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) {
            k[a * 3 + b] = cam.intrinsics(a, b);
            r[a * 3 + b] = cam.rotation(a, b);
        }
    }
    j["intrinsics"] = k;
    j["rotation"] = r;
    j["translation"] = {cam.translation.x(), cam.translation.y(), cam.translation.z()};
    j["width"] = cam.width;
    j["height"] = cam.height;
    return j;
}

const json& field(const json& j, const char* key, const std::string& where) {
    if (!j.is_object() || !j.contains(key)) throw ValidationError(where + ": missing '" + key + "'");
    return j.at(key);
}

std::vector<double> numbers(const json& j, const char* key, std::size_t count, const std::string& where) {
    const json& a = field(j, key, where);
    if (!a.is_array() || a.size() != count) {
        throw ValidationError(where + ": '" + key + "' must be an array of " + std::to_string(count) + " numbers");
    }
    std::vector<double> out;
    for (const auto& v : a) {
        if (!v.is_number()) throw ValidationError(where + ": '" + key + "' must contain numbers");
        out.push_back(v.get<double>());
    }
    return out;
}

int integer(const json& j, const char* key, const std::string& where) {
    const json& v = field(j, key, where);
    if (!v.is_number_integer()) throw ValidationError(where + ": '" + key + "' must be an integer");
    return v.get<int>();
}

CameraModel parse_camera(const json& j, const std::string& where) {
    CameraModel cam;
    const auto k = numbers(j, "intrinsics", 9, where);
    const auto r = numbers(j, "rotation", 9, where);
    const auto t = numbers(j, "translation", 3, where);
    for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) {
            cam.intrinsics(a, b) = k[a * 3 + b];
            cam.rotation(a, b) = r[a * 3 + b];
        }
    }
    cam.translation = Eigen::Vector3d(t[0], t[1], t[2]);
    cam.width = integer(j, "width", where);
    cam.height = integer(j, "height", where);
    try {
        cam.validate();
    } catch (const ParameterError& e) {
        throw ValidationError(where + ": " + e.what());
    }
    return cam;
}

json parse_json(const std::string& path) {
    try {
        return json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw ValidationError(path + ": " + e.what());
    }
}

void check_version(const json& j, int expected, const std::string& where) {
    const int v = integer(j, "version", where);
    if (v != expected) throw ValidationError(where + ": unsupported format version " + std::to_string(v));
}

std::string padded(int i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%03d", i);
    return buf;
}

}  // namespace

// ---------------------------------------------------------------- scenes

namespace {

std::vector<PosedImage<float>> collect(const std::vector<SceneView>& views, bool targets) {
    std::vector<PosedImage<float>> out;
    for (const auto& v : views) {
        if ((v.role == ViewRole::target) == targets) out.push_back({v.image, v.camera});
    }
    return out;
}

}  // namespace

std::vector<PosedImage<float>> SceneBundle::inputs() const { return collect(views, false); }
std::vector<PosedImage<float>> SceneBundle::targets() const { return collect(views, true); }

const SceneView& SceneBundle::reference() const {
    for (const auto& v : views) {
        if (v.role == ViewRole::reference) return v;
    }
    throw ValidationError("scene has no reference view");
}

SceneBundle to_bundle(const SyntheticScene& scene) {
    SceneBundle b;
    b.near = scene.spec.depth.near;
    b.far = scene.spec.depth.far;
    b.views = scene.views;
    return b;
}

void save_scene(const std::string& dir, const SceneBundle& scene) {
    json j;
    j["version"] = kSceneFormatVersion;
    j["near"] = scene.near;
    j["far"] = scene.far;
    j["views"] = json::array();
    for (std::size_t i = 0; i < scene.views.size(); ++i) {
        const SceneView& v = scene.views[i];
        const std::string name = "images/" + padded(static_cast<int>(i)) + ".png";
        write_png((fs::path(dir) / name).string(), v.image);
        json e = camera_json(v.camera);
        e["role"] = role_name(v.role);
        e["image"] = name;
        j["views"].push_back(e);
    }
    write_file_atomic((fs::path(dir) / "cameras.json").string(), j.dump(2) + "\n");
}

SceneBundle load_scene(const std::string& dir) {
    const std::string path = (fs::path(dir) / "cameras.json").string();
    const json j = parse_json(path);
    check_version(j, kSceneFormatVersion, path);
    SceneBundle s;
    s.near = field(j, "near", path).get<double>();
    s.far = field(j, "far", path).get<double>();
    if (!(s.near > 0.0 && s.far > s.near)) throw ValidationError(path + ": need 0 < near < far");
    const json& views = field(j, "views", path);
    if (!views.is_array() || views.empty()) throw ValidationError(path + ": 'views' must be a non-empty array");

    std::set<std::string> listed;
    int refs = 0;
    for (std::size_t i = 0; i < views.size(); ++i) {
        const std::string where = path + " view " + std::to_string(i);
        SceneView v;
        const json& role = field(views[i], "role", where);
        if (!role.is_string()) throw ValidationError(where + ": 'role' must be a string");
        v.role = parse_role(role.get<std::string>());
        refs += v.role == ViewRole::reference;
        v.camera = parse_camera(views[i], where);
        const json& image = field(views[i], "image", where);
        if (!image.is_string()) throw ValidationError(where + ": 'image' must be a string");
        const fs::path img = fs::path(dir) / image.get<std::string>();
        if (!fs::exists(img)) throw ValidationError(where + ": image file " + img.string() + " not found");
        listed.insert(fs::weakly_canonical(img).string());
        v.image = read_png(img.string(), 3);
        if (v.image.height != v.camera.height || v.image.width != v.camera.width) {
            throw ValidationError(img.string() + ": size does not match its camera entry");
        }
        s.views.push_back(std::move(v));
    }
    if (refs != 1) throw ValidationError(path + ": exactly one reference view is required");
    const fs::path images = fs::path(dir) / "images";
    if (fs::is_directory(images)) {
        for (const auto& e : fs::directory_iterator(images)) {
            if (!e.is_regular_file() || e.path().extension() != ".png") continue;
            if (!listed.count(fs::weakly_canonical(e.path()).string())) {
                throw ValidationError(e.path().string() + ": no camera entry in " + path);
            }
        }
    }
    return s;
}

// ---------------------------------------------------------------- mpi bundles

void save_mpi(const std::string& dir, const Mpi<float>& m) {
    m.validate();
    json j;
    j["format"] = "hsgd-mpi";
    j["version"] = kMpiFormatVersion;
    j["width"] = m.width;
    j["height"] = m.height;
    j["planes"] = m.planes;
    j["depths"] = m.depths;
    j["reference_camera"] = camera_json(m.ref_camera);
    j["plane_files"] = json::array();
    for (int d = 0; d < m.planes; ++d) {
        const std::string name = "plane_" + padded(d) + ".png";
        Image<float> rgba(m.height, m.width, 4);
        for (int y = 0; y < m.height; ++y) {
            for (int x = 0; x < m.width; ++x) {
                for (int c = 0; c < 3; ++c) rgba.at(y, x, c) = m.c(d, y, x, c);
                rgba.at(y, x, 3) = m.a(d, y, x);
            }
        }
        write_png((fs::path(dir) / name).string(), rgba);
        j["plane_files"].push_back(name);
    }
    write_file_atomic((fs::path(dir) / "metadata.json").string(), j.dump(2) + "\n");
}

Mpi<float> load_mpi(const std::string& dir) {
    const std::string path = (fs::path(dir) / "metadata.json").string();
    const json j = parse_json(path);
    check_version(j, kMpiFormatVersion, path);
    const int W = integer(j, "width", path), H = integer(j, "height", path), D = integer(j, "planes", path);
    if (W <= 0 || H <= 0 || D <= 0) throw ValidationError(path + ": sizes must be positive");
    const auto depths = numbers(j, "depths", static_cast<std::size_t>(D), path);
    for (int d = 1; d < D; ++d) {
        if (!(depths[d] < depths[d - 1])) throw ValidationError(path + ": depths must be strictly decreasing");
    }
    const CameraModel cam = parse_camera(field(j, "reference_camera", path), path + " reference_camera");
    const json& files = field(j, "plane_files", path);
    if (!files.is_array() || files.size() != static_cast<std::size_t>(D)) {
        throw ValidationError(path + ": plane_files must list exactly " + std::to_string(D) + " planes");
    }
    std::size_t on_disk = 0;
    for (const auto& e : fs::directory_iterator(dir)) {
        const std::string n = e.path().filename().string();
        on_disk += n.rfind("plane_", 0) == 0 && e.path().extension() == ".png";
    }
    if (on_disk != static_cast<std::size_t>(D)) {
        throw ValidationError(path + ": metadata lists " + std::to_string(D) + " planes but " +
                              std::to_string(on_disk) + " plane files exist");
    }
    Mpi<float> m(D, H, W, depths, cam);
    for (int d = 0; d < D; ++d) {
        const std::string file = (fs::path(dir) / files[d].get<std::string>()).string();
        const Image<float> rgba = read_png(file, 4);
        if (rgba.height != H || rgba.width != W) throw ValidationError(file + ": plane size mismatch");
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                for (int c = 0; c < 3; ++c) m.c(d, y, x, c) = rgba.at(y, x, c);
                m.a(d, y, x) = rgba.at(y, x, 3);
            }
        }
    }
    return m;
}

void save_pose(const std::string& path, const CameraModel& camera) {
    json j;
    j["version"] = kSceneFormatVersion;
    json v = camera_json(camera);
    v["role"] = "target";
    j["views"] = json::array({v});
    write_file_atomic(path, j.dump(2) + "\n");
}

CameraModel load_pose(const std::string& path) {
    const json j = parse_json(path);
    check_version(j, kSceneFormatVersion, path);
    const json& views = field(j, "views", path);
    if (!views.is_array() || views.size() != 1) throw ValidationError(path + ": a pose file holds exactly one view");
    return parse_camera(views[0], path + " view 0");
}

// ---------------------------------------------------------------- csv, logging

std::string format_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows) {
    std::string out;
    for (std::size_t i = 0; i < header.size(); ++i) out += (i ? "," : "") + header[i];
    out += "\n";
    for (const auto& row : rows) {
        if (row.size() != header.size()) throw ParameterError("csv row width does not match header: " + path);
        for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + format_number(row[i]);
        out += "\n";
    }
    write_file_atomic(path, out);
}

LogLevel log_threshold() {
    const char* env = std::getenv("HSGD_LOG");
    if (!env) return LogLevel::warn;
    const std::string s(env);
    if (s == "error") return LogLevel::error;
    if (s == "info") return LogLevel::info;
    if (s == "debug") return LogLevel::debug;
    return LogLevel::warn;
}

void log_message(LogLevel level, const std::string& message) {
    static const LogLevel threshold = log_threshold();
    if (level > threshold) return;
    static const char* names[] = {"error", "warn", "info", "debug"};
    std::cerr << "[" << names[static_cast<int>(level)] << "] " << message << "\n";
}

}  // namespace hsgd
