#include <doctest.h>

#include <random>

#include "hsgd/psv.hpp"
#include "oracles.hpp"

using namespace hsgd;

namespace {

Image<double> random_image(int h, int w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image<double> img(h, w, 3);
    for (auto& v : img.data) v = u(rng);
    return img;
}

}  // namespace

TEST_SUITE("psv") {

TEST_CASE("plane sweep resamples every view through each plane") {
    const CameraModel ref = oracle::camera_at(10.0, 6, 8, Eigen::Vector3d::Zero());
    const CameraModel src = oracle::camera_at(10.0, 6, 8, Eigen::Vector3d(0.3, 0.1, 0.0));
    std::vector<PosedImage<double>> views{{random_image(6, 8, 1), ref}, {random_image(6, 8, 2), src}};
    const std::vector<double> depths{6.0, 3.0, 1.5};
    const Psv<double> p = build_psv<double>(views, ref, depths);
    CHECK(p.views == 2);
    CHECK(p.planes == 3);
    for (int d = 0; d < 3; ++d) {
        CHECK(p.slice(0, d).data == views[0].image.data);
        for (int y = 0; y < 6; ++y) {
            for (int x = 0; x < 8; ++x) {
                const Eigen::Vector2d s = oracle::project_through_plane(ref, src, depths[d], x, y);
                for (int c = 0; c < 3; ++c) {
                    CHECK(p.at(1, d, y, x, c) == doctest::Approx(oracle::bilinear(views[1].image, s.x(), s.y(), c)));
                }
            }
        }
    }
}

TEST_CASE("downsampling averages 2x2 blocks with partial borders") {
    Image<double> img(3, 3, 1);
    for (int i = 0; i < 9; ++i) img.data[i] = i;
    const Image<double> d = downsample2(img);
    CHECK(d.height == 2);
    CHECK(d.width == 2);
    CHECK(d.at(0, 0) == doctest::Approx((0 + 1 + 3 + 4) / 4.0));
    CHECK(d.at(0, 1) == doctest::Approx((2 + 5) / 2.0));
    CHECK(d.at(1, 0) == doctest::Approx((6 + 7) / 2.0));
    CHECK(d.at(1, 1) == doctest::Approx(8.0));
}

TEST_CASE("pyramid halves every level") {
    const CameraModel ref = oracle::camera_at(10.0, 12, 16, Eigen::Vector3d::Zero());
    std::vector<PosedImage<double>> views{{random_image(12, 16, 3), ref}};
    const Psv<double> p = build_psv<double>(views, ref, {4.0, 2.0});
    const PsvPyramid<double> pyr = build_pyramid(p, 2);
    REQUIRE(pyr.levels.size() == 3);
    CHECK(pyr.levels[1].height == 6);
    CHECK(pyr.levels[2].width == 4);
    CHECK(pyr.levels[2].ref_camera.width == 4);
    CHECK(pyr.levels[2].slice(0, 1).data == downsample2(downsample2(p.slice(0, 1))).data);
    CHECK_THROWS_AS(build_psv<double>(std::span<const PosedImage<double>>{}, ref, {1.0}), ParameterError);
}

}  // TEST_SUITE
