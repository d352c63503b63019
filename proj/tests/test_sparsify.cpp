#include <doctest.h>

#include <random>

#include "hsgd/psv.hpp"
#include "hsgd/reference.hpp"
#include "hsgd/sparsify.hpp"
#include "oracles.hpp"

using namespace hsgd;

namespace {

AlphaGradientVolume<double> gate_of(const std::vector<double>& g) {
    AlphaGradientVolume<double> v;
    v.planes = static_cast<int>(g.size());
    v.height = 1;
    v.width = 1;
    v.values = g;
    return v;
}

std::vector<int> indices_of(const SparseIndices& s) { return {s.indices.begin(), s.indices.end()}; }

AlphaGradientVolume<double> random_gate(int d, int h, int w, std::uint64_t seed, int levels = 0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    AlphaGradientVolume<double> v;
    v.planes = d;
    v.height = h;
    v.width = w;
    v.values.resize(static_cast<std::size_t>(d) * h * w);
    for (auto& x : v.values) x = levels > 0 ? std::floor(u(rng) * levels) / levels : u(rng);
    return v;
}

Volume<double> random_volume(int c, int d, int h, int w, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-scale, scale);
    Volume<double> v(c, d, h, w);
    for (auto& x : v.data) x = u(rng);
    return v;
}

}  // namespace

TEST_SUITE("sparsify") {

TEST_CASE("top-k examples") {
    CHECK(indices_of(select_topk(gate_of({0.1, 0.5, 0.3, 0.05}), 2)) == std::vector<int>{1, 2});
    CHECK(indices_of(select_topk(gate_of({0.2, 0.2, 0.2, 0.2}), 2)) == std::vector<int>{0, 1});
    CHECK(indices_of(select_topk(gate_of({0.9, 0.1, 0.8}), 3)) == std::vector<int>{0, 1, 2});
    CHECK_THROWS_AS(select_topk(gate_of({0.1, 0.2}), 3), ParameterError);
    CHECK_THROWS_AS(select_topk(gate_of({0.1, 0.2}), 0), ParameterError);
}

TEST_CASE("mvs window examples") {
    CHECK(indices_of(select_mvs_window(gate_of({0.1, 0.9, 0.2, 0.1, 0.1}), 3)) == std::vector<int>{0, 1, 2});
    CHECK(indices_of(select_mvs_window(gate_of({0.9, 0.1, 0.2, 0.1, 0.1}), 3)) == std::vector<int>{0, 1, 2});
    CHECK(indices_of(select_mvs_window(gate_of({0.1, 0.1, 0.2, 0.1, 0.9}), 3)) == std::vector<int>{2, 3, 4});
    CHECK(indices_of(select_mvs_window(gate_of({0.1, 0.1, 0.9, 0.1, 0.1}), 4)) == std::vector<int>{1, 2, 3, 4});
    CHECK(indices_of(select_mvs_window(gate_of({0.1, 0.1, 0.9}), 3)) == std::vector<int>{0, 1, 2});
}

TEST_CASE("top-k keeps the maximal gate mass in ascending order") {
    const auto gate = random_gate(7, 3, 4, 5, 6);
    for (int k = 1; k <= 7; ++k) {
        const SparseIndices s = select_topk(gate, k);
        const SparseIndices r = reference::select_topk(gate, k);
        CHECK(s.indices == r.indices);
        for (int y = 0; y < 3; ++y) {
            for (int x = 0; x < 4; ++x) {
                std::vector<double> g;
                for (int d = 0; d < 7; ++d) g.push_back(gate.at(d, y, x));
                double kept = 0.0;
                for (int j = 0; j < k; ++j) {
                    kept += g[s.at(j, y, x)];
                    if (j > 0) CHECK(s.at(j, y, x) > s.at(j - 1, y, x));
                }
                CHECK(kept == doctest::Approx(oracle::best_subset_sum(g, k)));
            }
        }
    }
}

TEST_CASE("gather and its backward are adjoint") {
    const auto gate = random_gate(6, 3, 5, 6);
    const SparseIndices s = select_topk(gate, 3);
    const Volume<double> v = random_volume(4, 6, 3, 5, 7);
    const Volume<double> g = random_volume(4, 3, 3, 5, 8);
    const Volume<double> slab = gather(v, s);
    const Volume<double> back = gather_backward(g, s, 6);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < slab.data.size(); ++i) lhs += slab.data[i] * g.data[i];
    for (std::size_t i = 0; i < v.data.size(); ++i) rhs += v.data[i] * back.data[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
    for (int j = 0; j < 3; ++j) CHECK(slab.at(2, j, 1, 4) == v.at(2, s.at(j, 1, 4), 1, 4));
}

TEST_CASE("restore with k = D equals the dense update bit for bit") {
    const Mpi<double> m = oracle::random_mpi<double>(5, 3, 4, 9);
    const Volume<double> r = random_volume(4, 5, 3, 4, 10, 0.3);
    const SparseIndices full = full_indices(5, 3, 4);
    for (AlphaRule rule : {AlphaRule::linear, AlphaRule::logit}) {
        const Mpi<double> a = restore_and_update(m, r, full, rule);
        const Mpi<double> b = apply_dense_update(m, r, rule);
        CHECK(a.color == b.color);
        CHECK(a.alpha == b.alpha);
        const SparseIndices top = select_topk(alpha_gradients(m), 5);
        CHECK(top.indices == full.indices);
    }
}

TEST_CASE("restore only touches the selected voxels and clamps") {
    const Mpi<double> m = oracle::random_mpi<double>(4, 2, 2, 11);
    const SparseIndices s = select_topk(alpha_gradients(m), 2);
    Volume<double> r(4, 2, 2, 2, 0.0);
    for (auto& v : r.data) v = 2.0;
    const Mpi<double> out = restore_and_update(m, r, s, AlphaRule::linear);
    for (int y = 0; y < 2; ++y) {
        for (int x = 0; x < 2; ++x) {
            for (int d = 0; d < 4; ++d) {
                const bool kept = s.at(0, y, x) == d || s.at(1, y, x) == d;
                CHECK(out.a(d, y, x) == (kept ? 1.0 : m.a(d, y, x)));
                CHECK(out.c(d, y, x, 1) == (kept ? 1.0 : m.c(d, y, x, 1)));
            }
        }
    }
}

TEST_CASE("restore backward matches finite differences") {
    const Mpi<double> m = oracle::random_mpi<double>(4, 2, 3, 12, 0.2, 0.8);
    const SparseIndices s = select_topk(alpha_gradients(m), 2);
    const Volume<double> r = random_volume(4, 2, 2, 3, 13, 0.1);
    MpiGradients<double> up{std::vector<double>(m.color.size()), std::vector<double>(m.alpha.size())};
    std::mt19937_64 rng(14);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (auto& v : up.color) v = u(rng);
    for (auto& v : up.alpha) v = u(rng);
    for (AlphaRule rule : {AlphaRule::linear, AlphaRule::logit}) {
        const auto f = [&](const Mpi<double>& x, const Volume<double>& res) {
            const Mpi<double> o = restore_and_update(x, res, s, rule);
            double t = 0.0;
            for (std::size_t i = 0; i < o.color.size(); ++i) t += up.color[i] * o.color[i];
            for (std::size_t i = 0; i < o.alpha.size(); ++i) t += up.alpha[i] * o.alpha[i];
            return t;
        };
        const RestoreGradients<double> g = restore_backward(m, r, s, rule, up);
        for (std::size_t i = 0; i < r.data.size(); ++i) {
            Volume<double> x = r;
            const double fd = oracle::central_difference(
                [&](double v) {
                    x.data[i] = v;
                    return f(m, x);
                },
                r.data[i], 1e-6);
            CHECK(oracle::relative_error(fd, g.residual.data[i], 1e-8) < 1e-6);
        }
        for (std::size_t i = 0; i < m.alpha.size(); ++i) {
            Mpi<double> x = m;
            const double fd = oracle::central_difference(
                [&](double v) {
                    x.alpha[i] = v;
                    return f(x, r);
                },
                m.alpha[i], 1e-6);
            CHECK(oracle::relative_error(fd, g.input.alpha[i], 1e-8) < 1e-6);
        }
    }
}

TEST_CASE("gradient volume layout and its backward") {
    const Mpi<double> m = oracle::random_mpi<double>(3, 4, 5, 15);
    const CameraModel src = oracle::camera_at(5.0, 4, 5, Eigen::Vector3d(0.3, 0.0, 0.0));
    std::mt19937_64 rng(16);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image<double> a(4, 5, 3), b(4, 5, 3);
    for (auto& v : a.data) v = u(rng);
    for (auto& v : b.data) v = u(rng);
    std::vector<PosedImage<double>> views{{a, m.ref_camera}, {b, src}};
    const Psv<double> p = build_psv<double>(views, m.ref_camera, m.depths);
    const GradientVolume<double> v = formulate_gradients(m, p);
    CHECK(v.layout.total() == 12);
    CHECK(v.data.channels == 12);
    CHECK(v.data.at(v.layout.mpi_alpha(), 2, 1, 3) == m.a(2, 1, 3));
    CHECK(v.data.at(v.layout.mpi_color(1), 0, 3, 4) == m.c(0, 3, 4, 1));
    CHECK(v.data.at(v.layout.psv(1, 2), 1, 2, 2) == p.at(1, 1, 2, 2, 2));
    const AlphaGradientVolume<double> ag = alpha_gradients(m);
    CHECK(v.data.at(v.layout.alpha_gradient(0), 1, 2, 2) == doctest::Approx(ag.at(1, 2, 2)));

    const Volume<double> w = random_volume(12, 3, 4, 5, 17);
    const auto f = [&](const Mpi<double>& x) {
        const GradientVolume<double> o = formulate_gradients(x, p);
        double t = 0.0;
        for (std::size_t i = 0; i < o.data.data.size(); ++i) t += w.data[i] * o.data.data[i];
        return t;
    };
    const MpiGradients<double> g = formulate_backward(m, p, w);
    for (std::size_t i = 0; i < m.alpha.size(); i += 2) {
        Mpi<double> x = m;
        const double fd = oracle::central_difference(
            [&](double val) {
                x.alpha[i] = val;
                return f(x);
            },
            m.alpha[i], 1e-6);
        CHECK(oracle::relative_error(fd, g.alpha[i], 1e-8) < 1e-6);
    }
    for (std::size_t i = 0; i < m.color.size(); i += 7) {
        Mpi<double> x = m;
        const double fd = oracle::central_difference(
            [&](double val) {
                x.color[i] = val;
                return f(x);
            },
            m.color[i], 1e-6);
        CHECK(oracle::relative_error(fd, g.color[i], 1e-8) < 1e-6);
    }
}

}  // TEST_SUITE
