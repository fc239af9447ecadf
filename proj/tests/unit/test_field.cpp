#include "crossup/error.hpp"
#include "crossup/field/cross_field.hpp"
#include "crossup/geometry/io.hpp"
#include "crossup/geometry/sampling.hpp"
#include "crossup/geometry/shapes.hpp"
#include "crossup/geometry/spatial_index.hpp"
#include "oracles.hpp"
#include "scenarios.hpp"

#include <doctest.h>

#include <Eigen/Geometry>

#include <cmath>
#include <numbers>
#include <sstream>

using namespace crossup;
using namespace crossup::field;
using geometry::Vec3;

namespace {

Vec3 random_direction(std::mt19937_64& rng)
{
    std::normal_distribution<double> g(0.0, 1.0);
    return Vec3(g(rng), g(rng), g(rng)).normalized();
}

geometry::PointCloud sphere_cloud(std::size_t n, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    auto pts = testing::random_points(n, rng);
    std::vector<Vec3> normals;
    for (auto& p : pts) {
        p = (p - Vec3::Constant(0.5)).normalized();
        normals.push_back(p);
    }
    return geometry::PointCloud(std::move(pts), std::move(normals));
}

} // namespace

TEST_SUITE("field")
{
    TEST_CASE("quarter-turn rotations stay tangent and cycle after four steps")
    {
        std::mt19937_64 rng(3);
        for (int i = 0; i < 100; ++i) {
            const auto f = enforce_frame(random_direction(rng), random_direction(rng));
            CHECK(f.is_valid());
            for (int k = 0; k < 4; ++k) {
                const Vec3 r = rosy_rotate(f, k);
                CHECK(std::abs(r.norm() - 1.0) < 1e-12);
                CHECK(std::abs(r.dot(f.n)) < 1e-12);
                CHECK(std::abs(r.dot(rosy_rotate(f, k + 1))) < 1e-12);
            }
            CHECK((rosy_rotate(f, 4) - f.theta).norm() < 1e-12);
            CHECK((rosy_rotate(f, 2) + f.theta).norm() < 1e-12);
            CHECK((rosy_rotate(f, -1) - rosy_rotate(f, 3)).norm() < 1e-12);
            CHECK((rosy_rotate(f, 1) - f.n.cross(f.theta)).norm() < 1e-12);
        }
    }

    TEST_CASE("enforce_frame projects onto the tangent plane and handles parallel input")
    {
        const auto f = enforce_frame(Vec3(0, 0, 2), Vec3(1, 0, 1));
        CHECK((f.n - Vec3::UnitZ()).norm() < 1e-15);
        CHECK((f.theta - Vec3::UnitX()).norm() < 1e-15);

        const auto g = enforce_frame(Vec3(0, 0, 1), Vec3(0, 0, 5));
        CHECK(g.is_valid());
        CHECK((g.theta - fallback_tangent(g.n)).norm() < 1e-15);

        std::mt19937_64 rng(5);
        for (int i = 0; i < 100; ++i) {
            const Vec3 n = random_direction(rng);
            const Vec3 t = fallback_tangent(n);
            CHECK(std::abs(t.norm() - 1.0) < 1e-12);
            CHECK(std::abs(t.dot(n)) < 1e-12);
        }
        CHECK_FALSE(CrossFrame{Vec3::UnitZ(), Vec3(1, 0, 0.1)}.is_valid());
    }

    TEST_CASE("smoothness term vanishes at quarter turns and peaks at 45 degrees")
    {
        const auto sweep = testing::rosy_sweep(17, 16);
        CHECK(sweep.worst_at_quarter_turns < 1e-12);
        CHECK(std::abs(sweep.at_45 - (1.0 - std::sqrt(0.5))) < 1e-12);
        CHECK(sweep.sweep_max <= 1.0 - std::sqrt(0.5) + 1e-12);
        CHECK(std::fmod(sweep.sweep_max_angle, 90.0) == doctest::Approx(45.0));
    }

    TEST_CASE("smoothness term ignores the representative chosen")
    {
        std::mt19937_64 rng(7);
        for (int i = 0; i < 200; ++i) {
            const Vec3 n = random_direction(rng);
            const auto a = enforce_frame(n, random_direction(rng));
            const auto b = enforce_frame(n, random_direction(rng));
            const double base = pairwise_smooth_loss(a, b);
            CHECK(base >= 0.0);
            CHECK(base <= 1.0 - std::sqrt(0.5) + 1e-12);
            for (int k = 1; k < 4; ++k) {
                CHECK(std::abs(pairwise_smooth_loss(a, CrossFrame{n, rosy_rotate(b, k)}) - base) < 1e-12);
                CHECK(std::abs(pairwise_smooth_loss(CrossFrame{n, rosy_rotate(a, k)}, b) - base) < 1e-12);
            }
        }
    }

    TEST_CASE("field energy sums the pairwise term over k nearest neighbors")
    {
        const auto cloud = sphere_cloud(60, 9);
        std::mt19937_64 rng(9);
        std::vector<CrossFrame> frames;
        for (std::size_t i = 0; i < cloud.size(); ++i) {
            frames.push_back(enforce_frame(cloud.normals()[i], random_direction(rng)));
        }
        const auto report = field_energy(cloud, frames, &cloud.normals(), 5);
        double expected = 0.0;
        for (std::size_t i = 0; i < cloud.size(); ++i) {
            const auto nn = testing::brute_knn(cloud.points(), cloud[i], 6);
            double local = 0.0;
            for (std::size_t j = 1; j < nn.size(); ++j) {
                local += pairwise_smooth_loss(frames[i], frames[nn[j].index]);
            }
            CHECK(std::abs(report.smooth_residuals[i] - local) < 1e-12);
            expected += local;
        }
        CHECK(std::abs(report.smooth_loss - expected) < 1e-10);
        CHECK(report.normal_loss < 1e-12);
        CHECK(report.ortho_loss < 1e-12);
    }

    TEST_CASE("solver energy never grows and the run is reproducible")
    {
        const auto cloud = sphere_cloud(300, 21);
        const auto a = optimize_field(cloud, {6, 12, 4});
        REQUIRE(a.energy_trace.size() == 13);
        for (std::size_t s = 1; s < a.energy_trace.size(); ++s) {
            CHECK(a.energy_trace[s] <= a.energy_trace[s - 1] + 1e-9);
        }
        CHECK(a.energy_trace.back() < 0.5 * a.energy_trace.front());
        for (std::size_t i = 0; i < cloud.size(); ++i) {
            CHECK(a.frames[i].is_valid());
            CHECK((a.frames[i].n - cloud.normals()[i]).norm() < 1e-12);
        }
        const auto b = optimize_field(cloud, {6, 12, 4});
        for (std::size_t i = 0; i < cloud.size(); ++i) {
            CHECK(a.frames[i].theta == b.frames[i].theta);
        }
        const auto report = field_energy(cloud, a.frames, nullptr, 6);
        CHECK(std::abs(report.smooth_loss - a.energy_trace.back()) < 1e-9 * (1.0 + report.smooth_loss));
    }

    TEST_CASE("a planar cloud converges to a constant field")
    {
        std::mt19937_64 rng(8);
        auto pts = testing::random_points(500, rng);
        for (auto& p : pts) p.z() = 0.0;
        const geometry::PointCloud cloud(pts, std::vector<Vec3>(pts.size(), Vec3::UnitZ()));
        for (std::uint64_t seed : {1, 2, 3}) {
            const auto r = optimize_field(cloud, {6, 10, seed});
            CHECK(r.energy_trace.back() < 1e-6);
        }
    }

    TEST_CASE("two half-planes meeting at a right angle align with the crease")
    {
        // z = 0 for x < 0 and x = 0 for z < 0; the crease runs along y.
        std::mt19937_64 rng(12);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        std::vector<Vec3> pts, normals;
        for (int i = 0; i < 1500; ++i) {
            const double s = -u(rng), y = u(rng);
            if (i % 2) {
                pts.emplace_back(s, y, 0.0);
                normals.push_back(Vec3::UnitZ());
            } else {
                pts.emplace_back(0.0, y, s);
                normals.push_back(-Vec3::UnitX());
            }
        }
        const geometry::PointCloud cloud(pts, normals);
        const double band = 0.05 * std::sqrt(3.0);
        for (std::uint64_t seed : {1, 2}) {
            const auto r = optimize_field(cloud, {6, 300, seed});
            std::size_t near = 0, aligned = 0;
            for (std::size_t i = 0; i < pts.size(); ++i) {
                if (std::hypot(pts[i].x(), pts[i].z()) > band) continue;
                ++near;
                aligned += testing::rosy_deviation_degrees(r.frames[i].n, r.frames[i].theta, Vec3::UnitY()) <= 10.0;
            }
            MESSAGE("seed " << seed << " near " << near << " aligned " << aligned);
            CHECK(aligned >= 0.9 * near);
        }
    }

    TEST_CASE("solver without normals is rejected")
    {
        std::mt19937_64 rng(1);
        const geometry::PointCloud bare(testing::random_points(20, rng));
        CHECK_THROWS_AS(optimize_field(bare, {}), Error);
    }

    TEST_CASE("solved cube field follows the edges")
    {
        const auto result = testing::cube_edge_alignment(2000, 30, 1);
        MESSAGE("near edge " << result.near_edge << " aligned " << result.aligned);
        CHECK(result.near_edge > 100);
        CHECK(result.fraction() >= 0.85);
    }

    TEST_CASE("frames without a field use the fallback tangent")
    {
        const std::vector<Vec3> normals{Vec3::UnitX(), Vec3(1, 1, 0).normalized()};
        const auto frames = frames_without_field(normals);
        REQUIRE(frames.size() == 2);
        for (std::size_t i = 0; i < 2; ++i) {
            CHECK(frames[i].is_valid());
            CHECK((frames[i].theta - fallback_tangent(normals[i])).norm() < 1e-15);
        }
    }

    TEST_CASE("field PLY carries tangents and the OBJ draws one cross per point")
    {
        const std::vector<Vec3> pts{Vec3(0, 0, 0), Vec3(1, 2, 3)};
        const std::vector<CrossFrame> frames{{Vec3::UnitZ(), Vec3::UnitX()}, {Vec3::UnitY(), Vec3::UnitZ()}};
        std::stringstream ply;
        write_field_ply(ply, pts, frames);
        const auto cloud = geometry::io::read_ply(ply);
        REQUIRE(cloud.size() == 2);
        CHECK(cloud.normals()[1] == Vec3::UnitY());
        REQUIRE(cloud.attr_width() == 3);
        CHECK(cloud.attrs()[3] == 0.0);
        CHECK(cloud.attrs()[5] == 1.0);

        std::stringstream obj;
        write_field_obj(obj, pts, frames, 0.5);
        std::size_t v = 0, l = 0;
        std::string line;
        while (std::getline(obj, line)) {
            if (line.rfind("v ", 0) == 0) ++v;
            if (line.rfind("l ", 0) == 0) ++l;
        }
        CHECK(v == 10);
        CHECK(l == 8);
    }
}
