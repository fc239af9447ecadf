#include "crossup/chart/chart.hpp"
#include "crossup/error.hpp"
#include "scenarios.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

using namespace crossup;
using namespace crossup::chart;

TEST_SUITE("chart")
{
    TEST_CASE("chart transform round trip is exact to rounding")
    {
        const double err = testing::chart_round_trip_error(100000, 1);
        MESSAGE("max round-trip error " << err);
        CHECK(err <= 1e-10);
    }

    TEST_CASE("chart axes follow theta, n x theta and n")
    {
        const field::CrossFrame f{Vec3::UnitZ(), Vec3::UnitY()};
        const auto m = LocalFrameMatrix::from_frame(f, Vec3(1, 1, 1));
        CHECK((to_chart(Vec3(1, 2, 1), m) - Vec3(1, 0, 0)).norm() < 1e-15);
        CHECK((to_chart(Vec3(0, 1, 1), m) - Vec3(0, 1, 0)).norm() < 1e-15);
        CHECK((to_chart(Vec3(1, 1, 3), m) - Vec3(0, 0, 2)).norm() < 1e-15);
        CHECK(std::abs(m.R.determinant() - 1.0) < 1e-15);
    }

    TEST_CASE("grid spec needs an odd dimension")
    {
        const auto g = GridSpec::for_radius(7, 0.35);
        CHECK(g.spacing == doctest::Approx(0.1));
        CHECK(g.half() == 3);
        CHECK(g.center_cell() == 24);
        CHECK(g.cell_position(g.center_cell()).norm() == 0.0);
        CHECK_THROWS_AS(GridSpec::for_radius(6, 1.0), Error);
        CHECK_THROWS_AS(GridSpec::for_radius(5, 0.0), Error);
        CHECK_THROWS_AS(tangent_grid_points(4, 1.0), Error);
    }

    TEST_CASE("tangent grid spans the chart plane around the origin")
    {
        const auto pts = tangent_grid_points(5, 0.2);
        REQUIRE(pts.size() == 25);
        CHECK(pts[12].norm() == 0.0);
        CHECK((pts[0] - Vec3(-0.4, -0.4, 0)).norm() < 1e-15);
        CHECK((pts[1] - Vec3(-0.2, -0.4, 0)).norm() < 1e-15);
        CHECK((pts[5] - Vec3(-0.4, -0.2, 0)).norm() < 1e-15);
        for (const auto& p : pts) {
            CHECK(p.z() == 0.0);
        }
    }

    TEST_CASE("voxel scatter averages shared cells and drops outliers")
    {
        const GridSpec spec{3, 1.0};
        const std::vector<Vec3> nb{Vec3(0.1, 0, 0), Vec3(-0.2, 0.1, 0), Vec3(1.1, 0, 0), Vec3(1.6, 0, 0),
                                   Vec3(0, 0, -0.9)};
        const std::vector<double> feat{1, 10, 3, 30, 5, 50, 7, 70, 9, 90};
        const auto grid = scatter_to_voxels(nb, feat, 2, spec);
        const std::size_t center = (1 * 3 + 1) * 3 + 1;
        CHECK(grid.assignment[0] == center);
        CHECK(grid.assignment[1] == center);
        CHECK(grid.assignment[2] == (1 * 3 + 2) * 3 + 1);
        CHECK(grid.assignment[3] == kDropped);
        CHECK(grid.assignment[4] == (1 * 3 + 1) * 3 + 0);
        CHECK(grid.feature(center)[0] == doctest::Approx(2.0));
        CHECK(grid.feature(center)[1] == doctest::Approx(20.0));
        CHECK(grid.feature(grid.assignment[2])[0] == 5.0);
        std::size_t occupied = 0;
        for (std::size_t v = 0; v < spec.voxels(); ++v) {
            occupied += grid.occupied[v];
            if (!grid.occupied[v]) {
                CHECK(grid.feature(v)[0] == 0.0);
            }
        }
        CHECK(occupied == 3);
        CHECK_THROWS_AS(scatter_to_voxels(nb, std::vector<double>(3), 2, spec), Error);
    }

    TEST_CASE("every in-extent point lands in its nearest voxel center")
    {
        const GridSpec spec{5, 0.3};
        std::mt19937_64 rng(2);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        const double extent = 0.5 * spec.d * spec.spacing;
        for (int i = 0; i < 5000; ++i) {
            const Vec3 q(u(rng), u(rng), u(rng));
            const auto v = nearest_voxel(spec, q);
            const bool inside = q.cwiseAbs().maxCoeff() <= extent;
            CHECK((v != kDropped) == inside);
            if (v == kDropped) continue;
            const Vec3 c = spec.cell_position(v / spec.d) + Vec3(0, 0, (double(v % spec.d) - spec.half()) * spec.spacing);
            double best = 1e300;
            for (std::size_t w = 0; w < spec.voxels(); ++w) {
                const Vec3 cw =
                    spec.cell_position(w / spec.d) + Vec3(0, 0, (double(w % spec.d) - spec.half()) * spec.spacing);
                best = std::min(best, (q - cw).cwiseAbs().maxCoeff());
            }
            CHECK((q - c).cwiseAbs().maxCoeff() <= best + 1e-12);
        }
    }

    TEST_CASE("bilinear weights form a partition of unity and interpolate linear data")
    {
        const GridSpec spec{5, 0.25};
        TangentGrid grid{spec, 1, {}};
        for (std::size_t t = 0; t < spec.cells(); ++t) {
            const Vec3 c = spec.cell_position(t);
            grid.features.push_back(2.0 * c.x() - 3.0 * c.y() + 1.0);
        }
        std::mt19937_64 rng(4);
        std::uniform_real_distribution<double> u(-0.5, 0.5);
        for (int i = 0; i < 1000; ++i) {
            const Vec2 p(u(rng), u(rng));
            double sum = 0.0;
            for (const auto& [t, w] : bilinear_weights(spec, p)) {
                CHECK(t < spec.cells());
                CHECK(w >= 0.0);
                sum += w;
            }
            CHECK(std::abs(sum - 1.0) < 1e-12);
            CHECK(bilinear_feature(grid, p)[0] == doctest::Approx(2.0 * p.x() - 3.0 * p.y() + 1.0).epsilon(1e-12));
        }
        // Outside the hull the position is clamped to the border.
        CHECK(bilinear_feature(grid, Vec2(5.0, 0.0))[0] == doctest::Approx(2.0 * 0.5 + 1.0));
        const auto at_center = bilinear_weights(spec, Vec2::Zero());
        double center_weight = 0.0;
        for (const auto& [t, w] : at_center) {
            if (t == spec.center_cell()) center_weight += w;
        }
        CHECK(center_weight == doctest::Approx(1.0));
    }

    TEST_CASE("chart dump lists occupied voxels and samples")
    {
        const GridSpec spec{3, 1.0};
        const std::vector<Vec3> nb{Vec3(0, 0, 0)};
        const std::vector<double> feat{0.5};
        const auto grid = scatter_to_voxels(nb, feat, 1, spec);
        const LocalFrameMatrix m;
        const std::vector<TangentSample> samples{{Vec2(0.5, 0), {1.0}, Vec3(0, 0, 0.25), Vec3(0.5, 0, 0.25)}};
        std::ostringstream out;
        write_chart_dump(out, m, grid, samples);
        const std::string expected = "chart\norigin 0 0 0\naxis0 1 0 0\naxis1 0 1 0\naxis2 0 0 1\n"
                                     "grid d=3 spacing=1 width=1\nvoxel 1 1 1 : 0.5\n"
                                     "sample p=0.5 0 o=0 0 0.25 q=0.5 0 0.25\nend\n";
        CHECK(out.str() == expected);
    }
}
