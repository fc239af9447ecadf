#pragma once

// Measurements shared by the unit tests and the acceptance report.

#include "crossup/geometry/point_cloud.hpp"

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace crossup::testing {

struct RosySweep {
    double worst_at_quarter_turns = 0.0;  // largest loss at k * 90 degrees
    double at_45 = 0.0;                   // loss at 45 degrees
    double sweep_max = 0.0;               // largest loss over all sampled angles
    double sweep_max_angle = 0.0;         // degrees
};

/// Rotates one cross against another by every whole degree in [0, 360) about
/// a shared random normal, for several random frames.
RosySweep rosy_sweep(std::uint64_t seed, std::size_t frames = 8);

/// Largest |from_chart(to_chart(x)) - x| over random frames and points.
double chart_round_trip_error(std::size_t pairs, std::uint64_t seed);

struct CubeAlignment {
    std::size_t near_edge = 0;
    std::size_t aligned = 0;
    double fraction() const { return near_edge ? static_cast<double>(aligned) / static_cast<double>(near_edge) : 0.0; }
};

/// Solver run on `count` blue-noise samples of an axis-aligned unit cube;
/// counts points within `edge_band * diagonal` of an edge whose 4-RoSy
/// deviation from that edge's direction is at most `max_degrees`.
CubeAlignment cube_edge_alignment(std::size_t count, std::size_t sweeps, std::uint64_t seed, double edge_band = 0.05,
                                  double max_degrees = 10.0);

/// Smallest angle (degrees) between `direction` and any of the four cross
/// directions of (n, theta).
double rosy_deviation_degrees(const geometry::Vec3& n, const geometry::Vec3& theta, const geometry::Vec3& direction);

struct OracleReport {
    std::size_t instances = 0;
    double chamfer = 0.0;    // largest relative error, sum and mean reductions and the loss value
    double hausdorff = 0.0;
    double uni = 0.0;
    double conv = 0.0;       // conv3d (masked and dense) and conv2d
    std::size_t knn_mismatches = 0;     // queries whose index list or distances differ
    std::size_t radius_mismatches = 0;

    double worst() const { return std::max({chamfer, hausdorff, uni, conv}); }
};

/// Fast paths against the brute-force oracles on random instances of at
/// most `max_points` points; every other instance sits on a lattice so
/// distance ties are exercised.
OracleReport oracle_equivalence(std::size_t instances, std::size_t max_points, std::uint64_t seed);

/// Points on the unit sphere, denser toward +z, with Gaussian noise of the
/// given standard deviation.
std::vector<geometry::Vec3> nonuniform_sphere(std::size_t count, double noise_sigma, std::uint64_t seed);

/// Gaussian noise added to every coordinate.
std::vector<geometry::Vec3> add_noise(std::span<const geometry::Vec3> points, double sigma, std::uint64_t seed);

} // namespace crossup::testing
