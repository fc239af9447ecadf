#pragma once

#include "crossup/field/cross_field.hpp"
#include "crossup/geometry/point_cloud.hpp"

#include <array>
#include <cstddef>
#include <iosfwd>
#include <limits>
#include <span>
#include <utility>
#include <vector>

namespace crossup::chart {

using geometry::Vec2;
using geometry::Vec3;
using geometry::Mat3;

/// Rigid chart at a point: columns of R are (theta, n x theta, n).
struct LocalFrameMatrix {
    Mat3 R = Mat3::Identity();
    Vec3 origin = Vec3::Zero();

    static LocalFrameMatrix from_frame(const field::CrossFrame& frame, const Vec3& origin);
};

/// (p - origin) expressed in the frame axes.
Vec3 to_chart(const Vec3& p, const LocalFrameMatrix& frame);
/// Inverse of to_chart: R q + origin.
Vec3 from_chart(const Vec3& q, const LocalFrameMatrix& frame);

/// Grid geometry shared by the voxel and tangent grids. Cells are indexed
/// t = iy * d + ix (x along theta, y along n x theta); voxels v = t * d + iz
/// with z along the normal. Index (d-1)/2 on every axis is the chart origin.
struct GridSpec {
    std::size_t d = 7;
    double spacing = 1.0;

    std::size_t half() const { return (d - 1) / 2; }
    std::size_t cells() const { return d * d; }
    std::size_t voxels() const { return d * d * d; }
    std::size_t center_cell() const { return half() * d + half(); }
    Vec3 cell_position(std::size_t t) const;

    /// spacing = 2 * radius / d. Throws when d is even or zero.
    static GridSpec for_radius(std::size_t d, double radius);
};

inline constexpr std::size_t kDropped = std::numeric_limits<std::size_t>::max();

struct VoxelGrid {
    GridSpec spec;
    std::size_t width = 0;           // feature channels
    std::vector<unsigned char> occupied;  // spec.voxels()
    std::vector<double> features;     // spec.voxels() * width, voxel-major
    /// Voxel each input neighbor landed in, or kDropped when outside the extent.
    std::vector<std::size_t> assignment;

    std::span<const double> feature(std::size_t v) const
    {
        return std::span<const double>(features).subspan(v * width, width);
    }
};

/// Nearest-voxel-center voxel index for a chart position, or kDropped.
std::size_t nearest_voxel(const GridSpec& spec, const Vec3& q);

/// Scatters neighbor features into a d^3 grid. Neighbors sharing a voxel are
/// averaged; neighbors outside [-d*s/2, d*s/2]^3 are dropped; empty voxels
/// hold zeros. `features` is neighbor-major with `width` values per neighbor.
VoxelGrid scatter_to_voxels(std::span<const Vec3> neighbors, std::span<const double> features, std::size_t width,
                            const GridSpec& spec);

/// d x d chart positions at z = 0 in cell order; the center cell is the origin.
std::vector<Vec3> tangent_grid_points(std::size_t d, double spacing);

struct TangentGrid {
    GridSpec spec;
    std::size_t width = 0;
    std::vector<double> features;  // spec.cells() * width

    std::span<const double> feature(std::size_t t) const
    {
        return std::span<const double>(features).subspan(t * width, width);
    }
};

/// Up to four (cell, weight) pairs blending the cells around p, which is
/// clamped to the grid hull first. Weights sum to 1.
std::vector<std::pair<std::size_t, double>> bilinear_weights(const GridSpec& spec, const Vec2& p);

std::vector<double> bilinear_feature(const TangentGrid& grid, const Vec2& p);

struct TangentSample {
    Vec2 p_t = Vec2::Zero();
    std::vector<double> f_t;
    Vec3 o_t = Vec3::Zero();
    Vec3 q_t = Vec3::Zero();
};

/// Plain-text dump of one chart for golden-file comparisons.
void write_chart_dump(std::ostream& out, const LocalFrameMatrix& frame, const VoxelGrid& grid,
                      std::span<const TangentSample> samples);

} // namespace crossup::chart
