#include "crossup/chart/chart.hpp"

#include "crossup/error.hpp"
#include "crossup/geometry/io.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace crossup::chart {

LocalFrameMatrix LocalFrameMatrix::from_frame(const field::CrossFrame& frame, const Vec3& origin)
{
    LocalFrameMatrix m;
    m.R.col(0) = frame.theta;
    m.R.col(1) = frame.n.cross(frame.theta);
    m.R.col(2) = frame.n;
    m.origin = origin;
    return m;
}

Vec3 to_chart(const Vec3& p, const LocalFrameMatrix& frame)
{
    return frame.R.transpose() * (p - frame.origin);
}

Vec3 from_chart(const Vec3& q, const LocalFrameMatrix& frame)
{
    return frame.R * q + frame.origin;
}

GridSpec GridSpec::for_radius(std::size_t d, double radius)
{
    require(d % 2 == 1, ErrorKind::InvalidArgument, "grid dimension must be odd so the origin is a grid point");
    require(radius > 0.0, ErrorKind::InvalidArgument, "chart radius must be positive");
    return GridSpec{d, 2.0 * radius / static_cast<double>(d)};
}

Vec3 GridSpec::cell_position(std::size_t t) const
{
    const double h = static_cast<double>(half());
    const double ix = static_cast<double>(t % d);
    const double iy = static_cast<double>(t / d);
    return Vec3((ix - h) * spacing, (iy - h) * spacing, 0.0);
}

std::size_t nearest_voxel(const GridSpec& spec, const Vec3& q)
{
    const double h = static_cast<double>(spec.half());
    std::array<long, 3> idx{};
    for (int k = 0; k < 3; ++k) {
        const double f = q[k] / spec.spacing;
        if (!(std::abs(f) <= static_cast<double>(spec.d) / 2.0)) {
            return kDropped;
        }
        idx[k] = std::clamp(std::lround(f + h), 0L, static_cast<long>(spec.d) - 1);
    }
    const auto d = static_cast<long>(spec.d);
    return static_cast<std::size_t>((idx[1] * d + idx[0]) * d + idx[2]);
}

VoxelGrid scatter_to_voxels(std::span<const Vec3> neighbors, std::span<const double> features, std::size_t width,
                            const GridSpec& spec)
{
    require(features.size() == neighbors.size() * width, ErrorKind::ShapeMismatch,
            "feature buffer does not match neighbor count");
    VoxelGrid grid;
    grid.spec = spec;
    grid.width = width;
    grid.occupied.assign(spec.voxels(), 0);
    grid.features.assign(spec.voxels() * width, 0.0);
    grid.assignment.resize(neighbors.size());
    std::vector<std::size_t> counts(spec.voxels(), 0);
    for (std::size_t j = 0; j < neighbors.size(); ++j) {
        const std::size_t v = nearest_voxel(spec, neighbors[j]);
        grid.assignment[j] = v;
        if (v == kDropped) {
            continue;
        }
        grid.occupied[v] = 1;
        ++counts[v];
        for (std::size_t c = 0; c < width; ++c) {
            grid.features[v * width + c] += features[j * width + c];
        }
    }
    for (std::size_t v = 0; v < spec.voxels(); ++v) {
        if (counts[v] > 1) {
            for (std::size_t c = 0; c < width; ++c) {
                grid.features[v * width + c] /= static_cast<double>(counts[v]);
            }
        }
    }
    return grid;
}

std::vector<Vec3> tangent_grid_points(std::size_t d, double spacing)
{
    require(d % 2 == 1, ErrorKind::InvalidArgument, "tangent grid dimension must be odd");
    const GridSpec spec{d, spacing};
    std::vector<Vec3> out;
    out.reserve(spec.cells());
    for (std::size_t t = 0; t < spec.cells(); ++t) {
        out.push_back(spec.cell_position(t));
    }
    return out;
}

std::vector<std::pair<std::size_t, double>> bilinear_weights(const GridSpec& spec, const Vec2& p)
{
    if (spec.d == 1) {
        return {{0, 1.0}};
    }
    const double h = static_cast<double>(spec.half());
    const double top = static_cast<double>(spec.d - 1);
    const double fx = std::clamp(p.x() / spec.spacing + h, 0.0, top);
    const double fy = std::clamp(p.y() / spec.spacing + h, 0.0, top);
    const auto ix = std::min(static_cast<std::size_t>(std::floor(fx)), spec.d - 2);
    const auto iy = std::min(static_cast<std::size_t>(std::floor(fy)), spec.d - 2);
    const double wx = fx - static_cast<double>(ix);
    const double wy = fy - static_cast<double>(iy);
    const std::size_t t00 = iy * spec.d + ix;
    return {{t00, (1.0 - wx) * (1.0 - wy)},
            {t00 + 1, wx * (1.0 - wy)},
            {t00 + spec.d, (1.0 - wx) * wy},
            {t00 + spec.d + 1, wx * wy}};
}

std::vector<double> bilinear_feature(const TangentGrid& grid, const Vec2& p)
{
    std::vector<double> out(grid.width, 0.0);
    for (const auto& [t, w] : bilinear_weights(grid.spec, p)) {
        if (w == 0.0) {
            continue;
        }
        const auto f = grid.feature(t);
        for (std::size_t c = 0; c < grid.width; ++c) {
            out[c] += w * f[c];
        }
    }
    return out;
}

void write_chart_dump(std::ostream& out, const LocalFrameMatrix& frame, const VoxelGrid& grid,
                      std::span<const TangentSample> samples)
{
    using geometry::io::format_real;
    auto vec = [&](const auto& v) {
        for (int k = 0; k < v.size(); ++k) {
            out << (k ? " " : "") << format_real(v[k]);
        }
    };
    out << "chart\norigin ";
    vec(frame.origin);
    for (int c = 0; c < 3; ++c) {
        out << "\naxis" << c << ' ';
        vec(Vec3(frame.R.col(c)));
    }
    out << "\ngrid d=" << grid.spec.d << " spacing=" << format_real(grid.spec.spacing) << " width=" << grid.width
        << '\n';
    for (std::size_t v = 0; v < grid.spec.voxels(); ++v) {
        if (!grid.occupied[v]) {
            continue;
        }
        const std::size_t d = grid.spec.d;
        out << "voxel " << (v / d) % d << ' ' << v / (d * d) << ' ' << v % d << " :";
        for (double f : grid.feature(v)) {
            out << ' ' << format_real(f);
        }
        out << '\n';
    }
    for (const TangentSample& s : samples) {
        out << "sample p=";
        vec(s.p_t);
        out << " o=";
        vec(s.o_t);
        out << " q=";
        vec(s.q_t);
        out << '\n';
    }
    out << "end\n";
}

} // namespace crossup::chart
