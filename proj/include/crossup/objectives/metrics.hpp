#pragma once

#include "crossup/geometry/mesh.hpp"
#include "crossup/geometry/point_cloud.hpp"

#include <cstddef>
#include <span>

namespace crossup::objectives {

using geometry::Vec3;

enum class Reduction { Sum, Mean };

/// Bidirectional squared nearest-neighbor distance. Sum adds both directional
/// sums; Mean divides each directional sum by its source count first.
double chamfer(std::span<const Vec3> a, std::span<const Vec3> b, Reduction reduction);

/// Symmetric Hausdorff distance (non-squared).
double hausdorff(std::span<const Vec3> a, std::span<const Vec3> b);

/// Mean exact point-to-triangle distance from points to the mesh surface.
double p2f(std::span<const Vec3> points, const geometry::TriangleMesh& mesh);

/// Uniformity: every dense point is assigned to its nearest point of y (ties
/// to the lower index); the summed assignment distances are divided by |y|.
double uni_metric(std::span<const Vec3> y, std::span<const Vec3> dense);

struct MetricReport {
    double cd = 0.0;   // mean reduction
    double hd = 0.0;
    double p2f = 0.0;  // 0 when no mesh was given
    double uni = 0.0;
    std::size_t predicted = 0;
    std::size_t reference = 0;
};

/// All metrics of `pred` against `gt`. p2f needs the mesh; uni uses
/// `dense` (falls back to gt when empty).
MetricReport evaluate(std::span<const Vec3> pred, std::span<const Vec3> gt, const geometry::TriangleMesh* mesh,
                      std::span<const Vec3> dense);

} // namespace crossup::objectives
