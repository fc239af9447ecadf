#pragma once

#include "crossup/geometry/mesh.hpp"
#include "crossup/geometry/point_cloud.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace crossup::geometry {

/// Farthest point sampling. The first element is `seed_index`; each next
/// element maximizes the distance to the selected set, ties to lowest index.
std::vector<std::size_t> fps(std::span<const Vec3> points, std::size_t k, std::size_t seed_index);
inline std::vector<std::size_t> fps(const PointCloud& cloud, std::size_t k, std::size_t seed_index)
{
    return fps(std::span<const Vec3>(cloud.points()), k, seed_index);
}

struct PcaNormal {
    Vec3 normal;
    double confidence;  // 1 - lambda_min / lambda_mid, 0 when degenerate
};

/// Smallest-eigenvalue eigenvector of the neighborhood covariance. The sign
/// is canonical: the largest-magnitude component is positive.
PcaNormal pca_normal(std::span<const Vec3> neighborhood);

/// Flips n so that its largest-magnitude component is positive (first axis
/// wins on ties).
Vec3 canonical_sign(const Vec3& n);

struct SurfaceSamples {
    std::vector<Vec3> points;
    std::vector<std::size_t> faces;
};

/// Uniform-by-area random surface samples, drawn with the given seed.
SurfaceSamples area_weighted_samples(const TriangleMesh& mesh, std::size_t count, std::uint64_t seed);

struct MeshSampleOptions {
    std::size_t target_count = 1000;
    /// Minimum pairwise distance; empty means auto-tune by bisection.
    std::optional<double> radius;
    std::uint64_t seed = 0;
    /// Candidate budget as a multiple of target_count.
    std::size_t candidate_factor = 10;
};

struct MeshSampleResult {
    PointCloud cloud;  // carries face normals
    std::vector<std::size_t> faces;
    double radius = 0.0;
};

/// Poisson-disk (blue noise) sampling by dart throwing over area-weighted
/// candidates. Returns exactly target_count points, each on a face and at
/// least `radius` from every other sample. Throws ErrorKind::Unreachable with
/// the achieved count when a fixed radius cannot reach the target.
MeshSampleResult sample_mesh(const TriangleMesh& mesh, const MeshSampleOptions& options);

} // namespace crossup::geometry
