#pragma once

#include "crossup/geometry/point_cloud.hpp"
#include "crossup/geometry/spatial_index.hpp"

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

namespace crossup::field {

using geometry::Vec3;

/// A point-based 4-RoSy cross: unit normal n and one unit tangent
/// representative theta. theta and its quarter-turn rotations about n denote
/// the same cross.
struct CrossFrame {
    Vec3 n = Vec3::UnitZ();
    Vec3 theta = Vec3::UnitX();

    bool is_valid(double tol = 1e-9) const;
};

/// theta rotated about n by k quarter turns (k taken mod 4).
Vec3 rosy_rotate(const CrossFrame& frame, int k);

/// Normalizes n and projects theta onto the tangent plane. When theta is
/// (nearly) parallel to n a deterministic tangent is substituted.
CrossFrame enforce_frame(const Vec3& n, const Vec3& theta);

/// Deterministic unit tangent for n: n crossed with its smallest-magnitude axis.
Vec3 fallback_tangent(const Vec3& n);

/// Smoothness/alignment term between two crosses:
///   min(1 - |cos(theta_a, theta_b)|, 1 - |cos(rot(theta_a), theta_b)|)
/// where rot is a quarter turn about a's normal. The absolute values cover
/// the half and three-quarter turns.
double pairwise_smooth_loss(const CrossFrame& a, const CrossFrame& b);

struct FieldEnergyReport {
    double normal_loss = 0.0;
    double ortho_loss = 0.0;
    double smooth_loss = 0.0;
    std::vector<double> smooth_residuals;  // per point, summed over its K1 neighbors
};

using NeighborGraph = std::vector<std::vector<std::size_t>>;

/// The three self-supervised field energies. Each point's K1 neighbor set
/// excludes the point itself.
FieldEnergyReport field_energy(const geometry::PointCloud& cloud, std::span<const CrossFrame> frames,
                               const std::vector<Vec3>* gt_normals, std::size_t k1);

/// Same, over a precomputed neighbor graph.
FieldEnergyReport field_energy(std::span<const CrossFrame> frames, const NeighborGraph& graph,
                               const std::vector<Vec3>* gt_normals);

struct SolverOptions {
    std::size_t k1 = 6;
    std::size_t sweeps = 10;
    std::uint64_t seed = 0;
};

struct SolverResult {
    std::vector<CrossFrame> frames;
    /// Total smoothness energy: entry 0 is the initialization, entry s the
    /// state after sweep s.
    std::vector<double> energy_trace;
};

/// Gauss-Seidel cross-field smoothing. Each theta starts at a seeded-random
/// angle from a neighbor-derived reference direction; every sweep replaces
/// theta_i with the tangent projection of the average of its neighbors' best
/// aligned representatives, keeping the update only when the local energy
/// does not grow. Requires normals on the cloud.
SolverResult optimize_field(const geometry::PointCloud& cloud, const SolverOptions& options);

/// Frames with the given normals and deterministic fallback tangents.
std::vector<CrossFrame> frames_without_field(const std::vector<Vec3>& normals);

/// PLY with per-vertex nx ny nz tx ty tz.
void write_field_ply(std::ostream& out, std::span<const Vec3> points, std::span<const CrossFrame> frames);

/// Line-segment OBJ: four segments per point along the cross directions.
void write_field_obj(std::ostream& out, std::span<const Vec3> points, std::span<const CrossFrame> frames,
                     double segment_length);

} // namespace crossup::field
