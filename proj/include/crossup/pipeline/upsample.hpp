#pragma once

#include "crossup/chart/chart.hpp"
#include "crossup/field/cross_field.hpp"
#include "crossup/geometry/point_cloud.hpp"
#include "crossup/nn/network.hpp"

#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace crossup::pipeline {

using geometry::PointCloud;
using geometry::Vec2;
using geometry::Vec3;
using nn::Tensor;

enum class NormalBackend { Pca, Learned };
enum class FieldBackend { Solver, Learned, None };

NormalBackend parse_normal_backend(const std::string& s);
FieldBackend parse_field_backend(const std::string& s);
std::string to_string(NormalBackend b);
std::string to_string(FieldBackend b);

/// Inference settings. Grid, channel and feature widths must agree with the
/// network they are used with (see adopt_network).
struct UpsampleConfig {
    double ratio = 4.0;
    std::size_t k1 = 6;
    std::size_t k2 = 48;
    double beta = 1.0 / 3.0;   // chart radius as a fraction of the patch diagonal
    bool radius_from_input = false;  // full-shape runs: beta times the whole input's diagonal
    std::size_t d = 7;
    std::size_t c = 8;         // reference value 64
    std::size_t c_f = 16;
    double lambda0 = 0.1;
    double lambda1 = 200.0;
    double lambda_u = 0.4;
    std::size_t iterations = 10;  // D
    NormalBackend normals = NormalBackend::Pca;
    FieldBackend field = FieldBackend::Solver;
    std::uint64_t seed = 0;

    std::size_t pca_k = 10;        // neighborhood size for PCA normals
    std::size_t field_sweeps = 10; // solver sweeps per frame estimate
    std::size_t radius_min_count = 4;
    double offset_clamp = 2.0;     // offsets limited to offset_clamp * radius
    std::size_t patch_size = 0;    // full-shape patches; 0 = training input size
    bool deterministic = false;

    void validate() const;
    /// Copies d, c and c_f from the network and checks they are usable.
    void adopt_network(const nn::NetworkConfig& net);
};

/// Frames for every point plus a validity flag; invalid points keep a
/// placeholder frame and are passed through unchanged downstream.
struct FrameEstimate {
    std::vector<field::CrossFrame> frames;
    std::vector<unsigned char> valid;
    std::size_t failures = 0;
};

/// Normals from PCA (oriented away from the cloud centroid) or the learned
/// head; tangents from the solver, the learned head, or a fixed fallback.
/// `heads` is required when either backend is Learned.
FrameEstimate estimate_frames(std::span<const Vec3> points, const nn::ExtractorOutput* heads,
                              const UpsampleConfig& cfg);

/// Tangent positions for one chart, center first. Up to d*d: a random subset
/// of grid points always containing the center. Beyond: every grid point plus
/// uniform positions strictly inside the grid hull.
std::vector<Vec2> sample_tangent_positions(const chart::GridSpec& spec, std::size_t count, std::mt19937_64& rng);

inline constexpr std::size_t kNoRow = std::numeric_limits<std::size_t>::max();

/// Differentiable pass over one patch.
struct PatchForward {
    nn::ExtractorOutput heads;
    FrameEstimate frames;
    Tensor world;                          // [S,3] mapped samples, world coords
    std::vector<std::size_t> point_of_row; // source point of each row
    std::vector<std::size_t> center_row;   // per point; kNoRow for failed charts
};

/// Runs extractor, charts, inpaintor, compressor and mapper for every point.
/// `radius` is the chart radius; `frames_override` skips frame estimation.
PatchForward forward_patch(nn::Tape& tape, std::span<const Vec3> points, const nn::NetworkWeights& weights,
                           const UpsampleConfig& cfg, double radius, std::size_t samples_per_chart,
                           std::mt19937_64& rng, const FrameEstimate* frames_override = nullptr);

struct PatchResult {
    std::vector<Vec3> dense;   // all mapped samples plus failed points
    std::vector<Vec3> moved;   // X_next, one per input
    std::size_t failures = 0;
};

/// One upsampling pass. Samples per chart is ceil(ratio) + 2.
PatchResult upsample_patch_once(std::span<const Vec3> points, const nn::NetworkWeights& weights,
                                const UpsampleConfig& cfg, double radius, std::mt19937_64& rng);

struct IterationRecord {
    std::vector<Vec3> input;   // X_iter
    std::vector<Vec3> dense;   // candidate cloud of this iteration
    double mean_shift = 0.0;   // mean |X_next - X_iter|
    std::size_t failures = 0;
};

struct IterationTrace {
    std::vector<IterationRecord> iterations;
};

struct IterativeResult {
    PointCloud output;
    IterationTrace trace;  // in input coordinates
};

/// D passes feeding X_next forward, then FPS of the last candidate cloud to
/// floor(ratio * m) points. The patch is normalized internally (centroid,
/// bounding-box diagonal 1) so the chart radius is beta.
IterativeResult upsample_iterative(std::span<const Vec3> points, const nn::NetworkWeights& weights,
                                   const UpsampleConfig& cfg, bool keep_trace = true);

/// Overlapping k-NN patches around FPS seeds (extra seeds are added until every
/// point is covered), each upsampled on its own, merged, de-duplicated and
/// reduced by FPS to floor(ratio * n). `seeds` = 0 picks about 3n/patch_size.
PointCloud upsample_full_shape(std::span<const Vec3> points, const nn::NetworkWeights& weights,
                               const UpsampleConfig& cfg, std::size_t patch_size, std::size_t seeds = 0);

/// floor(ratio * m), guarding against ratio*m landing a hair below an integer.
std::size_t target_count(double ratio, std::size_t m);

/// Centroid and scale mapping a cloud to unit bounding-box diagonal.
struct Normalization {
    Vec3 center = Vec3::Zero();
    double scale = 1.0;  // multiply after subtracting center

    static Normalization of(std::span<const Vec3> points);
    Vec3 apply(const Vec3& p) const { return (p - center) * scale; }
    Vec3 invert(const Vec3& q) const { return q / scale + center; }
};

} // namespace crossup::pipeline
