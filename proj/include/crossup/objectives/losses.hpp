#pragma once

#include "crossup/field/cross_field.hpp"
#include "crossup/geometry/point_cloud.hpp"
#include "crossup/geometry/spatial_index.hpp"
#include "crossup/nn/tensor.hpp"

#include <span>
#include <vector>

namespace crossup::objectives {

using geometry::Vec3;
using nn::Tape;
using nn::Tensor;

/// Summed bidirectional squared nearest-neighbor distance between the rows
/// of pred [n,3] and gt. Nearest neighbors are fixed in the forward pass.
/// `gt_index` may be passed to reuse a tree over gt.
Tensor chamfer_loss(Tape& tape, const Tensor& pred, std::span<const Vec3> gt,
                    const geometry::SpatialIndex* gt_index = nullptr);

/// sum_i (1 - |<n_i, gt_i>|) for unit rows n [m,3].
Tensor normal_loss(Tape& tape, const Tensor& normals, std::span<const Vec3> gt_normals);
/// sum_i |<n_i, theta_i>|
Tensor field_normal_loss(Tape& tape, const Tensor& normals, const Tensor& thetas);
/// sum over graph edges (i, j) of min(1 - |<t_i, t_j>|, 1 - |<n_i x t_i, t_j>|).
Tensor field_smooth_loss(Tape& tape, const Tensor& normals, const Tensor& thetas, const field::NeighborGraph& graph);

struct LossWeights {
    double lambda0 = 0.1;   // field-normal term
    double lambda1 = 200.0; // Chamfer term
    double lambda_u = 0.4;  // uniform term
};

/// Loss components as plain numbers. `uniform` is the unweighted Chamfer sum
/// of the moved inputs; total applies every weight.
struct LossBreakdown {
    double normal = 0.0;
    double field_normal = 0.0;
    double field_smooth = 0.0;
    double cd = 0.0;
    double uniform = 0.0;
    double total = 0.0;
    LossWeights weights;

    double weighted_sum() const
    {
        return normal + weights.lambda0 * field_normal + field_smooth + weights.lambda1 * cd +
               weights.lambda_u * uniform;
    }
};

/// Network outputs entering the one-pass loss. Normals and thetas are
/// normalized head outputs [m,3]; upsampled holds the mapped points [M,3].
struct PredictionBundle {
    Tensor normals;
    Tensor thetas;
    Tensor upsampled;
    const field::NeighborGraph* graph = nullptr;  // K1 graph over the inputs
};

struct LossResult {
    Tensor total;  // scalar, differentiable
    LossBreakdown parts;
};

/// normal + lambda0 * field_normal + field_smooth + lambda1 * CD(gt, upsampled).
/// gt_normals holds one normal per input row; when null the normal term is 0.
LossResult one_pass_loss(Tape& tape, const PredictionBundle& bundle, std::span<const Vec3> gt,
                         const std::vector<Vec3>* gt_normals, const LossWeights& weights,
                         const geometry::SpatialIndex* gt_index = nullptr);

/// lambda_u * CD(gt, x_iter).
Tensor uniform_loss(Tape& tape, std::span<const Vec3> gt, const Tensor& x_iter, double lambda_u,
                    const geometry::SpatialIndex* gt_index = nullptr);

/// One-pass loss plus the uniform term on the moved inputs.
LossResult total_loss(Tape& tape, const PredictionBundle& bundle, const Tensor& x_next, std::span<const Vec3> gt,
                      const std::vector<Vec3>* gt_normals, const LossWeights& weights,
                      const geometry::SpatialIndex* gt_index = nullptr);

/// Rows of a [n,3] tensor as points.
std::vector<Vec3> rows_as_points(const Tensor& t);
/// Points as a constant [n,3] tensor.
Tensor points_as_tensor(std::span<const Vec3> points, bool requires_grad = false);

} // namespace crossup::objectives
