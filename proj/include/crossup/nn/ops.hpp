#pragma once

#include "crossup/nn/tensor.hpp"

#include <Eigen/Core>

#include <cstddef>
#include <span>
#include <vector>

namespace crossup::nn {

// Differentiable operations. Each takes the tape to record onto; nothing is
// recorded when no input requires grad. Shapes are checked and mismatches
// throw ErrorKind::ShapeMismatch.

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
/// alpha * a + beta
Tensor affine(Tape& tape, const Tensor& a, double alpha, double beta = 0.0);
Tensor abs(Tape& tape, const Tensor& a);
Tensor relu(Tape& tape, const Tensor& a);
/// Elementwise min; ties route the gradient to `a`.
Tensor minimum(Tape& tape, const Tensor& a, const Tensor& b);
/// Sum of all elements, shape [1].
Tensor sum(Tape& tape, const Tensor& a);
Tensor reshape(Tape& tape, const Tensor& a, Shape shape);

/// [n,k] x [k,m]
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
/// x [n,in], weight [out,in], bias [out] (may be undefined) -> [n,out]
Tensor linear(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor gather_rows(Tape& tape, const Tensor& a, std::span<const std::size_t> rows);
Tensor concat_cols(Tape& tape, const Tensor& a, const Tensor& b);
/// [n*k, c] -> [n, c], max over each run of k rows (first maximum wins).
Tensor group_max(Tape& tape, const Tensor& a, std::size_t k);

/// Sparse row blend: out[r] = sum_j weight_j * a[col_j] over r's entries.
struct SparseRows {
    std::size_t rows = 0;
    std::vector<std::size_t> offsets{0};  // rows + 1
    std::vector<std::size_t> cols;
    std::vector<double> weights;

    void add(std::size_t col, double weight)
    {
        cols.push_back(col);
        weights.push_back(weight);
    }
    void end_row()
    {
        offsets.push_back(cols.size());
        ++rows;
    }
};
Tensor sparse_blend(Tape& tape, const Tensor& a, const SparseRows& map);

// Row-wise vector ops on [n,c] tensors.
Tensor row_dot(Tape& tape, const Tensor& a, const Tensor& b);       // -> [n]
Tensor cross_rows(Tape& tape, const Tensor& a, const Tensor& b);    // [n,3]
/// a / sqrt(|a|^2 + eps^2); zero rows stay zero.
Tensor normalize_rows(Tape& tape, const Tensor& a, double eps = 1e-12);
/// Rows longer than max_norm are rescaled onto the ball.
Tensor clamp_norm_rows(Tape& tape, const Tensor& a, double max_norm);
/// out[i] = rotations[frame[i]] * a[i] + translations[frame[i]] for [n,3] a.
Tensor rigid_rows(Tape& tape, const Tensor& a, std::span<const Eigen::Matrix3d> rotations,
                  std::span<const Eigen::Vector3d> translations, std::span<const std::size_t> frame);

/// Per-site activity flags for masked convolutions (1 = active).
using SiteMask = std::vector<unsigned char>;

/// 3x3x3 cross-correlation, stride 1, zero padding 1, channel-last input
/// [B, D0, D1, D2, Cin], weight [Cout, Cin, 3, 3, 3], bias [Cout].
///
/// `in_active` marks input sites that may be nonzero; all others are treated
/// as constant zeros (and receive no gradient). `out_active` restricts which
/// output sites are computed; inactive outputs are zero. Either may be null.
Tensor conv3d(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias,
              const SiteMask* in_active = nullptr, const SiteMask* out_active = nullptr);

/// kxk cross-correlation (k odd), stride 1, zero padding k/2, channel-last
/// input [B, H, W, Cin], weight [Cout, Cin, k, k]. `out_active` as for conv3d.
Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias,
              const SiteMask* out_active = nullptr);

} // namespace crossup::nn
