#pragma once

#include "crossup/nn/tensor.hpp"

#include <cstddef>
#include <functional>
#include <random>
#include <vector>

namespace crossup::testing {

/// Builds a scalar from the given leaves on a fresh tape.
using ScalarFn = std::function<nn::Tensor(nn::Tape&, const std::vector<nn::Tensor>&)>;

struct GradCheckResult {
    double max_rel_error = 0.0;  // over all checked tensors
    std::size_t checked = 0;     // coordinates compared
    /// Some coordinate's mismatch is explained by a kink inside [x-h, x+h]:
    /// its second difference is at least half the mismatch, while a smooth
    /// function would leave it at O(h^2). Such an instance is not a valid
    /// test point.
    bool nonsmooth = false;
    std::size_t redraws = 0;  // instances rejected as nonsmooth before this one
};

/// Central differences with step h against the tape gradient. The error of a
/// leaf is max_i |a_i - n_i| / max_i max(|a_i|, |n_i|), i.e. relative to the
/// largest gradient entry of that leaf. `max_coords` > 0 checks a random
/// subset of each leaf's coordinates.
GradCheckResult gradcheck(const ScalarFn& f, std::vector<nn::Tensor> leaves, double h = 1e-4,
                          std::size_t max_coords = 0, std::uint64_t seed = 0);

/// sum(w .* out) with fixed random w, so every output entry matters.
nn::Tensor random_projection(nn::Tape& tape, const nn::Tensor& out, std::uint64_t seed);

/// Tensor with uniform entries in [-scale, scale] that requires grad.
nn::Tensor random_leaf(nn::Shape shape, std::mt19937_64& rng, double scale = 1.0);

} // namespace crossup::testing
