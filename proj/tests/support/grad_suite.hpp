#pragma once

#include "gradcheck.hpp"

#include "crossup/nn/network.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace crossup::testing {

/// One differentiable operation (or composition) with a seeded instance
/// generator. Instances keep every input clear of kinks (abs, relu, min, max,
/// nearest-neighbor switches) by more than the finite-difference step.
struct GradCase {
    std::string name;
    std::function<GradCheckResult(std::uint64_t seed)> run;
};

std::vector<GradCase> gradient_cases();

/// Narrow network (grid 5, two channels) that keeps checks fast.
nn::NetworkConfig small_network();
/// Initialized weights with random biases in +-0.2, requiring grad. Zero
/// biases would put empty-voxel pre-activations exactly on the ReLU kink.
nn::NetworkWeights random_network(const nn::NetworkConfig& cfg, std::uint64_t seed);

/// Whole-patch forward (extractor, charts, mapper) with fixed frames, checked
/// against the network weights at step h. Not kink-filtered.
GradCheckResult patch_gradcheck(std::uint64_t seed, double h);

} // namespace crossup::testing
