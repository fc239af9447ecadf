#pragma once

#include "crossup/field/cross_field.hpp"
#include "crossup/nn/ops.hpp"
#include "crossup/nn/tensor.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace crossup::nn {

/// Layer widths. Defaults are the desk-scale sizes; the reference widths are
/// feature_width 128 (extractor output) and channels 64.
struct NetworkConfig {
    std::size_t knn = 8;            // extractor edge neighbors
    std::size_t edge_hidden = 32;
    std::size_t edge_out = 32;
    std::size_t point_hidden = 64;
    std::size_t feature_width = 16; // c_f
    std::size_t grid = 7;           // d
    std::size_t channels = 8;       // c
    std::size_t mapper_hidden = 64;
    /// When false the absolute-position half of each edge feature is zeroed.
    bool use_position = true;

    std::size_t cell_width() const { return grid * channels; }

    std::map<std::string, std::string> to_map() const;
    static NetworkConfig from_map(const std::map<std::string, std::string>& values);
    void validate() const;

    bool operator==(const NetworkConfig&) const = default;
};

/// Named parameter tensors in a fixed order.
class NetworkWeights {
public:
    NetworkWeights() = default;

    /// He-style uniform weights in +-sqrt(6 / fan_in), zero biases.
    static NetworkWeights initialize(const NetworkConfig& config, std::uint64_t seed);
    /// All parameters zero.
    static NetworkWeights zeros(const NetworkConfig& config);

    const NetworkConfig& config() const { return config_; }

    Tensor& operator[](const std::string& name);
    const Tensor& operator[](const std::string& name) const;
    bool contains(const std::string& name) const;

    std::vector<std::pair<std::string, Tensor>>& entries() { return params_; }
    const std::vector<std::pair<std::string, Tensor>>& entries() const { return params_; }

    void set_requires_grad(bool on);
    void zero_grad();
    /// Deep copy with independent storage.
    NetworkWeights clone() const;
    std::size_t parameter_count() const;
    /// Bitwise equality of every parameter value.
    bool identical(const NetworkWeights& other) const;

private:
    explicit NetworkWeights(NetworkConfig config);
    void add(const std::string& name, Shape shape);

    NetworkConfig config_;
    std::vector<std::pair<std::string, Tensor>> params_;
};

/// Raw per-point head outputs.
struct ExtractorOutput {
    Tensor normal;    // [n,3], unnormalized
    Tensor theta;     // [n,3], unnormalized
    Tensor features;  // [n, feature_width]
};

/// Neighbor lists for the edge convolution; every list has the same length.
using EdgeGraph = std::vector<std::vector<std::size_t>>;

/// One edge convolution over [x_i | x_j - x_i], max-pooled over neighbors,
/// then a shared layer and three linear heads.
ExtractorOutput forward_extractor(Tape& tape, std::span<const geometry::Vec3> points, const EdgeGraph& graph,
                                  const NetworkWeights& weights);

/// k-NN graph (self excluded) sized for the extractor: k = min(config.knn, n-1).
EdgeGraph extractor_graph(std::span<const geometry::Vec3> points, std::size_t k);

/// Normalized heads turned into valid frames. A vanishing normal head falls
/// back to +z; the tangent goes through enforce_frame.
std::vector<field::CrossFrame> frames_from_heads(const ExtractorOutput& out);

/// Voxel features [B, d, d, d, c_f] (cell-major, z innermost) to tangent cell
/// features [B*d*d, d*c]: two 3x3x3 conv + ReLU layers, z stacked into
/// channels, one 1x1 conv + ReLU.
///
/// `occupied` (B*d^3) marks voxels that may be nonzero. `needed_cells`
/// (B*d*d) restricts which cells are computed; rows of other cells are zero.
/// Both may be null. Results at needed cells are exact either way.
Tensor forward_chart(Tape& tape, const Tensor& voxels, const SiteMask* occupied, const SiteMask* needed_cells,
                     const NetworkWeights& weights);

/// Offsets for tangent positions p_t [n,2] and cell features f_t [n, d*c].
/// The MLP sees p_t / radius and its output is scaled by radius, then rows
/// longer than max_offset are clamped.
Tensor forward_mapper(Tape& tape, const Tensor& p_t, const Tensor& f_t, const NetworkWeights& weights, double radius,
                      double max_offset);

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One bias-corrected Adam update of w in place; t is the 1-based step count.
void adam_step(std::span<double> w, std::span<const double> g, std::span<double> m, std::span<double> v,
               const AdamOptions& options, std::size_t t);

class Adam {
public:
    explicit Adam(AdamOptions options = {}) : options_(options) {}

    /// Applies the gradients currently held by the weights.
    void step(NetworkWeights& weights);
    std::size_t steps() const { return t_; }
    const AdamOptions& options() const { return options_; }

private:
    AdamOptions options_;
    std::vector<std::vector<double>> m_, v_;
    std::size_t t_ = 0;
};

struct Checkpoint {
    NetworkWeights weights;
    /// Free-form settings echoed alongside the weights (training config etc.).
    std::map<std::string, std::string> echo;
};

void write_checkpoint(std::ostream& out, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::string& path);

} // namespace crossup::nn
