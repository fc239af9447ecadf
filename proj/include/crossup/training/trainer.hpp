#pragma once

#include "crossup/geometry/spatial_index.hpp"
#include "crossup/nn/network.hpp"
#include "crossup/objectives/losses.hpp"
#include "crossup/pipeline/upsample.hpp"
#include "crossup/training/dataset.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace crossup::training {

struct TrainConfig {
    std::size_t epochs = 200;
    double lr = 1e-3;
    std::size_t batch_size = 4;
    std::size_t inner_iterations = 10;  // D_train
    std::size_t grid_samples = 8;       // tangent samples per chart, center included
    std::uint64_t seed = 0;
    bool deterministic = false;

    /// Chart, frame and loss settings (ratio and iterations are unused here).
    pipeline::UpsampleConfig upsample;
    nn::NetworkConfig network;

    std::filesystem::path csv_path;        // loss curve, empty = none
    std::filesystem::path checkpoint_path; // best weights, empty = none
    std::filesystem::path dump_dir;        // diagnostics on non-finite loss

    /// Desk-scale preset: small widths and a shortened schedule.
    static TrainConfig desk();
    void validate() const;
    /// Every key accepted by apply_setting with its current value.
    std::map<std::string, std::string> to_map() const;
};

/// Sets one `key = value` entry; unknown keys and bad values throw.
void apply_setting(TrainConfig& config, const std::string& key, const std::string& value);
/// Reads `key = value` lines ('#' starts a comment) into the config.
void apply_config_file(TrainConfig& config, std::istream& in);
void apply_config_file(TrainConfig& config, const std::filesystem::path& path);

/// A patch moved into its normalized frame (input centroid at the origin,
/// input bounding-box diagonal 1), with a tree over its ground truth.
struct TrainingPatch {
    std::vector<geometry::Vec3> input;
    std::vector<geometry::Vec3> input_normals;
    std::vector<geometry::Vec3> gt;
    std::shared_ptr<const geometry::SpatialIndex> gt_index;
};

TrainingPatch prepare_patch(const PatchPair& pair);

struct StepOutput {
    objectives::LossResult loss;
    std::vector<geometry::Vec3> moved;  // detached X_next
    std::size_t tape_size = 0;
};

/// Forward pass and loss for one patch at its current inputs x_iter. The loss
/// is recorded on `tape`; the caller runs backward.
StepOutput training_step(nn::Tape& tape, const TrainingPatch& patch, std::span<const geometry::Vec3> x_iter,
                         const nn::NetworkWeights& weights, const TrainConfig& config, std::mt19937_64& rng);

struct CurveRow {
    std::size_t epoch = 0;
    std::size_t iter = 0;
    objectives::LossBreakdown parts;  // mean over the epoch's training patches
};

struct TrainResult {
    nn::NetworkWeights initial;
    nn::NetworkWeights final_weights;
    nn::NetworkWeights best;
    double best_score = 0.0;
    std::size_t best_epoch = 0;
    std::vector<CurveRow> curve;
    std::vector<double> validation;        // per epoch
    std::vector<std::size_t> tape_sizes;   // per training step, in order
};

/// Splits 10:1, trains with Adam over batches of patches and D_train inner
/// iterations (inputs detached between iterations), keeps the weights with
/// the best validation loss. Throws ErrorKind::NumericFailure on a
/// non-finite loss after dumping the batch to dump_dir.
TrainResult train(const std::vector<PatchPair>& dataset, const TrainConfig& config, std::ostream* log = nullptr);

/// Validation score: mean final-iteration total loss over the patches.
double validation_score(const std::vector<TrainingPatch>& patches, const nn::NetworkWeights& weights,
                        const TrainConfig& config);

void write_curve_csv(std::ostream& out, const std::vector<CurveRow>& curve);

/// Checkpoint of the given weights with the training config echoed, plus the
/// training input patch size (used as the default inference patch size).
nn::Checkpoint make_checkpoint(const nn::NetworkWeights& weights, const TrainConfig& config,
                               std::size_t input_points);

} // namespace crossup::training
