#include "crossup/training/trainer.hpp"

#include "crossup/error.hpp"
#include "crossup/geometry/io.hpp"
#include "crossup/nn/ops.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

namespace crossup::training {

using geometry::Vec3;
using nn::Tensor;

TrainConfig TrainConfig::desk()
{
    TrainConfig c;
    c.epochs = 15;
    c.inner_iterations = 10;
    return c;
}

void TrainConfig::validate() const
{
    require(epochs >= 1 && batch_size >= 1 && inner_iterations >= 1 && grid_samples >= 1, ErrorKind::InvalidArgument,
            "epochs, batch size, inner iterations and grid samples must be >= 1");
    require(lr >= 0.0 && std::isfinite(lr), ErrorKind::InvalidArgument, "learning rate must be finite and >= 0");
    require(grid_samples <= network.grid * network.grid, ErrorKind::InvalidArgument,
            "grid samples per chart cannot exceed d*d");
    network.validate();
    pipeline::UpsampleConfig u = upsample;
    u.adopt_network(network);
}

namespace {

std::string real_string(double v)
{
    return geometry::io::format_real(v);
}

double parse_real(const std::string& key, const std::string& value)
{
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used == value.size() && std::isfinite(v)) return v;
    } catch (const std::logic_error&) {
    }
    fail(ErrorKind::Parse, "bad number for " + key + ": '" + value + "'");
}

std::size_t parse_count(const std::string& key, const std::string& value)
{
    const double v = parse_real(key, value);
    require(v >= 0.0 && v == std::floor(v), ErrorKind::Parse, key + " must be a non-negative integer");
    return static_cast<std::size_t>(v);
}

bool parse_bool(const std::string& key, const std::string& value)
{
    if (value == "1" || value == "true" || value == "on" || value == "yes") return true;
    if (value == "0" || value == "false" || value == "off" || value == "no") return false;
    fail(ErrorKind::Parse, "bad boolean for " + key + ": '" + value + "'");
}

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

} // namespace

std::map<std::string, std::string> TrainConfig::to_map() const
{
    const auto& u = upsample;
    return {
        {"epochs", std::to_string(epochs)},
        {"lr", real_string(lr)},
        {"batch_size", std::to_string(batch_size)},
        {"inner_iterations", std::to_string(inner_iterations)},
        {"grid_samples", std::to_string(grid_samples)},
        {"seed", std::to_string(seed)},
        {"deterministic", deterministic ? "1" : "0"},
        {"k1", std::to_string(u.k1)},
        {"k2", std::to_string(u.k2)},
        {"beta", real_string(u.beta)},
        {"lambda0", real_string(u.lambda0)},
        {"lambda1", real_string(u.lambda1)},
        {"lambda_u", real_string(u.lambda_u)},
        {"normals", pipeline::to_string(u.normals)},
        {"field", pipeline::to_string(u.field)},
        {"pca_k", std::to_string(u.pca_k)},
        {"field_sweeps", std::to_string(u.field_sweeps)},
        {"radius_min_count", std::to_string(u.radius_min_count)},
        {"offset_clamp", real_string(u.offset_clamp)},
        {"d", std::to_string(network.grid)},
        {"c", std::to_string(network.channels)},
        {"c_f", std::to_string(network.feature_width)},
        {"knn", std::to_string(network.knn)},
        {"edge_hidden", std::to_string(network.edge_hidden)},
        {"edge_out", std::to_string(network.edge_out)},
        {"point_hidden", std::to_string(network.point_hidden)},
        {"mapper_hidden", std::to_string(network.mapper_hidden)},
        {"use_position", network.use_position ? "1" : "0"},
    };
}

void apply_setting(TrainConfig& c, const std::string& key, const std::string& value)
{
    auto& u = c.upsample;
    auto& n = c.network;
    if (key == "epochs") c.epochs = parse_count(key, value);
    else if (key == "lr") c.lr = parse_real(key, value);
    else if (key == "batch_size") c.batch_size = parse_count(key, value);
    else if (key == "inner_iterations") c.inner_iterations = parse_count(key, value);
    else if (key == "grid_samples") c.grid_samples = parse_count(key, value);
    else if (key == "seed") c.seed = parse_count(key, value);
    else if (key == "deterministic") c.deterministic = parse_bool(key, value);
    else if (key == "k1") u.k1 = parse_count(key, value);
    else if (key == "k2") u.k2 = parse_count(key, value);
    else if (key == "beta") u.beta = parse_real(key, value);
    else if (key == "lambda0") u.lambda0 = parse_real(key, value);
    else if (key == "lambda1") u.lambda1 = parse_real(key, value);
    else if (key == "lambda_u") u.lambda_u = parse_real(key, value);
    else if (key == "normals") u.normals = pipeline::parse_normal_backend(value);
    else if (key == "field") u.field = pipeline::parse_field_backend(value);
    else if (key == "pca_k") u.pca_k = parse_count(key, value);
    else if (key == "field_sweeps") u.field_sweeps = parse_count(key, value);
    else if (key == "radius_min_count") u.radius_min_count = parse_count(key, value);
    else if (key == "offset_clamp") u.offset_clamp = parse_real(key, value);
    else if (key == "d") n.grid = parse_count(key, value);
    else if (key == "c") n.channels = parse_count(key, value);
    else if (key == "c_f") n.feature_width = parse_count(key, value);
    else if (key == "knn") n.knn = parse_count(key, value);
    else if (key == "edge_hidden") n.edge_hidden = parse_count(key, value);
    else if (key == "edge_out") n.edge_out = parse_count(key, value);
    else if (key == "point_hidden") n.point_hidden = parse_count(key, value);
    else if (key == "mapper_hidden") n.mapper_hidden = parse_count(key, value);
    else if (key == "use_position") n.use_position = parse_bool(key, value);
    else fail(ErrorKind::Parse, "unknown configuration key '" + key + "'");
}

void apply_config_file(TrainConfig& config, std::istream& in)
{
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        require(eq != std::string::npos, ErrorKind::Parse,
                "line " + std::to_string(number) + ": expected 'key = value', got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        try {
            apply_setting(config, key, value);
        } catch (const Error& e) {
            throw Error(e.kind(), "line " + std::to_string(number) + ": " + e.what());
        }
    }
}

void apply_config_file(TrainConfig& config, const std::filesystem::path& path)
{
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::Io, "cannot open config " + path.string());
    apply_config_file(config, in);
}

TrainingPatch prepare_patch(const PatchPair& pair)
{
    require(pair.input.size() > 0 && pair.gt.size() > 0 && pair.input.has_normals(), ErrorKind::InvalidArgument,
            "training patches need points and input normals");
    const auto norm = pipeline::Normalization::of(pair.input.points());
    TrainingPatch p;
    for (const Vec3& x : pair.input.points()) p.input.push_back(norm.apply(x));
    p.input_normals = pair.input.normals();
    for (const Vec3& y : pair.gt.points()) p.gt.push_back(norm.apply(y));
    p.gt_index = std::make_shared<const geometry::SpatialIndex>(p.gt);
    return p;
}

StepOutput training_step(nn::Tape& tape, const TrainingPatch& patch, std::span<const Vec3> x_iter,
                         const nn::NetworkWeights& weights, const TrainConfig& config, std::mt19937_64& rng)
{
    pipeline::UpsampleConfig ucfg = config.upsample;
    ucfg.adopt_network(weights.config());
    const double radius = ucfg.beta;
    const auto fwd = pipeline::forward_patch(tape, x_iter, weights, ucfg, radius, config.grid_samples, rng);

    std::vector<std::size_t> centers;
    for (std::size_t r : fwd.center_row) {
        if (r != pipeline::kNoRow) centers.push_back(r);
    }
    require(!centers.empty(), ErrorKind::NumericFailure, "no valid chart in a training patch");

    const geometry::SpatialIndex index(x_iter);
    const auto graph = geometry::knn_graph(index, ucfg.k1);
    objectives::PredictionBundle bundle;
    bundle.normals = nn::normalize_rows(tape, fwd.heads.normal);
    bundle.thetas = nn::normalize_rows(tape, fwd.heads.theta);
    bundle.upsampled = fwd.world;
    bundle.graph = &graph;
    const Tensor x_next = nn::gather_rows(tape, fwd.world, centers);

    StepOutput out;
    out.loss = objectives::total_loss(tape, bundle, x_next, patch.gt, &patch.input_normals,
                                      {ucfg.lambda0, ucfg.lambda1, ucfg.lambda_u}, patch.gt_index.get());
    out.moved.assign(x_iter.begin(), x_iter.end());
    for (std::size_t i = 0; i < x_iter.size(); ++i) {
        const std::size_t r = fwd.center_row[i];
        if (r != pipeline::kNoRow) out.moved[i] = Vec3(fwd.world[3 * r], fwd.world[3 * r + 1], fwd.world[3 * r + 2]);
    }
    out.tape_size = tape.size();
    return out;
}

double validation_score(const std::vector<TrainingPatch>& patches, const nn::NetworkWeights& weights,
                        const TrainConfig& config)
{
    require(!patches.empty(), ErrorKind::InvalidArgument, "validation needs at least one patch");
    nn::NetworkWeights frozen = weights.clone();
    frozen.set_requires_grad(false);
    std::mt19937_64 rng(config.seed ^ 0x5eed5eedULL);
    double total = 0.0;
    for (const auto& patch : patches) {
        std::vector<Vec3> x = patch.input;
        double last = 0.0;
        for (std::size_t it = 0; it < config.inner_iterations; ++it) {
            nn::Tape tape;
            StepOutput step = training_step(tape, patch, x, frozen, config, rng);
            last = step.loss.parts.total;
            x = std::move(step.moved);
        }
        total += last;
    }
    return total / static_cast<double>(patches.size());
}

void write_curve_csv(std::ostream& out, const std::vector<CurveRow>& curve)
{
    using geometry::io::format_real;
    out << "epoch,iter,normal,field_normal,field_smooth,cd,uniform,total\n";
    for (const auto& r : curve) {
        out << r.epoch << ',' << r.iter << ',' << format_real(r.parts.normal) << ',' << format_real(r.parts.field_normal)
            << ',' << format_real(r.parts.field_smooth) << ',' << format_real(r.parts.cd) << ','
            << format_real(r.parts.uniform) << ',' << format_real(r.parts.total) << '\n';
    }
}

nn::Checkpoint make_checkpoint(const nn::NetworkWeights& weights, const TrainConfig& config, std::size_t input_points)
{
    nn::Checkpoint ck;
    ck.weights = weights.clone();
    ck.weights.set_requires_grad(false);
    for (const auto& [k, v] : config.to_map()) ck.echo["train." + k] = v;
    ck.echo["input_points"] = std::to_string(input_points);
    return ck;
}

namespace {

[[noreturn]] void dump_and_abort(const TrainConfig& config, const std::vector<const PatchPair*>& batch,
                                 std::size_t epoch, std::size_t iter, const objectives::LossBreakdown& parts)
{
    std::ostringstream msg;
    msg << "non-finite loss at epoch " << epoch << " iteration " << iter << " (normal=" << parts.normal
        << " field_normal=" << parts.field_normal << " field_smooth=" << parts.field_smooth << " cd=" << parts.cd
        << " uniform=" << parts.uniform << ")";
    if (!config.dump_dir.empty()) {
        std::filesystem::create_directories(config.dump_dir);
        for (std::size_t k = 0; k < batch.size(); ++k) {
            const auto stem = config.dump_dir / ("batch_" + std::to_string(k));
            geometry::io::write_cloud(stem.string() + "_input.xyz", batch[k]->input);
            geometry::io::write_cloud(stem.string() + "_gt.xyz", batch[k]->gt);
        }
        std::ofstream report(config.dump_dir / "report.txt");
        report << msg.str() << '\n';
        for (const auto& [k, v] : config.to_map()) report << k << " = " << v << '\n';
        msg << "; batch written to " << config.dump_dir.string();
    }
    fail(ErrorKind::NumericFailure, msg.str());
}

} // namespace

TrainResult train(const std::vector<PatchPair>& dataset, const TrainConfig& config, std::ostream* log)
{
    config.validate();
    require(!dataset.empty(), ErrorKind::InvalidArgument, "training dataset is empty");
    auto [train_set, val_set] = split(dataset, config.seed);
    if (val_set.empty()) val_set = train_set;

    std::vector<TrainingPatch> train_patches, val_patches;
    for (const auto& p : train_set) train_patches.push_back(prepare_patch(p));
    for (const auto& p : val_set) val_patches.push_back(prepare_patch(p));
    const std::size_t input_points = dataset.front().input.size();

    TrainResult result;
    nn::NetworkWeights weights = nn::NetworkWeights::initialize(config.network, config.seed);
    result.initial = weights.clone();
    weights.set_requires_grad(true);
    nn::Adam adam({config.lr});
    std::mt19937_64 rng(config.seed);

    result.best = result.initial.clone();
    result.best_score = validation_score(val_patches, weights, config);
    if (log) *log << "initial validation loss " << result.best_score << '\n';

    std::ofstream csv;
    if (!config.csv_path.empty()) {
        csv.open(config.csv_path);
        require(static_cast<bool>(csv), ErrorKind::Io, "cannot open " + config.csv_path.string());
        write_curve_csv(csv, {});
    }
    auto save_best = [&] {
        if (!config.checkpoint_path.empty()) {
            nn::save_checkpoint(config.checkpoint_path.string(), make_checkpoint(result.best, config, input_points));
        }
    };
    save_best();

    const std::size_t D = config.inner_iterations;
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto started = std::chrono::steady_clock::now();
        std::vector<std::size_t> order(train_patches.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);

        std::vector<objectives::LossBreakdown> sums(D);
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t stop = std::min(order.size(), start + config.batch_size);
            const double share = 1.0 / static_cast<double>(stop - start);
            std::vector<std::vector<Vec3>> x;
            for (std::size_t k = start; k < stop; ++k) x.push_back(train_patches[order[k]].input);

            for (std::size_t it = 0; it < D; ++it) {
                weights.zero_grad();
                for (std::size_t k = start; k < stop; ++k) {
                    const TrainingPatch& patch = train_patches[order[k]];
                    nn::Tape tape;
                    StepOutput step = training_step(tape, patch, x[k - start], weights, config, rng);
                    const auto& parts = step.loss.parts;
                    if (!std::isfinite(parts.total)) {
                        std::vector<const PatchPair*> batch;
                        for (std::size_t b = start; b < stop; ++b) batch.push_back(&train_set[order[b]]);
                        dump_and_abort(config, batch, epoch, it, parts);
                    }
                    Tensor scaled = nn::affine(tape, step.loss.total, share);
                    tape.backward(scaled);
                    result.tape_sizes.push_back(step.tape_size);
                    auto& s = sums[it];
                    s.normal += parts.normal;
                    s.field_normal += parts.field_normal;
                    s.field_smooth += parts.field_smooth;
                    s.cd += parts.cd;
                    s.uniform += parts.uniform;
                    s.total += parts.total;
                    s.weights = parts.weights;
                    // Next iteration starts from the detached moved inputs.
                    x[k - start] = std::move(step.moved);
                }
                adam.step(weights);
            }
        }

        const double count = static_cast<double>(train_patches.size());
        for (std::size_t it = 0; it < D; ++it) {
            auto p = sums[it];
            p.normal /= count;
            p.field_normal /= count;
            p.field_smooth /= count;
            p.cd /= count;
            p.uniform /= count;
            p.total /= count;
            result.curve.push_back({epoch, it, p});
        }
        if (csv.is_open()) {
            std::ostringstream rows;
            write_curve_csv(rows, std::vector<CurveRow>(result.curve.end() - static_cast<std::ptrdiff_t>(D), result.curve.end()));
            const std::string text = rows.str();
            csv << text.substr(text.find('\n') + 1) << std::flush;
        }

        const double score = validation_score(val_patches, weights, config);
        result.validation.push_back(score);
        if (score < result.best_score) {
            result.best_score = score;
            result.best_epoch = epoch;
            result.best = weights.clone();
            result.best.set_requires_grad(false);
            save_best();
        }
        if (log) {
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
            *log << "epoch " << epoch << '/' << config.epochs << " train=" << result.curve.back().parts.total
                 << " cd=" << result.curve.back().parts.cd << " val=" << score << " best=" << result.best_score
                 << " (" << secs << " s)\n";
        }
    }
    result.final_weights = weights.clone();
    result.final_weights.set_requires_grad(false);
    return result;
}

} // namespace crossup::training
