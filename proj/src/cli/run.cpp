#include "crossup/cli/run.hpp"

#include "crossup/error.hpp"
#include "crossup/field/cross_field.hpp"
#include "crossup/geometry/io.hpp"
#include "crossup/geometry/sampling.hpp"
#include "crossup/geometry/shapes.hpp"
#include "crossup/nn/network.hpp"
#include "crossup/objectives/metrics.hpp"
#include "crossup/pipeline/upsample.hpp"
#include "crossup/training/dataset.hpp"
#include "crossup/training/trainer.hpp"

#include <CLI11.hpp>
#include <omp.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace crossup::cli {

namespace fs = std::filesystem;
namespace io = geometry::io;

namespace {

int exit_code_for(ErrorKind kind)
{
    switch (kind) {
    case ErrorKind::NumericFailure:
    case ErrorKind::DegenerateFrame:
        return kNumericFailure;
    default:
        return kDataError;
    }
}

std::string resolve_checkpoint(const std::string& given, bool for_writing)
{
    if (!given.empty()) return given;
    if (const char* dir = std::getenv(kCheckpointDirEnv); dir && *dir) {
        if (for_writing) fs::create_directories(dir);
        return (fs::path(dir) / "model.ckpt").string();
    }
    fail(ErrorKind::InvalidArgument,
         std::string("no checkpoint given; pass --checkpoint or set ") + kCheckpointDirEnv);
}

struct SampleMeshArgs {
    std::string mesh, shape, output;
    std::size_t count = 1000;
    std::optional<double> radius;
    std::uint64_t seed = 0;
};

struct DatasetArgs {
    std::vector<std::string> shapes;
    std::vector<std::string> meshes;
    std::string output;
    training::DatasetOptions options;
};

struct TrainArgs {
    std::string dataset, config, checkpoint, curves, dump_dir, preset = "desk";
    std::optional<std::size_t> epochs, batch_size, inner_iterations;
    std::optional<double> lr;
    std::optional<std::uint64_t> seed;
};

struct UpsampleArgs {
    std::string input, output, checkpoint, normals = "pca", field = "solver", trace;
    double ratio = 4.0;
    std::size_t iters = 10;
    std::size_t patch_size = 0;
    std::uint64_t seed = 0;
    bool radius_from_input = false;
};

struct EvaluateArgs {
    std::string pred, gt_points, gt_mesh, name = "shape";
    std::size_t dense = 50000;
    std::uint64_t seed = 0;
};

struct ExportFieldArgs {
    std::string input, output, obj, checkpoint, normals = "pca", field = "solver";
    std::size_t k1 = 6, sweeps = 10, pca_k = 10;
    std::uint64_t seed = 0;
};

int cmd_sample_mesh(const SampleMeshArgs& a, std::ostream& out, std::ostream& err)
{
    require(a.mesh.empty() != a.shape.empty(), ErrorKind::InvalidArgument, "give exactly one of --mesh or --shape");
    geometry::TriangleMesh mesh = a.mesh.empty() ? geometry::shapes::by_name(a.shape) : io::read_mesh(a.mesh);
    const std::size_t removed = mesh.remove_degenerate_faces();
    if (removed) err << "removed " << removed << " degenerate faces\n";
    const auto res = geometry::sample_mesh(mesh, {a.count, a.radius, a.seed, 10});
    io::write_cloud(a.output, res.cloud);
    out << "points " << res.cloud.size() << " radius " << io::format_real(res.radius) << '\n';
    return kOk;
}

int cmd_make_dataset(const DatasetArgs& a, std::ostream& out, std::ostream& err)
{
    std::vector<training::NamedMesh> meshes;
    std::vector<std::string> shapes = a.shapes;
    if (shapes.empty() && a.meshes.empty()) shapes = geometry::shapes::desk_training_names();
    for (const auto& s : shapes) meshes.push_back({s, geometry::shapes::by_name(s)});
    for (const auto& m : a.meshes) {
        auto mesh = io::read_mesh(m);
        mesh.remove_degenerate_faces();
        meshes.push_back({fs::path(m).stem().string(), std::move(mesh)});
    }
    const auto data = training::make_dataset(meshes, a.options, &err);
    require(!data.empty(), ErrorKind::InvalidArgument, "no patches could be produced");
    training::save_dataset(a.output, data);
    out << "patches " << data.size() << '\n';
    return kOk;
}

int cmd_train(const TrainArgs& a, bool deterministic, std::ostream& out, std::ostream& err)
{
    training::TrainConfig cfg;
    if (a.preset == "desk") {
        cfg = training::TrainConfig::desk();
    } else {
        require(a.preset == "paper", ErrorKind::InvalidArgument, "unknown preset '" + a.preset + "'");
        // Paper widths: 128-dim point features, 64 inpaintor channels.
        cfg.network.feature_width = 128;
        cfg.network.channels = 64;
    }
    if (!a.config.empty()) training::apply_config_file(cfg, fs::path(a.config));
    if (a.epochs) cfg.epochs = *a.epochs;
    if (a.lr) cfg.lr = *a.lr;
    if (a.batch_size) cfg.batch_size = *a.batch_size;
    if (a.inner_iterations) cfg.inner_iterations = *a.inner_iterations;
    if (a.seed) cfg.seed = *a.seed;
    if (deterministic) cfg.deterministic = true;
    cfg.checkpoint_path = resolve_checkpoint(a.checkpoint, true);
    cfg.csv_path = a.curves;
    cfg.dump_dir = a.dump_dir;

    const auto data = training::load_dataset(a.dataset);
    const auto result = training::train(data, cfg, &err);
    out << "best_epoch " << result.best_epoch << " best_val " << io::format_real(result.best_score) << " checkpoint "
        << cfg.checkpoint_path.string() << '\n';
    return kOk;
}

// Chart and frame settings come from the training echo; the caller then
// overrides the per-run choices (ratio, iterations, seed, backends).
nn::Checkpoint load_for_inference(const std::string& path, pipeline::UpsampleConfig& cfg)
{
    auto ck = nn::load_checkpoint(path);
    training::TrainConfig tc;
    for (const auto& [key, value] : ck.echo) {
        if (key.rfind("train.", 0) == 0) training::apply_setting(tc, key.substr(6), value);
    }
    const pipeline::UpsampleConfig keep = cfg;
    cfg = tc.upsample;
    cfg.ratio = keep.ratio;
    cfg.iterations = keep.iterations;
    cfg.seed = keep.seed;
    cfg.normals = keep.normals;
    cfg.field = keep.field;
    cfg.deterministic = keep.deterministic;
    cfg.adopt_network(ck.weights.config());
    return ck;
}

int cmd_upsample(const UpsampleArgs& a, bool deterministic, std::ostream& out, std::ostream& err)
{
    pipeline::UpsampleConfig cfg;
    cfg.ratio = a.ratio;
    cfg.iterations = a.iters;
    cfg.seed = a.seed;
    cfg.normals = pipeline::parse_normal_backend(a.normals);
    cfg.field = pipeline::parse_field_backend(a.field);
    cfg.deterministic = deterministic;
    const auto ck = load_for_inference(resolve_checkpoint(a.checkpoint, false), cfg);
    cfg.radius_from_input = a.radius_from_input;
    cfg.validate();

    const auto input = io::read_cloud(a.input);
    input.validate();
    std::size_t patch = a.patch_size;
    if (patch == 0) {
        const auto it = ck.echo.find("input_points");
        patch = it != ck.echo.end() ? std::stoul(it->second) : 256;
    }

    geometry::PointCloud result;
    if (input.size() <= patch) {
        const auto res = pipeline::upsample_iterative(input.points(), ck.weights, cfg, !a.trace.empty());
        result = res.output;
        if (!a.trace.empty()) {
            fs::create_directories(a.trace);
            for (std::size_t it = 0; it < res.trace.iterations.size(); ++it) {
                const auto& rec = res.trace.iterations[it];
                io::write_cloud(fs::path(a.trace) / ("x_iter_" + std::to_string(it) + ".xyz"),
                                geometry::PointCloud(rec.input));
                io::write_cloud(fs::path(a.trace) / ("y_iter_" + std::to_string(it) + ".xyz"),
                                geometry::PointCloud(rec.dense));
                err << "iteration " << it << ": mean shift " << rec.mean_shift << ", failed charts " << rec.failures
                    << '\n';
            }
        }
    } else {
        if (!a.trace.empty()) err << "note: --trace applies to single-patch inputs only\n";
        err << "upsampling " << input.size() << " points in patches of " << patch << '\n';
        result = pipeline::upsample_full_shape(input.points(), ck.weights, cfg, patch);
    }
    io::write_cloud(a.output, result);
    out << "points " << result.size() << '\n';
    return kOk;
}

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out, std::ostream& err)
{
    const auto pred = io::read_cloud(a.pred);
    const auto gt = io::read_cloud(a.gt_points);
    std::optional<geometry::TriangleMesh> mesh;
    std::vector<geometry::Vec3> dense;
    if (!a.gt_mesh.empty()) {
        mesh = io::read_mesh(a.gt_mesh);
        mesh->remove_degenerate_faces();
        dense = geometry::area_weighted_samples(*mesh, a.dense, a.seed).points;
    }
    const auto r = objectives::evaluate(pred.points(), gt.points(), mesh ? &*mesh : nullptr, dense);
    out << a.name << ' ' << io::format_real(r.cd) << ' ' << io::format_real(r.hd) << ' ' << io::format_real(r.p2f) << ' '
        << io::format_real(r.uni) << ' ' << r.reference << ' ' << r.predicted << ' ' << a.seed << '\n';
    err << "shape  " << a.name << "\n"
        << "CD     " << r.cd << "  (mean of squared distances, both directions)\n"
        << "HD     " << r.hd << "\n"
        << "P2F    " << (mesh ? io::format_real(r.p2f) : std::string("n/a (no mesh)")) << "\n"
        << "Uni    " << r.uni << "  (" << (mesh ? dense.size() : gt.size()) << " reference points)\n"
        << "points " << r.predicted << " predicted, " << r.reference << " ground truth\n";
    return kOk;
}

int cmd_export_field(const ExportFieldArgs& a, std::ostream& out, std::ostream&)
{
    const auto input = io::read_cloud(a.input);
    input.validate();
    pipeline::UpsampleConfig cfg;
    cfg.k1 = a.k1;
    cfg.field_sweeps = a.sweeps;
    cfg.pca_k = a.pca_k;
    cfg.seed = a.seed;
    cfg.normals = pipeline::parse_normal_backend(a.normals);
    cfg.field = pipeline::parse_field_backend(a.field);

    std::optional<nn::ExtractorOutput> heads;
    if (cfg.normals == pipeline::NormalBackend::Learned || cfg.field == pipeline::FieldBackend::Learned) {
        const auto ck = load_for_inference(resolve_checkpoint(a.checkpoint, false), cfg);
        cfg.k1 = a.k1;
        cfg.field_sweeps = a.sweeps;
        cfg.pca_k = a.pca_k;
        nn::Tape tape;
        heads = nn::forward_extractor(tape, input.points(), nn::extractor_graph(input.points(), ck.weights.config().knn),
                                      ck.weights);
    }
    const auto est = pipeline::estimate_frames(input.points(), heads ? &*heads : nullptr, cfg);
    {
        std::ofstream ply(a.output);
        require(static_cast<bool>(ply), ErrorKind::Io, "cannot open " + a.output);
        field::write_field_ply(ply, input.points(), est.frames);
    }
    if (!a.obj.empty()) {
        std::ofstream obj(a.obj);
        require(static_cast<bool>(obj), ErrorKind::Io, "cannot open " + a.obj);
        field::write_field_obj(obj, input.points(), est.frames, 0.02 * geometry::bounding_box(input).diagonal());
    }
    const auto report = field::field_energy(input, est.frames, nullptr, a.k1);
    out << "points " << input.size() << " smooth_loss " << io::format_real(report.smooth_loss) << " ortho_loss "
        << io::format_real(report.ortho_loss) << '\n';
    return kOk;
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Arbitrary-ratio point cloud upsampling with cross-field charts", "crossup"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Help for every subcommand");
    int threads = 0;
    bool deterministic = false;
    app.add_option("--threads", threads, "Cap on worker threads (0 = library default)")->check(CLI::NonNegativeNumber);
    app.add_flag("--deterministic", deterministic, "Sequential execution with fixed merge order");

    SampleMeshArgs sm;
    auto* c_sample = app.add_subcommand("sample-mesh", "Blue-noise sample a mesh surface");
    c_sample->add_option("--mesh", sm.mesh, "Input mesh (.obj)");
    c_sample->add_option("--shape", sm.shape, "Built-in shape name instead of a mesh file");
    c_sample->add_option("--count", sm.count, "Number of samples")->capture_default_str()->check(CLI::PositiveNumber);
    c_sample->add_option("--radius", sm.radius, "Minimum pairwise distance (default: tuned automatically)");
    c_sample->add_option("--seed", sm.seed, "Random seed")->capture_default_str();
    c_sample->add_option("--output", sm.output, "Output cloud (.xyz or .ply)")->required();

    DatasetArgs ds;
    auto* c_dataset = app.add_subcommand("make-dataset", "Build training patch pairs from meshes");
    c_dataset->add_option("--shapes", ds.shapes, "Built-in shape names (default: the desk training set)");
    c_dataset->add_option("--mesh", ds.meshes, "Additional mesh files (.obj)");
    c_dataset->add_option("--patches-per-shape", ds.options.patches_per_shape, "Patches per shape")->capture_default_str();
    c_dataset->add_option("--base-points", ds.options.base_points, "Blue-noise samples per shape")->capture_default_str();
    c_dataset->add_option("--gt-points", ds.options.gt_points, "Ground-truth points per patch")->capture_default_str();
    c_dataset->add_option("--input-points", ds.options.input_points, "Input points per patch")->capture_default_str();
    c_dataset->add_option("--crop-fraction", ds.options.crop_fraction, "Patch share of the base cloud")->capture_default_str();
    c_dataset->add_option("--seed", ds.options.seed, "Random seed")->capture_default_str();
    c_dataset->add_option("--output", ds.output, "Output dataset file")->required();

    TrainArgs tr;
    auto* c_train = app.add_subcommand("train", "Train the network on a dataset");
    c_train->add_option("--dataset", tr.dataset, "Dataset file from make-dataset")->required();
    c_train->add_option("--config", tr.config, "Config file with 'key = value' lines");
    c_train->add_option("--preset", tr.preset, "Size preset: desk or paper")->capture_default_str();
    c_train->add_option("--epochs", tr.epochs, "Training epochs");
    c_train->add_option("--lr", tr.lr, "Adam learning rate");
    c_train->add_option("--batch-size", tr.batch_size, "Patches per optimizer step");
    c_train->add_option("--inner-iterations", tr.inner_iterations, "Inner update iterations per batch");
    c_train->add_option("--seed", tr.seed, "Random seed");
    c_train->add_option("--checkpoint", tr.checkpoint, "Output checkpoint (default: $CROSSUP_CHECKPOINT_DIR/model.ckpt)");
    c_train->add_option("--curves", tr.curves, "Loss curve CSV");
    c_train->add_option("--dump-dir", tr.dump_dir, "Directory for diagnostics on a non-finite loss");

    UpsampleArgs up;
    auto* c_up = app.add_subcommand("upsample", "Upsample a point cloud");
    c_up->add_option("--input", up.input, "Input cloud (.xyz or .ply)")->required();
    c_up->add_option("--output", up.output, "Output cloud (.xyz or .ply)")->required();
    c_up->add_option("--ratio", up.ratio, "Upsampling ratio (> 1)")->capture_default_str();
    c_up->add_option("--iters", up.iters, "Update iterations D")->capture_default_str()->check(CLI::PositiveNumber);
    c_up->add_option("--checkpoint", up.checkpoint, "Trained weights (default: $CROSSUP_CHECKPOINT_DIR/model.ckpt)");
    c_up->add_option("--seed", up.seed, "Random seed")->capture_default_str();
    c_up->add_option("--normals", up.normals, "Normal backend: pca or learned")->capture_default_str();
    c_up->add_option("--field", up.field, "Field backend: solver, learned or none")->capture_default_str();
    c_up->add_option("--patch-size", up.patch_size, "Points per patch (default: the training input size)");
    c_up->add_option("--trace", up.trace, "Directory for per-iteration clouds");
    c_up->add_flag("--radius-from-input", up.radius_from_input,
                   "Chart radius relative to the whole input's diagonal instead of each patch's");

    EvaluateArgs ev;
    auto* c_eval = app.add_subcommand("evaluate", "Compare a prediction with ground truth");
    c_eval->add_option("--pred", ev.pred, "Predicted cloud")->required();
    c_eval->add_option("--gt-points", ev.gt_points, "Ground-truth cloud")->required();
    c_eval->add_option("--gt-mesh", ev.gt_mesh, "Ground-truth mesh (.obj) for P2F and the Uni reference");
    c_eval->add_option("--name", ev.name, "Name in the output record")->capture_default_str();
    c_eval->add_option("--dense", ev.dense, "Uni reference samples drawn from the mesh")->capture_default_str();
    c_eval->add_option("--seed", ev.seed, "Random seed for the reference samples")->capture_default_str();

    ExportFieldArgs ef;
    auto* c_field = app.add_subcommand("export-field", "Estimate and export normals and cross field");
    c_field->add_option("--input", ef.input, "Input cloud")->required();
    c_field->add_option("--output", ef.output, "Output PLY with nx ny nz tx ty tz")->required();
    c_field->add_option("--obj", ef.obj, "Optional line-segment OBJ of the crosses");
    c_field->add_option("--normals", ef.normals, "Normal backend: pca or learned")->capture_default_str();
    c_field->add_option("--field", ef.field, "Field backend: solver, learned or none")->capture_default_str();
    c_field->add_option("--checkpoint", ef.checkpoint, "Weights for learned backends");
    c_field->add_option("--k1", ef.k1, "Field neighbors K1")->capture_default_str();
    c_field->add_option("--sweeps", ef.sweeps, "Solver sweeps")->capture_default_str();
    c_field->add_option("--pca-k", ef.pca_k, "PCA neighborhood size")->capture_default_str();
    c_field->add_option("--seed", ef.seed, "Random seed")->capture_default_str();

    // CLI11 reports a stray word as a missing subcommand; name it instead.
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--threads") {
            ++i;
            continue;
        }
        if (args[i].starts_with("-")) continue;
        const auto subs = app.get_subcommands([&](const CLI::App* sub) { return sub->get_name() == args[i]; });
        if (subs.empty()) {
            err << "error: unknown subcommand '" << args[i] << "'\n" << app.help();
            return kUsage;
        }
        break;
    }

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsage;
    }

    if (deterministic) {
        omp_set_num_threads(1);
    } else if (threads > 0) {
        omp_set_num_threads(threads);
    }

    try {
        if (c_sample->parsed()) return cmd_sample_mesh(sm, out, err);
        if (c_dataset->parsed()) return cmd_make_dataset(ds, out, err);
        if (c_train->parsed()) return cmd_train(tr, deterministic, out, err);
        if (c_up->parsed()) return cmd_upsample(up, deterministic, out, err);
        if (c_eval->parsed()) return cmd_evaluate(ev, out, err);
        if (c_field->parsed()) return cmd_export_field(ef, out, err);
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return exit_code_for(e.kind());
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kDataError;
    }
    return kUsage;
}

int run(int argc, const char* const* argv)
{
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args, std::cout, std::cerr);
}

} // namespace crossup::cli
