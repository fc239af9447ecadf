#include "crossup/pipeline/upsample.hpp"

#include "crossup/error.hpp"
#include "crossup/geometry/sampling.hpp"
#include "crossup/geometry/spatial_index.hpp"
#include "crossup/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

namespace crossup::pipeline {

using field::CrossFrame;
using geometry::SpatialIndex;
using nn::Shape;

NormalBackend parse_normal_backend(const std::string& s)
{
    if (s == "pca") return NormalBackend::Pca;
    if (s == "learned") return NormalBackend::Learned;
    fail(ErrorKind::InvalidArgument, "unknown normal backend '" + s + "' (expected pca or learned)");
}

FieldBackend parse_field_backend(const std::string& s)
{
    if (s == "solver") return FieldBackend::Solver;
    if (s == "learned") return FieldBackend::Learned;
    if (s == "none") return FieldBackend::None;
    fail(ErrorKind::InvalidArgument, "unknown field backend '" + s + "' (expected solver, learned or none)");
}

std::string to_string(NormalBackend b)
{
    return b == NormalBackend::Pca ? "pca" : "learned";
}

std::string to_string(FieldBackend b)
{
    switch (b) {
    case FieldBackend::Solver: return "solver";
    case FieldBackend::Learned: return "learned";
    case FieldBackend::None: return "none";
    }
    return "solver";
}

void UpsampleConfig::validate() const
{
    require(ratio > 1.0 && std::isfinite(ratio), ErrorKind::InvalidArgument, "ratio must be a finite value > 1");
    require(d % 2 == 1, ErrorKind::InvalidArgument, "grid dimension d must be odd");
    require(k1 >= 1 && k2 >= 1 && pca_k >= 3 && iterations >= 1 && field_sweeps >= 1, ErrorKind::InvalidArgument,
            "K1, K2, iterations and sweeps must be >= 1 and pca_k >= 3");
    require(beta > 0.0 && offset_clamp > 0.0, ErrorKind::InvalidArgument, "beta and offset clamp must be positive");
    require(lambda0 >= 0.0 && lambda1 >= 0.0 && lambda_u >= 0.0, ErrorKind::InvalidArgument,
            "loss weights must be non-negative");
}

void UpsampleConfig::adopt_network(const nn::NetworkConfig& net)
{
    d = net.grid;
    c = net.channels;
    c_f = net.feature_width;
    validate();
}

std::size_t target_count(double ratio, std::size_t m)
{
    return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(m) + 1e-9));
}

Normalization Normalization::of(std::span<const Vec3> points)
{
    Normalization n;
    n.center = geometry::centroid(points);
    const double diag = geometry::bounding_box(points).diagonal();
    require(diag > 0.0, ErrorKind::InvalidArgument, "cannot normalize a cloud with a zero-size bounding box");
    n.scale = 1.0 / diag;
    return n;
}

FrameEstimate estimate_frames(std::span<const Vec3> points, const nn::ExtractorOutput* heads,
                              const UpsampleConfig& cfg)
{
    const std::size_t n = points.size();
    const bool learned = cfg.normals == NormalBackend::Learned || cfg.field == FieldBackend::Learned;
    require(!learned || heads != nullptr, ErrorKind::InvalidArgument, "learned backends need extractor outputs");
    FrameEstimate est;
    est.valid.assign(n, 1);
    std::vector<CrossFrame> learned_frames;
    if (learned) {
        learned_frames = nn::frames_from_heads(*heads);
    }

    std::vector<Vec3> normals(n, Vec3::UnitZ());
    if (cfg.normals == NormalBackend::Pca) {
        const SpatialIndex index(points);
        const Vec3 center = geometry::centroid(points);
        const std::size_t k = std::min(cfg.pca_k, n);
        std::vector<Vec3> hood;
        for (std::size_t i = 0; i < n; ++i) {
            hood.clear();
            for (const auto& nb : index.knn(points[i], k)) hood.push_back(points[nb.index]);
            try {
                Vec3 nv = geometry::pca_normal(hood).normal;
                // Orient away from the centroid so the choice follows rigid motions.
                if (nv.dot(points[i] - center) < 0.0) nv = -nv;
                normals[i] = nv;
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::DegenerateNeighborhood) throw;
                est.valid[i] = 0;
            }
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) normals[i] = learned_frames[i].n;
    }

    switch (cfg.field) {
    case FieldBackend::Solver: {
        const PointCloud cloud(std::vector<Vec3>(points.begin(), points.end()), normals);
        est.frames = field::optimize_field(cloud, {cfg.k1, cfg.field_sweeps, cfg.seed}).frames;
        break;
    }
    case FieldBackend::Learned:
        est.frames.resize(n);
        for (std::size_t i = 0; i < n; ++i) est.frames[i] = field::enforce_frame(normals[i], learned_frames[i].theta);
        break;
    case FieldBackend::None:
        est.frames = field::frames_without_field(normals);
        break;
    }
    est.failures = static_cast<std::size_t>(std::count(est.valid.begin(), est.valid.end(), 0));
    return est;
}

std::vector<Vec2> sample_tangent_positions(const chart::GridSpec& spec, std::size_t count, std::mt19937_64& rng)
{
    require(count >= 1, ErrorKind::InvalidArgument, "need at least one tangent sample per chart");
    const std::size_t cells = spec.cells();
    const std::size_t center = spec.center_cell();
    std::vector<std::size_t> order;
    order.reserve(cells);
    order.push_back(center);
    for (std::size_t t = 0; t < cells; ++t) {
        if (t != center) order.push_back(t);
    }
    std::vector<Vec2> out;
    if (count <= cells) {
        // Partial Fisher-Yates over the non-center cells.
        for (std::size_t i = 1; i < count; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, cells - 1);
            std::swap(order[i], order[pick(rng)]);
        }
        order.resize(count);
        for (std::size_t t : order) out.push_back(spec.cell_position(t).head<2>());
        return out;
    }
    for (std::size_t t : order) out.push_back(spec.cell_position(t).head<2>());
    const double h = static_cast<double>(spec.half()) * spec.spacing;
    std::uniform_real_distribution<double> coord(-h, h);
    while (out.size() < count) {
        const Vec2 p(coord(rng), coord(rng));
        if (std::abs(p.x()) < h && std::abs(p.y()) < h) out.push_back(p);
    }
    return out;
}

PatchForward forward_patch(nn::Tape& tape, std::span<const Vec3> points, const nn::NetworkWeights& weights,
                           const UpsampleConfig& cfg, double radius, std::size_t samples_per_chart,
                           std::mt19937_64& rng, const FrameEstimate* frames_override)
{
    const std::size_t n = points.size();
    require(n > cfg.k1, ErrorKind::InvalidArgument,
            "patch needs more than K1=" + std::to_string(cfg.k1) + " points, got " + std::to_string(n));
    const auto& net = weights.config();
    require(net.grid == cfg.d && net.channels == cfg.c && net.feature_width == cfg.c_f, ErrorKind::ShapeMismatch,
            "configuration widths do not match the network");

    PatchForward out;
    out.heads = nn::forward_extractor(tape, points, nn::extractor_graph(points, net.knn), weights);
    out.frames = frames_override ? *frames_override : estimate_frames(points, &out.heads, cfg);
    require(out.frames.frames.size() == n, ErrorKind::ShapeMismatch, "frame count does not match the patch");

    const chart::GridSpec spec = chart::GridSpec::for_radius(cfg.d, radius);
    const std::size_t d = spec.d;
    const std::size_t cells = spec.cells();
    const std::size_t voxels = spec.voxels();
    const SpatialIndex index(points);
    const geometry::RadiusQuery query{radius, cfg.k2, cfg.radius_min_count};

    std::vector<std::size_t> charts;  // batch slot -> point
    for (std::size_t i = 0; i < n; ++i) {
        if (out.frames.valid[i]) charts.push_back(i);
    }
    const std::size_t batch = charts.size();
    out.center_row.assign(n, kNoRow);
    if (batch == 0) {
        out.world = Tensor(Shape{0, 3});
        return out;
    }

    // Voxel rows average the features of the neighbors they receive.
    std::vector<std::vector<std::size_t>> members(batch * voxels);
    nn::SiteMask occupied(batch * voxels, 0);
    std::vector<Eigen::Matrix3d> rotations(batch);
    std::vector<Eigen::Vector3d> origins(batch);
    std::vector<Vec3> local;
    for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t i = charts[b];
        const auto frame = chart::LocalFrameMatrix::from_frame(out.frames.frames[i], points[i]);
        rotations[b] = frame.R;
        origins[b] = frame.origin;
        const auto nbrs = index.radius_neighbors(points[i], query);
        local.clear();
        for (std::size_t j : nbrs) local.push_back(chart::to_chart(points[j], frame));
        const auto grid = chart::scatter_to_voxels(local, {}, 0, spec);
        for (std::size_t a = 0; a < nbrs.size(); ++a) {
            if (grid.assignment[a] == chart::kDropped) continue;
            const std::size_t row = b * voxels + grid.assignment[a];
            members[row].push_back(nbrs[a]);
            occupied[row] = 1;
        }
    }
    nn::SparseRows scatter;
    for (const auto& m : members) {
        for (std::size_t j : m) scatter.add(j, 1.0 / static_cast<double>(m.size()));
        scatter.end_row();
    }

    // Tangent samples: positions, the cells each one blends, and its chart.
    nn::SparseRows blend;
    nn::SiteMask needed(batch * cells, 0);
    std::vector<double> p2, p3;
    std::vector<std::size_t> frame_of_row;
    for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t i = charts[b];
        out.center_row[i] = frame_of_row.size();
        for (const Vec2& p : sample_tangent_positions(spec, samples_per_chart, rng)) {
            for (const auto& [t, w] : chart::bilinear_weights(spec, p)) {
                if (w == 0.0) continue;
                blend.add(b * cells + t, w);
                needed[b * cells + t] = 1;
            }
            blend.end_row();
            p2.insert(p2.end(), {p.x(), p.y()});
            p3.insert(p3.end(), {p.x(), p.y(), 0.0});
            frame_of_row.push_back(b);
            out.point_of_row.push_back(i);
        }
    }
    const std::size_t rows = frame_of_row.size();

    const Tensor voxel_features = nn::reshape(tape, nn::sparse_blend(tape, out.heads.features, scatter),
                                              Shape{batch, d, d, d, cfg.c_f});
    const Tensor cell_features = nn::forward_chart(tape, voxel_features, &occupied, &needed, weights);
    const Tensor f_t = nn::sparse_blend(tape, cell_features, blend);
    const Tensor p_t(Shape{rows, 2}, std::move(p2));
    const Tensor offsets = nn::forward_mapper(tape, p_t, f_t, weights, radius, cfg.offset_clamp * radius);
    const Tensor q_t = nn::add(tape, Tensor(Shape{rows, 3}, std::move(p3)), offsets);
    out.world = nn::rigid_rows(tape, q_t, rotations, origins, frame_of_row);
    return out;
}

PatchResult upsample_patch_once(std::span<const Vec3> points, const nn::NetworkWeights& weights,
                                const UpsampleConfig& cfg, double radius, std::mt19937_64& rng)
{
    const std::size_t per_chart = static_cast<std::size_t>(std::ceil(cfg.ratio)) + 2;
    nn::Tape tape;
    const PatchForward fwd = forward_patch(tape, points, weights, cfg, radius, per_chart, rng);
    PatchResult res;
    res.failures = fwd.frames.failures;
    const std::size_t rows = fwd.world.dim(0);
    res.dense.reserve(rows + res.failures);
    for (std::size_t r = 0; r < rows; ++r) {
        res.dense.emplace_back(fwd.world[3 * r], fwd.world[3 * r + 1], fwd.world[3 * r + 2]);
    }
    res.moved.resize(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        const std::size_t r = fwd.center_row[i];
        if (r == kNoRow) {
            res.moved[i] = points[i];
            res.dense.push_back(points[i]);
        } else {
            res.moved[i] = res.dense[r];
        }
    }
    return res;
}

namespace {

// FPS of the candidates down to `target`, keeping them inside `box`. Points
// outside are dropped first; if too few remain, the rest are clamped instead.
std::vector<Vec3> downselect(std::vector<Vec3> candidates, const geometry::Aabb& box, std::size_t target,
                             std::mt19937_64& rng)
{
    std::vector<Vec3> inside;
    inside.reserve(candidates.size());
    for (const Vec3& p : candidates) {
        if (box.contains(p, 0.0)) inside.push_back(p);
    }
    if (inside.size() < target) {
        for (Vec3& p : candidates) p = p.cwiseMax(box.min).cwiseMin(box.max);
        inside = std::move(candidates);
    }
    require(inside.size() >= target, ErrorKind::NumericFailure,
            "only " + std::to_string(inside.size()) + " candidates for " + std::to_string(target) + " outputs");
    std::uniform_int_distribution<std::size_t> pick(0, inside.size() - 1);
    const auto idx = geometry::fps(inside, target, pick(rng));
    std::vector<Vec3> out;
    out.reserve(target);
    for (std::size_t i : idx) out.push_back(inside[i]);
    return out;
}

void require_finite(std::span<const Vec3> pts, const char* stage)
{
    for (const Vec3& p : pts) {
        require(p.allFinite(), ErrorKind::NumericFailure, std::string("non-finite point after ") + stage);
    }
}

} // namespace

IterativeResult upsample_iterative(std::span<const Vec3> points, const nn::NetworkWeights& weights,
                                   const UpsampleConfig& cfg, bool keep_trace)
{
    cfg.validate();
    require(!points.empty(), ErrorKind::InvalidArgument, "cannot upsample an empty cloud");
    const Normalization norm = Normalization::of(points);
    const double radius = cfg.beta;  // bounding-box diagonal is 1 after normalization

    std::vector<Vec3> x(points.size());
    std::transform(points.begin(), points.end(), x.begin(), [&](const Vec3& p) { return norm.apply(p); });
    geometry::Aabb box = geometry::bounding_box(x);
    box.min.array() -= radius;
    box.max.array() += radius;

    std::mt19937_64 rng(cfg.seed);
    IterativeResult result;
    std::vector<Vec3> last_dense;
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        PatchResult step = upsample_patch_once(x, weights, cfg, radius, rng);
        require_finite(step.dense, "a mapping pass");
        if (keep_trace) {
            IterationRecord rec;
            rec.failures = step.failures;
            double shift = 0.0;
            for (std::size_t i = 0; i < x.size(); ++i) shift += (step.moved[i] - x[i]).norm();
            rec.mean_shift = shift / static_cast<double>(x.size()) / norm.scale;
            for (const Vec3& p : x) rec.input.push_back(norm.invert(p));
            for (const Vec3& p : step.dense) rec.dense.push_back(norm.invert(p));
            result.trace.iterations.push_back(std::move(rec));
        }
        x = std::move(step.moved);
        last_dense = std::move(step.dense);
    }

    const std::size_t target = target_count(cfg.ratio, points.size());
    std::vector<Vec3> y = downselect(std::move(last_dense), box, target, rng);
    for (Vec3& p : y) p = norm.invert(p);
    result.output = PointCloud(std::move(y));
    return result;
}

PointCloud upsample_full_shape(std::span<const Vec3> points, const nn::NetworkWeights& weights,
                               const UpsampleConfig& cfg, std::size_t patch_size, std::size_t seeds)
{
    cfg.validate();
    const std::size_t n = points.size();
    require(patch_size > cfg.k1, ErrorKind::InvalidArgument, "patch size must exceed K1");
    require(n >= patch_size, ErrorKind::InvalidArgument,
            "input has " + std::to_string(n) + " points, fewer than the patch size " + std::to_string(patch_size));

    if (seeds == 0) {
        seeds = n == patch_size ? 1 : (3 * n + patch_size - 1) / patch_size;
    }
    seeds = std::min(seeds, n);
    std::mt19937_64 rng(cfg.seed);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::vector<std::size_t> centers = geometry::fps(points, seeds, pick(rng));

    const SpatialIndex index(points);
    const double input_diagonal = geometry::bounding_box(points).diagonal();
    std::vector<std::vector<std::size_t>> patches;
    std::vector<unsigned char> covered(n, 0);
    auto add_patch = [&](std::size_t center) {
        std::vector<std::size_t> patch;
        for (const auto& nb : index.knn(points[center], patch_size)) patch.push_back(nb.index);
        std::sort(patch.begin(), patch.end());
        for (std::size_t i : patch) covered[i] = 1;
        patches.push_back(std::move(patch));
    };
    for (std::size_t c : centers) add_patch(c);
    for (std::size_t i = 0; i < n; ++i) {
        if (!covered[i]) add_patch(i);
    }

    std::vector<std::vector<Vec3>> outputs(patches.size());
    const auto count = static_cast<std::ptrdiff_t>(patches.size());
    std::exception_ptr error;
#pragma omp parallel for schedule(dynamic) if (!cfg.deterministic)
    for (std::ptrdiff_t p = 0; p < count; ++p) {
        try {
            const auto& patch = patches[static_cast<std::size_t>(p)];
            std::vector<Vec3> local;
            local.reserve(patch.size());
            for (std::size_t i : patch) local.push_back(points[i]);
            UpsampleConfig pc = cfg;
            pc.seed = cfg.seed + static_cast<std::uint64_t>(p);
            if (cfg.radius_from_input) pc.beta = cfg.beta * input_diagonal / geometry::bounding_box(local).diagonal();
            outputs[static_cast<std::size_t>(p)] = upsample_iterative(local, weights, pc, false).output.points();
        } catch (...) {
#pragma omp critical
            if (!error) error = std::current_exception();
        }
    }
    if (error) std::rethrow_exception(error);

    // Merge in patch order, dropping exact duplicates.
    std::vector<Vec3> merged;
    for (const auto& o : outputs) merged.insert(merged.end(), o.begin(), o.end());
    std::vector<std::size_t> order(merged.size());
    std::iota(order.begin(), order.end(), 0);
    auto key = [&](std::size_t i) { return std::tuple(merged[i].x(), merged[i].y(), merged[i].z()); };
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key(a) < key(b); });
    std::vector<unsigned char> keep(merged.size(), 1);
    for (std::size_t k = 1; k < order.size(); ++k) {
        if (key(order[k]) == key(order[k - 1])) keep[order[k]] = 0;
    }
    std::vector<Vec3> unique;
    for (std::size_t i = 0; i < merged.size(); ++i) {
        if (keep[i]) unique.push_back(merged[i]);
    }

    const std::size_t target = target_count(cfg.ratio, n);
    require(unique.size() >= target, ErrorKind::NumericFailure, "patches produced too few distinct points");
    std::uniform_int_distribution<std::size_t> pick_out(0, unique.size() - 1);
    const auto idx = geometry::fps(unique, target, pick_out(rng));
    std::vector<Vec3> y;
    y.reserve(target);
    for (std::size_t i : idx) y.push_back(unique[i]);
    return PointCloud(std::move(y));
}

} // namespace crossup::pipeline
