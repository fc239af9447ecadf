#include "crossup/objectives/losses.hpp"

#include "crossup/error.hpp"
#include "crossup/nn/ops.hpp"

#include <optional>

namespace crossup::objectives {

using geometry::SpatialIndex;

std::vector<Vec3> rows_as_points(const Tensor& t)
{
    require(t.rank() == 2 && t.dim(1) == 3, ErrorKind::ShapeMismatch, "expected [n,3], got " + nn::shape_string(t.shape()));
    std::vector<Vec3> out(t.dim(0));
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = Vec3(t[3 * i], t[3 * i + 1], t[3 * i + 2]);
    }
    return out;
}

Tensor points_as_tensor(std::span<const Vec3> points, bool requires_grad)
{
    std::vector<double> v;
    v.reserve(points.size() * 3);
    for (const Vec3& p : points) {
        v.insert(v.end(), {p.x(), p.y(), p.z()});
    }
    return Tensor(nn::Shape{points.size(), 3}, std::move(v), requires_grad);
}

Tensor chamfer_loss(Tape& tape, const Tensor& pred, std::span<const Vec3> gt, const SpatialIndex* gt_index)
{
    const std::vector<Vec3> p = rows_as_points(pred);
    require(!p.empty() && !gt.empty(), ErrorKind::InvalidArgument, "chamfer needs non-empty clouds");
    std::optional<SpatialIndex> own;
    if (!gt_index) {
        own.emplace(gt);
        gt_index = &*own;
    }
    require(gt_index->size() == gt.size(), ErrorKind::ShapeMismatch, "ground-truth index does not match gt");
    const SpatialIndex pred_index(p);

    // Gradient w.r.t. each predicted point, accumulated from both directions.
    std::vector<Vec3> g(p.size(), Vec3::Zero());
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const Vec3 diff = p[i] - gt[gt_index->nearest(p[i]).index];
        total += diff.squaredNorm();
        g[i] += 2.0 * diff;
    }
    for (const Vec3& y : gt) {
        const std::size_t k = pred_index.nearest(y).index;
        const Vec3 diff = p[k] - y;
        total += diff.squaredNorm();
        g[k] += 2.0 * diff;
    }

    Tensor out = Tensor::scalar(total, pred.requires_grad());
    if (pred.requires_grad()) {
        tape.record([pred = pred, out = out, g = std::move(g)]() mutable {
            const double s = out.grad()[0];
            auto gp = pred.grad();
            for (std::size_t i = 0; i < g.size(); ++i)
                for (int a = 0; a < 3; ++a) gp[3 * i + a] += s * g[i][a];
        });
    }
    return out;
}

Tensor normal_loss(Tape& tape, const Tensor& normals, std::span<const Vec3> gt_normals)
{
    require(normals.rank() == 2 && normals.dim(0) == gt_normals.size(), ErrorKind::ShapeMismatch,
            "normal loss: prediction and ground-truth counts differ");
    const Tensor gt = points_as_tensor(gt_normals);
    const Tensor cos = nn::abs(tape, nn::row_dot(tape, normals, gt));
    return nn::sum(tape, nn::affine(tape, cos, -1.0, 1.0));
}

Tensor field_normal_loss(Tape& tape, const Tensor& normals, const Tensor& thetas)
{
    return nn::sum(tape, nn::abs(tape, nn::row_dot(tape, normals, thetas)));
}

Tensor field_smooth_loss(Tape& tape, const Tensor& normals, const Tensor& thetas, const field::NeighborGraph& graph)
{
    require(graph.size() == thetas.dim(0) && normals.shape() == thetas.shape(), ErrorKind::ShapeMismatch,
            "field smoothness: graph, normals and thetas disagree in size");
    std::vector<std::size_t> src, dst;
    for (std::size_t i = 0; i < graph.size(); ++i) {
        for (std::size_t j : graph[i]) {
            src.push_back(i);
            dst.push_back(j);
        }
    }
    if (src.empty()) {
        return Tensor::scalar(0.0);
    }
    const Tensor ta = nn::gather_rows(tape, thetas, src);
    const Tensor tb = nn::gather_rows(tape, thetas, dst);
    const Tensor na = nn::gather_rows(tape, normals, src);
    const Tensor rot = nn::cross_rows(tape, na, ta);
    const Tensor direct = nn::affine(tape, nn::abs(tape, nn::row_dot(tape, ta, tb)), -1.0, 1.0);
    const Tensor quarter = nn::affine(tape, nn::abs(tape, nn::row_dot(tape, rot, tb)), -1.0, 1.0);
    return nn::sum(tape, nn::minimum(tape, direct, quarter));
}

namespace {

Tensor weighted_add(Tape& tape, const Tensor& acc, const Tensor& term, double weight)
{
    return nn::add(tape, acc, weight == 1.0 ? term : nn::affine(tape, term, weight));
}

} // namespace

LossResult one_pass_loss(Tape& tape, const PredictionBundle& b, std::span<const Vec3> gt,
                         const std::vector<Vec3>* gt_normals, const LossWeights& w, const SpatialIndex* gt_index)
{
    require(b.graph != nullptr, ErrorKind::InvalidArgument, "prediction bundle lacks its neighbor graph");
    require(b.normals.shape() == b.thetas.shape() && b.normals.rank() == 2 && b.normals.dim(1) == 3,
            ErrorKind::ShapeMismatch, "prediction bundle normals/thetas must both be [m,3]");
    LossResult r;
    r.parts.weights = w;

    const Tensor ln = gt_normals ? normal_loss(tape, b.normals, *gt_normals) : Tensor::scalar(0.0);
    const Tensor lfn = field_normal_loss(tape, b.normals, b.thetas);
    const Tensor lfs = field_smooth_loss(tape, b.normals, b.thetas, *b.graph);
    const Tensor lcd = chamfer_loss(tape, b.upsampled, gt, gt_index);

    r.parts.normal = ln.item();
    r.parts.field_normal = lfn.item();
    r.parts.field_smooth = lfs.item();
    r.parts.cd = lcd.item();

    Tensor total = weighted_add(tape, ln, lfn, w.lambda0);
    total = weighted_add(tape, total, lfs, 1.0);
    total = weighted_add(tape, total, lcd, w.lambda1);
    r.total = total;
    r.parts.total = total.item();
    return r;
}

Tensor uniform_loss(Tape& tape, std::span<const Vec3> gt, const Tensor& x_iter, double lambda_u,
                    const SpatialIndex* gt_index)
{
    return nn::affine(tape, chamfer_loss(tape, x_iter, gt, gt_index), lambda_u);
}

LossResult total_loss(Tape& tape, const PredictionBundle& bundle, const Tensor& x_next, std::span<const Vec3> gt,
                      const std::vector<Vec3>* gt_normals, const LossWeights& weights, const SpatialIndex* gt_index)
{
    LossResult r = one_pass_loss(tape, bundle, gt, gt_normals, weights, gt_index);
    const Tensor cd = chamfer_loss(tape, x_next, gt, gt_index);
    r.parts.uniform = cd.item();
    r.total = weighted_add(tape, r.total, cd, weights.lambda_u);
    r.parts.total = r.total.item();
    return r;
}

} // namespace crossup::objectives
