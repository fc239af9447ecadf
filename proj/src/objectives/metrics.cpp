#include "crossup/objectives/metrics.hpp"

#include "crossup/error.hpp"
#include "crossup/geometry/spatial_index.hpp"

#include <algorithm>
#include <limits>
#include <vector>

namespace crossup::objectives {

using geometry::SpatialIndex;

namespace {

void require_nonempty(std::span<const Vec3> a, std::span<const Vec3> b, const char* what)
{
    require(!a.empty() && !b.empty(), ErrorKind::InvalidArgument, std::string(what) + " needs non-empty clouds");
}

// Sum of squared distances from each point of `from` to its nearest in `index`.
double directional_sum(std::span<const Vec3> from, const SpatialIndex& index)
{
    double s = 0.0;
    for (const Vec3& p : from) {
        const double d = index.nearest(p).distance;
        s += d * d;
    }
    return s;
}

double directional_max(std::span<const Vec3> from, const SpatialIndex& index)
{
    double m = 0.0;
    for (const Vec3& p : from) {
        m = std::max(m, index.nearest(p).distance);
    }
    return m;
}

} // namespace

double chamfer(std::span<const Vec3> a, std::span<const Vec3> b, Reduction reduction)
{
    require_nonempty(a, b, "chamfer");
    const SpatialIndex ia(a), ib(b);
    double ab = directional_sum(a, ib);
    double ba = directional_sum(b, ia);
    if (reduction == Reduction::Mean) {
        ab /= static_cast<double>(a.size());
        ba /= static_cast<double>(b.size());
    }
    return ab + ba;
}

double hausdorff(std::span<const Vec3> a, std::span<const Vec3> b)
{
    require_nonempty(a, b, "hausdorff");
    const SpatialIndex ia(a), ib(b);
    return std::max(directional_max(a, ib), directional_max(b, ia));
}

double p2f(std::span<const Vec3> points, const geometry::TriangleMesh& mesh)
{
    require(mesh.face_count() > 0, ErrorKind::InvalidArgument, "p2f needs a mesh with faces");
    if (points.empty()) {
        return 0.0;
    }
    const auto& v = mesh.vertices();
    const auto& faces = mesh.faces();
    // Face bounding spheres let most faces be skipped once a close one is known.
    std::vector<Vec3> centers(faces.size());
    std::vector<double> radii(faces.size());
    for (std::size_t f = 0; f < faces.size(); ++f) {
        const Vec3& a = v[faces[f][0]];
        const Vec3& b = v[faces[f][1]];
        const Vec3& c = v[faces[f][2]];
        centers[f] = (a + b + c) / 3.0;
        radii[f] = std::max({(a - centers[f]).norm(), (b - centers[f]).norm(), (c - centers[f]).norm()});
    }
    std::vector<double> dist(points.size());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(points.size()); ++i) {
        const Vec3& p = points[static_cast<std::size_t>(i)];
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t f = 0; f < faces.size(); ++f) {
            if ((p - centers[f]).norm() - radii[f] >= best) {
                continue;
            }
            const Vec3 q = geometry::closest_point_on_triangle(p, v[faces[f][0]], v[faces[f][1]], v[faces[f][2]]);
            best = std::min(best, (p - q).norm());
        }
        dist[static_cast<std::size_t>(i)] = best;
    }
    double s = 0.0;
    for (double d : dist) s += d;
    return s / static_cast<double>(points.size());
}

double uni_metric(std::span<const Vec3> y, std::span<const Vec3> dense)
{
    require_nonempty(y, dense, "uni_metric");
    const SpatialIndex iy(y);
    double s = 0.0;
    for (const Vec3& p : dense) {
        s += iy.nearest(p).distance;
    }
    return s / static_cast<double>(y.size());
}

MetricReport evaluate(std::span<const Vec3> pred, std::span<const Vec3> gt, const geometry::TriangleMesh* mesh,
                      std::span<const Vec3> dense)
{
    MetricReport r;
    r.cd = chamfer(pred, gt, Reduction::Mean);
    r.hd = hausdorff(pred, gt);
    r.p2f = mesh ? p2f(pred, *mesh) : 0.0;
    r.uni = uni_metric(pred, dense.empty() ? gt : dense);
    r.predicted = pred.size();
    r.reference = gt.size();
    return r;
}

} // namespace crossup::objectives
