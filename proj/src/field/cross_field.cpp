#include "crossup/field/cross_field.hpp"

#include "crossup/error.hpp"
#include "crossup/geometry/io.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <ostream>
#include <random>

namespace crossup::field {

using geometry::PointCloud;
using geometry::SpatialIndex;

bool CrossFrame::is_valid(double tol) const
{
    return std::abs(n.norm() - 1.0) <= tol && std::abs(theta.norm() - 1.0) <= tol && std::abs(n.dot(theta)) <= tol;
}

Vec3 rosy_rotate(const CrossFrame& frame, int k)
{
    switch (((k % 4) + 4) % 4) {
    case 0:
        return frame.theta;
    case 1:
        return frame.n.cross(frame.theta);
    case 2:
        return -frame.theta;
    default:
        return -frame.n.cross(frame.theta);
    }
}

Vec3 fallback_tangent(const Vec3& n)
{
    int axis = 0;
    n.cwiseAbs().minCoeff(&axis);
    return n.cross(Vec3::Unit(axis)).normalized();
}

CrossFrame enforce_frame(const Vec3& n, const Vec3& theta)
{
    const double len = n.norm();
    require(len > 1e-12, ErrorKind::DegenerateFrame, "enforce_frame: normal has zero length");
    CrossFrame frame;
    frame.n = n / len;
    Vec3 t = theta - theta.dot(frame.n) * frame.n;
    if (t.norm() < 1e-8) {
        t = fallback_tangent(frame.n);
    }
    t.normalize();
    // one more projection pass removes the residual of the first
    t -= t.dot(frame.n) * frame.n;
    frame.theta = t.normalized();
    return frame;
}

namespace {

double abs_cos(const Vec3& a, const Vec3& b)
{
    const double denom = a.norm() * b.norm();
    return denom > 0.0 ? std::min(1.0, std::abs(a.dot(b)) / denom) : 0.0;
}

} // namespace

double pairwise_smooth_loss(const CrossFrame& a, const CrossFrame& b)
{
    const double direct = 1.0 - abs_cos(a.theta, b.theta);
    const double quarter = 1.0 - abs_cos(a.n.cross(a.theta), b.theta);
    return std::min(direct, quarter);
}

FieldEnergyReport field_energy(std::span<const CrossFrame> frames, const NeighborGraph& graph,
                               const std::vector<Vec3>* gt_normals)
{
    require(graph.size() == frames.size(), ErrorKind::ShapeMismatch, "neighbor graph does not match frame count");
    FieldEnergyReport report;
    report.smooth_residuals.assign(frames.size(), 0.0);
    if (gt_normals) {
        require(gt_normals->size() == frames.size(), ErrorKind::ShapeMismatch,
                "ground-truth normal count does not match frame count");
    }
    for (std::size_t i = 0; i < frames.size(); ++i) {
        if (gt_normals) {
            report.normal_loss += 1.0 - abs_cos(frames[i].n, (*gt_normals)[i]);
        }
        report.ortho_loss += std::abs(frames[i].n.dot(frames[i].theta));
        double local = 0.0;
        for (std::size_t j : graph[i]) {
            local += pairwise_smooth_loss(frames[i], frames[j]);
        }
        report.smooth_residuals[i] = local;
        report.smooth_loss += local;
    }
    return report;
}

FieldEnergyReport field_energy(const PointCloud& cloud, std::span<const CrossFrame> frames,
                               const std::vector<Vec3>* gt_normals, std::size_t k1)
{
    require(frames.size() == cloud.size(), ErrorKind::ShapeMismatch, "frame count does not match cloud size");
    require(k1 >= 1, ErrorKind::InvalidArgument, "K1 must be >= 1");
    const SpatialIndex index(cloud);
    return field_energy(frames, geometry::knn_graph(index, k1), gt_normals);
}

namespace {

// Representative of b's cross (quarter turns and sign) closest to `target`.
Vec3 best_representative(const CrossFrame& b, const Vec3& target)
{
    Vec3 best = b.theta;
    double best_dot = -2.0;
    for (int k = 0; k < 4; ++k) {
        const Vec3 r = rosy_rotate(b, k);
        const double d = r.dot(target);
        if (d > best_dot) {
            best_dot = d;
            best = r;
        }
    }
    return best;
}

double local_energy(std::size_t i, std::span<const CrossFrame> frames, const NeighborGraph& out,
                    const NeighborGraph& in)
{
    double e = 0.0;
    for (std::size_t j : out[i]) {
        e += pairwise_smooth_loss(frames[i], frames[j]);
    }
    for (std::size_t j : in[i]) {
        e += pairwise_smooth_loss(frames[j], frames[i]);
    }
    return e;
}

double total_energy(std::span<const CrossFrame> frames, const NeighborGraph& graph)
{
    double e = 0.0;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        for (std::size_t j : graph[i]) {
            e += pairwise_smooth_loss(frames[i], frames[j]);
        }
    }
    return e;
}

// Orthonormal frame from the centroid and the first two points that span a
// direction; the identity when the cloud is degenerate.
geometry::Mat3 cloud_frame(const PointCloud& cloud)
{
    const Vec3 c = geometry::centroid(cloud.points());
    geometry::Mat3 frame = geometry::Mat3::Identity();
    std::size_t i = 0;
    Vec3 e1 = Vec3::Zero();
    for (; i < cloud.size(); ++i) {
        if ((cloud[i] - c).norm() > 1e-9) {
            e1 = (cloud[i] - c).normalized();
            break;
        }
    }
    if (e1.isZero()) {
        return frame;
    }
    Vec3 e2 = fallback_tangent(e1);
    for (++i; i < cloud.size(); ++i) {
        const Vec3 v = cloud[i] - c;
        const Vec3 w = v - v.dot(e1) * e1;
        if (w.norm() > 1e-6 * v.norm()) {
            e2 = w.normalized();
            break;
        }
    }
    frame.col(0) = e1;
    frame.col(1) = e2;
    frame.col(2) = e1.cross(e2);
    return frame;
}

// Where neighbor normals fan out about one axis (a crease), that axis is the
// feature direction. Seeding creases with it keeps faces from settling into
// quarter-turn twists between differently rounded edges.
std::optional<Vec3> crease_direction(const std::vector<Vec3>& normals, std::size_t i,
                                     const std::vector<std::size_t>& neighbors)
{
    geometry::Mat3 c = normals[i] * normals[i].transpose();
    for (std::size_t j : neighbors) {
        c += normals[j] * normals[j].transpose();
    }
    const Eigen::SelfAdjointEigenSolver<geometry::Mat3> eig(c);
    const Vec3 ev = eig.eigenvalues();
    if (ev[1] > 0.05 * ev[2] && ev[0] < 0.25 * ev[1]) {
        return Vec3(eig.eigenvectors().col(0));
    }
    return std::nullopt;
}

Vec3 random_direction(std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    Vec3 v;
    do {
        v = Vec3(g(rng), g(rng), g(rng));
    } while (v.norm() < 1e-6);
    return v.normalized();
}

} // namespace

SolverResult optimize_field(const PointCloud& cloud, const SolverOptions& options)
{
    require(cloud.has_normals(), ErrorKind::InvalidArgument, "optimize_field needs normals");
    require(options.sweeps >= 1, ErrorKind::InvalidArgument, "optimize_field needs at least one sweep");
    require(options.k1 >= 1, ErrorKind::InvalidArgument, "K1 must be >= 1");
    const std::size_t m = cloud.size();
    SolverResult result;
    if (m == 0) {
        result.energy_trace.assign(options.sweeps + 1, 0.0);
        return result;
    }

    const SpatialIndex index(cloud);
    const NeighborGraph graph = geometry::knn_graph(index, options.k1);
    NeighborGraph reverse(m);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j : graph[i]) {
            reverse[j].push_back(i);
        }
    }

    // One seeded-random direction, projected into every tangent plane. It is
    // drawn in a frame built from the cloud itself so the initialization moves
    // with the cloud under rigid motion. Independent per-point angles leave
    // the local averaging stuck in states full of singularities.
    const Vec3 guide = cloud_frame(cloud) * random_direction(options.seed);
    auto& frames = result.frames;
    frames.reserve(m);
    for (std::size_t i = 0; i < m; ++i) {
        const Vec3& n = cloud.normals()[i];
        Vec3 seed_dir = crease_direction(cloud.normals(), i, graph[i]).value_or(guide);
        if (seed_dir.dot(guide) < 0.0) {
            seed_dir = -seed_dir;
        }
        frames.push_back(enforce_frame(n, seed_dir));
    }

    result.energy_trace.push_back(total_energy(frames, graph));
    for (std::size_t sweep = 0; sweep < options.sweeps; ++sweep) {
        for (std::size_t i = 0; i < m; ++i) {
            Vec3 sum = Vec3::Zero();
            for (std::size_t j : graph[i]) {
                sum += best_representative(frames[j], frames[i].theta);
            }
            for (std::size_t j : reverse[i]) {
                sum += best_representative(frames[j], frames[i].theta);
            }
            const Vec3& n = frames[i].n;
            const Vec3 tangent = sum - sum.dot(n) * n;
            if (tangent.norm() < 1e-12) {
                continue;  // keep the previous theta
            }
            // Across creases the pairwise term depends on which representative
            // theta is, so the other quarter turns of the new cross compete.
            // They must win clearly: near-ties are left to continuity so that
            // rounding cannot pick the representative.
            const CrossFrame candidate = enforce_frame(n, tangent);
            const CrossFrame previous = frames[i];
            double best_energy = local_energy(i, frames, graph, reverse);
            CrossFrame best = previous;
            const Vec3 nearest = best_representative(candidate, previous.theta);
            frames[i] = CrossFrame{candidate.n, nearest};
            if (const double e = local_energy(i, frames, graph, reverse); e <= best_energy) {
                best_energy = e;
                best = frames[i];
            }
            for (int k = 1; k < 4; ++k) {
                frames[i] = CrossFrame{candidate.n, rosy_rotate(CrossFrame{candidate.n, nearest}, k)};
                const double e = local_energy(i, frames, graph, reverse);
                if (e < best_energy - 1e-9 * (1.0 + best_energy)) {
                    best_energy = e;
                    best = frames[i];
                }
            }
            frames[i] = best;
        }
        result.energy_trace.push_back(total_energy(frames, graph));
    }
    return result;
}

std::vector<CrossFrame> frames_without_field(const std::vector<Vec3>& normals)
{
    std::vector<CrossFrame> frames;
    frames.reserve(normals.size());
    for (const Vec3& n : normals) {
        frames.push_back(enforce_frame(n, fallback_tangent(n.normalized())));
    }
    return frames;
}

void write_field_ply(std::ostream& out, std::span<const Vec3> points, std::span<const CrossFrame> frames)
{
    require(points.size() == frames.size(), ErrorKind::ShapeMismatch, "frame count does not match point count");
    std::vector<Vec3> pts(points.begin(), points.end());
    std::vector<Vec3> normals;
    std::vector<double> attrs;
    for (const CrossFrame& f : frames) {
        normals.push_back(f.n);
        attrs.insert(attrs.end(), {f.theta.x(), f.theta.y(), f.theta.z()});
    }
    PointCloud cloud(std::move(pts), std::move(normals));
    cloud.set_attrs(3, std::move(attrs));
    geometry::io::write_ply(out, cloud, {"tx", "ty", "tz"});
}

void write_field_obj(std::ostream& out, std::span<const Vec3> points, std::span<const CrossFrame> frames,
                     double segment_length)
{
    require(points.size() == frames.size(), ErrorKind::ShapeMismatch, "frame count does not match point count");
    using geometry::io::format_real;
    auto vertex = [&](const Vec3& v) {
        out << "v " << format_real(v.x()) << ' ' << format_real(v.y()) << ' ' << format_real(v.z()) << '\n';
    };
    for (std::size_t i = 0; i < points.size(); ++i) {
        vertex(points[i]);
        for (int k = 0; k < 4; ++k) {
            vertex(points[i] + segment_length * rosy_rotate(frames[i], k));
        }
    }
    for (std::size_t i = 0; i < points.size(); ++i) {
        const std::size_t base = 5 * i + 1;
        for (std::size_t k = 1; k <= 4; ++k) {
            out << "l " << base << ' ' << base + k << '\n';
        }
    }
}

} // namespace crossup::field
