#include "crossup/geometry/sampling.hpp"

#include "crossup/error.hpp"
#include "crossup/geometry/spatial_index.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <random>
#include <string>
#include <tuple>
#include <unordered_map>

namespace crossup::geometry {

std::vector<std::size_t> fps(std::span<const Vec3> points, std::size_t k, std::size_t seed_index)
{
    const std::size_t n = points.size();
    require(k >= 1, ErrorKind::InvalidArgument, "fps requires k >= 1");
    require(k <= n, ErrorKind::InvalidArgument,
            "fps: k=" + std::to_string(k) + " exceeds point count " + std::to_string(n));
    require(seed_index < n, ErrorKind::InvalidArgument, "fps seed index out of range");

    // Same selections as the textbook O(nk) loop. Distances to the selected
    // set only shrink, so a lazy max-heap of (d2, -index) finds the next
    // point, and selecting a point at squared distance M can only lower the
    // entries of points within sqrt(M) of it.
    std::vector<std::size_t> selected;
    selected.reserve(k);
    std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
    std::vector<unsigned char> taken(n, 0);
    auto before = [](const std::pair<double, std::size_t>& a, const std::pair<double, std::size_t>& b) {
        return a.first < b.first || (a.first == b.first && a.second > b.second);
    };
    std::priority_queue<std::pair<double, std::size_t>, std::vector<std::pair<double, std::size_t>>, decltype(before)>
        heap(before);
    const SpatialIndex index(points);

    std::size_t current = seed_index;
    double reach2 = std::numeric_limits<double>::infinity();
    while (true) {
        selected.push_back(current);
        taken[current] = 1;
        if (selected.size() == k) {
            break;
        }
        auto relax = [&](std::size_t i) {
            if (taken[i]) return;
            const double d2 = (points[i] - points[current]).squaredNorm();
            if (d2 < min_d2[i]) {
                min_d2[i] = d2;
                heap.emplace(d2, i);
            }
        };
        if (std::isinf(reach2)) {
            for (std::size_t i = 0; i < n; ++i) relax(i);
        } else {
            for (const Neighbor& nb : index.within(points[current], std::sqrt(reach2) * (1.0 + 1e-12))) {
                relax(nb.index);
            }
        }
        while (!heap.empty() && (taken[heap.top().second] || heap.top().first != min_d2[heap.top().second])) {
            heap.pop();
        }
        if (heap.empty()) {
            break;
        }
        current = heap.top().second;
        reach2 = heap.top().first;
        heap.pop();
    }
    return selected;
}

Vec3 canonical_sign(const Vec3& n)
{
    int axis = 0;
    n.cwiseAbs().maxCoeff(&axis);
    return n[axis] < 0.0 ? Vec3(-n) : n;
}

PcaNormal pca_normal(std::span<const Vec3> neighborhood)
{
    require(neighborhood.size() >= 3, ErrorKind::InvalidArgument, "pca_normal needs at least 3 points");
    const Vec3 mean = centroid(neighborhood);
    Mat3 cov = Mat3::Zero();
    double spread = 0.0;
    for (const Vec3& p : neighborhood) {
        const Vec3 d = p - mean;
        cov += d * d.transpose();
        spread = std::max(spread, d.norm());
    }
    const double scale = std::max(1.0, mean.norm());
    require(spread > 1e-12 * scale, ErrorKind::DegenerateNeighborhood, "all neighborhood points coincide");

    Eigen::SelfAdjointEigenSolver<Mat3> solver(cov);
    const Eigen::Vector3d values = solver.eigenvalues();  // ascending
    Vec3 normal = solver.eigenvectors().col(0).normalized();
    double confidence = 0.0;
    if (values[1] > 0.0) {
        confidence = std::clamp(1.0 - std::max(values[0], 0.0) / values[1], 0.0, 1.0);
    }
    return PcaNormal{canonical_sign(normal), confidence};
}

SurfaceSamples area_weighted_samples(const TriangleMesh& mesh, std::size_t count, std::uint64_t seed)
{
    require(mesh.face_count() > 0, ErrorKind::InvalidArgument, "mesh has no faces");
    std::vector<double> cdf(mesh.face_count());
    double total = 0.0;
    for (std::size_t f = 0; f < mesh.face_count(); ++f) {
        total += mesh.face_area(f);
        cdf[f] = total;
    }
    require(total > 0.0, ErrorKind::InvalidArgument, "mesh has zero surface area");

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    SurfaceSamples out;
    out.points.reserve(count);
    out.faces.reserve(count);
    for (std::size_t s = 0; s < count; ++s) {
        const double pick = uni(rng) * total;
        auto it = std::upper_bound(cdf.begin(), cdf.end(), pick);
        const std::size_t f = std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1);
        // sqrt warp gives uniform barycentrics
        const double r1 = std::sqrt(uni(rng));
        const double r2 = uni(rng);
        const Face& face = mesh.faces()[f];
        const Vec3& a = mesh.vertices()[face[0]];
        const Vec3& b = mesh.vertices()[face[1]];
        const Vec3& c = mesh.vertices()[face[2]];
        out.points.push_back((1.0 - r1) * a + r1 * (1.0 - r2) * b + r1 * r2 * c);
        out.faces.push_back(f);
    }
    return out;
}

namespace {

class DartGrid {
public:
    explicit DartGrid(double radius) : radius_(radius), cell_(radius > 0.0 ? radius : 1.0) {}

    bool try_insert(const Vec3& p)
    {
        const auto [ix, iy, iz] = cell_of(p);
        if (radius_ > 0.0) {
            for (long dx = -1; dx <= 1; ++dx) {
                for (long dy = -1; dy <= 1; ++dy) {
                    for (long dz = -1; dz <= 1; ++dz) {
                        auto it = cells_.find(key(ix + dx, iy + dy, iz + dz));
                        if (it == cells_.end()) {
                            continue;
                        }
                        for (const Vec3& q : it->second) {
                            if ((p - q).norm() < radius_) {
                                return false;
                            }
                        }
                    }
                }
            }
        }
        cells_[key(ix, iy, iz)].push_back(p);
        return true;
    }

private:
    std::tuple<long, long, long> cell_of(const Vec3& p) const
    {
        return {static_cast<long>(std::floor(p.x() / cell_)), static_cast<long>(std::floor(p.y() / cell_)),
                static_cast<long>(std::floor(p.z() / cell_))};
    }

    static std::uint64_t key(long x, long y, long z)
    {
        const auto h = [](long v) { return static_cast<std::uint64_t>(v) & 0x1FFFFFull; };
        return (h(x) << 42) | (h(y) << 21) | h(z);
    }

    double radius_;
    double cell_;
    std::unordered_map<std::uint64_t, std::vector<Vec3>> cells_;
};

// Indices of pool candidates surviving dart throwing, stopping at `target`.
std::vector<std::size_t> throw_darts(const SurfaceSamples& pool, double radius, std::size_t target)
{
    DartGrid grid(radius);
    std::vector<std::size_t> kept;
    kept.reserve(target);
    for (std::size_t i = 0; i < pool.points.size() && kept.size() < target; ++i) {
        if (grid.try_insert(pool.points[i])) {
            kept.push_back(i);
        }
    }
    return kept;
}

MeshSampleResult assemble(const TriangleMesh& mesh, const SurfaceSamples& pool,
                          const std::vector<std::size_t>& kept, double radius)
{
    MeshSampleResult result;
    std::vector<Vec3> pts;
    std::vector<Vec3> normals;
    pts.reserve(kept.size());
    normals.reserve(kept.size());
    for (std::size_t i : kept) {
        pts.push_back(pool.points[i]);
        normals.push_back(mesh.face_normal(pool.faces[i]));
        result.faces.push_back(pool.faces[i]);
    }
    result.cloud = PointCloud(std::move(pts), std::move(normals));
    result.radius = radius;
    return result;
}

} // namespace

MeshSampleResult sample_mesh(const TriangleMesh& mesh, const MeshSampleOptions& options)
{
    mesh.validate();
    require(options.target_count >= 1, ErrorKind::InvalidArgument, "target_count must be >= 1");
    const std::size_t target = options.target_count;
    const std::size_t budget = std::max<std::size_t>(options.candidate_factor, 1) * target;
    const SurfaceSamples pool = area_weighted_samples(mesh, budget, options.seed);

    if (options.radius) {
        const double radius = *options.radius;
        require(radius >= 0.0, ErrorKind::InvalidArgument, "blue-noise radius must be non-negative");
        auto kept = throw_darts(pool, radius, target);
        if (kept.size() < target) {
            fail(ErrorKind::Unreachable, "sample_mesh: radius " + std::to_string(radius) + " reached only " +
                                             std::to_string(kept.size()) + " of " + std::to_string(target) +
                                             " points");
        }
        return assemble(mesh, pool, kept, radius);
    }

    // Hexagonal packing bounds the largest feasible radius from above.
    const double area = mesh.surface_area();
    double hi = std::sqrt(2.0 * area / (std::sqrt(3.0) * static_cast<double>(target)));
    double lo = 0.0;
    std::vector<std::size_t> best = throw_darts(pool, 0.0, target);
    require(best.size() == target, ErrorKind::Unreachable, "candidate pool smaller than target");
    double best_radius = 0.0;
    for (int step = 0; step < 22; ++step) {
        const double mid = 0.5 * (lo + hi);
        auto kept = throw_darts(pool, mid, target);
        if (kept.size() >= target) {
            lo = mid;
            best = std::move(kept);
            best_radius = mid;
        } else {
            hi = mid;
        }
    }
    return assemble(mesh, pool, best, best_radius);
}

} // namespace crossup::geometry
