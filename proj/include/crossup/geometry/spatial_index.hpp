#pragma once

#include "crossup/geometry/point_cloud.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace crossup::geometry {

struct Neighbor {
    std::size_t index;
    double distance;

    friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

/// Radius query parameters. When fewer than `min_count` points fall inside
/// the ball the query degrades to a plain k-NN with k = cap, so callers
/// always receive a usable stencil.
struct RadiusQuery {
    double radius = 0.0;
    std::size_t cap = 48;
    std::size_t min_count = 4;
};

/// Immutable kd-tree over a copy of the input positions.
///
/// Results are exact: every query returns the same index set as a linear scan,
/// ordered by (distance, index). Safe for concurrent readers.
class SpatialIndex {
public:
    SpatialIndex() = default;
    explicit SpatialIndex(std::span<const Vec3> points, std::size_t leaf_size = 8);
    explicit SpatialIndex(const PointCloud& cloud, std::size_t leaf_size = 8)
        : SpatialIndex(std::span<const Vec3>(cloud.points()), leaf_size)
    {}

    std::size_t size() const noexcept { return points_.size(); }
    bool empty() const noexcept { return points_.empty(); }
    const Vec3& point(std::size_t i) const { return points_[i]; }

    /// min(k, n) nearest points, ascending by distance, ties by lower index.
    std::vector<Neighbor> knn(const Vec3& query, std::size_t k) const;

    /// Nearest point only (ties by lower index).
    Neighbor nearest(const Vec3& query) const;

    /// In-ball points nearest-first, at most `cap`; see RadiusQuery for the
    /// fallback rule.
    std::vector<std::size_t> radius_neighbors(const Vec3& query, const RadiusQuery& q) const;

    /// Every point with distance <= radius, ordered by (distance, index).
    std::vector<Neighbor> within(const Vec3& query, double radius) const;

private:
    struct Node {
        std::size_t begin = 0;
        std::size_t end = 0;
        std::size_t left = 0;  // 0 marks a leaf; the root is never a child
        std::size_t right = 0;
        Vec3 box_min = Vec3::Zero();
        Vec3 box_max = Vec3::Zero();
    };

    std::size_t build(std::size_t begin, std::size_t end);
    double box_distance2(const Node& node, const Vec3& q) const;

    std::vector<Vec3> points_;
    std::vector<std::size_t> order_;
    std::vector<Node> nodes_;
    std::size_t leaf_size_ = 8;
};

/// k-NN graph over a cloud, excluding each point itself. Row i holds the
/// neighbor indices of point i.
std::vector<std::vector<std::size_t>> knn_graph(const SpatialIndex& index, std::size_t k);

} // namespace crossup::geometry
