#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace crossup::geometry {

using Vec3 = Eigen::Vector3d;
using Vec2 = Eigen::Vector2d;
using Mat3 = Eigen::Matrix3d;

/// Ordered 3D point set with optional unit normals and fixed-width attributes.
///
/// Positions are the only required channel. When normals or attributes are
/// present they have exactly one entry per point.
class PointCloud {
public:
    PointCloud() = default;
    explicit PointCloud(std::vector<Vec3> points);
    PointCloud(std::vector<Vec3> points, std::vector<Vec3> normals);

    std::size_t size() const noexcept { return points_.size(); }
    bool empty() const noexcept { return points_.empty(); }

    const std::vector<Vec3>& points() const noexcept { return points_; }
    std::vector<Vec3>& points() noexcept { return points_; }
    const Vec3& operator[](std::size_t i) const { return points_[i]; }

    bool has_normals() const noexcept { return normals_.has_value(); }
    const std::vector<Vec3>& normals() const;
    void set_normals(std::vector<Vec3> normals);
    void clear_normals() { normals_.reset(); }

    bool has_attrs() const noexcept { return attr_width_ > 0; }
    std::size_t attr_width() const noexcept { return attr_width_; }
    /// Row-major attributes, size() * attr_width() values.
    std::span<const double> attrs() const noexcept { return attrs_; }
    std::span<const double> attr(std::size_t i) const;
    void set_attrs(std::size_t width, std::vector<double> values);

    void push_back(const Vec3& p);
    void push_back(const Vec3& p, const Vec3& n);

    /// Subset in the given order; carries normals and attributes along.
    PointCloud select(std::span<const std::size_t> indices) const;

    /// Throws when any invariant (finite coordinates, unit normals,
    /// matching lengths) is violated.
    void validate() const;
    bool is_valid() const noexcept;

private:
    std::vector<Vec3> points_;
    std::optional<std::vector<Vec3>> normals_;
    std::size_t attr_width_ = 0;
    std::vector<double> attrs_;
};

struct Aabb {
    Vec3 min = Vec3::Zero();
    Vec3 max = Vec3::Zero();

    double diagonal() const { return (max - min).norm(); }
    Vec3 center() const { return 0.5 * (min + max); }
    Vec3 extent() const { return max - min; }
    bool contains(const Vec3& p, double dilation = 0.0) const;
};

Aabb bounding_box(std::span<const Vec3> points);
inline Aabb bounding_box(const PointCloud& cloud) { return bounding_box(cloud.points()); }

Vec3 centroid(std::span<const Vec3> points);

} // namespace crossup::geometry
