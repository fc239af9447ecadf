#pragma once

#include "crossup/geometry/point_cloud.hpp"

#include <array>
#include <cstddef>
#include <vector>

namespace crossup::geometry {

using Face = std::array<std::size_t, 3>;

class TriangleMesh {
public:
    TriangleMesh() = default;
    TriangleMesh(std::vector<Vec3> vertices, std::vector<Face> faces);

    const std::vector<Vec3>& vertices() const noexcept { return vertices_; }
    const std::vector<Face>& faces() const noexcept { return faces_; }
    std::size_t face_count() const noexcept { return faces_.size(); }

    double face_area(std::size_t f) const;
    /// Unit normal by the right-hand rule; zero for a degenerate face.
    Vec3 face_normal(std::size_t f) const;
    double surface_area() const;

    /// Drops faces whose area is <= area_eps. Returns how many were removed.
    std::size_t remove_degenerate_faces(double area_eps = 1e-14);

    /// Indices in range and at least one face, and no zero-area face.
    void validate() const;

    /// Applies p -> scale * (p - center) to every vertex.
    void normalize(const Vec3& center, double scale);

private:
    std::vector<Vec3> vertices_;
    std::vector<Face> faces_;
};

/// Closest point on triangle (a, b, c) to p. Handles face, edge and vertex
/// regions.
Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

} // namespace crossup::geometry
