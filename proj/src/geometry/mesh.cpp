#include "crossup/geometry/mesh.hpp"

#include "crossup/error.hpp"

#include <string>

namespace crossup::geometry {

TriangleMesh::TriangleMesh(std::vector<Vec3> vertices, std::vector<Face> faces)
    : vertices_(std::move(vertices)), faces_(std::move(faces))
{
    for (const Face& f : faces_) {
        for (std::size_t v : f) {
            require(v < vertices_.size(), ErrorKind::InvalidArgument,
                    "face references vertex " + std::to_string(v) + " out of range");
        }
    }
}

double TriangleMesh::face_area(std::size_t f) const
{
    const Face& face = faces_[f];
    const Vec3& a = vertices_[face[0]];
    return 0.5 * (vertices_[face[1]] - a).cross(vertices_[face[2]] - a).norm();
}

Vec3 TriangleMesh::face_normal(std::size_t f) const
{
    const Face& face = faces_[f];
    const Vec3& a = vertices_[face[0]];
    Vec3 n = (vertices_[face[1]] - a).cross(vertices_[face[2]] - a);
    double len = n.norm();
    return len > 0.0 ? Vec3(n / len) : Vec3::Zero();
}

double TriangleMesh::surface_area() const
{
    double total = 0.0;
    for (std::size_t f = 0; f < faces_.size(); ++f) {
        total += face_area(f);
    }
    return total;
}

std::size_t TriangleMesh::remove_degenerate_faces(double area_eps)
{
    std::vector<Face> kept;
    kept.reserve(faces_.size());
    for (std::size_t f = 0; f < faces_.size(); ++f) {
        if (face_area(f) > area_eps) {
            kept.push_back(faces_[f]);
        }
    }
    std::size_t removed = faces_.size() - kept.size();
    faces_ = std::move(kept);
    return removed;
}

void TriangleMesh::validate() const
{
    require(!faces_.empty(), ErrorKind::InvalidArgument, "mesh has no faces");
    for (std::size_t f = 0; f < faces_.size(); ++f) {
        for (std::size_t v : faces_[f]) {
            require(v < vertices_.size(), ErrorKind::InvalidArgument, "face index out of range");
        }
        require(face_area(f) > 0.0, ErrorKind::InvalidArgument,
                "face " + std::to_string(f) + " has zero area");
    }
}

void TriangleMesh::normalize(const Vec3& center, double scale)
{
    for (Vec3& v : vertices_) {
        v = scale * (v - center);
    }
}

// Real-Time Collision Detection (Ericson), section 5.1.5.
Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c)
{
    const Vec3 ab = b - a;
    const Vec3 ac = c - a;
    const Vec3 ap = p - a;
    const double d1 = ab.dot(ap);
    const double d2 = ac.dot(ap);
    if (d1 <= 0.0 && d2 <= 0.0) {
        return a;
    }

    const Vec3 bp = p - b;
    const double d3 = ab.dot(bp);
    const double d4 = ac.dot(bp);
    if (d3 >= 0.0 && d4 <= d3) {
        return b;
    }

    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
        return a + (d1 / (d1 - d3)) * ab;
    }

    const Vec3 cp = p - c;
    const double d5 = ab.dot(cp);
    const double d6 = ac.dot(cp);
    if (d6 >= 0.0 && d5 <= d6) {
        return c;
    }

    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
        return a + (d2 / (d2 - d6)) * ac;
    }

    const double va = d3 * d6 - d5 * d4;
    if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
        return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);
    }

    const double denom = 1.0 / (va + vb + vc);
    return a + ab * (vb * denom) + ac * (vc * denom);
}

} // namespace crossup::geometry
