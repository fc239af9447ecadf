#include "crossup/geometry/shapes.hpp"

#include "crossup/error.hpp"

#include <cmath>
#include <map>
#include <numbers>
#include <utility>

namespace crossup::geometry::shapes {

namespace {

using std::numbers::pi;

// Surface of revolution about z. The profile runs from the bottom pole to the
// top pole; both ends must have radius 0.
TriangleMesh revolve(const std::vector<Vec2>& profile, int segments)
{
    std::vector<Vec3> vertices;
    std::vector<Face> faces;
    vertices.emplace_back(0.0, 0.0, profile.front().y());
    const std::size_t rings = profile.size() - 2;
    for (std::size_t r = 1; r + 1 < profile.size(); ++r) {
        for (int s = 0; s < segments; ++s) {
            const double a = 2.0 * pi * s / segments;
            vertices.emplace_back(profile[r].x() * std::cos(a), profile[r].x() * std::sin(a), profile[r].y());
        }
    }
    const std::size_t top = vertices.size();
    vertices.emplace_back(0.0, 0.0, profile.back().y());

    auto ring = [&](std::size_t r, int s) { return 1 + r * segments + static_cast<std::size_t>(s % segments); };
    for (int s = 0; s < segments; ++s) {
        faces.push_back({0, ring(0, s + 1), ring(0, s)});
    }
    for (std::size_t r = 0; r + 1 < rings; ++r) {
        for (int s = 0; s < segments; ++s) {
            faces.push_back({ring(r, s), ring(r, s + 1), ring(r + 1, s + 1)});
            faces.push_back({ring(r, s), ring(r + 1, s + 1), ring(r + 1, s)});
        }
    }
    for (int s = 0; s < segments; ++s) {
        faces.push_back({top, ring(rings - 1, s), ring(rings - 1, s + 1)});
    }
    return TriangleMesh(std::move(vertices), std::move(faces));
}

TriangleMesh finish(TriangleMesh mesh)
{
    mesh.remove_degenerate_faces();
    fit_unit_sphere(mesh);
    return mesh;
}

} // namespace

void fit_unit_sphere(TriangleMesh& mesh)
{
    const Aabb box = bounding_box(mesh.vertices());
    const Vec3 center = box.center();
    double radius = 0.0;
    for (const Vec3& v : mesh.vertices()) {
        radius = std::max(radius, (v - center).norm());
    }
    require(radius > 0.0, ErrorKind::InvalidArgument, "mesh collapses to a point");
    mesh.normalize(center, 1.0 / radius);
}

TriangleMesh sphere(int subdivisions)
{
    const double t = (1.0 + std::sqrt(5.0)) / 2.0;
    std::vector<Vec3> v = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                           {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
    for (Vec3& p : v) {
        p.normalize();
    }
    std::vector<Face> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
                           {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
                           {3, 8, 9},  {4, 9, 5},  {2, 4, 11}, {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
    for (int level = 0; level < subdivisions; ++level) {
        std::map<std::pair<std::size_t, std::size_t>, std::size_t> midpoints;
        auto mid = [&](std::size_t a, std::size_t b) {
            auto key = std::minmax(a, b);
            auto it = midpoints.find(key);
            if (it != midpoints.end()) {
                return it->second;
            }
            v.push_back((v[a] + v[b]).normalized());
            midpoints.emplace(key, v.size() - 1);
            return v.size() - 1;
        };
        std::vector<Face> next;
        next.reserve(f.size() * 4);
        for (const Face& face : f) {
            const std::size_t ab = mid(face[0], face[1]);
            const std::size_t bc = mid(face[1], face[2]);
            const std::size_t ca = mid(face[2], face[0]);
            next.push_back({face[0], ab, ca});
            next.push_back({face[1], bc, ab});
            next.push_back({face[2], ca, bc});
            next.push_back({ab, bc, ca});
        }
        f = std::move(next);
    }
    return finish(TriangleMesh(std::move(v), std::move(f)));
}

TriangleMesh box(double sx, double sy, double sz)
{
    std::vector<Vec3> v;
    for (int i = 0; i < 8; ++i) {
        v.emplace_back((i & 1 ? 0.5 : -0.5) * sx, (i & 2 ? 0.5 : -0.5) * sy, (i & 4 ? 0.5 : -0.5) * sz);
    }
    std::vector<Face> f = {{0, 2, 3}, {0, 3, 1}, {4, 5, 7}, {4, 7, 6}, {0, 1, 5}, {0, 5, 4},
                           {2, 6, 7}, {2, 7, 3}, {0, 4, 6}, {0, 6, 2}, {1, 3, 7}, {1, 7, 5}};
    return finish(TriangleMesh(std::move(v), std::move(f)));
}

TriangleMesh cube()
{
    return box(1.0, 1.0, 1.0);
}

TriangleMesh cylinder(int segments)
{
    return finish(revolve({{0.0, -1.0}, {1.0, -1.0}, {1.0, 1.0}, {0.0, 1.0}}, segments));
}

TriangleMesh cone(int segments)
{
    return finish(revolve({{0.0, -0.8}, {1.0, -0.8}, {0.5, 0.4}, {0.0, 1.6}}, segments));
}

TriangleMesh torus(double major, double minor, int segments, int rings)
{
    std::vector<Vec3> v;
    std::vector<Face> f;
    for (int i = 0; i < segments; ++i) {
        const double u = 2.0 * pi * i / segments;
        for (int j = 0; j < rings; ++j) {
            const double w = 2.0 * pi * j / rings;
            const double r = major + minor * std::cos(w);
            v.emplace_back(r * std::cos(u), r * std::sin(u), minor * std::sin(w));
        }
    }
    auto at = [&](int i, int j) {
        return static_cast<std::size_t>((i % segments) * rings + (j % rings));
    };
    for (int i = 0; i < segments; ++i) {
        for (int j = 0; j < rings; ++j) {
            f.push_back({at(i, j), at(i + 1, j), at(i + 1, j + 1)});
            f.push_back({at(i, j), at(i + 1, j + 1), at(i, j + 1)});
        }
    }
    return finish(TriangleMesh(std::move(v), std::move(f)));
}

TriangleMesh octahedron()
{
    std::vector<Vec3> v = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    std::vector<Face> f = {{0, 2, 4}, {2, 1, 4}, {1, 3, 4}, {3, 0, 4}, {2, 0, 5}, {1, 2, 5}, {3, 1, 5}, {0, 3, 5}};
    return finish(TriangleMesh(std::move(v), std::move(f)));
}

TriangleMesh ellipsoid(double ax, double ay, double az)
{
    TriangleMesh s = sphere(3);
    std::vector<Vec3> v = s.vertices();
    for (Vec3& p : v) {
        p = Vec3(ax * p.x(), ay * p.y(), az * p.z());
    }
    return finish(TriangleMesh(std::move(v), s.faces()));
}

TriangleMesh capsule(int segments)
{
    std::vector<Vec2> profile;
    const int cap_steps = 12;
    const double radius = 0.5;
    const double half = 0.6;
    for (int i = 0; i <= cap_steps; ++i) {
        const double a = -pi / 2 + (pi / 2) * i / cap_steps;
        profile.emplace_back(radius * std::cos(a), -half + radius * std::sin(a));
    }
    for (int i = 0; i <= cap_steps; ++i) {
        const double a = (pi / 2) * i / cap_steps;
        profile.emplace_back(radius * std::cos(a), half + radius * std::sin(a));
    }
    profile.front().x() = 0.0;
    profile.back().x() = 0.0;
    return finish(revolve(profile, segments));
}

TriangleMesh l_prism()
{
    const std::vector<Vec2> outline = {{0, 0}, {2, 0}, {2, 1}, {1, 1}, {1, 2}, {0, 2}};
    const double depth = 0.6;
    std::vector<Vec3> v;
    for (const Vec2& p : outline) {
        v.emplace_back(p.x(), p.y(), 0.0);
    }
    for (const Vec2& p : outline) {
        v.emplace_back(p.x(), p.y(), depth);
    }
    const std::size_t n = outline.size();
    std::vector<Face> f;
    // caps: the outline is star-shaped from vertex 0
    for (std::size_t k = 1; k + 1 < n; ++k) {
        f.push_back({0, k + 1, k});
        f.push_back({n, n + k, n + k + 1});
    }
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t a = k;
        const std::size_t b = (k + 1) % n;
        f.push_back({a, b, n + b});
        f.push_back({a, n + b, n + a});
    }
    return finish(TriangleMesh(std::move(v), std::move(f)));
}

std::vector<std::string> names()
{
    return {"sphere", "cube", "cylinder", "cone", "torus", "octahedron", "ellipsoid", "flat_box", "capsule", "l_prism"};
}

std::vector<std::string> desk_training_names()
{
    return {"sphere", "cube", "cylinder", "cone", "torus", "octahedron", "ellipsoid", "flat_box"};
}

std::vector<std::string> desk_holdout_names()
{
    return {"capsule", "l_prism"};
}

TriangleMesh by_name(const std::string& name)
{
    if (name == "sphere") return sphere();
    if (name == "cube") return cube();
    if (name == "cylinder") return cylinder();
    if (name == "cone") return cone();
    if (name == "torus") return torus();
    if (name == "octahedron") return octahedron();
    if (name == "ellipsoid") return ellipsoid();
    if (name == "flat_box") return box(1.0, 0.6, 0.3);
    if (name == "capsule") return capsule();
    if (name == "l_prism") return l_prism();
    fail(ErrorKind::InvalidArgument, "unknown shape: " + name);
}

} // namespace crossup::geometry::shapes
