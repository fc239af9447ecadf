#pragma once

#include "crossup/geometry/mesh.hpp"

#include <string>
#include <vector>

namespace crossup::geometry::shapes {

// Procedural meshes used for desk-scale datasets and tests. Every shape is
// centered at its bounding-box center and scaled to fit the unit sphere.

TriangleMesh sphere(int subdivisions = 3);
TriangleMesh cube();
TriangleMesh box(double sx, double sy, double sz);
TriangleMesh cylinder(int segments = 48);
TriangleMesh cone(int segments = 48);
TriangleMesh torus(double major = 1.0, double minor = 0.35, int segments = 48, int rings = 24);
TriangleMesh octahedron();
TriangleMesh ellipsoid(double ax = 1.0, double ay = 0.7, double az = 0.5);
TriangleMesh capsule(int segments = 48);
TriangleMesh l_prism();

/// Lookup by name; throws on an unknown name.
TriangleMesh by_name(const std::string& name);

std::vector<std::string> names();
/// Eight shapes used for the desk-scale training preset.
std::vector<std::string> desk_training_names();
/// Two shapes never seen in training.
std::vector<std::string> desk_holdout_names();

/// Center on the bounding-box center and scale the farthest vertex to radius 1.
void fit_unit_sphere(TriangleMesh& mesh);

} // namespace crossup::geometry::shapes
