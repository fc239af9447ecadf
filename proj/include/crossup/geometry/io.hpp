#pragma once

#include "crossup/geometry/mesh.hpp"
#include "crossup/geometry/point_cloud.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace crossup::geometry::io {

// ASCII formats only. Floats are written with 9 significant digits.

PointCloud read_xyz(std::istream& in);
void write_xyz(std::ostream& out, const PointCloud& cloud);

/// Reads the `vertex` element (x y z and, when all present, nx ny nz).
/// Other vertex properties land in the attribute channel in header order;
/// other elements are skipped.
PointCloud read_ply(std::istream& in);
/// Writes x y z [nx ny nz] followed by attributes named by `attr_names`.
void write_ply(std::ostream& out, const PointCloud& cloud, const std::vector<std::string>& attr_names = {});

/// `v` and `f` records only; polygons are fan-triangulated.
TriangleMesh read_obj(std::istream& in);
void write_obj(std::ostream& out, const TriangleMesh& mesh);

/// Dispatch on extension (.xyz, .ply).
PointCloud read_cloud(const std::filesystem::path& path);
void write_cloud(const std::filesystem::path& path, const PointCloud& cloud);
TriangleMesh read_mesh(const std::filesystem::path& path);
void write_mesh(const std::filesystem::path& path, const TriangleMesh& mesh);

/// "%.9g" formatting used by every writer.
std::string format_real(double value);

} // namespace crossup::geometry::io
