#pragma once

#include "crossup/geometry/mesh.hpp"
#include "crossup/geometry/point_cloud.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace crossup::training {

using geometry::PointCloud;
using geometry::TriangleMesh;
using geometry::Vec3;

/// One training example: a sparse input patch and its dense ground truth,
/// both carrying surface normals. Every input point is also a gt point.
struct PatchPair {
    PointCloud input;
    PointCloud gt;
    std::string shape;
    std::uint64_t seed = 0;
};

struct DatasetOptions {
    std::size_t base_points = 20000;      // Poisson-disk samples per shape
    std::size_t patches_per_shape = 100;
    std::size_t gt_points = 512;          // reference setting 4096
    std::size_t input_points = 64;        // reference setting 256
    double crop_fraction = 0.05;          // patch share of the base cloud
    std::uint64_t seed = 0;
};

struct NamedMesh {
    std::string name;
    TriangleMesh mesh;
};

/// Per shape: blue-noise base cloud, FPS patch seeds, k-NN crops, FPS to
/// gt_points and a random input subset. Shapes that cannot supply a patch are
/// skipped with a warning on `log`.
std::vector<PatchPair> make_dataset(const std::vector<NamedMesh>& meshes, const DatasetOptions& options,
                                    std::ostream* log = nullptr);

/// Deterministic shuffled split in the proportion train_parts : val_parts.
/// The validation side gets round(n * val / (train + val)) pairs, at least one
/// when n >= 2.
std::pair<std::vector<PatchPair>, std::vector<PatchPair>> split(const std::vector<PatchPair>& data,
                                                                std::uint64_t seed, std::size_t train_parts = 10,
                                                                std::size_t val_parts = 1);

void write_dataset(std::ostream& out, const std::vector<PatchPair>& data);
std::vector<PatchPair> read_dataset(std::istream& in);
void save_dataset(const std::filesystem::path& path, const std::vector<PatchPair>& data);
std::vector<PatchPair> load_dataset(const std::filesystem::path& path);

} // namespace crossup::training
