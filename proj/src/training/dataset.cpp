#include "crossup/training/dataset.hpp"

#include "crossup/error.hpp"
#include "crossup/geometry/io.hpp"
#include "crossup/geometry/sampling.hpp"
#include "crossup/geometry/spatial_index.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

namespace crossup::training {

std::vector<PatchPair> make_dataset(const std::vector<NamedMesh>& meshes, const DatasetOptions& opt, std::ostream* log)
{
    require(opt.input_points >= 1 && opt.input_points <= opt.gt_points, ErrorKind::InvalidArgument,
            "input_points must be in [1, gt_points]");
    require(opt.crop_fraction > 0.0 && opt.crop_fraction <= 1.0, ErrorKind::InvalidArgument,
            "crop_fraction must be in (0, 1]");
    require(opt.patches_per_shape >= 1, ErrorKind::InvalidArgument, "need at least one patch per shape");

    std::vector<PatchPair> out;
    for (std::size_t s = 0; s < meshes.size(); ++s) {
        const auto& [name, mesh] = meshes[s];
        const std::uint64_t shape_seed = opt.seed * 1000003ULL + s;
        geometry::MeshSampleResult base;
        try {
            mesh.validate();
            base = geometry::sample_mesh(mesh, {opt.base_points, std::nullopt, shape_seed, 10});
        } catch (const Error& e) {
            if (log) *log << "warning: skipping shape " << name << ": " << e.what() << '\n';
            continue;
        }
        const auto crop = static_cast<std::size_t>(std::llround(opt.crop_fraction * static_cast<double>(opt.base_points)));
        if (crop < opt.gt_points || opt.patches_per_shape > opt.base_points) {
            if (log) {
                *log << "warning: skipping shape " << name << ": a " << crop << "-point crop cannot supply "
                     << opt.gt_points << " gt points\n";
            }
            continue;
        }

        const auto& pts = base.cloud.points();
        const auto& nrm = base.cloud.normals();
        std::mt19937_64 rng(shape_seed);
        std::uniform_int_distribution<std::size_t> pick(0, pts.size() - 1);
        const auto seeds = geometry::fps(pts, opt.patches_per_shape, pick(rng));
        const geometry::SpatialIndex index(pts);
        for (std::size_t seed_point : seeds) {
            std::vector<Vec3> cp, cn;
            for (const auto& nb : index.knn(pts[seed_point], crop)) {
                cp.push_back(pts[nb.index]);
                cn.push_back(nrm[nb.index]);
            }
            // The crop starts at its seed point, so FPS from index 0.
            const auto gt_idx = geometry::fps(cp, opt.gt_points, 0);
            std::vector<Vec3> gp, gn;
            for (std::size_t i : gt_idx) {
                gp.push_back(cp[i]);
                gn.push_back(cn[i]);
            }
            std::vector<std::size_t> perm(gp.size());
            std::iota(perm.begin(), perm.end(), 0);
            std::shuffle(perm.begin(), perm.end(), rng);
            perm.resize(opt.input_points);
            std::sort(perm.begin(), perm.end());
            std::vector<Vec3> ip, in;
            for (std::size_t i : perm) {
                ip.push_back(gp[i]);
                in.push_back(gn[i]);
            }
            out.push_back(PatchPair{PointCloud(std::move(ip), std::move(in)), PointCloud(std::move(gp), std::move(gn)),
                                    name, static_cast<std::uint64_t>(seed_point)});
        }
        if (log) *log << "shape " << name << ": " << seeds.size() << " patches\n";
    }
    return out;
}

std::pair<std::vector<PatchPair>, std::vector<PatchPair>> split(const std::vector<PatchPair>& data,
                                                                std::uint64_t seed, std::size_t train_parts,
                                                                std::size_t val_parts)
{
    require(train_parts >= 1, ErrorKind::InvalidArgument, "split needs a training share");
    const std::size_t n = data.size();
    std::size_t n_val = static_cast<std::size_t>(
        std::llround(static_cast<double>(n * val_parts) / static_cast<double>(train_parts + val_parts)));
    if (val_parts > 0 && n >= 2) n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::pair<std::vector<PatchPair>, std::vector<PatchPair>> out;
    for (std::size_t k = 0; k < n; ++k) {
        (k < n_val ? out.second : out.first).push_back(data[order[k]]);
    }
    return out;
}

namespace {

void write_points(std::ostream& out, const PointCloud& c)
{
    using geometry::io::format_real;
    for (std::size_t i = 0; i < c.size(); ++i) {
        const Vec3& p = c[i];
        const Vec3& n = c.normals()[i];
        out << format_real(p.x()) << ' ' << format_real(p.y()) << ' ' << format_real(p.z()) << ' '
            << format_real(n.x()) << ' ' << format_real(n.y()) << ' ' << format_real(n.z()) << '\n';
    }
}

PointCloud read_points(std::istream& in, std::size_t count)
{
    std::vector<Vec3> p(count), n(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::string line;
        require(static_cast<bool>(std::getline(in, line)), ErrorKind::Parse, "dataset truncated");
        std::istringstream ls(line);
        ls >> p[i].x() >> p[i].y() >> p[i].z() >> n[i].x() >> n[i].y() >> n[i].z();
        require(!ls.fail(), ErrorKind::Parse, "bad dataset point line: " + line);
        // Normals were rounded to 9 digits on the way out.
        n[i].normalize();
    }
    return PointCloud(std::move(p), std::move(n));
}

} // namespace

void write_dataset(std::ostream& out, const std::vector<PatchPair>& data)
{
    out << "crossup-dataset 1\n" << "patches " << data.size() << '\n';
    for (const auto& pair : data) {
        require(pair.input.has_normals() && pair.gt.has_normals(), ErrorKind::InvalidArgument,
                "dataset patches must carry normals");
        require(pair.shape.find_first_of(" \t\n") == std::string::npos && !pair.shape.empty(),
                ErrorKind::InvalidArgument, "shape names must be single non-empty tokens");
        out << "patch " << pair.shape << ' ' << pair.seed << ' ' << pair.input.size() << ' ' << pair.gt.size() << '\n';
        write_points(out, pair.input);
        write_points(out, pair.gt);
    }
}

std::vector<PatchPair> read_dataset(std::istream& in)
{
    std::string line;
    require(std::getline(in, line) && line == "crossup-dataset 1", ErrorKind::Parse, "not a dataset file");
    require(static_cast<bool>(std::getline(in, line)), ErrorKind::Parse, "dataset header truncated");
    std::istringstream hs(line);
    std::string tag;
    std::size_t count = 0;
    hs >> tag >> count;
    require(!hs.fail() && tag == "patches", ErrorKind::Parse, "bad dataset header: " + line);
    std::vector<PatchPair> data;
    data.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
        require(static_cast<bool>(std::getline(in, line)), ErrorKind::Parse, "dataset truncated");
        std::istringstream ps(line);
        PatchPair pair;
        std::size_t n_in = 0, n_gt = 0;
        ps >> tag >> pair.shape >> pair.seed >> n_in >> n_gt;
        require(!ps.fail() && tag == "patch", ErrorKind::Parse, "bad patch header: " + line);
        pair.input = read_points(in, n_in);
        pair.gt = read_points(in, n_gt);
        data.push_back(std::move(pair));
    }
    return data;
}

void save_dataset(const std::filesystem::path& path, const std::vector<PatchPair>& data)
{
    std::ofstream out(path);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot open " + path.string() + " for writing");
    write_dataset(out, data);
    require(static_cast<bool>(out), ErrorKind::Io, "failed writing " + path.string());
}

std::vector<PatchPair> load_dataset(const std::filesystem::path& path)
{
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path.string());
    return read_dataset(in);
}

} // namespace crossup::training
