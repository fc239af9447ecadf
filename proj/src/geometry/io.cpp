#include "crossup/geometry/io.hpp"

#include "crossup/error.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace crossup::geometry::io {

namespace {

std::string lower_ext(const std::filesystem::path& path)
{
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext;
}

std::ifstream open_in(const std::filesystem::path& path)
{
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path.string() + " for reading");
    return in;
}

std::ofstream open_out(const std::filesystem::path& path)
{
    std::ofstream out(path);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot open " + path.string() + " for writing");
    return out;
}

double parse_real(const std::string& token, std::size_t line)
{
    try {
        std::size_t used = 0;
        double v = std::stod(token, &used);
        require(used == token.size(), ErrorKind::Parse, "");
        return v;
    } catch (const std::exception&) {
        fail(ErrorKind::Parse, "line " + std::to_string(line) + ": '" + token + "' is not a number");
    }
}

} // namespace

std::string format_real(double value)
{
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", value);
    return buf;
}

PointCloud read_xyz(std::istream& in)
{
    std::vector<Vec3> points;
    std::vector<Vec3> normals;
    std::string line;
    std::size_t lineno = 0;
    int columns = -1;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ss(line);
        std::vector<std::string> tokens;
        for (std::string t; ss >> t;) {
            tokens.push_back(t);
        }
        if (tokens.empty() || tokens[0][0] == '#') {
            continue;
        }
        require(tokens.size() == 3 || tokens.size() == 6, ErrorKind::Parse,
                "line " + std::to_string(lineno) + ": expected 3 or 6 values");
        if (columns < 0) {
            columns = static_cast<int>(tokens.size());
        }
        require(static_cast<int>(tokens.size()) == columns, ErrorKind::Parse,
                "line " + std::to_string(lineno) + ": inconsistent column count");
        points.emplace_back(parse_real(tokens[0], lineno), parse_real(tokens[1], lineno),
                            parse_real(tokens[2], lineno));
        if (columns == 6) {
            normals.emplace_back(parse_real(tokens[3], lineno), parse_real(tokens[4], lineno),
                                 parse_real(tokens[5], lineno));
        }
    }
    PointCloud cloud(std::move(points));
    if (columns == 6) {
        cloud.set_normals(std::move(normals));
    }
    return cloud;
}

void write_xyz(std::ostream& out, const PointCloud& cloud)
{
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Vec3& p = cloud[i];
        out << format_real(p.x()) << ' ' << format_real(p.y()) << ' ' << format_real(p.z());
        if (cloud.has_normals()) {
            const Vec3& n = cloud.normals()[i];
            out << ' ' << format_real(n.x()) << ' ' << format_real(n.y()) << ' ' << format_real(n.z());
        }
        out << '\n';
    }
}

PointCloud read_ply(std::istream& in)
{
    std::string line;
    require(std::getline(in, line) && line.rfind("ply", 0) == 0, ErrorKind::Parse, "missing ply magic");

    struct Element {
        std::string name;
        std::size_t count = 0;
        std::vector<std::string> properties;
        bool has_list = false;
    };
    std::vector<Element> elements;
    bool ascii = false;
    while (std::getline(in, line)) {
        std::istringstream ss(line);
        std::string word;
        ss >> word;
        if (word == "format") {
            std::string kind;
            ss >> kind;
            ascii = kind == "ascii";
        } else if (word == "element") {
            Element e;
            ss >> e.name >> e.count;
            elements.push_back(e);
        } else if (word == "property") {
            require(!elements.empty(), ErrorKind::Parse, "property before element");
            std::string type;
            ss >> type;
            if (type == "list") {
                elements.back().has_list = true;
                std::string a, b, name;
                ss >> a >> b >> name;
                elements.back().properties.push_back(name);
            } else {
                std::string name;
                ss >> name;
                elements.back().properties.push_back(name);
            }
        } else if (word == "end_header") {
            break;
        }
    }
    require(ascii, ErrorKind::Parse, "only ASCII PLY is supported");

    PointCloud cloud;
    for (const Element& e : elements) {
        if (e.name != "vertex") {
            for (std::size_t i = 0; i < e.count; ++i) {
                require(static_cast<bool>(std::getline(in, line)), ErrorKind::Parse, "truncated PLY body");
            }
            continue;
        }
        require(!e.has_list, ErrorKind::Parse, "list properties on vertex are not supported");
        auto find = [&](const std::string& name) -> int {
            auto it = std::find(e.properties.begin(), e.properties.end(), name);
            return it == e.properties.end() ? -1 : static_cast<int>(it - e.properties.begin());
        };
        const int ix = find("x"), iy = find("y"), iz = find("z");
        require(ix >= 0 && iy >= 0 && iz >= 0, ErrorKind::Parse, "vertex element lacks x y z");
        const int inx = find("nx"), iny = find("ny"), inz = find("nz");
        const bool with_normals = inx >= 0 && iny >= 0 && inz >= 0;
        std::vector<int> attr_columns;
        for (int p = 0; p < static_cast<int>(e.properties.size()); ++p) {
            if (p != ix && p != iy && p != iz && !(with_normals && (p == inx || p == iny || p == inz))) {
                attr_columns.push_back(p);
            }
        }
        std::vector<Vec3> points, normals;
        std::vector<double> attrs;
        for (std::size_t i = 0; i < e.count; ++i) {
            require(static_cast<bool>(std::getline(in, line)), ErrorKind::Parse, "truncated PLY vertex list");
            std::istringstream ss(line);
            std::vector<double> values;
            for (std::string t; ss >> t;) {
                values.push_back(parse_real(t, i));
            }
            require(values.size() == e.properties.size(), ErrorKind::Parse, "PLY vertex row has wrong arity");
            points.emplace_back(values[ix], values[iy], values[iz]);
            if (with_normals) {
                normals.emplace_back(values[inx], values[iny], values[inz]);
            }
            for (int c : attr_columns) {
                attrs.push_back(values[c]);
            }
        }
        cloud = PointCloud(std::move(points));
        if (with_normals) {
            cloud.set_normals(std::move(normals));
        }
        if (!attr_columns.empty()) {
            cloud.set_attrs(attr_columns.size(), std::move(attrs));
        }
    }
    return cloud;
}

void write_ply(std::ostream& out, const PointCloud& cloud, const std::vector<std::string>& attr_names)
{
    require(attr_names.size() == cloud.attr_width(), ErrorKind::ShapeMismatch,
            "attribute names do not match attribute width");
    out << "ply\nformat ascii 1.0\nelement vertex " << cloud.size() << '\n';
    out << "property float x\nproperty float y\nproperty float z\n";
    if (cloud.has_normals()) {
        out << "property float nx\nproperty float ny\nproperty float nz\n";
    }
    for (const auto& name : attr_names) {
        out << "property float " << name << '\n';
    }
    out << "end_header\n";
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Vec3& p = cloud[i];
        out << format_real(p.x()) << ' ' << format_real(p.y()) << ' ' << format_real(p.z());
        if (cloud.has_normals()) {
            const Vec3& n = cloud.normals()[i];
            out << ' ' << format_real(n.x()) << ' ' << format_real(n.y()) << ' ' << format_real(n.z());
        }
        for (double a : cloud.attr(i)) {
            out << ' ' << format_real(a);
        }
        out << '\n';
    }
}

TriangleMesh read_obj(std::istream& in)
{
    std::vector<Vec3> vertices;
    std::vector<Face> faces;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ss(line);
        std::string tag;
        if (!(ss >> tag)) {
            continue;
        }
        if (tag == "v") {
            std::string x, y, z;
            require(static_cast<bool>(ss >> x >> y >> z), ErrorKind::Parse,
                    "line " + std::to_string(lineno) + ": vertex needs 3 coordinates");
            vertices.emplace_back(parse_real(x, lineno), parse_real(y, lineno), parse_real(z, lineno));
        } else if (tag == "f") {
            std::vector<std::size_t> poly;
            for (std::string t; ss >> t;) {
                const std::string head = t.substr(0, t.find('/'));
                long idx = 0;
                try {
                    idx = std::stol(head);
                } catch (const std::exception&) {
                    fail(ErrorKind::Parse, "line " + std::to_string(lineno) + ": bad face index '" + t + "'");
                }
                // negative indices are relative to the current vertex count
                const long resolved = idx < 0 ? static_cast<long>(vertices.size()) + idx : idx - 1;
                require(resolved >= 0 && resolved < static_cast<long>(vertices.size()), ErrorKind::Parse,
                        "line " + std::to_string(lineno) + ": face index out of range");
                poly.push_back(static_cast<std::size_t>(resolved));
            }
            require(poly.size() >= 3, ErrorKind::Parse, "line " + std::to_string(lineno) + ": face needs 3 indices");
            for (std::size_t k = 1; k + 1 < poly.size(); ++k) {
                faces.push_back({poly[0], poly[k], poly[k + 1]});
            }
        }
    }
    return TriangleMesh(std::move(vertices), std::move(faces));
}

void write_obj(std::ostream& out, const TriangleMesh& mesh)
{
    for (const Vec3& v : mesh.vertices()) {
        out << "v " << format_real(v.x()) << ' ' << format_real(v.y()) << ' ' << format_real(v.z()) << '\n';
    }
    for (const Face& f : mesh.faces()) {
        out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
    }
}

PointCloud read_cloud(const std::filesystem::path& path)
{
    auto in = open_in(path);
    const std::string ext = lower_ext(path);
    if (ext == ".ply") {
        return read_ply(in);
    }
    require(ext == ".xyz" || ext == ".txt", ErrorKind::InvalidArgument, "unsupported cloud format: " + ext);
    return read_xyz(in);
}

void write_cloud(const std::filesystem::path& path, const PointCloud& cloud)
{
    auto out = open_out(path);
    const std::string ext = lower_ext(path);
    if (ext == ".ply") {
        write_ply(out, cloud);
    } else {
        require(ext == ".xyz" || ext == ".txt", ErrorKind::InvalidArgument, "unsupported cloud format: " + ext);
        write_xyz(out, cloud);
    }
    require(static_cast<bool>(out), ErrorKind::Io, "write failed: " + path.string());
}

TriangleMesh read_mesh(const std::filesystem::path& path)
{
    require(lower_ext(path) == ".obj", ErrorKind::InvalidArgument, "meshes must be .obj");
    auto in = open_in(path);
    return read_obj(in);
}

void write_mesh(const std::filesystem::path& path, const TriangleMesh& mesh)
{
    auto out = open_out(path);
    write_obj(out, mesh);
    require(static_cast<bool>(out), ErrorKind::Io, "write failed: " + path.string());
}

} // namespace crossup::geometry::io
