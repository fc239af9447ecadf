#include "crossup/nn/network.hpp"

#include "crossup/error.hpp"
#include "crossup/geometry/spatial_index.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

namespace crossup::nn {

using geometry::Vec3;

namespace {

std::size_t parse_count(const std::map<std::string, std::string>& values, const std::string& key, std::size_t fallback)
{
    const auto it = values.find(key);
    if (it == values.end()) {
        return fallback;
    }
    try {
        std::size_t used = 0;
        const unsigned long long v = std::stoull(it->second, &used);
        require(used == it->second.size(), ErrorKind::Parse, "bad value for " + key + ": " + it->second);
        return static_cast<std::size_t>(v);
    } catch (const std::logic_error&) {
        fail(ErrorKind::Parse, "bad value for " + key + ": " + it->second);
    }
}

Tensor constant_matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
{
    return Tensor(Shape{rows, cols}, std::move(values), false);
}

} // namespace

std::map<std::string, std::string> NetworkConfig::to_map() const
{
    return {
        {"net.knn", std::to_string(knn)},
        {"net.edge_hidden", std::to_string(edge_hidden)},
        {"net.edge_out", std::to_string(edge_out)},
        {"net.point_hidden", std::to_string(point_hidden)},
        {"net.feature_width", std::to_string(feature_width)},
        {"net.grid", std::to_string(grid)},
        {"net.channels", std::to_string(channels)},
        {"net.mapper_hidden", std::to_string(mapper_hidden)},
        {"net.use_position", use_position ? "1" : "0"},
    };
}

NetworkConfig NetworkConfig::from_map(const std::map<std::string, std::string>& values)
{
    NetworkConfig c;
    c.knn = parse_count(values, "net.knn", c.knn);
    c.edge_hidden = parse_count(values, "net.edge_hidden", c.edge_hidden);
    c.edge_out = parse_count(values, "net.edge_out", c.edge_out);
    c.point_hidden = parse_count(values, "net.point_hidden", c.point_hidden);
    c.feature_width = parse_count(values, "net.feature_width", c.feature_width);
    c.grid = parse_count(values, "net.grid", c.grid);
    c.channels = parse_count(values, "net.channels", c.channels);
    c.mapper_hidden = parse_count(values, "net.mapper_hidden", c.mapper_hidden);
    c.use_position = parse_count(values, "net.use_position", 1) != 0;
    c.validate();
    return c;
}

void NetworkConfig::validate() const
{
    require(knn >= 1 && edge_hidden >= 1 && edge_out >= 1 && point_hidden >= 1 && feature_width >= 1 &&
                channels >= 1 && mapper_hidden >= 1,
            ErrorKind::InvalidArgument, "network widths must be positive");
    require(grid % 2 == 1, ErrorKind::InvalidArgument, "grid dimension must be odd");
}

NetworkWeights::NetworkWeights(NetworkConfig config) : config_(config)
{
    config_.validate();
    const auto& c = config_;
    add("extractor.edge1.weight", {c.edge_hidden, 6});
    add("extractor.edge1.bias", {c.edge_hidden});
    add("extractor.edge2.weight", {c.edge_out, c.edge_hidden});
    add("extractor.edge2.bias", {c.edge_out});
    add("extractor.point.weight", {c.point_hidden, c.edge_out});
    add("extractor.point.bias", {c.point_hidden});
    add("extractor.normal_head.weight", {3, c.point_hidden});
    add("extractor.normal_head.bias", {3});
    add("extractor.theta_head.weight", {3, c.point_hidden});
    add("extractor.theta_head.bias", {3});
    add("extractor.feature_head.weight", {c.feature_width, c.point_hidden});
    add("extractor.feature_head.bias", {c.feature_width});
    add("inpaintor.conv1.weight", {c.channels, c.feature_width, 3, 3, 3});
    add("inpaintor.conv1.bias", {c.channels});
    add("inpaintor.conv2.weight", {c.channels, c.channels, 3, 3, 3});
    add("inpaintor.conv2.bias", {c.channels});
    add("compressor.conv.weight", {c.cell_width(), c.cell_width(), 1, 1});
    add("compressor.conv.bias", {c.cell_width()});
    add("mapper.fc1.weight", {c.mapper_hidden, 2 + c.cell_width()});
    add("mapper.fc1.bias", {c.mapper_hidden});
    add("mapper.fc2.weight", {c.mapper_hidden, c.mapper_hidden});
    add("mapper.fc2.bias", {c.mapper_hidden});
    add("mapper.out.weight", {3, c.mapper_hidden});
    add("mapper.out.bias", {3});
}

void NetworkWeights::add(const std::string& name, Shape shape)
{
    params_.emplace_back(name, Tensor(std::move(shape), 0.0, false));
}

NetworkWeights NetworkWeights::zeros(const NetworkConfig& config)
{
    return NetworkWeights(config);
}

NetworkWeights NetworkWeights::initialize(const NetworkConfig& config, std::uint64_t seed)
{
    NetworkWeights w(config);
    std::mt19937_64 rng(seed);
    for (auto& [name, t] : w.params_) {
        if (t.rank() == 1) {
            continue;
        }
        const std::size_t fan_in = t.size() / t.dim(0);
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (double& v : t.values()) {
            v = dist(rng);
        }
    }
    return w;
}

Tensor& NetworkWeights::operator[](const std::string& name)
{
    for (auto& [n, t] : params_) {
        if (n == name) return t;
    }
    fail(ErrorKind::InvalidArgument, "no parameter named " + name);
}

const Tensor& NetworkWeights::operator[](const std::string& name) const
{
    for (const auto& [n, t] : params_) {
        if (n == name) return t;
    }
    fail(ErrorKind::InvalidArgument, "no parameter named " + name);
}

bool NetworkWeights::contains(const std::string& name) const
{
    return std::any_of(params_.begin(), params_.end(), [&](const auto& e) { return e.first == name; });
}

void NetworkWeights::set_requires_grad(bool on)
{
    for (auto& [name, t] : params_) {
        if (t.requires_grad() != on) {
            t = Tensor(t.shape(), std::vector<double>(t.values().begin(), t.values().end()), on);
        }
    }
}

void NetworkWeights::zero_grad()
{
    for (auto& [name, t] : params_) {
        t.zero_grad();
    }
}

NetworkWeights NetworkWeights::clone() const
{
    NetworkWeights w;
    w.config_ = config_;
    for (const auto& [name, t] : params_) {
        w.params_.emplace_back(name, t.clone());
    }
    return w;
}

std::size_t NetworkWeights::parameter_count() const
{
    std::size_t n = 0;
    for (const auto& [name, t] : params_) n += t.size();
    return n;
}

bool NetworkWeights::identical(const NetworkWeights& other) const
{
    if (params_.size() != other.params_.size() || !(config_ == other.config_)) {
        return false;
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const auto& [na, a] = params_[i];
        const auto& [nb, b] = other.params_[i];
        if (na != nb || a.shape() != b.shape() ||
            std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(double)) != 0) {
            return false;
        }
    }
    return true;
}

EdgeGraph extractor_graph(std::span<const Vec3> points, std::size_t k)
{
    require(points.size() >= 2, ErrorKind::InvalidArgument, "extractor needs at least two points");
    const geometry::SpatialIndex index(points);
    return geometry::knn_graph(index, std::min(k, points.size() - 1));
}

ExtractorOutput forward_extractor(Tape& tape, std::span<const Vec3> points, const EdgeGraph& graph,
                                  const NetworkWeights& weights)
{
    const std::size_t n = points.size();
    require(graph.size() == n && n > 0, ErrorKind::ShapeMismatch, "extractor graph does not match the cloud");
    const std::size_t k = graph.front().size();
    require(k >= 1, ErrorKind::InvalidArgument, "extractor graph has empty neighbor lists");
    const bool use_position = weights.config().use_position;

    std::vector<double> edges;
    edges.reserve(n * k * 6);
    for (std::size_t i = 0; i < n; ++i) {
        require(graph[i].size() == k, ErrorKind::ShapeMismatch, "extractor graph rows differ in length");
        const Vec3& x = points[i];
        for (std::size_t j : graph[i]) {
            const Vec3 e = points[j] - x;
            for (int a = 0; a < 3; ++a) edges.push_back(use_position ? x[a] : 0.0);
            for (int a = 0; a < 3; ++a) edges.push_back(e[a]);
        }
    }
    const Tensor input = constant_matrix(n * k, 6, std::move(edges));

    Tensor h = relu(tape, linear(tape, input, weights["extractor.edge1.weight"], weights["extractor.edge1.bias"]));
    h = relu(tape, linear(tape, h, weights["extractor.edge2.weight"], weights["extractor.edge2.bias"]));
    h = group_max(tape, h, k);
    h = relu(tape, linear(tape, h, weights["extractor.point.weight"], weights["extractor.point.bias"]));

    ExtractorOutput out;
    out.normal = linear(tape, h, weights["extractor.normal_head.weight"], weights["extractor.normal_head.bias"]);
    out.theta = linear(tape, h, weights["extractor.theta_head.weight"], weights["extractor.theta_head.bias"]);
    out.features = linear(tape, h, weights["extractor.feature_head.weight"], weights["extractor.feature_head.bias"]);
    return out;
}

std::vector<field::CrossFrame> frames_from_heads(const ExtractorOutput& out)
{
    const std::size_t n = out.normal.dim(0);
    std::vector<field::CrossFrame> frames(n);
    for (std::size_t i = 0; i < n; ++i) {
        Vec3 nv(out.normal[3 * i], out.normal[3 * i + 1], out.normal[3 * i + 2]);
        const Vec3 tv(out.theta[3 * i], out.theta[3 * i + 1], out.theta[3 * i + 2]);
        if (!(nv.norm() > 1e-12) || !nv.allFinite()) {
            nv = Vec3::UnitZ();
        }
        frames[i] = field::enforce_frame(nv, tv.allFinite() ? tv : Vec3::Zero());
    }
    return frames;
}

Tensor forward_chart(Tape& tape, const Tensor& voxels, const SiteMask* occupied, const SiteMask* needed_cells,
                     const NetworkWeights& weights)
{
    const std::size_t d = weights.config().grid;
    const std::size_t c = weights.config().channels;
    require(voxels.rank() == 5 && voxels.dim(1) == d && voxels.dim(2) == d && voxels.dim(3) == d &&
                voxels.dim(4) == weights.config().feature_width,
            ErrorKind::ShapeMismatch, "voxel tensor " + shape_string(voxels.shape()) + " does not fit the network");
    const std::size_t batch = voxels.dim(0);
    const std::size_t cells = batch * d * d;

    SiteMask column_mask, dilated;
    const SiteMask* layer1_out = nullptr;
    const SiteMask* layer2_out = nullptr;
    if (needed_cells) {
        require(needed_cells->size() == cells, ErrorKind::ShapeMismatch, "needed-cell mask size");
        column_mask.assign(cells * d, 0);
        for (std::size_t t = 0; t < cells; ++t) {
            if ((*needed_cells)[t]) std::fill_n(column_mask.begin() + static_cast<std::ptrdiff_t>(t * d), d, 1);
        }
        // Layer-2 outputs at these columns read layer-1 outputs one voxel away.
        dilated.assign(cells * d, 0);
        const auto D = static_cast<long>(d);
        for (std::size_t b = 0; b < batch; ++b)
            for (long y = 0; y < D; ++y)
                for (long x = 0; x < D; ++x)
                    for (long z = 0; z < D; ++z) {
                        const std::size_t v = ((b * d + static_cast<std::size_t>(y)) * d + static_cast<std::size_t>(x)) * d +
                                              static_cast<std::size_t>(z);
                        if (!column_mask[v]) continue;
                        for (long dy = -1; dy <= 1; ++dy)
                            for (long dx = -1; dx <= 1; ++dx)
                                for (long dz = -1; dz <= 1; ++dz) {
                                    const long yy = y + dy, xx = x + dx, zz = z + dz;
                                    if (yy < 0 || yy >= D || xx < 0 || xx >= D || zz < 0 || zz >= D) continue;
                                    dilated[((b * d + static_cast<std::size_t>(yy)) * d + static_cast<std::size_t>(xx)) * d +
                                            static_cast<std::size_t>(zz)] = 1;
                                }
                    }
        layer1_out = &dilated;
        layer2_out = &column_mask;
    }

    Tensor h = relu(tape, conv3d(tape, voxels, weights["inpaintor.conv1.weight"], weights["inpaintor.conv1.bias"],
                                 occupied, layer1_out));
    h = relu(tape, conv3d(tape, h, weights["inpaintor.conv2.weight"], weights["inpaintor.conv2.bias"], layer1_out,
                          layer2_out));
    // [B,d,d,d,c] -> [B,d,d,d*c]: the z column of a cell is contiguous already.
    h = reshape(tape, h, Shape{batch, d, d, d * c});
    h = relu(tape, conv2d(tape, h, weights["compressor.conv.weight"], weights["compressor.conv.bias"], needed_cells));
    return reshape(tape, h, Shape{cells, d * c});
}

Tensor forward_mapper(Tape& tape, const Tensor& p_t, const Tensor& f_t, const NetworkWeights& weights, double radius,
                      double max_offset)
{
    require(p_t.rank() == 2 && p_t.dim(1) == 2, ErrorKind::ShapeMismatch, "mapper positions must be [n,2]");
    require(f_t.rank() == 2 && f_t.dim(1) == weights.config().cell_width() && f_t.dim(0) == p_t.dim(0),
            ErrorKind::ShapeMismatch, "mapper features " + shape_string(f_t.shape()) + " do not fit the network");
    require(radius > 0.0 && max_offset > 0.0, ErrorKind::InvalidArgument, "mapper scales must be positive");
    Tensor x = concat_cols(tape, affine(tape, p_t, 1.0 / radius), f_t);
    x = relu(tape, linear(tape, x, weights["mapper.fc1.weight"], weights["mapper.fc1.bias"]));
    x = relu(tape, linear(tape, x, weights["mapper.fc2.weight"], weights["mapper.fc2.bias"]));
    x = linear(tape, x, weights["mapper.out.weight"], weights["mapper.out.bias"]);
    return clamp_norm_rows(tape, affine(tape, x, radius), max_offset);
}

void adam_step(std::span<double> w, std::span<const double> g, std::span<double> m, std::span<double> v,
               const AdamOptions& o, std::size_t t)
{
    require(g.size() == w.size() && m.size() == w.size() && v.size() == w.size(), ErrorKind::ShapeMismatch,
            "adam buffers differ in size");
    require(t >= 1, ErrorKind::InvalidArgument, "adam step count is 1-based");
    const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g[i];
        v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g[i] * g[i];
        const double mh = m[i] / c1;
        const double vh = v[i] / c2;
        w[i] -= o.lr * mh / (std::sqrt(vh) + o.eps);
    }
}

void Adam::step(NetworkWeights& weights)
{
    auto& entries = weights.entries();
    if (m_.empty()) {
        for (const auto& [name, t] : entries) {
            m_.emplace_back(t.size(), 0.0);
            v_.emplace_back(t.size(), 0.0);
        }
    }
    require(m_.size() == entries.size(), ErrorKind::ShapeMismatch, "optimizer state does not match the weights");
    ++t_;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        Tensor& p = entries[i].second;
        require(p.requires_grad(), ErrorKind::InvalidArgument, entries[i].first + " does not track gradients");
        adam_step(p.values(), p.grad(), m_[i], v_[i], options_, t_);
    }
}

// Checkpoint layout: magic, u32 version, u64-prefixed config text, u64 tensor
// count, then per tensor a u64-prefixed name, u64 rank, u64 dims and the
// little-endian doubles.
namespace {

constexpr char kMagic[8] = {'X', 'U', 'P', 'C', 'K', 'P', 'T', '\n'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& out, T value)
{
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T get(std::istream& in)
{
    unsigned char bytes[sizeof(T)];
    in.read(reinterpret_cast<char*>(bytes), sizeof(T));
    require(in.gcount() == static_cast<std::streamsize>(sizeof(T)), ErrorKind::Parse, "truncated checkpoint");
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return value;
}

void put_string(std::ostream& out, const std::string& s)
{
    put<std::uint64_t>(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in, std::size_t limit)
{
    const auto n = get<std::uint64_t>(in);
    require(n <= limit, ErrorKind::Parse, "checkpoint string too long");
    std::string s(n, '\0');
    in.read(s.data(), static_cast<std::streamsize>(n));
    require(in.gcount() == static_cast<std::streamsize>(n), ErrorKind::Parse, "truncated checkpoint");
    return s;
}

} // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& checkpoint)
{
    out.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kVersion);
    std::ostringstream text;
    auto echo = checkpoint.echo;
    for (const auto& [k, v] : checkpoint.weights.config().to_map()) echo[k] = v;
    for (const auto& [k, v] : echo) {
        require(k.find_first_of("=\n") == std::string::npos && v.find('\n') == std::string::npos,
                ErrorKind::InvalidArgument, "checkpoint echo entries must be single-line key=value");
        text << k << '=' << v << '\n';
    }
    put_string(out, text.str());
    const auto& entries = checkpoint.weights.entries();
    put<std::uint64_t>(out, entries.size());
    for (const auto& [name, t] : entries) {
        put_string(out, name);
        put<std::uint64_t>(out, t.rank());
        for (std::size_t dim : t.shape()) put<std::uint64_t>(out, dim);
        for (double v : t.values()) put<double>(out, v);
    }
    require(static_cast<bool>(out), ErrorKind::Io, "failed writing checkpoint");
}

Checkpoint read_checkpoint(std::istream& in)
{
    char magic[sizeof kMagic];
    in.read(magic, sizeof magic);
    require(in.gcount() == sizeof magic && std::equal(magic, magic + sizeof magic, kMagic), ErrorKind::Parse,
            "not a checkpoint file");
    const auto version = get<std::uint32_t>(in);
    require(version == kVersion, ErrorKind::Parse, "unsupported checkpoint version " + std::to_string(version));

    Checkpoint ck;
    std::istringstream text(get_string(in, 1 << 20));
    std::string line;
    while (std::getline(text, line)) {
        const auto eq = line.find('=');
        require(eq != std::string::npos, ErrorKind::Parse, "malformed checkpoint config line: " + line);
        ck.echo[line.substr(0, eq)] = line.substr(eq + 1);
    }
    ck.weights = NetworkWeights::zeros(NetworkConfig::from_map(ck.echo));
    for (auto it = ck.echo.begin(); it != ck.echo.end();) {
        it = it->first.rfind("net.", 0) == 0 ? ck.echo.erase(it) : std::next(it);
    }

    const auto count = get<std::uint64_t>(in);
    require(count == ck.weights.entries().size(), ErrorKind::Parse, "checkpoint tensor count does not match its config");
    for (std::uint64_t e = 0; e < count; ++e) {
        const std::string name = get_string(in, 256);
        require(ck.weights.contains(name), ErrorKind::Parse, "unexpected tensor " + name);
        Tensor& t = ck.weights[name];
        const auto rank = get<std::uint64_t>(in);
        Shape shape(rank);
        for (auto& dim : shape) dim = get<std::uint64_t>(in);
        require(shape == t.shape(), ErrorKind::Parse,
                name + " has shape " + shape_string(shape) + ", expected " + shape_string(t.shape()));
        for (double& v : t.values()) v = get<double>(in);
    }
    return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint)
{
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot open " + path + " for writing");
    write_checkpoint(out, checkpoint);
}

Checkpoint load_checkpoint(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path);
    return read_checkpoint(in);
}

} // namespace crossup::nn
