#include "grad_suite.hpp"

#include "crossup/chart/chart.hpp"
#include "crossup/nn/network.hpp"
#include "crossup/nn/ops.hpp"
#include "crossup/objectives/losses.hpp"
#include "crossup/pipeline/upsample.hpp"
#include "oracles.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>

namespace crossup::testing {

using nn::Shape;
using nn::Tape;
using nn::Tensor;

namespace {

constexpr double kMargin = 0.05;

/// Entries uniform in +-[margin, scale].
Tensor away_from_zero(Shape shape, std::mt19937_64& rng, double margin = kMargin, double scale = 1.0)
{
    std::uniform_real_distribution<double> mag(margin, scale);
    std::bernoulli_distribution sign(0.5);
    std::vector<double> v(nn::shape_size(shape));
    for (double& x : v) x = sign(rng) ? mag(rng) : -mag(rng);
    return Tensor(std::move(shape), std::move(v), true);
}

Tensor constant(Shape shape, std::mt19937_64& rng)
{
    Tensor t = random_leaf(std::move(shape), rng);
    return t.detach();
}

/// The leaves' common single-output projection.
GradCheckResult check(std::uint64_t seed, std::vector<Tensor> leaves,
                      std::function<Tensor(Tape&, const std::vector<Tensor>&)> op, std::size_t max_coords = 0)
{
    auto f = [op, seed](Tape& tape, const std::vector<Tensor>& in) { return random_projection(tape, op(tape, in), seed ^ 0x9e37); };
    return gradcheck(f, std::move(leaves), 1e-4, max_coords, seed);
}

double row_dot3(std::span<const double> a, std::span<const double> b, std::size_t i)
{
    return a[3 * i] * b[3 * i] + a[3 * i + 1] * b[3 * i + 1] + a[3 * i + 2] * b[3 * i + 2];
}


std::vector<Tensor> weight_leaves(nn::NetworkWeights& w)
{
    std::vector<Tensor> out;
    for (auto& [name, t] : w.entries()) out.push_back(t);
    return out;
}

GradCheckResult chamfer_case(std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::vector<Vec3> gt;
    Tensor pred;
    // Redraw until every nearest neighbor is unambiguous in both directions.
    for (;;) {
        gt = random_points(9, rng);
        pred = random_leaf({6, 3}, rng);
        const auto p = objectives::rows_as_points(pred);
        auto clear = [](std::span<const Vec3> from, std::span<const Vec3> to) {
            for (const Vec3& q : from) {
                const auto nb = brute_knn(to, q, 2);
                if (nb.size() == 2 && nb[1].distance * nb[1].distance - nb[0].distance * nb[0].distance < 0.01) return false;
            }
            return true;
        };
        if (clear(p, gt) && clear(gt, p)) break;
    }
    auto f = [gt](Tape& tape, const std::vector<Tensor>& in) { return objectives::chamfer_loss(tape, in[0], gt); };
    return gradcheck(f, {pred}, 1e-4, 0, seed);
}

GradCheckResult smooth_case(std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    const std::size_t m = 7;
    field::NeighborGraph graph(m);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            if (j != i && graph[i].size() < 3 && rng() % 2) graph[i].push_back(j);
        }
    }
    Tensor n, t;
    for (;;) {
        n = random_leaf({m, 3}, rng);
        t = random_leaf({m, 3}, rng);
        bool ok = true;
        for (std::size_t i = 0; i < m && ok; ++i) {
            const Vec3 ni(n[3 * i], n[3 * i + 1], n[3 * i + 2]);
            const Vec3 ti(t[3 * i], t[3 * i + 1], t[3 * i + 2]);
            for (std::size_t j : graph[i]) {
                const Vec3 tj(t[3 * j], t[3 * j + 1], t[3 * j + 2]);
                const double direct = 1.0 - std::abs(ti.dot(tj));
                const double quarter = 1.0 - std::abs(ni.cross(ti).dot(tj));
                if (std::abs(ti.dot(tj)) < kMargin || std::abs(ni.cross(ti).dot(tj)) < kMargin ||
                    std::abs(direct - quarter) < kMargin)
                    ok = false;
            }
        }
        if (ok) break;
    }
    auto f = [graph](Tape& tape, const std::vector<Tensor>& in) {
        return objectives::field_smooth_loss(tape, in[0], in[1], graph);
    };
    return gradcheck(f, {n, t}, 1e-4, 0, seed);
}

GradCheckResult chart_stack_case(std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    const auto cfg = small_network();
    auto w = random_network(cfg, seed);
    const std::size_t B = 2, d = cfg.grid;
    Tensor voxels = random_leaf({B, d, d, d, cfg.feature_width}, rng);
    nn::SiteMask occupied(B * d * d * d), needed(B * d * d);
    for (auto& o : occupied) o = rng() % 2;
    for (auto& c : needed) c = rng() % 3 != 0;
    // Mapper queries at needed cells only.
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < needed.size(); ++i) {
        if (needed[i]) rows.push_back(i);
    }
    rows.resize(std::min<std::size_t>(rows.size(), 12));
    const Tensor p_t = constant({rows.size(), 2}, rng);
    auto leaves = weight_leaves(w);
    leaves.push_back(voxels);
    auto f = [&, rows, p_t, occupied, needed](Tape& tape, const std::vector<Tensor>& in) {
        const Tensor cells = nn::forward_chart(tape, in.back(), &occupied, &needed, w);
        const Tensor f_t = nn::gather_rows(tape, cells, rows);
        return random_projection(tape, nn::forward_mapper(tape, p_t, f_t, w, 0.5, 100.0), seed);
    };
    return gradcheck(f, leaves, 1e-4, 24, seed);
}

} // namespace

nn::NetworkConfig small_network()
{
    nn::NetworkConfig c;
    c.knn = 4;
    c.edge_hidden = 6;
    c.edge_out = 6;
    c.point_hidden = 8;
    c.feature_width = 3;
    c.grid = 5;
    c.channels = 2;
    c.mapper_hidden = 8;
    return c;
}

/// Initialized weights with random biases: zero biases would put every empty
/// voxel's pre-activation exactly on the ReLU kink.
nn::NetworkWeights random_network(const nn::NetworkConfig& cfg, std::uint64_t seed)
{
    auto w = nn::NetworkWeights::initialize(cfg, seed);
    std::mt19937_64 rng(seed ^ 0xb1a5);
    std::uniform_real_distribution<double> u(-0.2, 0.2);
    for (auto& [name, t] : w.entries()) {
        if (name.ends_with(".bias")) {
            for (double& v : t.values()) v = u(rng);
        }
    }
    w.set_requires_grad(true);
    return w;
}

GradCheckResult patch_gradcheck(std::uint64_t seed, double h)
{
    std::mt19937_64 rng(seed);
    const auto cfg = small_network();
    auto w = random_network(cfg, seed);
    // A gently curved patch so PCA frames are well defined.
    std::vector<Vec3> pts;
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (int i = 0; i < 20; ++i) {
        const double x = u(rng), y = u(rng);
        pts.emplace_back(x, y, 0.3 * x * x - 0.2 * y * y);
    }
    pipeline::UpsampleConfig pc;
    pc.adopt_network(cfg);
    pc.seed = seed;
    const auto frames = pipeline::estimate_frames(pts, nullptr, pc);
    auto f = [&, pts, pc, frames](Tape& tape, const std::vector<Tensor>&) {
        std::mt19937_64 local(seed);
        const auto fw = pipeline::forward_patch(tape, pts, w, pc, 0.4, 6, local, &frames);
        return random_projection(tape, fw.world, seed);
    };
    return gradcheck(f, weight_leaves(w), h, 16, seed);
}

std::vector<GradCase> gradient_cases()
{
    std::vector<GradCase> cases;
    auto binary = [&](std::string name, Tensor (*op)(Tape&, const Tensor&, const Tensor&)) {
        cases.push_back({std::move(name), [op](std::uint64_t seed) {
                             std::mt19937_64 rng(seed);
                             return check(seed, {random_leaf({4, 5}, rng), random_leaf({4, 5}, rng)},
                                          [op](Tape& t, const std::vector<Tensor>& in) { return op(t, in[0], in[1]); });
                         }});
    };
    binary("add", &nn::add);
    binary("sub", &nn::sub);
    binary("mul", &nn::mul);

    cases.push_back({"affine", [](std::uint64_t seed) {
                         std::mt19937_64 rng(seed);
                         return check(seed, {random_leaf({3, 4}, rng)},
                                      [](Tape& t, const std::vector<Tensor>& in) { return nn::affine(t, in[0], -1.7, 0.3); });
                     }});
    cases.push_back({"abs", [](std::uint64_t seed) {
                         std::mt19937_64 rng(seed);
                         return check(seed, {away_from_zero({3, 4}, rng)},
                                      [](Tape& t, const std::vector<Tensor>& in) { return nn::abs(t, in[0]); });
                     }});
    cases.push_back({"relu", [](std::uint64_t seed) {
                         std::mt19937_64 rng(seed);
                         return check(seed, {away_from_zero({3, 4}, rng)},
                                      [](Tape& t, const std::vector<Tensor>& in) { return nn::relu(t, in[0]); });
                     }});
    cases.push_back({"minimum", [](std::uint64_t seed) {
                         std::mt19937_64 rng(seed);
                         Tensor a = random_leaf({3, 4}, rng);
                         Tensor b = random_leaf({3, 4}, rng);
                         for (std::size_t i = 0; i < a.size(); ++i) {
                             if (std::abs(a[i] - b[i]) < kMargin) b[i] = a[i] + (i % 2 ? 0.2 : -0.2);
                         }
                         return check(seed, {a, b},
                                      [](Tape& t, const std::vector<Tensor>& in) { return nn::minimum(t, in[0], in[1]); });
                     }});
    cases.push_back({"sum", [](std::uint64_t seed) {
                         std::mt19937_64 rng(seed);
                         return check(seed, {random_leaf({5, 2}, rng)},
                                      [](Tape& t, const std::vector<Tensor>& in) { return nn::sum(t, in[0]); });
                     }});
    cases.push_back({"reshape", [](std::uint64_t seed) {
                         std::mt19937_64 rng(seed);
                         return check(seed, {random_leaf({6, 2}, rng)},
                                      [](Tape& t, const std::vector<Tensor>& in) { return nn::reshape(t, in[0], {3, 4}); });
                     }});
    cases.push_back({"matmul", [](std::uint64_t seed) {
                         std::mt19937_64 rng(seed);
                         return check(seed, {random_leaf({3, 4}, rng), random_leaf({4, 5}, rng)},
                                      [](Tape& t, const std::vector<Tensor>& in) { return nn::matmul(t, in[0], in[1]); });
                     }});
    cases.push_back({"linear", [](std::uint64_t seed) {
                         std::mt19937_64 rng(seed);
                         return check(seed, {random_leaf({5, 4}, rng), random_leaf({3, 4}, rng), random_leaf({3}, rng)},
                                      [](Tape& t, const std::vector<Tensor>& in) { return nn::linear(t, in[0], in[1], in[2]); });
                     }});
    cases.push_back({"gather_rows", [](std::uint64_t seed) {
                         std::mt19937_64 rng(seed);
                         const std::vector<std::size_t> rows{3, 0, 3, 1, 4, 4};
                         return check(seed, {random_leaf({5, 3}, rng)}, [rows](Tape& t, const std::vector<Tensor>& in) {
                             return nn::gather_rows(t, in[0], rows);
                         });
                     }});
    cases.push_back({"concat_cols", [](std::uint64_t seed) {
                         std::mt19937_64 rng(seed);
                         return check(seed, {random_leaf({4, 2}, rng), random_leaf({4, 3}, rng)},
                                      [](Tape& t, const std::vector<Tensor>& in) { return nn::concat_cols(t, in[0], in[1]); });
                     }});
    cases.push_back({"group_max", [](std::uint64_t seed) {
                         std::mt19937_64 rng(seed);
                         // Distinct values per column with clear gaps.
                         const std::size_t n = 3, k = 4, c = 2;
                         std::vector<double> v(n * k * c);
                         for (std::size_t g = 0; g < n; ++g)
                             for (std::size_t ch = 0; ch < c; ++ch) {
                                 std::vector<double> levels{-0.9, -0.3, 0.3, 0.9};
                                 std::shuffle(levels.begin(), levels.end(), rng);
                                 std::uniform_real_distribution<double> jitter(-0.1, 0.1);
                                 for (std::size_t r = 0; r < k; ++r) v[((g * k) + r) * c + ch] = levels[r] + jitter(rng);
                             }
                         return check(seed, {Tensor({n * k, c}, v, true)},
                                      [](Tape& t, const std::vector<Tensor>& in) { return nn::group_max(t, in[0], 4); });
                     }});
    cases.push_back({"sparse_blend", [](std::uint64_t seed) {
                         std::mt19937_64 rng(seed);
                         nn::SparseRows map;
                         std::uniform_real_distribution<double> u(0.0, 1.0);
                         for (std::size_t r = 0; r < 4; ++r) {
                             for (std::size_t e = 0; e < 1 + r % 3; ++e) map.add(rng() % 5, u(rng));
                             map.end_row();
                         }
                         return check(seed, {random_leaf({5, 3}, rng)}, [map](Tape& t, const std::vector<Tensor>& in) {
                             return nn::sparse_blend(t, in[0], map);
                         });
                     }});
    cases.push_back({"row_dot", [](std::uint64_t seed) {
                         std::mt19937_64 rng(seed);
                         return check(seed, {random_leaf({4, 3}, rng), random_leaf({4, 3}, rng)},
                                      [](Tape& t, const std::vector<Tensor>& in) { return nn::row_dot(t, in[0], in[1]); });
                     }});
    cases.push_back({"cross_rows", [](std::uint64_t seed) {
                         std::mt19937_64 rng(seed);
                         return check(seed, {random_leaf({4, 3}, rng), random_leaf({4, 3}, rng)},
                                      [](Tape& t, const std::vector<Tensor>& in) { return nn::cross_rows(t, in[0], in[1]); });
                     }});
    cases.push_back({"normalize_rows", [](std::uint64_t seed) {
                         std::mt19937_64 rng(seed);
                         return check(seed, {away_from_zero({4, 3}, rng, 0.2)},
                                      [](Tape& t, const std::vector<Tensor>& in) { return nn::normalize_rows(t, in[0]); });
                     }});
    cases.push_back({"clamp_norm_rows", [](std::uint64_t seed) {
                         std::mt19937_64 rng(seed);
                         // Half the rows inside the ball, half outside, none near its surface.
                         Tensor a = away_from_zero({6, 3}, rng, 0.2);
                         for (std::size_t i = 0; i < 6; ++i) {
                             const double norm = std::sqrt(row_dot3(a.values(), a.values(), i));
                             const double target = i % 2 ? 0.5 : 1.5;
                             for (int k = 0; k < 3; ++k) a[3 * i + k] *= target / norm;
                         }
                         return check(seed, {a},
                                      [](Tape& t, const std::vector<Tensor>& in) { return nn::clamp_norm_rows(t, in[0], 1.0); });
                     }});
    cases.push_back({"rigid_rows", [](std::uint64_t seed) {
                         std::mt19937_64 rng(seed);
                         std::vector<Eigen::Matrix3d> rot;
                         std::vector<Eigen::Vector3d> tr;
                         for (int f = 0; f < 2; ++f) {
                             const Eigen::Vector3d axis = Eigen::Vector3d::Random().normalized();
                             rot.push_back(Eigen::AngleAxisd(0.3 + f, axis).toRotationMatrix());
                             tr.push_back(Eigen::Vector3d::Random());
                         }
                         const std::vector<std::size_t> frame{0, 1, 1, 0, 1};
                         return check(seed, {random_leaf({5, 3}, rng)}, [rot, tr, frame](Tape& t, const std::vector<Tensor>& in) {
                             return nn::rigid_rows(t, in[0], rot, tr, frame);
                         });
                     }});
    cases.push_back({"conv3d", [](std::uint64_t seed) {
                         std::mt19937_64 rng(seed);
                         return check(seed, {random_leaf({2, 3, 4, 3, 2}, rng), random_leaf({3, 2, 3, 3, 3}, rng), random_leaf({3}, rng)},
                                      [](Tape& t, const std::vector<Tensor>& in) { return nn::conv3d(t, in[0], in[1], in[2]); });
                     }});
    cases.push_back({"conv3d_masked", [](std::uint64_t seed) {
                         std::mt19937_64 rng(seed);
                         nn::SiteMask in_mask(2 * 3 * 3 * 3), out_mask(2 * 3 * 3 * 3);
                         for (auto& m : in_mask) m = rng() % 2;
                         for (auto& m : out_mask) m = rng() % 2;
                         return check(seed, {random_leaf({2, 3, 3, 3, 2}, rng), random_leaf({2, 2, 3, 3, 3}, rng), random_leaf({2}, rng)},
                                      [in_mask, out_mask](Tape& t, const std::vector<Tensor>& in) {
                                          return nn::conv3d(t, in[0], in[1], in[2], &in_mask, &out_mask);
                                      });
                     }});
    cases.push_back({"conv2d", [](std::uint64_t seed) {
                         std::mt19937_64 rng(seed);
                         nn::SiteMask out_mask(2 * 4 * 3);
                         for (auto& m : out_mask) m = rng() % 3 != 0;
                         return check(seed, {random_leaf({2, 4, 3, 3}, rng), random_leaf({2, 3, 3, 3}, rng), random_leaf({2}, rng)},
                                      [out_mask](Tape& t, const std::vector<Tensor>& in) {
                                          return nn::conv2d(t, in[0], in[1], in[2], &out_mask);
                                      });
                     }});
    cases.push_back({"conv2d_1x1", [](std::uint64_t seed) {
                         std::mt19937_64 rng(seed);
                         return check(seed, {random_leaf({1, 3, 3, 4}, rng), random_leaf({4, 4, 1, 1}, rng), random_leaf({4}, rng)},
                                      [](Tape& t, const std::vector<Tensor>& in) { return nn::conv2d(t, in[0], in[1], in[2]); });
                     }});
    cases.push_back({"chamfer_loss", chamfer_case});
    cases.push_back({"normal_loss", [](std::uint64_t seed) {
                         std::mt19937_64 rng(seed);
                         const auto gt_raw = random_points(5, rng);
                         std::vector<Vec3> gt;
                         for (const auto& g : gt_raw) gt.push_back(g.normalized());
                         Tensor n;
                         for (bool ok = false; !ok;) {
                             n = random_leaf({5, 3}, rng);
                             ok = true;
                             for (std::size_t i = 0; i < 5; ++i) {
                                 if (std::abs(Vec3(n[3 * i], n[3 * i + 1], n[3 * i + 2]).dot(gt[i])) < kMargin) ok = false;
                             }
                         }
                         auto f = [gt](Tape& t, const std::vector<Tensor>& in) { return objectives::normal_loss(t, in[0], gt); };
                         return gradcheck(f, {n}, 1e-4, 0, seed);
                     }});
    cases.push_back({"field_normal_loss", [](std::uint64_t seed) {
                         std::mt19937_64 rng(seed);
                         Tensor n, t;
                         for (bool ok = false; !ok;) {
                             n = random_leaf({5, 3}, rng);
                             t = random_leaf({5, 3}, rng);
                             ok = true;
                             for (std::size_t i = 0; i < 5; ++i) {
                                 if (std::abs(row_dot3(n.values(), t.values(), i)) < kMargin) ok = false;
                             }
                         }
                         auto f = [](Tape& tp, const std::vector<Tensor>& in) {
                             return objectives::field_normal_loss(tp, in[0], in[1]);
                         };
                         return gradcheck(f, {n, t}, 1e-4, 0, seed);
                     }});
    cases.push_back({"field_smooth_loss", smooth_case});
    cases.push_back({"chart_network", chart_stack_case});

    // Gradients are undefined at kinks: redraw such instances.
    for (auto& c : cases) {
        c.run = [raw = c.run](std::uint64_t seed) {
            GradCheckResult r;
            for (std::size_t attempt = 0; attempt < 50; ++attempt) {
                r = raw(seed + attempt * 1000003ULL);
                r.redraws = attempt;
                if (!r.nonsmooth) break;
            }
            return r;
        };
    }
    return cases;
}

} // namespace crossup::testing
