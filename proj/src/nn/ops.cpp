#include "crossup/nn/ops.hpp"

#include "crossup/error.hpp"

#include <algorithm>
#include <cmath>

namespace crossup::nn {

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op)
{
    require(a.shape() == b.shape(), ErrorKind::ShapeMismatch,
            std::string(op) + ": shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
}

void check_rank(const Tensor& a, std::size_t rank, const char* op)
{
    require(a.rank() == rank, ErrorKind::ShapeMismatch,
            std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_string(a.shape()));
}

Tensor output(Shape shape, bool track)
{
    return Tensor(std::move(shape), 0.0, track);
}

bool any_grad(std::initializer_list<const Tensor*> ts)
{
    for (const Tensor* t : ts) {
        if (t->defined() && t->requires_grad()) {
            return true;
        }
    }
    return false;
}

} // namespace

Tensor add(Tape& tape, const Tensor& a, const Tensor& b)
{
    check_same_shape(a, b, "add");
    const bool track = any_grad({&a, &b});
    Tensor y = output(a.shape(), track);
    auto yv = y.values();
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < yv.size(); ++i) {
        yv[i] = av[i] + bv[i];
    }
    if (track) {
        tape.record([a = a, b = b, y]() mutable {
            auto g = y.grad();
            if (a.requires_grad()) {
                auto ga = a.grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                auto gb = b.grad();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
        });
    }
    return y;
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b)
{
    check_same_shape(a, b, "sub");
    const bool track = any_grad({&a, &b});
    Tensor y = output(a.shape(), track);
    auto yv = y.values();
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < yv.size(); ++i) {
        yv[i] = av[i] - bv[i];
    }
    if (track) {
        tape.record([a = a, b = b, y]() mutable {
            auto g = y.grad();
            if (a.requires_grad()) {
                auto ga = a.grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                auto gb = b.grad();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
        });
    }
    return y;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b)
{
    check_same_shape(a, b, "mul");
    const bool track = any_grad({&a, &b});
    Tensor y = output(a.shape(), track);
    auto yv = y.values();
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < yv.size(); ++i) {
        yv[i] = av[i] * bv[i];
    }
    if (track) {
        tape.record([a = a, b = b, y]() mutable {
            auto g = y.grad();
            auto av = a.values();
            auto bv = b.values();
            if (a.requires_grad()) {
                auto ga = a.grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
            }
            if (b.requires_grad()) {
                auto gb = b.grad();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
            }
        });
    }
    return y;
}

Tensor affine(Tape& tape, const Tensor& a, double alpha, double beta)
{
    const bool track = a.requires_grad();
    Tensor y = output(a.shape(), track);
    auto yv = y.values();
    auto av = a.values();
    for (std::size_t i = 0; i < yv.size(); ++i) {
        yv[i] = alpha * av[i] + beta;
    }
    if (track) {
        tape.record([a = a, y, alpha]() mutable {
            auto g = y.grad();
            auto ga = a.grad();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += alpha * g[i];
        });
    }
    return y;
}

Tensor abs(Tape& tape, const Tensor& a)
{
    const bool track = a.requires_grad();
    Tensor y = output(a.shape(), track);
    auto yv = y.values();
    auto av = a.values();
    for (std::size_t i = 0; i < yv.size(); ++i) {
        yv[i] = std::abs(av[i]);
    }
    if (track) {
        tape.record([a = a, y]() mutable {
            auto g = y.grad();
            auto ga = a.grad();
            auto av = a.values();
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] += av[i] > 0.0 ? g[i] : (av[i] < 0.0 ? -g[i] : 0.0);
            }
        });
    }
    return y;
}

Tensor relu(Tape& tape, const Tensor& a)
{
    const bool track = a.requires_grad();
    Tensor y = output(a.shape(), track);
    auto yv = y.values();
    auto av = a.values();
    for (std::size_t i = 0; i < yv.size(); ++i) {
        yv[i] = av[i] > 0.0 ? av[i] : 0.0;
    }
    if (track) {
        tape.record([a = a, y]() mutable {
            auto g = y.grad();
            auto ga = a.grad();
            auto av = a.values();
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (av[i] > 0.0) ga[i] += g[i];
            }
        });
    }
    return y;
}

Tensor minimum(Tape& tape, const Tensor& a, const Tensor& b)
{
    check_same_shape(a, b, "minimum");
    const bool track = any_grad({&a, &b});
    Tensor y = output(a.shape(), track);
    auto yv = y.values();
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < yv.size(); ++i) {
        yv[i] = bv[i] < av[i] ? bv[i] : av[i];
    }
    if (track) {
        tape.record([a = a, b = b, y]() mutable {
            auto g = y.grad();
            auto av = a.values();
            auto bv = b.values();
            for (std::size_t i = 0; i < g.size(); ++i) {
                const bool pick_b = bv[i] < av[i];
                if (pick_b && b.requires_grad()) {
                    b.grad()[i] += g[i];
                } else if (!pick_b && a.requires_grad()) {
                    a.grad()[i] += g[i];
                }
            }
        });
    }
    return y;
}

Tensor sum(Tape& tape, const Tensor& a)
{
    const bool track = a.requires_grad();
    Tensor y = output(Shape{1}, track);
    double s = 0.0;
    for (double v : a.values()) {
        s += v;
    }
    y[0] = s;
    if (track) {
        tape.record([a = a, y]() mutable {
            const double g = y.grad()[0];
            for (double& ga : a.grad()) ga += g;
        });
    }
    return y;
}

Tensor reshape(Tape& tape, const Tensor& a, Shape shape)
{
    require(shape_size(shape) == a.size(), ErrorKind::ShapeMismatch,
            "reshape " + shape_string(a.shape()) + " to " + shape_string(shape));
    const bool track = a.requires_grad();
    Tensor y(std::move(shape), std::vector<double>(a.values().begin(), a.values().end()), track);
    if (track) {
        tape.record([a = a, y]() mutable {
            auto g = y.grad();
            auto ga = a.grad();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        });
    }
    return y;
}

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b)
{
    check_rank(a, 2, "matmul");
    check_rank(b, 2, "matmul");
    const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
    require(b.dim(0) == k, ErrorKind::ShapeMismatch,
            "matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
    const bool track = any_grad({&a, &b});
    Tensor y = output(Shape{n, m}, track);
    auto av = a.values();
    auto bv = b.values();
    auto yv = y.values();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            for (std::size_t j = 0; j < m; ++j) {
                yv[i * m + j] += aip * bv[p * m + j];
            }
        }
    }
    if (track) {
        tape.record([a = a, b = b, y, n, k, m]() mutable {
            auto g = y.grad();
            auto av = a.values();
            auto bv = b.values();
            if (a.requires_grad()) {
                auto ga = a.grad();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        double s = 0.0;
                        for (std::size_t j = 0; j < m; ++j) s += g[i * m + j] * bv[p * m + j];
                        ga[i * k + p] += s;
                    }
            }
            if (b.requires_grad()) {
                auto gb = b.grad();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        const double aip = av[i * k + p];
                        for (std::size_t j = 0; j < m; ++j) gb[p * m + j] += aip * g[i * m + j];
                    }
            }
        });
    }
    return y;
}

Tensor linear(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias)
{
    check_rank(x, 2, "linear");
    check_rank(weight, 2, "linear");
    const std::size_t n = x.dim(0), in = x.dim(1), out = weight.dim(0);
    require(weight.dim(1) == in, ErrorKind::ShapeMismatch,
            "linear: input " + shape_string(x.shape()) + " vs weight " + shape_string(weight.shape()));
    const bool has_bias = bias.defined();
    if (has_bias) {
        require(bias.size() == out, ErrorKind::ShapeMismatch, "linear: bias width");
    }
    const bool track = any_grad({&x, &weight, &bias});
    Tensor y = output(Shape{n, out}, track);
    const double* xv = x.values().data();
    const double* wv = weight.values().data();
    double* yv = y.values().data();
    for (std::size_t i = 0; i < n; ++i) {
        const double* xi = xv + i * in;
        for (std::size_t o = 0; o < out; ++o) {
            const double* wo = wv + o * in;
            double s = has_bias ? bias[o] : 0.0;
            for (std::size_t c = 0; c < in; ++c) s += wo[c] * xi[c];
            yv[i * out + o] = s;
        }
    }
    if (track) {
        tape.record([x = x, weight = weight, bias = bias, y, n, in, out, has_bias]() mutable {
            const double* g = y.grad().data();
            const double* xv = x.values().data();
            const double* wv = weight.values().data();
            if (x.requires_grad()) {
                double* gx = x.grad().data();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t o = 0; o < out; ++o) {
                        const double go = g[i * out + o];
                        if (go == 0.0) continue;
                        const double* wo = wv + o * in;
                        for (std::size_t c = 0; c < in; ++c) gx[i * in + c] += go * wo[c];
                    }
            }
            if (weight.requires_grad()) {
                double* gw = weight.grad().data();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t o = 0; o < out; ++o) {
                        const double go = g[i * out + o];
                        if (go == 0.0) continue;
                        const double* xi = xv + i * in;
                        for (std::size_t c = 0; c < in; ++c) gw[o * in + c] += go * xi[c];
                    }
            }
            if (has_bias && bias.requires_grad()) {
                auto gb = bias.grad();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t o = 0; o < out; ++o) gb[o] += g[i * out + o];
            }
        });
    }
    return y;
}

Tensor gather_rows(Tape& tape, const Tensor& a, std::span<const std::size_t> rows)
{
    check_rank(a, 2, "gather_rows");
    const std::size_t c = a.dim(1);
    const bool track = a.requires_grad();
    Tensor y = output(Shape{rows.size(), c}, track);
    auto av = a.values();
    auto yv = y.values();
    for (std::size_t r = 0; r < rows.size(); ++r) {
        require(rows[r] < a.dim(0), ErrorKind::InvalidArgument, "gather_rows: index out of range");
        std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(rows[r] * c), c,
                    yv.begin() + static_cast<std::ptrdiff_t>(r * c));
    }
    if (track) {
        std::vector<std::size_t> idx(rows.begin(), rows.end());
        tape.record([a = a, y, idx = std::move(idx), c]() mutable {
            auto g = y.grad();
            auto ga = a.grad();
            for (std::size_t r = 0; r < idx.size(); ++r)
                for (std::size_t k = 0; k < c; ++k) ga[idx[r] * c + k] += g[r * c + k];
        });
    }
    return y;
}

Tensor concat_cols(Tape& tape, const Tensor& a, const Tensor& b)
{
    check_rank(a, 2, "concat_cols");
    check_rank(b, 2, "concat_cols");
    require(a.dim(0) == b.dim(0), ErrorKind::ShapeMismatch, "concat_cols: row counts differ");
    const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), c = ca + cb;
    const bool track = any_grad({&a, &b});
    Tensor y = output(Shape{n, c}, track);
    auto yv = y.values();
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < ca; ++k) yv[i * c + k] = av[i * ca + k];
        for (std::size_t k = 0; k < cb; ++k) yv[i * c + ca + k] = bv[i * cb + k];
    }
    if (track) {
        tape.record([a = a, b = b, y, n, ca, cb, c]() mutable {
            auto g = y.grad();
            if (a.requires_grad()) {
                auto ga = a.grad();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t k = 0; k < ca; ++k) ga[i * ca + k] += g[i * c + k];
            }
            if (b.requires_grad()) {
                auto gb = b.grad();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t k = 0; k < cb; ++k) gb[i * cb + k] += g[i * c + ca + k];
            }
        });
    }
    return y;
}

Tensor group_max(Tape& tape, const Tensor& a, std::size_t k)
{
    check_rank(a, 2, "group_max");
    require(k >= 1 && a.dim(0) % k == 0, ErrorKind::ShapeMismatch, "group_max: rows not divisible by group size");
    const std::size_t n = a.dim(0) / k, c = a.dim(1);
    const bool track = a.requires_grad();
    Tensor y = output(Shape{n, c}, track);
    std::vector<std::size_t> arg(n * c);
    auto av = a.values();
    auto yv = y.values();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            std::size_t best = i * k;
            for (std::size_t j = i * k + 1; j < (i + 1) * k; ++j) {
                if (av[j * c + ch] > av[best * c + ch]) best = j;
            }
            arg[i * c + ch] = best;
            yv[i * c + ch] = av[best * c + ch];
        }
    }
    if (track) {
        tape.record([a = a, y, arg = std::move(arg), c]() mutable {
            auto g = y.grad();
            auto ga = a.grad();
            for (std::size_t e = 0; e < arg.size(); ++e) ga[arg[e] * c + e % c] += g[e];
        });
    }
    return y;
}

Tensor sparse_blend(Tape& tape, const Tensor& a, const SparseRows& map)
{
    check_rank(a, 2, "sparse_blend");
    require(map.offsets.size() == map.rows + 1, ErrorKind::ShapeMismatch, "sparse_blend: malformed map");
    const std::size_t c = a.dim(1);
    const bool track = a.requires_grad();
    Tensor y = output(Shape{map.rows, c}, track);
    const double* av = a.values().data();
    double* yv = y.values().data();
    for (std::size_t r = 0; r < map.rows; ++r) {
        for (std::size_t e = map.offsets[r]; e < map.offsets[r + 1]; ++e) {
            require(map.cols[e] < a.dim(0), ErrorKind::InvalidArgument, "sparse_blend: column out of range");
            const double w = map.weights[e];
            const double* src = av + map.cols[e] * c;
            for (std::size_t k = 0; k < c; ++k) yv[r * c + k] += w * src[k];
        }
    }
    if (track) {
        tape.record([a = a, y, map, c]() mutable {
            const double* g = y.grad().data();
            double* ga = a.grad().data();
            for (std::size_t r = 0; r < map.rows; ++r)
                for (std::size_t e = map.offsets[r]; e < map.offsets[r + 1]; ++e) {
                    const double w = map.weights[e];
                    double* dst = ga + map.cols[e] * c;
                    for (std::size_t k = 0; k < c; ++k) dst[k] += w * g[r * c + k];
                }
        });
    }
    return y;
}

Tensor row_dot(Tape& tape, const Tensor& a, const Tensor& b)
{
    check_rank(a, 2, "row_dot");
    check_same_shape(a, b, "row_dot");
    const std::size_t n = a.dim(0), c = a.dim(1);
    const bool track = any_grad({&a, &b});
    Tensor y = output(Shape{n}, track);
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < c; ++k) s += av[i * c + k] * bv[i * c + k];
        y[i] = s;
    }
    if (track) {
        tape.record([a = a, b = b, y, n, c]() mutable {
            auto g = y.grad();
            auto av = a.values();
            auto bv = b.values();
            if (a.requires_grad()) {
                auto ga = a.grad();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t k = 0; k < c; ++k) ga[i * c + k] += g[i] * bv[i * c + k];
            }
            if (b.requires_grad()) {
                auto gb = b.grad();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t k = 0; k < c; ++k) gb[i * c + k] += g[i] * av[i * c + k];
            }
        });
    }
    return y;
}

Tensor cross_rows(Tape& tape, const Tensor& a, const Tensor& b)
{
    check_rank(a, 2, "cross_rows");
    check_same_shape(a, b, "cross_rows");
    require(a.dim(1) == 3, ErrorKind::ShapeMismatch, "cross_rows needs [n,3]");
    const std::size_t n = a.dim(0);
    const bool track = any_grad({&a, &b});
    Tensor y = output(Shape{n, 3}, track);
    auto av = a.values();
    auto bv = b.values();
    auto yv = y.values();
    for (std::size_t i = 0; i < n; ++i) {
        const double* p = &av[3 * i];
        const double* q = &bv[3 * i];
        yv[3 * i + 0] = p[1] * q[2] - p[2] * q[1];
        yv[3 * i + 1] = p[2] * q[0] - p[0] * q[2];
        yv[3 * i + 2] = p[0] * q[1] - p[1] * q[0];
    }
    if (track) {
        tape.record([a = a, b = b, y, n]() mutable {
            auto g = y.grad();
            auto av = a.values();
            auto bv = b.values();
            for (std::size_t i = 0; i < n; ++i) {
                const double* gi = &g[3 * i];
                // d(a x b)/da applied to g is b x g; d/db is g x a
                if (a.requires_grad()) {
                    const double* q = &bv[3 * i];
                    double* ga = &a.grad()[3 * i];
                    ga[0] += q[1] * gi[2] - q[2] * gi[1];
                    ga[1] += q[2] * gi[0] - q[0] * gi[2];
                    ga[2] += q[0] * gi[1] - q[1] * gi[0];
                }
                if (b.requires_grad()) {
                    const double* p = &av[3 * i];
                    double* gb = &b.grad()[3 * i];
                    gb[0] += gi[1] * p[2] - gi[2] * p[1];
                    gb[1] += gi[2] * p[0] - gi[0] * p[2];
                    gb[2] += gi[0] * p[1] - gi[1] * p[0];
                }
            }
        });
    }
    return y;
}

Tensor normalize_rows(Tape& tape, const Tensor& a, double eps)
{
    check_rank(a, 2, "normalize_rows");
    const std::size_t n = a.dim(0), c = a.dim(1);
    const bool track = a.requires_grad();
    Tensor y = output(Shape{n, c}, track);
    std::vector<double> inv(n);
    auto av = a.values();
    auto yv = y.values();
    for (std::size_t i = 0; i < n; ++i) {
        double s = eps * eps;
        for (std::size_t k = 0; k < c; ++k) s += av[i * c + k] * av[i * c + k];
        inv[i] = 1.0 / std::sqrt(s);
        for (std::size_t k = 0; k < c; ++k) yv[i * c + k] = av[i * c + k] * inv[i];
    }
    if (track) {
        tape.record([a = a, y, inv = std::move(inv), n, c]() mutable {
            auto g = y.grad();
            auto ga = a.grad();
            auto yv = y.values();
            // dy/da = (I - y y^T) * inv  (exact for the eps-regularized norm up to eps^2 terms in y y^T)
            for (std::size_t i = 0; i < n; ++i) {
                double gy = 0.0;
                for (std::size_t k = 0; k < c; ++k) gy += g[i * c + k] * yv[i * c + k];
                for (std::size_t k = 0; k < c; ++k) ga[i * c + k] += inv[i] * (g[i * c + k] - yv[i * c + k] * gy);
            }
        });
    }
    return y;
}

Tensor clamp_norm_rows(Tape& tape, const Tensor& a, double max_norm)
{
    check_rank(a, 2, "clamp_norm_rows");
    require(max_norm > 0.0, ErrorKind::InvalidArgument, "clamp_norm_rows: max_norm must be positive");
    const std::size_t n = a.dim(0), c = a.dim(1);
    const bool track = a.requires_grad();
    Tensor y = output(Shape{n, c}, track);
    std::vector<double> norms(n);
    auto av = a.values();
    auto yv = y.values();
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < c; ++k) s += av[i * c + k] * av[i * c + k];
        norms[i] = std::sqrt(s);
        const double f = norms[i] > max_norm ? max_norm / norms[i] : 1.0;
        for (std::size_t k = 0; k < c; ++k) yv[i * c + k] = av[i * c + k] * f;
    }
    if (track) {
        tape.record([a = a, y, norms = std::move(norms), n, c, max_norm]() mutable {
            auto g = y.grad();
            auto ga = a.grad();
            auto av = a.values();
            for (std::size_t i = 0; i < n; ++i) {
                if (norms[i] <= max_norm) {
                    for (std::size_t k = 0; k < c; ++k) ga[i * c + k] += g[i * c + k];
                    continue;
                }
                // y = m * a / |a|  ->  dy/da = (m/|a|) (I - u u^T), u = a/|a|
                const double f = max_norm / norms[i];
                double gu = 0.0;
                for (std::size_t k = 0; k < c; ++k) gu += g[i * c + k] * av[i * c + k] / norms[i];
                for (std::size_t k = 0; k < c; ++k)
                    ga[i * c + k] += f * (g[i * c + k] - (av[i * c + k] / norms[i]) * gu);
            }
        });
    }
    return y;
}

Tensor rigid_rows(Tape& tape, const Tensor& a, std::span<const Eigen::Matrix3d> rotations,
                  std::span<const Eigen::Vector3d> translations, std::span<const std::size_t> frame)
{
    check_rank(a, 2, "rigid_rows");
    require(a.dim(1) == 3 && frame.size() == a.dim(0), ErrorKind::ShapeMismatch, "rigid_rows: shape");
    require(rotations.size() == translations.size(), ErrorKind::ShapeMismatch, "rigid_rows: frame arrays");
    const std::size_t n = a.dim(0);
    const bool track = a.requires_grad();
    Tensor y = output(Shape{n, 3}, track);
    auto av = a.values();
    auto yv = y.values();
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t f = frame[i];
        require(f < rotations.size(), ErrorKind::InvalidArgument, "rigid_rows: frame index out of range");
        const Eigen::Vector3d q(av[3 * i], av[3 * i + 1], av[3 * i + 2]);
        const Eigen::Vector3d w = rotations[f] * q + translations[f];
        yv[3 * i] = w.x();
        yv[3 * i + 1] = w.y();
        yv[3 * i + 2] = w.z();
    }
    if (track) {
        std::vector<Eigen::Matrix3d> rot(rotations.begin(), rotations.end());
        std::vector<std::size_t> fr(frame.begin(), frame.end());
        tape.record([a = a, y, rot = std::move(rot), fr = std::move(fr), n]() mutable {
            auto g = y.grad();
            auto ga = a.grad();
            for (std::size_t i = 0; i < n; ++i) {
                const Eigen::Vector3d gi(g[3 * i], g[3 * i + 1], g[3 * i + 2]);
                const Eigen::Vector3d back = rot[fr[i]].transpose() * gi;
                ga[3 * i] += back.x();
                ga[3 * i + 1] += back.y();
                ga[3 * i + 2] += back.z();
            }
        });
    }
    return y;
}

Tensor conv3d(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias, const SiteMask* in_active,
              const SiteMask* out_active)
{
    check_rank(x, 5, "conv3d");
    check_rank(weight, 5, "conv3d");
    const std::size_t B = x.dim(0), D0 = x.dim(1), D1 = x.dim(2), D2 = x.dim(3), Cin = x.dim(4);
    const std::size_t Cout = weight.dim(0);
    require(weight.dim(1) == Cin && weight.dim(2) == 3 && weight.dim(3) == 3 && weight.dim(4) == 3,
            ErrorKind::ShapeMismatch,
            "conv3d: weight " + shape_string(weight.shape()) + " vs input " + shape_string(x.shape()));
    require(bias.defined() && bias.size() == Cout, ErrorKind::ShapeMismatch, "conv3d: bias width");
    const std::size_t sites = B * D0 * D1 * D2;
    require(!in_active || in_active->size() == sites, ErrorKind::ShapeMismatch, "conv3d: input mask size");
    require(!out_active || out_active->size() == sites, ErrorKind::ShapeMismatch, "conv3d: output mask size");

    // Repack [Cout][Cin][27] -> [27][Cout][Cin] for contiguous inner loops.
    std::vector<double> wt(27 * Cout * Cin);
    {
        auto wv = weight.values();
        for (std::size_t co = 0; co < Cout; ++co)
            for (std::size_t ci = 0; ci < Cin; ++ci)
                for (std::size_t k = 0; k < 27; ++k) wt[(k * Cout + co) * Cin + ci] = wv[(co * Cin + ci) * 27 + k];
    }

    const bool track = any_grad({&x, &weight, &bias});
    Tensor y = output(Shape{B, D0, D1, D2, Cout}, track);
    const double* xv = x.values().data();
    const double* bv = bias.values().data();
    double* yv = y.values().data();

    // The backward pass outlives the caller's masks, so it keeps its own copies.
    auto in_mask = in_active ? std::make_shared<const SiteMask>(*in_active) : nullptr;
    auto out_mask = out_active ? std::make_shared<const SiteMask>(*out_active) : nullptr;
    auto site = [=](std::size_t b, std::size_t i0, std::size_t i1, std::size_t i2) {
        return ((b * D0 + i0) * D1 + i1) * D2 + i2;
    };
    // Visits every (output site, kernel tap, input site) triple that contributes.
    auto for_each_tap = [=](auto&& fn) {
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t o0 = 0; o0 < D0; ++o0)
                for (std::size_t o1 = 0; o1 < D1; ++o1)
                    for (std::size_t o2 = 0; o2 < D2; ++o2) {
                        const std::size_t o = site(b, o0, o1, o2);
                        if (out_mask && !(*out_mask)[o]) continue;
                        fn.begin(o);
                        for (std::size_t k0 = 0; k0 < 3; ++k0) {
                            if (o0 + k0 < 1 || o0 + k0 > D0) continue;
                            for (std::size_t k1 = 0; k1 < 3; ++k1) {
                                if (o1 + k1 < 1 || o1 + k1 > D1) continue;
                                for (std::size_t k2 = 0; k2 < 3; ++k2) {
                                    if (o2 + k2 < 1 || o2 + k2 > D2) continue;
                                    const std::size_t i = site(b, o0 + k0 - 1, o1 + k1 - 1, o2 + k2 - 1);
                                    if (in_mask && !(*in_mask)[i]) continue;
                                    fn.tap(o, (k0 * 3 + k1) * 3 + k2, i);
                                }
                            }
                        }
                    }
    };

    struct Forward {
        const double* xv;
        const double* bv;
        double* yv;
        const double* wt;
        std::size_t Cin, Cout;
        void begin(std::size_t o)
        {
            for (std::size_t co = 0; co < Cout; ++co) yv[o * Cout + co] = bv[co];
        }
        void tap(std::size_t o, std::size_t k, std::size_t i)
        {
            const double* xi = xv + i * Cin;
            const double* wk = wt + k * Cout * Cin;
            double* yo = yv + o * Cout;
            for (std::size_t co = 0; co < Cout; ++co) {
                double s = yo[co];
                const double* w = wk + co * Cin;
                for (std::size_t ci = 0; ci < Cin; ++ci) s += w[ci] * xi[ci];
                yo[co] = s;
            }
        }
    };
    for_each_tap(Forward{xv, bv, yv, wt.data(), Cin, Cout});

    if (track) {
        tape.record([x = x, weight = weight, bias = bias, y, wt = std::move(wt), for_each_tap, Cin, Cout]() mutable {
            struct Backward {
                const double* xv;
                const double* g;
                const double* wt;
                double* gx;       // null when x does not need grad
                double* gwt;      // null when weight does not need grad
                double* gb;       // null when bias does not need grad
                std::size_t Cin, Cout;
                bool skip = false;
                void begin(std::size_t o)
                {
                    const double* go = g + o * Cout;
                    skip = std::all_of(go, go + Cout, [](double v) { return v == 0.0; });
                    if (!skip && gb) {
                        for (std::size_t co = 0; co < Cout; ++co) gb[co] += go[co];
                    }
                }
                void tap(std::size_t o, std::size_t k, std::size_t i)
                {
                    if (skip) return;
                    const double* go = g + o * Cout;
                    const double* xi = xv + i * Cin;
                    const double* wk = wt + k * Cout * Cin;
                    for (std::size_t co = 0; co < Cout; ++co) {
                        const double gc = go[co];
                        if (gc == 0.0) continue;
                        if (gwt) {
                            double* gw = gwt + (k * Cout + co) * Cin;
                            for (std::size_t ci = 0; ci < Cin; ++ci) gw[ci] += gc * xi[ci];
                        }
                        if (gx) {
                            const double* w = wk + co * Cin;
                            double* gxi = gx + i * Cin;
                            for (std::size_t ci = 0; ci < Cin; ++ci) gxi[ci] += gc * w[ci];
                        }
                    }
                }
            };
            std::vector<double> gwt(weight.requires_grad() ? wt.size() : 0, 0.0);
            for_each_tap(Backward{x.values().data(), y.grad().data(), wt.data(),
                                  x.requires_grad() ? x.grad().data() : nullptr,
                                  weight.requires_grad() ? gwt.data() : nullptr,
                                  bias.requires_grad() ? bias.grad().data() : nullptr, Cin, Cout});
            if (weight.requires_grad()) {
                auto gw = weight.grad();
                for (std::size_t co = 0; co < Cout; ++co)
                    for (std::size_t ci = 0; ci < Cin; ++ci)
                        for (std::size_t k = 0; k < 27; ++k) gw[(co * Cin + ci) * 27 + k] += gwt[(k * Cout + co) * Cin + ci];
            }
        });
    }
    return y;
}

Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias, const SiteMask* out_active)
{
    check_rank(x, 4, "conv2d");
    check_rank(weight, 4, "conv2d");
    const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), Cin = x.dim(3);
    const std::size_t Cout = weight.dim(0), K = weight.dim(2);
    require(weight.dim(1) == Cin && weight.dim(3) == K && K % 2 == 1, ErrorKind::ShapeMismatch,
            "conv2d: weight " + shape_string(weight.shape()) + " vs input " + shape_string(x.shape()));
    require(bias.defined() && bias.size() == Cout, ErrorKind::ShapeMismatch, "conv2d: bias width");
    require(!out_active || out_active->size() == B * H * W, ErrorKind::ShapeMismatch, "conv2d: output mask size");
    const std::size_t pad = K / 2;
    const std::size_t taps = K * K;

    std::vector<double> wt(taps * Cout * Cin);
    {
        auto wv = weight.values();
        for (std::size_t co = 0; co < Cout; ++co)
            for (std::size_t ci = 0; ci < Cin; ++ci)
                for (std::size_t k = 0; k < taps; ++k) wt[(k * Cout + co) * Cin + ci] = wv[(co * Cin + ci) * taps + k];
    }
    const bool track = any_grad({&x, &weight, &bias});
    Tensor y = output(Shape{B, H, W, Cout}, track);

    // (output site, tap, input site) triples, shared by forward and backward.
    std::vector<std::size_t> plan;  // o, k, i triples; o with k == taps marks a row start
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t oh = 0; oh < H; ++oh)
            for (std::size_t ow = 0; ow < W; ++ow) {
                const std::size_t o = (b * H + oh) * W + ow;
                if (out_active && !(*out_active)[o]) continue;
                plan.insert(plan.end(), {o, taps, o});
                for (std::size_t kh = 0; kh < K; ++kh) {
                    if (oh + kh < pad || oh + kh - pad >= H) continue;
                    for (std::size_t kw = 0; kw < K; ++kw) {
                        if (ow + kw < pad || ow + kw - pad >= W) continue;
                        plan.insert(plan.end(), {o, kh * K + kw, (b * H + oh + kh - pad) * W + ow + kw - pad});
                    }
                }
            }

    const double* xv = x.values().data();
    const double* bv = bias.values().data();
    double* yv = y.values().data();
    for (std::size_t p = 0; p < plan.size(); p += 3) {
        const std::size_t o = plan[p], k = plan[p + 1], i = plan[p + 2];
        double* yo = yv + o * Cout;
        if (k == taps) {
            for (std::size_t co = 0; co < Cout; ++co) yo[co] = bv[co];
            continue;
        }
        const double* xi = xv + i * Cin;
        for (std::size_t co = 0; co < Cout; ++co) {
            double s = yo[co];
            const double* w = wt.data() + (k * Cout + co) * Cin;
            for (std::size_t ci = 0; ci < Cin; ++ci) s += w[ci] * xi[ci];
            yo[co] = s;
        }
    }

    if (track) {
        tape.record([x = x, weight = weight, bias = bias, y, wt = std::move(wt), plan = std::move(plan), Cin, Cout, taps]() mutable {
            const double* g = y.grad().data();
            const double* xv = x.values().data();
            double* gx = x.requires_grad() ? x.grad().data() : nullptr;
            double* gb = bias.requires_grad() ? bias.grad().data() : nullptr;
            std::vector<double> gwt(weight.requires_grad() ? wt.size() : 0, 0.0);
            for (std::size_t p = 0; p < plan.size(); p += 3) {
                const std::size_t o = plan[p], k = plan[p + 1], i = plan[p + 2];
                const double* go = g + o * Cout;
                if (k == taps) {
                    if (gb) for (std::size_t co = 0; co < Cout; ++co) gb[co] += go[co];
                    continue;
                }
                const double* xi = xv + i * Cin;
                for (std::size_t co = 0; co < Cout; ++co) {
                    const double gc = go[co];
                    if (gc == 0.0) continue;
                    if (!gwt.empty()) {
                        double* gw = gwt.data() + (k * Cout + co) * Cin;
                        for (std::size_t ci = 0; ci < Cin; ++ci) gw[ci] += gc * xi[ci];
                    }
                    if (gx) {
                        const double* w = wt.data() + (k * Cout + co) * Cin;
                        for (std::size_t ci = 0; ci < Cin; ++ci) gx[i * Cin + ci] += gc * w[ci];
                    }
                }
            }
            if (!gwt.empty()) {
                auto gw = weight.grad();
                for (std::size_t co = 0; co < Cout; ++co)
                    for (std::size_t ci = 0; ci < Cin; ++ci)
                        for (std::size_t k = 0; k < taps; ++k)
                            gw[(co * Cin + ci) * taps + k] += gwt[(k * Cout + co) * Cin + ci];
            }
        });
    }
    return y;
}

} // namespace crossup::nn
