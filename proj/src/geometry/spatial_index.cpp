#include "crossup/geometry/spatial_index.hpp"

#include "crossup/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <utility>

namespace crossup::geometry {

namespace {

using Candidate = std::pair<double, std::size_t>;  // (squared distance, index)

} // namespace

SpatialIndex::SpatialIndex(std::span<const Vec3> points, std::size_t leaf_size)
    : points_(points.begin(), points.end()), leaf_size_(std::max<std::size_t>(1, leaf_size))
{
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    if (!points_.empty()) {
        nodes_.reserve(2 * points_.size() / leaf_size_ + 2);
        build(0, points_.size());
    }
}

std::size_t SpatialIndex::build(std::size_t begin, std::size_t end)
{
    const std::size_t id = nodes_.size();
    nodes_.emplace_back();
    Vec3 lo = points_[order_[begin]];
    Vec3 hi = lo;
    for (std::size_t i = begin; i < end; ++i) {
        lo = lo.cwiseMin(points_[order_[i]]);
        hi = hi.cwiseMax(points_[order_[i]]);
    }
    nodes_[id].begin = begin;
    nodes_[id].end = end;
    nodes_[id].box_min = lo;
    nodes_[id].box_max = hi;

    if (end - begin <= leaf_size_) {
        return id;
    }
    int dim = 0;
    (hi - lo).maxCoeff(&dim);
    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                     order_.begin() + static_cast<std::ptrdiff_t>(mid),
                     order_.begin() + static_cast<std::ptrdiff_t>(end),
                     [&](std::size_t a, std::size_t b) {
                         double pa = points_[a][dim];
                         double pb = points_[b][dim];
                         return pa < pb || (pa == pb && a < b);
                     });
    const std::size_t left = build(begin, mid);
    const std::size_t right = build(mid, end);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
}

double SpatialIndex::box_distance2(const Node& node, const Vec3& q) const
{
    double d2 = 0.0;
    for (int k = 0; k < 3; ++k) {
        double d = 0.0;
        if (q[k] < node.box_min[k]) {
            d = node.box_min[k] - q[k];
        } else if (q[k] > node.box_max[k]) {
            d = q[k] - node.box_max[k];
        }
        d2 += d * d;
    }
    return d2;
}

std::vector<Neighbor> SpatialIndex::knn(const Vec3& query, std::size_t k) const
{
    require(!points_.empty(), ErrorKind::EmptyIndex, "knn on an empty index");
    require(k >= 1, ErrorKind::InvalidArgument, "knn requires k >= 1");
    k = std::min(k, points_.size());

    // Max-heap on (d2, index): the top is the current worst candidate.
    std::priority_queue<Candidate> heap;
    std::vector<std::size_t> stack{0};
    while (!stack.empty()) {
        const Node& node = nodes_[stack.back()];
        stack.pop_back();
        if (heap.size() == k && box_distance2(node, query) > heap.top().first) {
            continue;
        }
        if (node.left == 0) {
            for (std::size_t i = node.begin; i < node.end; ++i) {
                const std::size_t idx = order_[i];
                Candidate c{(points_[idx] - query).squaredNorm(), idx};
                if (heap.size() < k) {
                    heap.push(c);
                } else if (c < heap.top()) {
                    heap.pop();
                    heap.push(c);
                }
            }
            continue;
        }
        // Visit the nearer child first: push it last.
        const Node& l = nodes_[node.left];
        const Node& r = nodes_[node.right];
        if (box_distance2(l, query) <= box_distance2(r, query)) {
            stack.push_back(node.right);
            stack.push_back(node.left);
        } else {
            stack.push_back(node.left);
            stack.push_back(node.right);
        }
    }

    std::vector<Neighbor> out(heap.size());
    for (std::size_t i = out.size(); i-- > 0;) {
        out[i] = Neighbor{heap.top().second, std::sqrt(heap.top().first)};
        heap.pop();
    }
    return out;
}

Neighbor SpatialIndex::nearest(const Vec3& query) const
{
    return knn(query, 1).front();
}

std::vector<Neighbor> SpatialIndex::within(const Vec3& query, double radius) const
{
    require(!points_.empty(), ErrorKind::EmptyIndex, "radius query on an empty index");
    const double r2 = radius * radius;
    std::vector<Candidate> hits;
    std::vector<std::size_t> stack{0};
    while (!stack.empty()) {
        const Node& node = nodes_[stack.back()];
        stack.pop_back();
        if (box_distance2(node, query) > r2) {
            continue;
        }
        if (node.left == 0) {
            for (std::size_t i = node.begin; i < node.end; ++i) {
                const std::size_t idx = order_[i];
                const double d2 = (points_[idx] - query).squaredNorm();
                if (d2 <= r2) {
                    hits.emplace_back(d2, idx);
                }
            }
            continue;
        }
        stack.push_back(node.left);
        stack.push_back(node.right);
    }
    std::sort(hits.begin(), hits.end());
    std::vector<Neighbor> out;
    out.reserve(hits.size());
    for (const auto& [d2, idx] : hits) {
        out.push_back(Neighbor{idx, std::sqrt(d2)});
    }
    return out;
}

std::vector<std::size_t> SpatialIndex::radius_neighbors(const Vec3& query, const RadiusQuery& q) const
{
    require(q.radius > 0.0, ErrorKind::InvalidArgument, "radius must be positive");
    require(q.cap >= 1, ErrorKind::InvalidArgument, "cap must be >= 1");
    std::vector<Neighbor> hits = within(query, q.radius);
    if (hits.size() < q.min_count) {
        hits = knn(query, q.cap);
    }
    std::vector<std::size_t> out;
    const std::size_t count = std::min(q.cap, hits.size());
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        out.push_back(hits[i].index);
    }
    return out;
}

std::vector<std::vector<std::size_t>> knn_graph(const SpatialIndex& index, std::size_t k)
{
    std::vector<std::vector<std::size_t>> graph(index.size());
    for (std::size_t i = 0; i < index.size(); ++i) {
        auto hits = index.knn(index.point(i), k + 1);
        auto& row = graph[i];
        row.reserve(k);
        for (const Neighbor& nb : hits) {
            if (nb.index != i && row.size() < k) {
                row.push_back(nb.index);
            }
        }
    }
    return graph;
}

} // namespace crossup::geometry
