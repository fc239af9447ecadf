#include "crossup/geometry/point_cloud.hpp"

#include "crossup/error.hpp"

#include <cmath>
#include <string>

namespace crossup::geometry {

PointCloud::PointCloud(std::vector<Vec3> points) : points_(std::move(points)) {}

PointCloud::PointCloud(std::vector<Vec3> points, std::vector<Vec3> normals)
    : points_(std::move(points))
{
    set_normals(std::move(normals));
}

const std::vector<Vec3>& PointCloud::normals() const
{
    require(normals_.has_value(), ErrorKind::InvalidArgument, "point cloud has no normals");
    return *normals_;
}

void PointCloud::set_normals(std::vector<Vec3> normals)
{
    require(normals.size() == points_.size(), ErrorKind::ShapeMismatch,
            "normal count " + std::to_string(normals.size()) + " != point count " +
                std::to_string(points_.size()));
    normals_ = std::move(normals);
}

std::span<const double> PointCloud::attr(std::size_t i) const
{
    return std::span<const double>(attrs_).subspan(i * attr_width_, attr_width_);
}

void PointCloud::set_attrs(std::size_t width, std::vector<double> values)
{
    require(width == 0 ? values.empty() : values.size() == width * points_.size(),
            ErrorKind::ShapeMismatch, "attribute buffer does not match point count");
    attr_width_ = width;
    attrs_ = std::move(values);
}

void PointCloud::push_back(const Vec3& p)
{
    require(!normals_ && !has_attrs(), ErrorKind::InvalidArgument,
            "push_back without normals on a cloud that carries normals or attributes");
    points_.push_back(p);
}

void PointCloud::push_back(const Vec3& p, const Vec3& n)
{
    require(normals_.has_value() || points_.empty(), ErrorKind::InvalidArgument,
            "push_back with a normal on a cloud without normals");
    require(!has_attrs(), ErrorKind::InvalidArgument, "cloud carries attributes");
    if (!normals_) {
        normals_.emplace();
    }
    points_.push_back(p);
    normals_->push_back(n);
}

PointCloud PointCloud::select(std::span<const std::size_t> indices) const
{
    PointCloud out;
    out.points_.reserve(indices.size());
    for (std::size_t i : indices) {
        out.points_.push_back(points_.at(i));
    }
    if (normals_) {
        std::vector<Vec3> ns;
        ns.reserve(indices.size());
        for (std::size_t i : indices) {
            ns.push_back((*normals_)[i]);
        }
        out.normals_ = std::move(ns);
    }
    if (has_attrs()) {
        std::vector<double> values;
        values.reserve(indices.size() * attr_width_);
        for (std::size_t i : indices) {
            auto a = attr(i);
            values.insert(values.end(), a.begin(), a.end());
        }
        out.attr_width_ = attr_width_;
        out.attrs_ = std::move(values);
    }
    return out;
}

void PointCloud::validate() const
{
    for (std::size_t i = 0; i < points_.size(); ++i) {
        require(points_[i].allFinite(), ErrorKind::InvalidArgument,
                "non-finite coordinate at point " + std::to_string(i));
    }
    if (normals_) {
        require(normals_->size() == points_.size(), ErrorKind::ShapeMismatch,
                "normal count does not match point count");
        for (std::size_t i = 0; i < normals_->size(); ++i) {
            require(std::abs((*normals_)[i].norm() - 1.0) <= 1e-6, ErrorKind::InvalidArgument,
                    "normal " + std::to_string(i) + " is not unit length");
        }
    }
    if (has_attrs()) {
        require(attrs_.size() == attr_width_ * points_.size(), ErrorKind::ShapeMismatch,
                "attribute count does not match point count");
    }
}

bool PointCloud::is_valid() const noexcept
{
    try {
        validate();
        return true;
    } catch (const Error&) {
        return false;
    }
}

bool Aabb::contains(const Vec3& p, double dilation) const
{
    for (int k = 0; k < 3; ++k) {
        if (p[k] < min[k] - dilation || p[k] > max[k] + dilation) {
            return false;
        }
    }
    return true;
}

Aabb bounding_box(std::span<const Vec3> points)
{
    require(!points.empty(), ErrorKind::InvalidArgument, "bounding box of an empty cloud");
    Aabb box{points[0], points[0]};
    for (const Vec3& p : points) {
        box.min = box.min.cwiseMin(p);
        box.max = box.max.cwiseMax(p);
    }
    return box;
}

Vec3 centroid(std::span<const Vec3> points)
{
    require(!points.empty(), ErrorKind::InvalidArgument, "centroid of an empty cloud");
    Vec3 sum = Vec3::Zero();
    for (const Vec3& p : points) {
        sum += p;
    }
    return sum / static_cast<double>(points.size());
}

} // namespace crossup::geometry
