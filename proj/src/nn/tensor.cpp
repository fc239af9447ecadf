#include "crossup/nn/tensor.hpp"

#include "crossup/error.hpp"

#include <algorithm>
#include <numeric>

namespace crossup::nn {

std::size_t shape_size(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape)
{
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        s += (i ? "," : "") + std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor::Tensor(Shape shape, double fill, bool requires_grad) : storage_(std::make_shared<Storage>())
{
    storage_->value.assign(shape_size(shape), fill);
    storage_->shape = std::move(shape);
    storage_->requires_grad = requires_grad;
    if (requires_grad) {
        storage_->grad.assign(storage_->value.size(), 0.0);
    }
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) : storage_(std::make_shared<Storage>())
{
    require(values.size() == shape_size(shape), ErrorKind::ShapeMismatch,
            "tensor of shape " + shape_string(shape) + " given " + std::to_string(values.size()) + " values");
    storage_->shape = std::move(shape);
    storage_->value = std::move(values);
    storage_->requires_grad = requires_grad;
    if (requires_grad) {
        storage_->grad.assign(storage_->value.size(), 0.0);
    }
}

Tensor Tensor::scalar(double value, bool requires_grad)
{
    return Tensor(Shape{1}, std::vector<double>{value}, requires_grad);
}

const Shape& Tensor::shape() const
{
    require(defined(), ErrorKind::InvalidArgument, "undefined tensor");
    return storage_->shape;
}

std::size_t Tensor::size() const
{
    return defined() ? storage_->value.size() : 0;
}

std::span<double> Tensor::values()
{
    return storage_->value;
}

std::span<const double> Tensor::values() const
{
    return storage_->value;
}

double Tensor::item() const
{
    require(size() == 1, ErrorKind::ShapeMismatch, "item() on a tensor with " + std::to_string(size()) + " values");
    return storage_->value[0];
}

bool Tensor::requires_grad() const
{
    return defined() && storage_->requires_grad;
}

std::span<double> Tensor::grad()
{
    return storage_->grad;
}

std::span<const double> Tensor::grad() const
{
    return storage_->grad;
}

void Tensor::zero_grad()
{
    std::fill(storage_->grad.begin(), storage_->grad.end(), 0.0);
}

Tensor Tensor::detach() const
{
    return Tensor(shape(), storage_->value, false);
}

Tensor Tensor::clone() const
{
    Tensor t(shape(), storage_->value, requires_grad());
    if (requires_grad()) {
        std::copy(storage_->grad.begin(), storage_->grad.end(), t.storage_->grad.begin());
    }
    return t;
}

Tensor Tensor::reshaped(Shape shape) const
{
    require(shape_size(shape) == size(), ErrorKind::ShapeMismatch,
            "cannot reshape " + shape_string(this->shape()) + " to " + shape_string(shape));
    return Tensor(std::move(shape), storage_->value, false);
}

void Tape::record(std::function<void()> backward)
{
    require(!consumed_, ErrorKind::TapeConsumed, "recording onto a tape that already ran backward");
    nodes_.push_back(std::move(backward));
    ++recorded_;
}

void Tape::backward(Tensor& loss)
{
    require(!consumed_, ErrorKind::TapeConsumed, "backward called twice on the same tape");
    require(loss.defined() && loss.size() == 1, ErrorKind::ShapeMismatch, "backward needs a scalar loss");
    consumed_ = true;
    if (!loss.requires_grad()) {
        return;
    }
    loss.grad()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        (*it)();
    }
    // release captured intermediates
    nodes_.clear();
    nodes_.shrink_to_fit();
}

} // namespace crossup::nn
