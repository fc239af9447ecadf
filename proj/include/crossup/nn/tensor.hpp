#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace crossup::nn {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles with an optional gradient buffer.
///
/// Tensor is a cheap handle: copies share storage. Use clone() for a deep copy
/// and detach() for a copy that no longer tracks gradients.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const noexcept { return static_cast<bool>(storage_); }
    const Shape& shape() const;
    std::size_t dim(std::size_t axis) const { return shape().at(axis); }
    std::size_t rank() const { return shape().size(); }
    std::size_t size() const;

    std::span<double> values();
    std::span<const double> values() const;
    double& operator[](std::size_t i) { return values()[i]; }
    double operator[](std::size_t i) const { return values()[i]; }
    /// Value of a one-element tensor.
    double item() const;

    bool requires_grad() const;
    /// Gradient buffer; empty when the tensor does not require grad.
    std::span<double> grad();
    std::span<const double> grad() const;
    void zero_grad();

    Tensor detach() const;
    Tensor clone() const;
    /// Same values, new shape (copies).
    Tensor reshaped(Shape shape) const;

    bool same_storage(const Tensor& other) const noexcept { return storage_ == other.storage_; }

private:
    struct Storage {
        Shape shape;
        std::vector<double> value;
        std::vector<double> grad;
        bool requires_grad = false;
    };
    std::shared_ptr<Storage> storage_;
};

/// Records backward closures in creation order, which is a topological order
/// of the graph. A tape supports exactly one backward pass.
class Tape {
public:
    void record(std::function<void()> backward);

    /// Seeds d(loss)/d(loss) = 1 and runs every recorded closure once, in
    /// reverse. Throws for a non-scalar loss or a second call.
    void backward(Tensor& loss);

    /// Number of nodes recorded over the tape's lifetime.
    std::size_t size() const noexcept { return recorded_; }
    bool consumed() const noexcept { return consumed_; }

private:
    std::vector<std::function<void()>> nodes_;
    std::size_t recorded_ = 0;
    bool consumed_ = false;
};

} // namespace crossup::nn
