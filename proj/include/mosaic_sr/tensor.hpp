#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace msr {

/// Dense NCHW extent. Every dimension is at least 1.
struct Shape {
    int n = 1;
    int c = 1;
    int h = 1;
    int w = 1;

    std::size_t numel() const {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

/// Raised when operand shapes are incompatible. The message names both shapes.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

DimensionError shape_mismatch(const std::string& op, const Shape& a, const Shape& b);

/// Graph recording is on by default; NoGradGuard turns it off for the
/// current thread (inference, evaluation, optimizer updates).
bool grad_mode_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

namespace detail {

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until first accumulation
    bool requires_grad = false;
    bool leaf = true;
    std::vector<std::shared_ptr<Node>> inputs;
    // Reads this->grad and accumulates into inputs[i]->grad.
    std::function<void(Node&)> backward;

    std::vector<T>& ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), T(0));
        return grad;
    }
};

}  // namespace detail

/// Reference-counted handle to an immutable NCHW array that may record the
/// operation that produced it. Copies share storage; ops always allocate.
template <typename T>
class Tensor {
public:
    using value_type = T;
    using NodePtr = std::shared_ptr<detail::Node<T>>;

    Tensor() = default;
    Tensor(Shape shape, std::vector<T> values);

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, T value);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t numel() const { return shape().numel(); }

    std::span<const T> data() const;
    T at(int n, int c, int h, int w) const;
    T item() const;

    /// Direct write access, only for leaves (parameters, data buffers).
    std::span<T> mutable_data();

    bool requires_grad() const { return node_ && node_->requires_grad; }
    Tensor& set_requires_grad(bool on);
    bool is_leaf() const { return !node_ || node_->leaf; }

    /// Empty span until a backward pass has reached this tensor.
    std::span<const T> grad() const;
    std::span<T> mutable_grad();
    void zero_grad();

    /// Reverse-mode sweep from a 1x1x1x1 tensor. Leaf gradients accumulate
    /// across calls; the recorded graph is released unless retain_graph.
    void backward(bool retain_graph = false) const;

    /// New leaf holding a copy of the values.
    Tensor detach() const;

    const NodePtr& node() const { return node_; }
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

private:
    NodePtr node_;
};

namespace detail {

/// Builds the result of a differentiable op. The backward closure is only
/// attached when recording is enabled and some input needs gradients.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values,
                      std::vector<Tensor<T>> inputs,
                      std::function<void(Node<T>&)> backward);

}  // namespace detail

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace msr
