#include "mosaic_sr/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace msr {

std::string Shape::str() const {
    std::ostringstream os;
    os << '(' << n << ", " << c << ", " << h << ", " << w << ')';
    return os.str();
}

DimensionError shape_mismatch(const std::string& op, const Shape& a, const Shape& b) {
    return DimensionError(op + ": shape mismatch " + a.str() + " vs " + b.str());
}

namespace {
thread_local bool g_grad_mode = true;

void check_shape(const Shape& s) {
    if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1) {
        throw DimensionError("tensor dimensions must be >= 1, got " + s.str());
    }
}
}  // namespace

bool grad_mode_enabled() { return g_grad_mode; }

NoGradGuard::NoGradGuard() : previous_(g_grad_mode) { g_grad_mode = false; }
NoGradGuard::~NoGradGuard() { g_grad_mode = previous_; }

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) {
    check_shape(shape);
    if (values.size() != shape.numel()) {
        throw DimensionError("tensor of shape " + shape.str() + " needs " +
                             std::to_string(shape.numel()) + " values, got " +
                             std::to_string(values.size()));
    }
    node_ = std::make_shared<detail::Node<T>>();
    node_->shape = shape;
    node_->data = std::move(values);
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
    check_shape(shape);
    return Tensor(shape, std::vector<T>(shape.numel(), T(0)));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
    check_shape(shape);
    return Tensor(shape, std::vector<T>(shape.numel(), value));
}

template <typename T>
const Shape& Tensor<T>::shape() const {
    if (!node_) throw std::logic_error("use of undefined tensor");
    return node_->shape;
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
    if (!node_) throw std::logic_error("use of undefined tensor");
    return node_->data;
}

template <typename T>
T Tensor<T>::at(int n, int c, int h, int w) const {
    const Shape& s = shape();
    if (n < 0 || n >= s.n || c < 0 || c >= s.c || h < 0 || h >= s.h || w < 0 || w >= s.w) {
        throw std::out_of_range("index out of range for shape " + s.str());
    }
    return node_->data[((static_cast<std::size_t>(n) * s.c + c) * s.h + h) * s.w + w];
}

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1) throw DimensionError("item() on non-scalar tensor " + shape().str());
    return node_->data[0];
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
    if (!node_) throw std::logic_error("use of undefined tensor");
    if (!node_->leaf) throw std::logic_error("mutable_data() on a non-leaf tensor");
    return node_->data;
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
    if (!node_) throw std::logic_error("use of undefined tensor");
    if (!node_->leaf) throw std::logic_error("requires_grad can only be set on leaves");
    node_->requires_grad = on;
    if (!on) node_->grad.clear();
    return *this;
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
    if (!node_) throw std::logic_error("use of undefined tensor");
    return node_->grad;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() {
    if (!node_) throw std::logic_error("use of undefined tensor");
    return node_->ensure_grad();
}

template <typename T>
void Tensor<T>::zero_grad() {
    if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
void Tensor<T>::backward(bool retain_graph) const {
    using N = detail::Node<T>;
    if (!node_) throw std::logic_error("backward() on undefined tensor");
    if (node_->shape.numel() != 1) {
        throw DimensionError("backward() requires a 1x1x1x1 loss, got " + node_->shape.str());
    }
    if (!node_->requires_grad) {
        throw std::logic_error("backward() on a tensor with no gradient lineage");
    }

    // Iterative post-order DFS gives a topological order (inputs first).
    std::vector<N*> order;
    std::unordered_set<N*> seen;
    std::vector<std::pair<N*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [cur, next] = stack.back();
        if (next < cur->inputs.size()) {
            N* in = cur->inputs[next++].get();
            if (in->requires_grad && seen.insert(in).second) stack.emplace_back(in, 0);
        } else {
            order.push_back(cur);
            stack.pop_back();
        }
    }

    for (N* n : order) {
        if (!n->leaf) n->grad.assign(n->data.size(), T(0));
    }
    node_->ensure_grad()[0] += T(1);

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        N* n = *it;
        if (n->leaf || !n->backward) continue;
        n->backward(*n);
    }

    if (!retain_graph) {
        for (N* n : order) {
            if (n->leaf) continue;
            n->backward = nullptr;
            n->inputs.clear();
            n->grad.clear();
            n->grad.shrink_to_fit();
        }
    }
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
    return Tensor(shape(), node_->data);
}

namespace detail {

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values, std::vector<Tensor<T>> inputs,
                      std::function<void(Node<T>&)> backward) {
    Tensor<T> out(shape, std::move(values));
    if (!grad_mode_enabled()) return out;
    bool any = std::any_of(inputs.begin(), inputs.end(),
                           [](const Tensor<T>& t) { return t.defined() && t.requires_grad(); });
    if (!any) return out;
    auto& node = *out.node();
    node.leaf = false;
    node.requires_grad = true;
    for (auto& t : inputs) {
        if (t.defined()) node.inputs.push_back(t.node());
    }
    node.backward = std::move(backward);
    return out;
}

template Tensor<float> make_result(Shape, std::vector<float>, std::vector<Tensor<float>>,
                                   std::function<void(Node<float>&)>);
template Tensor<double> make_result(Shape, std::vector<double>, std::vector<Tensor<double>>,
                                    std::function<void(Node<double>&)>);

}  // namespace detail

template class Tensor<float>;
template class Tensor<double>;

}  // namespace msr
