#include "mosaic_sr/loss.hpp"

#include <cmath>
#include <stdexcept>

namespace msr {

template <typename T>
Tensor<T> smooth_l1(const Tensor<T>& pred, const Tensor<T>& gt, const Tensor<T>& mask) {
    if (pred.shape() != gt.shape()) throw shape_mismatch("smooth_l1", pred.shape(), gt.shape());
    if (mask.defined() && mask.shape() != pred.shape()) {
        throw shape_mismatch("smooth_l1 mask", pred.shape(), mask.shape());
    }
    auto p = pred.data(), g = gt.data();
    std::size_t count = 0;
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (mask.defined() && mask.data()[i] == T(0)) continue;
        const double d = static_cast<double>(g[i]) - static_cast<double>(p[i]);
        total += std::abs(d) < 1.0 ? 0.5 * d * d : std::abs(d) - 0.5;
        ++count;
    }
    if (count == 0) throw std::invalid_argument("smooth_l1: mask selects no elements");
    const T value = static_cast<T>(total / static_cast<double>(count));
    return detail::make_result<T>(Shape{}, {value}, {pred}, [pred, gt, mask, count](detail::Node<T>& self) {
        if (!pred.requires_grad()) return;
        auto& gp = pred.node()->ensure_grad();
        auto p = pred.data(), g = gt.data();
        const T scale = self.grad[0] / static_cast<T>(count);
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (mask.defined() && mask.data()[i] == T(0)) continue;
            const T d = g[i] - p[i];
            // d(z)/d(pred) = -d(z)/d(d)
            const T dz = std::abs(d) < T(1) ? d : (d > T(0) ? T(1) : T(-1));
            gp[i] -= scale * dz;
        }
    });
}

template Tensor<float> smooth_l1(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&);
template Tensor<double> smooth_l1(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&);

}  // namespace msr
