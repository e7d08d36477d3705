#include "mosaic_sr/ops.hpp"

#include <algorithm>
#include <cmath>

#include "mosaic_sr/kernels.hpp"

namespace msr::ops {
namespace {

using detail::make_result;
using detail::Node;

template <typename T>
T* grad_target(const Tensor<T>& t) {
    if (!t.defined() || !t.requires_grad()) return nullptr;
    return t.node()->ensure_grad().data();
}

template <typename T>
void require_same(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) throw shape_mismatch(op, a.shape(), b.shape());
}

template <typename T, typename F, typename D>
Tensor<T> unary(const Tensor<T>& x, F f, D dfdx_from_xy) {
    auto xs = x.data();
    std::vector<T> y(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) y[i] = f(xs[i]);
    return make_result<T>(x.shape(), std::move(y), {x}, [x, dfdx_from_xy](Node<T>& self) {
        T* gx = grad_target(x);
        if (!gx) return;
        auto xs = x.data();
        for (std::size_t i = 0; i < xs.size(); ++i)
            gx[i] += self.grad[i] * dfdx_from_xy(xs[i], self.data[i]);
    });
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int stride,
                 int pad) {
    const Shape& xs = x.shape();
    const Shape& ws = weight.shape();
    if (ws.h != ws.w) throw DimensionError("conv2d: kernel must be square, got " + ws.str());
    if (xs.c != ws.c) throw shape_mismatch("conv2d: input channels vs weight C_in", xs, ws);
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
    if (pad < 0) throw std::invalid_argument("conv2d: pad must be >= 0");
    if (bias.defined() && bias.numel() != static_cast<std::size_t>(ws.n)) {
        throw shape_mismatch("conv2d: bias vs weight C_out", bias.shape(), ws);
    }
    kernels::ConvGeometry g{xs.n, xs.c, xs.h, xs.w, ws.n, ws.h, stride, pad};
    if (xs.h + 2 * pad < ws.h || xs.w + 2 * pad < ws.w) {
        throw shape_mismatch("conv2d: kernel larger than padded input", xs, ws);
    }
    Shape out{xs.n, ws.n, g.out_height(), g.out_width()};
    std::vector<T> y(out.numel());
    std::span<const T> b = bias.defined() ? bias.data() : std::span<const T>{};
    kernels::parallel::conv2d_forward<T>(g, x.data(), weight.data(), b, y);

    return make_result<T>(out, std::move(y), {x, weight, bias}, [x, weight, bias, g](Node<T>& self) {
        std::span<const T> dy = self.grad;
        if (T* gx = grad_target(x)) {
            kernels::parallel::conv2d_backward_input<T>(g, dy, weight.data(),
                                                        std::span<T>(gx, x.numel()));
        }
        T* gw = grad_target(weight);
        T* gb = grad_target(bias);
        if (gw) {
            std::span<T> db = gb ? std::span<T>(gb, bias.numel()) : std::span<T>{};
            kernels::parallel::conv2d_backward_params<T>(g, x.data(), dy,
                                                         std::span<T>(gw, weight.numel()), db);
        } else if (gb) {
            const std::size_t plane = static_cast<std::size_t>(g.out_height()) * g.out_width();
            for (int n = 0; n < g.batch; ++n)
                for (int co = 0; co < g.out_channels; ++co) {
                    const T* row = dy.data() + (static_cast<std::size_t>(n) * g.out_channels + co) * plane;
                    T s = T(0);
                    for (std::size_t p = 0; p < plane; ++p) s += row[p];
                    gb[co] += s;
                }
        }
    });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require_same("add", a, b);
    auto as = a.data(), bs = b.data();
    std::vector<T> y(as.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = as[i] + bs[i];
    return make_result<T>(a.shape(), std::move(y), {a, b}, [a, b](Node<T>& self) {
        for (const Tensor<T>* t : {&a, &b}) {
            if (T* g = grad_target(*t))
                for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        }
    });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    require_same("sub", a, b);
    auto as = a.data(), bs = b.data();
    std::vector<T> y(as.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = as[i] - bs[i];
    return make_result<T>(a.shape(), std::move(y), {a, b}, [a, b](Node<T>& self) {
        if (T* g = grad_target(a))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        if (T* g = grad_target(b))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    });
}

template <typename T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b) {
    require_same("hadamard", a, b);
    auto as = a.data(), bs = b.data();
    std::vector<T> y(as.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = as[i] * bs[i];
    return make_result<T>(a.shape(), std::move(y), {a, b}, [a, b](Node<T>& self) {
        auto as = a.data(), bs = b.data();
        if (T* g = grad_target(a))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bs[i];
        if (T* g = grad_target(b))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * as[i];
    });
}

template <typename T>
Tensor<T> mul_broadcast(const Tensor<T>& a, const Tensor<T>& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    auto fits = [](int da, int db) { return db == da || db == 1; };
    if (!fits(sa.n, sb.n) || !fits(sa.c, sb.c) || !fits(sa.h, sb.h) || !fits(sa.w, sb.w)) {
        throw shape_mismatch("mul_broadcast", sa, sb);
    }
    // Strides into b; zero where b is broadcast.
    const std::size_t bw = sb.w == 1 ? 0 : 1;
    const std::size_t bh = sb.h == 1 ? 0 : static_cast<std::size_t>(sb.w);
    const std::size_t bc = sb.c == 1 ? 0 : static_cast<std::size_t>(sb.w) * sb.h;
    const std::size_t bn = sb.n == 1 ? 0 : static_cast<std::size_t>(sb.w) * sb.h * sb.c;
    auto b_index = [=](int n, int c, int h, int w) { return n * bn + c * bc + h * bh + w * bw; };

    auto as = a.data(), bs = b.data();
    std::vector<T> y(as.size());
    std::size_t i = 0;
    for (int n = 0; n < sa.n; ++n)
        for (int c = 0; c < sa.c; ++c)
            for (int h = 0; h < sa.h; ++h)
                for (int w = 0; w < sa.w; ++w, ++i) y[i] = as[i] * bs[b_index(n, c, h, w)];

    return make_result<T>(sa, std::move(y), {a, b}, [a, b, sa, b_index](Node<T>& self) {
        auto as = a.data(), bs = b.data();
        T* ga = grad_target(a);
        T* gb = grad_target(b);
        std::size_t i = 0;
        for (int n = 0; n < sa.n; ++n)
            for (int c = 0; c < sa.c; ++c)
                for (int h = 0; h < sa.h; ++h)
                    for (int w = 0; w < sa.w; ++w, ++i) {
                        const std::size_t j = b_index(n, c, h, w);
                        if (ga) ga[i] += self.grad[i] * bs[j];
                        if (gb) gb[j] += self.grad[i] * as[i];
                    }
    });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
    return unary<T>(a, [factor](T v) { return v * factor; },
                    [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return unary<T>(x, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
                    [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
    return unary<T>(x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    return unary<T>(x, [](T v) { return v > T(0) ? v : T(0); },
                    [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    const Shape s = x.shape();
    const std::size_t plane = s.plane();
    auto xs = x.data();
    std::vector<T> y(static_cast<std::size_t>(s.n) * s.c);
    for (std::size_t nc = 0; nc < y.size(); ++nc) {
        T acc = T(0);
        for (std::size_t p = 0; p < plane; ++p) acc += xs[nc * plane + p];
        y[nc] = acc / static_cast<T>(plane);
    }
    return make_result<T>(Shape{s.n, s.c, 1, 1}, std::move(y), {x}, [x, plane](Node<T>& self) {
        T* gx = grad_target(x);
        if (!gx) return;
        for (std::size_t nc = 0; nc < self.grad.size(); ++nc) {
            const T g = self.grad[nc] / static_cast<T>(plane);
            for (std::size_t p = 0; p < plane; ++p) gx[nc * plane + p] += g;
        }
    });
}

namespace {

// Index pairs (output position, input position) for a shuffle by r.
template <typename F>
void for_each_shuffle(const Shape& in, int r, F f) {
    const int oc = in.c / (r * r);
    const int oh = in.h * r, ow = in.w * r;
    for (int n = 0; n < in.n; ++n)
        for (int c = 0; c < oc; ++c)
            for (int q = 0; q < r * r; ++q)
                for (int h = 0; h < in.h; ++h)
                    for (int w = 0; w < in.w; ++w) {
                        const std::size_t src =
                            ((static_cast<std::size_t>(n) * in.c + c * r * r + q) * in.h + h) * in.w + w;
                        const std::size_t dst =
                            ((static_cast<std::size_t>(n) * oc + c) * oh + r * h + q / r) * ow + r * w + q % r;
                        f(dst, src);
                    }
}

}  // namespace

template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, int r) {
    const Shape s = x.shape();
    if (r < 1 || s.c % (r * r) != 0) {
        throw DimensionError("pixel_shuffle: channels " + std::to_string(s.c) +
                             " not divisible by r^2 = " + std::to_string(r * r));
    }
    auto xs = x.data();
    std::vector<T> y(xs.size());
    for_each_shuffle(s, r, [&](std::size_t dst, std::size_t src) { y[dst] = xs[src]; });
    Shape out{s.n, s.c / (r * r), s.h * r, s.w * r};
    return make_result<T>(out, std::move(y), {x}, [x, s, r](Node<T>& self) {
        T* gx = grad_target(x);
        if (!gx) return;
        for_each_shuffle(s, r, [&](std::size_t dst, std::size_t src) { gx[src] += self.grad[dst]; });
    });
}

template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, int r) {
    const Shape s = x.shape();
    if (r < 1 || s.h % r != 0 || s.w % r != 0) {
        throw DimensionError("pixel_unshuffle: spatial dims of " + s.str() +
                             " not divisible by " + std::to_string(r));
    }
    Shape in{s.n, s.c * r * r, s.h / r, s.w / r};
    auto xs = x.data();
    std::vector<T> y(xs.size());
    for_each_shuffle(in, r, [&](std::size_t dst, std::size_t src) { y[src] = xs[dst]; });
    return make_result<T>(in, std::move(y), {x}, [x, in, r](Node<T>& self) {
        T* gx = grad_target(x);
        if (!gx) return;
        for_each_shuffle(in, r, [&](std::size_t dst, std::size_t src) { gx[dst] += self.grad[src]; });
    });
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_channels: empty input list");
    const Shape first = xs.front().shape();
    int channels = 0;
    for (const auto& t : xs) {
        const Shape& s = t.shape();
        if (s.n != first.n || s.h != first.h || s.w != first.w) {
            throw shape_mismatch("concat_channels", first, s);
        }
        channels += s.c;
    }
    const Shape out{first.n, channels, first.h, first.w};
    const std::size_t plane = first.plane();
    std::vector<T> y(out.numel());
    int offset = 0;
    for (const auto& t : xs) {
        auto d = t.data();
        const int c = t.shape().c;
        for (int n = 0; n < first.n; ++n) {
            std::copy_n(d.begin() + static_cast<std::ptrdiff_t>(n) * c * plane, c * plane,
                        y.begin() + (static_cast<std::ptrdiff_t>(n) * channels + offset) * plane);
        }
        offset += c;
    }
    return make_result<T>(out, std::move(y), xs, [xs, channels, plane](Node<T>& self) {
        int offset = 0;
        for (const auto& t : xs) {
            const Shape& s = t.shape();
            if (T* g = grad_target(t)) {
                for (int n = 0; n < s.n; ++n) {
                    const T* src = self.grad.data() + (static_cast<std::size_t>(n) * channels + offset) * plane;
                    T* dst = g + static_cast<std::size_t>(n) * s.c * plane;
                    for (std::size_t i = 0; i < s.c * plane; ++i) dst[i] += src[i];
                }
            }
            offset += s.c;
        }
    });
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int begin, int count) {
    const Shape s = x.shape();
    if (begin < 0 || count < 1 || begin + count > s.c) {
        throw DimensionError("slice_channels: range [" + std::to_string(begin) + ", " +
                             std::to_string(begin + count) + ") outside " + s.str());
    }
    const std::size_t plane = s.plane();
    auto xs = x.data();
    std::vector<T> y(static_cast<std::size_t>(s.n) * count * plane);
    for (int n = 0; n < s.n; ++n) {
        std::copy_n(xs.begin() + (static_cast<std::ptrdiff_t>(n) * s.c + begin) * plane, count * plane,
                    y.begin() + static_cast<std::ptrdiff_t>(n) * count * plane);
    }
    return make_result<T>(Shape{s.n, count, s.h, s.w}, std::move(y), {x},
                          [x, s, begin, count, plane](Node<T>& self) {
                              T* gx = grad_target(x);
                              if (!gx) return;
                              for (int n = 0; n < s.n; ++n) {
                                  T* dst = gx + (static_cast<std::size_t>(n) * s.c + begin) * plane;
                                  const T* src = self.grad.data() + static_cast<std::size_t>(n) * count * plane;
                                  for (std::size_t i = 0; i < count * plane; ++i) dst[i] += src[i];
                              }
                          });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    // Neumaier compensated summation.
    T acc = T(0), comp = T(0);
    for (T v : x.data()) {
        const T t = acc + v;
        comp += std::abs(acc) >= std::abs(v) ? (acc - t) + v : (v - t) + acc;
        acc = t;
    }
    return make_result<T>(Shape{}, {acc + comp}, {x}, [x](Node<T>& self) {
        T* gx = grad_target(x);
        if (!gx) return;
        for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += self.grad[0];
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> stack_batch(const std::vector<Tensor<T>>& xs) {
    if (xs.empty()) throw std::invalid_argument("stack_batch: empty input list");
    const Shape first = xs.front().shape();
    int n_total = 0;
    for (const auto& t : xs) {
        const Shape& s = t.shape();
        if (s.c != first.c || s.h != first.h || s.w != first.w) throw shape_mismatch("stack_batch", first, s);
        n_total += s.n;
    }
    std::vector<T> y;
    y.reserve(static_cast<std::size_t>(n_total) * first.c * first.plane());
    for (const auto& t : xs) y.insert(y.end(), t.data().begin(), t.data().end());
    return Tensor<T>(Shape{n_total, first.c, first.h, first.w}, std::move(y));
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
    std::vector<T> y(x.data().begin(), x.data().end());
    for (T& v : y) v = std::clamp(v, lo, hi);
    return Tensor<T>(x.shape(), std::move(y));
}

template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& x) {
    auto xs = x.data();
    return Tensor<To>(x.shape(), std::vector<To>(xs.begin(), xs.end()));
}

#define MSR_INSTANTIATE_OPS(T)                                                                  \
    template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int); \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                 \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                 \
    template Tensor<T> hadamard(const Tensor<T>&, const Tensor<T>&);                            \
    template Tensor<T> mul_broadcast(const Tensor<T>&, const Tensor<T>&);                       \
    template Tensor<T> scale(const Tensor<T>&, T);                                              \
    template Tensor<T> sigmoid(const Tensor<T>&);                                               \
    template Tensor<T> tanh(const Tensor<T>&);                                                  \
    template Tensor<T> relu(const Tensor<T>&);                                                  \
    template Tensor<T> global_avg_pool(const Tensor<T>&);                                       \
    template Tensor<T> pixel_shuffle(const Tensor<T>&, int);                                    \
    template Tensor<T> pixel_unshuffle(const Tensor<T>&, int);                                  \
    template Tensor<T> concat_channels(const std::vector<Tensor<T>>&);                          \
    template Tensor<T> slice_channels(const Tensor<T>&, int, int);                              \
    template Tensor<T> sum(const Tensor<T>&);                                                   \
    template Tensor<T> mean(const Tensor<T>&);                                                  \
    template Tensor<T> stack_batch(const std::vector<Tensor<T>>&);                              \
    template Tensor<T> clamp(const Tensor<T>&, T, T);

MSR_INSTANTIATE_OPS(float)
MSR_INSTANTIATE_OPS(double)
#undef MSR_INSTANTIATE_OPS

template Tensor<float> cast(const Tensor<double>&);
template Tensor<double> cast(const Tensor<float>&);
template Tensor<float> cast(const Tensor<float>&);
template Tensor<double> cast(const Tensor<double>&);

}  // namespace msr::ops
