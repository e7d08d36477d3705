#include "mosaic_sr/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cstdlib>
#include <string>
#include <vector>

namespace msr::kernels {

std::size_t ConvGeometry::input_size() const {
    return static_cast<std::size_t>(batch) * in_channels * height * width;
}
std::size_t ConvGeometry::output_size() const {
    return static_cast<std::size_t>(batch) * out_channels * out_height() * out_width();
}
std::size_t ConvGeometry::weight_size() const {
    return static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel;
}

int configure_threads_from_env() {
    if (const char* env = std::getenv("MOSAIC_SR_THREADS")) {
        int cap = std::atoi(env);
        if (cap >= 1) omp_set_num_threads(std::min(cap, omp_get_num_procs()));
    }
    return omp_get_max_threads();
}

// ---------------------------------------------------------------------------
// reference

namespace reference {

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                    std::span<const T> bias, std::span<T> y) {
    const int oh_n = g.out_height(), ow_n = g.out_width(), k = g.kernel;
    for (int n = 0; n < g.batch; ++n)
        for (int co = 0; co < g.out_channels; ++co)
            for (int oh = 0; oh < oh_n; ++oh)
                for (int ow = 0; ow < ow_n; ++ow) {
                    T s = bias.empty() ? T(0) : bias[co];
                    for (int ci = 0; ci < g.in_channels; ++ci)
                        for (int kh = 0; kh < k; ++kh)
                            for (int kw = 0; kw < k; ++kw) {
                                int ih = oh * g.stride - g.pad + kh;
                                int iw = ow * g.stride - g.pad + kw;
                                if (ih < 0 || ih >= g.height || iw < 0 || iw >= g.width) continue;
                                s += w[((static_cast<std::size_t>(co) * g.in_channels + ci) * k + kh) * k + kw] *
                                     x[((static_cast<std::size_t>(n) * g.in_channels + ci) * g.height + ih) * g.width + iw];
                            }
                    y[((static_cast<std::size_t>(n) * g.out_channels + co) * oh_n + oh) * ow_n + ow] = s;
                }
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> dy, std::span<const T> w,
                           std::span<T> dx) {
    const int oh_n = g.out_height(), ow_n = g.out_width(), k = g.kernel;
    for (int n = 0; n < g.batch; ++n)
        for (int co = 0; co < g.out_channels; ++co)
            for (int oh = 0; oh < oh_n; ++oh)
                for (int ow = 0; ow < ow_n; ++ow) {
                    T go = dy[((static_cast<std::size_t>(n) * g.out_channels + co) * oh_n + oh) * ow_n + ow];
                    for (int ci = 0; ci < g.in_channels; ++ci)
                        for (int kh = 0; kh < k; ++kh)
                            for (int kw = 0; kw < k; ++kw) {
                                int ih = oh * g.stride - g.pad + kh;
                                int iw = ow * g.stride - g.pad + kw;
                                if (ih < 0 || ih >= g.height || iw < 0 || iw >= g.width) continue;
                                dx[((static_cast<std::size_t>(n) * g.in_channels + ci) * g.height + ih) * g.width + iw] +=
                                    go * w[((static_cast<std::size_t>(co) * g.in_channels + ci) * k + kh) * k + kw];
                            }
                }
}

template <typename T>
void conv2d_backward_params(const ConvGeometry& g, std::span<const T> x, std::span<const T> dy,
                            std::span<T> dw, std::span<T> dbias) {
    const int oh_n = g.out_height(), ow_n = g.out_width(), k = g.kernel;
    for (int n = 0; n < g.batch; ++n)
        for (int co = 0; co < g.out_channels; ++co)
            for (int oh = 0; oh < oh_n; ++oh)
                for (int ow = 0; ow < ow_n; ++ow) {
                    T go = dy[((static_cast<std::size_t>(n) * g.out_channels + co) * oh_n + oh) * ow_n + ow];
                    if (!dbias.empty()) dbias[co] += go;
                    for (int ci = 0; ci < g.in_channels; ++ci)
                        for (int kh = 0; kh < k; ++kh)
                            for (int kw = 0; kw < k; ++kw) {
                                int ih = oh * g.stride - g.pad + kh;
                                int iw = ow * g.stride - g.pad + kw;
                                if (ih < 0 || ih >= g.height || iw < 0 || iw >= g.width) continue;
                                dw[((static_cast<std::size_t>(co) * g.in_channels + ci) * k + kh) * k + kw] +=
                                    go * x[((static_cast<std::size_t>(n) * g.in_channels + ci) * g.height + ih) * g.width + iw];
                            }
                }
}

}  // namespace reference

// ---------------------------------------------------------------------------
// parallel

namespace parallel {
namespace {

// Column tile width: one cache line pair of accumulators per row.
template <typename T>
constexpr int kTileCols = 128 / static_cast<int>(sizeof(T));
constexpr int kTileRows = 8;

template <typename T, int MB, int NB>
void gemm_tile(int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc, int nb,
               bool accumulate) {
    T acc[MB][NB] = {};
    if (nb == NB) {
        for (int p = 0; p < k; ++p) {
            const T* brow = b + static_cast<std::size_t>(p) * ldb;
            for (int i = 0; i < MB; ++i) {
                const T av = a[static_cast<std::size_t>(i) * lda + p];
#pragma omp simd
                for (int j = 0; j < NB; ++j) acc[i][j] += av * brow[j];
            }
        }
    } else {
        for (int p = 0; p < k; ++p) {
            const T* brow = b + static_cast<std::size_t>(p) * ldb;
            for (int i = 0; i < MB; ++i) {
                const T av = a[static_cast<std::size_t>(i) * lda + p];
                for (int j = 0; j < nb; ++j) acc[i][j] += av * brow[j];
            }
        }
    }
    for (int i = 0; i < MB; ++i) {
        T* crow = c + static_cast<std::size_t>(i) * ldc;
        for (int j = 0; j < nb; ++j) crow[j] = accumulate ? crow[j] + acc[i][j] : acc[i][j];
    }
}

template <typename T>
void gemm_rows(int rows, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc, int nb,
               bool accumulate) {
    constexpr int NB = kTileCols<T>;
    switch (rows) {
        case 8: gemm_tile<T, 8, NB>(k, a, lda, b, ldb, c, ldc, nb, accumulate); return;
        case 4: gemm_tile<T, 4, NB>(k, a, lda, b, ldb, c, ldc, nb, accumulate); return;
        case 2: gemm_tile<T, 2, NB>(k, a, lda, b, ldb, c, ldc, nb, accumulate); return;
        case 1: gemm_tile<T, 1, NB>(k, a, lda, b, ldb, c, ldc, nb, accumulate); return;
        default: break;
    }
    // Odd remainders decompose into the fixed tiles above.
    int done = 0;
    for (int step : {4, 2, 1}) {
        while (rows - done >= step) {
            gemm_rows(step, k, a + static_cast<std::size_t>(done) * lda, lda, b, ldb,
                      c + static_cast<std::size_t>(done) * ldc, ldc, nb, accumulate);
            done += step;
        }
    }
}

// C[MB x NB] += A[MB x k] * B[NB x k]^T, lane-parallel partial sums.
template <typename T, int MB, int NB>
void gemm_nt_tile(int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc) {
    constexpr int V = 64 / static_cast<int>(sizeof(T));
    T acc[MB][NB][V] = {};
    int p = 0;
    for (; p + V <= k; p += V) {
        for (int i = 0; i < MB; ++i)
            for (int j = 0; j < NB; ++j) {
                const T* ar = a + static_cast<std::size_t>(i) * lda + p;
                const T* br = b + static_cast<std::size_t>(j) * ldb + p;
#pragma omp simd
                for (int l = 0; l < V; ++l) acc[i][j][l] += ar[l] * br[l];
            }
    }
    for (int i = 0; i < MB; ++i)
        for (int j = 0; j < NB; ++j) {
            T s = T(0);
            for (int l = 0; l < V; ++l) s += acc[i][j][l];
            for (int q = p; q < k; ++q)
                s += a[static_cast<std::size_t>(i) * lda + q] * b[static_cast<std::size_t>(j) * ldb + q];
            c[static_cast<std::size_t>(i) * ldc + j] += s;
        }
}

template <typename T>
void gemm_nt_block(int rows, int cols, int k, const T* a, int lda, const T* b, int ldb, T* c,
                   int ldc) {
    if (rows == 4 && cols == 4) return gemm_nt_tile<T, 4, 4>(k, a, lda, b, ldb, c, ldc);
    for (int i = 0; i < rows; ++i) {
        int j = 0;
        for (; j + 4 <= cols; j += 4)
            gemm_nt_tile<T, 1, 4>(k, a + static_cast<std::size_t>(i) * lda, lda,
                                  b + static_cast<std::size_t>(j) * ldb, ldb,
                                  c + static_cast<std::size_t>(i) * ldc + j, ldc);
        for (; j < cols; ++j)
            gemm_nt_tile<T, 1, 1>(k, a + static_cast<std::size_t>(i) * lda, lda,
                                  b + static_cast<std::size_t>(j) * ldb, ldb,
                                  c + static_cast<std::size_t>(i) * ldc + j, ldc);
    }
}

template <typename T>
std::vector<T>& scratch(int slot) {
    thread_local std::vector<T> buffers[3];
    return buffers[slot];
}

// col[(ci*k + kh)*k + kw][oh*OW + ow]
template <typename T>
void im2col(const ConvGeometry& g, const T* x, T* col) {
    const int oh_n = g.out_height(), ow_n = g.out_width(), k = g.kernel;
    const std::size_t p_n = static_cast<std::size_t>(oh_n) * ow_n;
    const int rows = g.in_channels * k * k;
#pragma omp parallel for schedule(static) if (rows * p_n > 65536)
    for (int r = 0; r < rows; ++r) {
        const int ci = r / (k * k), kh = (r / k) % k, kw = r % k;
        const T* xc = x + static_cast<std::size_t>(ci) * g.height * g.width;
        T* dst = col + r * p_n;
        for (int oh = 0; oh < oh_n; ++oh) {
            const int ih = oh * g.stride - g.pad + kh;
            T* drow = dst + static_cast<std::size_t>(oh) * ow_n;
            if (ih < 0 || ih >= g.height) {
                std::fill(drow, drow + ow_n, T(0));
                continue;
            }
            const T* xrow = xc + static_cast<std::size_t>(ih) * g.width;
            for (int ow = 0; ow < ow_n; ++ow) {
                const int iw = ow * g.stride - g.pad + kw;
                drow[ow] = (iw >= 0 && iw < g.width) ? xrow[iw] : T(0);
            }
        }
    }
}

// dx += col2im(dcol); each thread owns one input channel.
template <typename T>
void col2im_add(const ConvGeometry& g, const T* col, T* dx) {
    const int oh_n = g.out_height(), ow_n = g.out_width(), k = g.kernel;
    const std::size_t p_n = static_cast<std::size_t>(oh_n) * ow_n;
#pragma omp parallel for schedule(static) if (g.in_channels * k * k * p_n > 65536)
    for (int ci = 0; ci < g.in_channels; ++ci) {
        T* xc = dx + static_cast<std::size_t>(ci) * g.height * g.width;
        for (int kh = 0; kh < k; ++kh)
            for (int kw = 0; kw < k; ++kw) {
                const T* src = col + ((static_cast<std::size_t>(ci) * k + kh) * k + kw) * p_n;
                for (int oh = 0; oh < oh_n; ++oh) {
                    const int ih = oh * g.stride - g.pad + kh;
                    if (ih < 0 || ih >= g.height) continue;
                    T* xrow = xc + static_cast<std::size_t>(ih) * g.width;
                    const T* srow = src + static_cast<std::size_t>(oh) * ow_n;
                    for (int ow = 0; ow < ow_n; ++ow) {
                        const int iw = ow * g.stride - g.pad + kw;
                        if (iw >= 0 && iw < g.width) xrow[iw] += srow[ow];
                    }
                }
            }
    }
}

bool is_pointwise(const ConvGeometry& g) {
    return g.kernel == 1 && g.stride == 1 && g.pad == 0;
}

}  // namespace

template <typename T>
void gemm(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc,
          bool accumulate) {
    constexpr int NB = kTileCols<T>;
    const int row_blocks = (m + kTileRows - 1) / kTileRows;
    const int col_blocks = (n + NB - 1) / NB;
    const long long work = static_cast<long long>(m) * n * k;
#pragma omp parallel for collapse(2) schedule(static) if (work > (1 << 18))
    for (int rb = 0; rb < row_blocks; ++rb) {
        for (int cb = 0; cb < col_blocks; ++cb) {
            const int r0 = rb * kTileRows, c0 = cb * NB;
            const int rows = std::min(kTileRows, m - r0);
            const int cols = std::min(NB, n - c0);
            gemm_rows<T>(rows, k, a + static_cast<std::size_t>(r0) * lda, lda, b + c0, ldb,
                         c + static_cast<std::size_t>(r0) * ldc + c0, ldc, cols, accumulate);
        }
    }
}

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                    std::span<const T> bias, std::span<T> y) {
    const int kk = g.in_channels * g.kernel * g.kernel;
    const int p_n = g.out_height() * g.out_width();
    auto& col = scratch<T>(0);
    const bool pointwise = is_pointwise(g);
    if (!pointwise) col.resize(static_cast<std::size_t>(kk) * p_n);
    for (int n = 0; n < g.batch; ++n) {
        const T* xn = x.data() + static_cast<std::size_t>(n) * g.in_channels * g.height * g.width;
        T* yn = y.data() + static_cast<std::size_t>(n) * g.out_channels * p_n;
        const T* src = xn;
        if (!pointwise) {
            im2col(g, xn, col.data());
            src = col.data();
        }
        gemm<T>(g.out_channels, p_n, kk, w.data(), kk, src, p_n, yn, p_n, false);
        if (!bias.empty()) {
            for (int co = 0; co < g.out_channels; ++co) {
                T* row = yn + static_cast<std::size_t>(co) * p_n;
                const T b = bias[co];
                for (int p = 0; p < p_n; ++p) row[p] += b;
            }
        }
    }
}

template <typename T>
void gemm_nt(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc) {
    constexpr int R = 4;
    const int row_blocks = (m + R - 1) / R;
    const int col_blocks = (n + R - 1) / R;
    const long long work = static_cast<long long>(m) * n * k;
#pragma omp parallel for collapse(2) schedule(static) if (work > (1 << 18))
    for (int rb = 0; rb < row_blocks; ++rb) {
        for (int cb = 0; cb < col_blocks; ++cb) {
            const int r0 = rb * R, c0 = cb * R;
            gemm_nt_block<T>(std::min(R, m - r0), std::min(R, n - c0), k,
                             a + static_cast<std::size_t>(r0) * lda, lda,
                             b + static_cast<std::size_t>(c0) * ldb, ldb,
                             c + static_cast<std::size_t>(r0) * ldc + c0, ldc);
        }
    }
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> dy, std::span<const T> w,
                           std::span<T> dx) {
    const int k = g.kernel;
    const int kk = g.in_channels * k * k;
    const int p_n = g.out_height() * g.out_width();

    if (g.stride == 1 && g.pad <= k - 1) {
        // Stride-1 input gradient is a forward correlation of dy with the
        // spatially flipped, channel-transposed kernel.
        auto& wf = scratch<T>(1);
        wf.resize(g.weight_size());
        for (int co = 0; co < g.out_channels; ++co)
            for (int ci = 0; ci < g.in_channels; ++ci)
                for (int kh = 0; kh < k; ++kh)
                    for (int kw = 0; kw < k; ++kw)
                        wf[((static_cast<std::size_t>(ci) * g.out_channels + co) * k + kh) * k + kw] =
                            w[((static_cast<std::size_t>(co) * g.in_channels + ci) * k + (k - 1 - kh)) * k + (k - 1 - kw)];
        const ConvGeometry flipped{1, g.out_channels, g.out_height(), g.out_width(),
                                   g.in_channels, k, 1, k - 1 - g.pad};
        const int fk = g.out_channels * k * k;
        const int plane = g.height * g.width;
        auto& col = scratch<T>(0);
        const bool pointwise = is_pointwise(flipped);
        if (!pointwise) col.resize(static_cast<std::size_t>(fk) * plane);
        for (int n = 0; n < g.batch; ++n) {
            const T* dyn = dy.data() + static_cast<std::size_t>(n) * g.out_channels * p_n;
            T* dxn = dx.data() + static_cast<std::size_t>(n) * g.in_channels * plane;
            const T* src = dyn;
            if (!pointwise) {
                im2col(flipped, dyn, col.data());
                src = col.data();
            }
            gemm<T>(g.in_channels, plane, fk, wf.data(), fk, src, plane, dxn, plane, true);
        }
        return;
    }

    auto& wt = scratch<T>(1);
    wt.resize(static_cast<std::size_t>(kk) * g.out_channels);
    for (int co = 0; co < g.out_channels; ++co)
        for (int r = 0; r < kk; ++r)
            wt[static_cast<std::size_t>(r) * g.out_channels + co] = w[static_cast<std::size_t>(co) * kk + r];
    auto& dcol = scratch<T>(0);
    dcol.resize(static_cast<std::size_t>(kk) * p_n);
    for (int n = 0; n < g.batch; ++n) {
        const T* dyn = dy.data() + static_cast<std::size_t>(n) * g.out_channels * p_n;
        T* dxn = dx.data() + static_cast<std::size_t>(n) * g.in_channels * g.height * g.width;
        gemm<T>(kk, p_n, g.out_channels, wt.data(), g.out_channels, dyn, p_n, dcol.data(), p_n, false);
        col2im_add(g, dcol.data(), dxn);
    }
}

template <typename T>
void conv2d_backward_params(const ConvGeometry& g, std::span<const T> x, std::span<const T> dy,
                            std::span<T> dw, std::span<T> dbias) {
    const int kk = g.in_channels * g.kernel * g.kernel;
    const int p_n = g.out_height() * g.out_width();
    auto& col = scratch<T>(2);
    const bool pointwise = is_pointwise(g);
    if (!pointwise) col.resize(static_cast<std::size_t>(kk) * p_n);
    for (int n = 0; n < g.batch; ++n) {
        const T* xn = x.data() + static_cast<std::size_t>(n) * g.in_channels * g.height * g.width;
        const T* dyn = dy.data() + static_cast<std::size_t>(n) * g.out_channels * p_n;
        const T* src = xn;
        if (!pointwise) {
            im2col(g, xn, col.data());
            src = col.data();
        }
        gemm_nt<T>(g.out_channels, kk, p_n, dyn, p_n, src, p_n, dw.data(), kk);
        if (!dbias.empty()) {
            for (int co = 0; co < g.out_channels; ++co) {
                const T* row = dyn + static_cast<std::size_t>(co) * p_n;
                T s = T(0);
                for (int p = 0; p < p_n; ++p) s += row[p];
                dbias[co] += s;
            }
        }
    }
}

}  // namespace parallel

#define MSR_INSTANTIATE_CONV(NS, T)                                                            \
    template void NS::conv2d_forward<T>(const ConvGeometry&, std::span<const T>,               \
                                        std::span<const T>, std::span<const T>, std::span<T>); \
    template void NS::conv2d_backward_input<T>(const ConvGeometry&, std::span<const T>,        \
                                               std::span<const T>, std::span<T>);              \
    template void NS::conv2d_backward_params<T>(const ConvGeometry&, std::span<const T>,       \
                                                std::span<const T>, std::span<T>, std::span<T>);

MSR_INSTANTIATE_CONV(reference, float)
MSR_INSTANTIATE_CONV(reference, double)
MSR_INSTANTIATE_CONV(parallel, float)
MSR_INSTANTIATE_CONV(parallel, double)
#undef MSR_INSTANTIATE_CONV

template void parallel::gemm<float>(int, int, int, const float*, int, const float*, int, float*,
                                    int, bool);
template void parallel::gemm<double>(int, int, int, const double*, int, const double*, int,
                                     double*, int, bool);
template void parallel::gemm_nt<float>(int, int, int, const float*, int, const float*, int,
                                       float*, int);
template void parallel::gemm_nt<double>(int, int, int, const double*, int, const double*, int,
                                        double*, int);

}  // namespace msr::kernels
