#pragma once

#include <cstddef>
#include <span>

// Convolution kernels in two flavours:
//   reference::  straightforward serial loops, kept as the oracle for tests
//   parallel::   im2col + register-blocked GEMM, OpenMP over output tiles
// Both share the same contract. Forward overwrites y; the backward kernels
// accumulate into their outputs. Every output element of the parallel path
// is reduced by a single thread in a fixed order, so results do not depend
// on the thread count.

namespace msr::kernels {

struct ConvGeometry {
    int batch = 1;
    int in_channels = 1;
    int height = 1;
    int width = 1;
    int out_channels = 1;
    int kernel = 1;
    int stride = 1;
    int pad = 0;

    int out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
    int out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
    std::size_t input_size() const;
    std::size_t output_size() const;
    std::size_t weight_size() const;
};

namespace reference {

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                    std::span<const T> bias, std::span<T> y);

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> dy,
                           std::span<const T> w, std::span<T> dx);

template <typename T>
void conv2d_backward_params(const ConvGeometry& g, std::span<const T> x,
                            std::span<const T> dy, std::span<T> dw, std::span<T> dbias);

}  // namespace reference

namespace parallel {

/// C[m x n] (+)= A[m x k] * B[k x n], all row-major with the given strides.
template <typename T>
void gemm(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc,
          bool accumulate);

/// C[m x n] += A[m x k] * B[n x k]^T.
template <typename T>
void gemm_nt(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc);

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                    std::span<const T> bias, std::span<T> y);

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> dy,
                           std::span<const T> w, std::span<T> dx);

template <typename T>
void conv2d_backward_params(const ConvGeometry& g, std::span<const T> x,
                            std::span<const T> dy, std::span<T> dw, std::span<T> dbias);

}  // namespace parallel

/// Caps OpenMP worker count from MOSAIC_SR_THREADS when set. Returns the
/// effective thread count.
int configure_threads_from_env();

}  // namespace msr::kernels
