#include <gtest/gtest.h>
#include <omp.h>

#include <random>
#include <vector>

#include "mosaic_sr/kernels.hpp"

namespace k = msr::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> v(n);
    for (auto& e : v) e = u(rng);
    return v;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

const k::ConvGeometry kGeometries[] = {
    {1, 1, 5, 5, 1, 3, 1, 1},    // single channel
    {2, 3, 7, 6, 5, 3, 1, 1},    // C_out not a tile multiple
    {1, 4, 9, 9, 11, 3, 2, 1},   // stride 2
    {2, 16, 6, 5, 16, 1, 1, 0},  // pointwise fast path
    {1, 2, 8, 8, 3, 5, 1, 2},    // 5x5 kernel
    {1, 6, 10, 7, 9, 3, 1, 0},   // valid conv
    {1, 3, 4, 4, 40, 3, 3, 2},   // wide output, stride 3
};

}  // namespace

TEST(Kernels, ParallelConvMatchesReference) {
    std::mt19937_64 rng(7);
    for (const auto& g : kGeometries) {
        auto x = random_vec(g.input_size(), rng);
        auto w = random_vec(g.weight_size(), rng);
        auto b = random_vec(g.out_channels, rng);
        auto dy = random_vec(g.output_size(), rng);

        std::vector<double> y_ref(g.output_size()), y_par(g.output_size());
        k::reference::conv2d_forward<double>(g, x, w, b, y_ref);
        k::parallel::conv2d_forward<double>(g, x, w, b, y_par);
        EXPECT_LT(max_abs_diff(y_ref, y_par), 1e-12);

        // Accumulation semantics: start from a nonzero buffer.
        std::vector<double> dx_ref(x.size(), 0.25), dx_par(x.size(), 0.25);
        k::reference::conv2d_backward_input<double>(g, dy, w, dx_ref);
        k::parallel::conv2d_backward_input<double>(g, dy, w, dx_par);
        EXPECT_LT(max_abs_diff(dx_ref, dx_par), 1e-12);

        std::vector<double> dw_ref(w.size(), -0.5), dw_par(w.size(), -0.5);
        std::vector<double> db_ref(b.size(), 1.0), db_par(b.size(), 1.0);
        k::reference::conv2d_backward_params<double>(g, x, dy, dw_ref, db_ref);
        k::parallel::conv2d_backward_params<double>(g, x, dy, dw_par, db_par);
        EXPECT_LT(max_abs_diff(dw_ref, dw_par), 1e-11);
        EXPECT_LT(max_abs_diff(db_ref, db_par), 1e-12);
    }
}

TEST(Kernels, FloatPathAgreesWithinRounding) {
    std::mt19937 rng(3);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    k::ConvGeometry g{2, 16, 20, 20, 16, 3, 1, 1};
    std::vector<float> x(g.input_size()), w(g.weight_size()), y0(g.output_size()), y1(g.output_size());
    for (auto& e : x) e = u(rng);
    for (auto& e : w) e = u(rng);
    k::reference::conv2d_forward<float>(g, x, w, {}, y0);
    k::parallel::conv2d_forward<float>(g, x, w, {}, y1);
    for (std::size_t i = 0; i < y0.size(); ++i) EXPECT_NEAR(y0[i], y1[i], 2e-5f);
}

TEST(Kernels, ResultsIndependentOfThreadCount) {
    std::mt19937_64 rng(11);
    k::ConvGeometry g{2, 8, 33, 31, 24, 3, 1, 1};
    auto x = random_vec(g.input_size(), rng);
    auto w = random_vec(g.weight_size(), rng);
    auto dy = random_vec(g.output_size(), rng);

    auto run = [&](int threads) {
        omp_set_num_threads(threads);
        std::vector<double> y(g.output_size()), dx(x.size(), 0.0), dw(w.size(), 0.0);
        k::parallel::conv2d_forward<double>(g, x, w, {}, y);
        k::parallel::conv2d_backward_input<double>(g, dy, w, dx);
        k::parallel::conv2d_backward_params<double>(g, x, dy, dw, {});
        y.insert(y.end(), dx.begin(), dx.end());
        y.insert(y.end(), dw.begin(), dw.end());
        return y;
    };
    const int saved = omp_get_max_threads();
    auto one = run(1);
    auto four = run(4);
    omp_set_num_threads(saved);
    EXPECT_EQ(one, four);
}

TEST(Kernels, GemmMatchesNaiveProduct) {
    std::mt19937_64 rng(5);
    for (auto [m, n, kk] : {std::tuple{1, 1, 1}, {7, 45, 13}, {8, 32, 4}, {19, 70, 33}}) {
        auto a = random_vec(static_cast<std::size_t>(m) * kk, rng);
        auto b = random_vec(static_cast<std::size_t>(kk) * n, rng);
        std::vector<double> c(static_cast<std::size_t>(m) * n, 1.0), expect(c.size(), 1.0);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) {
                double s = 0;
                for (int p = 0; p < kk; ++p) s += a[i * kk + p] * b[p * n + j];
                expect[i * n + j] += s;
            }
        k::parallel::gemm<double>(m, n, kk, a.data(), kk, b.data(), n, c.data(), n, true);
        EXPECT_LT(max_abs_diff(c, expect), 1e-12);
    }
}

TEST(Kernels, GemmNtMatchesNaiveProduct) {
    std::mt19937_64 rng(6);
    for (auto [m, n, kk] : {std::tuple{1, 1, 3}, {4, 4, 16}, {6, 9, 37}, {16, 144, 100}}) {
        auto a = random_vec(static_cast<std::size_t>(m) * kk, rng);
        auto b = random_vec(static_cast<std::size_t>(n) * kk, rng);
        std::vector<double> c(static_cast<std::size_t>(m) * n, 0.5), expect(c.size(), 0.5);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                for (int p = 0; p < kk; ++p) expect[i * n + j] += a[i * kk + p] * b[j * kk + p];
        k::parallel::gemm_nt<double>(m, n, kk, a.data(), kk, b.data(), kk, c.data(), n);
        EXPECT_LT(max_abs_diff(c, expect), 1e-12);
    }
}

TEST(Kernels, OutputGeometry) {
    k::ConvGeometry g{1, 1, 3, 3, 1, 3, 1, 0};
    EXPECT_EQ(g.out_height(), 1);
    g.pad = 1;
    EXPECT_EQ(g.out_width(), 3);
    g.stride = 2;
    g.height = 7;
    EXPECT_EQ(g.out_height(), 4);
}
