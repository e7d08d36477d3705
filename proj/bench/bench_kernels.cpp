// Serial reference kernels vs the OpenMP im2col/GEMM path at the layer
// shapes that dominate training (60x60 LR crops, 16-64 feature channels).

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "mosaic_sr/kernels.hpp"

namespace k = msr::kernels;

namespace {

struct Buffers {
    k::ConvGeometry g;
    std::vector<float> x, w, b, y, dy, dx, dw, db;

    explicit Buffers(const k::ConvGeometry& geom) : g(geom) {
        std::mt19937 rng(1);
        std::uniform_real_distribution<float> u(-1.0f, 1.0f);
        auto fill = [&](std::vector<float>& v, std::size_t n) {
            v.resize(n);
            for (auto& e : v) e = u(rng);
        };
        fill(x, g.input_size());
        fill(w, g.weight_size());
        fill(b, g.out_channels);
        fill(dy, g.output_size());
        y.resize(g.output_size());
        dx.assign(g.input_size(), 0.0f);
        dw.assign(g.weight_size(), 0.0f);
        db.assign(g.out_channels, 0.0f);
    }
};

k::ConvGeometry geometry(const benchmark::State& state) {
    const int c = static_cast<int>(state.range(0));
    const int hw = static_cast<int>(state.range(1));
    return {1, c, hw, hw, c, 3, 1, 1};
}

void set_counters(benchmark::State& state, const k::ConvGeometry& g) {
    const double macs = static_cast<double>(g.weight_size()) * g.out_height() * g.out_width() * g.batch;
    state.counters["MAC/s"] = benchmark::Counter(macs, benchmark::Counter::kIsIterationInvariantRate);
}

template <bool Parallel>
void BM_ConvForward(benchmark::State& state) {
    Buffers buf(geometry(state));
    for (auto _ : state) {
        if constexpr (Parallel) {
            k::parallel::conv2d_forward<float>(buf.g, buf.x, buf.w, buf.b, buf.y);
        } else {
            k::reference::conv2d_forward<float>(buf.g, buf.x, buf.w, buf.b, buf.y);
        }
        benchmark::DoNotOptimize(buf.y.data());
    }
    set_counters(state, buf.g);
}

template <bool Parallel>
void BM_ConvBackward(benchmark::State& state) {
    Buffers buf(geometry(state));
    for (auto _ : state) {
        if constexpr (Parallel) {
            k::parallel::conv2d_backward_input<float>(buf.g, buf.dy, buf.w, buf.dx);
            k::parallel::conv2d_backward_params<float>(buf.g, buf.x, buf.dy, buf.dw, buf.db);
        } else {
            k::reference::conv2d_backward_input<float>(buf.g, buf.dy, buf.w, buf.dx);
            k::reference::conv2d_backward_params<float>(buf.g, buf.x, buf.dy, buf.dw, buf.db);
        }
        benchmark::DoNotOptimize(buf.dw.data());
    }
    state.counters["MAC/s"] = benchmark::Counter(
        2.0 * buf.g.weight_size() * buf.g.out_height() * buf.g.out_width(),
        benchmark::Counter::kIsIterationInvariantRate);
}

void Shapes(benchmark::internal::Benchmark* b) {
    b->Args({16, 60})->Args({64, 60})->Args({16, 180})->Unit(benchmark::kMillisecond);
}

}  // namespace

BENCHMARK(BM_ConvForward<false>)->Name("conv_forward/reference")->Apply(Shapes);
BENCHMARK(BM_ConvForward<true>)->Name("conv_forward/parallel")->Apply(Shapes);
BENCHMARK(BM_ConvBackward<false>)->Name("conv_backward/reference")->Apply(Shapes);
BENCHMARK(BM_ConvBackward<true>)->Name("conv_backward/parallel")->Apply(Shapes);

BENCHMARK_MAIN();
