#include "mosaic_sr/gradcheck_suite.hpp"

#include <random>
#include <stdexcept>

#include "mosaic_sr/loss.hpp"
#include "mosaic_sr/model.hpp"
#include "mosaic_sr/ops.hpp"

namespace msr {

GradcheckScope parse_scope(const std::string& s) {
    if (s == "op") return GradcheckScope::op;
    if (s == "layer") return GradcheckScope::layer;
    if (s == "model") return GradcheckScope::model;
    throw std::invalid_argument("unknown gradcheck scope '" + s + "' (expected op, layer or model)");
}

std::string to_string(GradcheckScope s) {
    switch (s) {
        case GradcheckScope::op: return "op";
        case GradcheckScope::layer: return "layer";
        case GradcheckScope::model: return "model";
    }
    return "op";
}

double default_tolerance(GradcheckScope s) { return s == GradcheckScope::model ? 1e-4 : 1e-5; }

namespace {

using T = Tensor<double>;
using Inputs = std::vector<T>;

class Source {
public:
    explicit Source(std::uint64_t seed) : rng_(seed) {}

    T tensor(Shape s, double amplitude = 1.0, bool grad = true) {
        std::uniform_real_distribution<double> u(-amplitude, amplitude);
        std::vector<double> v(s.numel());
        for (auto& e : v) e = u(rng_);
        T t(s, std::move(v));
        t.set_requires_grad(grad);
        return t;
    }

    // Weights scaled like the model's init so activations stay unsaturated.
    ConvParams<double> conv(int c_out, int c_in, int k, Inputs& all) {
        ConvParams<double> p{tensor(Shape{c_out, c_in, k, k}, 1.0 / std::sqrt(double(c_in) * k * k)),
                             tensor(Shape{1, c_out, 1, 1}, 0.1)};
        all.push_back(p.weight);
        all.push_back(p.bias);
        return p;
    }

    ChannelAttentionParams<double> ca(int c, int reduction, Inputs& all) {
        return {conv(c / reduction, c, 1, all), conv(c, c / reduction, 1, all)};
    }

    ConvLstmParams<double> lstm(int c_in, int hidden, Inputs& all) {
        ConvLstmParams<double> p;
        for (int g = 0; g < 4; ++g) {
            p.w_x[g] = tensor(Shape{hidden, c_in, 3, 3}, 1.0 / std::sqrt(9.0 * c_in));
            p.w_h[g] = tensor(Shape{hidden, hidden, 3, 3}, 1.0 / std::sqrt(9.0 * hidden));
            p.bias[g] = tensor(Shape{1, hidden, 1, 1}, 0.1);
            all.insert(all.end(), {p.w_x[g], p.w_h[g], p.bias[g]});
        }
        for (auto& w : p.w_c) {
            w = tensor(Shape{1, hidden, 1, 1}, 0.5);
            all.push_back(w);
        }
        return p;
    }

    std::mt19937_64& rng() { return rng_; }

private:
    std::mt19937_64 rng_;
};

// Contracts a tensor with a fixed random field so every output element
// carries a distinct upstream gradient.
T project(const T& y, std::uint64_t seed) {
    Source s(seed ^ 0x5bd1e995u);
    return ops::sum(ops::hadamard(y, s.tensor(y.shape(), 1.0, false)));
}

struct Case {
    std::string name;
    ScalarFn f;
    Inputs inputs;
    std::size_t max_checks = 0;
};

std::vector<Case> op_cases(Source& src) {
    const Shape s{2, 4, 6, 6};
    std::vector<Case> cases;
    auto add = [&](std::string name, ScalarFn f, Inputs in) {
        cases.push_back({std::move(name), std::move(f), std::move(in)});
    };
    add("conv2d", [](const Inputs& in) { return project(ops::conv2d(in[0], in[1], in[2], 1, 1), 1); },
        {src.tensor(Shape{2, 3, 6, 5}), src.tensor(Shape{5, 3, 3, 3}), src.tensor(Shape{1, 5, 1, 1})});
    add("conv2d_stride2", [](const Inputs& in) { return project(ops::conv2d(in[0], in[1], T{}, 2, 0), 2); },
        {src.tensor(Shape{1, 3, 7, 7}), src.tensor(Shape{2, 3, 3, 3})});
    add("conv2d_1x1", [](const Inputs& in) { return project(ops::conv2d(in[0], in[1], in[2], 1, 0), 3); },
        {src.tensor(Shape{2, 6, 4, 4}), src.tensor(Shape{3, 6, 1, 1}), src.tensor(Shape{1, 3, 1, 1})});
    add("add", [](const Inputs& in) { return project(ops::add(in[0], in[1]), 4); }, {src.tensor(s), src.tensor(s)});
    add("sub", [](const Inputs& in) { return project(ops::sub(in[0], in[1]), 5); }, {src.tensor(s), src.tensor(s)});
    add("hadamard", [](const Inputs& in) { return project(ops::hadamard(in[0], in[1]), 6); },
        {src.tensor(s), src.tensor(s)});
    add("mul_broadcast", [](const Inputs& in) { return project(ops::mul_broadcast(in[0], in[1]), 7); },
        {src.tensor(s), src.tensor(Shape{1, 4, 1, 1})});
    add("scale", [](const Inputs& in) { return project(ops::scale(in[0], -1.75), 8); }, {src.tensor(s)});
    add("sigmoid", [](const Inputs& in) { return project(ops::sigmoid(in[0]), 9); }, {src.tensor(s, 3.0)});
    add("tanh", [](const Inputs& in) { return project(ops::tanh(in[0]), 10); }, {src.tensor(s, 3.0)});
    add("relu", [](const Inputs& in) { return project(ops::relu(in[0]), 11); }, {src.tensor(s)});
    add("global_avg_pool", [](const Inputs& in) { return project(ops::global_avg_pool(in[0]), 12); },
        {src.tensor(s)});
    add("pixel_shuffle", [](const Inputs& in) { return project(ops::pixel_shuffle(in[0], 2), 13); },
        {src.tensor(Shape{1, 8, 3, 4})});
    add("pixel_unshuffle", [](const Inputs& in) { return project(ops::pixel_unshuffle(in[0], 3), 14); },
        {src.tensor(Shape{1, 2, 6, 9})});
    add("concat_channels", [](const Inputs& in) { return project(ops::concat_channels<double>({in[0], in[1]}), 15); },
        {src.tensor(Shape{2, 3, 5, 5}), src.tensor(Shape{2, 2, 5, 5})});
    add("slice_channels", [](const Inputs& in) { return project(ops::slice_channels(in[0], 1, 2), 16); },
        {src.tensor(s)});
    add("sum", [](const Inputs& in) { return ops::sum(ops::tanh(in[0])); }, {src.tensor(s)});
    add("mean", [](const Inputs& in) { return ops::mean(ops::tanh(in[0])); }, {src.tensor(s)});
    // Values spread over both branches of the loss, away from |d| = 1.
    auto gt = src.tensor(s, 2.5, false);
    add("smooth_l1", [gt](const Inputs& in) { return smooth_l1(in[0], gt); }, {src.tensor(s, 2.5)});
    std::vector<double> m(s.numel());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = (i % 3 == 0) ? 0.0 : 1.0;
    T mask(s, std::move(m));
    add("smooth_l1_masked", [gt, mask](const Inputs& in) { return smooth_l1(in[0], gt, mask); },
        {src.tensor(s, 2.5)});
    return cases;
}

std::vector<Case> layer_cases(Source& src) {
    const int c = 8;
    const Shape s{2, c, 6, 6};
    std::vector<Case> cases;

    {
        Inputs in{src.tensor(s)};
        auto p = src.ca(c, 4, in);
        cases.push_back({"channel_attention",
                         [p](const Inputs& x) { return project(channel_attention(x[0], p), 21); }, in});
    }
    for (bool use_ca : {false, true}) {
        Inputs in{src.tensor(s)};
        ResidualBlockParams<double> p{src.conv(c, c, 3, in), src.conv(c, c, 3, in), {}};
        if (use_ca) p.ca = src.ca(c, 4, in);
        cases.push_back({use_ca ? "residual_block_ca" : "residual_block",
                         [p, use_ca](const Inputs& x) { return project(residual_block(x[0], p, use_ca), 22); },
                         in});
    }
    {
        Inputs in{src.tensor(s)};
        ResidualGroupParams<double> p;
        for (int j = 0; j < 2; ++j) {
            p.blocks.push_back({src.conv(c, c, 3, in), src.conv(c, c, 3, in), src.ca(c, 4, in)});
        }
        p.tail = src.conv(c, c, 3, in);
        cases.push_back({"residual_group",
                         [p](const Inputs& x) { return project(residual_group(x[0], p, true), 23); }, in});
    }
    {
        Inputs in{src.tensor(s)};
        auto p = src.lstm(c, 6, in);
        cases.push_back({"convlstm_step_zero_state",
                         [p](const Inputs& x) {
                             auto st = convlstm_step(x[0], {}, p);
                             return ops::add(project(st.h, 24), project(st.c, 25));
                         },
                         in});
    }
    {
        Inputs in{src.tensor(s), src.tensor(Shape{2, 6, 6, 6}), src.tensor(Shape{2, 6, 6, 6})};
        auto p = src.lstm(c, 6, in);
        cases.push_back({"convlstm_step",
                         [p](const Inputs& x) {
                             auto st = convlstm_step(x[0], {x[1], x[2]}, p);
                             return ops::add(project(st.h, 26), project(st.c, 27));
                         },
                         in});
    }
    {
        const Shape fs{1, 4, 5, 5};
        Inputs in{src.tensor(fs), src.tensor(fs), src.tensor(fs)};
        auto fwd = src.lstm(4, 3, in);
        auto bwd = src.lstm(4, 3, in);
        auto fuse = src.conv(4, 2 * 3 * 3, 3, in);
        cases.push_back({"pyramid_convlstm",
                         [fwd, bwd, fuse](const Inputs& x) {
                             return project(pyramid_convlstm<double>({x[0], x[1], x[2]}, fwd, bwd, fuse), 28);
                         },
                         in});
    }
    cases.push_back({"lstmA", [](const Inputs& x) { return project(lstmA(x[0], true), 29); },
                     {src.tensor(s, 3.0)}});
    cases.push_back({"lstmA_no_sigmoid", [](const Inputs& x) { return project(lstmA(x[0], false), 30); },
                     {src.tensor(s, 1.5)}});
    {
        Inputs in{src.tensor(s)};
        LstmAGateParams<double> g{src.conv(c, c, 3, in), src.conv(c, c, 3, in), src.conv(c, c, 3, in)};
        cases.push_back({"lstmA_learned_gates",
                         [g](const Inputs& x) { return project(lstmA(x[0], true, &g), 31); }, in});
    }
    {
        Inputs in{src.tensor(Shape{1, 4, 4, 3})};
        UpsamplerParams<double> p{src.conv(4 * 9, 4, 3, in), src.conv(1, 4, 3, in)};
        cases.push_back({"upsampler", [p](const Inputs& x) { return project(upsampler(x[0], p, 3), 32); }, in});
    }
    return cases;
}

std::vector<Case> model_cases(Source& src, std::uint64_t seed) {
    std::vector<Case> cases;
    for (const char* preset : {"pyrrcan_lstma", "pyrrcan_lstma_gates", "rcan"}) {
        ModelConfig cfg = ModelConfig::preset(preset);
        cfg.width = 8;
        cfg.n_rg = 2;
        cfg.n_rb = 1;
        cfg.ca_reduction = 4;
        auto model = std::make_shared<Model<double>>(cfg);
        model->init_weights(seed);
        Inputs in{src.tensor(Shape{1, 16, 12, 12}, 0.5)};
        for (auto& v : in[0].mutable_data()) v += 0.5;
        // Nonzero biases and peepholes so their gradients are exercised.
        for (auto& p : model->parameters().entries()) {
            if (p.role != ParamRole::weight) {
                auto v = p.value.mutable_data();
                auto r = src.tensor(p.value.shape(), 0.1, false);
                std::copy(r.data().begin(), r.data().end(), v.begin());
            }
            in.push_back(p.value);
        }
        cases.push_back({std::string("model_") + preset,
                         [model](const Inputs& x) { return project(model->forward(x[0]), 40); }, in, 24});
    }
    return cases;
}

}  // namespace

std::vector<GradcheckReport> run_gradcheck_suite(GradcheckScope scope, const GradcheckSuiteOptions& options) {
    Source src(options.seed);
    std::vector<Case> cases;
    switch (scope) {
        case GradcheckScope::op: cases = op_cases(src); break;
        case GradcheckScope::layer: cases = layer_cases(src); break;
        case GradcheckScope::model: cases = model_cases(src, options.seed); break;
    }
    GradcheckOptions go;
    go.tol = options.tol > 0 ? options.tol : default_tolerance(scope);
    go.seed = options.seed;
    std::vector<GradcheckReport> reports;
    for (std::size_t i = 0; i < cases.size(); ++i) {
        go.max_checks_per_input = cases[i].max_checks;
        go.corrupt = i == 0 ? options.corrupt : 0.0;
        reports.push_back(gradcheck(cases[i].name, cases[i].f, cases[i].inputs, go));
    }
    return reports;
}

}  // namespace msr
