#include "mosaic_sr/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "mosaic_sr/ops.hpp"

namespace msr {

std::string to_string(BetweenRgAttention a) {
    switch (a) {
        case BetweenRgAttention::none: return "none";
        case BetweenRgAttention::lstmA: return "lstmA";
        case BetweenRgAttention::lstmA_no_sigmoid: return "lstmA_no_sigmoid";
        case BetweenRgAttention::ca_rcan: return "ca_rcan";
    }
    return "none";
}

BetweenRgAttention parse_attention(const std::string& s) {
    if (s == "none") return BetweenRgAttention::none;
    if (s == "lstmA") return BetweenRgAttention::lstmA;
    if (s == "lstmA_no_sigmoid") return BetweenRgAttention::lstmA_no_sigmoid;
    if (s == "ca_rcan") return BetweenRgAttention::ca_rcan;
    throw std::invalid_argument("unknown between_rg_attention '" + s +
                                "' (expected none, lstmA, lstmA_no_sigmoid or ca_rcan)");
}

// ---------------------------------------------------------------------------
// ModelConfig

void ModelConfig::validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("model config: " + what); };
    if (n_rg < 1) fail("n_rg must be >= 1");
    if (n_rb < 1) fail("n_rb must be >= 1");
    if (width < 1) fail("width must be >= 1");
    if (ca_reduction < 1) fail("ca_reduction must be >= 1");
    if (width % ca_reduction != 0) {
        fail("width " + std::to_string(width) + " is not divisible by ca_reduction " +
             std::to_string(ca_reduction));
    }
    if (in_channels < 1 || out_channels < 1) fail("channel counts must be >= 1");
    if (scale < 2 || scale > 4) fail("scale must be 2, 3 or 4");
    if (lstm_hidden < 0) fail("lstm_hidden must be >= 0");
}

nlohmann::json ModelConfig::to_json() const {
    return {
        {"n_rg", n_rg},
        {"n_rb", n_rb},
        {"width", width},
        {"ca_reduction", ca_reduction},
        {"in_channels", in_channels},
        {"out_channels", out_channels},
        {"scale", scale},
        {"use_ca_in_rb", use_ca_in_rb},
        {"use_pyramid_convlstm", use_pyramid_convlstm},
        {"between_rg_attention", to_string(between_rg_attention)},
        {"lstmA_learned_gates", lstmA_learned_gates},
        {"lstm_hidden", lstm_hidden},
    };
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw std::invalid_argument("model config must be a JSON object");
    ModelConfig c;
    if (j.contains("preset")) c = preset(j.at("preset").get<std::string>());
    for (const auto& [key, value] : j.items()) {
        if (key == "preset") continue;
        else if (key == "n_rg") c.n_rg = value.get<int>();
        else if (key == "n_rb") c.n_rb = value.get<int>();
        else if (key == "width") c.width = value.get<int>();
        else if (key == "ca_reduction") c.ca_reduction = value.get<int>();
        else if (key == "in_channels") c.in_channels = value.get<int>();
        else if (key == "out_channels") c.out_channels = value.get<int>();
        else if (key == "scale") c.scale = value.get<int>();
        else if (key == "use_ca_in_rb") c.use_ca_in_rb = value.get<bool>();
        else if (key == "use_pyramid_convlstm") c.use_pyramid_convlstm = value.get<bool>();
        else if (key == "between_rg_attention") c.between_rg_attention = parse_attention(value.get<std::string>());
        else if (key == "lstmA_learned_gates") c.lstmA_learned_gates = value.get<bool>();
        else if (key == "lstm_hidden") c.lstm_hidden = value.get<int>();
        else throw std::invalid_argument("model config: unknown key '" + key + "'");
    }
    c.validate();
    return c;
}

ModelConfig ModelConfig::preset(const std::string& name) {
    ModelConfig c;
    c.between_rg_attention = BetweenRgAttention::none;
    c.lstmA_learned_gates = false;
    if (name == "rcan_minus") {
        c.use_ca_in_rb = false;
        c.use_pyramid_convlstm = false;
    } else if (name == "rcan") {
        c.use_pyramid_convlstm = false;
    } else if (name == "pyrrcan") {
    } else if (name == "pyrrcan_lstma") {
        c.between_rg_attention = BetweenRgAttention::lstmA;
    } else if (name == "pyrrcan_lstma_gates") {
        c.between_rg_attention = BetweenRgAttention::lstmA;
        c.lstmA_learned_gates = true;
    } else if (name == "pyrrcan_minus_lstma") {
        c.use_ca_in_rb = false;
        c.between_rg_attention = BetweenRgAttention::lstmA;
    } else if (name == "pyrrcan_minus_lstma_no_sigmoid") {
        c.use_ca_in_rb = false;
        c.between_rg_attention = BetweenRgAttention::lstmA_no_sigmoid;
    } else if (name == "pyrrcan_minus_ca_rcan") {
        c.use_ca_in_rb = false;
        c.between_rg_attention = BetweenRgAttention::ca_rcan;
    } else if (name == "pyrrcan_minus_no_convlstm") {
        c.use_ca_in_rb = false;
        c.use_pyramid_convlstm = false;
    } else {
        throw std::invalid_argument("unknown model preset '" + name + "'");
    }
    return c;
}

std::vector<std::string> ModelConfig::preset_names() {
    return {"rcan_minus",          "rcan",
            "pyrrcan",             "pyrrcan_lstma",
            "pyrrcan_lstma_gates", "pyrrcan_minus_lstma",
            "pyrrcan_minus_lstma_no_sigmoid", "pyrrcan_minus_ca_rcan",
            "pyrrcan_minus_no_convlstm"};
}

// ---------------------------------------------------------------------------
// Layers

template <typename T>
Tensor<T> conv_same(const Tensor<T>& x, const ConvParams<T>& p) {
    return ops::conv2d(x, p.weight, p.bias, 1, p.weight.shape().h / 2);
}

template <typename T>
Tensor<T> channel_attention(const Tensor<T>& x, const ChannelAttentionParams<T>& p) {
    const int c = x.shape().c;
    const int reduced = p.down.weight.shape().n;
    if (p.down.weight.shape().c != c || reduced < 1 || c % reduced != 0) {
        throw DimensionError("channel_attention: " + std::to_string(c) +
                             " channels not divisible into reduction weight " +
                             p.down.weight.shape().str());
    }
    auto pooled = ops::global_avg_pool(x);
    auto s = ops::sigmoid(conv_same(ops::relu(conv_same(pooled, p.down)), p.up));
    return ops::mul_broadcast(x, s);
}

template <typename T>
Tensor<T> residual_block(const Tensor<T>& x, const ResidualBlockParams<T>& p, bool use_ca) {
    auto body = conv_same(ops::relu(conv_same(x, p.conv1)), p.conv2);
    if (use_ca) body = channel_attention(body, p.ca);
    return ops::add(x, body);
}

template <typename T>
Tensor<T> residual_group(const Tensor<T>& x, const ResidualGroupParams<T>& p, bool use_ca) {
    Tensor<T> y = x;
    for (const auto& block : p.blocks) y = residual_block(y, block, use_ca);
    return ops::add(x, conv_same(y, p.tail));
}

template <typename T>
ConvLstmState<T> convlstm_step(const Tensor<T>& x, const ConvLstmState<T>& state,
                               const ConvLstmParams<T>& p) {
    const bool zero = state.is_zero();
    if (!zero) {
        const Shape& xs = x.shape();
        const Shape& hs = state.h.shape();
        if (xs.n != hs.n || xs.h != hs.h || xs.w != hs.w) throw shape_mismatch("convlstm_step: X_t vs state", xs, hs);
        if (state.c.shape() != hs) throw shape_mismatch("convlstm_step: H vs C", hs, state.c.shape());
    }
    auto pre = [&](int gate) {
        auto v = ops::conv2d(x, p.w_x[gate], p.bias[gate], 1, 1);
        if (!zero) v = ops::add(v, ops::conv2d(state.h, p.w_h[gate], Tensor<T>{}, 1, 1));
        return v;
    };
    auto input_gate = pre(0);
    if (!zero) input_gate = ops::add(input_gate, ops::mul_broadcast(state.c, p.w_c[0]));
    input_gate = ops::sigmoid(input_gate);
    auto candidate = ops::tanh(pre(2));

    Tensor<T> cell = ops::hadamard(input_gate, candidate);
    if (!zero) {
        auto forget = ops::sigmoid(ops::add(pre(1), ops::mul_broadcast(state.c, p.w_c[1])));
        cell = ops::add(ops::hadamard(forget, state.c), cell);
    }
    auto output_gate = ops::sigmoid(ops::add(pre(3), ops::mul_broadcast(cell, p.w_c[2])));
    auto hidden = ops::hadamard(output_gate, ops::tanh(cell));
    return {hidden, cell};
}

template <typename T>
Tensor<T> pyramid_convlstm(const std::vector<Tensor<T>>& features, const ConvLstmParams<T>& forward,
                           const ConvLstmParams<T>& backward, const ConvParams<T>& fuse) {
    if (features.empty()) throw std::invalid_argument("pyramid_convlstm: empty feature sequence");
    for (const auto& f : features) {
        if (f.shape() != features.front().shape()) {
            throw shape_mismatch("pyramid_convlstm: features", features.front().shape(), f.shape());
        }
    }
    const std::size_t n = features.size();
    std::vector<Tensor<T>> hidden(2 * n);
    ConvLstmState<T> state;
    for (std::size_t t = 0; t < n; ++t) {
        state = convlstm_step(features[t], state, forward);
        hidden[t] = state.h;
    }
    state = {};
    for (std::size_t t = n; t-- > 0;) {
        state = convlstm_step(features[t], state, backward);
        hidden[n + t] = state.h;
    }
    return conv_same(ops::concat_channels(hidden), fuse);
}

template <typename T>
Tensor<T> lstmA(const Tensor<T>& x, bool with_sigmoid, const LstmAGateParams<T>* gates) {
    if (!gates) {
        auto gate = with_sigmoid ? ops::sigmoid(x) : x;
        return ops::hadamard(gate, ops::tanh(ops::hadamard(gate, ops::tanh(x))));
    }
    auto out_in = conv_same(x, gates->o);
    auto in_in = conv_same(x, gates->i);
    auto cand = ops::tanh(conv_same(x, gates->g));
    auto out_gate = with_sigmoid ? ops::sigmoid(out_in) : out_in;
    auto in_gate = with_sigmoid ? ops::sigmoid(in_in) : in_in;
    return ops::hadamard(out_gate, ops::tanh(ops::hadamard(in_gate, cand)));
}

template <typename T>
Tensor<T> upsampler(const Tensor<T>& x, const UpsamplerParams<T>& p, int scale) {
    return conv_same(ops::pixel_shuffle(conv_same(x, p.expand), scale), p.out);
}

// ---------------------------------------------------------------------------
// ParameterSet

template <typename T>
Tensor<T>& ParameterSet<T>::add(const std::string& name, Shape shape, ParamRole role) {
    if (contains(name)) throw std::logic_error("duplicate parameter name '" + name + "'");
    index_.emplace(name, entries_.size());
    auto t = Tensor<T>::zeros(shape);
    t.set_requires_grad(true);
    entries_.push_back({name, t, role});
    return entries_.back().value;
}

template <typename T>
const Tensor<T>& ParameterSet<T>::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
    return entries_[it->second].value;
}

template <typename T>
std::size_t ParameterSet<T>::element_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.numel();
    return n;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
    for (auto& e : entries_) e.value.zero_grad();
}

// ---------------------------------------------------------------------------
// Model

namespace {

std::string rg_name(int i) { return "rg" + std::to_string(i + 1); }
std::string rb_name(int i, int j) { return rg_name(i) + ".rb" + std::to_string(j + 1); }
std::string attn_name(int i) { return "attn" + std::to_string(i + 1); }

constexpr const char* kGates = "icfo";
constexpr const char* kPeepholes = "ifo";

}  // namespace

template <typename T>
Model<T>::Model(ModelConfig config) : config_(config) {
    config_.validate();
    const int c = config_.width;
    const int h = config_.hidden();
    register_conv("head", c, config_.in_channels, 3);
    for (int i = 0; i < config_.n_rg; ++i) {
        for (int j = 0; j < config_.n_rb; ++j) {
            register_conv(rb_name(i, j) + ".conv1", c, c, 3);
            register_conv(rb_name(i, j) + ".conv2", c, c, 3);
            if (config_.use_ca_in_rb) register_ca(rb_name(i, j) + ".ca", c);
        }
        register_conv(rg_name(i) + ".tail", c, c, 3);
        switch (config_.between_rg_attention) {
            case BetweenRgAttention::ca_rcan:
                register_ca(attn_name(i) + ".ca", c);
                break;
            case BetweenRgAttention::lstmA:
            case BetweenRgAttention::lstmA_no_sigmoid:
                if (config_.lstmA_learned_gates) {
                    for (const char* g : {"gate_o", "gate_i", "gate_g"})
                        register_conv(attn_name(i) + "." + g, c, c, 3);
                }
                break;
            case BetweenRgAttention::none:
                break;
        }
    }
    if (config_.use_pyramid_convlstm) {
        register_lstm("pyr.fwd", c, h);
        register_lstm("pyr.bwd", c, h);
        register_conv("fuse", c, 2 * config_.n_rg * h, 3);
    } else {
        register_conv("fuse", c, config_.n_rg * c, 3);
    }
    register_conv("up.expand", c * config_.scale * config_.scale, c, 3);
    register_conv("up.out", config_.out_channels, c, 3);
}

template <typename T>
void Model<T>::register_conv(const std::string& prefix, int c_out, int c_in, int k, bool with_bias) {
    params_.add(prefix + ".weight", Shape{c_out, c_in, k, k}, ParamRole::weight);
    if (with_bias) params_.add(prefix + ".bias", Shape{1, c_out, 1, 1}, ParamRole::bias);
}

template <typename T>
void Model<T>::register_ca(const std::string& prefix, int channels) {
    const int reduced = channels / config_.ca_reduction;
    register_conv(prefix + ".down", reduced, channels, 1);
    register_conv(prefix + ".up", channels, reduced, 1);
}

template <typename T>
void Model<T>::register_lstm(const std::string& prefix, int c_in, int hidden) {
    for (int g = 0; g < 4; ++g) {
        const std::string s(1, kGates[g]);
        params_.add(prefix + ".W_x" + s, Shape{hidden, c_in, 3, 3}, ParamRole::weight);
        params_.add(prefix + ".W_h" + s, Shape{hidden, hidden, 3, 3}, ParamRole::weight);
        params_.add(prefix + ".b_" + s, Shape{1, hidden, 1, 1}, ParamRole::bias);
    }
    for (int g = 0; g < 3; ++g) {
        params_.add(prefix + ".W_c" + std::string(1, kPeepholes[g]), Shape{1, hidden, 1, 1},
                    ParamRole::peephole);
    }
}

template <typename T>
void Model<T>::init_weights(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (auto& p : params_.entries()) {
        auto values = p.value.mutable_data();
        if (p.role != ParamRole::weight) {
            std::fill(values.begin(), values.end(), T(0));
            continue;
        }
        const Shape& s = p.value.shape();
        const double bound = 1.0 / std::sqrt(static_cast<double>(s.c) * s.h * s.w);
        for (auto& v : values) {
            const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;  // [0, 1)
            v = static_cast<T>((2.0 * u - 1.0) * bound);
        }
    }
}

template <typename T>
ConvParams<T> Model<T>::conv(const std::string& prefix, bool with_bias) const {
    return {params_.get(prefix + ".weight"), with_bias ? params_.get(prefix + ".bias") : Tensor<T>{}};
}

template <typename T>
ResidualGroupParams<T> Model<T>::group(int index) const {
    ResidualGroupParams<T> g;
    for (int j = 0; j < config_.n_rb; ++j) {
        ResidualBlockParams<T> b{conv(rb_name(index, j) + ".conv1"), conv(rb_name(index, j) + ".conv2"), {}};
        if (config_.use_ca_in_rb) {
            b.ca = {conv(rb_name(index, j) + ".ca.down"), conv(rb_name(index, j) + ".ca.up")};
        }
        g.blocks.push_back(std::move(b));
    }
    g.tail = conv(rg_name(index) + ".tail");
    return g;
}

template <typename T>
ChannelAttentionParams<T> Model<T>::attention_ca(int index) const {
    return {conv(attn_name(index) + ".ca.down"), conv(attn_name(index) + ".ca.up")};
}

template <typename T>
LstmAGateParams<T> Model<T>::attention_gates(int index) const {
    return {conv(attn_name(index) + ".gate_o"), conv(attn_name(index) + ".gate_i"),
            conv(attn_name(index) + ".gate_g")};
}

template <typename T>
ConvLstmParams<T> Model<T>::lstm(const std::string& direction) const {
    const std::string prefix = "pyr." + direction;
    ConvLstmParams<T> p;
    for (int g = 0; g < 4; ++g) {
        const std::string s(1, kGates[g]);
        p.w_x[g] = params_.get(prefix + ".W_x" + s);
        p.w_h[g] = params_.get(prefix + ".W_h" + s);
        p.bias[g] = params_.get(prefix + ".b_" + s);
    }
    for (int g = 0; g < 3; ++g) p.w_c[g] = params_.get(prefix + ".W_c" + std::string(1, kPeepholes[g]));
    return p;
}

template <typename T>
UpsamplerParams<T> Model<T>::upsampler_params() const {
    return {conv("up.expand"), conv("up.out")};
}

template <typename T>
Tensor<T> Model<T>::between_rg(const Tensor<T>& x, int index) const {
    switch (config_.between_rg_attention) {
        case BetweenRgAttention::none:
            return x;
        case BetweenRgAttention::ca_rcan:
            return channel_attention(x, attention_ca(index));
        case BetweenRgAttention::lstmA:
        case BetweenRgAttention::lstmA_no_sigmoid: {
            const bool with_sigmoid = config_.between_rg_attention == BetweenRgAttention::lstmA;
            if (config_.lstmA_learned_gates) {
                auto gates = attention_gates(index);
                return lstmA(x, with_sigmoid, &gates);
            }
            return lstmA(x, with_sigmoid);
        }
    }
    return x;
}

template <typename T>
Tensor<T> Model<T>::trunk(const Tensor<T>& x) const {
    if (x.shape().c != config_.in_channels) {
        throw DimensionError("model expects " + std::to_string(config_.in_channels) +
                             " input channels, got input " + x.shape().str());
    }
    const auto f0 = conv_same(x, conv("head"));
    Tensor<T> f = f0;
    std::vector<Tensor<T>> outputs;
    outputs.reserve(config_.n_rg);
    for (int i = 0; i < config_.n_rg; ++i) {
        f = residual_group(f, group(i), config_.use_ca_in_rb);
        f = between_rg(f, i);
        outputs.push_back(f);
    }
    const auto fused = config_.use_pyramid_convlstm
                           ? pyramid_convlstm(outputs, lstm("fwd"), lstm("bwd"), conv("fuse"))
                           : conv_same(ops::concat_channels(outputs), conv("fuse"));
    return ops::add(fused, f0);
}

template <typename T>
Tensor<T> Model<T>::forward(const Tensor<T>& x) const {
    return upsampler(trunk(x), upsampler_params(), config_.scale);
}

template <typename T>
Tensor<T> Model<T>::infer(const Tensor<T>& x) const {
    NoGradGuard no_grad;
    return ops::clamp(forward(x), T(0), T(1));
}

template <typename To, typename From>
void copy_parameters(const Model<From>& src, Model<To>& dst) {
    if (src.config() != dst.config()) throw std::invalid_argument("copy_parameters: configs differ");
    auto& out = dst.parameters().entries();
    const auto& in = src.parameters().entries();
    for (std::size_t i = 0; i < out.size(); ++i) {
        auto values = out[i].value.mutable_data();
        auto from = in[i].value.data();
        for (std::size_t k = 0; k < values.size(); ++k) values[k] = static_cast<To>(from[k]);
    }
}

#define MSR_INSTANTIATE_LAYERS(T)                                                                       \
    template Tensor<T> conv_same(const Tensor<T>&, const ConvParams<T>&);                              \
    template Tensor<T> channel_attention(const Tensor<T>&, const ChannelAttentionParams<T>&);          \
    template Tensor<T> residual_block(const Tensor<T>&, const ResidualBlockParams<T>&, bool);          \
    template Tensor<T> residual_group(const Tensor<T>&, const ResidualGroupParams<T>&, bool);          \
    template ConvLstmState<T> convlstm_step(const Tensor<T>&, const ConvLstmState<T>&,                 \
                                            const ConvLstmParams<T>&);                                 \
    template Tensor<T> pyramid_convlstm(const std::vector<Tensor<T>>&, const ConvLstmParams<T>&,       \
                                        const ConvLstmParams<T>&, const ConvParams<T>&);               \
    template Tensor<T> lstmA(const Tensor<T>&, bool, const LstmAGateParams<T>*);                       \
    template Tensor<T> upsampler(const Tensor<T>&, const UpsamplerParams<T>&, int);                    \
    template class ParameterSet<T>;                                                                    \
    template class Model<T>;

MSR_INSTANTIATE_LAYERS(float)
MSR_INSTANTIATE_LAYERS(double)
#undef MSR_INSTANTIATE_LAYERS

template void copy_parameters(const Model<float>&, Model<double>&);
template void copy_parameters(const Model<double>&, Model<float>&);
template void copy_parameters(const Model<float>&, Model<float>&);
template void copy_parameters(const Model<double>&, Model<double>&);

}  // namespace msr
