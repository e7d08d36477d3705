#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "mosaic_sr/tensor.hpp"

namespace msr {

enum class BetweenRgAttention { none, lstmA, lstmA_no_sigmoid, ca_rcan };

std::string to_string(BetweenRgAttention a);
BetweenRgAttention parse_attention(const std::string& s);

/// Architecture hyperparameters and the switches that select the ablation
/// variants (RCAN, RCAN-, PyrRCAN, PyrRCAN + lstmA, ...).
struct ModelConfig {
    int n_rg = 5;
    int n_rb = 3;
    int width = 64;
    int ca_reduction = 16;
    int in_channels = 16;  // 1 mosaic, 16 zero-padded MS cube, 4 zero-padded Bayer cube
    int out_channels = 1;
    int scale = 3;
    bool use_ca_in_rb = true;
    bool use_pyramid_convlstm = true;
    BetweenRgAttention between_rg_attention = BetweenRgAttention::lstmA;
    bool lstmA_learned_gates = false;
    int lstm_hidden = 0;  // 0 means "same as width"

    int hidden() const { return lstm_hidden > 0 ? lstm_hidden : width; }

    /// Throws std::invalid_argument on a broken invariant.
    void validate() const;

    nlohmann::json to_json() const;
    /// Missing keys keep their defaults; unknown keys are rejected.
    static ModelConfig from_json(const nlohmann::json& j);

    /// Named ablation variants: rcan_minus, rcan, pyrrcan, pyrrcan_lstma,
    /// pyrrcan_lstma_gates, pyrrcan_minus_lstma, pyrrcan_minus_lstma_no_sigmoid,
    /// pyrrcan_minus_ca_rcan, pyrrcan_minus_no_convlstm.
    static ModelConfig preset(const std::string& name);
    static std::vector<std::string> preset_names();

    bool operator==(const ModelConfig&) const = default;
};

// ---------------------------------------------------------------------------
// Layer parameter views. Tensors are shared handles into a ParameterSet.

template <typename T>
struct ConvParams {
    Tensor<T> weight;  // (C_out, C_in, k, k)
    Tensor<T> bias;    // (1, C_out, 1, 1); may be undefined
};

template <typename T>
struct ChannelAttentionParams {
    ConvParams<T> down;  // 1x1, C -> C / reduction
    ConvParams<T> up;    // 1x1, C / reduction -> C
};

template <typename T>
struct ResidualBlockParams {
    ConvParams<T> conv1;
    ConvParams<T> conv2;
    ChannelAttentionParams<T> ca;  // ignored when the block runs without CA
};

template <typename T>
struct ResidualGroupParams {
    std::vector<ResidualBlockParams<T>> blocks;
    ConvParams<T> tail;
};

/// Gate order everywhere: input (i), forget (f), candidate (c), output (o).
template <typename T>
struct ConvLstmParams {
    std::array<Tensor<T>, 4> w_x;   // (hidden, C_in, 3, 3)
    std::array<Tensor<T>, 4> w_h;   // (hidden, hidden, 3, 3)
    std::array<Tensor<T>, 4> bias;  // (1, hidden, 1, 1)
    std::array<Tensor<T>, 3> w_c;   // peepholes for i, f, o: (1, hidden, 1, 1)
};

template <typename T>
struct ConvLstmState {
    Tensor<T> h;
    Tensor<T> c;
    /// Undefined tensors stand for the zero initial state.
    bool is_zero() const { return !h.defined(); }

    static ConvLstmState zeros(const Shape& shape) {
        return {Tensor<T>::zeros(shape), Tensor<T>::zeros(shape)};
    }
};

/// Optional learned transforms in front of the output, input and candidate
/// gates of lstmA.
template <typename T>
struct LstmAGateParams {
    ConvParams<T> o;
    ConvParams<T> i;
    ConvParams<T> g;
};

template <typename T>
struct UpsamplerParams {
    ConvParams<T> expand;  // C -> C * scale^2
    ConvParams<T> out;     // C -> out_channels
};

// ---------------------------------------------------------------------------
// Layers

/// Zero-padded "same" convolution (pad = k / 2, stride 1).
template <typename T>
Tensor<T> conv_same(const Tensor<T>& x, const ConvParams<T>& p);

/// y = x * sigmoid(up(relu(down(gap(x))))), gate broadcast over space.
template <typename T>
Tensor<T> channel_attention(const Tensor<T>& x, const ChannelAttentionParams<T>& p);

/// y = x + [CA](conv2(relu(conv1(x))))
template <typename T>
Tensor<T> residual_block(const Tensor<T>& x, const ResidualBlockParams<T>& p, bool use_ca);

/// y = x + tail(RB_n(...RB_1(x)))
template <typename T>
Tensor<T> residual_group(const Tensor<T>& x, const ResidualGroupParams<T>& p, bool use_ca);

/// One ConvLSTM step with peephole connections:
///   i = s(Wxi*X + Whi*H + Wci.C + bi)      f = s(Wxf*X + Whf*H + Wcf.C + bf)
///   C' = f.C + i.tanh(Wxc*X + Whc*H + bc)  o = s(Wxo*X + Who*H + Wco.C' + bo)
///   H' = o.tanh(C')
/// Terms that multiply a zero initial state are skipped.
template <typename T>
ConvLstmState<T> convlstm_step(const Tensor<T>& x, const ConvLstmState<T>& state,
                               const ConvLstmParams<T>& p);

/// Runs `forward` over features[0..n) and `backward` over features[n..0),
/// concatenates all 2n hidden outputs (forward steps first, backward outputs
/// aligned to feature order) and reduces them with `fuse`.
template <typename T>
Tensor<T> pyramid_convlstm(const std::vector<Tensor<T>>& features, const ConvLstmParams<T>& forward,
                           const ConvLstmParams<T>& backward, const ConvParams<T>& fuse);

/// LSTM-inspired gating sigma(x) . tanh(sigma(x) . tanh(x)); without the
/// sigmoid the gates pass x through unchanged. `gates` may be null.
template <typename T>
Tensor<T> lstmA(const Tensor<T>& x, bool with_sigmoid, const LstmAGateParams<T>* gates = nullptr);

/// expand conv -> pixel_shuffle(scale) -> output conv.
template <typename T>
Tensor<T> upsampler(const Tensor<T>& x, const UpsamplerParams<T>& p, int scale);

// ---------------------------------------------------------------------------
// Parameters and the assembled network

enum class ParamRole { weight, bias, peephole };

template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    ParamRole role;
};

/// Ordered, uniquely named parameter collection.
template <typename T>
class ParameterSet {
public:
    Tensor<T>& add(const std::string& name, Shape shape, ParamRole role);
    const Tensor<T>& get(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) > 0; }

    std::vector<Parameter<T>>& entries() { return entries_; }
    const std::vector<Parameter<T>>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    std::size_t element_count() const;
    void zero_grad();

private:
    std::vector<Parameter<T>> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

template <typename T>
class Model {
public:
    explicit Model(ModelConfig config);

    const ModelConfig& config() const { return config_; }
    ParameterSet<T>& parameters() { return params_; }
    const ParameterSet<T>& parameters() const { return params_; }

    /// Kaiming-uniform fan-in init (bound 1/sqrt(fan_in)) for conv weights;
    /// biases and peepholes start at zero. Deterministic in `seed`.
    void init_weights(std::uint64_t seed);

    /// Head, residual groups, fusion and the global skip: everything before
    /// the upsampler.
    Tensor<T> trunk(const Tensor<T>& x) const;

    /// Training forward pass; output is unclamped.
    Tensor<T> forward(const Tensor<T>& x) const;

    /// Inference: no graph recording, output clamped to [0, 1].
    Tensor<T> infer(const Tensor<T>& x) const;

    // Parameter views, exposed for layer-level tests.
    ConvParams<T> conv(const std::string& prefix, bool with_bias = true) const;
    ResidualGroupParams<T> group(int index) const;
    ChannelAttentionParams<T> attention_ca(int index) const;
    LstmAGateParams<T> attention_gates(int index) const;
    ConvLstmParams<T> lstm(const std::string& direction) const;
    UpsamplerParams<T> upsampler_params() const;

    /// Applies the configured between-RG attention to the output of group i.
    Tensor<T> between_rg(const Tensor<T>& x, int index) const;

private:
    void register_conv(const std::string& prefix, int c_out, int c_in, int k, bool with_bias = true);
    void register_ca(const std::string& prefix, int channels);
    void register_lstm(const std::string& prefix, int c_in, int hidden);

    ModelConfig config_;
    ParameterSet<T> params_;
};

extern template class Model<float>;
extern template class Model<double>;

/// Copies parameter values between models of identical configuration.
template <typename To, typename From>
void copy_parameters(const Model<From>& src, Model<To>& dst);

}  // namespace msr
