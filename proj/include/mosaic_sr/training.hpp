#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mosaic_sr/model.hpp"
#include "mosaic_sr/mosaic.hpp"

namespace msr {

struct TrainConfig {
    int batch_size = 16;
    int crop_lr = 60;
    double lr0 = 1e-4;
    int halve_every = 2500;  // epochs
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int epochs = 5000;
    std::uint64_t seed = 0;
    int val_every = 1;  // epochs between validation passes
    std::string loss = "smooth_l1";

    void validate() const;
    nlohmann::json to_json() const;
    /// Missing keys keep their defaults; unknown keys are rejected.
    static TrainConfig from_json(const nlohmann::json& j);

    bool operator==(const TrainConfig&) const = default;
};

/// lr0 * 0.5^floor(epoch / halve_every)
double lr_at(int epoch, const TrainConfig& cfg);

/// First and second moments in parameter order, plus the step counter.
template <typename T>
struct AdamState {
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
    std::int64_t t = 0;

    static AdamState zeros(const ParameterSet<T>& params);
};

/// One bias-corrected Adam update from the accumulated gradients. Parameters
/// without a gradient are treated as having a zero gradient.
template <typename T>
void adam_step(ParameterSet<T>& params, AdamState<T>& state, double lr, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Checkpoints

struct NamedTensor {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

/// Model configuration, parameters, optimizer moments (stored under the
/// "adam.m." and "adam.v." prefixes) and training progress.
struct Checkpoint {
    nlohmann::json meta = nlohmann::json::object();  // config JSON block of the container
    std::vector<NamedTensor> tensors;

    const NamedTensor* find(const std::string& name) const;
};

/// "MSRK" container: magic, u16 version, u32 JSON length + bytes, u32 entry
/// count, then per entry u16 name length + bytes, u8 rank, u32 dims, and
/// little-endian float32 values.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Training progress carried in the checkpoint metadata.
struct TrainProgress {
    int epoch = 0;       // completed epochs
    int next_batch = 0;  // batches already run in the current epoch
    double epoch_loss_sum = 0.0;
    double best_val_psnr = -std::numeric_limits<double>::infinity();
    double initial_loss = std::numeric_limits<double>::quiet_NaN();
};

/// Data description stored alongside the model: pattern, input format, scale.
nlohmann::json data_meta(const MosaicPattern& pattern, InputFormat format, int scale);

Checkpoint make_checkpoint(const Model<float>& model, const AdamState<float>* adam, const TrainConfig* train,
                           const TrainProgress& progress, const nlohmann::json& data = nullptr);

/// Model configuration stored in a checkpoint.
ModelConfig checkpoint_model_config(const Checkpoint& ckpt);

/// Copies parameters (and moments when `adam` is given) into an existing
/// model. Throws std::runtime_error naming the first missing or misshapen
/// tensor.
void restore_checkpoint(const Checkpoint& ckpt, Model<float>& model, AdamState<float>* adam = nullptr,
                        TrainProgress* progress = nullptr);

/// Builds a model from the checkpoint configuration and loads its weights.
Model<float> load_model(const Checkpoint& ckpt);

/// Pattern and input format recorded by the trainer; defaults to the MS
/// pattern with the input format implied by the model's input channels.
MosaicPattern checkpoint_pattern(const Checkpoint& ckpt);
InputFormat checkpoint_input_format(const Checkpoint& ckpt);

// ---------------------------------------------------------------------------
// Training loop

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainData {
    MosaicPattern pattern;
    InputFormat input_format = InputFormat::zero_padded_cube;
    int scale = 3;
    std::vector<MosaicPair> train;
    std::vector<MosaicPair> val;
};

TrainData load_train_data(const DatasetManifest& manifest);

struct TrainOptions {
    std::string out_path;     // best checkpoint; "<out>.last" holds the latest state. Empty: no files.
    std::string resume_path;  // checkpoint to continue from
    std::ostream* log = nullptr;  // JSON lines {epoch, loss, lr, val_psnr}
    std::function<bool()> stop_requested;  // polled after every step
    int max_steps = 0;  // stop after this many steps in this call (0: no limit)
};

struct TrainResult {
    int epochs_completed = 0;
    std::int64_t steps = 0;  // optimizer steps in this call
    double initial_loss = 0.0;  // first batch loss of the run
    double final_loss = 0.0;    // last batch loss
    double best_val_psnr = -std::numeric_limits<double>::infinity();
    bool interrupted = false;
    std::vector<double> step_losses;
};

/// Batched, augmented training with Adam and the halving schedule. Weights
/// are initialised from cfg.seed unless resuming. The DEAD cells of the
/// pattern are masked out of the loss. Deterministic given (data, cfg).
TrainResult train(Model<float>& model, const TrainData& data, const TrainConfig& cfg, const TrainOptions& options = {});

/// Mean PSNR of clamped model output against HR over a set of pairs.
double mean_psnr(const Model<float>& model, const std::vector<MosaicPair>& pairs, InputFormat format);

/// Super-resolves one LR mosaic; dead cells of the output are zeroed.
MosaicImage super_resolve(const Model<float>& model, const MosaicImage& lr, InputFormat format);

}  // namespace msr
