#include "mosaic_sr/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "mosaic_sr/loss.hpp"
#include "mosaic_sr/metrics.hpp"
#include "mosaic_sr/ops.hpp"

namespace msr {

void TrainConfig::validate() const {
    auto positive = [](const char* name, double v) {
        if (!(v > 0)) throw std::invalid_argument(std::string("train config: ") + name + " must be positive");
    };
    positive("batch_size", batch_size);
    positive("crop_lr", crop_lr);
    positive("lr0", lr0);
    positive("halve_every", halve_every);
    positive("eps", eps);
    positive("epochs", epochs);
    positive("val_every", val_every);
    if (!(beta1 > 0 && beta1 < 1) || !(beta2 > 0 && beta2 < 1)) {
        throw std::invalid_argument("train config: beta1 and beta2 must lie in (0, 1)");
    }
    if (loss != "smooth_l1") throw std::invalid_argument("train config: unsupported loss '" + loss + "'");
}

nlohmann::json TrainConfig::to_json() const {
    return {{"batch_size", batch_size}, {"crop_lr", crop_lr}, {"lr0", lr0},     {"halve_every", halve_every},
            {"beta1", beta1},           {"beta2", beta2},     {"eps", eps},     {"epochs", epochs},
            {"seed", seed},             {"val_every", val_every}, {"loss", loss}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw std::invalid_argument("train config must be a JSON object");
    TrainConfig c;
    for (const auto& [key, value] : j.items()) {
        if (key == "batch_size") c.batch_size = value.get<int>();
        else if (key == "crop_lr") c.crop_lr = value.get<int>();
        else if (key == "lr0") c.lr0 = value.get<double>();
        else if (key == "halve_every") c.halve_every = value.get<int>();
        else if (key == "beta1") c.beta1 = value.get<double>();
        else if (key == "beta2") c.beta2 = value.get<double>();
        else if (key == "eps") c.eps = value.get<double>();
        else if (key == "epochs") c.epochs = value.get<int>();
        else if (key == "seed") c.seed = value.get<std::uint64_t>();
        else if (key == "val_every") c.val_every = value.get<int>();
        else if (key == "loss") c.loss = value.get<std::string>();
        else throw std::invalid_argument("train config: unknown key '" + key + "'");
    }
    c.validate();
    return c;
}

double lr_at(int epoch, const TrainConfig& cfg) {
    if (epoch < 0) throw std::invalid_argument("lr_at: negative epoch");
    return std::ldexp(cfg.lr0, -(epoch / cfg.halve_every));
}

template <typename T>
AdamState<T> AdamState<T>::zeros(const ParameterSet<T>& params) {
    AdamState s;
    for (const auto& p : params.entries()) {
        s.m.emplace_back(p.value.numel(), T(0));
        s.v.emplace_back(p.value.numel(), T(0));
    }
    return s;
}

template <typename T>
void adam_step(ParameterSet<T>& params, AdamState<T>& state, double lr, const TrainConfig& cfg) {
    auto& entries = params.entries();
    if (state.m.size() != entries.size() || state.v.size() != entries.size()) {
        throw std::invalid_argument("adam_step: optimizer state holds " + std::to_string(state.m.size()) +
                                    " tensors for " + std::to_string(entries.size()) + " parameters");
    }
    ++state.t;
    const double b1 = cfg.beta1, b2 = cfg.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
    for (std::size_t k = 0; k < entries.size(); ++k) {
        auto& p = entries[k].value;
        auto& m = state.m[k];
        auto& v = state.v[k];
        if (m.size() != p.numel() || v.size() != p.numel()) {
            throw std::invalid_argument("adam_step: state shape mismatch for " + entries[k].name);
        }
        const auto g = p.grad();
        auto w = p.mutable_data();
        for (std::size_t i = 0; i < m.size(); ++i) {
            const double gi = g.empty() ? 0.0 : static_cast<double>(g[i]);
            const double mi = b1 * m[i] + (1.0 - b1) * gi;
            const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            w[i] = static_cast<T>(w[i] - lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.eps));
        }
    }
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step(ParameterSet<float>&, AdamState<float>&, double, const TrainConfig&);
template void adam_step(ParameterSet<double>&, AdamState<double>&, double, const TrainConfig&);

// ---------------------------------------------------------------------------

TrainData load_train_data(const DatasetManifest& manifest) {
    TrainData d;
    d.pattern = manifest.pattern;
    d.input_format = manifest.input_format;
    d.scale = manifest.scale;
    d.train = load_pairs(manifest, "train");
    d.val = load_pairs(manifest, "val");
    return d;
}

MosaicImage super_resolve(const Model<float>& model, const MosaicImage& lr, InputFormat format) {
    auto y = model.infer(to_network_input(lr, format));
    return make_mosaic(y, lr.pattern);
}

double mean_psnr(const Model<float>& model, const std::vector<MosaicPair>& pairs, InputFormat format) {
    if (pairs.empty()) throw std::invalid_argument("mean_psnr: no pairs");
    double total = 0.0;
    for (const auto& p : pairs) {
        const auto pred = super_resolve(model, p.lr, format);
        total += psnr(pred.data, p.hr.data, 1.0, p.hr.pattern.live_mask(p.hr.height(), p.hr.width()));
    }
    return total / static_cast<double>(pairs.size());
}

namespace {

struct Batch {
    Tensor<float> input;
    Tensor<float> target;
    Tensor<float> mask;
};

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::mt19937_64 rng(sample_seed(seed, static_cast<std::uint64_t>(epoch), ~std::uint64_t{0}));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    return order;
}

Batch make_batch(const TrainData& data, const TrainConfig& cfg, const std::vector<std::size_t>& order, int epoch,
                 int batch) {
    const std::size_t begin = static_cast<std::size_t>(batch) * cfg.batch_size;
    const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
    std::vector<Tensor<float>> inputs, targets, masks;
    for (std::size_t k = begin; k < end; ++k) {
        const auto& pair = data.train[order[k]];
        std::mt19937_64 rng(sample_seed(cfg.seed, static_cast<std::uint64_t>(epoch), k));
        const auto plan = plan_augment(pair.lr.height(), pair.lr.width(), cfg.crop_lr, data.pattern.tile_h, rng);
        const auto crop = apply_augment(pair, plan, cfg.crop_lr, data.scale);
        inputs.push_back(to_network_input(crop.lr, data.input_format));
        targets.push_back(crop.hr.data);
        masks.push_back(data.pattern.live_mask(crop.hr.height(), crop.hr.width()));
    }
    return {ops::stack_batch(inputs), ops::stack_batch(targets), ops::stack_batch(masks)};
}

[[noreturn]] void report_non_finite(const Model<float>& model, double loss, std::int64_t step) {
    for (const auto& p : model.parameters().entries()) {
        for (float v : p.value.data())
            if (!std::isfinite(v)) throw TrainingError("non-finite value in parameter " + p.name);
    }
    for (const auto& p : model.parameters().entries()) {
        for (float v : p.value.grad())
            if (!std::isfinite(v)) throw TrainingError("non-finite gradient in parameter " + p.name);
    }
    throw TrainingError("loss became " + std::to_string(loss) + " at step " + std::to_string(step) +
                        " with finite parameters");
}

nlohmann::json number_or_null(double v) {
    if (std::isfinite(v)) return v;
    return nullptr;
}

void check_resume_config(const Checkpoint& ckpt, const Model<float>& model, const TrainConfig& cfg) {
    if (checkpoint_model_config(ckpt) != model.config()) {
        throw std::invalid_argument("resume: checkpoint model config " + ckpt.meta.at("model").dump() +
                                    " differs from " + model.config().to_json().dump());
    }
    if (!ckpt.meta.contains("train")) throw std::invalid_argument("resume: checkpoint has no training state");
    auto stored = ckpt.meta.at("train");
    auto wanted = cfg.to_json();
    for (const char* free_key : {"epochs", "val_every"}) {
        stored.erase(free_key);
        wanted.erase(free_key);
    }
    if (stored != wanted) {
        throw std::invalid_argument("resume: training config " + wanted.dump() + " differs from checkpoint " +
                                    stored.dump());
    }
}

}  // namespace

TrainResult train(Model<float>& model, const TrainData& data, const TrainConfig& cfg, const TrainOptions& options) {
    cfg.validate();
    if (data.train.empty()) throw std::invalid_argument("train: the training split is empty");
    const int expected_channels = input_channels(data.pattern, data.input_format);
    if (model.config().in_channels != expected_channels) {
        throw std::invalid_argument("train: model expects " + std::to_string(model.config().in_channels) +
                                    " input channels but " + to_string(data.input_format) + " on " +
                                    data.pattern.name + " gives " + std::to_string(expected_channels));
    }
    if (model.config().scale != data.scale) {
        throw std::invalid_argument("train: model scale " + std::to_string(model.config().scale) +
                                    " differs from data scale " + std::to_string(data.scale));
    }

    AdamState<float> adam;
    TrainProgress progress;
    if (!options.resume_path.empty()) {
        const auto ckpt = load_checkpoint(options.resume_path);
        check_resume_config(ckpt, model, cfg);
        restore_checkpoint(ckpt, model, &adam, &progress);
    } else {
        model.init_weights(cfg.seed);
        adam = AdamState<float>::zeros(model.parameters());
    }

    const auto meta = data_meta(data.pattern, data.input_format, data.scale);
    const std::string last_path = options.out_path.empty() ? std::string() : options.out_path + ".last";
    auto save = [&](const std::string& path) {
        if (!path.empty()) save_checkpoint(make_checkpoint(model, &adam, &cfg, progress, meta), path);
    };

    const int n_batches = static_cast<int>((data.train.size() + cfg.batch_size - 1) / cfg.batch_size);
    TrainResult result;
    result.best_val_psnr = progress.best_val_psnr;
    bool first_step = true;

    while (progress.epoch < cfg.epochs) {
        const int epoch = progress.epoch;
        const double lr = lr_at(epoch, cfg);
        const auto order = epoch_order(data.train.size(), cfg.seed, epoch);
        for (int b = progress.next_batch; b < n_batches; ++b) {
            const auto batch = make_batch(data, cfg, order, epoch, b);
            model.parameters().zero_grad();
            auto loss = smooth_l1(model.forward(batch.input), batch.target, batch.mask);
            loss.backward();
            const double value = loss.item();
            if (!std::isfinite(value)) report_non_finite(model, value, adam.t);
            adam_step(model.parameters(), adam, lr, cfg);

            if (std::isnan(progress.initial_loss)) progress.initial_loss = value;
            if (first_step) result.initial_loss = value;
            first_step = false;
            result.final_loss = value;
            result.step_losses.push_back(value);
            ++result.steps;
            progress.epoch_loss_sum += value;
            progress.next_batch = b + 1;

            const bool stop = (options.stop_requested && options.stop_requested()) ||
                              (options.max_steps > 0 && result.steps >= options.max_steps);
            if (stop && progress.next_batch < n_batches) {
                save(last_path);
                result.interrupted = true;
                return result;
            }
            if (stop) result.interrupted = true;
        }

        const double epoch_loss = progress.epoch_loss_sum / n_batches;
        progress.epoch = epoch + 1;
        progress.next_batch = 0;
        progress.epoch_loss_sum = 0.0;
        ++result.epochs_completed;

        double val = std::numeric_limits<double>::quiet_NaN();
        const bool validate_now = !data.val.empty() && (progress.epoch % cfg.val_every == 0 || progress.epoch == cfg.epochs);
        if (validate_now) {
            val = mean_psnr(model, data.val, data.input_format);
            if (val > progress.best_val_psnr) {
                progress.best_val_psnr = val;
                result.best_val_psnr = val;
                save(options.out_path);
            }
        }
        if (options.log) {
            nlohmann::json line = {{"epoch", epoch}, {"loss", epoch_loss}, {"lr", lr},
                                   {"val_psnr", number_or_null(val)}, {"step", adam.t}};
            *options.log << line.dump() << '\n' << std::flush;
        }
        save(last_path);
        if (result.interrupted) return result;
    }
    if (data.val.empty()) save(options.out_path);
    return result;
}

}  // namespace msr
