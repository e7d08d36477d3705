#include <cmath>
#include <fstream>
#include <limits>

#include "binio.hpp"
#include "mosaic_sr/training.hpp"

namespace msr {

namespace {

constexpr char kMagic[4] = {'M', 'S', 'R', 'K'};
constexpr std::uint16_t kVersion = 1;
const std::string kAdamM = "adam.m.";
const std::string kAdamV = "adam.v.";

NamedTensor named(const std::string& name, const Tensor<float>& t) {
    return {name, t.shape(), std::vector<float>(t.data().begin(), t.data().end())};
}

NamedTensor named(const std::string& name, const Shape& shape, const std::vector<float>& v) {
    return {name, shape, v};
}

nlohmann::json finite_or_null(double v) {
    if (std::isfinite(v)) return v;
    return nullptr;
}

const NamedTensor& require(const Checkpoint& ckpt, const std::string& name, const Shape& shape) {
    const auto* t = ckpt.find(name);
    if (!t) throw std::runtime_error("checkpoint is missing tensor " + name);
    if (t->shape != shape) {
        throw std::runtime_error("checkpoint tensor " + name + " has shape " + t->shape.str() + ", model expects " +
                                 shape.str());
    }
    return *t;
}

}  // namespace

const NamedTensor* Checkpoint::find(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return &t;
    return nullptr;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    const std::string meta = ckpt.meta.dump();
    out.write(kMagic, 4);
    binio::put<std::uint16_t>(out, kVersion);
    binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(meta.size()));
    out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& t : ckpt.tensors) {
        if (t.values.size() != t.shape.numel()) {
            throw std::invalid_argument("checkpoint tensor " + t.name + ": value count does not match shape");
        }
        binio::put<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
        out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        binio::put<std::uint8_t>(out, 4);
        for (int d : {t.shape.n, t.shape.c, t.shape.h, t.shape.w}) binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        binio::put_f32_array(out, t.values.data(), t.values.size());
    }
    if (!out) throw std::runtime_error("failed writing " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    char magic[4];
    if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kMagic)) throw std::runtime_error(path + ": bad magic");
    const auto version = binio::get<std::uint16_t>(in, "version");
    if (version != kVersion) throw std::runtime_error(path + ": unsupported version " + std::to_string(version));
    Checkpoint ckpt;
    const auto meta_len = binio::get<std::uint32_t>(in, "config length");
    std::string meta(meta_len, '\0');
    if (!in.read(meta.data(), meta_len)) throw std::runtime_error(path + ": truncated config");
    try {
        ckpt.meta = nlohmann::json::parse(meta);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path + ": invalid config JSON: " + e.what());
    }
    const auto count = binio::get<std::uint32_t>(in, "entry count");
    for (std::uint32_t k = 0; k < count; ++k) {
        NamedTensor t;
        const auto name_len = binio::get<std::uint16_t>(in, "name length");
        t.name.assign(name_len, '\0');
        if (!in.read(t.name.data(), name_len)) throw std::runtime_error(path + ": truncated entry name");
        const auto rank = binio::get<std::uint8_t>(in, "rank");
        if (rank > 4) throw std::runtime_error(path + ": tensor " + t.name + " has rank " + std::to_string(rank));
        int dims[4] = {1, 1, 1, 1};
        for (int d = 4 - rank; d < 4; ++d) dims[d] = static_cast<int>(binio::get<std::uint32_t>(in, "dims"));
        t.shape = Shape{dims[0], dims[1], dims[2], dims[3]};
        t.values.resize(t.shape.numel());
        binio::get_f32_array(in, t.values.data(), t.values.size(), path + ": tensor " + t.name);
        ckpt.tensors.push_back(std::move(t));
    }
    if (in.peek() != std::char_traits<char>::eof()) throw std::runtime_error(path + ": trailing bytes");
    return ckpt;
}

nlohmann::json data_meta(const MosaicPattern& pattern, InputFormat format, int scale) {
    return {{"pattern", pattern.name},
            {"cell_map", pattern.cell_map_json()},
            {"input_format", to_string(format)},
            {"scale", scale}};
}

Checkpoint make_checkpoint(const Model<float>& model, const AdamState<float>* adam, const TrainConfig* train,
                           const TrainProgress& progress, const nlohmann::json& data) {
    Checkpoint c;
    c.meta["model"] = model.config().to_json();
    if (train) c.meta["train"] = train->to_json();
    if (!data.is_null()) c.meta["data"] = data;
    c.meta["epoch"] = progress.epoch;
    c.meta["next_batch"] = progress.next_batch;
    c.meta["epoch_loss_sum"] = progress.epoch_loss_sum;
    c.meta["best_val_psnr"] = finite_or_null(progress.best_val_psnr);
    c.meta["initial_loss"] = finite_or_null(progress.initial_loss);
    const auto& entries = model.parameters().entries();
    for (const auto& p : entries) c.tensors.push_back(named(p.name, p.value));
    if (adam) {
        c.meta["adam_t"] = adam->t;
        for (std::size_t k = 0; k < entries.size(); ++k)
            c.tensors.push_back(named(kAdamM + entries[k].name, entries[k].value.shape(), adam->m.at(k)));
        for (std::size_t k = 0; k < entries.size(); ++k)
            c.tensors.push_back(named(kAdamV + entries[k].name, entries[k].value.shape(), adam->v.at(k)));
    }
    return c;
}

ModelConfig checkpoint_model_config(const Checkpoint& ckpt) {
    if (!ckpt.meta.contains("model")) throw std::runtime_error("checkpoint has no model config");
    return ModelConfig::from_json(ckpt.meta.at("model"));
}

void restore_checkpoint(const Checkpoint& ckpt, Model<float>& model, AdamState<float>* adam,
                        TrainProgress* progress) {
    auto& entries = model.parameters().entries();
    for (const auto& t : ckpt.tensors) {
        if (t.name.starts_with("adam.")) continue;
        if (!model.parameters().contains(t.name)) throw std::runtime_error("checkpoint tensor " + t.name + " is not a model parameter");
    }
    for (auto& p : entries) {
        const auto& t = require(ckpt, p.name, p.value.shape());
        std::copy(t.values.begin(), t.values.end(), p.value.mutable_data().begin());
    }
    if (adam) {
        if (!ckpt.meta.contains("adam_t")) throw std::runtime_error("checkpoint has no optimizer state");
        *adam = AdamState<float>::zeros(model.parameters());
        adam->t = ckpt.meta.at("adam_t").get<std::int64_t>();
        for (std::size_t k = 0; k < entries.size(); ++k) {
            adam->m[k] = require(ckpt, kAdamM + entries[k].name, entries[k].value.shape()).values;
            adam->v[k] = require(ckpt, kAdamV + entries[k].name, entries[k].value.shape()).values;
        }
    }
    if (progress) {
        const auto& m = ckpt.meta;
        auto number = [&](const char* key, double fallback) {
            return m.contains(key) && m.at(key).is_number() ? m.at(key).get<double>() : fallback;
        };
        progress->epoch = m.value("epoch", 0);
        progress->next_batch = m.value("next_batch", 0);
        progress->epoch_loss_sum = number("epoch_loss_sum", 0.0);
        progress->best_val_psnr = number("best_val_psnr", -std::numeric_limits<double>::infinity());
        progress->initial_loss = number("initial_loss", std::numeric_limits<double>::quiet_NaN());
    }
}

Model<float> load_model(const Checkpoint& ckpt) {
    Model<float> model(checkpoint_model_config(ckpt));
    restore_checkpoint(ckpt, model);
    return model;
}

MosaicPattern checkpoint_pattern(const Checkpoint& ckpt) {
    if (ckpt.meta.contains("data")) {
        const auto& d = ckpt.meta.at("data");
        return MosaicPattern::from_name(d.at("pattern").get<std::string>(), d.value("cell_map", nlohmann::json()));
    }
    return checkpoint_model_config(ckpt).in_channels == 4 ? MosaicPattern::bayer() : MosaicPattern::ms4x4();
}

InputFormat checkpoint_input_format(const Checkpoint& ckpt) {
    if (ckpt.meta.contains("data")) return parse_input_format(ckpt.meta.at("data").at("input_format").get<std::string>());
    return checkpoint_model_config(ckpt).in_channels == 1 ? InputFormat::mosaic : InputFormat::zero_padded_cube;
}

}  // namespace msr
