#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "mosaic_sr/loss.hpp"
#include "mosaic_sr/training.hpp"
#include "test_util.hpp"

using namespace msr;
using msr::testing::slurp;
using msr::testing::TempDir;

namespace {

double loss_at(double dif) {
    Tensor<double> pred(Shape{1, 1, 1, 1}, {0.0});
    Tensor<double> gt(Shape{1, 1, 1, 1}, {dif});
    return smooth_l1(pred, gt).item();
}

// d loss / d pred, taken from the backward pass.
double slope_at(double dif) {
    Tensor<double> pred(Shape{1, 1, 1, 1}, {0.0});
    pred.set_requires_grad(true);
    Tensor<double> gt(Shape{1, 1, 1, 1}, {dif});
    smooth_l1(pred, gt).backward();
    return pred.grad()[0];
}

ModelConfig tiny_config() {
    auto c = ModelConfig::preset("pyrrcan_lstma");
    c.width = 8;
    c.n_rg = 2;
    c.n_rb = 1;
    c.ca_reduction = 4;
    return c;
}

TrainData tiny_data(int n_train, int n_val = 0) {
    TrainData d;
    d.pattern = MosaicPattern::ms4x4();
    for (int i = 0; i < n_train + n_val; ++i) {
        auto pair = generate_pair(render_scene(48, 48, d.pattern, 100 + i));
        (i < n_train ? d.train : d.val).push_back(pair);
    }
    return d;
}

TrainConfig tiny_train() {
    TrainConfig c;
    c.batch_size = 2;
    c.crop_lr = 8;
    c.lr0 = 1e-3;
    c.halve_every = 2;
    c.epochs = 3;
    c.seed = 7;
    return c;
}

bool same_parameters(const Model<float>& a, const Model<float>& b) {
    const auto& pa = a.parameters().entries();
    const auto& pb = b.parameters().entries();
    if (pa.size() != pb.size()) return false;
    for (std::size_t k = 0; k < pa.size(); ++k) {
        const auto x = pa[k].value.data(), y = pb[k].value.data();
        if (!std::equal(x.begin(), x.end(), y.begin(), y.end())) return false;
    }
    return true;
}

}  // namespace

TEST(SmoothL1, SingleElementValues) {
    EXPECT_EQ(loss_at(0.0), 0.0);
    EXPECT_EQ(loss_at(0.5), 0.125);
    EXPECT_EQ(loss_at(2.0), 1.5);
    EXPECT_EQ(loss_at(-2.0), 1.5);
}

TEST(SmoothL1, ContinuousWithContinuousSlopeAtOne) {
    for (double sign : {1.0, -1.0}) {
        const double below = sign * (1.0 - 1e-10), above = sign * (1.0 + 1e-10);
        EXPECT_NEAR(loss_at(below), 0.5, 1e-9);
        EXPECT_NEAR(loss_at(above), 0.5, 1e-9);
        EXPECT_NEAR(slope_at(below), slope_at(above), 1e-9);
        EXPECT_NEAR(slope_at(above), -sign, 1e-9);
    }
}

TEST(SmoothL1, MaskedMeanAndErrors) {
    Tensor<double> pred(Shape{1, 1, 1, 3}, {0.0, 0.0, 0.0});
    Tensor<double> gt(Shape{1, 1, 1, 3}, {0.5, 2.0, 9.0});
    Tensor<double> mask(Shape{1, 1, 1, 3}, {1.0, 1.0, 0.0});
    EXPECT_DOUBLE_EQ(smooth_l1(pred, gt, mask).item(), (0.125 + 1.5) / 2);
    EXPECT_GE(smooth_l1(pred, gt).item(), 0.0);
    EXPECT_THROW(smooth_l1(pred, Tensor<double>::zeros(Shape{1, 1, 1, 2})), DimensionError);
    EXPECT_THROW(smooth_l1(pred, gt, Tensor<double>::zeros(Shape{1, 1, 1, 3})), std::invalid_argument);
}

TEST(Schedule, HalvesWithFloorSemantics) {
    TrainConfig c;
    EXPECT_EQ(lr_at(0, c), 1e-4);
    EXPECT_EQ(lr_at(2499, c), 1e-4);
    EXPECT_EQ(lr_at(2500, c), 5e-5);
    EXPECT_EQ(lr_at(4999, c), 5e-5);
    EXPECT_EQ(lr_at(5000, c), 2.5e-5);
    for (int e = 1; e < 20000; e += 97) EXPECT_LE(lr_at(e, c), lr_at(e - 1, c));
    EXPECT_THROW(lr_at(-1, c), std::invalid_argument);
}

TEST(TrainConfig, JsonRoundTripAndValidation) {
    auto c = tiny_train();
    EXPECT_EQ(TrainConfig::from_json(c.to_json()), c);
    EXPECT_EQ(TrainConfig::from_json(nlohmann::json::object()), TrainConfig{});
    EXPECT_THROW(TrainConfig::from_json({{"batch", 3}}), std::invalid_argument);
    EXPECT_THROW(TrainConfig::from_json({{"beta1", 1.0}}), std::invalid_argument);
    EXPECT_THROW(TrainConfig::from_json({{"lr0", 0.0}}), std::invalid_argument);
}

TEST(Adam, ZeroGradientLeavesParametersAndMomentsAlone) {
    Model<float> model(tiny_config());
    model.init_weights(1);
    Model<float> before(tiny_config());
    before.init_weights(1);
    auto state = AdamState<float>::zeros(model.parameters());
    for (auto& p : model.parameters().entries()) std::fill(p.value.mutable_grad().begin(), p.value.mutable_grad().end(), 0.f);
    adam_step(model.parameters(), state, 1e-3, TrainConfig{});
    EXPECT_TRUE(same_parameters(model, before));
    EXPECT_EQ(state.t, 1);
    for (const auto& m : state.m)
        for (float v : m) EXPECT_EQ(v, 0.f);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    ParameterSet<double> ps;
    auto& w = ps.add("w", Shape{1, 1, 1, 1}, ParamRole::weight);
    w.mutable_data()[0] = 0.5;
    w.mutable_grad()[0] = 1.0;
    auto state = AdamState<double>::zeros(ps);
    TrainConfig c;
    adam_step(ps, state, 1e-3, c);
    EXPECT_NEAR(ps.get("w").data()[0], 0.5 - 1e-3, 1e-3 * c.eps * 1.01);
    EXPECT_NEAR(state.m[0][0], 0.1, 1e-15);
    EXPECT_NEAR(state.v[0][0], 1e-3, 1e-15);

    // Constant gradient: bias correction keeps every step at lr.
    for (int t = 2; t <= 10; ++t) {
        const double before = ps.get("w").data()[0];
        adam_step(ps, state, 1e-3, c);
        EXPECT_NEAR(before - ps.get("w").data()[0], 1e-3, 1e-10);
    }
}

TEST(Adam, StateMismatchThrows) {
    ParameterSet<double> ps;
    ps.add("w", Shape{1, 1, 1, 2}, ParamRole::weight);
    AdamState<double> empty;
    EXPECT_THROW(adam_step(ps, empty, 1e-3, TrainConfig{}), std::invalid_argument);
    auto state = AdamState<double>::zeros(ps);
    state.m[0].resize(3);
    EXPECT_THROW(adam_step(ps, state, 1e-3, TrainConfig{}), std::invalid_argument);
}

TEST(Checkpoint, RoundTripIsBitExact) {
    TempDir dir;
    Model<float> model(tiny_config());
    model.init_weights(3);
    auto adam = AdamState<float>::zeros(model.parameters());
    adam.t = 17;
    adam.m[0][0] = 0.25f;
    adam.v[1][0] = std::numeric_limits<float>::denorm_min();
    TrainProgress progress;
    progress.epoch = 4;
    progress.best_val_psnr = 31.5;
    const auto cfg = tiny_train();
    const auto ckpt = make_checkpoint(model, &adam, &cfg, progress, data_meta(MosaicPattern::ms4x4(), InputFormat::zero_padded_cube, 3));
    save_checkpoint(ckpt, dir.file("a.msrk"));
    const auto back = load_checkpoint(dir.file("a.msrk"));
    EXPECT_EQ(back.meta, ckpt.meta);
    save_checkpoint(back, dir.file("b.msrk"));
    EXPECT_EQ(slurp(dir.file("a.msrk")), slurp(dir.file("b.msrk")));

    Model<float> loaded(tiny_config());
    AdamState<float> adam_back;
    TrainProgress progress_back;
    restore_checkpoint(back, loaded, &adam_back, &progress_back);
    EXPECT_TRUE(same_parameters(model, loaded));
    EXPECT_EQ(adam_back.t, 17);
    EXPECT_EQ(adam_back.m, adam.m);
    EXPECT_EQ(adam_back.v, adam.v);
    EXPECT_EQ(progress_back.epoch, 4);
    EXPECT_EQ(progress_back.best_val_psnr, 31.5);
    EXPECT_TRUE(back.find("adam.m.head.weight"));
    EXPECT_EQ(checkpoint_pattern(back), MosaicPattern::ms4x4());
    EXPECT_EQ(checkpoint_input_format(back), InputFormat::zero_padded_cube);
    EXPECT_TRUE(same_parameters(load_model(back), model));
}

TEST(Checkpoint, EmptyIsHeaderOnly) {
    TempDir dir;
    Checkpoint empty;
    save_checkpoint(empty, dir.file("e.msrk"));
    const auto bytes = slurp(dir.file("e.msrk"));
    EXPECT_EQ(bytes.size(), 4u + 2u + 4u + 2u + 4u);  // magic, version, "{}", count
    EXPECT_EQ(bytes.substr(0, 4), "MSRK");
    EXPECT_TRUE(load_checkpoint(dir.file("e.msrk")).tensors.empty());
}

TEST(Checkpoint, MismatchNamesTheTensor) {
    Model<float> small(tiny_config());
    auto wide_cfg = tiny_config();
    wide_cfg.width = 12;
    Model<float> wide(wide_cfg);
    const auto ckpt = make_checkpoint(small, nullptr, nullptr, {});
    try {
        restore_checkpoint(ckpt, wide);
        FAIL() << "expected a mismatch";
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("head.weight"), std::string::npos) << e.what();
    }
    auto rcan_cfg = tiny_config();
    rcan_cfg.use_pyramid_convlstm = false;
    Model<float> rcan(rcan_cfg);
    EXPECT_THROW(restore_checkpoint(ckpt, rcan), std::runtime_error);
    Model<float> same(tiny_config());
    AdamState<float> adam;
    EXPECT_THROW(restore_checkpoint(ckpt, same, &adam), std::runtime_error);
}

TEST(Checkpoint, RejectsCorruptFiles) {
    TempDir dir;
    std::ofstream(dir.file("bad.msrk"), std::ios::binary) << "MSRX\x01";
    EXPECT_THROW(load_checkpoint(dir.file("bad.msrk")), std::runtime_error);
    Model<float> model(tiny_config());
    save_checkpoint(make_checkpoint(model, nullptr, nullptr, {}), dir.file("ok.msrk"));
    auto bytes = slurp(dir.file("ok.msrk"));
    std::ofstream(dir.file("cut.msrk"), std::ios::binary) << bytes.substr(0, bytes.size() - 3);
    EXPECT_THROW(load_checkpoint(dir.file("cut.msrk")), std::runtime_error);
    EXPECT_THROW(load_checkpoint(dir.file("missing.msrk")), std::runtime_error);
}

TEST(Train, LogFollowsScheduleAndLossDecreases) {
    const auto data = tiny_data(4);
    auto cfg = tiny_train();
    cfg.epochs = 5;
    Model<float> model(tiny_config());
    std::ostringstream log;
    TrainOptions opts;
    opts.log = &log;
    const auto r = train(model, data, cfg, opts);
    EXPECT_EQ(r.epochs_completed, 5);
    EXPECT_EQ(r.steps, 10);
    EXPECT_FALSE(r.interrupted);
    std::istringstream lines(log.str());
    std::string line;
    int epoch = 0;
    while (std::getline(lines, line)) {
        const auto j = nlohmann::json::parse(line);
        EXPECT_EQ(j.at("epoch"), epoch);
        EXPECT_EQ(j.at("lr").get<double>(), lr_at(epoch, cfg));
        EXPECT_TRUE(j.at("val_psnr").is_null());
        EXPECT_TRUE(std::isfinite(j.at("loss").get<double>()));
        ++epoch;
    }
    EXPECT_EQ(epoch, 5);
    EXPECT_LT(r.final_loss, r.initial_loss);
}

TEST(Train, DeterministicAndResumable) {
    TempDir dir;
    const auto data = tiny_data(3, 1);
    const auto cfg = tiny_train();

    Model<float> straight(tiny_config());
    TrainOptions a;
    a.out_path = dir.file("a.msrk");
    const auto ra = train(straight, data, cfg, a);
    EXPECT_EQ(ra.steps, 6);  // 2 batches (2 + 1 samples) per epoch
    EXPECT_TRUE(std::isfinite(ra.best_val_psnr));

    Model<float> again(tiny_config());
    train(again, data, cfg, {});
    EXPECT_TRUE(same_parameters(straight, again));

    for (int stop_after : {1, 2, 3}) {  // mid-epoch, epoch boundary, mid-epoch
        Model<float> first(tiny_config());
        TrainOptions part;
        part.out_path = dir.file("b.msrk");
        part.max_steps = stop_after;
        EXPECT_TRUE(train(first, data, cfg, part).interrupted);

        Model<float> resumed(tiny_config());
        TrainOptions rest;
        rest.resume_path = dir.file("b.msrk.last");
        const auto rr = train(resumed, data, cfg, rest);
        EXPECT_EQ(rr.steps, 6 - stop_after);
        EXPECT_TRUE(same_parameters(straight, resumed)) << "stop after " << stop_after;
    }

    auto other = cfg;
    other.seed = 8;
    Model<float> m(tiny_config());
    TrainOptions bad;
    bad.resume_path = dir.file("a.msrk.last");
    EXPECT_THROW(train(m, data, other, bad), std::invalid_argument);
}

TEST(Train, BestCheckpointTracksValidation) {
    TempDir dir;
    const auto data = tiny_data(2, 1);
    auto cfg = tiny_train();
    Model<float> model(tiny_config());
    TrainOptions opts;
    opts.out_path = dir.file("m.msrk");
    const auto r = train(model, data, cfg, opts);
    const auto best = load_checkpoint(dir.file("m.msrk"));
    EXPECT_EQ(best.meta.at("best_val_psnr").get<double>(), r.best_val_psnr);
    EXPECT_NEAR(mean_psnr(load_model(best), data.val, data.input_format), r.best_val_psnr, 1e-9);
    EXPECT_EQ(load_checkpoint(dir.file("m.msrk.last")).meta.at("epoch"), cfg.epochs);
}

TEST(Train, RejectsBadInputs) {
    auto cfg = tiny_train();
    Model<float> model(tiny_config());
    EXPECT_THROW(train(model, tiny_data(0), cfg), std::invalid_argument);

    auto data = tiny_data(1);
    data.input_format = InputFormat::mosaic;
    EXPECT_THROW(train(model, data, cfg), std::invalid_argument);

    cfg.crop_lr = 20;  // LR images are 16 x 16
    EXPECT_THROW(train(model, tiny_data(1), cfg), DimensionError);
}

TEST(Train, NonFiniteLossNamesTheParameter) {
    TempDir dir;
    const auto data = tiny_data(2);
    auto cfg = tiny_train();
    Model<float> model(tiny_config());
    model.init_weights(cfg.seed);
    model.parameters().entries()[0].value.mutable_data()[0] = std::numeric_limits<float>::quiet_NaN();
    auto adam = AdamState<float>::zeros(model.parameters());
    save_checkpoint(make_checkpoint(model, &adam, &cfg, {}), dir.file("nan.msrk"));
    TrainOptions opts;
    opts.resume_path = dir.file("nan.msrk");
    Model<float> fresh(tiny_config());
    try {
        train(fresh, data, cfg, opts);
        FAIL() << "expected a training error";
    } catch (const TrainingError& e) {
        EXPECT_NE(std::string(e.what()).find("head.weight"), std::string::npos) << e.what();
    }
}

TEST(SuperResolve, ShapeDeadCellsAndDeterminism) {
    Model<float> model(tiny_config());
    model.init_weights(5);
    const auto lr = tiny_data(1).train[0].lr;
    const auto a = super_resolve(model, lr, InputFormat::zero_padded_cube);
    EXPECT_EQ(a.data.shape(), (Shape{1, 1, 48, 48}));
    for (int y = 0; y < 48; ++y)
        for (int x = 0; x < 48; ++x) {
            const float v = a.data.at(0, 0, y, x);
            if (lr.pattern.cell_at_pixel(y, x) == kDead) EXPECT_EQ(v, 0.f);
            EXPECT_GE(v, 0.f);
            EXPECT_LE(v, 1.f);
        }
    const auto b = super_resolve(model, lr, InputFormat::zero_padded_cube);
    EXPECT_TRUE(std::equal(a.data.data().begin(), a.data.data().end(), b.data.data().begin()));
}
