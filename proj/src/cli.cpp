#include "mosaic_sr/cli.hpp"

#include <algorithm>
#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <regex>

#include <CLI11.hpp>

#include "mosaic_sr/gradcheck_suite.hpp"
#include "mosaic_sr/kernels.hpp"
#include "mosaic_sr/metrics.hpp"
#include "mosaic_sr/training.hpp"

namespace fs = std::filesystem;

namespace msr::cli {

namespace {

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::atomic<bool> g_stop{false};

extern "C" void on_interrupt(int) { g_stop = true; }

void require_file(const std::string& path, const char* what) {
    if (!fs::is_regular_file(path)) throw UsageError(std::string(what) + " not found: " + path);
}

void echo(std::ostream& out, const std::string& command, const nlohmann::json& config) {
    out << nlohmann::json{{"command", command}, {"config", config}}.dump() << '\n' << std::flush;
}

nlohmann::json read_json(const std::string& path) {
    require_file(path, "config");
    std::ifstream in(path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw UsageError(path + ": invalid JSON: " + e.what());
    }
}

std::pair<int, int> parse_dims(const std::string& s) {
    static const std::regex re(R"((\d+)[xX](\d+))");
    std::smatch m;
    if (!std::regex_match(s, m, re)) throw UsageError("--dims must look like HxW, got '" + s + "'");
    return {std::stoi(m[1]), std::stoi(m[2])};
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
    std::string pattern = "ms4x4";
    int n = 8;
    std::string dims = "180x180";
    std::uint64_t seed = 0;
    std::string out;
    std::string from_hr;
    int n_val = 0;
    int n_test = 0;
    std::string input_format;
    int scale = 3;
};

int gen_data(const GenDataArgs& a, std::ostream& out, std::ostream& err) {
    const auto pattern = MosaicPattern::from_name(a.pattern);
    SynthOptions o;
    o.n = a.n;
    std::tie(o.height, o.width) = parse_dims(a.dims);
    o.n_val = a.n_val;
    o.n_test = a.n_test;
    o.seed = a.seed;
    o.scale = a.scale;
    o.input_format = a.input_format.empty()
                         ? InputFormat::zero_padded_cube
                         : parse_input_format(a.input_format);

    nlohmann::json config = {{"pattern", pattern.name}, {"seed", o.seed},   {"out", a.out},
                             {"n_val", o.n_val},        {"n_test", o.n_test}, {"scale", o.scale},
                             {"input_format", to_string(o.input_format)}};
    DatasetManifest m;
    if (a.from_hr.empty()) {
        config["n"] = o.n;
        config["dims"] = std::to_string(o.height) + "x" + std::to_string(o.width);
        echo(out, "gen-data", config);
        m = synthesize_dataset(o, pattern, a.out);
    } else {
        if (!fs::is_directory(a.from_hr)) throw UsageError("HR directory not found: " + a.from_hr);
        std::vector<std::string> files;
        for (const auto& e : fs::directory_iterator(a.from_hr))
            if (e.is_regular_file() && e.path().extension() == ".pgm") files.push_back(e.path().string());
        std::sort(files.begin(), files.end());
        if (files.empty()) throw UsageError("no .pgm files in " + a.from_hr);
        config["from_hr"] = a.from_hr;
        config["n"] = files.size();
        echo(out, "gen-data", config);
        m = dataset_from_hr(files, o, pattern, a.out);
    }
    err << "wrote " << m.pairs.size() << " pairs and manifest.json to " << a.out << '\n';
    return kOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string manifest;
    std::string config;
    std::string out;
    std::string resume;
    std::string preset;
    int epochs = 0;
    int batch_size = 0;
    int crop_lr = 0;
    double lr0 = 0.0;
    std::int64_t seed = -1;
    int max_steps = 0;
};

int train_command(const TrainArgs& a, std::ostream& out, std::ostream& err) {
    require_file(a.manifest, "manifest");
    if (!a.resume.empty()) require_file(a.resume, "checkpoint");
    const auto manifest = load_manifest(a.manifest);

    nlohmann::json file = a.config.empty() ? nlohmann::json::object() : read_json(a.config);
    for (const auto& [key, value] : file.items())
        if (key != "model" && key != "train") throw UsageError("config: unknown section '" + key + "'");
    auto model_json = file.value("model", nlohmann::json::object());
    if (!a.preset.empty()) model_json["preset"] = a.preset;
    if (!model_json.contains("in_channels")) model_json["in_channels"] = input_channels(manifest.pattern, manifest.input_format);
    if (!model_json.contains("scale")) model_json["scale"] = manifest.scale;
    auto train_json = file.value("train", nlohmann::json::object());
    if (a.epochs > 0) train_json["epochs"] = a.epochs;
    if (a.batch_size > 0) train_json["batch_size"] = a.batch_size;
    if (a.crop_lr > 0) train_json["crop_lr"] = a.crop_lr;
    if (a.lr0 > 0) train_json["lr0"] = a.lr0;
    if (a.seed >= 0) train_json["seed"] = a.seed;

    const auto model_cfg = ModelConfig::from_json(model_json);
    const auto train_cfg = TrainConfig::from_json(train_json);
    echo(out, "train",
         {{"manifest", a.manifest}, {"out", a.out}, {"resume", a.resume},
          {"model", model_cfg.to_json()}, {"train", train_cfg.to_json()}});

    const auto data = load_train_data(manifest);
    Model<float> model(model_cfg);
    TrainOptions opts;
    opts.out_path = a.out;
    opts.resume_path = a.resume;
    opts.log = &out;
    opts.max_steps = a.max_steps;
    g_stop = false;
    opts.stop_requested = [] { return g_stop.load(); };
    auto previous = std::signal(SIGINT, on_interrupt);
    TrainResult r;
    try {
        r = train(model, data, train_cfg, opts);
    } catch (...) {
        std::signal(SIGINT, previous);
        throw;
    }
    std::signal(SIGINT, previous);

    err << "trained " << r.steps << " steps over " << r.epochs_completed << " epochs; loss " << r.initial_loss
        << " -> " << r.final_loss << '\n';
    if (r.interrupted) {
        err << "stopped early; resume with --resume " << a.out << ".last\n";
        return g_stop ? kRuntime : kOk;
    }
    return kOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string manifest;
    std::string ckpt;
    std::string baseline;
    std::string pred_dir;
    std::string split = "test";
    std::string json_path;
    std::string csv_path;
};

int eval_command(const EvalArgs& a, std::ostream& out, std::ostream& err) {
    require_file(a.manifest, "manifest");
    const int sources = !a.ckpt.empty() + !a.baseline.empty() + !a.pred_dir.empty();
    if (sources != 1) throw UsageError("eval needs exactly one of --ckpt, --baseline, --pred");
    if (!a.baseline.empty() && a.baseline != "bicubic") throw UsageError("unknown baseline '" + a.baseline + "'");
    if (!a.ckpt.empty()) require_file(a.ckpt, "checkpoint");
    if (!a.pred_dir.empty() && !fs::is_directory(a.pred_dir)) throw UsageError("prediction directory not found: " + a.pred_dir);

    const auto manifest = load_manifest(a.manifest);
    const auto entries = manifest.split(a.split);
    if (entries.empty()) throw UsageError("manifest has no '" + a.split + "' pairs");

    EvalReport report;
    std::optional<Model<float>> model;
    InputFormat format = manifest.input_format;
    if (!a.ckpt.empty()) {
        const auto ckpt = load_checkpoint(a.ckpt);
        const auto pattern = checkpoint_pattern(ckpt);
        if (!(pattern == manifest.pattern)) {
            throw UsageError("checkpoint pattern " + pattern.name + " does not match manifest pattern " + manifest.pattern.name);
        }
        model.emplace(load_model(ckpt));
        format = checkpoint_input_format(ckpt);
        report.method = "model:" + a.ckpt;
    } else if (!a.baseline.empty()) {
        report.method = "bicubic";
    } else {
        report.method = "files:" + a.pred_dir;
    }
    echo(out, "eval",
         {{"manifest", a.manifest}, {"split", a.split}, {"method", report.method}, {"scale", manifest.scale},
          {"pattern", manifest.pattern.name}});

    const auto pairs = load_pairs(manifest, a.split);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& p = pairs[i];
        MosaicImage pred;
        if (model) {
            if (model->config().scale != manifest.scale) throw UsageError("checkpoint scale differs from manifest scale");
            pred = super_resolve(*model, p.lr, format);
        } else if (!a.baseline.empty()) {
            pred = bicubic_upscale(p.lr, manifest.scale);
        } else {
            const std::string path = (fs::path(a.pred_dir) / fs::path(entries[i].hr).filename()).string();
            require_file(path, "prediction");
            pred = load_mosaic_pgm(path, manifest.pattern);
        }
        report.per_image.push_back({entries[i].hr, evaluate_mosaic(pred, p.hr)});
    }

    const auto j = report.to_json();
    out << j.dump() << '\n';
    if (!a.json_path.empty()) std::ofstream(a.json_path) << j.dump(2) << '\n';
    if (!a.csv_path.empty()) std::ofstream(a.csv_path) << report.to_csv();
    const auto ps = report.psnr(), ss = report.ssim();
    err << report.method << " on " << report.per_image.size() << " " << a.split << " images: PSNR " << ps.mean
        << " (std " << ps.std << "), SSIM " << ss.mean << " (std " << ss.std << ")\n";
    const auto n_inf = std::count_if(report.per_image.begin(), report.per_image.end(),
                                     [](const auto& e) { return std::isinf(e.metrics.psnr); });
    if (n_inf > 0) err << "warning: " << n_inf << " images have infinite PSNR (prediction identical to ground truth)\n";
    return kOk;
}

// ---------------------------------------------------------------------------

struct SrArgs {
    std::string ckpt;
    std::string in;
    std::string out_path;
};

int sr_command(const SrArgs& a, std::ostream& out, std::ostream& err) {
    require_file(a.ckpt, "checkpoint");
    require_file(a.in, "input");
    const auto ckpt = load_checkpoint(a.ckpt);
    const auto pattern = checkpoint_pattern(ckpt);
    const auto format = checkpoint_input_format(ckpt);
    echo(out, "sr", {{"ckpt", a.ckpt}, {"in", a.in}, {"out", a.out_path}, {"pattern", pattern.name},
                     {"input_format", to_string(format)}, {"model", ckpt.meta.at("model")}});
    MosaicImage lr;
    try {
        lr = load_mosaic_pgm(a.in, pattern);
    } catch (const DimensionError& e) {
        throw UsageError(e.what());
    }
    const auto model = load_model(ckpt);
    const auto hr = super_resolve(model, lr, format);
    save_mosaic_pgm(hr, a.out_path);
    err << "wrote " << hr.height() << "x" << hr.width() << " mosaic to " << a.out_path << '\n';
    return kOk;
}

// ---------------------------------------------------------------------------

struct GradcheckArgs {
    std::string scope = "all";
    double tol = 0.0;
    double corrupt = 0.0;
    std::uint64_t seed = 1;
};

int gradcheck_command(const GradcheckArgs& a, std::ostream& out, std::ostream& err) {
    std::vector<GradcheckScope> scopes;
    if (a.scope == "all") scopes = {GradcheckScope::op, GradcheckScope::layer, GradcheckScope::model};
    else scopes = {parse_scope(a.scope)};
    echo(out, "gradcheck", {{"scope", a.scope}, {"tol", a.tol}, {"inject_corruption", a.corrupt}, {"seed", a.seed}});

    bool ok = true;
    for (auto scope : scopes) {
        GradcheckSuiteOptions o;
        o.tol = a.tol > 0 ? a.tol : default_tolerance(scope);
        o.corrupt = a.corrupt;
        o.seed = a.seed;
        double worst = 0.0;
        for (const auto& r : run_gradcheck_suite(scope, o)) {
            out << nlohmann::json{{"scope", to_string(scope)}, {"name", r.name}, {"max_rel_error", r.max_rel_error},
                                  {"checked", r.checked}, {"tol", o.tol}, {"passed", r.passed}}
                       .dump()
                << '\n';
            worst = std::max(worst, r.max_rel_error);
            if (!r.passed) {
                ok = false;
                err << "FAIL " << to_string(scope) << "/" << r.name << ": max rel error " << r.max_rel_error << " > "
                    << o.tol << '\n';
            }
        }
        err << to_string(scope) << ": worst max rel error " << worst << " (tol " << o.tol << ")\n";
    }
    return ok ? kOk : kCheckFailed;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Mosaic super-resolution toolkit", "mosaic_sr"};
    app.require_subcommand(1);

    GenDataArgs gen;
    auto* g = app.add_subcommand("gen-data", "Write synthetic or HR-derived LR/HR pairs and a manifest");
    g->add_option("--pattern", gen.pattern, "bayer or ms4x4")->check(CLI::IsMember({"bayer", "ms4x4"}));
    g->add_option("--n", gen.n, "Training pairs")->check(CLI::NonNegativeNumber);
    g->add_option("--dims", gen.dims, "HR size HxW");
    g->add_option("--seed", gen.seed);
    g->add_option("--out", gen.out, "Output directory")->required();
    g->add_option("--from-hr", gen.from_hr, "Directory of HR .pgm mosaics");
    g->add_option("--val", gen.n_val, "Validation pairs")->check(CLI::NonNegativeNumber);
    g->add_option("--test", gen.n_test, "Test pairs")->check(CLI::NonNegativeNumber);
    g->add_option("--input-format", gen.input_format, "mosaic or zero_padded_cube");
    g->add_option("--scale", gen.scale)->check(CLI::PositiveNumber);

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Train a model");
    t->add_option("--manifest", tr.manifest)->required();
    t->add_option("--config", tr.config, "JSON with optional \"model\" and \"train\" sections");
    t->add_option("--out", tr.out, "Best checkpoint path; <out>.last holds the latest state")->required();
    t->add_option("--resume", tr.resume, "Checkpoint to continue from");
    t->add_option("--preset", tr.preset, "Model variant");
    t->add_option("--epochs", tr.epochs)->check(CLI::PositiveNumber);
    t->add_option("--batch-size", tr.batch_size)->check(CLI::PositiveNumber);
    t->add_option("--crop-lr", tr.crop_lr)->check(CLI::PositiveNumber);
    t->add_option("--lr0", tr.lr0)->check(CLI::PositiveNumber);
    t->add_option("--seed", tr.seed)->check(CLI::NonNegativeNumber);
    t->add_option("--max-steps", tr.max_steps, "Stop after this many steps")->check(CLI::NonNegativeNumber);

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "PSNR/SSIM of a checkpoint, baseline or prediction directory");
    e->add_option("--manifest", ev.manifest)->required();
    e->add_option("--ckpt", ev.ckpt);
    e->add_option("--baseline", ev.baseline, "bicubic");
    e->add_option("--pred", ev.pred_dir, "Directory of predicted HR mosaics named like the HR files");
    e->add_option("--split", ev.split);
    e->add_option("--json", ev.json_path, "Also write the report here");
    e->add_option("--csv", ev.csv_path, "Write a CSV table here");

    SrArgs sr;
    auto* s = app.add_subcommand("sr", "Super-resolve one LR mosaic");
    s->add_option("--ckpt", sr.ckpt)->required();
    s->add_option("--in", sr.in)->required();
    s->add_option("--out", sr.out_path)->required();

    GradcheckArgs gc;
    auto* c = app.add_subcommand("gradcheck", "Finite-difference gradient checks in double precision");
    c->add_option("--scope", gc.scope, "op, layer, model or all")->check(CLI::IsMember({"op", "layer", "model", "all"}));
    c->add_option("--tol", gc.tol, "Max relative error (default per scope)")->check(CLI::PositiveNumber);
    c->add_option("--inject-corruption", gc.corrupt, "Perturb one analytic gradient entry");
    c->add_option("--seed", gc.seed);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& ex) {
        const int code = app.exit(ex, out, err);
        return code == 0 ? kOk : kUsage;
    }

    kernels::configure_threads_from_env();
    try {
        if (g->parsed()) return gen_data(gen, out, err);
        if (t->parsed()) return train_command(tr, out, err);
        if (e->parsed()) return eval_command(ev, out, err);
        if (s->parsed()) return sr_command(sr, out, err);
        return gradcheck_command(gc, out, err);
    } catch (const UsageError& ex) {
        err << "error: " << ex.what() << '\n';
        return kUsage;
    } catch (const std::invalid_argument& ex) {
        err << "error: " << ex.what() << '\n';
        return kUsage;
    } catch (const std::exception& ex) {
        err << "error: " << ex.what() << '\n';
        return kRuntime;
    }
}

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args, std::cout, std::cerr);
}

}  // namespace msr::cli
