#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "binio.hpp"
#include "mosaic_sr/mosaic.hpp"

namespace fs = std::filesystem;

namespace msr {

namespace {

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    return in;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    return out;
}

// Next header token, skipping whitespace and '#' comments.
std::string pgm_token(std::istream& in, const std::string& path) {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {}
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    throw std::runtime_error(path + ": truncated PGM header");
}

int pgm_int(std::istream& in, const std::string& path, const char* field) {
    const std::string tok = pgm_token(in, path);
    try {
        std::size_t used = 0;
        const int v = std::stoi(tok, &used);
        if (used == tok.size() && v > 0) return v;
    } catch (const std::exception&) {
    }
    throw std::runtime_error(path + ": malformed PGM " + field + " '" + tok + "'");
}

std::uint16_t quantize16(float v) {
    const double q = std::floor(static_cast<double>(v) * 65535.0 + 0.5);
    return static_cast<std::uint16_t>(std::clamp(q, 0.0, 65535.0));
}

}  // namespace

MosaicImage load_mosaic_pgm(const std::string& path, const MosaicPattern& pattern) {
    auto in = open_in(path);
    if (pgm_token(in, path) != "P5") throw std::runtime_error(path + ": not a binary PGM (expected P5)");
    const int w = pgm_int(in, path, "width");
    const int h = pgm_int(in, path, "height");
    const int maxval = pgm_int(in, path, "maxval");
    if (maxval != 65535) throw std::runtime_error(path + ": maxval " + std::to_string(maxval) + ", expected 65535");
    std::string raw(static_cast<std::size_t>(w) * h * 2, '\0');
    if (!in.read(raw.data(), static_cast<std::streamsize>(raw.size()))) {
        throw std::runtime_error(path + ": truncated PGM payload");
    }
    std::vector<float> v(static_cast<std::size_t>(w) * h);
    for (std::size_t i = 0; i < v.size(); ++i) {
        const unsigned hi = static_cast<unsigned char>(raw[2 * i]), lo = static_cast<unsigned char>(raw[2 * i + 1]);
        v[i] = static_cast<float>((hi << 8 | lo) / 65535.0);
    }
    Tensor<float> t(Shape{1, 1, h, w}, std::move(v));
    try {
        return make_mosaic(std::move(t), pattern);
    } catch (const DimensionError& e) {
        throw DimensionError(path + ": " + e.what());
    }
}

void save_mosaic_pgm(const MosaicImage& m, const std::string& path) {
    auto out = open_out(path);
    out << "P5\n" << m.width() << ' ' << m.height() << "\n65535\n";
    auto v = m.data.data();
    std::string raw(v.size() * 2, '\0');
    for (std::size_t i = 0; i < v.size(); ++i) {
        const std::uint16_t q = quantize16(v[i]);
        raw[2 * i] = static_cast<char>(q >> 8);
        raw[2 * i + 1] = static_cast<char>(q & 0xff);
    }
    out.write(raw.data(), static_cast<std::streamsize>(raw.size()));
    if (!out) throw std::runtime_error("failed writing " + path);
}

ImageCube load_cube(const std::string& path) {
    auto in = open_in(path);
    char magic[4];
    if (!in.read(magic, 4) || std::string(magic, 4) != "MSCB") throw std::runtime_error(path + ": bad cube magic");
    const auto version = binio::get<std::uint16_t>(in, path);
    if (version != 1) throw std::runtime_error(path + ": unsupported cube version " + std::to_string(version));
    const auto kind = binio::get<std::uint8_t>(in, path);
    if (kind > 1) throw std::runtime_error(path + ": unknown cube kind " + std::to_string(kind));
    const auto k = binio::get<std::uint32_t>(in, path);
    const auto h = binio::get<std::uint32_t>(in, path);
    const auto w = binio::get<std::uint32_t>(in, path);
    const std::uint64_t count = static_cast<std::uint64_t>(k) * h * w;
    const auto header = static_cast<std::uint64_t>(in.tellg());
    in.seekg(0, std::ios::end);
    const auto size = static_cast<std::uint64_t>(in.tellg());
    if (k == 0 || h == 0 || w == 0 || size - header != 4 * count) {
        throw std::runtime_error(path + ": payload of " + std::to_string(size - header) + " bytes does not match header " +
                                 std::to_string(k) + "x" + std::to_string(h) + "x" + std::to_string(w));
    }
    in.seekg(static_cast<std::streamoff>(header));
    std::vector<float> v(count);
    binio::get_f32_array(in, v.data(), v.size(), path);
    return {Tensor<float>(Shape{1, static_cast<int>(k), static_cast<int>(h), static_cast<int>(w)}, std::move(v)),
            static_cast<CubeKind>(kind)};
}

void save_cube(const ImageCube& cube, const std::string& path) {
    const Shape& s = cube.data.shape();
    if (s.n != 1) throw DimensionError("save_cube: expected a single cube, got " + s.str());
    auto out = open_out(path);
    out.write("MSCB", 4);
    binio::put<std::uint16_t>(out, 1);
    binio::put<std::uint8_t>(out, static_cast<std::uint8_t>(cube.kind));
    binio::put<std::uint32_t>(out, s.c);
    binio::put<std::uint32_t>(out, s.h);
    binio::put<std::uint32_t>(out, s.w);
    binio::put_f32_array(out, cube.data.data().data(), s.numel());
    if (!out) throw std::runtime_error("failed writing " + path);
}

// ---------------------------------------------------------------------------
// Manifest

nlohmann::json DatasetManifest::to_json() const {
    auto list = nlohmann::json::array();
    for (const auto& p : pairs) list.push_back({{"lr", p.lr}, {"hr", p.hr}, {"split", p.split}});
    return {{"pattern", pattern.name},
            {"input_format", msr::to_string(input_format)},
            {"scale", scale},
            {"cell_map", pattern.cell_map_json()},
            {"pairs", list},
            {"seed", seed}};
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& j, const std::string& base_dir) {
    DatasetManifest m;
    m.base_dir = base_dir;
    m.pattern = MosaicPattern::from_name(j.at("pattern").get<std::string>(), j.value("cell_map", nlohmann::json()));
    m.input_format = parse_input_format(j.value("input_format", std::string("zero_padded_cube")));
    m.scale = j.value("scale", 3);
    m.seed = j.value("seed", std::uint64_t{0});
    if (m.scale < 1) throw std::invalid_argument("manifest: scale must be positive");
    const std::string default_split = j.value("split", std::string("train"));
    for (const auto& p : j.at("pairs")) {
        m.pairs.push_back({p.at("lr").get<std::string>(), p.at("hr").get<std::string>(),
                           p.value("split", default_split)});
    }
    return m;
}

std::vector<PairEntry> DatasetManifest::split(const std::string& name) const {
    std::vector<PairEntry> out;
    for (const auto& p : pairs)
        if (p.split == name) out.push_back(p);
    return out;
}

std::string DatasetManifest::resolve(const std::string& relative) const {
    const fs::path p(relative);
    return p.is_absolute() ? p.string() : (fs::path(base_dir) / p).string();
}

DatasetManifest load_manifest(const std::string& path) {
    auto in = open_in(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
        return DatasetManifest::from_json(j, fs::absolute(path).parent_path().string());
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path + ": invalid manifest: " + e.what());
    }
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
    auto out = open_out(path);
    out << m.to_json().dump(2) << '\n';
    if (!out) throw std::runtime_error("failed writing " + path);
}

std::vector<MosaicPair> load_pairs(const DatasetManifest& m, const std::string& split) {
    std::vector<MosaicPair> out;
    for (const auto& e : m.split(split)) {
        const std::string lr_path = m.resolve(e.lr), hr_path = m.resolve(e.hr);
        MosaicPair p{load_mosaic_pgm(lr_path, m.pattern), load_mosaic_pgm(hr_path, m.pattern)};
        if (p.lr.height() * m.scale != p.hr.height() || p.lr.width() * m.scale != p.hr.width()) {
            throw DimensionError(lr_path + " " + p.lr.data.shape().str() + " is not 1/" + std::to_string(m.scale) +
                                 " of " + hr_path + " " + p.hr.data.shape().str());
        }
        out.push_back(std::move(p));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic scenes

namespace {

struct Component {
    enum Kind { blob, edge, grating } kind;
    double cx, cy;    // centre or point on the edge / phase origin
    double nx, ny;    // unit normal for edges and gratings
    double size;      // blob sigma, edge softness or grating frequency
    double amplitude;
    std::vector<double> spectrum;
};

double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
double range(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * unit(rng); }

// Smooth spectral response: shared level plus a slow cosine across wavelength.
std::vector<double> spectrum(std::mt19937_64& rng, int n) {
    const double level = range(rng, 0.6, 1.0), depth = range(rng, 0.0, 0.4);
    const double period = range(rng, 0.5, 2.0), phase = range(rng, 0.0, 2 * M_PI);
    std::vector<double> s(n);
    for (int k = 0; k < n; ++k) s[k] = level * (1.0 + depth * std::cos(2 * M_PI * period * k / n + phase));
    return s;
}

}  // namespace

MosaicImage render_scene(int height, int width, const MosaicPattern& pattern, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const int n = pattern.n_wavelengths;
    const double gx = range(rng, -0.3, 0.3), gy = range(rng, -0.3, 0.3);
    const auto base_spectrum = spectrum(rng, n);

    std::vector<Component> parts;
    const int blobs = 3 + static_cast<int>(rng() % 4);
    const int edges = 2 + static_cast<int>(rng() % 3);
    const int gratings = 1 + static_cast<int>(rng() % 2);
    for (int i = 0; i < blobs + edges + gratings; ++i) {
        Component c;
        c.kind = i < blobs ? Component::blob : i < blobs + edges ? Component::edge : Component::grating;
        c.cx = unit(rng);
        c.cy = unit(rng);
        const double angle = range(rng, 0.0, 2 * M_PI);
        c.nx = std::cos(angle);
        c.ny = std::sin(angle);
        switch (c.kind) {
            case Component::blob: c.size = range(rng, 0.04, 0.2); break;
            case Component::edge: c.size = range(rng, 0.5, 2.0) / std::max(height, width); break;
            case Component::grating: c.size = range(rng, 3.0, 12.0); break;
        }
        c.amplitude = range(rng, -0.6, 0.6);
        c.spectrum = spectrum(rng, n);
        parts.push_back(std::move(c));
    }

    std::vector<double> raw(static_cast<std::size_t>(height) * width, 0.0);
    double lo = 1e300, hi = -1e300;
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const int k = pattern.cell_at_pixel(y, x);
            if (k == kDead) continue;
            const double u = (x + 0.5) / width, v = (y + 0.5) / height;
            double value = base_spectrum[k] * (0.5 + gx * (u - 0.5) + gy * (v - 0.5));
            for (const auto& c : parts) {
                const double du = u - c.cx, dv = v - c.cy;
                double shape = 0.0;
                switch (c.kind) {
                    case Component::blob: shape = std::exp(-(du * du + dv * dv) / (2 * c.size * c.size)); break;
                    case Component::edge: shape = 1.0 / (1.0 + std::exp(-(du * c.nx + dv * c.ny) / c.size)); break;
                    case Component::grating: shape = 0.5 + 0.5 * std::sin(2 * M_PI * c.size * (du * c.nx + dv * c.ny)); break;
                }
                value += c.amplitude * c.spectrum[k] * shape;
            }
            raw[static_cast<std::size_t>(y) * width + x] = value;
            lo = std::min(lo, value);
            hi = std::max(hi, value);
        }
    const double span = hi > lo ? hi - lo : 1.0;
    std::vector<float> out(raw.size(), 0.f);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            if (pattern.cell_at_pixel(y, x) == kDead) continue;
            const std::size_t i = static_cast<std::size_t>(y) * width + x;
            out[i] = static_cast<float>(0.05 + 0.9 * (raw[i] - lo) / span);
        }
    return make_mosaic(Tensor<float>(Shape{1, 1, height, width}, std::move(out)), pattern);
}

DatasetManifest synthesize_dataset(const SynthOptions& o, const MosaicPattern& pattern, const std::string& dir) {
    const int block_h = o.scale * pattern.tile_h, block_w = o.scale * pattern.tile_w;
    if (o.height <= 0 || o.width <= 0 || o.height % block_h != 0 || o.width % block_w != 0) {
        throw std::invalid_argument("dims " + std::to_string(o.height) + "x" + std::to_string(o.width) +
                                    " must be positive multiples of " + std::to_string(block_h) + "x" +
                                    std::to_string(block_w) + " (scale x tile)");
    }
    if (o.n < 0 || o.n_val < 0 || o.n_test < 0) throw std::invalid_argument("pair counts must be non-negative");
    fs::create_directories(dir);

    DatasetManifest m;
    m.pattern = pattern;
    m.input_format = o.input_format;
    m.scale = o.scale;
    m.seed = o.seed;
    m.base_dir = dir;
    const int total = o.n + o.n_val + o.n_test;
    for (int i = 0; i < total; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "%04d.pgm", i);
        PairEntry e{std::string("lr_") + name, std::string("hr_") + name,
                    i < o.n ? "train" : i < o.n + o.n_val ? "val" : "test"};
        const auto scene = render_scene(o.height, o.width, pattern, sample_seed(o.seed, 0x5ce9e, i));
        save_mosaic_pgm(scene, m.resolve(e.hr));
        // Derive LR from the quantised HR actually stored on disk.
        const auto hr = load_mosaic_pgm(m.resolve(e.hr), pattern);
        save_mosaic_pgm(generate_pair(hr, o.scale).lr, m.resolve(e.lr));
        m.pairs.push_back(std::move(e));
    }
    save_manifest(m, (fs::path(dir) / "manifest.json").string());
    return m;
}

DatasetManifest dataset_from_hr(const std::vector<std::string>& hr_paths, const SynthOptions& o,
                                const MosaicPattern& pattern, const std::string& dir) {
    const int total = static_cast<int>(hr_paths.size());
    if (total == 0) throw std::invalid_argument("no HR mosaics given");
    if (o.n_val < 0 || o.n_test < 0 || o.n_val + o.n_test > total) {
        throw std::invalid_argument("val/test counts exceed the " + std::to_string(total) + " HR mosaics");
    }
    fs::create_directories(dir);

    DatasetManifest m;
    m.pattern = pattern;
    m.input_format = o.input_format;
    m.scale = o.scale;
    m.seed = o.seed;
    m.base_dir = dir;
    const int n_train = total - o.n_val - o.n_test;
    for (int i = 0; i < total; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "%04d.pgm", i);
        PairEntry e{std::string("lr_") + name, std::string("hr_") + name,
                    i < n_train ? "train" : i < n_train + o.n_val ? "val" : "test"};
        const auto hr = center_crop_to_multiple(load_mosaic_pgm(hr_paths[i], pattern), o.scale * pattern.tile_h);
        save_mosaic_pgm(hr, m.resolve(e.hr));
        save_mosaic_pgm(generate_pair(hr, o.scale).lr, m.resolve(e.lr));
        m.pairs.push_back(std::move(e));
    }
    save_manifest(m, (fs::path(dir) / "manifest.json").string());
    return m;
}

}  // namespace msr
